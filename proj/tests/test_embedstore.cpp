// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>

#include "fgmatch/embedstore.hpp"
#include "support.hpp"

using namespace fgmatch;
using nlohmann::json;

namespace {

EmbeddingTable small_table() {
  EmbeddingTable t(4);
  t.insert("b", Vector{1, 2, 3, 4});
  t.insert("a", Vector{-0.5f, 0.25f, 1e-7f, 3.0e30f});
  t.insert("ccc", Vector{0, 0, 0, 1});
  return t;
}

LoadErrorKind load_kind(std::string_view bytes) {
  try {
    parse_table(bytes);
  } catch (const LoadError& e) {
    return e.kind();
  }
  return LoadErrorKind::Io;  // sentinel: parsed fine
}

void write_text(const std::filesystem::path& p, const std::string& s) { binary::write_file(p, s); }

/// Tables with images i0..i{n-1} and captions c0..c{m-1}, dim 3.
DatasetTables id_tables(int n_images, int n_captions) {
  DatasetTables t{EmbeddingTable(3), EmbeddingTable(3)};
  for (int i = 0; i < n_images; ++i) t.images.insert("i" + std::to_string(i), Vector{1, float(i), 0});
  for (int i = 0; i < n_captions; ++i) t.texts.insert("c" + std::to_string(i), Vector{0, 1, float(i)});
  return t;
}

}  // namespace

TEST(Fgeb, RoundTrip) {
  fgtest::TempDir dir("fgeb");
  const auto t = small_table();
  write_table(t, dir / "t.fgeb");
  EXPECT_EQ(read_table(dir / "t.fgeb"), t);
}

TEST(Fgeb, EmptyTableIsValid) {
  const EmbeddingTable t(512);
  const auto bytes = serialize_table(t);
  EXPECT_EQ(bytes.size(), 20u);
  const auto back = parse_table(bytes);
  EXPECT_EQ(back.dim(), 512u);
  EXPECT_TRUE(back.empty());
}

TEST(Fgeb, ExactByteLayout) {
  EmbeddingTable t(2);
  t.insert("ab", Vector{1.0f, -2.0f});
  const std::string expected("FGEB"
                             "\x01\x00\x00\x00"                  // version
                             "\x02\x00\x00\x00"                  // dim
                             "\x01\x00\x00\x00\x00\x00\x00\x00"  // count
                             "\x02\x00"                          // id length
                             "ab"
                             "\x00\x00\x80\x3f"   // 1.0f
                             "\x00\x00\x00\xc0",  // -2.0f
                             4 + 4 + 4 + 8 + 2 + 2 + 8);
  EXPECT_EQ(serialize_table(t), expected);
  EXPECT_EQ(parse_table(expected), t);
}

TEST(Fgeb, RecordOrderDoesNotMatter) {
  // Hand-built file with records in reverse id order.
  std::string bytes("FGEB", 4);
  binary::put_u32(bytes, 1);
  binary::put_u32(bytes, 1);
  binary::put_u64(bytes, 2);
  for (const char* id : {"z", "a"}) {
    binary::put_u16(bytes, 1);
    bytes += id;
    binary::put_f32(bytes, id[0] == 'z' ? 2.0f : 1.0f);
  }
  EmbeddingTable t(1);
  t.insert("a", Vector{1.0f});
  t.insert("z", Vector{2.0f});
  EXPECT_EQ(parse_table(bytes), t);
}

TEST(Fgeb, DistinctLoadErrors) {
  const auto good = serialize_table(small_table());
  std::string bad = good;
  bad[1] = 'X';
  EXPECT_EQ(load_kind(bad), LoadErrorKind::BadMagic);
  bad = good;
  bad[4] = 2;
  EXPECT_EQ(load_kind(bad), LoadErrorKind::VersionMismatch);
  EXPECT_EQ(load_kind(good.substr(0, good.size() - 4)), LoadErrorKind::Truncated);
  EXPECT_EQ(load_kind(good.substr(0, 10)), LoadErrorKind::Truncated);

  // dim 4 but only three floats in the single record
  std::string short_rec("FGEB", 4);
  binary::put_u32(short_rec, 1);
  binary::put_u32(short_rec, 4);
  binary::put_u64(short_rec, 1);
  binary::put_u16(short_rec, 1);
  short_rec += "x";
  for (int i = 0; i < 3; ++i) binary::put_f32(short_rec, 1.0f);
  EXPECT_EQ(load_kind(short_rec), LoadErrorKind::Truncated);

  std::string dup("FGEB", 4);
  binary::put_u32(dup, 1);
  binary::put_u32(dup, 1);
  binary::put_u64(dup, 2);
  for (int r = 0; r < 2; ++r) {
    binary::put_u16(dup, 1);
    dup += "q";
    binary::put_f32(dup, 1.0f);
  }
  EXPECT_EQ(load_kind(dup), LoadErrorKind::DuplicateId);
  EXPECT_EQ(load_kind(good + std::string(1, '\0')), LoadErrorKind::Malformed);
}

TEST(Fgeb, MissingFileIsIoError) {
  try {
    read_table("/nonexistent/dir/x.fgeb");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::Io);
  }
}

TEST(EmbeddingTable, InsertValidation) {
  EmbeddingTable t(2);
  t.insert("x", Vector{1, 2});
  EXPECT_THROW(t.insert("x", Vector{1, 2}), UsageError);
  EXPECT_THROW(t.insert("", Vector{1, 2}), UsageError);
  EXPECT_THROW(t.insert("y", Vector{1, 2, 3}), UsageError);
  try {
    (void)t.at("missing-id");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::DanglingId);
    EXPECT_NE(std::string(e.what()).find("missing-id"), std::string::npos);
  }
}

TEST(EmbeddingTable, NormalizedCopyLeavesOriginal) {
  const auto t = small_table();
  const auto digest = table_digest(t);
  const auto n = normalized_copy(t);
  EXPECT_NEAR(norm(n.at("b")), 1.0, 1e-6);
  EXPECT_EQ(table_digest(t), digest);
  EmbeddingTable z(2);
  z.insert("zero", Vector(2));
  EXPECT_THROW(normalized_copy(z), DomainError);
}

TEST(Manifest, TwoImagesFiveCaptions) {
  fgtest::TempDir dir("manifest");
  const auto tables = id_tables(2, 10);
  write_table(tables.images, dir / "img.fgeb");
  write_table(tables.texts, dir / "txt.fgeb");
  json pairs = json::array();
  for (int i = 0; i < 2; ++i) {
    json caps = json::array();
    for (int c = 0; c < 5; ++c) caps.push_back("c" + std::to_string(i * 5 + c));
    pairs.push_back({{"image", "i" + std::to_string(i)}, {"captions", caps}});
  }
  write_text(dir / "pairs.json", pairs.dump());
  const json m = {{"dim", 3},
                  {"image_table", "img.fgeb"},
                  {"text_table", "txt.fgeb"},
                  {"coarse", {{{"split", "test"}, {"pairs", "pairs.json"}}}}};
  write_text(dir / "m.json", m.dump());

  const auto man = read_manifest(dir / "m.json");
  const auto loaded = load_tables(man);
  const auto coarse = load_coarse(man, loaded, Split::Test);
  EXPECT_EQ(coarse.items.size(), 2u);
  EXPECT_EQ(coarse.num_captions(), 10u);
  EXPECT_TRUE(has_coarse(man, Split::Test));
  EXPECT_FALSE(has_coarse(man, Split::Train));
}

TEST(Manifest, InlineListsAndRoundTrip) {
  fgtest::TempDir dir("manifest_rt");
  const auto tables = id_tables(1, 11);
  write_table(tables.images, dir / "img.fgeb");
  write_table(tables.texts, dir / "txt.fgeb");
  json negs = json::array();
  for (int k = 1; k <= 10; ++k) negs.push_back("c" + std::to_string(k));
  const json m = {
      {"dim", 3},
      {"image_table", "img.fgeb"},
      {"text_table", "txt.fgeb"},
      {"vocab",
       {{{"benchmark", "hard"},
         {"split", "test"},
         {"n_negatives", 10},
         {"vocab_items", {{{"image", "i0"}, {"positive", "c0"}, {"negatives", negs}}}}}}},
      {"meta", {{"exporter", "test"}}}};
  const auto man = parse_manifest(m, dir.path());
  const auto v = load_vocab(man, load_tables(man), "hard", Split::Test);
  EXPECT_EQ(v.vocab_size(), 11u);
  EXPECT_EQ(v.items[0].negative_ids.size(), 10u);

  write_manifest(man, dir / "again.json");
  const auto back = read_manifest(dir / "again.json");
  EXPECT_EQ(to_json(back), to_json(man));
  EXPECT_EQ(back.meta, m["meta"]);
}

TEST(Manifest, RejectsDimDisagreement) {
  fgtest::TempDir dir("manifest_dim");
  const auto tables = id_tables(1, 1);
  write_table(tables.images, dir / "img.fgeb");
  write_table(tables.texts, dir / "txt.fgeb");
  const auto man = parse_manifest({{"dim", 4}, {"image_table", "img.fgeb"}, {"text_table", "txt.fgeb"}}, dir.path());
  EXPECT_THROW(load_tables(man), LoadError);
}

TEST(Manifest, MissingKeysAreMalformed) {
  try {
    parse_manifest(json{{"dim", 3}, {"image_table", "x"}}, ".");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::Malformed);
    EXPECT_NE(std::string(e.what()).find("text_table"), std::string::npos);
  }
  EXPECT_THROW(parse_manifest(json{{"dim", 3},
                                   {"image_table", "x"},
                                   {"text_table", "y"},
                                   {"vocab", {{{"benchmark", "nope"}, {"split", "test"}, {"n_negatives", 1},
                                               {"vocab_items", json::array()}}}}},
                              "."),
               LoadError);
}

TEST(CoarseValidation, DanglingAndDuplicate) {
  const auto t = id_tables(2, 3);
  CoarsePairs ok{Split::Test, {{"i0", {"c0", "c1"}}, {"i1", {"c2"}}}};
  EXPECT_NO_THROW(validate(ok, t));
  CoarsePairs dangling{Split::Test, {{"i0", {"c0", "ghost-caption"}}}};
  try {
    validate(dangling, t);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::DanglingId);
    EXPECT_NE(std::string(e.what()).find("ghost-caption"), std::string::npos);
  }
  CoarsePairs dup{Split::Test, {{"i0", {"c0"}}, {"i0", {"c1"}}}};
  EXPECT_THROW(validate(dup, t), LoadError);
  CoarsePairs none{Split::Test, {{"i0", {}}}};
  EXPECT_THROW(validate(none, t), LoadError);
}

TEST(VocabValidation, Rules) {
  const auto t = id_tables(2, 12);
  auto item = [](const std::string& img, int first, int n) {
    VocabItem it{img, "c" + std::to_string(first), {}};
    for (int k = 1; k <= n; ++k) it.negative_ids.push_back("c" + std::to_string(first + k));
    return it;
  };
  VocabDataset hard{"hard", Split::Test, 10, {item("i0", 0, 10)}};
  EXPECT_NO_THROW(validate(hard, t));

  VocabDataset wrong_n{"hard", Split::Test, 3, {item("i0", 0, 3)}};
  EXPECT_THROW(validate(wrong_n, t), LoadError);
  VocabDataset custom{"custom", Split::Test, 3, {item("i0", 0, 3)}};
  EXPECT_NO_THROW(validate(custom, t));

  VocabDataset mixed{"custom", Split::Test, 3, {item("i0", 0, 3), item("i1", 4, 2)}};
  EXPECT_THROW(validate(mixed, t), LoadError);

  auto self = item("i0", 0, 2);
  self.negative_ids[1] = self.positive_id;
  VocabDataset positive_as_negative{"custom", Split::Test, 2, {self}};
  EXPECT_THROW(validate(positive_as_negative, t), LoadError);

  EXPECT_EQ(expected_negatives("pattern"), 7u);
  EXPECT_EQ(expected_negatives("transparency"), 2u);
  EXPECT_EQ(expected_negatives("color"), 10u);
  EXPECT_FALSE(expected_negatives("custom").has_value());
}
