// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "fgmatch/evaluator.hpp"
#include "fgmatch/synthbench.hpp"
#include "fgmatch/trainer.hpp"
#include "support.hpp"

using namespace fgmatch;

namespace {

SynthData toy(std::uint64_t seed = 1) {
  SynthConfig c;
  c.dim = 16;
  c.n_categories = 4;
  c.n_attributes = 4;
  c.n_negatives = 3;
  c.epsilon = 0.3;
  c.n_train = 64;
  c.n_eval = 64;
  c.n_coarse_train = 8;
  c.captions_per_image = 4;  // 32 warm-up pairs
  c.n_coarse_test = 8;
  c.seed = seed;
  return generate(c);
}

TrainConfig quick(Stage stage, std::size_t epochs, std::size_t batch) {
  auto c = TrainConfig::defaults(stage);
  c.epochs = epochs;
  c.batch_size = batch;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(TrainConfig, DefaultsPerStage) {
  const auto w = TrainConfig::defaults(Stage::Warmup);
  EXPECT_EQ(w.lr, 5e-4);
  EXPECT_EQ(w.margin, 0.2);
  EXPECT_EQ(w.epochs, 10u);
  EXPECT_EQ(w.batch_size, 64u);
  const auto f = TrainConfig::defaults(Stage::Finetune);
  EXPECT_EQ(f.lr, 1e-5);
  EXPECT_EQ(f.margin, 0.05);
  EXPECT_EQ(f.epochs, 10u);
  EXPECT_TRUE(f.normalize_inputs);
}

TEST(TrainConfig, Validation) {
  auto c = TrainConfig::defaults(Stage::Warmup);
  c.epochs = 0;
  EXPECT_THROW(c.validate(), UsageError);
  c = TrainConfig::defaults(Stage::Warmup);
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), UsageError);
  c.stage = Stage::Finetune;
  EXPECT_NO_THROW(c.validate());
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(WarmupSampler, NoImageTwiceInABatch) {
  const auto data = toy();
  std::size_t total_pairs = data.coarse_train.num_captions();
  for (std::uint64_t epoch = 0; epoch < 100; ++epoch) {
    const auto batches = warmup_batches(data.coarse_train, 6, mix_seed(5, epoch));
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& b : batches) {
      EXPECT_GE(b.size(), 2u);
      EXPECT_LE(b.size(), 6u);
      std::set<std::size_t> images;
      for (const auto& p : b) {
        EXPECT_TRUE(images.insert(p.item).second) << "epoch " << epoch;
        EXPECT_TRUE(seen.insert({p.item, p.caption}).second);
      }
    }
    // Only a tail of pairs sharing one image can be left without a rival.
    std::set<std::size_t> dropped_images;
    for (std::size_t i = 0; i < data.coarse_train.items.size(); ++i)
      for (std::size_t c = 0; c < data.coarse_train.items[i].caption_ids.size(); ++c)
        if (!seen.count({i, c})) dropped_images.insert(i);
    EXPECT_LE(dropped_images.size(), 1u) << "epoch " << epoch;
    EXPECT_LE(seen.size(), total_pairs);
  }
}

TEST(WarmupSampler, SeededShuffle) {
  const auto data = toy();
  const auto a = warmup_batches(data.coarse_train, 8, 1);
  const auto b = warmup_batches(data.coarse_train, 8, 1);
  const auto c = warmup_batches(data.coarse_train, 8, 2);
  auto flat = [](const auto& bs) {
    std::vector<std::size_t> v;
    for (const auto& batch : bs)
      for (const auto& p : batch) v.push_back(p.item * 100 + p.caption);
    return v;
  };
  EXPECT_EQ(flat(a), flat(b));
  EXPECT_NE(flat(a), flat(c));
}

TEST(Warmup, LossDecreasesOnToySet) {
  const auto data = toy();
  auto cfg = quick(Stage::Warmup, 10, 8);
  cfg.lr = 1e-2;
  const auto r = warmup(cfg, data.coarse_train, data.tables, init_head(HeadKind::LinearBoth, 16, 0, 0, 1));
  ASSERT_EQ(r.history.epochs.size(), 10u);
  EXPECT_LT(r.history.epochs.back().mean_loss, r.history.epochs.front().mean_loss);
  EXPECT_EQ(r.state.epochs_done, 10u);
}

TEST(Warmup, RejectsCosineAndWrongStage) {
  const auto data = toy();
  try {
    warmup(quick(Stage::Warmup, 1, 8), data.coarse_train, data.tables, identity_head(HeadKind::CosineBaseline, 16));
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("no trainable parameters"), std::string::npos);
  }
  EXPECT_THROW(warmup(quick(Stage::Finetune, 1, 8), data.coarse_train, data.tables,
                      init_head(HeadKind::LinearBoth, 16, 0, 0, 1)),
               UsageError);
  auto zero_epochs = quick(Stage::Warmup, 1, 8);
  zero_epochs.epochs = 0;
  EXPECT_THROW(warmup(zero_epochs, data.coarse_train, data.tables, init_head(HeadKind::LinearBoth, 16, 0, 0, 1)),
               UsageError);
}

TEST(Training, EmbeddingTablesStayFrozen) {
  const auto data = toy();
  const auto img = table_digest(data.tables.images), txt = table_digest(data.tables.texts);
  for (HeadKind k : {HeadKind::LinearBoth, HeadKind::Mlp, HeadKind::Mha}) {
    const auto w = warmup(quick(Stage::Warmup, 2, 8), data.coarse_train, data.tables, init_head(k, 16, 8, 4, 1));
    finetune(quick(Stage::Finetune, 2, 16), data.vocab_train, data.tables, w.state.head);
  }
  EXPECT_EQ(table_digest(data.tables.images), img);
  EXPECT_EQ(table_digest(data.tables.texts), txt);
}

TEST(Training, DeterministicGivenSeed) {
  const auto data = toy();
  for (HeadKind k : {HeadKind::LinearTextOnly, HeadKind::Mlp, HeadKind::Mha}) {
    auto run = [&] {
      const auto w = warmup(quick(Stage::Warmup, 2, 8), data.coarse_train, data.tables, init_head(k, 16, 8, 4, 1));
      return finetune(quick(Stage::Finetune, 2, 16), data.vocab_train, data.tables, w.state.head).state;
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a.head, b.head);
    EXPECT_EQ(a.optimizer, b.optimizer);
  }
}

TEST(Training, ResumeEqualsUninterrupted) {
  const auto data = toy();
  fgtest::TempDir dir("resume");
  for (Stage stage : {Stage::Warmup, Stage::Finetune}) {
    const auto full_cfg = quick(stage, 6, 8);
    auto partial_cfg = full_cfg;
    partial_cfg.epochs = 2;
    auto run = [&](const TrainConfig& c, TrainState s) {
      return stage == Stage::Warmup ? warmup(c, data.coarse_train, data.tables, std::move(s))
                                    : finetune(c, data.vocab_train, data.tables, std::move(s));
    };
    const auto head = init_head(HeadKind::LinearBoth, 16, 0, 0, 2);
    const auto full = run(full_cfg, TrainState::fresh(head, full_cfg));
    const auto first = run(partial_cfg, TrainState::fresh(head, partial_cfg));

    // Interrupt through a checkpoint file to cover serialization as well.
    save_checkpoint({first.state.head, first.state.optimizer, stage,
                     static_cast<std::uint32_t>(first.state.epochs_done), full_cfg.to_json()},
                    dir / "mid.ckpt");
    const auto ck = load_checkpoint(dir / "mid.ckpt", HeadKind::LinearBoth);
    const auto resumed = run(full_cfg, TrainState{ck.head, *ck.optimizer, ck.epochs_done});

    EXPECT_EQ(resumed.state.head, full.state.head) << to_string(stage);
    EXPECT_EQ(resumed.state.optimizer, full.state.optimizer);
    EXPECT_EQ(resumed.history.epochs.size(), 4u);
    EXPECT_EQ(resumed.history.epochs.back().total_loss, full.history.epochs.back().total_loss);
  }
}

TEST(Training, PeriodicCheckpoint) {
  const auto data = toy();
  fgtest::TempDir dir("periodic");
  auto cfg = quick(Stage::Warmup, 3, 8);
  cfg.checkpoint_every = 2;
  cfg.checkpoint_path = dir / "p.ckpt";
  warmup(cfg, data.coarse_train, data.tables, init_head(HeadKind::LinearBoth, 16, 0, 0, 1));
  const auto ck = load_checkpoint(dir / "p.ckpt");
  EXPECT_EQ(ck.epochs_done, 2u);
  EXPECT_EQ(ck.stage, Stage::Warmup);
}

TEST(Finetune, ZeroMarginOnSeparatedDataLeavesParams) {
  const auto data = toy();
  // Oracle head: identity weights, so the attribute term decides; keep only
  // items the head already separates.
  const auto head = identity_head(HeadKind::LinearBoth, 16);
  const PreparedTables prepared(data.tables, true);
  VocabDataset separated = data.vocab_train;
  separated.items.clear();
  for (const auto& it : data.vocab_train.items) {
    const double pos = score(head, prepared.image(it.image_id), prepared.text(it.positive_id));
    bool ok = true;
    for (const auto& n : it.negative_ids) ok &= score(head, prepared.image(it.image_id), prepared.text(n)) < pos;
    if (ok) separated.items.push_back(it);
  }
  ASSERT_FALSE(separated.items.empty());
  auto cfg = quick(Stage::Finetune, 2, 16);
  cfg.margin = 0.0;
  const auto r = finetune(cfg, separated, data.tables, head);
  EXPECT_EQ(r.state.head, head);
  for (const auto& e : r.history.epochs) EXPECT_EQ(e.total_loss, 0.0);
}

TEST(Finetune, ImprovesMeanRank) {
  SynthConfig c;
  c.dim = 32;
  c.n_categories = 8;
  c.n_train = 4000;
  c.n_eval = 300;
  c.n_coarse_train = 50;
  c.n_coarse_test = 10;
  const auto data = generate(c);
  const auto head = init_head(HeadKind::LinearBoth, c.dim, 0, 0, 1);
  auto cfg = TrainConfig::defaults(Stage::Finetune);
  cfg.lr = 1e-3;
  const double before = mean_rank(head, data.vocab_eval, data.tables).mean_rank;
  const auto r = finetune(cfg, data.vocab_train, data.tables, head);
  const double after = mean_rank(r.state.head, data.vocab_eval, data.tables).mean_rank;
  EXPECT_LT(after, before - 0.5);
  EXPECT_LT(r.history.epochs.back().mean_loss, r.history.epochs.front().mean_loss);
}
