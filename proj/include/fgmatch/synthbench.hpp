// SPDX-License-Identifier: Apache-2.0
//
// Synthetic embedding spaces where a unit-scale category code dominates every
// vector and a small attribute code (scale epsilon) carries the fine-grained
// signal. Category and attribute codes are mutually orthonormal, so the
// attribute is linearly decodable by construction while cosine similarity is
// dominated by the shared category.
//
//   crop image       = cat_c + eps * attr_a + noise
//   positive caption = cat_c + eps * attr_a + noise
//   negative caption = cat_c + eps * attr_b + noise   (b != a, distinct per item)
//   coarse caption   = cat_c + noise
//
// noise = isotropic Gaussian with expected norm `noise`, plus a Gaussian
// inside the category subspace with expected norm `coarse_noise`. The second
// part lies entirely outside the attribute subspace: a linear head can
// suppress it, cosine cannot.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "fgmatch/embedstore.hpp"
#include "fgmatch/errors.hpp"
#include "fgmatch/numcore.hpp"
#include "fgmatch/random.hpp"
#include "json.hpp"

namespace fgmatch {

struct SynthConfig {
  std::size_t dim = 64;
  std::size_t n_categories = 16;
  std::size_t n_attributes = 12;
  double epsilon = 0.05;  // attribute scale; the category code has unit norm
  double noise = 0.01;         // expected norm of the isotropic noise
  double coarse_noise = 0.2;   // expected norm of the noise inside the category subspace
  std::size_t n_train = 8000;
  std::size_t n_eval = 1000;
  std::size_t n_negatives = 10;
  std::size_t n_coarse_train = 1000;
  std::size_t n_coarse_test = 100;
  std::size_t captions_per_image = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim == 0) throw UsageError("synth: dim must be positive");
    if (n_categories == 0) throw UsageError("synth: need at least one category");
    if (n_negatives < 1) throw UsageError("synth: need at least one negative");
    if (n_attributes < n_negatives + 1) {
      throw UsageError("synth: " + std::to_string(n_attributes) + " attributes cannot give " +
                       std::to_string(n_negatives) + " distinct negatives (need at least " +
                       std::to_string(n_negatives + 1) + ")");
    }
    if (n_categories + n_attributes > dim) {
      throw UsageError("synth: categories + attributes exceed the embedding dimension");
    }
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw UsageError("synth: epsilon must be in [0, 1)");
    if (!(noise >= 0.0) || !(coarse_noise >= 0.0)) throw UsageError("synth: noise must be nonnegative");
    if (captions_per_image < 1) throw UsageError("synth: captions_per_image must be at least 1");
  }

  nlohmann::json to_json() const {
    return {{"dim", dim},
            {"n_categories", n_categories},
            {"n_attributes", n_attributes},
            {"epsilon", epsilon},
            {"noise", noise},
            {"coarse_noise", coarse_noise},
            {"n_train", n_train},
            {"n_eval", n_eval},
            {"n_negatives", n_negatives},
            {"n_coarse_train", n_coarse_train},
            {"n_coarse_test", n_coarse_test},
            {"captions_per_image", captions_per_image},
            {"seed", seed}};
  }
};

struct SynthData {
  DatasetTables tables;
  CoarsePairs coarse_train;
  CoarsePairs coarse_test;
  VocabDataset vocab_train;
  VocabDataset vocab_eval;
  // Row-major codes, kept for analytic checks.
  std::vector<std::vector<double>> category_codes;
  std::vector<std::vector<double>> attribute_codes;
};

/// `count` orthonormal vectors in R^dim from seeded Gaussian draws
/// (modified Gram-Schmidt, redrawing any degenerate candidate).
inline std::vector<std::vector<double>> random_orthonormal(std::size_t count, std::size_t dim, Rng& rng) {
  if (count > dim) throw UsageError("cannot draw more orthonormal vectors than dimensions");
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        const double p = dot(std::span<const double>(v), std::span<const double>(b));
        for (std::size_t i = 0; i < dim; ++i) v[i] -= p * b[i];
      }
    }
    const double n = norm(std::span<const double>(v));
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

namespace detail {

inline std::string synth_id(const char* prefix, std::size_t i, const char* suffix = "") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%06zu%s", prefix, i, suffix);
  return buf;
}

}  // namespace detail

inline SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SynthData out;
  const std::size_t d = cfg.dim;
  auto codes = random_orthonormal(cfg.n_categories + cfg.n_attributes, d, rng);
  out.category_codes.assign(codes.begin(), codes.begin() + static_cast<std::ptrdiff_t>(cfg.n_categories));
  out.attribute_codes.assign(codes.begin() + static_cast<std::ptrdiff_t>(cfg.n_categories), codes.end());
  out.tables.images = EmbeddingTable(d);
  out.tables.texts = EmbeddingTable(d);

  const double iso_sd = cfg.noise / std::sqrt(static_cast<double>(d));
  const double coarse_sd = cfg.coarse_noise / std::sqrt(static_cast<double>(cfg.n_categories));
  auto sample = [&](std::size_t category, const std::vector<double>* attribute) {
    std::vector<double> x(out.category_codes[category]);
    for (std::size_t k = 0; k < d; ++k) x[k] += iso_sd * rng.normal();
    for (const auto& code : out.category_codes) {
      const double g = coarse_sd * rng.normal();
      for (std::size_t k = 0; k < d; ++k) x[k] += g * code[k];
    }
    if (attribute) {
      for (std::size_t k = 0; k < d; ++k) x[k] += cfg.epsilon * (*attribute)[k];
    }
    std::vector<float> v(x.begin(), x.end());
    return Vector(std::move(v));
  };

  auto make_vocab = [&](VocabDataset& ds, Split split, std::size_t n, const char* tag) {
    ds.benchmark = "custom";
    ds.split = split;
    ds.n_negatives = cfg.n_negatives;
    const std::string crop = std::string("crop_") + tag + "_";
    const std::string cap = std::string("fgcap_") + tag + "_";
    std::vector<std::size_t> attrs(cfg.n_attributes);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = static_cast<std::size_t>(rng.below(cfg.n_categories));
      for (std::size_t a = 0; a < attrs.size(); ++a) attrs[a] = a;
      rng.shuffle(std::span<std::size_t>(attrs));  // attrs[0] is the true attribute
      VocabItem item;
      item.image_id = detail::synth_id(crop.c_str(), i);
      item.positive_id = detail::synth_id(cap.c_str(), i, "_pos");
      out.tables.images.insert(item.image_id, sample(c, &out.attribute_codes[attrs[0]]));
      out.tables.texts.insert(item.positive_id, sample(c, &out.attribute_codes[attrs[0]]));
      for (std::size_t k = 0; k < cfg.n_negatives; ++k) {
        char suffix[32];
        std::snprintf(suffix, sizeof(suffix), "_neg%02zu", k);
        item.negative_ids.push_back(detail::synth_id(cap.c_str(), i, suffix));
        out.tables.texts.insert(item.negative_ids.back(), sample(c, &out.attribute_codes[attrs[k + 1]]));
      }
      ds.items.push_back(std::move(item));
    }
  };

  auto make_coarse = [&](CoarsePairs& cp, Split split, std::size_t n, const char* tag) {
    cp.split = split;
    const std::string img = std::string("img_") + tag + "_";
    const std::string cap = std::string("cap_") + tag + "_";
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = static_cast<std::size_t>(rng.below(cfg.n_categories));
      const std::size_t a = static_cast<std::size_t>(rng.below(cfg.n_attributes));
      CoarseItem item;
      item.image_id = detail::synth_id(img.c_str(), i);
      out.tables.images.insert(item.image_id, sample(c, &out.attribute_codes[a]));
      for (std::size_t k = 0; k < cfg.captions_per_image; ++k) {
        char suffix[32];
        std::snprintf(suffix, sizeof(suffix), "_%zu", k);
        item.caption_ids.push_back(detail::synth_id(cap.c_str(), i, suffix));
        out.tables.texts.insert(item.caption_ids.back(), sample(c, nullptr));
      }
      cp.items.push_back(std::move(item));
    }
  };

  make_coarse(out.coarse_train, Split::Train, cfg.n_coarse_train, "train");
  make_coarse(out.coarse_test, Split::Test, cfg.n_coarse_test, "test");
  make_vocab(out.vocab_train, Split::Train, cfg.n_train, "train");
  make_vocab(out.vocab_eval, Split::Test, cfg.n_eval, "test");
  return out;
}

/// Writes the tables, pairing files and manifest into `dir`; returns the
/// paths written, manifest last.
inline std::vector<std::filesystem::path> write_synth(const SynthData& data, const SynthConfig& cfg,
                                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto put_json = [&](const std::string& name, const nlohmann::json& j) {
    binary::write_file(dir / name, j.dump(1) + "\n");
    written.push_back(dir / name);
  };
  write_table(data.tables.images, dir / "images.fgeb");
  written.push_back(dir / "images.fgeb");
  write_table(data.tables.texts, dir / "texts.fgeb");
  written.push_back(dir / "texts.fgeb");

  Manifest m;
  m.base_dir = dir;
  m.dim = cfg.dim;
  m.image_table = "images.fgeb";
  m.text_table = "texts.fgeb";
  if (!data.coarse_train.items.empty()) {
    put_json("coarse_train.json", to_json(data.coarse_train.items));
    m.coarse.push_back({Split::Train, "coarse_train.json"});
  }
  if (!data.coarse_test.items.empty()) {
    put_json("coarse_test.json", to_json(data.coarse_test.items));
    m.coarse.push_back({Split::Test, "coarse_test.json"});
  }
  for (const auto* v : {&data.vocab_train, &data.vocab_eval}) {
    if (v->items.empty()) continue;
    const std::string name = std::string("vocab_") + to_string(v->split) + ".json";
    put_json(name, to_json(v->items));
    m.vocab.push_back({v->benchmark, v->split, v->n_negatives, name});
  }
  m.meta = {{"generator", "synthbench"}, {"config", cfg.to_json()}};
  write_manifest(m, dir / "manifest.json");
  written.push_back(dir / "manifest.json");
  return written;
}

}  // namespace fgmatch
