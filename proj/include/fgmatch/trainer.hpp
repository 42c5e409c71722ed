// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training of a similarity head over frozen embeddings:
// warm-up on coarse image-caption pairs with the in-batch triplet loss, then
// fine-tuning on per-object vocabularies with the fine-grained triplet loss.
// Single-threaded; (config, data, seed) determine the result bit for bit.
#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <unordered_set>
#include <vector>

#include "fgmatch/adam.hpp"
#include "fgmatch/checkpoint.hpp"
#include "fgmatch/embedstore.hpp"
#include "fgmatch/heads.hpp"
#include "fgmatch/losses.hpp"
#include "fgmatch/random.hpp"
#include "json.hpp"

namespace fgmatch {

struct TrainConfig {
  Stage stage = Stage::Warmup;
  double lr = 5e-4;
  std::size_t epochs = 10;
  double margin = 0.2;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool normalize_inputs = true;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables intermediate checkpoints
  std::filesystem::path checkpoint_path;
  AdamConfig adam{};  // lr is overwritten by `lr`

  /// Warm-up: lr 5e-4, margin 0.2. Fine-tune: lr 1e-5, margin 0.05. 10 epochs, batch 64.
  static TrainConfig defaults(Stage stage) {
    TrainConfig c;
    c.stage = stage;
    if (stage == Stage::Finetune) {
      c.lr = 1e-5;
      c.margin = 0.05;
    }
    return c;
  }

  void validate() const {
    if (stage != Stage::Warmup && stage != Stage::Finetune) throw UsageError("train: stage must be warmup or finetune");
    if (!(lr > 0.0)) throw UsageError("train: learning rate must be positive");
    if (epochs < 1) throw UsageError("train: epochs must be at least 1");
    if (!(margin >= 0.0)) throw UsageError("train: margin must be nonnegative");
    if (batch_size < 1 || (stage == Stage::Warmup && batch_size < 2)) {
      throw UsageError("train: warm-up batch size must be at least 2");
    }
  }

  AdamConfig adam_config() const {
    AdamConfig a = adam;
    a.lr = lr;
    return a;
  }

  nlohmann::json to_json() const {
    return {{"stage", to_string(stage)},
            {"lr", lr},
            {"epochs", epochs},
            {"margin", margin},
            {"batch_size", batch_size},
            {"seed", seed},
            {"normalize_inputs", normalize_inputs},
            {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}}};
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  Stage stage = Stage::Warmup;
  double total_loss = 0.0;
  double mean_loss = 0.0;  // total / (pairs or items)
  std::size_t steps = 0;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},
            {"stage", to_string(stage)},
            {"mean_loss", mean_loss},
            {"total_loss", total_loss},
            {"steps", steps},
            {"seconds", seconds}};
  }
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// Everything needed to continue a run: parameters, optimizer moments, and
/// how many epochs of the current stage are complete.
struct TrainState {
  HeadParams head;
  AdamState optimizer;
  std::size_t epochs_done = 0;

  static TrainState fresh(HeadParams head, const TrainConfig& config) {
    TrainState s{std::move(head), {}, 0};
    s.optimizer = AdamState::for_params(s.head, config.adam_config());
    return s;
  }
};

struct TrainResult {
  TrainState state;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&, const TrainState&)>;

namespace detail {

inline void require_trainable(const HeadParams& head, const TrainConfig& config, Stage stage) {
  if (!is_trainable(head.kind())) throw UsageError("head 'cosine' has no trainable parameters");
  if (config.stage != stage) throw UsageError(std::string("train: config stage is not ") + to_string(stage));
  config.validate();
}

inline void check_state(const TrainState& state) {
  check_layout(state.head);
  if (state.optimizer.m.size() != state.head.blocks.size()) {
    throw UsageError("train: optimizer state does not match the head");
  }
}

inline std::uint64_t epoch_seed(const TrainConfig& c, std::size_t epoch) {
  return mix_seed(c.seed, static_cast<std::uint64_t>(c.stage) * 1000003ULL + epoch);
}

template <class Step>
TrainResult run_epochs(const TrainConfig& config, TrainState state, std::size_t units_per_epoch, Step&& step,
                       const EpochCallback& on_epoch) {
  TrainResult result{std::move(state), {}};
  auto& s = result.state;
  s.optimizer.config = config.adam_config();
  for (std::size_t epoch = s.epochs_done; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.stage = config.stage;
    step(epoch, s, rec);
    rec.mean_loss = units_per_epoch ? rec.total_loss / static_cast<double>(units_per_epoch) : 0.0;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.epochs_done = epoch + 1;
    result.history.epochs.push_back(rec);
    if (config.checkpoint_every && !config.checkpoint_path.empty() && s.epochs_done % config.checkpoint_every == 0) {
      save_checkpoint({s.head, s.optimizer, config.stage, static_cast<std::uint32_t>(s.epochs_done), config.to_json()},
                      config.checkpoint_path);
    }
    if (on_epoch) on_epoch(rec, s);
  }
  return result;
}

}  // namespace detail

/// One (image, caption) training pair of the warm-up stage.
struct CoarsePair {
  std::size_t item = 0;     // index into CoarsePairs::items
  std::size_t caption = 0;  // index into that item's caption_ids
};

/// Shuffles every (image, caption) pair with `seed` and packs them into
/// batches of at most `batch_size` in which no image appears twice. Pairs that
/// would collide are deferred to a later batch; batches of a single pair are
/// dropped since the in-batch loss needs a rival.
inline std::vector<std::vector<CoarsePair>> warmup_batches(const CoarsePairs& coarse, std::size_t batch_size,
                                                           std::uint64_t seed) {
  std::vector<CoarsePair> pairs;
  for (std::size_t i = 0; i < coarse.items.size(); ++i)
    for (std::size_t c = 0; c < coarse.items[i].caption_ids.size(); ++c) pairs.push_back({i, c});
  Rng rng(seed);
  rng.shuffle(std::span<CoarsePair>(pairs));

  std::vector<std::vector<CoarsePair>> batches;
  std::deque<CoarsePair> queue(pairs.begin(), pairs.end());
  std::unordered_set<std::size_t> used;
  std::vector<CoarsePair> batch, skipped;
  while (!queue.empty()) {
    batch.clear();
    skipped.clear();
    used.clear();
    while (batch.size() < batch_size && !queue.empty()) {
      const CoarsePair p = queue.front();
      queue.pop_front();
      if (used.insert(p.item).second) {
        batch.push_back(p);
      } else {
        skipped.push_back(p);
      }
    }
    queue.insert(queue.begin(), skipped.begin(), skipped.end());
    if (batch.size() >= 2) batches.push_back(batch);
  }
  return batches;
}

/// Loss and head gradients of one warm-up batch.
template <class Real>
double coarse_batch_gradients(const BasicHeadParams<Real>& head, std::span<const BasicVector<Real>* const> images,
                              std::span<const BasicVector<Real>* const> captions, double margin, Gradients& grads) {
  PairScorer<Real> scorer(head, {images.begin(), images.end()}, {captions.begin(), captions.end()});
  const std::size_t b = images.size();
  ScoreMatrix scores(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) scores(i, j) = scorer.score(i, j);
  ScoreMatrix dscores;
  const double loss = coarse_triplet_loss(scores, margin, &dscores);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) scorer.accumulate(i, j, dscores(i, j));
  grads = scorer.gradients();
  return loss;
}

/// One fine-grained item as embedding pointers.
template <class Real>
struct VocabInputs {
  const BasicVector<Real>* image = nullptr;
  const BasicVector<Real>* positive = nullptr;
  std::vector<const BasicVector<Real>*> negatives;
};

/// Loss and head gradients of one fine-tuning batch.
template <class Real>
double finegrained_batch_gradients(const BasicHeadParams<Real>& head, std::span<const VocabInputs<Real>> items,
                                   double margin, Gradients& grads) {
  std::vector<const BasicVector<Real>*> images, texts;
  std::vector<std::size_t> offset;
  for (const auto& it : items) {
    images.push_back(it.image);
    offset.push_back(texts.size());
    texts.push_back(it.positive);
    texts.insert(texts.end(), it.negatives.begin(), it.negatives.end());
  }
  PairScorer<Real> scorer(head, std::move(images), std::move(texts));
  std::vector<VocabScores> scores(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    scores[i].positive = scorer.score(i, offset[i]);
    for (std::size_t k = 0; k < items[i].negatives.size(); ++k)
      scores[i].negatives.push_back(scorer.score(i, offset[i] + 1 + k));
  }
  std::vector<VocabScores> dscores;
  const double loss = finegrained_triplet_loss(scores, margin, &dscores);
  for (std::size_t i = 0; i < items.size(); ++i) {
    scorer.accumulate(i, offset[i], dscores[i].positive);
    for (std::size_t k = 0; k < items[i].negatives.size(); ++k)
      scorer.accumulate(i, offset[i] + 1 + k, dscores[i].negatives[k]);
  }
  grads = scorer.gradients();
  return loss;
}

/// Warm-up stage on coarse pairs, continuing from `state` (epochs already
/// done are skipped). Embedding tables are never modified.
inline TrainResult warmup(const TrainConfig& config, const CoarsePairs& coarse, const DatasetTables& tables,
                          TrainState state, const EpochCallback& on_epoch = {}) {
  detail::require_trainable(state.head, config, Stage::Warmup);
  detail::check_state(state);
  if (coarse.items.size() < 2) throw UsageError("warm-up needs at least two images");
  validate(coarse, tables);
  const PreparedTables prepared(tables, config.normalize_inputs);

  auto step = [&](std::size_t epoch, TrainState& s, EpochRecord& rec) {
    for (const auto& batch : warmup_batches(coarse, config.batch_size, detail::epoch_seed(config, epoch))) {
      std::vector<const Vector*> images, captions;
      for (const auto& p : batch) {
        const auto& item = coarse.items[p.item];
        images.push_back(&prepared.image(item.image_id));
        captions.push_back(&prepared.text(item.caption_ids[p.caption]));
      }
      Gradients grads;
      rec.total_loss += coarse_batch_gradients<float>(s.head, images, captions, config.margin, grads);
      adam_step(s.head, grads, s.optimizer);
      ++rec.steps;
    }
  };
  return detail::run_epochs(config, std::move(state), coarse.num_captions(), step, on_epoch);
}

inline TrainResult warmup(const TrainConfig& config, const CoarsePairs& coarse, const DatasetTables& tables,
                          HeadParams head, const EpochCallback& on_epoch = {}) {
  return warmup(config, coarse, tables, TrainState::fresh(std::move(head), config), on_epoch);
}

/// Fine-tuning stage on a vocabulary dataset.
inline TrainResult finetune(const TrainConfig& config, const VocabDataset& vocab, const DatasetTables& tables,
                            TrainState state, const EpochCallback& on_epoch = {}) {
  detail::require_trainable(state.head, config, Stage::Finetune);
  detail::check_state(state);
  if (vocab.items.empty()) throw UsageError("fine-tune dataset is empty");
  validate(vocab, tables);
  const PreparedTables prepared(tables, config.normalize_inputs);

  std::vector<VocabInputs<float>> all;
  for (const auto& item : vocab.items) {
    VocabInputs<float> in{&prepared.image(item.image_id), &prepared.text(item.positive_id), {}};
    for (const auto& n : item.negative_ids) in.negatives.push_back(&prepared.text(n));
    all.push_back(std::move(in));
  }

  auto step = [&](std::size_t epoch, TrainState& s, EpochRecord& rec) {
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(detail::epoch_seed(config, epoch));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<VocabInputs<float>> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(all[order[k]]);
      Gradients grads;
      rec.total_loss += finegrained_batch_gradients<float>(s.head, batch, config.margin, grads);
      adam_step(s.head, grads, s.optimizer);
      ++rec.steps;
    }
  };
  return detail::run_epochs(config, std::move(state), vocab.items.size(), step, on_epoch);
}

inline TrainResult finetune(const TrainConfig& config, const VocabDataset& vocab, const DatasetTables& tables,
                            HeadParams head, const EpochCallback& on_epoch = {}) {
  return finetune(config, vocab, tables, TrainState::fresh(std::move(head), config), on_epoch);
}

}  // namespace fgmatch
