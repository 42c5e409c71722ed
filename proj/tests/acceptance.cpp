// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "fgmatch/fgmatch.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fgmatch;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  for (HeadKind kind : kAllHeadKinds) {
    if (!is_trainable(kind)) continue;
    for (auto loss : {fgtest::LossKind::Coarse, fgtest::LossKind::Finegrained}) {
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = fgtest::check_gradients(kind, loss, seed);
        checked += r.checked;
        if (r.max_rel_error > worst) {
          worst = r.max_rel_error;
          where = std::string(head_name(kind)) + (loss == fgtest::LossKind::Coarse ? "/coarse/" : "/fine/") +
                  r.worst_block;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "max rel error %.2e at %s over %zu coordinates, %.2f s", worst, where.c_str(),
                checked, secs);
  return {worst <= 1e-4 && secs < 10.0 && checked > 0, buf};
}

double coarse_oracle(const ScoreMatrix& s, double margin) {
  double total = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.rows(); ++j)
      if (i != j) {
        total += std::max(0.0, margin - s(i, i) + s(i, j));
        total += std::max(0.0, margin - s(i, i) + s(j, i));
      }
  return total;
}

Outcome loss_oracles() {
  Rng rng(11);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t b = 2 + rng.below(7);
    const double margin = rng.uniform(0.0, 0.5);
    ScoreMatrix s(b, b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) s(i, j) = rng.uniform(-1.0, 1.0);
    worst = std::max(worst, std::abs(coarse_triplet_loss(s, margin) - coarse_oracle(s, margin)));

    std::vector<VocabScores> items(b);
    double oracle = 0.0;
    for (auto& it : items) {
      it.positive = rng.uniform(-1.0, 1.0);
      it.negatives.resize(1 + rng.below(10));
      for (double& n : it.negatives) {
        n = rng.uniform(-1.0, 1.0);
        oracle += std::max(0.0, margin + n - it.positive);
      }
    }
    worst = std::max(worst, std::abs(finegrained_triplet_loss(items, margin) - oracle));
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max abs difference %.2e over 100 batches", worst);
  return {worst <= 1e-6, buf};
}

Outcome reduction_identity() {
  Rng rng(12);
  const std::size_t d = 16;
  const auto cosine = identity_head(HeadKind::CosineBaseline, d);
  double worst = 0.0;
  for (HeadKind kind : {HeadKind::LinearBoth, HeadKind::LinearTextOnly, HeadKind::LinearVisualOnly}) {
    const auto head = identity_head(kind, d);
    for (int p = 0; p < 1000; ++p) {
      const auto v = fgtest::random_vector(rng, d);
      const auto t = fgtest::random_vector(rng, d);
      worst = std::max(worst, std::abs(score(head, v, t) - score(cosine, v, t)));
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max abs difference %.2e over 3 x 1000 pairs", worst);
  return {worst <= 1e-6, buf};
}

Outcome metric_oracles() {
  Rng rng(13);
  std::size_t rank_mismatch = 0;
  for (int t = 0; t < 10000; ++t) {
    std::vector<double> all(2 + rng.below(15));
    for (double& x : all) x = rng.uniform();
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
      --t;  // not tie-free; draw again
      continue;
    }
    rng.shuffle(std::span<double>(all));
    const double pos = all.back();
    const std::vector<double> negs(all.begin(), all.end() - 1);
    std::sort(all.begin(), all.end(), std::greater<>());
    const auto oracle = static_cast<std::size_t>(std::find(all.begin(), all.end(), pos) - all.begin()) + 1;
    rank_mismatch += rank_positive(pos, negs) != oracle;
  }

  auto [tables, coarse] = fgtest::random_coarse(rng, 50, 5, 16);
  const auto head = init_head(HeadKind::LinearBoth, 16, 0, 0, 3);
  const auto got = recall_at_k(head, coarse, tables);
  const auto want = fgtest::naive_recall(head, coarse, tables, got.ks);
  const bool recall_ok = got.i2t == want.i2t && got.t2i == want.t2i && got.n_captions == 250;

  double sum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> negs(10);
    for (double& n : negs) n = rng.uniform();
    sum += static_cast<double>(rank_positive(rng.uniform(), negs));
  }
  const double uniform_mean = sum / 1000.0;

  char buf[192];
  std::snprintf(buf, sizeof(buf), "rank mismatches %zu/10000, recall 50x250 %s, uniform K=11 mean rank %.3f",
                rank_mismatch, recall_ok ? "exact" : "differs", uniform_mean);
  return {rank_mismatch == 0 && recall_ok && std::abs(uniform_mean - 6.0) <= 0.3, buf};
}

Outcome synthetic_recovery() {
  const auto t0 = Clock::now();
  SynthConfig sc;  // d=64, eps=0.05, N=10, 1000 eval items
  const auto data = generate(sc);
  EvalOptions eo;
  eo.threads = 1;

  const double cosine = mean_rank(identity_head(HeadKind::CosineBaseline, sc.dim), data.vocab_eval, data.tables, eo)
                            .mean_rank;

  auto warm_cfg = TrainConfig::defaults(Stage::Warmup);
  const auto warm = warmup(warm_cfg, data.coarse_train, data.tables, init_head(HeadKind::LinearBoth, sc.dim, 0, 0, 0));
  const auto warm_recall = recall_at_k(warm.state.head, data.coarse_test, data.tables, eo);

  auto fine_cfg = TrainConfig::defaults(Stage::Finetune);
  fine_cfg.lr = 1e-3;
  fine_cfg.margin = 0.05;
  fine_cfg.epochs = 10;
  const auto fine = finetune(fine_cfg, data.vocab_train, data.tables, warm.state.head);
  const double tuned = mean_rank(fine.state.head, data.vocab_eval, data.tables, eo).mean_rank;
  const auto fine_recall = recall_at_k(fine.state.head, data.coarse_test, data.tables, eo);

  const double drop_i2t = warm_recall.at(warm_recall.i2t, 1) - fine_recall.at(fine_recall.i2t, 1);
  const double drop_t2i = warm_recall.at(warm_recall.t2i, 1) - fine_recall.at(fine_recall.t2i, 1);
  const double secs = seconds_since(t0);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "cosine %.3f, linear-both %.3f, R@1 drop I->T %.1f T->I %.1f points, %.1f s", cosine, tuned,
                drop_i2t, drop_t2i, secs);
  return {cosine >= 4.5 && tuned <= 1.5 && drop_i2t <= 10.0 && drop_t2i <= 10.0 && secs < 300.0, buf};
}

Outcome cli_determinism() {
  fgtest::TempDir dir("acceptance_cli");
  auto p = [&](const char* name) { return (dir / name).string(); };
  const std::string manifest = p("data/manifest.json");
  const std::vector<std::string> steps = {
      "synth --out " + p("data") + " --seed 7 --n-train 1000 --n-eval 200 --coarse-train 200 --coarse-test 50",
      "train --stage warmup --head linear-both --seed 7 --epochs 2 --manifest " + manifest + " --out " + p("warm.fgck"),
      "train --stage finetune --from " + p("warm.fgck") + " --lr 1e-3 --epochs 2 --manifest " + manifest + " --out " +
          p("fine.fgck"),
      "eval --manifest " + manifest + " --checkpoint " + p("fine.fgck") + " --out " + p("report.json"),
  };
  const std::vector<std::string> outputs = {"data/images.fgeb", "data/texts.fgeb", "data/manifest.json",
                                            "warm.fgck",        "fine.fgck",       "report.json"};
  auto run_all = [&](std::vector<std::string>& bytes) -> std::string {
    for (const auto& s : steps) {
      const auto r = fgtest::run_cli(s);
      if (r.code != 0) return "step failed (" + std::to_string(r.code) + "): " + s;
    }
    for (const auto& o : outputs) bytes.push_back(binary::read_file(dir / o));
    return {};
  };
  std::vector<std::string> first, second;
  if (auto e = run_all(first); !e.empty()) return {false, e};
  for (const auto& o : outputs) std::filesystem::remove(dir / o);
  if (auto e = run_all(second); !e.empty()) return {false, e};
  std::string differing;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    if (first[i] != second[i]) differing += " " + outputs[i];
  return {differing.empty(), differing.empty() ? "6 artifacts byte-identical across two runs"
                                               : "differing:" + differing};
}

Outcome format_round_trip() {
  Rng rng(17);
  fgtest::TempDir dir("acceptance_fgeb");
  std::size_t failures = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = t == 1 ? 1 : 1 + rng.below(40);
    const std::size_t n = t == 0 ? 0 : rng.below(60);
    EmbeddingTable table(d);
    for (std::size_t i = 0; i < n; ++i) {
      std::string id(1 + rng.below(24), ' ');
      for (char& c : id) c = static_cast<char>(33 + rng.below(94));
      if (table.find(id)) continue;
      table.insert(id, fgtest::random_vector(rng, d));
    }
    const auto path = dir / ("t" + std::to_string(t) + ".fgeb");
    write_table(table, path);
    const auto first = binary::read_file(path);
    const auto back = read_table(path);
    write_table(back, path);
    failures += !(back == table) || binary::read_file(path) != first;
  }
  return {failures == 0, std::to_string(100 - failures) + "/100 tables round-trip byte-identical"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient-correctness", gradient_correctness}, {"loss-oracle-equivalence", loss_oracles},
      {"reduction-identity", reduction_identity},     {"metric-oracles", metric_oracles},
      {"synthetic-recovery", synthetic_recovery},     {"determinism", cli_determinism},
      {"format-round-trip", format_round_trip},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed ? 1 : 0;
}
