// SPDX-License-Identifier: Apache-2.0
//
// Fine-grained Mean Rank over per-object vocabularies and coarse Recall@k
// retrieval, collected into a report with the fine-grained mean rank next to
// image-to-text and text-to-image recall.
#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fgmatch/binary_io.hpp"
#include "fgmatch/embedstore.hpp"
#include "fgmatch/errors.hpp"
#include "fgmatch/heads.hpp"
#include "fgmatch/parallel.hpp"
#include "json.hpp"

namespace fgmatch {

/// 1-based position of the positive caption when the vocabulary is sorted by
/// descending score. Ties count against the positive.
inline std::size_t rank_positive(double positive, std::span<const double> negatives) {
  if (negatives.empty()) throw UsageError("rank_positive: need at least one negative");
  std::size_t rank = 1;
  for (double n : negatives) {
    if (n >= positive) ++rank;
  }
  return rank;
}

struct EvalOptions {
  bool normalize_inputs = true;
  std::size_t threads = 1;
  std::vector<std::size_t> ks = {1, 5, 10};
};

struct RankResult {
  std::string benchmark;
  std::size_t k = 0;  // vocabulary size, N + 1
  std::size_t n_items = 0;
  double mean_rank = 0.0;
  std::vector<std::size_t> ranks;
};

inline RankResult mean_rank(const HeadParams& head, const VocabDataset& vocab, const PreparedTables& prepared,
                            const EvalOptions& options = {}) {
  if (vocab.items.empty()) throw UsageError("mean_rank: dataset '" + vocab.benchmark + "' is empty");
  validate(vocab, prepared.tables());

  RankResult out{vocab.benchmark, vocab.vocab_size(), vocab.items.size(), 0.0, {}};
  out.ranks.assign(vocab.items.size(), 0);
  parallel_for(vocab.items.size(), options.threads, [&](std::size_t i) {
    const auto& item = vocab.items[i];
    std::vector<const Vector*> texts{&prepared.text(item.positive_id)};
    for (const auto& n : item.negative_ids) texts.push_back(&prepared.text(n));
    PairScorer<float> scorer(head, {&prepared.image(item.image_id)}, std::move(texts));
    std::vector<double> negs(item.negative_ids.size());
    for (std::size_t k = 0; k < negs.size(); ++k) negs[k] = scorer.score(0, k + 1);
    out.ranks[i] = rank_positive(scorer.score(0, 0), negs);
  });
  double sum = 0.0;
  for (std::size_t r : out.ranks) sum += static_cast<double>(r);
  out.mean_rank = sum / static_cast<double>(out.ranks.size());
  return out;
}

inline RankResult mean_rank(const HeadParams& head, const VocabDataset& vocab, const DatasetTables& tables,
                            const EvalOptions& options = {}) {
  const PreparedTables prepared(tables, options.normalize_inputs);
  return mean_rank(head, vocab, prepared, options);
}

struct RetrievalResult {
  std::vector<std::size_t> ks;
  std::vector<double> i2t;  // percentages, aligned with ks
  std::vector<double> t2i;
  std::size_t n_images = 0;
  std::size_t n_captions = 0;

  double at(const std::vector<double>& v, std::size_t k) const {
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (ks[i] == k) return v[i];
    throw UsageError("recall not computed at k=" + std::to_string(k));
  }
};

namespace detail {

/// Number of candidates ranked strictly ahead of `target`: higher score, or
/// equal score and smaller id.
inline std::size_t ahead_of(std::span<const double> scores, std::span<const std::string* const> ids,
                            std::size_t target) {
  std::size_t ahead = 0;
  const double s = scores[target];
  const std::string& id = *ids[target];
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && *ids[j] < id)) ++ahead;
  }
  return ahead;
}

inline std::vector<double> to_percent(const std::vector<std::size_t>& hits, std::size_t n) {
  std::vector<double> out;
  for (std::size_t h : hits) out.push_back(100.0 * static_cast<double>(h) / static_cast<double>(n));
  return out;
}

}  // namespace detail

/// Recall@k in both directions. An image query hits when any of its captions
/// is in the top k; a caption query hits when its image is in the top k.
/// Equal scores are ordered by ascending id.
inline RetrievalResult recall_at_k(const HeadParams& head, const CoarsePairs& coarse, const PreparedTables& prepared,
                                   const EvalOptions& options = {}) {
  if (coarse.items.empty()) throw UsageError("recall_at_k: empty split");
  if (options.ks.empty()) throw UsageError("recall_at_k: no k values");
  for (std::size_t i = 0; i < options.ks.size(); ++i) {
    if (options.ks[i] == 0 || (i > 0 && options.ks[i] <= options.ks[i - 1])) {
      throw UsageError("recall_at_k: k values must be positive and strictly increasing");
    }
  }
  validate(coarse, prepared.tables());

  std::vector<const Vector*> images, captions;
  std::vector<const std::string*> image_ids, caption_ids;
  std::vector<std::size_t> caption_owner;
  std::vector<std::vector<std::size_t>> owned(coarse.items.size());
  for (std::size_t i = 0; i < coarse.items.size(); ++i) {
    const auto& item = coarse.items[i];
    images.push_back(&prepared.image(item.image_id));
    image_ids.push_back(&item.image_id);
    for (const auto& c : item.caption_ids) {
      owned[i].push_back(captions.size());
      captions.push_back(&prepared.text(c));
      caption_ids.push_back(&c);
      caption_owner.push_back(i);
    }
  }
  const PairScorer<float> scorer(head, images, captions);
  const std::size_t ni = images.size(), nc = captions.size();

  // Rank of the best-placed correct item for every query.
  std::vector<std::size_t> i2t_rank(ni), t2i_rank(nc);
  parallel_for(ni, options.threads, [&](std::size_t i) {
    std::vector<double> row(nc);
    for (std::size_t j = 0; j < nc; ++j) row[j] = scorer.score(i, j);
    std::size_t best = owned[i].front();
    for (std::size_t j : owned[i]) {
      if (row[j] > row[best] || (row[j] == row[best] && *caption_ids[j] < *caption_ids[best])) best = j;
    }
    i2t_rank[i] = detail::ahead_of(row, caption_ids, best);
  });
  parallel_for(nc, options.threads, [&](std::size_t j) {
    std::vector<double> col(ni);
    for (std::size_t i = 0; i < ni; ++i) col[i] = scorer.score(i, j);
    t2i_rank[j] = detail::ahead_of(col, image_ids, caption_owner[j]);
  });

  RetrievalResult out;
  out.ks = options.ks;
  out.n_images = ni;
  out.n_captions = nc;
  std::vector<std::size_t> hits_i2t(options.ks.size(), 0), hits_t2i(options.ks.size(), 0);
  for (std::size_t q = 0; q < options.ks.size(); ++q) {
    for (std::size_t r : i2t_rank) hits_i2t[q] += r < options.ks[q];
    for (std::size_t r : t2i_rank) hits_t2i[q] += r < options.ks[q];
  }
  out.i2t = detail::to_percent(hits_i2t, ni);
  out.t2i = detail::to_percent(hits_t2i, nc);
  return out;
}

inline RetrievalResult recall_at_k(const HeadParams& head, const CoarsePairs& coarse, const DatasetTables& tables,
                                   const EvalOptions& options = {}) {
  const PreparedTables prepared(tables, options.normalize_inputs);
  return recall_at_k(head, coarse, prepared, options);
}

// ---------------------------------------------------------------------------
// Reports

struct ReportDeltas {
  std::string baseline_head;
  std::map<std::string, double> mean_rank;  // per benchmark
  double mean_rank_avg = 0.0;
  std::vector<double> i2t, t2i;  // aligned with the retrieval ks
};

struct EvalReport {
  std::string head;
  nlohmann::json config = nlohmann::json::object();
  std::string config_digest;
  std::string dataset_digest;
  std::vector<RankResult> benchmarks;
  std::optional<RetrievalResult> retrieval;
  std::optional<ReportDeltas> deltas;

  /// Unweighted mean over benchmarks.
  double mean_rank_avg() const {
    if (benchmarks.empty()) return 0.0;
    double s = 0.0;
    for (const auto& b : benchmarks) s += b.mean_rank;
    return s / static_cast<double>(benchmarks.size());
  }
};

inline std::string config_digest(const nlohmann::json& config) {
  return binary::hex64(binary::fnv1a(config.dump()));
}

/// Digest of exactly the data an evaluation looked at.
inline std::string dataset_digest(const std::vector<VocabDataset>& vocab, const CoarsePairs* coarse,
                                  const DatasetTables& tables) {
  std::uint64_t h = binary::fnv1a(table_digest(tables.images));
  h = binary::fnv1a(table_digest(tables.texts), h);
  for (const auto& v : vocab) {
    h = binary::fnv1a(v.benchmark + "|" + to_string(v.split) + "|" + std::to_string(v.n_negatives), h);
    h = binary::fnv1a(to_json(v.items).dump(), h);
  }
  if (coarse) h = binary::fnv1a(std::string("coarse|") + to_string(coarse->split) + to_json(coarse->items).dump(), h);
  return binary::hex64(h);
}

/// Runs every vocabulary benchmark and (when given) coarse retrieval.
inline EvalReport evaluate(const HeadParams& head, const std::vector<VocabDataset>& vocab, const CoarsePairs* coarse,
                           const DatasetTables& tables, const EvalOptions& options = {}) {
  if (vocab.empty() && coarse == nullptr) throw UsageError("evaluate: nothing to evaluate");
  const PreparedTables prepared(tables, options.normalize_inputs);
  EvalReport r;
  r.head = head_name(head.kind());
  for (const auto& v : vocab) r.benchmarks.push_back(mean_rank(head, v, prepared, options));
  if (coarse) r.retrieval = recall_at_k(head, *coarse, prepared, options);
  r.dataset_digest = dataset_digest(vocab, coarse, tables);
  return r;
}

/// Attaches deltas (report minus baseline). Refuses baselines computed on
/// different data.
inline void attach_deltas(EvalReport& report, const EvalReport& baseline) {
  if (report.dataset_digest != baseline.dataset_digest) {
    throw UsageError("baseline report was computed on different datasets (digest " + baseline.dataset_digest +
                     " vs " + report.dataset_digest + ")");
  }
  ReportDeltas d;
  d.baseline_head = baseline.head;
  for (const auto& b : report.benchmarks) {
    for (const auto& o : baseline.benchmarks) {
      if (o.benchmark == b.benchmark) d.mean_rank[b.benchmark] = b.mean_rank - o.mean_rank;
    }
  }
  d.mean_rank_avg = report.mean_rank_avg() - baseline.mean_rank_avg();
  if (report.retrieval && baseline.retrieval && report.retrieval->ks == baseline.retrieval->ks) {
    for (std::size_t q = 0; q < report.retrieval->ks.size(); ++q) {
      d.i2t.push_back(report.retrieval->i2t[q] - baseline.retrieval->i2t[q]);
      d.t2i.push_back(report.retrieval->t2i[q] - baseline.retrieval->t2i[q]);
    }
  }
  report.deltas = std::move(d);
}

namespace detail {

inline nlohmann::json recall_json(const std::vector<std::size_t>& ks, const std::vector<double>& v) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t q = 0; q < ks.size(); ++q) j["r" + std::to_string(ks[q])] = v[q];
  return j;
}

inline std::vector<double> recall_from_json(const nlohmann::json& j, const std::vector<std::size_t>& ks) {
  std::vector<double> out;
  for (std::size_t k : ks) out.push_back(j.at("r" + std::to_string(k)).get<double>());
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["head"] = r.head;
  j["config_digest"] = r.config_digest;
  j["config"] = r.config;
  j["dataset_digest"] = r.dataset_digest;
  j["benchmarks"] = nlohmann::json::object();
  for (const auto& b : r.benchmarks) {
    j["benchmarks"][b.benchmark] = {{"mean_rank", b.mean_rank}, {"k", b.k}, {"n_items", b.n_items}};
  }
  j["benchmark_order"] = nlohmann::json::array();
  for (const auto& b : r.benchmarks) j["benchmark_order"].push_back(b.benchmark);
  j["mean_rank_avg"] = r.mean_rank_avg();
  if (r.retrieval) {
    const auto& t = *r.retrieval;
    j["retrieval"] = {{"i2t", detail::recall_json(t.ks, t.i2t)},
                      {"t2i", detail::recall_json(t.ks, t.t2i)},
                      {"ks", t.ks},
                      {"n_images", t.n_images},
                      {"n_captions", t.n_captions}};
  }
  if (r.deltas) {
    const auto& d = *r.deltas;
    nlohmann::json dj{{"baseline_head", d.baseline_head}, {"mean_rank_avg", d.mean_rank_avg}};
    dj["benchmarks"] = d.mean_rank;
    if (r.retrieval && !d.i2t.empty()) {
      dj["retrieval"] = {{"i2t", detail::recall_json(r.retrieval->ks, d.i2t)},
                         {"t2i", detail::recall_json(r.retrieval->ks, d.t2i)}};
    }
    j["deltas"] = dj;
  }
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.head = j.at("head").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    if (j.contains("config")) r.config = j.at("config");
    r.dataset_digest = j.at("dataset_digest").get<std::string>();
    std::vector<std::string> order;
    if (j.contains("benchmark_order")) {
      order = j.at("benchmark_order").get<std::vector<std::string>>();
    } else {
      for (const auto& [name, _] : j.at("benchmarks").items()) order.push_back(name);
    }
    for (const auto& name : order) {
      const auto& b = j.at("benchmarks").at(name);
      r.benchmarks.push_back({name, b.at("k").get<std::size_t>(), b.at("n_items").get<std::size_t>(),
                              b.at("mean_rank").get<double>(), {}});
    }
    if (j.contains("retrieval")) {
      RetrievalResult t;
      const auto& rj = j.at("retrieval");
      t.ks = rj.at("ks").get<std::vector<std::size_t>>();
      t.i2t = detail::recall_from_json(rj.at("i2t"), t.ks);
      t.t2i = detail::recall_from_json(rj.at("t2i"), t.ks);
      t.n_images = rj.at("n_images").get<std::size_t>();
      t.n_captions = rj.at("n_captions").get<std::size_t>();
      r.retrieval = std::move(t);
    }
    if (j.contains("deltas")) {
      const auto& dj = j.at("deltas");
      ReportDeltas d;
      d.baseline_head = dj.at("baseline_head").get<std::string>();
      d.mean_rank_avg = dj.at("mean_rank_avg").get<double>();
      d.mean_rank = dj.at("benchmarks").get<std::map<std::string, double>>();
      if (dj.contains("retrieval") && r.retrieval) {
        d.i2t = detail::recall_from_json(dj.at("retrieval").at("i2t"), r.retrieval->ks);
        d.t2i = detail::recall_from_json(dj.at("retrieval").at("t2i"), r.retrieval->ks);
      }
      r.deltas = std::move(d);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::Malformed, std::string("report: ") + e.what());
  }
}

inline EvalReport read_report(const std::filesystem::path& path) {
  return report_from_json(detail::parse_json(binary::read_file(path), path.string()));
}

inline void write_report(const EvalReport& r, const std::filesystem::path& path) {
  binary::write_file(path, to_json(r).dump(2) + "\n");
}

namespace detail {

inline std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

inline std::string with_delta(double value, const double* delta, const char* format, const char* delta_format) {
  std::string s = fmt(format, value);
  if (delta) s += " (" + fmt(delta_format, *delta) + ")";
  return s;
}

}  // namespace detail

/// Plain-text table: one row per report, fine-grained mean rank followed by
/// I->T and T->I recall. The report row carries parenthesized deltas when it
/// has them; the baseline (if given) is printed as the row above it.
inline std::string render_table(const EvalReport& report, const EvalReport* baseline = nullptr) {
  constexpr std::size_t name_w = 26, rank_w = 16, rec_w = 14;
  const std::vector<std::size_t> ks = report.retrieval ? report.retrieval->ks : std::vector<std::size_t>{};
  std::string out;
  auto line = [&](const std::string& s) {
    std::string t = s;
    while (!t.empty() && t.back() == ' ') t.pop_back();
    out += t + "\n";
  };
  std::string h1 = detail::pad("", name_w) + detail::pad("Fine-grained", rank_w);
  if (!ks.empty()) h1 += "Coarse retrieval";
  line(h1);
  std::string h2 = detail::pad("", name_w) + detail::pad("", rank_w);
  if (!ks.empty()) h2 += detail::pad("I->T", rec_w * ks.size()) + "T->I";
  line(h2);
  std::string h3 = detail::pad("", name_w) + detail::pad("Mean Rank (v)", rank_w);
  for (int dir = 0; dir < 2 && !ks.empty(); ++dir)
    for (std::size_t k : ks) h3 += detail::pad("R@" + std::to_string(k) + " (^)", rec_w);
  line(h3);
  line(std::string(name_w + rank_w + 2 * rec_w * ks.size(), '-'));

  auto row = [&](const EvalReport& r, const std::string& label, const ReportDeltas* d) {
    std::string s = detail::pad(label, name_w);
    s += detail::pad(r.benchmarks.empty() ? std::string("-")
                                          : detail::with_delta(r.mean_rank_avg(), d ? &d->mean_rank_avg : nullptr,
                                                               "%.2f", "%+.2f"),
                     rank_w);
    if (!ks.empty()) {
      const bool has = r.retrieval && r.retrieval->ks == ks;
      const bool dd = d && !d->i2t.empty();
      for (int dir = 0; dir < 2; ++dir) {
        for (std::size_t q = 0; q < ks.size(); ++q) {
          if (!has) {
            s += detail::pad("-", rec_w);
            continue;
          }
          const double v = dir == 0 ? r.retrieval->i2t[q] : r.retrieval->t2i[q];
          const double* dv = dd ? &(dir == 0 ? d->i2t : d->t2i)[q] : nullptr;
          s += detail::pad(detail::with_delta(v, dv, "%.1f", "%+.1f"), rec_w);
        }
      }
    }
    line(s);
  };
  if (baseline) row(*baseline, baseline->head + " (baseline)", nullptr);
  row(report, report.head, report.deltas ? &*report.deltas : nullptr);

  if (!report.benchmarks.empty()) {
    line("");
    line("Per-benchmark mean rank:");
    for (const auto& b : report.benchmarks) {
      const double* d = nullptr;
      if (report.deltas) {
        auto it = report.deltas->mean_rank.find(b.benchmark);
        if (it != report.deltas->mean_rank.end()) d = &it->second;
      }
      line("  " + detail::pad(b.benchmark, 14) + detail::pad(detail::with_delta(b.mean_rank, d, "%.2f", "%+.2f"), 18) +
           "K=" + std::to_string(b.k) + "  n=" + std::to_string(b.n_items));
    }
  }
  return out;
}

}  // namespace fgmatch
