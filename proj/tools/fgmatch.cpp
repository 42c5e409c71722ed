// SPDX-License-Identifier: Apache-2.0
//
// fgmatch: synth | train | eval.
// Exit codes: 0 success, 1 runtime or data error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fgmatch/fgmatch.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Raised while turning flags into a run configuration; always exit 2.
struct FlagError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
  return fgmatch::detail::parse_json(fgmatch::binary::read_file(path), path.string());
}

template <class T>
void take(const json& cfg, const char* key, T& dst) {
  if (!cfg.contains(key)) return;
  try {
    dst = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FlagError(std::string("config key '") + key + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// synth

struct SynthFlags {
  fgmatch::SynthConfig config;
  std::string out;
};

void add_synth(CLI::App& app, SynthFlags& f) {
  auto& c = f.config;
  app.add_option("--out", f.out, "Output directory")->required();
  app.add_option("--dim", c.dim, "Embedding dimension")->capture_default_str();
  app.add_option("--negatives", c.n_negatives, "Negatives per vocabulary item")->capture_default_str();
  app.add_option("--seed", c.seed, "Generator seed")->capture_default_str();
  app.add_option("--epsilon", c.epsilon, "Attribute scale")->capture_default_str();
  app.add_option("--noise", c.noise, "Expected norm of the isotropic noise")->capture_default_str();
  app.add_option("--coarse-noise", c.coarse_noise, "Expected norm of the category-subspace noise")
      ->capture_default_str();
  app.add_option("--categories", c.n_categories)->capture_default_str();
  app.add_option("--attributes", c.n_attributes)->capture_default_str();
  app.add_option("--n-train", c.n_train, "Vocabulary items in the train split")->capture_default_str();
  app.add_option("--n-eval", c.n_eval, "Vocabulary items in the test split")->capture_default_str();
  app.add_option("--coarse-train", c.n_coarse_train, "Coarse images in the train split")->capture_default_str();
  app.add_option("--coarse-test", c.n_coarse_test, "Coarse images in the test split")->capture_default_str();
  app.add_option("--captions-per-image", c.captions_per_image)->capture_default_str();
}

int run_synth(const SynthFlags& f) {
  try {
    f.config.validate();
  } catch (const fgmatch::UsageError& e) {
    throw FlagError(e.what());
  }
  const auto data = fgmatch::generate(f.config);
  for (const auto& p : fgmatch::write_synth(data, f.config, f.out)) std::cout << p.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  std::string stage, head, manifest, from, resume, out, log, config_file, benchmark;
  double lr = 0, margin = 0;
  std::size_t epochs = 0, batch_size = 0, hidden = 512, heads = 64, checkpoint_every = 0;
  std::uint64_t seed = 0;
  bool no_normalize = false;
  CLI::App* app = nullptr;

  bool given(const char* name) const { return app->get_option(name)->count() > 0; }
};

void add_train(CLI::App& app, TrainFlags& f) {
  f.app = &app;
  app.add_option("--stage", f.stage, "warmup | finetune")->required();
  app.add_option("--manifest", f.manifest, "Dataset manifest")->required();
  app.add_option("--out", f.out, "Checkpoint path")->required();
  app.add_option("--head", f.head, "Head kind: " + fgmatch::valid_head_names());
  app.add_option("--from", f.from, "Initialize parameters from a checkpoint");
  app.add_option("--resume", f.resume, "Continue an interrupted run of the same stage");
  app.add_option("--config", f.config_file, "JSON config; flags override its values");
  app.add_option("--seed", f.seed, "Seed for initialization and batch order");
  app.add_option("--lr", f.lr);
  app.add_option("--epochs", f.epochs);
  app.add_option("--margin", f.margin);
  app.add_option("--batch-size", f.batch_size);
  app.add_option("--hidden", f.hidden, "MLP hidden width")->capture_default_str();
  app.add_option("--heads", f.heads, "Attention heads")->capture_default_str();
  app.add_option("--checkpoint-every", f.checkpoint_every, "Save --out every N epochs");
  app.add_option("--log", f.log, "Line-delimited JSON log (default: <out>.log.jsonl)");
  app.add_option("--benchmark", f.benchmark, "Fine-tune vocabulary to use when the manifest has several");
  app.add_flag("--no-normalize", f.no_normalize, "Use embeddings without L2 normalization");
  app.get_option("--from")->excludes(app.get_option("--resume"));
}

struct TrainPlan {
  fgmatch::TrainConfig config;
  std::optional<fgmatch::HeadKind> kind;
  std::size_t hidden = 0, heads = 0;
};

/// Defaults, then the resumed run's config, then --config, then flags.
TrainPlan resolve_train(const TrainFlags& f, const json* resumed) {
  TrainPlan p;
  fgmatch::Stage stage;
  try {
    stage = fgmatch::parse_stage(f.stage);
    if (!f.head.empty()) p.kind = fgmatch::parse_head_kind(f.head);
  } catch (const fgmatch::UsageError& e) {
    throw FlagError(e.what());
  }
  auto& c = p.config;
  c = fgmatch::TrainConfig::defaults(stage);
  p.hidden = f.hidden;
  p.heads = f.heads;
  auto apply = [&](const json& j) {
    take(j, "lr", c.lr);
    take(j, "epochs", c.epochs);
    take(j, "margin", c.margin);
    take(j, "batch_size", c.batch_size);
    take(j, "seed", c.seed);
    take(j, "normalize_inputs", c.normalize_inputs);
    take(j, "checkpoint_every", c.checkpoint_every);
    take(j, "hidden", p.hidden);
    take(j, "heads", p.heads);
    if (j.contains("head") && !p.kind) {
      try {
        p.kind = fgmatch::parse_head_kind(j.at("head").get<std::string>());
      } catch (const std::exception& e) {
        throw FlagError(e.what());
      }
    }
  };
  if (resumed && resumed->contains("train")) apply(resumed->at("train"));
  if (!f.config_file.empty()) {
    json j;
    try {
      j = read_json_file(f.config_file);
    } catch (const fgmatch::Error& e) {
      throw FlagError(e.what());
    }
    if (!j.is_object()) throw FlagError(f.config_file + ": expected a JSON object");
    apply(j);
  }
  if (f.given("--lr")) c.lr = f.lr;
  if (f.given("--epochs")) c.epochs = f.epochs;
  if (f.given("--margin")) c.margin = f.margin;
  if (f.given("--batch-size")) c.batch_size = f.batch_size;
  if (f.given("--seed")) c.seed = f.seed;
  if (f.given("--checkpoint-every")) c.checkpoint_every = f.checkpoint_every;
  if (f.no_normalize) c.normalize_inputs = false;
  c.checkpoint_path = f.out;
  try {
    c.validate();
  } catch (const fgmatch::UsageError& e) {
    throw FlagError(e.what());
  }
  if (p.kind && !fgmatch::is_trainable(*p.kind)) throw FlagError("head 'cosine' has no trainable parameters");
  if (!p.kind && f.from.empty() && f.resume.empty()) throw FlagError("train: --head is required without --from/--resume");
  return p;
}

int run_train(const TrainFlags& f) {
  std::optional<fgmatch::Checkpoint> resumed;
  if (!f.resume.empty()) resumed = fgmatch::load_checkpoint(f.resume);
  const TrainPlan plan = resolve_train(f, resumed ? &resumed->config : nullptr);
  const auto& config = plan.config;

  const auto manifest = fgmatch::read_manifest(f.manifest);
  const auto tables = fgmatch::load_tables(manifest);

  fgmatch::TrainState state;
  json init = nullptr;
  if (resumed) {
    if (plan.kind && *plan.kind != resumed->head.kind()) {
      throw fgmatch::LoadError(fgmatch::LoadErrorKind::KindMismatch,
                               f.resume + ": checkpoint holds head '" + fgmatch::head_name(resumed->head.kind()) +
                                   "', not '" + fgmatch::head_name(*plan.kind) + "'");
    }
    if (resumed->stage != config.stage) {
      throw fgmatch::Error(f.resume + ": checkpoint is from stage '" + fgmatch::to_string(resumed->stage) +
                           "', cannot resume as '" + fgmatch::to_string(config.stage) + "'");
    }
    if (!resumed->optimizer) throw fgmatch::Error(f.resume + ": checkpoint has no optimizer state");
    state = {resumed->head, *resumed->optimizer, resumed->epochs_done};
    init = {{"resume", f.resume}};
  } else if (!f.from.empty()) {
    auto ck = fgmatch::load_checkpoint(f.from, plan.kind);
    state = fgmatch::TrainState::fresh(std::move(ck.head), config);
    init = {{"from", f.from}};
  } else {
    state = fgmatch::TrainState::fresh(fgmatch::init_head(*plan.kind, manifest.dim, plan.hidden, plan.heads, config.seed),
                                       config);
    init = {{"seed", config.seed}};
  }
  if (!fgmatch::is_trainable(state.head.kind())) throw fgmatch::Error("head 'cosine' has no trainable parameters");

  const json run_config = {{"head", fgmatch::head_name(state.head.kind())},
                           {"hidden", state.head.shape.hidden},
                           {"heads", state.head.shape.num_heads},
                           {"dim", state.head.dim()},
                           {"manifest", f.manifest},
                           {"benchmark", f.benchmark},
                           {"init", init},
                           {"train", config.to_json()}};

  const fs::path log_path = f.log.empty() ? fs::path(f.out + ".log.jsonl") : fs::path(f.log);
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  if (fs::path(f.out).has_parent_path()) fs::create_directories(fs::path(f.out).parent_path());
  std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw fgmatch::LoadError(fgmatch::LoadErrorKind::Io, log_path.string() + ": cannot open log");
  log << json{{"event", "start"}, {"config", run_config}}.dump() << "\n";

  auto on_epoch = [&](const fgmatch::EpochRecord& rec, const fgmatch::TrainState&) {
    log << json{{"epoch", rec.epoch},
                {"stage", fgmatch::to_string(rec.stage)},
                {"mean_loss", rec.mean_loss},
                {"steps", rec.steps},
                {"seconds", rec.seconds}}
               .dump()
        << "\n"
        << std::flush;
    std::fprintf(stderr, "[%s] epoch %zu/%zu  mean loss %.6f\n", fgmatch::to_string(rec.stage), rec.epoch,
                 config.epochs, rec.mean_loss);
  };

  fgmatch::TrainResult result;
  // Intermediate checkpoints go through the trainer; their config lacks the run context.
  fgmatch::TrainConfig loop_config = config;
  loop_config.checkpoint_every = 0;
  auto save = [&](const fgmatch::TrainState& s) {
    fgmatch::save_checkpoint({s.head, s.optimizer, config.stage, static_cast<std::uint32_t>(s.epochs_done), run_config},
                             f.out);
  };
  auto on_epoch_and_save = [&](const fgmatch::EpochRecord& rec, const fgmatch::TrainState& s) {
    on_epoch(rec, s);
    if (config.checkpoint_every && s.epochs_done % config.checkpoint_every == 0) save(s);
  };

  if (config.stage == fgmatch::Stage::Warmup) {
    if (!fgmatch::has_coarse(manifest, fgmatch::Split::Train)) {
      throw fgmatch::Error(f.manifest + ": no coarse pairs for split 'train'");
    }
    const auto coarse = fgmatch::load_coarse(manifest, tables, fgmatch::Split::Train);
    result = fgmatch::warmup(loop_config, coarse, tables, std::move(state), on_epoch_and_save);
  } else {
    fgmatch::VocabDataset vocab;
    if (!f.benchmark.empty()) {
      vocab = fgmatch::load_vocab(manifest, tables, f.benchmark, fgmatch::Split::Train);
    } else {
      auto all = fgmatch::load_vocab(manifest, tables, fgmatch::Split::Train);
      if (all.empty()) throw fgmatch::Error(f.manifest + ": no vocabulary dataset for split 'train'");
      if (all.size() > 1) throw FlagError("manifest has several train vocabularies; pick one with --benchmark");
      vocab = std::move(all.front());
    }
    result = fgmatch::finetune(loop_config, vocab, tables, std::move(state), on_epoch_and_save);
  }
  save(result.state);
  log << json{{"event", "done"}, {"checkpoint", f.out}}.dump() << "\n";
  std::cout << f.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalFlags {
  std::string manifest, checkpoint, head, baseline, out, split = "test", benchmark;
  bool no_normalize = false;
};

void add_eval(CLI::App& app, EvalFlags& f) {
  app.add_option("--manifest", f.manifest, "Dataset manifest")->required();
  app.add_option("--checkpoint", f.checkpoint, "Trained head");
  app.add_option("--head", f.head, "Head kind; 'cosine' needs no checkpoint");
  app.add_option("--baseline", f.baseline, "Report to compute deltas against");
  app.add_option("--out", f.out, "Write the JSON report here");
  app.add_option("--split", f.split, "Split to evaluate")->capture_default_str();
  app.add_option("--benchmark", f.benchmark, "Only this vocabulary benchmark");
  app.add_flag("--no-normalize", f.no_normalize, "Use embeddings without L2 normalization");
}

int run_eval(const EvalFlags& f) {
  fgmatch::Split split;
  std::optional<fgmatch::HeadKind> kind;
  try {
    split = fgmatch::parse_split(f.split);
    if (!f.head.empty()) kind = fgmatch::parse_head_kind(f.head);
  } catch (const fgmatch::UsageError& e) {
    throw FlagError(e.what());
  }
  if (f.checkpoint.empty() && kind != fgmatch::HeadKind::CosineBaseline) {
    throw FlagError("eval: --checkpoint is required unless --head cosine");
  }

  const auto manifest = fgmatch::read_manifest(f.manifest);
  fgmatch::HeadParams head;
  json trained = nullptr;
  bool normalize = true;
  if (!f.checkpoint.empty()) {
    auto ck = fgmatch::load_checkpoint(f.checkpoint, kind);
    head = std::move(ck.head);
    trained = ck.config;
    if (trained.contains("train") && trained["train"].contains("normalize_inputs")) {
      normalize = trained["train"]["normalize_inputs"].get<bool>();
    }
  } else {
    head = fgmatch::identity_head(fgmatch::HeadKind::CosineBaseline, manifest.dim);
  }
  if (f.no_normalize) normalize = false;
  if (head.dim() != manifest.dim) {
    throw fgmatch::Error("head dimension " + std::to_string(head.dim()) + " does not match manifest dimension " +
                         std::to_string(manifest.dim));
  }

  const auto tables = fgmatch::load_tables(manifest);
  std::vector<fgmatch::VocabDataset> vocab;
  if (!f.benchmark.empty()) {
    vocab.push_back(fgmatch::load_vocab(manifest, tables, f.benchmark, split));
  } else {
    vocab = fgmatch::load_vocab(manifest, tables, split);
  }
  std::optional<fgmatch::CoarsePairs> coarse;
  if (f.benchmark.empty() && fgmatch::has_coarse(manifest, split)) {
    coarse = fgmatch::load_coarse(manifest, tables, split);
  }
  for (const auto& v : vocab) {
    if (v.items.empty()) throw fgmatch::Error("vocabulary '" + v.benchmark + "' is empty");
  }
  if (coarse && coarse->items.empty()) throw fgmatch::Error("coarse pairs for split '" + f.split + "' are empty");
  if (vocab.empty() && !coarse) throw fgmatch::Error(f.manifest + ": nothing to evaluate for split '" + f.split + "'");

  fgmatch::EvalOptions options;
  options.normalize_inputs = normalize;
  options.threads = fgmatch::default_threads();
  auto report = fgmatch::evaluate(head, vocab, coarse ? &*coarse : nullptr, tables, options);
  std::vector<std::string> names;
  for (const auto& v : vocab) names.push_back(v.benchmark);
  report.config = {{"command", "eval"},
                   {"head", fgmatch::head_name(head.kind())},
                   {"checkpoint", f.checkpoint.empty() ? json(nullptr) : json(f.checkpoint)},
                   {"trained", trained},
                   {"manifest", f.manifest},
                   {"split", f.split},
                   {"benchmarks", names},
                   {"normalize_inputs", normalize},
                   {"ks", options.ks}};
  report.config_digest = fgmatch::config_digest(report.config);

  std::optional<fgmatch::EvalReport> baseline;
  if (!f.baseline.empty()) {
    baseline = fgmatch::read_report(f.baseline);
    try {
      fgmatch::attach_deltas(report, *baseline);
    } catch (const fgmatch::UsageError& e) {
      throw fgmatch::Error(e.what());
    }
  }
  if (!f.out.empty()) {
    if (fs::path(f.out).has_parent_path()) fs::create_directories(fs::path(f.out).parent_path());
    fgmatch::write_report(report, f.out);
  }
  std::cout << fgmatch::render_table(report, baseline ? &*baseline : nullptr);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned similarity heads over frozen image/text embeddings"};
  app.require_subcommand(1);
  SynthFlags synth;
  TrainFlags train;
  EvalFlags eval;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  auto* train_cmd = app.add_subcommand("train", "Train a head (warm-up or fine-tune stage)");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a head and write a report");
  add_synth(*synth_cmd, synth);
  add_train(*train_cmd, train);
  add_eval(*eval_cmd, eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    for (const auto* sub : {synth_cmd, train_cmd, eval_cmd}) {
      if (sub->parsed()) std::cerr << sub->help();
    }
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train);
    return run_eval(eval);
  } catch (const FlagError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}
