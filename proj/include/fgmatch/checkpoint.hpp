// SPDX-License-Identifier: Apache-2.0
//
// Head checkpoint container. Little-endian, same conventions as FGEB:
//   "FGCK" | u32 version | u32 kind | u32 dim | u32 hidden | u32 heads
//   u32 n_blocks, n_blocks x { u16 name_len | name | u32 rows | u32 cols | rows*cols f32 }
//   u8 has_optimizer
//     [u64 step | f64 lr | f64 beta1 | f64 beta2 | f64 eps | per block: n f64 m, n f64 v]
//   u8 stage (0 none, 1 warmup, 2 finetune) | u32 epochs_done
//   u32 config_len | config JSON (UTF-8)
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "fgmatch/adam.hpp"
#include "fgmatch/binary_io.hpp"
#include "fgmatch/errors.hpp"
#include "fgmatch/heads.hpp"
#include "json.hpp"

namespace fgmatch {

inline constexpr char kCheckpointMagic[4] = {'F', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Stage : std::uint8_t { None = 0, Warmup = 1, Finetune = 2 };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::None: return "none";
    case Stage::Warmup: return "warmup";
    case Stage::Finetune: return "finetune";
  }
  return "?";
}

inline Stage parse_stage(std::string_view s) {
  if (s == "warmup") return Stage::Warmup;
  if (s == "finetune") return Stage::Finetune;
  throw UsageError("unknown stage '" + std::string(s) + "' (expected warmup|finetune)");
}

struct Checkpoint {
  HeadParams head;
  std::optional<AdamState> optimizer;
  Stage stage = Stage::None;
  std::uint32_t epochs_done = 0;
  nlohmann::json config = nlohmann::json::object();
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  check_layout(ck.head);
  std::string out;
  out.append(kCheckpointMagic, 4);
  binary::put_u32(out, kCheckpointVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(ck.head.kind()));
  binary::put_u32(out, static_cast<std::uint32_t>(ck.head.shape.dim));
  binary::put_u32(out, static_cast<std::uint32_t>(ck.head.shape.hidden));
  binary::put_u32(out, static_cast<std::uint32_t>(ck.head.shape.num_heads));
  binary::put_u32(out, static_cast<std::uint32_t>(ck.head.blocks.size()));
  for (const auto& b : ck.head.blocks) {
    binary::put_u16(out, static_cast<std::uint16_t>(b.name.size()));
    out.append(b.name);
    binary::put_u32(out, static_cast<std::uint32_t>(b.value.rows()));
    binary::put_u32(out, static_cast<std::uint32_t>(b.value.cols()));
    for (float x : b.value.span()) binary::put_f32(out, x);
  }
  binary::put_u8(out, ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    const auto& s = *ck.optimizer;
    binary::put_u64(out, s.step);
    binary::put_f64(out, s.config.lr);
    binary::put_f64(out, s.config.beta1);
    binary::put_f64(out, s.config.beta2);
    binary::put_f64(out, s.config.eps);
    for (std::size_t b = 0; b < ck.head.blocks.size(); ++b) {
      for (double x : s.m.at(b)) binary::put_f64(out, x);
      for (double x : s.v.at(b)) binary::put_f64(out, x);
    }
  }
  binary::put_u8(out, static_cast<std::uint8_t>(ck.stage));
  binary::put_u32(out, ck.epochs_done);
  const std::string cfg = ck.config.dump();
  binary::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.append(cfg);
  return out;
}

/// Parses a checkpoint; when `expected` is set, a head of another kind is a
/// LoadError(KindMismatch).
inline Checkpoint parse_checkpoint(std::string_view bytes, const std::string& context = "checkpoint",
                                   std::optional<HeadKind> expected = std::nullopt) {
  binary::Reader in(bytes, context);
  if (in.take(4, "magic") != std::string_view(kCheckpointMagic, 4)) throw LoadError(LoadErrorKind::BadMagic, context);
  const auto version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw LoadError(LoadErrorKind::VersionMismatch, context + ": version " + std::to_string(version));
  }
  const auto kind_tag = in.u32("kind");
  if (kind_tag > static_cast<std::uint32_t>(HeadKind::Mha)) {
    throw LoadError(LoadErrorKind::Malformed, context + ": unknown head kind tag " + std::to_string(kind_tag));
  }
  const auto kind = static_cast<HeadKind>(kind_tag);
  if (expected && *expected != kind) {
    throw LoadError(LoadErrorKind::KindMismatch, context + ": checkpoint holds a '" + head_name(kind) +
                                                     "' head, expected '" + head_name(*expected) + "'");
  }
  Checkpoint ck;
  HeadShape shape{kind, in.u32("dim"), in.u32("hidden"), in.u32("heads")};
  try {
    ck.head.shape = canonical_shape(shape);
  } catch (const UsageError& e) {
    throw LoadError(LoadErrorKind::Malformed, context + ": " + e.what());
  }
  if (!(ck.head.shape == shape)) throw LoadError(LoadErrorKind::Malformed, context + ": inconsistent head shape");
  const auto layout = block_layout(ck.head.shape);
  const auto n_blocks = in.u32("block count");
  if (n_blocks != layout.size()) throw LoadError(LoadErrorKind::Malformed, context + ": unexpected block count");
  for (const auto& l : layout) {
    const auto len = in.u16("block name length");
    std::string name(in.take(len, "block name"));
    const auto rows = in.u32("rows");
    const auto cols = in.u32("cols");
    if (name != l.name || rows != l.rows || cols != l.cols) {
      throw LoadError(LoadErrorKind::Malformed, context + ": block '" + name + "' does not match the head layout");
    }
    std::vector<float> values(static_cast<std::size_t>(rows) * cols);
    for (auto& x : values) x = in.f32("parameters");
    try {
      ck.head.blocks.push_back({std::move(name), Matrix(rows, cols, std::move(values))});
    } catch (const DomainError&) {
      throw LoadError(LoadErrorKind::Malformed, context + ": non-finite parameter in block '" + l.name + "'");
    }
  }
  if (in.u8("optimizer flag")) {
    AdamState s;
    s.step = in.u64("step");
    s.config.lr = in.f64("lr");
    s.config.beta1 = in.f64("beta1");
    s.config.beta2 = in.f64("beta2");
    s.config.eps = in.f64("eps");
    for (const auto& b : ck.head.blocks) {
      const std::size_t n = b.value.span().size();
      std::vector<double> m(n), v(n);
      for (auto& x : m) x = in.f64("first moment");
      for (auto& x : v) x = in.f64("second moment");
      s.m.push_back(std::move(m));
      s.v.push_back(std::move(v));
    }
    ck.optimizer = std::move(s);
  }
  const auto stage = in.u8("stage");
  if (stage > 2) throw LoadError(LoadErrorKind::Malformed, context + ": bad stage tag");
  ck.stage = static_cast<Stage>(stage);
  ck.epochs_done = in.u32("epochs");
  const auto cfg_len = in.u32("config length");
  const auto cfg = in.take(cfg_len, "config");
  try {
    ck.config = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::Malformed, context + ": config: " + e.what());
  }
  if (!in.at_end()) throw LoadError(LoadErrorKind::Malformed, context + ": trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  binary::write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<HeadKind> expected = std::nullopt) {
  return parse_checkpoint(binary::read_file(path), path.string(), expected);
}

}  // namespace fgmatch
