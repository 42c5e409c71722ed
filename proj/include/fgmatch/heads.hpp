// SPDX-License-Identifier: Apache-2.0
//
// Learned similarity functions S(v, t) over frozen image/text embeddings.
//
//   cosine         S = cos(v, t)
//   linear-both    S = cos(Wv v + bv, Wt t + bt)
//   linear-text    S = cos(v, Wt t + bt)
//   linear-visual  S = cos(Wv v + bv, t)
//   mlp            S = cos(MLPv(v), MLPt(t)),  MLP(x) = W2 tanh(W1 x + b1) + b2
//   mha            S = sigmoid(MHA([cls, v, t])[0][0])
//
// The attention head is a single multi-head self-attention layer over the
// three-token sequence with learned query/key/value/output projections and no
// residual, normalization or feed-forward block. Only the CLS output row is
// consumed, so only the CLS query is ever formed.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fgmatch/errors.hpp"
#include "fgmatch/numcore.hpp"
#include "fgmatch/random.hpp"

namespace fgmatch {

enum class HeadKind : std::uint32_t {
  CosineBaseline = 0,
  LinearBoth = 1,
  LinearTextOnly = 2,
  LinearVisualOnly = 3,
  Mlp = 4,
  Mha = 5,
};

inline constexpr HeadKind kAllHeadKinds[] = {HeadKind::CosineBaseline,   HeadKind::LinearBoth, HeadKind::LinearTextOnly,
                                             HeadKind::LinearVisualOnly, HeadKind::Mlp,        HeadKind::Mha};

inline const char* head_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::CosineBaseline: return "cosine";
    case HeadKind::LinearBoth: return "linear-both";
    case HeadKind::LinearTextOnly: return "linear-text";
    case HeadKind::LinearVisualOnly: return "linear-visual";
    case HeadKind::Mlp: return "mlp";
    case HeadKind::Mha: return "mha";
  }
  return "?";
}

inline std::string valid_head_names() {
  std::string out;
  for (HeadKind k : kAllHeadKinds) {
    if (!out.empty()) out += ", ";
    out += head_name(k);
  }
  return out;
}

inline HeadKind parse_head_kind(std::string_view name) {
  for (HeadKind k : kAllHeadKinds) {
    if (name == head_name(k)) return k;
  }
  throw UsageError("unknown head '" + std::string(name) + "' (valid: " + valid_head_names() + ")");
}

inline bool is_trainable(HeadKind kind) { return kind != HeadKind::CosineBaseline; }

struct HeadShape {
  HeadKind kind = HeadKind::CosineBaseline;
  std::size_t dim = 0;
  std::size_t hidden = 0;     // mlp only
  std::size_t num_heads = 0;  // mha only

  std::size_t head_width() const noexcept { return num_heads ? dim / num_heads : 0; }

  friend bool operator==(const HeadShape&, const HeadShape&) = default;
};

/// Checks dimensions and fills the fields irrelevant to the kind with 0.
inline HeadShape canonical_shape(HeadShape s) {
  if (s.dim == 0) throw UsageError("head dim must be positive");
  if (s.kind == HeadKind::Mlp) {
    if (s.hidden == 0) throw UsageError("mlp hidden width must be positive");
  } else {
    s.hidden = 0;
  }
  if (s.kind == HeadKind::Mha) {
    if (s.num_heads == 0) throw UsageError("mha head count must be positive");
    if (s.dim % s.num_heads != 0) {
      throw UsageError("mha: dim " + std::to_string(s.dim) + " is not divisible by " + std::to_string(s.num_heads) +
                       " heads");
    }
  } else {
    s.num_heads = 0;
  }
  return s;
}

struct BlockLayout {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

/// Ordered parameter blocks of a head. Biases and the CLS token are rows x 1.
inline std::vector<BlockLayout> block_layout(const HeadShape& s) {
  const std::size_t d = s.dim, h = s.hidden;
  std::vector<BlockLayout> out;
  auto linear = [&](const std::string& side) {
    out.push_back({side + ".weight", d, d});
    out.push_back({side + ".bias", d, 1});
  };
  auto mlp = [&](const std::string& side) {
    out.push_back({side + ".fc1.weight", h, d});
    out.push_back({side + ".fc1.bias", h, 1});
    out.push_back({side + ".fc2.weight", d, h});
    out.push_back({side + ".fc2.bias", d, 1});
  };
  switch (s.kind) {
    case HeadKind::CosineBaseline: break;
    case HeadKind::LinearBoth: linear("visual"); linear("text"); break;
    case HeadKind::LinearTextOnly: linear("text"); break;
    case HeadKind::LinearVisualOnly: linear("visual"); break;
    case HeadKind::Mlp: mlp("visual"); mlp("text"); break;
    case HeadKind::Mha:
      out.push_back({"cls", d, 1});
      for (const char* p : {"query", "key", "value", "out"}) {
        out.push_back({std::string(p) + ".weight", d, d});
        out.push_back({std::string(p) + ".bias", d, 1});
      }
      break;
  }
  return out;
}

template <class Real>
struct ParamBlock {
  std::string name;
  BasicMatrix<Real> value;

  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

/// Per-block gradients, flattened in the same row-major layout as the block.
using Gradients = std::vector<std::vector<double>>;

template <class Real>
struct BasicHeadParams {
  HeadShape shape;
  std::vector<ParamBlock<Real>> blocks;

  HeadKind kind() const noexcept { return shape.kind; }
  std::size_t dim() const noexcept { return shape.dim; }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      if (blocks[i].name == name) return i;
    throw UsageError("head has no parameter block '" + std::string(name) + "'");
  }
  const BasicMatrix<Real>& block(std::string_view name) const { return blocks[index_of(name)].value; }
  BasicMatrix<Real>& block(std::string_view name) { return blocks[index_of(name)].value; }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.value.span().size();
    return n;
  }

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto& b : blocks) g.emplace_back(b.value.span().size(), 0.0);
    return g;
  }

  template <class To>
  BasicHeadParams<To> cast() const {
    BasicHeadParams<To> out{shape, {}};
    for (const auto& b : blocks) {
      std::vector<To> v(b.value.span().begin(), b.value.span().end());
      out.blocks.push_back({b.name, BasicMatrix<To>(b.value.rows(), b.value.cols(), std::move(v))});
    }
    return out;
  }

  friend bool operator==(const BasicHeadParams&, const BasicHeadParams&) = default;
};

using HeadParams = BasicHeadParams<float>;

/// Throws unless `params` has exactly the blocks its shape requires.
template <class Real>
void check_layout(const BasicHeadParams<Real>& params) {
  const auto layout = block_layout(params.shape);
  if (layout.size() != params.blocks.size()) throw UsageError("head parameter block count does not match its kind");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& b = params.blocks[i];
    if (b.name != layout[i].name || b.value.rows() != layout[i].rows || b.value.cols() != layout[i].cols) {
      throw UsageError("head parameter block '" + b.name + "' does not match the expected layout");
    }
  }
}

/// Deterministic initialization. Linear projections start at identity plus
/// N(0, 0.01^2) noise with zero bias; MLP and attention weights are uniform in
/// +-1/sqrt(fan_in) with zero biases; the CLS token is uniform in +-1/sqrt(d).
template <class Real = float>
BasicHeadParams<Real> init_head(HeadKind kind, std::size_t dim, std::size_t hidden, std::size_t num_heads,
                                std::uint64_t seed) {
  const HeadShape shape = canonical_shape({kind, dim, hidden, num_heads});
  BasicHeadParams<Real> p{shape, {}};
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
  for (const auto& l : block_layout(shape)) {
    BasicMatrix<Real> m(l.rows, l.cols);
    const bool is_bias = l.name.ends_with(".bias");
    if (kind == HeadKind::LinearBoth || kind == HeadKind::LinearTextOnly || kind == HeadKind::LinearVisualOnly) {
      if (!is_bias) {
        for (std::size_t r = 0; r < l.rows; ++r)
          for (std::size_t c = 0; c < l.cols; ++c)
            m(r, c) = static_cast<Real>((r == c ? 1.0 : 0.0) + 0.01 * rng.normal());
      }
    } else if (!is_bias) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.name == "cls" ? dim : l.cols));
      for (Real& x : m.span()) x = static_cast<Real>(rng.uniform(-bound, bound));
    }
    p.blocks.push_back({l.name, std::move(m)});
  }
  return p;
}

/// Head of the given kind whose every projection is exactly the identity with
/// zero bias (and, for mlp/mha, all-zero parameters).
template <class Real = float>
BasicHeadParams<Real> identity_head(HeadKind kind, std::size_t dim, std::size_t hidden = 0,
                                    std::size_t num_heads = 0) {
  const HeadShape shape = canonical_shape({kind, dim, hidden, num_heads});
  BasicHeadParams<Real> p{shape, {}};
  const bool linear = kind == HeadKind::LinearBoth || kind == HeadKind::LinearTextOnly ||
                      kind == HeadKind::LinearVisualOnly;
  for (const auto& l : block_layout(shape)) {
    p.blocks.push_back({l.name, linear && l.cols == l.rows ? BasicMatrix<Real>::identity(l.rows)
                                                           : BasicMatrix<Real>(l.rows, l.cols)});
  }
  return p;
}

// ---------------------------------------------------------------------------

/// Scores (visual i, text j) pairs over a fixed set of inputs. Each input
/// vector is encoded once at construction; per-pair work is a cosine (or, for
/// mha, one three-token attention read-out). Scoring is const and safe to
/// call concurrently. Gradient accumulation is single-threaded.
template <class Real>
class PairScorer {
 public:
  using Input = const BasicVector<Real>*;

  PairScorer(const BasicHeadParams<Real>& params, std::vector<Input> visuals, std::vector<Input> texts)
      : p_(params), visuals_(std::move(visuals)), texts_(std::move(texts)) {
    check_layout(p_);
    d_ = p_.dim();
    for (Input v : visuals_)
      if (v == nullptr || v->dim() != d_) throw UsageError("visual embedding dim does not match head dim");
    for (Input t : texts_)
      if (t == nullptr || t->dim() != d_) throw UsageError("text embedding dim does not match head dim");
    resolve_blocks();
    encode_all();
  }

  std::size_t num_visuals() const noexcept { return visuals_.size(); }
  std::size_t num_texts() const noexcept { return texts_.size(); }

  double score(std::size_t vi, std::size_t ti) const {
    if (p_.kind() == HeadKind::Mha) return mha_forward(vi, ti, nullptr, nullptr);
    const auto a = enc_row(vis_, vi);
    const auto b = enc_row(txt_, ti);
    const double na = vis_.norm[vi], nb = txt_.norm[ti];
    if (na == 0.0 || nb == 0.0) throw DomainError("zero-norm transformed vector");
    return std::clamp(fgmatch::dot(a, b) / (na * nb), -1.0, 1.0);
  }

  /// Adds upstream * dS(vi, ti)/d(encodings) to the encoding gradients.
  void accumulate(std::size_t vi, std::size_t ti, double upstream) {
    if (upstream == 0.0) return;
    ensure_grad_buffers();
    if (p_.kind() == HeadKind::Mha) {
      mha_backward(vi, ti, upstream);
      return;
    }
    const std::size_t e = vis_.width;
    cosine_backward(enc_row(vis_, vi), enc_row(txt_, ti), upstream,
                    std::span<double>(vis_.grad).subspan(vi * e, e), std::span<double>(txt_.grad).subspan(ti * e, e));
  }

  /// Backpropagates accumulated encoding gradients into parameter gradients.
  Gradients gradients() {
    Gradients g = p_.zero_gradients();
    if (!grad_ready_) return g;
    switch (p_.kind()) {
      case HeadKind::CosineBaseline: break;
      case HeadKind::LinearBoth:
      case HeadKind::LinearTextOnly:
      case HeadKind::LinearVisualOnly:
        if (vw_ != npos) linear_backward(vis_, visuals_, vw_, vb_, g);
        if (tw_ != npos) linear_backward(txt_, texts_, tw_, tb_, g);
        break;
      case HeadKind::Mlp:
        mlp_backward(vis_, visuals_, vw_, g);
        mlp_backward(txt_, texts_, tw_, g);
        break;
      case HeadKind::Mha: mha_param_backward(g); break;
    }
    return g;
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  struct Side {
    std::size_t width = 0;       // encoding width per input
    std::vector<double> enc;     // n x width
    std::vector<double> norm;    // cosine family
    std::vector<double> hidden;  // mlp activations, n x hidden
    std::vector<double> grad;    // n x width
  };

  static std::span<const double> enc_row(const Side& s, std::size_t i) {
    return std::span<const double>(s.enc).subspan(i * s.width, s.width);
  }

  const BasicMatrix<Real>& blk(std::size_t i) const { return p_.blocks[i].value; }

  void resolve_blocks() {
    auto find = [&](std::string_view name) {
      for (std::size_t i = 0; i < p_.blocks.size(); ++i)
        if (p_.blocks[i].name == name) return i;
      return npos;
    };
    switch (p_.kind()) {
      case HeadKind::Mlp:
        vw_ = find("visual.fc1.weight");
        tw_ = find("text.fc1.weight");
        break;
      case HeadKind::Mha:
        cls_ = find("cls");
        qw_ = find("query.weight");
        kw_ = find("key.weight");
        valw_ = find("value.weight");
        ow_ = find("out.weight");
        break;
      default:
        vw_ = find("visual.weight");
        vb_ = find("visual.bias");
        tw_ = find("text.weight");
        tb_ = find("text.bias");
        break;
    }
  }

  void encode_side(Side& s, const std::vector<Input>& inputs, std::size_t w, std::size_t b) {
    const std::size_t n = inputs.size();
    s.width = d_;
    s.enc.assign(n * d_, 0.0);
    s.norm.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto out = std::span<double>(s.enc).subspan(i * d_, d_);
      const auto x = inputs[i]->span();
      if (w == npos) {
        for (std::size_t k = 0; k < d_; ++k) out[k] = static_cast<double>(x[k]);
      } else {
        affine(blk(w), blk(b).span(), x, out);
      }
      s.norm[i] = norm(std::span<const double>(out));
    }
  }

  void encode_mlp_side(Side& s, const std::vector<Input>& inputs, std::size_t w1) {
    const auto& W1 = blk(w1);
    const auto& b1 = blk(w1 + 1);
    const auto& W2 = blk(w1 + 2);
    const auto& b2 = blk(w1 + 3);
    const std::size_t n = inputs.size(), h = W1.rows();
    s.width = d_;
    s.enc.assign(n * d_, 0.0);
    s.hidden.assign(n * h, 0.0);
    s.norm.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto hid = std::span<double>(s.hidden).subspan(i * h, h);
      affine(W1, b1.span(), inputs[i]->span(), hid);
      for (double& x : hid) x = std::tanh(x);
      auto out = std::span<double>(s.enc).subspan(i * d_, d_);
      affine(W2, b2.span(), std::span<const double>(hid), out);
      s.norm[i] = norm(std::span<const double>(out));
    }
  }

  // mha: per input, enc = [key (d) | value (d)].
  void encode_mha_side(Side& s, const std::vector<Input>& inputs) {
    const std::size_t n = inputs.size();
    s.width = 2 * d_;
    s.enc.assign(n * 2 * d_, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = std::span<double>(s.enc).subspan(i * 2 * d_, 2 * d_);
      affine(blk(kw_), blk(kw_ + 1).span(), inputs[i]->span(), row.first(d_));
      affine(blk(valw_), blk(valw_ + 1).span(), inputs[i]->span(), row.last(d_));
    }
  }

  void encode_all() {
    switch (p_.kind()) {
      case HeadKind::Mlp:
        encode_mlp_side(vis_, visuals_, vw_);
        encode_mlp_side(txt_, texts_, tw_);
        break;
      case HeadKind::Mha: {
        heads_ = p_.shape.num_heads;
        head_width_ = d_ / heads_;
        encode_mha_side(vis_, visuals_);
        encode_mha_side(txt_, texts_);
        const auto cls = blk(cls_).span();
        cls_q_.assign(d_, 0.0);
        cls_kv_.assign(2 * d_, 0.0);
        affine(blk(qw_), blk(qw_ + 1).span(), cls, std::span<double>(cls_q_));
        affine(blk(kw_), blk(kw_ + 1).span(), cls, std::span<double>(cls_kv_).first(d_));
        affine(blk(valw_), blk(valw_ + 1).span(), cls, std::span<double>(cls_kv_).last(d_));
        break;
      }
      default:
        encode_side(vis_, visuals_, vw_, vb_);
        encode_side(txt_, texts_, tw_, tb_);
        break;
    }
  }

  void ensure_grad_buffers() {
    if (grad_ready_) return;
    grad_ready_ = true;
    vis_.grad.assign(vis_.enc.size(), 0.0);
    txt_.grad.assign(txt_.enc.size(), 0.0);
    if (p_.kind() == HeadKind::Mha) {
      cls_q_grad_.assign(d_, 0.0);
      cls_kv_grad_.assign(2 * d_, 0.0);
      out_row_grad_.assign(d_, 0.0);
      out_bias_grad_ = 0.0;
    }
  }

  // Attention read-out for the CLS token. When `attn` / `ctx` are given they
  // receive the per-head attention weights (heads x 3) and the concatenated
  // head outputs (d).
  double mha_forward(std::size_t vi, std::size_t ti, std::vector<double>* attn, std::vector<double>* ctx) const {
    const double* keys[3] = {cls_kv_.data(), vis_.enc.data() + vi * 2 * d_, txt_.enc.data() + ti * 2 * d_};
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_width_));
    const auto wo = blk(ow_).row(0);
    double out = static_cast<double>(blk(ow_ + 1)(0, 0));
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t lo = h * head_width_;
      double logits[3];
      for (int m = 0; m < 3; ++m) {
        double acc = 0.0;
        for (std::size_t k = lo; k < lo + head_width_; ++k) acc += cls_q_[k] * keys[m][k];
        logits[m] = acc * scale;
      }
      const double top = std::max({logits[0], logits[1], logits[2]});
      double a[3], sum = 0.0;
      for (int m = 0; m < 3; ++m) sum += (a[m] = std::exp(logits[m] - top));
      for (int m = 0; m < 3; ++m) a[m] /= sum;
      if (attn) {
        for (int m = 0; m < 3; ++m) (*attn)[h * 3 + static_cast<std::size_t>(m)] = a[m];
      }
      for (std::size_t k = lo; k < lo + head_width_; ++k) {
        const double o = a[0] * keys[0][d_ + k] + a[1] * keys[1][d_ + k] + a[2] * keys[2][d_ + k];
        if (ctx) (*ctx)[k] = o;
        out += static_cast<double>(wo[k]) * o;
      }
    }
    return sigmoid(out);
  }

  void mha_backward(std::size_t vi, std::size_t ti, double upstream) {
    std::vector<double> attn(heads_ * 3), ctx(d_);
    const double s = mha_forward(vi, ti, &attn, &ctx);
    const double dout = upstream * s * (1.0 - s);
    const double* keys[3] = {cls_kv_.data(), vis_.enc.data() + vi * 2 * d_, txt_.enc.data() + ti * 2 * d_};
    double* dkeys[3] = {cls_kv_grad_.data(), vis_.grad.data() + vi * 2 * d_, txt_.grad.data() + ti * 2 * d_};
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_width_));
    const auto wo = blk(ow_).row(0);
    out_bias_grad_ += dout;
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t lo = h * head_width_;
      const double* a = &attn[h * 3];
      double da[3] = {0.0, 0.0, 0.0};
      for (std::size_t k = lo; k < lo + head_width_; ++k) {
        out_row_grad_[k] += dout * ctx[k];
        const double dctx = dout * static_cast<double>(wo[k]);
        for (int m = 0; m < 3; ++m) {
          da[m] += dctx * keys[m][d_ + k];
          dkeys[m][d_ + k] += a[m] * dctx;
        }
      }
      const double inner = a[0] * da[0] + a[1] * da[1] + a[2] * da[2];
      for (int m = 0; m < 3; ++m) {
        const double dlogit = a[m] * (da[m] - inner) * scale;
        for (std::size_t k = lo; k < lo + head_width_; ++k) {
          cls_q_grad_[k] += dlogit * keys[m][k];
          dkeys[m][k] += dlogit * cls_q_[k];
        }
      }
    }
  }

  void linear_backward(const Side& s, const std::vector<Input>& inputs, std::size_t w, std::size_t b, Gradients& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto dout = std::span<const double>(s.grad).subspan(i * d_, d_);
      affine_backward(blk(w), inputs[i]->span(), dout, std::span<double>(g[w]), std::span<double>(g[b]),
                      std::span<double>{});
    }
  }

  void mlp_backward(const Side& s, const std::vector<Input>& inputs, std::size_t w1, Gradients& g) {
    const auto& W1 = blk(w1);
    const auto& W2 = blk(w1 + 2);
    const std::size_t h = W1.rows();
    std::vector<double> dhid(h);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto dout = std::span<const double>(s.grad).subspan(i * d_, d_);
      const auto hid = std::span<const double>(s.hidden).subspan(i * h, h);
      std::fill(dhid.begin(), dhid.end(), 0.0);
      affine_backward(W2, hid, dout, std::span<double>(g[w1 + 2]), std::span<double>(g[w1 + 3]),
                      std::span<double>(dhid));
      for (std::size_t k = 0; k < h; ++k) dhid[k] *= 1.0 - hid[k] * hid[k];
      affine_backward(W1, inputs[i]->span(), std::span<const double>(dhid), std::span<double>(g[w1]),
                      std::span<double>(g[w1 + 1]), std::span<double>{});
    }
  }

  void mha_param_backward(Gradients& g) {
    const std::size_t qb = qw_ + 1, kb = kw_ + 1, vb = valw_ + 1, ob = ow_ + 1;
    for (std::size_t k = 0; k < d_; ++k) g[ow_][k] += out_row_grad_[k];  // row 0 of out.weight
    g[ob][0] += out_bias_grad_;
    auto kv_backward = [&](std::span<const Real> x, const double* dkv, std::span<double> dx) {
      affine_backward(blk(kw_), x, std::span<const double>(dkv, d_), std::span<double>(g[kw_]),
                      std::span<double>(g[kb]), dx);
      affine_backward(blk(valw_), x, std::span<const double>(dkv + d_, d_), std::span<double>(g[valw_]),
                      std::span<double>(g[vb]), dx);
    };
    for (std::size_t i = 0; i < visuals_.size(); ++i)
      kv_backward(visuals_[i]->span(), vis_.grad.data() + i * 2 * d_, std::span<double>{});
    for (std::size_t j = 0; j < texts_.size(); ++j)
      kv_backward(texts_[j]->span(), txt_.grad.data() + j * 2 * d_, std::span<double>{});
    const auto cls = blk(cls_).span();
    auto dcls = std::span<double>(g[cls_]);
    kv_backward(cls, cls_kv_grad_.data(), dcls);
    affine_backward(blk(qw_), cls, std::span<const double>(cls_q_grad_), std::span<double>(g[qw_]),
                    std::span<double>(g[qb]), dcls);
  }

  const BasicHeadParams<Real>& p_;
  std::vector<Input> visuals_, texts_;
  std::size_t d_ = 0;
  std::size_t vw_ = npos, vb_ = npos, tw_ = npos, tb_ = npos;
  std::size_t cls_ = npos, qw_ = npos, kw_ = npos, valw_ = npos, ow_ = npos;
  std::size_t heads_ = 0, head_width_ = 0;
  Side vis_, txt_;
  std::vector<double> cls_q_, cls_kv_;
  std::vector<double> cls_q_grad_, cls_kv_grad_, out_row_grad_;
  double out_bias_grad_ = 0.0;
  bool grad_ready_ = false;
};

/// S(v, t) for a single pair.
template <class Real>
double score(const BasicHeadParams<Real>& params, const BasicVector<Real>& v, const BasicVector<Real>& t) {
  PairScorer<Real> scorer(params, {&v}, {&t});
  return scorer.score(0, 0);
}

/// S[i][j] = S(V[i], T[j]).
template <class Real>
ScoreMatrix score_batch(const BasicHeadParams<Real>& params, std::span<const BasicVector<Real>> visuals,
                        std::span<const BasicVector<Real>> texts) {
  if (visuals.empty() || texts.empty()) throw UsageError("score_batch: empty input");
  std::vector<const BasicVector<Real>*> vp, tp;
  for (const auto& v : visuals) vp.push_back(&v);
  for (const auto& t : texts) tp.push_back(&t);
  PairScorer<Real> scorer(params, std::move(vp), std::move(tp));
  ScoreMatrix out(visuals.size(), texts.size());
  for (std::size_t i = 0; i < visuals.size(); ++i)
    for (std::size_t j = 0; j < texts.size(); ++j) out(i, j) = scorer.score(i, j);
  return out;
}

}  // namespace fgmatch
