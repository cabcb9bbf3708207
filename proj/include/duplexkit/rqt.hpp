#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "duplexkit/common.hpp"
#include "duplexkit/layout.hpp"

namespace duplexkit::rqt {

using Vec = std::vector<double>;
using TokenId = layout::TokenId;

struct RqtConfig {
  std::size_t d_temporal = 64;
  std::size_t d_depth = 32;
  std::size_t temporal_layers = 2;
  std::size_t depth_layers = 2;
  std::size_t heads = 2;
  std::vector<std::size_t> cardinalities;  // N_k per stream, k = 0..K-1; id 0 is the initial token
  bool depthwise_params = true;
  bool independent_heads = false;  // ablation: per-stream heads straight from z
  std::uint32_t seed = 0;

  std::size_t streams() const { return cardinalities.size(); }

  void validate() const {
    if (cardinalities.empty()) throw std::invalid_argument("rqt: need at least one stream");
    if (d_temporal % heads != 0 || d_depth % heads != 0)
      throw std::invalid_argument("rqt: widths must be divisible by head count");
    for (std::size_t n : cardinalities)
      if (n < 2) throw std::invalid_argument("rqt: stream cardinality must be >= 2");
  }
};

/// Eq.-7-style weighting: text term at full weight (PAD targets down-weighted),
/// audio terms combined with per-stream alpha normalized to unit mass.
struct LossWeights {
  std::vector<double> alpha;  // one entry per stream k >= 2
  double text_weight = 1.0;
  double pad_weight = 0.5;
  TokenId pad_id = -1;  // text targets equal to this get pad_weight
};

/// Semantic streams at weight 100, acoustic at 1, for a joint grid with a text
/// stream followed by per-speaker blocks of q_levels audio streams.
inline LossWeights default_loss_weights(std::size_t k_streams, std::size_t q_levels,
                                        TokenId pad_id = -1) {
  LossWeights w;
  w.pad_id = pad_id;
  for (std::size_t k = 1; k < k_streams; ++k) {
    bool semantic = q_levels > 0 && ((k - 1) % q_levels == 0);
    w.alpha.push_back(semantic ? 100.0 : 1.0);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Parameters and elementary ops
// ---------------------------------------------------------------------------

struct Param {
  std::size_t rows = 0, cols = 1;
  std::vector<double> w, g;

  void init(std::size_t r, std::size_t c, std::mt19937 &rng) {
    rows = r;
    cols = c;
    w.resize(r * c);
    g.assign(r * c, 0.0);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(c)));
    for (auto &x : w) x = dist(rng);
  }

  void init_ones(std::size_t r) {
    rows = r;
    cols = 1;
    w.assign(r, 1.0);
    g.assign(r, 0.0);
  }

  std::size_t size() const { return w.size(); }
};

namespace detail {

inline constexpr double kRmsEps = 1e-8;
inline constexpr double kRotaryBase = 10000.0;

inline void matvec(const Param &m, const double *x, double *y) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double acc = 0;
    const double *row = m.w.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

inline void matvec_t_acc(const Param &m, const double *dy, double *dx) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double *row = m.w.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) dx[c] += row[c] * dy[r];
  }
}

inline void grad_outer_acc(Param &m, const double *dy, const double *x) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double *row = m.g.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += dy[r] * x[c];
  }
}

inline double rms_of(const Vec &x) {
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()) + kRmsEps);
}

inline Vec rmsnorm(const Vec &x, const Param &gain, double rms) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * gain.w[i] / rms;
  return y;
}

inline void rmsnorm_backward(const Vec &dy, const Vec &x, Param &gain, double rms, Vec &dx_acc) {
  const std::size_t n = x.size();
  double dot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += dy[i] * gain.w[i] * x[i];
    gain.g[i] += dy[i] * x[i] / rms;
  }
  const double r3 = rms * rms * rms;
  for (std::size_t i = 0; i < n; ++i)
    dx_acc[i] += dy[i] * gain.w[i] / rms - x[i] * dot / (static_cast<double>(n) * r3);
}

/// In-place rotary rotation of a (heads x head_dim) vector at a position;
/// sign -1 applies the inverse rotation (used for the gradient).
inline void rotary(Vec &v, std::size_t heads, std::size_t pos, double sign) {
  const std::size_t hd = v.size() / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    double *p = v.data() + h * hd;
    for (std::size_t i = 0; i + 1 < hd; i += 2) {
      double theta = static_cast<double>(pos) *
                     std::pow(kRotaryBase, -static_cast<double>(i) / static_cast<double>(hd));
      double c = std::cos(theta), s = sign * std::sin(theta);
      double a = p[i], b = p[i + 1];
      p[i] = a * c - b * s;
      p[i + 1] = a * s + b * c;
    }
  }
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pre-norm causal transformer with stored activations for backprop
// ---------------------------------------------------------------------------

struct FfnParams {
  Param w1, w3, w2;
  void init(std::size_t dim, std::size_t hidden, std::mt19937 &rng) {
    w1.init(hidden, dim, rng);
    w3.init(hidden, dim, rng);
    w2.init(dim, hidden, rng);
  }
};

class Transformer {
 public:
  struct LayerWeights {
    Param norm1, wq, wk, wv, wo, norm2;
    std::vector<FfnParams> ffns;  // one shared set, or one per position (depthwise)
  };

  Transformer() = default;

  Transformer(std::size_t dim, std::size_t layers, std::size_t heads, std::size_t ffn_sets,
              bool use_rotary, std::mt19937 &rng)
      : dim_(dim), heads_(heads), hidden_(4 * dim), rotary_(use_rotary) {
    layers_.resize(layers);
    for (auto &l : layers_) {
      l.norm1.init_ones(dim);
      l.wq.init(dim, dim, rng);
      l.wk.init(dim, dim, rng);
      l.wv.init(dim, dim, rng);
      l.wo.init(dim, dim, rng);
      l.norm2.init_ones(dim);
      l.ffns.resize(ffn_sets);
      for (auto &f : l.ffns) f.init(dim, hidden_, rng);
    }
    final_norm_.init_ones(dim);
  }

  std::size_t dim() const { return dim_; }

  /// Per-sequence activations. Doubles as the KV cache for streaming inference
  /// and as the tape for backprop.
  struct State {
    struct LayerActs {
      std::vector<Vec> x, xn1, q, k, v, attn_out, x2, xn2, h1, h3, h;
      std::vector<std::vector<Vec>> probs;  // probs[pos][head], length pos+1
      std::vector<double> rms1, rms2;
    };
    std::vector<LayerActs> layers;
    std::vector<Vec> out_pre_norm;
    std::vector<double> rms_final;
    std::size_t positions = 0;
  };

  State make_state() const {
    State st;
    st.layers.resize(layers_.size());
    return st;
  }

  /// Appends one position and returns the normalized output vector. The same
  /// routine serves offline (loop) and streaming (incremental) forward, so the
  /// two are arithmetically identical.
  Vec forward_pos(State &st, const Vec &input) const {
    const std::size_t pos = st.positions;
    const std::size_t hd = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Vec x = input;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      const LayerWeights &lw = layers_[li];
      auto &acts = st.layers[li];
      double r1 = detail::rms_of(x);
      Vec xn1 = detail::rmsnorm(x, lw.norm1, r1);
      Vec q(dim_), k(dim_), v(dim_);
      detail::matvec(lw.wq, xn1.data(), q.data());
      detail::matvec(lw.wk, xn1.data(), k.data());
      detail::matvec(lw.wv, xn1.data(), v.data());
      if (rotary_) {
        detail::rotary(q, heads_, pos, 1.0);
        detail::rotary(k, heads_, pos, 1.0);
      }
      acts.x.push_back(x);
      acts.xn1.push_back(std::move(xn1));
      acts.rms1.push_back(r1);
      acts.q.push_back(q);
      acts.k.push_back(k);
      acts.v.push_back(v);

      // causal attention against all cached positions
      Vec o(dim_, 0.0);
      std::vector<Vec> head_probs(heads_);
      for (std::size_t h = 0; h < heads_; ++h) {
        Vec scores(pos + 1);
        double mx = -1e300;
        for (std::size_t t = 0; t <= pos; ++t) {
          double dot = 0;
          const double *qh = q.data() + h * hd;
          const double *kh = acts.k[t].data() + h * hd;
          for (std::size_t i = 0; i < hd; ++i) dot += qh[i] * kh[i];
          scores[t] = dot * scale;
          mx = std::max(mx, scores[t]);
        }
        double z = 0;
        for (std::size_t t = 0; t <= pos; ++t) {
          scores[t] = std::exp(scores[t] - mx);
          z += scores[t];
        }
        for (std::size_t t = 0; t <= pos; ++t) scores[t] /= z;
        for (std::size_t t = 0; t <= pos; ++t) {
          const double *vh = acts.v[t].data() + h * hd;
          for (std::size_t i = 0; i < hd; ++i) o[h * hd + i] += scores[t] * vh[i];
        }
        head_probs[h] = std::move(scores);
      }
      acts.probs.push_back(std::move(head_probs));

      Vec attn_proj(dim_);
      detail::matvec(lw.wo, o.data(), attn_proj.data());
      acts.attn_out.push_back(o);
      Vec x2(dim_);
      for (std::size_t i = 0; i < dim_; ++i) x2[i] = x[i] + attn_proj[i];

      double r2 = detail::rms_of(x2);
      Vec xn2 = detail::rmsnorm(x2, lw.norm2, r2);
      const FfnParams &ffn = lw.ffns.size() == 1 ? lw.ffns[0] : lw.ffns[pos];
      Vec h1(hidden_), h3(hidden_), hh(hidden_);
      detail::matvec(ffn.w1, xn2.data(), h1.data());
      detail::matvec(ffn.w3, xn2.data(), h3.data());
      for (std::size_t i = 0; i < hidden_; ++i) hh[i] = detail::silu(h1[i]) * h3[i];
      Vec y(dim_);
      detail::matvec(ffn.w2, hh.data(), y.data());
      for (std::size_t i = 0; i < dim_; ++i) y[i] += x2[i];

      acts.x2.push_back(std::move(x2));
      acts.xn2.push_back(std::move(xn2));
      acts.rms2.push_back(r2);
      acts.h1.push_back(std::move(h1));
      acts.h3.push_back(std::move(h3));
      acts.h.push_back(std::move(hh));
      x = std::move(y);
    }
    double rf = detail::rms_of(x);
    Vec out = detail::rmsnorm(x, final_norm_, rf);
    st.out_pre_norm.push_back(std::move(x));
    st.rms_final.push_back(rf);
    st.positions++;
    return out;
  }

  /// Full-sequence backward given gradients at the normalized outputs.
  /// Returns gradients with respect to the inputs.
  std::vector<Vec> backward(State &st, const std::vector<Vec> &d_out) {
    const std::size_t s_len = st.positions;
    const std::size_t hd = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    if (d_out.size() != s_len) throw std::invalid_argument("transformer backward: shape mismatch");

    std::vector<Vec> dx(s_len, Vec(dim_, 0.0));
    for (std::size_t s = 0; s < s_len; ++s)
      detail::rmsnorm_backward(d_out[s], st.out_pre_norm[s], final_norm_, st.rms_final[s], dx[s]);

    for (std::size_t li = layers_.size(); li-- > 0;) {
      LayerWeights &lw = layers_[li];
      auto &acts = st.layers[li];
      std::vector<Vec> dx2(s_len, Vec(dim_, 0.0));

      // FFN backward
      for (std::size_t s = 0; s < s_len; ++s) {
        FfnParams &ffn = lw.ffns.size() == 1 ? lw.ffns[0] : lw.ffns[s];
        const Vec &dy = dx[s];
        Vec dh(hidden_, 0.0);
        detail::matvec_t_acc(ffn.w2, dy.data(), dh.data());
        detail::grad_outer_acc(ffn.w2, dy.data(), acts.h[s].data());
        Vec dh1(hidden_), dh3(hidden_);
        for (std::size_t i = 0; i < hidden_; ++i) {
          dh1[i] = dh[i] * acts.h3[s][i] * detail::silu_grad(acts.h1[s][i]);
          dh3[i] = dh[i] * detail::silu(acts.h1[s][i]);
        }
        Vec dxn2(dim_, 0.0);
        detail::matvec_t_acc(ffn.w1, dh1.data(), dxn2.data());
        detail::matvec_t_acc(ffn.w3, dh3.data(), dxn2.data());
        detail::grad_outer_acc(ffn.w1, dh1.data(), acts.xn2[s].data());
        detail::grad_outer_acc(ffn.w3, dh3.data(), acts.xn2[s].data());
        dx2[s] = dy;  // residual
        detail::rmsnorm_backward(dxn2, acts.x2[s], lw.norm2, acts.rms2[s], dx2[s]);
      }

      // attention backward
      std::vector<Vec> dq(s_len, Vec(dim_, 0.0)), dk(s_len, Vec(dim_, 0.0)),
          dv(s_len, Vec(dim_, 0.0)), dxl(s_len, Vec(dim_, 0.0));
      for (std::size_t s = 0; s < s_len; ++s) {
        for (std::size_t i = 0; i < dim_; ++i) dxl[s][i] += dx2[s][i];  // residual
        Vec do_(dim_, 0.0);
        detail::matvec_t_acc(lw.wo, dx2[s].data(), do_.data());
        detail::grad_outer_acc(lw.wo, dx2[s].data(), acts.attn_out[s].data());
        for (std::size_t h = 0; h < heads_; ++h) {
          const Vec &p = acts.probs[s][h];
          Vec dp(s + 1, 0.0);
          for (std::size_t t = 0; t <= s; ++t) {
            const double *vh = acts.v[t].data() + h * hd;
            double acc = 0;
            for (std::size_t i = 0; i < hd; ++i) {
              acc += do_[h * hd + i] * vh[i];
              dv[t][h * hd + i] += p[t] * do_[h * hd + i];
            }
            dp[t] = acc;
          }
          double pd = 0;
          for (std::size_t t = 0; t <= s; ++t) pd += p[t] * dp[t];
          for (std::size_t t = 0; t <= s; ++t) {
            double ds = p[t] * (dp[t] - pd) * scale;
            const double *kh = acts.k[t].data() + h * hd;
            const double *qh = acts.q[s].data() + h * hd;
            for (std::size_t i = 0; i < hd; ++i) {
              dq[s][h * hd + i] += ds * kh[i];
              dk[t][h * hd + i] += ds * qh[i];
            }
          }
        }
      }
      for (std::size_t s = 0; s < s_len; ++s) {
        if (rotary_) {
          detail::rotary(dq[s], heads_, s, -1.0);
          detail::rotary(dk[s], heads_, s, -1.0);
        }
        Vec dxn1(dim_, 0.0);
        detail::matvec_t_acc(lw.wq, dq[s].data(), dxn1.data());
        detail::matvec_t_acc(lw.wk, dk[s].data(), dxn1.data());
        detail::matvec_t_acc(lw.wv, dv[s].data(), dxn1.data());
        detail::grad_outer_acc(lw.wq, dq[s].data(), acts.xn1[s].data());
        detail::grad_outer_acc(lw.wk, dk[s].data(), acts.xn1[s].data());
        detail::grad_outer_acc(lw.wv, dv[s].data(), acts.xn1[s].data());
        detail::rmsnorm_backward(dxn1, acts.x[s], lw.norm1, acts.rms1[s], dxl[s]);
      }
      dx = std::move(dxl);
    }
    return dx;
  }

  void visit_params(const std::string &prefix, const std::function<void(const std::string &, Param &)> &fn) {
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      std::string base = prefix + ".layer" + std::to_string(li);
      LayerWeights &l = layers_[li];
      fn(base + ".norm1", l.norm1);
      fn(base + ".wq", l.wq);
      fn(base + ".wk", l.wk);
      fn(base + ".wv", l.wv);
      fn(base + ".wo", l.wo);
      fn(base + ".norm2", l.norm2);
      for (std::size_t fi = 0; fi < l.ffns.size(); ++fi) {
        std::string fb = base + ".ffn" + std::to_string(fi);
        fn(fb + ".w1", l.ffns[fi].w1);
        fn(fb + ".w3", l.ffns[fi].w3);
        fn(fb + ".w2", l.ffns[fi].w2);
      }
    }
    fn(prefix + ".final_norm", final_norm_);
  }

 private:
  std::size_t dim_ = 0, heads_ = 0, hidden_ = 0;
  bool rotary_ = false;
  std::vector<LayerWeights> layers_;
  Param final_norm_;
};

// ---------------------------------------------------------------------------
// RQ-Transformer: temporal context + depth logits + weighted loss
// ---------------------------------------------------------------------------

struct StepLogits {
  std::vector<Vec> l;  // l[k] has length N_k
};

class RqtModel {
 public:
  explicit RqtModel(RqtConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937 rng(cfg_.seed);
    const std::size_t k_streams = cfg_.streams();
    temporal_ = Transformer(cfg_.d_temporal, cfg_.temporal_layers, cfg_.heads, 1, true, rng);
    embed_.resize(k_streams);
    for (std::size_t k = 0; k < k_streams; ++k)
      embed_[k].init(cfg_.cardinalities[k], cfg_.d_temporal, rng);
    text_head_.init(cfg_.cardinalities[0], cfg_.d_temporal, rng);

    if (k_streams > 1) {
      if (cfg_.independent_heads) {
        heads_.resize(k_streams - 1);
        for (std::size_t j = 0; j < heads_.size(); ++j)
          heads_[j].init(cfg_.cardinalities[j + 1], cfg_.d_temporal, rng);
      } else {
        std::size_t ffn_sets = cfg_.depthwise_params ? k_streams - 1 : 1;
        depth_ = Transformer(cfg_.d_depth, cfg_.depth_layers, cfg_.heads, ffn_sets, false, rng);
        z_proj_.init(cfg_.d_depth, cfg_.d_temporal, rng);
        // depth position j consumes the token of stream j (text for j=0)
        depth_embed_.resize(k_streams - 1);
        for (std::size_t j = 0; j < depth_embed_.size(); ++j)
          depth_embed_[j].init(cfg_.cardinalities[j], cfg_.d_depth, rng);
        if (cfg_.depthwise_params) {
          heads_.resize(k_streams - 1);
          for (std::size_t j = 0; j < heads_.size(); ++j)
            heads_[j].init(cfg_.cardinalities[j + 1], cfg_.d_depth, rng);
        } else {
          for (std::size_t j = 1; j < k_streams - 1; ++j)
            if (cfg_.cardinalities[j + 1] != cfg_.cardinalities[1])
              throw std::invalid_argument(
                  "rqt: shared depth head requires equal cardinalities for streams k >= 2");
          heads_.resize(1);
          heads_[0].init(cfg_.cardinalities[1], cfg_.d_depth, rng);
        }
      }
    }
  }

  const RqtConfig &config() const { return cfg_; }

  void check_row(std::span<const TokenId> row) const {
    if (row.size() != cfg_.streams()) throw std::invalid_argument("rqt: row width != K");
    for (std::size_t k = 0; k < row.size(); ++k)
      if (row[k] < 0 || static_cast<std::size_t>(row[k]) >= cfg_.cardinalities[k])
        throw std::invalid_argument("rqt: token id out of range for stream " + std::to_string(k));
  }

  /// Sum of the K per-stream embeddings of one grid row.
  Vec embed_row(std::span<const TokenId> row) const {
    check_row(row);
    Vec x(cfg_.d_temporal, 0.0);
    for (std::size_t k = 0; k < row.size(); ++k) {
      const double *e = embed_[k].w.data() + static_cast<std::size_t>(row[k]) * cfg_.d_temporal;
      for (std::size_t i = 0; i < cfg_.d_temporal; ++i) x[i] += e[i];
    }
    return x;
  }

  /// z_s for a prefix V_0..V_{s-1}; the all-initial V_0 row is implicit, so an
  /// empty prefix yields z_1.
  Vec temporal_forward(const std::vector<std::vector<TokenId>> &prefix) const {
    Transformer::State st = temporal_.make_state();
    std::vector<TokenId> v0(cfg_.streams(), 0);
    Vec z = temporal_.forward_pos(st, embed_row(v0));
    for (const auto &row : prefix) z = temporal_.forward_pos(st, embed_row(row));
    return z;
  }

  Vec text_logits(const Vec &z) const {
    Vec l(cfg_.cardinalities[0]);
    detail::matvec(text_head_, z.data(), l.data());
    return l;
  }

  /// l_{s,k} for k = partial_row.size() + 1 (1-based), recomputed from scratch.
  Vec depth_forward(const Vec &z, std::span<const TokenId> partial_row) const {
    if (partial_row.size() + 1 > cfg_.streams())
      throw std::invalid_argument("depth_forward: partial row longer than K-1");
    if (partial_row.empty()) return text_logits(z);
    const std::size_t j = partial_row.size();  // producing logits for stream j (0-based)
    if (cfg_.independent_heads) {
      Vec l(cfg_.cardinalities[j]);
      detail::matvec(heads_[j - 1], z.data(), l.data());
      return l;
    }
    Transformer::State st = depth_.make_state();
    Vec out;
    for (std::size_t p = 0; p < partial_row.size(); ++p)
      out = depth_.forward_pos(st, depth_input(z, p, partial_row[p]));
    const Param &head = head_for(j - 1);
    Vec l(cfg_.cardinalities[j]);
    detail::matvec(head, out.data(), l.data());
    return l;
  }

  /// All logits for one step; used by the offline loss path.
  StepLogits step_logits(const Vec &z, std::span<const TokenId> row) const {
    StepLogits out;
    out.l.push_back(text_logits(z));
    for (std::size_t k = 1; k < cfg_.streams(); ++k)
      out.l.push_back(depth_forward(z, row.subspan(0, k)));
    return out;
  }

  // ----- training -----

  struct LossResult {
    double loss = 0;
    std::vector<StepLogits> logits;  // one per step
  };

  /// Weighted cross-entropy of Eq.-7 shape over precomputed logits.
  static double loss_from_logits(const layout::TokenGrid &grid,
                                 const std::vector<StepLogits> &logits, const LossWeights &w) {
    const std::size_t s_len = grid.steps();
    if (logits.size() != s_len) throw std::invalid_argument("loss: logits/grid step mismatch");
    const std::size_t k_streams = grid.streams();
    if (k_streams > 1 && w.alpha.size() != k_streams - 1)
      throw std::invalid_argument("loss: alpha size must be K-1");
    double alpha_sum = 0;
    for (double a : w.alpha) alpha_sum += a;
    double total = 0;
    for (std::size_t s = 0; s < s_len; ++s) {
      if (logits[s].l.size() != k_streams) throw std::invalid_argument("loss: logits width mismatch");
      double tw = w.text_weight * (grid.tokens[s][0] == w.pad_id ? w.pad_weight : 1.0);
      total += tw * cross_entropy(logits[s].l[0], grid.tokens[s][0]);
      if (k_streams > 1) {
        double audio = 0;
        for (std::size_t k = 1; k < k_streams; ++k)
          audio += w.alpha[k - 1] * cross_entropy(logits[s].l[k], grid.tokens[s][k]);
        total += audio / alpha_sum;
      }
    }
    return total / static_cast<double>(s_len);
  }

  /// Forward + loss over a grid; accumulates parameter gradients when
  /// do_backward is set. Gradients are not zeroed here.
  double train_loss(const layout::TokenGrid &grid, const LossWeights &w, bool do_backward) {
    const std::size_t s_len = grid.steps();
    const std::size_t k_streams = cfg_.streams();
    if (grid.streams() != k_streams) throw std::invalid_argument("train_loss: grid width != K");
    for (const auto &row : grid.tokens) check_row(row);
    if (k_streams > 1 && w.alpha.size() != k_streams - 1)
      throw std::invalid_argument("train_loss: alpha size must be K-1");
    double alpha_sum = 0;
    for (double a : w.alpha) alpha_sum += a;

    // temporal pass: input row s is V_{s-1} (V_0 implicit all-initial)
    Transformer::State tstate = temporal_.make_state();
    std::vector<TokenId> v0(k_streams, 0);
    std::vector<std::vector<TokenId>> inputs;
    inputs.push_back(v0);
    for (std::size_t s = 0; s + 1 < s_len; ++s) inputs.push_back(grid.tokens[s]);
    std::vector<Vec> zs;
    for (const auto &row : inputs) zs.push_back(temporal_.forward_pos(tstate, embed_row(row)));

    double total = 0;
    std::vector<Vec> dz(s_len, Vec(cfg_.d_temporal, 0.0));
    std::vector<Transformer::State> dstates;
    std::vector<std::vector<Vec>> d_depth_out(s_len);

    const double inv_s = 1.0 / static_cast<double>(s_len);
    for (std::size_t s = 0; s < s_len; ++s) {
      // text head
      Vec l0 = text_logits(zs[s]);
      double tw = w.text_weight * (grid.tokens[s][0] == w.pad_id ? w.pad_weight : 1.0);
      total += tw * cross_entropy(l0, grid.tokens[s][0]);
      if (do_backward) {
        Vec dl = ce_grad(l0, grid.tokens[s][0], tw * inv_s);
        detail::matvec_t_acc(text_head_, dl.data(), dz[s].data());
        detail::grad_outer_acc(text_head_, dl.data(), zs[s].data());
      }
      if (k_streams == 1) continue;

      if (cfg_.independent_heads) {
        for (std::size_t k = 1; k < k_streams; ++k) {
          Vec lk(cfg_.cardinalities[k]);
          detail::matvec(heads_[k - 1], zs[s].data(), lk.data());
          total += w.alpha[k - 1] / alpha_sum * cross_entropy(lk, grid.tokens[s][k]);
          if (do_backward) {
            Vec dl = ce_grad(lk, grid.tokens[s][k], w.alpha[k - 1] / alpha_sum * inv_s);
            detail::matvec_t_acc(heads_[k - 1], dl.data(), dz[s].data());
            detail::grad_outer_acc(heads_[k - 1], dl.data(), zs[s].data());
          }
        }
        continue;
      }

      // depth pass over positions j = 0..K-2, consuming V_{s,j+0}..
      Transformer::State dstate = depth_.make_state();
      std::vector<Vec> outs;
      for (std::size_t p = 0; p + 1 < k_streams; ++p)
        outs.push_back(depth_.forward_pos(dstate, depth_input(zs[s], p, grid.tokens[s][p])));
      std::vector<Vec> douts(outs.size(), Vec(cfg_.d_depth, 0.0));
      for (std::size_t k = 1; k < k_streams; ++k) {
        const Param &head = head_for(k - 1);
        Vec lk(cfg_.cardinalities[k]);
        detail::matvec(head, outs[k - 1].data(), lk.data());
        total += w.alpha[k - 1] / alpha_sum * cross_entropy(lk, grid.tokens[s][k]);
        if (do_backward) {
          Vec dl = ce_grad(lk, grid.tokens[s][k], w.alpha[k - 1] / alpha_sum * inv_s);
          detail::matvec_t_acc(head_for_mut(k - 1), dl.data(), douts[k - 1].data());
          detail::grad_outer_acc(head_for_mut(k - 1), dl.data(), outs[k - 1].data());
        }
      }
      if (do_backward) {
        dstates.push_back(std::move(dstate));
        d_depth_out[s] = std::move(douts);
      }
    }

    if (do_backward) {
      // depth backward per step, accumulating into dz and depth embeddings
      std::size_t di = 0;
      for (std::size_t s = 0; s < s_len; ++s) {
        if (k_streams == 1 || cfg_.independent_heads) break;
        std::vector<Vec> din = depth_.backward(dstates[di], d_depth_out[s]);
        ++di;
        for (std::size_t p = 0; p < din.size(); ++p) {
          // input was z_proj * z + depth_embed[p][token]
          detail::matvec_t_acc(z_proj_, din[p].data(), dz[s].data());
          detail::grad_outer_acc(z_proj_, din[p].data(), zs[s].data());
          double *eg = depth_embed_[p].g.data() +
                       static_cast<std::size_t>(grid.tokens[s][p]) * cfg_.d_depth;
          for (std::size_t i = 0; i < cfg_.d_depth; ++i) eg[i] += din[p][i];
        }
      }
      // temporal backward and input-embedding scatter
      std::vector<Vec> dx = temporal_.backward(tstate, dz);
      for (std::size_t s = 0; s < inputs.size(); ++s)
        for (std::size_t k = 0; k < k_streams; ++k) {
          double *eg =
              embed_[k].g.data() + static_cast<std::size_t>(inputs[s][k]) * cfg_.d_temporal;
          for (std::size_t i = 0; i < cfg_.d_temporal; ++i) eg[i] += dx[s][i];
        }
    }
    return total * inv_s;
  }

  void zero_grad() {
    visit_params([](const std::string &, Param &p) { std::fill(p.g.begin(), p.g.end(), 0.0); });
  }

  void visit_params(const std::function<void(const std::string &, Param &)> &fn) {
    temporal_.visit_params("temporal", fn);
    for (std::size_t k = 0; k < embed_.size(); ++k)
      fn("embed.stream" + std::to_string(k), embed_[k]);
    fn("text_head", text_head_);
    if (cfg_.streams() > 1) {
      if (!cfg_.independent_heads) {
        depth_.visit_params("depth", fn);
        fn("depth.z_proj", z_proj_);
        for (std::size_t j = 0; j < depth_embed_.size(); ++j)
          fn("depth.embed" + std::to_string(j), depth_embed_[j]);
      }
      for (std::size_t j = 0; j < heads_.size(); ++j)
        fn("head.stream" + std::to_string(j + 1), heads_[j]);
    }
  }

  std::size_t param_count() {
    std::size_t n = 0;
    visit_params([&](const std::string &, Param &p) { n += p.size(); });
    return n;
  }

  void save(std::ostream &os) {
    io::write_u32(os, kCheckpointMagic);
    io::write_u32(os, kCheckpointVersion);
    std::vector<std::pair<std::string, Param *>> entries;
    visit_params([&](const std::string &n, Param &p) { entries.emplace_back(n, &p); });
    io::write_u32(os, static_cast<std::uint32_t>(entries.size()));
    for (auto &[name, p] : entries) {
      io::write_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      io::write_u32(os, static_cast<std::uint32_t>(p->rows));
      io::write_u32(os, static_cast<std::uint32_t>(p->cols));
      for (double x : p->w) io::write_f32(os, static_cast<float>(x));
    }
  }

  void load(std::istream &is) {
    if (io::read_u32(is) != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic");
    if (io::read_u32(is) != kCheckpointVersion) throw std::runtime_error("checkpoint: bad version");
    std::uint32_t n = io::read_u32(is);
    std::map<std::string, std::pair<std::vector<double>, std::pair<std::size_t, std::size_t>>> loaded;
    for (std::uint32_t i = 0; i < n; ++i) {
      std::uint32_t len = io::read_u32(is);
      std::string name(len, '\0');
      is.read(name.data(), len);
      std::size_t rows = io::read_u32(is);
      std::size_t cols = io::read_u32(is);
      std::vector<double> w(rows * cols);
      for (auto &x : w) x = io::read_f32(is);
      loaded[name] = {std::move(w), {rows, cols}};
    }
    visit_params([&](const std::string &name, Param &p) {
      auto it = loaded.find(name);
      if (it == loaded.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
      if (it->second.second != std::pair<std::size_t, std::size_t>{p.rows, p.cols})
        throw std::runtime_error("checkpoint: shape mismatch for " + name);
      p.w = it->second.first;
    });
  }

  static double cross_entropy(const Vec &logits, TokenId target) {
    if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
      throw std::invalid_argument("cross_entropy: target out of range");
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    return std::log(z) - (logits[static_cast<std::size_t>(target)] - mx);
  }

  friend class RqtSession;

 private:
  static constexpr std::uint32_t kCheckpointMagic = 0x54515244;  // "DRQT"
  static constexpr std::uint32_t kCheckpointVersion = 1;

  Vec depth_input(const Vec &z, std::size_t pos, TokenId token) const {
    Vec u(cfg_.d_depth);
    detail::matvec(z_proj_, z.data(), u.data());
    const double *e =
        depth_embed_[pos].w.data() + static_cast<std::size_t>(token) * cfg_.d_depth;
    for (std::size_t i = 0; i < cfg_.d_depth; ++i) u[i] += e[i];
    return u;
  }

  const Param &head_for(std::size_t j) const {
    return cfg_.depthwise_params || cfg_.independent_heads ? heads_[j] : heads_[0];
  }
  Param &head_for_mut(std::size_t j) {
    return cfg_.depthwise_params || cfg_.independent_heads ? heads_[j] : heads_[0];
  }

  static Vec ce_grad(const Vec &logits, TokenId target, double weight) {
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    Vec g(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      g[i] = std::exp(logits[i] - mx);
      z += g[i];
    }
    for (auto &x : g) x = weight * x / z;
    g[static_cast<std::size_t>(target)] -= weight;
    return g;
  }

  RqtConfig cfg_;
  Transformer temporal_;
  Transformer depth_;
  std::vector<Param> embed_;        // temporal input tables, one per stream
  Param text_head_;                 // Lin: d_temporal -> N_1
  Param z_proj_;                    // d_temporal -> d_depth
  std::vector<Param> depth_embed_;  // depth input tables for streams k >= 2
  std::vector<Param> heads_;        // depth output heads (or per-stream heads in ablation)
};

/// Incremental stepping with a persistent temporal cache; the per-step depth
/// chain is driven token by token so callers can intervene on logits.
class RqtSession {
 public:
  explicit RqtSession(const RqtModel &model)
      : model_(model), tstate_(model.temporal_.make_state()) {
    std::vector<TokenId> v0(model_.cfg_.streams(), 0);
    z_ = model_.temporal_.forward_pos(tstate_, model_.embed_row(v0));
  }

  /// Context vector for the upcoming step (conditioned on all rows committed
  /// so far).
  const Vec &context() const { return z_; }

  Vec text_logits() const { return model_.text_logits(z_); }

  /// Feed the chosen token for stream k (0-based, in commit order) and get the
  /// logits for stream k+1.
  Vec depth_next(TokenId token_for_stream_k) {
    const std::size_t k = depth_pos_;
    if (k + 1 >= model_.cfg_.streams())
      throw std::invalid_argument("depth_next: step already complete");
    if (token_for_stream_k < 0 ||
        static_cast<std::size_t>(token_for_stream_k) >= model_.cfg_.cardinalities[k])
      throw std::invalid_argument("depth_next: token out of range");
    Vec l;
    if (model_.cfg_.independent_heads) {
      l.resize(model_.cfg_.cardinalities[k + 1]);
      detail::matvec(model_.heads_[k], z_.data(), l.data());
    } else {
      if (depth_pos_ == 0) dstate_ = model_.depth_.make_state();
      Vec out =
          model_.depth_.forward_pos(dstate_, model_.depth_input(z_, k, token_for_stream_k));
      const Param &head = model_.head_for(k);
      l.resize(model_.cfg_.cardinalities[k + 1]);
      detail::matvec(head, out.data(), l.data());
    }
    ++depth_pos_;
    return l;
  }

  /// Commit the completed row and advance the temporal transformer.
  void commit_row(const std::vector<TokenId> &row) {
    model_.check_row(row);
    z_ = model_.temporal_.forward_pos(tstate_, model_.embed_row(row));
    depth_pos_ = 0;
    ++steps_;
  }

  std::size_t steps() const { return steps_; }

 private:
  const RqtModel &model_;
  Transformer::State tstate_;
  Transformer::State dstate_;
  Vec z_;
  std::size_t depth_pos_ = 0;
  std::size_t steps_ = 0;
};

/// Temperature 0 is argmax with lowest-index tie-break; otherwise a seeded
/// softmax draw.
inline TokenId sample_token(const Vec &logits, double temperature, std::mt19937 &rng) {
  if (temperature < 0) throw std::invalid_argument("sample_token: negative temperature");
  for (double l : logits)
    if (std::isnan(l)) throw std::domain_error("sample_token: NaN logit");
  if (temperature == 0.0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    return static_cast<TokenId>(best);
  }
  double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    z += p[i];
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng) * z;
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (r <= acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(p.size() - 1);
}

inline std::vector<TokenId> sample_step(const StepLogits &logits, double temperature,
                                        std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::vector<TokenId> row;
  for (const auto &l : logits.l) row.push_back(sample_token(l, temperature, rng));
  return row;
}

/// Adam over all model parameters; training scaffolding for the toy tasks.
class AdamTrainer {
 public:
  explicit AdamTrainer(RqtModel &model, double lr = 1e-3, double beta1 = 0.9,
                       double beta2 = 0.999, double eps = 1e-8)
      : model_(model), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    model_.visit_params([&](const std::string &, Param &p) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    });
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    std::size_t idx = 0;
    model_.visit_params([&](const std::string &, Param &p) {
      auto &m = m_[idx];
      auto &v = v_[idx];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1 - beta1_) * p.g[i];
        v[i] = beta2_ * v[i] + (1 - beta2_) * p.g[i] * p.g[i];
        p.w[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
      ++idx;
    });
  }

 private:
  RqtModel &model_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace duplexkit::rqt
