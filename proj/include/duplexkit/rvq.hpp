#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "duplexkit/common.hpp"

namespace duplexkit::rvq {

using Vec = std::vector<double>;

/// Marks a dropped quantizer level in a QuantizedFrame.
inline constexpr std::int32_t kNoCode = -1;

/// Flat table of N centroids of dimension D.
struct Codebook {
  std::size_t dim = 0;
  std::vector<Vec> centroids;

  std::size_t size() const { return centroids.size(); }
  const Vec &operator[](std::size_t i) const { return centroids[i]; }
};

struct RvqConfig {
  std::size_t levels = 8;         // Q
  std::size_t codebook_size = 2048;  // N_A
  std::size_t dim = 8;            // D
  double frame_rate_hz = 12.5;
  std::uint32_t seed = 0;
  std::size_t kmeans_iters = 20;

  void validate() const {
    if (levels < 1) throw std::invalid_argument("rvq: levels must be >= 1");
    if (codebook_size < 2) throw std::invalid_argument("rvq: codebook_size must be >= 2");
    if (frame_rate_hz <= 0) throw std::invalid_argument("rvq: frame_rate_hz must be > 0");
  }
};

/// Per-frame codeword indices; kNoCode marks levels dropped by quantizer dropout.
struct QuantizedFrame {
  std::vector<std::int32_t> indices;
};

/// One plain semantic VQ plus Q-1 acoustic RVQ levels run in parallel on the
/// same input; decoded outputs are summed.
struct SplitRvq {
  Codebook semantic;
  std::vector<Codebook> acoustic;
};

inline double squared_dist(const Vec &a, const Vec &b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double x = a[i] - b[i];
    d += x * x;
  }
  return d;
}

/// Nearest centroid under squared Euclidean distance; lowest index wins ties.
inline std::size_t nearest_centroid(const Vec &v, const Codebook &cb) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < cb.size(); ++i) {
    double d = squared_dist(v, cb[i]);
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
  return best_i;
}

struct VqResult {
  std::size_t index;
  Vec residual;
};

inline VqResult vq_encode(const Vec &v, const Codebook &cb) {
  if (v.size() != cb.dim)
    throw std::invalid_argument("vq_encode: vector dimension " + std::to_string(v.size()) +
                                " != codebook dimension " + std::to_string(cb.dim));
  std::size_t idx = nearest_centroid(v, cb);
  Vec r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) r[i] = v[i] - cb[idx][i];
  return {idx, std::move(r)};
}

/// Chained VQ over successive residuals. Levels >= n_levels are marked kNoCode
/// so callers can exercise quantizer dropout.
inline QuantizedFrame rvq_encode(const Vec &v, const std::vector<Codebook> &cbs,
                                 std::size_t n_levels) {
  if (n_levels < 1 || n_levels > cbs.size())
    throw std::invalid_argument("rvq_encode: n_levels out of range");
  QuantizedFrame f;
  f.indices.assign(cbs.size(), kNoCode);
  Vec residual = v;
  for (std::size_t l = 0; l < n_levels; ++l) {
    VqResult r = vq_encode(residual, cbs[l]);
    f.indices[l] = static_cast<std::int32_t>(r.index);
    residual = std::move(r.residual);
  }
  return f;
}

inline QuantizedFrame rvq_encode(const Vec &v, const std::vector<Codebook> &cbs) {
  return rvq_encode(v, cbs, cbs.size());
}

/// Sum of the selected centroids over present levels; all-absent decodes to zero.
inline Vec rvq_decode(const QuantizedFrame &f, const std::vector<Codebook> &cbs) {
  if (cbs.empty()) throw std::invalid_argument("rvq_decode: no codebooks");
  Vec out(cbs[0].dim, 0.0);
  for (std::size_t l = 0; l < f.indices.size() && l < cbs.size(); ++l) {
    std::int32_t idx = f.indices[l];
    if (idx == kNoCode) continue;
    if (idx < 0 || static_cast<std::size_t>(idx) >= cbs[l].size())
      throw std::invalid_argument("rvq_decode: index out of range at level " + std::to_string(l));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += cbs[l][static_cast<std::size_t>(idx)][i];
  }
  return out;
}

struct SplitResult {
  std::size_t semantic_index;
  QuantizedFrame acoustic;
};

/// The acoustic RVQ quantizes the full input vector, not the semantic residual;
/// both branches run in parallel and their decodes are summed.
inline SplitResult split_rvq_encode(const Vec &v, const SplitRvq &q) {
  if (v.size() != q.semantic.dim)
    throw std::invalid_argument("split_rvq_encode: dimension mismatch");
  for (const auto &cb : q.acoustic)
    if (cb.dim != q.semantic.dim)
      throw std::invalid_argument("split_rvq_encode: codebook dimension mismatch");
  SplitResult r;
  r.semantic_index = vq_encode(v, q.semantic).index;
  if (!q.acoustic.empty()) r.acoustic = rvq_encode(v, q.acoustic);
  return r;
}

inline Vec split_rvq_decode(const SplitResult &r, const SplitRvq &q) {
  Vec out = q.semantic[r.semantic_index];
  if (!q.acoustic.empty()) {
    Vec a = rvq_decode(r.acoustic, q.acoustic);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a[i];
  }
  return out;
}

/// Encode/decode convenience with the 50% quantization-bypass training trick:
/// with bypass set the input comes back unquantized.
inline Vec quantize_reconstruct(const Vec &v, const std::vector<Codebook> &cbs,
                                std::size_t n_levels, bool bypass = false) {
  if (bypass) return v;
  return rvq_decode(rvq_encode(v, cbs, n_levels), cbs);
}

namespace detail {

inline Codebook kmeans(const std::vector<Vec> &data, std::size_t k, std::size_t dim,
                       std::size_t iters, std::mt19937 &rng) {
  Codebook cb;
  cb.dim = dim;
  cb.centroids.resize(k, Vec(dim, 0.0));
  // init: sample k distinct points
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < k; ++i) cb.centroids[i] = data[perm[i]];

  std::vector<std::size_t> assign(data.size(), 0);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t n = 0; n < data.size(); ++n) assign[n] = nearest_centroid(data[n], cb);
    std::vector<Vec> sums(k, Vec(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t n = 0; n < data.size(); ++n) {
      counts[assign[n]]++;
      for (std::size_t i = 0; i < dim; ++i) sums[assign[n]][i] += data[n][i];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // dead centroid: restart on the point farthest from its centroid
        double worst = -1;
        std::size_t worst_n = 0;
        for (std::size_t n = 0; n < data.size(); ++n) {
          double d = squared_dist(data[n], cb.centroids[assign[n]]);
          if (d > worst) {
            worst = d;
            worst_n = n;
          }
        }
        cb.centroids[c] = data[worst_n];
      } else {
        for (std::size_t i = 0; i < dim; ++i) cb.centroids[c][i] = sums[c][i] / counts[c];
      }
    }
  }
  return cb;
}

}  // namespace detail

/// Seeded k-means per level over the residuals left by earlier levels.
inline std::vector<Codebook> learn_codebooks(const std::vector<Vec> &data, const RvqConfig &cfg) {
  cfg.validate();
  if (data.size() < cfg.codebook_size)
    throw std::invalid_argument("learn_codebooks: need at least N_A data points");
  for (const auto &v : data)
    if (v.size() != cfg.dim) throw std::invalid_argument("learn_codebooks: dimension mismatch");

  std::mt19937 rng(cfg.seed);
  std::vector<Codebook> out;
  std::vector<Vec> residuals = data;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    Codebook cb = detail::kmeans(residuals, cfg.codebook_size, cfg.dim, cfg.kmeans_iters, rng);
    for (auto &r : residuals) {
      VqResult q = vq_encode(r, cb);
      r = std::move(q.residual);
    }
    out.push_back(std::move(cb));
  }
  return out;
}

/// Q * log2(N_A) * frame_rate; integer-exact for power-of-two N_A.
inline double bitrate_bps(const RvqConfig &cfg) {
  cfg.validate();
  double bits;
  if ((cfg.codebook_size & (cfg.codebook_size - 1)) == 0) {
    std::size_t n = cfg.codebook_size;
    std::size_t b = 0;
    while (n > 1) {
      n >>= 1;
      ++b;
    }
    bits = static_cast<double>(b);
  } else {
    bits = std::log2(static_cast<double>(cfg.codebook_size));
  }
  return static_cast<double>(cfg.levels) * bits * cfg.frame_rate_hz;
}

inline constexpr std::uint32_t kCodebookMagic = 0x51565244;  // "DRVQ"
inline constexpr std::uint32_t kCodebookVersion = 1;

inline void save_codebooks(std::ostream &os, const std::vector<Codebook> &cbs) {
  if (cbs.empty()) throw std::invalid_argument("save_codebooks: empty");
  io::write_u32(os, kCodebookMagic);
  io::write_u32(os, kCodebookVersion);
  io::write_u32(os, static_cast<std::uint32_t>(cbs.size()));
  io::write_u32(os, static_cast<std::uint32_t>(cbs[0].size()));
  io::write_u32(os, static_cast<std::uint32_t>(cbs[0].dim));
  for (const auto &cb : cbs)
    for (const auto &c : cb.centroids)
      for (double x : c) io::write_f32(os, static_cast<float>(x));
}

inline std::vector<Codebook> load_codebooks(std::istream &is) {
  if (io::read_u32(is) != kCodebookMagic) throw std::runtime_error("load_codebooks: bad magic");
  if (io::read_u32(is) != kCodebookVersion) throw std::runtime_error("load_codebooks: bad version");
  std::uint32_t q = io::read_u32(is);
  std::uint32_t n = io::read_u32(is);
  std::uint32_t d = io::read_u32(is);
  std::vector<Codebook> cbs(q);
  for (auto &cb : cbs) {
    cb.dim = d;
    cb.centroids.assign(n, Vec(d, 0.0));
    for (auto &c : cb.centroids)
      for (auto &x : c) x = io::read_f32(is);
  }
  return cbs;
}

}  // namespace duplexkit::rvq
