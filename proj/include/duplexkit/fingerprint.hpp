#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "duplexkit/common.hpp"

namespace duplexkit::fp {

inline constexpr std::size_t kMelBands = 64;
inline constexpr double kFrameRateHz = 40.0;
inline constexpr double kBandLowHz = 200.0;
inline constexpr double kBandHighHz = 3000.0;
inline constexpr std::size_t kFftSize = 1024;
inline constexpr double kLogFloor = 1e-10;

/// frames x 64 log-mel magnitudes at 40 Hz over the 200-3000 Hz range.
struct MelSpec {
  std::vector<std::vector<double>> frames;  // frames[t][band]
};

struct Keypoint {
  std::int32_t t;  // frame index
  std::int32_t f;  // band index 0..63
  bool operator==(const Keypoint &o) const { return t == o.t && f == o.f; }
};

/// Keypoints surviving the energy/time/frequency filters; at most one per
/// frame, sorted by t.
struct Constellation {
  std::vector<Keypoint> points;
};

struct Signature {
  std::uint8_t f_b, f_k, f_f;  // band indices of backward/anchor/forward keypoints
  std::uint8_t dt_b, dt_f;     // frame deltas, each in [m, M)
  std::int32_t anchor;         // t_k
};

struct SignatureParams {
  std::uint8_t m = 4;
  std::uint8_t big_m = 20;
};

namespace detail {

inline void fft_inplace(std::vector<std::complex<double>> &a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filterbank over [kBandLowHz, kBandHighHz], mel-spaced.
inline std::vector<std::vector<double>> mel_filterbank(std::uint32_t sample_rate) {
  const std::size_t n_bins = kFftSize / 2 + 1;
  std::vector<double> edges(kMelBands + 2);
  double mel_lo = hz_to_mel(kBandLowHz), mel_hi = hz_to_mel(kBandHighHz);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(kMelBands + 1));
  std::vector<std::vector<double>> fb(kMelBands, std::vector<double>(n_bins, 0.0));
  for (std::size_t b = 0; b < kMelBands; ++b) {
    double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      double hz = static_cast<double>(k) * sample_rate / kFftSize;
      if (hz <= lo || hz >= hi) continue;
      fb[b][k] = hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
    }
  }
  return fb;
}

}  // namespace detail

/// STFT (1024-sample Hann window, hop = sample_rate/40) -> triangular mel
/// bands -> log magnitude with floor 1e-10.
inline MelSpec mel_spectrogram(const std::vector<double> &waveform, std::uint32_t sample_rate) {
  if (waveform.empty()) throw std::invalid_argument("mel_spectrogram: empty waveform");
  if (sample_rate != 16000 && sample_rate != 24000)
    throw std::invalid_argument("mel_spectrogram: unsupported sample rate " +
                                std::to_string(sample_rate));
  const std::size_t hop = sample_rate / 40;
  const std::size_t n_frames = waveform.size() / hop;
  if (n_frames == 0) throw std::invalid_argument("mel_spectrogram: waveform shorter than one frame");

  auto fb = detail::mel_filterbank(sample_rate);
  std::vector<double> hann(kFftSize);
  for (std::size_t i = 0; i < kFftSize; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / kFftSize);

  MelSpec spec;
  spec.frames.assign(n_frames, std::vector<double>(kMelBands, 0.0));
  std::vector<std::complex<double>> buf(kFftSize);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t off = t * hop;
    for (std::size_t i = 0; i < kFftSize; ++i) {
      double s = off + i < waveform.size() ? waveform[off + i] : 0.0;
      buf[i] = {s * hann[i], 0.0};
    }
    detail::fft_inplace(buf);
    for (std::size_t b = 0; b < kMelBands; ++b) {
      double e = 0;
      for (std::size_t k = 0; k < kFftSize / 2 + 1; ++k)
        if (fb[b][k] != 0.0) e += fb[b][k] * std::abs(buf[k]);
      spec.frames[t][b] = std::log(std::max(e, kLogFloor));
    }
  }
  return spec;
}

/// Intersection of three filters: energy (strictly above the global mean),
/// time (maximum within a centered 9-frame window per band), frequency (the
/// most energetic band per frame, lowest band on ties).
inline Constellation extract_constellation(const MelSpec &spec) {
  Constellation c;
  const std::size_t n = spec.frames.size();
  if (n == 0) return c;

  double mean = 0;
  for (const auto &fr : spec.frames)
    for (double v : fr) mean += v;
  mean /= static_cast<double>(n * kMelBands);

  constexpr std::ptrdiff_t kTimeHalfWindow = 4;
  for (std::size_t t = 0; t < n; ++t) {
    // frequency filter
    std::size_t best_f = 0;
    for (std::size_t f = 1; f < kMelBands; ++f)
      if (spec.frames[t][f] > spec.frames[t][best_f]) best_f = f;
    double v = spec.frames[t][best_f];
    // energy filter
    if (!(v > mean)) continue;
    // time filter within the same band
    bool is_max = true;
    for (std::ptrdiff_t dt = -kTimeHalfWindow; dt <= kTimeHalfWindow && is_max; ++dt) {
      std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t) + dt;
      if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(n)) continue;
      if (spec.frames[static_cast<std::size_t>(tt)][best_f] > v) is_max = false;
    }
    if (!is_max) continue;
    c.points.push_back({static_cast<std::int32_t>(t), static_cast<std::int32_t>(best_f)});
  }
  return c;
}

/// Anchors pair with the time-closest keypoints in [t-M, t-m] backward and
/// [t+m, t+M) forward; a signature is emitted only when both exist.
inline std::vector<Signature> extract_signatures(const Constellation &c,
                                                 SignatureParams p = {}) {
  if (p.m >= p.big_m) throw std::invalid_argument("extract_signatures: need m < M");
  std::vector<Signature> sigs;
  const auto &pts = c.points;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::int32_t tk = pts[i].t;
    const Keypoint *back = nullptr, *fwd = nullptr;
    for (std::size_t j = i; j-- > 0;) {
      std::int32_t dt = tk - pts[j].t;
      if (dt < p.m) continue;
      if (dt >= p.big_m) break;
      back = &pts[j];
      break;  // time-closest to the anchor
    }
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      std::int32_t dt = pts[j].t - tk;
      if (dt < p.m) continue;
      if (dt >= p.big_m) break;
      fwd = &pts[j];
      break;
    }
    if (!back || !fwd) continue;
    sigs.push_back({static_cast<std::uint8_t>(back->f), static_cast<std::uint8_t>(pts[i].f),
                    static_cast<std::uint8_t>(fwd->f), static_cast<std::uint8_t>(tk - back->t),
                    static_cast<std::uint8_t>(fwd->t - tk), tk});
  }
  return sigs;
}

/// Bit layout, most significant first: f_b(6) | f_k(6) | f_f(6) | dt_b-m(4) | dt_f-m(4).
inline std::uint32_t pack_key(const Signature &s, SignatureParams p = {}) {
  if (s.f_b >= 64 || s.f_k >= 64 || s.f_f >= 64)
    throw std::invalid_argument("pack_key: band index out of range");
  if (s.dt_b < p.m || s.dt_b >= p.big_m || s.dt_f < p.m || s.dt_f >= p.big_m)
    throw std::invalid_argument("pack_key: frame delta out of [m, M)");
  return (static_cast<std::uint32_t>(s.f_b) << 20) | (static_cast<std::uint32_t>(s.f_k) << 14) |
         (static_cast<std::uint32_t>(s.f_f) << 8) |
         (static_cast<std::uint32_t>(s.dt_b - p.m) << 4) |
         static_cast<std::uint32_t>(s.dt_f - p.m);
}

inline Signature unpack_key(std::uint32_t key, SignatureParams p = {}) {
  if (key >= (1u << 26)) throw std::invalid_argument("unpack_key: key >= 2^26");
  Signature s{};
  s.f_b = static_cast<std::uint8_t>((key >> 20) & 0x3f);
  s.f_k = static_cast<std::uint8_t>((key >> 14) & 0x3f);
  s.f_f = static_cast<std::uint8_t>((key >> 8) & 0x3f);
  s.dt_b = static_cast<std::uint8_t>(((key >> 4) & 0x0f) + p.m);
  s.dt_f = static_cast<std::uint8_t>((key & 0x0f) + p.m);
  s.anchor = 0;
  return s;
}

struct Posting {
  std::uint32_t audio_id;
  std::int32_t anchor;
};

/// Inverted file mapping 26-bit keys to (audio_id, anchor) postings.
class SignatureIndex {
 public:
  explicit SignatureIndex(SignatureParams p = {}) : params_(p) {}

  void add(std::uint32_t audio_id, const std::vector<Signature> &sigs) {
    if (!ids_.insert(audio_id).second)
      throw std::invalid_argument("index_add: audio_id " + std::to_string(audio_id) +
                                  " already indexed");
    for (const auto &s : sigs) postings_[pack_key(s, params_)].push_back({audio_id, s.anchor});
    sorted_ = false;
  }

  std::size_t posting_count() const {
    std::size_t n = 0;
    for (const auto &[k, v] : postings_) n += v.size();
    return n;
  }

  const SignatureParams &params() const { return params_; }

  struct Hit {
    std::uint32_t audio_id;
    std::int32_t offset;  // indexed anchor - query anchor of the winning bin
    std::size_t votes;
  };

  /// Hough 1D temporal voting. tolerance=1 also matches dt_b/dt_f off by one.
  std::vector<Hit> query(const std::vector<Signature> &sigs, int tolerance = 0) const {
    std::map<std::uint32_t, std::map<std::int32_t, std::size_t>> histograms;
    for (const auto &s : sigs) {
      for (std::uint32_t key : candidate_keys(s, tolerance)) {
        auto it = postings_.find(key);
        if (it == postings_.end()) continue;
        for (const Posting &p : it->second) histograms[p.audio_id][p.anchor - s.anchor]++;
      }
    }
    std::vector<Hit> hits;
    for (const auto &[id, bins] : histograms) {
      std::int32_t best_off = 0;
      std::size_t best_votes = 0;
      for (const auto &[off, v] : bins)
        if (v > best_votes) {
          best_votes = v;
          best_off = off;
        }
      hits.push_back({id, best_off, best_votes});
    }
    std::sort(hits.begin(), hits.end(), [](const Hit &a, const Hit &b) {
      return a.votes != b.votes ? a.votes > b.votes : a.audio_id < b.audio_id;
    });
    return hits;
  }

  void save(std::ostream &os) const {
    io::write_u32(os, kIndexMagic);
    io::write_u32(os, kVersion);
    io::write_u32(os, params_.m);
    io::write_u32(os, params_.big_m);
    io::write_u32(os, static_cast<std::uint32_t>(postings_.size()));
    std::vector<std::uint32_t> keys;
    keys.reserve(postings_.size());
    for (const auto &[k, v] : postings_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (std::uint32_t k : keys) {
      auto v = postings_.at(k);
      std::sort(v.begin(), v.end(), [](const Posting &a, const Posting &b) {
        return a.audio_id != b.audio_id ? a.audio_id < b.audio_id : a.anchor < b.anchor;
      });
      io::write_u32(os, k);
      io::write_u32(os, static_cast<std::uint32_t>(v.size()));
      for (const Posting &p : v) {
        io::write_u32(os, p.audio_id);
        io::write_i32(os, p.anchor);
      }
    }
  }

  static SignatureIndex load(std::istream &is) {
    if (io::read_u32(is) != kIndexMagic) throw std::runtime_error("index load: bad magic");
    if (io::read_u32(is) != kVersion) throw std::runtime_error("index load: bad version");
    SignatureParams p;
    p.m = static_cast<std::uint8_t>(io::read_u32(is));
    p.big_m = static_cast<std::uint8_t>(io::read_u32(is));
    SignatureIndex ix(p);
    std::uint32_t n_keys = io::read_u32(is);
    for (std::uint32_t i = 0; i < n_keys; ++i) {
      std::uint32_t key = io::read_u32(is);
      std::uint32_t n = io::read_u32(is);
      auto &v = ix.postings_[key];
      for (std::uint32_t j = 0; j < n; ++j) {
        Posting post{};
        post.audio_id = io::read_u32(is);
        post.anchor = io::read_i32(is);
        v.push_back(post);
        ix.ids_.insert(post.audio_id);
      }
    }
    return ix;
  }

 private:
  static constexpr std::uint32_t kIndexMagic = 0x58494644;  // "DFIX"
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::uint32_t> candidate_keys(const Signature &s, int tolerance) const {
    if (tolerance == 0) return {pack_key(s, params_)};
    std::vector<std::uint32_t> keys;
    for (int db = -tolerance; db <= tolerance; ++db) {
      int dtb = s.dt_b + db;
      if (dtb < params_.m || dtb >= params_.big_m) continue;
      for (int df = -tolerance; df <= tolerance; ++df) {
        int dtf = s.dt_f + df;
        if (dtf < params_.m || dtf >= params_.big_m) continue;
        Signature v = s;
        v.dt_b = static_cast<std::uint8_t>(dtb);
        v.dt_f = static_cast<std::uint8_t>(dtf);
        keys.push_back(pack_key(v, params_));
      }
    }
    return keys;
  }

  SignatureParams params_;
  std::unordered_map<std::uint32_t, std::vector<Posting>> postings_;
  std::set<std::uint32_t> ids_;
  bool sorted_ = false;
};

/// Fused signature set of frequently repeated segments, with anchors rebased
/// to relative timestamps.
struct DuplicateSet {
  std::vector<Signature> signatures;  // anchor holds the relative timestamp
  std::size_t threshold = 5;
  SignatureParams params;
};

inline constexpr std::size_t kDefaultMatchThreshold = 5;

/// Cross-matches the corpus and fuses the signatures that match consistently
/// across at least min_matches audios, deduplicated at identical (key,
/// relative timestamp).
inline DuplicateSet build_duplicate_set(
    const std::vector<std::pair<std::uint32_t, std::vector<Signature>>> &corpus,
    std::size_t min_matches = 10, std::size_t threshold = kDefaultMatchThreshold,
    SignatureParams p = {}) {
  if (corpus.empty()) throw std::invalid_argument("build_duplicate_set: empty corpus");
  SignatureIndex ix(p);
  for (const auto &[id, sigs] : corpus) ix.add(id, sigs);

  DuplicateSet dup;
  dup.threshold = threshold;
  dup.params = p;
  std::set<std::pair<std::uint32_t, std::int32_t>> seen;  // (key, relative timestamp)

  for (const auto &[id, sigs] : corpus) {
    // temporally consistent partners of this audio
    auto hits = ix.query(sigs);
    std::map<std::uint32_t, std::int32_t> partner_offset;
    for (const auto &h : hits)
      if (h.audio_id != id && h.votes >= threshold) partner_offset[h.audio_id] = h.offset;
    if (partner_offset.size() + 1 < min_matches) continue;

    // signatures shared (at the consistent offset) with enough partners
    std::map<std::uint32_t, std::set<std::pair<std::uint32_t, std::int32_t>>> partner_sigs;
    for (const auto &[pid, psigs] : corpus) {
      if (!partner_offset.count(pid)) continue;
      auto &bag = partner_sigs[pid];
      for (const auto &s : psigs) bag.insert({pack_key(s, p), s.anchor});
    }
    std::vector<const Signature *> group;
    for (const auto &s : sigs) {
      std::size_t shared = 1;
      std::uint32_t key = pack_key(s, p);
      for (const auto &[pid, off] : partner_offset)
        if (partner_sigs[pid].count({key, s.anchor + off})) ++shared;
      if (shared >= min_matches) group.push_back(&s);
    }
    if (group.empty()) continue;
    std::int32_t base = group[0]->anchor;
    for (const Signature *s : group) base = std::min(base, s->anchor);
    for (const Signature *s : group) {
      std::int32_t rel = s->anchor - base;
      if (!seen.insert({pack_key(*s, p), rel}).second) continue;
      Signature fused = *s;
      fused.anchor = rel;
      dup.signatures.push_back(fused);
    }
  }
  return dup;
}

struct DuplicateVerdict {
  bool is_duplicate;
  std::size_t score;
};

/// Best Hough vote count of sigs against the fused set; flagged when the
/// score reaches the set's threshold.
inline DuplicateVerdict is_duplicate(const std::vector<Signature> &sigs, const DuplicateSet &dup) {
  std::unordered_map<std::uint32_t, std::vector<std::int32_t>> fused;
  for (const auto &s : dup.signatures) fused[pack_key(s, dup.params)].push_back(s.anchor);
  std::map<std::int32_t, std::size_t> bins;
  for (const auto &s : sigs) {
    auto it = fused.find(pack_key(s, dup.params));
    if (it == fused.end()) continue;
    for (std::int32_t rel : it->second) bins[rel - s.anchor]++;
  }
  std::size_t best = 0;
  for (const auto &[off, v] : bins) best = std::max(best, v);
  return {best >= dup.threshold, best};
}

inline constexpr std::uint32_t kSigMagic = 0x47495344;  // "DSIG"
inline constexpr std::uint32_t kSigVersion = 1;

/// Signature file: header (magic, version, m, M, count) + (key u32, anchor u32)
/// records, little-endian. The key's top 6 bits are unused.
inline void save_signatures(std::ostream &os, const std::vector<Signature> &sigs,
                            SignatureParams p = {}) {
  io::write_u32(os, kSigMagic);
  io::write_u32(os, kSigVersion);
  io::write_u32(os, p.m);
  io::write_u32(os, p.big_m);
  io::write_u32(os, static_cast<std::uint32_t>(sigs.size()));
  for (const auto &s : sigs) {
    io::write_u32(os, pack_key(s, p));
    io::write_u32(os, static_cast<std::uint32_t>(s.anchor));
  }
}

inline std::vector<Signature> load_signatures(std::istream &is, SignatureParams *out_params = nullptr) {
  if (io::read_u32(is) != kSigMagic) throw std::runtime_error("load_signatures: bad magic");
  if (io::read_u32(is) != kSigVersion) throw std::runtime_error("load_signatures: bad version");
  SignatureParams p;
  p.m = static_cast<std::uint8_t>(io::read_u32(is));
  p.big_m = static_cast<std::uint8_t>(io::read_u32(is));
  if (out_params) *out_params = p;
  std::uint32_t n = io::read_u32(is);
  std::vector<Signature> sigs;
  sigs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t key = io::read_u32(is);
    Signature s = unpack_key(key, p);
    s.anchor = static_cast<std::int32_t>(io::read_u32(is));
    sigs.push_back(s);
  }
  return sigs;
}

/// Full pipeline from a waveform to its signature list.
inline std::vector<Signature> fingerprint_waveform(const std::vector<double> &samples,
                                                   std::uint32_t sample_rate,
                                                   SignatureParams p = {}) {
  return extract_signatures(extract_constellation(mel_spectrogram(samples, sample_rate)), p);
}

}  // namespace duplexkit::fp
