#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "duplexkit/layout.hpp"

namespace duplexkit::entropy {

using TokenId = std::int32_t;

struct EntropyParams {
  std::size_t context = 64;  // C: tokens per entropy window
  std::size_t window = 64;   // omega: steps per classification window
  double eta_flat = 1e-3;
  double eta_audio_silence = 2.0;
  double eta_gibberish = 3.5;
  double eta_noise = 0.6;

  void validate() const {
    if (context < 1 || window < 1) throw std::invalid_argument("entropy: C and window must be >= 1");
    if (eta_flat <= 0 || eta_audio_silence <= 0 || eta_gibberish <= 0 || eta_noise <= 0)
      throw std::invalid_argument("entropy: thresholds must be positive");
  }
};

enum class ArtifactLabel { Gibberish, NoisyAudio, BackgroundNoise, RepetitiveText, Silence, None };

inline const char *label_name(ArtifactLabel l) {
  switch (l) {
    case ArtifactLabel::Gibberish: return "Gibberish";
    case ArtifactLabel::NoisyAudio: return "NoisyAudio";
    case ArtifactLabel::BackgroundNoise: return "BackgroundNoise";
    case ArtifactLabel::RepetitiveText: return "RepetitiveText";
    case ArtifactLabel::Silence: return "Silence";
    case ArtifactLabel::None: return "None";
  }
  return "?";
}

/// Shannon entropy in bits over the empirical token distribution of a window.
inline double window_entropy_bits(const TokenId *begin, std::size_t n) {
  std::map<TokenId, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) counts[begin[i]]++;
  double h = 0;
  for (const auto &[tok, c] : counts) {
    double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log2(p);
  }
  return h;
}

/// H_s over tokens[s-C, s) for s = C..len; output[i] covers the window
/// starting at index i.
inline std::vector<double> windowed_entropy(const std::vector<TokenId> &tokens, std::size_t c) {
  if (c < 1) throw std::invalid_argument("windowed_entropy: C must be >= 1");
  if (tokens.size() < c) throw std::invalid_argument("windowed_entropy: input shorter than C");
  std::vector<double> out;
  out.reserve(tokens.size() - c + 1);
  for (std::size_t i = 0; i + c <= tokens.size(); ++i)
    out.push_back(window_entropy_bits(tokens.data() + i, c));
  return out;
}

namespace detail {

inline double mean(const std::vector<double> &v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double stddev(const std::vector<double> &v) {
  if (v.size() < 2) return 0.0;
  double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

/// Least-squares slope of v against its index.
inline double ls_slope(const std::vector<double> &v) {
  std::size_t n = v.size();
  if (n < 2) return 0.0;
  double mx = (static_cast<double>(n) - 1) / 2.0;
  double my = mean(v);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = static_cast<double>(i) - mx;
    num += dx * (v[i] - my);
    den += dx * dx;
  }
  return num / den;
}

}  // namespace detail

/// Appendix-style artifact rules evaluated in a fixed precedence order:
/// Gibberish, Silence, BackgroundNoise, RepetitiveText, NoisyAudio, None.
inline ArtifactLabel classify_window(const std::vector<double> &h_text,
                                     const std::vector<std::vector<double>> &h_audio,
                                     const EntropyParams &p) {
  p.validate();
  if (h_text.size() != p.window) throw std::invalid_argument("classify_window: bad text window size");
  for (const auto &a : h_audio)
    if (a.size() != p.window) throw std::invalid_argument("classify_window: bad audio window size");

  double text_mean = detail::mean(h_text);
  bool text_zero = std::all_of(h_text.begin(), h_text.end(), [](double h) { return h == 0.0; });

  if (text_mean > p.eta_gibberish) return ArtifactLabel::Gibberish;

  std::vector<double> all_audio;
  std::vector<double> per_codebook_means;
  for (const auto &a : h_audio) {
    all_audio.insert(all_audio.end(), a.begin(), a.end());
    per_codebook_means.push_back(detail::mean(a));
  }
  double audio_median = detail::median(all_audio);

  if (text_zero && audio_median <= p.eta_audio_silence) return ArtifactLabel::Silence;
  if (text_zero && audio_median > p.eta_audio_silence) return ArtifactLabel::BackgroundNoise;
  if (std::abs(detail::ls_slope(h_text)) < p.eta_flat && text_mean > 0)
    return ArtifactLabel::RepetitiveText;
  if (detail::stddev(per_codebook_means) > p.eta_noise) return ArtifactLabel::NoisyAudio;
  return ArtifactLabel::None;
}

struct ArtifactReport {
  std::vector<ArtifactLabel> window_labels;
  // Percentage per category; Silence is folded into "No artifacts".
  std::map<std::string, double> percentages;
};

/// Entropy-spectrum artifact summary over a joint grid: column 0 is the text
/// stream, columns 1..n_audio_streams the agent's audio streams.
inline ArtifactReport artifact_report(const layout::TokenGrid &grid, const EntropyParams &p,
                                      std::size_t n_audio_streams) {
  p.validate();
  if (grid.streams() < 1 + n_audio_streams)
    throw std::invalid_argument("artifact_report: grid has too few streams");
  const std::size_t s_len = grid.steps();
  if (s_len < p.context + p.window)
    throw std::invalid_argument("artifact_report: grid too short for one window");

  auto column = [&](std::size_t k) {
    std::vector<TokenId> c(s_len);
    for (std::size_t s = 0; s < s_len; ++s) c[s] = grid.tokens[s][k];
    return c;
  };

  std::vector<double> h_text = windowed_entropy(column(0), p.context);
  std::vector<std::vector<double>> h_audio;
  for (std::size_t k = 1; k <= n_audio_streams; ++k)
    h_audio.push_back(windowed_entropy(column(k), p.context));

  ArtifactReport report;
  const std::size_t n_points = h_text.size();
  for (std::size_t w0 = 0; w0 + p.window <= n_points; w0 += p.window) {
    std::vector<double> tw(h_text.begin() + static_cast<std::ptrdiff_t>(w0),
                           h_text.begin() + static_cast<std::ptrdiff_t>(w0 + p.window));
    std::vector<std::vector<double>> aw;
    for (const auto &a : h_audio)
      aw.emplace_back(a.begin() + static_cast<std::ptrdiff_t>(w0),
                      a.begin() + static_cast<std::ptrdiff_t>(w0 + p.window));
    report.window_labels.push_back(classify_window(tw, aw, p));
  }

  const double n = static_cast<double>(report.window_labels.size());
  std::map<std::string, std::size_t> counts = {{"Gibberish", 0},
                                               {"NoisyAudio", 0},
                                               {"BackgroundNoise", 0},
                                               {"RepetitiveText", 0},
                                               {"No artifacts", 0}};
  for (ArtifactLabel l : report.window_labels) {
    if (l == ArtifactLabel::Silence || l == ArtifactLabel::None)
      counts["No artifacts"]++;
    else
      counts[label_name(l)]++;
  }
  for (const auto &[name, c] : counts)
    report.percentages[name] = n > 0 ? 100.0 * static_cast<double>(c) / n : 0.0;
  return report;
}

}  // namespace duplexkit::entropy
