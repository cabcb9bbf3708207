#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace duplexkit::align {

using TokenId = std::int32_t;

struct SpecialTokens {
  TokenId pad_id;
  TokenId epad_id;

  void validate() const {
    if (pad_id == epad_id) throw std::invalid_argument("special tokens: pad_id == epad_id");
  }
};

/// A word's text tokens and its start time in seconds.
struct WordTiming {
  std::vector<TokenId> tokens;
  double start_time_s = 0.0;
  std::string word;  // optional label carried through from JSONL input
};

/// Frame-aligned text token sequence: word tokens at their start indices,
/// PAD elsewhere, EPAD marking end of padding before each word.
struct TextStream {
  std::vector<TokenId> tokens;
  double frame_rate_hz = 12.5;
};

inline std::size_t time_to_index(double t, double frame_rate_hz) {
  if (t < 0) throw std::invalid_argument("time_to_index: negative time");
  return static_cast<std::size_t>(std::floor(t * frame_rate_hz));
}

inline TextStream build_text_stream(const std::vector<WordTiming> &words, std::size_t frames,
                                    const SpecialTokens &sp, double frame_rate_hz = 12.5) {
  sp.validate();
  TextStream out;
  out.frame_rate_hz = frame_rate_hz;
  out.tokens.assign(frames, sp.pad_id);

  struct Placed {
    std::size_t start, end;  // [start, end)
    std::size_t word_index;
  };
  std::vector<Placed> placed;

  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto &w = words[i];
    if (w.tokens.empty())
      throw std::invalid_argument("build_text_stream: word " + std::to_string(i) + " has no tokens");
    std::size_t ti = time_to_index(w.start_time_s, frame_rate_hz);
    std::size_t start = ti;
    // Boundary rule: no room for EPAD at ti-1, so EPAD goes to index 1 and the
    // word's tokens shift right to start at index 2.
    bool boundary = ti <= 1;
    if (boundary) start = 2;
    std::size_t end = start + w.tokens.size();
    if (ti >= frames || end > frames)
      throw std::invalid_argument("build_text_stream: word " + std::to_string(i) +
                                  " does not fit in " + std::to_string(frames) + " frames");
    for (const auto &p : placed) {
      if (start < p.end && p.start < end)
        throw std::invalid_argument("build_text_stream: words " + std::to_string(p.word_index) +
                                    " and " + std::to_string(i) + " overlap");
    }
    std::size_t epad_at = boundary ? 1 : ti - 1;
    bool epad_hits_word = false;
    for (const auto &p : placed)
      if (epad_at >= p.start && epad_at < p.end) epad_hits_word = true;
    if (!epad_hits_word && epad_at < frames) out.tokens[epad_at] = sp.epad_id;
    for (std::size_t j = 0; j < w.tokens.size(); ++j) out.tokens[start + j] = w.tokens[j];
    placed.push_back({start, end, i});
  }
  return out;
}

struct ExtractedWord {
  std::vector<TokenId> tokens;
  std::size_t start_index;
};

/// Maximal runs of word tokens (anything that is neither PAD nor EPAD).
inline std::vector<ExtractedWord> extract_words(const TextStream &stream,
                                                const SpecialTokens &sp) {
  std::vector<ExtractedWord> out;
  std::size_t t = 0;
  const auto &w = stream.tokens;
  while (t < w.size()) {
    if (w[t] == sp.pad_id || w[t] == sp.epad_id) {
      ++t;
      continue;
    }
    ExtractedWord ew;
    ew.start_index = t;
    while (t < w.size() && w[t] != sp.pad_id && w[t] != sp.epad_id) ew.tokens.push_back(w[t++]);
    out.push_back(std::move(ew));
  }
  return out;
}

/// count(PAD)/T; EPAD does not count as padding.
inline double pad_fraction(const TextStream &stream, const SpecialTokens &sp) {
  if (stream.tokens.empty()) throw std::invalid_argument("pad_fraction: empty stream");
  std::size_t pads = 0;
  for (TokenId t : stream.tokens)
    if (t == sp.pad_id) ++pads;
  return static_cast<double>(pads) / static_cast<double>(stream.tokens.size());
}

}  // namespace duplexkit::align
