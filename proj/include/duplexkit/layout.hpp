#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "duplexkit/common.hpp"

namespace duplexkit::layout {

using TokenId = std::int32_t;

/// Reserved deterministic initial token; real vocabulary ids start at 1.
inline constexpr TokenId kInitialId = 0;

/// Joint stream geometry: two speakers with Q audio levels each plus an
/// optional text stream, K = 2Q+1 columns.
struct StreamSpec {
  std::size_t q_levels = 8;
  bool text_present = true;
  std::vector<std::size_t> cardinalities;  // N_k per joint stream
  double frame_ms = 80.0;

  std::size_t streams() const { return (text_present ? 1 : 0) + 2 * q_levels; }
};

struct DelayPattern {
  std::vector<std::size_t> delays;  // per-stream step delays
  std::int32_t text_delay_steps = 0;  // >0: text behind audio (ASR); <0: audio behind text (TTS)

  std::size_t max_delay() const {
    std::size_t m = 0;
    for (std::size_t d : delays) m = std::max(m, d);
    return m;
  }
};

/// S x K token matrix; rows are temporal steps.
struct TokenGrid {
  std::vector<std::vector<TokenId>> tokens;
  TokenId initial_id = kInitialId;

  std::size_t steps() const { return tokens.size(); }
  std::size_t streams() const { return tokens.empty() ? 0 : tokens[0].size(); }
};

/// Staggers stream k by delays[k] steps; the head of each delayed stream is
/// filled with initial_id and output length is T + max delay so no input token
/// is dropped.
inline TokenGrid apply_delay(const std::vector<std::vector<TokenId>> &streams,
                             const DelayPattern &pattern) {
  if (streams.size() != pattern.delays.size())
    throw std::invalid_argument("apply_delay: delay count != stream count");
  const std::size_t k_count = streams.size();
  std::size_t t_len = k_count ? streams[0].size() : 0;
  for (const auto &st : streams)
    if (st.size() != t_len) throw std::invalid_argument("apply_delay: ragged stream lengths");

  const std::size_t s_len = t_len + pattern.max_delay();
  TokenGrid grid;
  grid.tokens.assign(s_len, std::vector<TokenId>(k_count, kInitialId));
  for (std::size_t k = 0; k < k_count; ++k) {
    std::size_t tau = pattern.delays[k];
    for (std::size_t t = 0; t < t_len; ++t) grid.tokens[t + tau][k] = streams[k][t];
  }
  return grid;
}

/// Inverse of apply_delay. Verifies the initial_id head of each delayed stream
/// to catch pattern mismatches.
inline std::vector<std::vector<TokenId>> remove_delay(const TokenGrid &grid,
                                                      const DelayPattern &pattern) {
  const std::size_t k_count = grid.streams();
  if (k_count != pattern.delays.size())
    throw std::invalid_argument("remove_delay: delay count != stream count");
  const std::size_t max_d = pattern.max_delay();
  if (grid.steps() < max_d) throw std::invalid_argument("remove_delay: grid shorter than max delay");
  const std::size_t t_len = grid.steps() - max_d;

  for (std::size_t k = 0; k < k_count; ++k)
    for (std::size_t s = 0; s < pattern.delays[k]; ++s)
      if (grid.tokens[s][k] != grid.initial_id)
        throw std::invalid_argument("remove_delay: pattern mismatch at stream " +
                                    std::to_string(k));

  std::vector<std::vector<TokenId>> streams(k_count, std::vector<TokenId>(t_len));
  for (std::size_t k = 0; k < k_count; ++k)
    for (std::size_t t = 0; t < t_len; ++t) streams[k][t] = grid.tokens[t + pattern.delays[k]][k];
  return streams;
}

/// Per-stream delays for the joint sequence: text, then agent semantic +
/// acoustic (delayed tau), then the user's streams likewise. A signed text
/// delay shifts text behind audio (positive) or audio behind text (negative).
inline DelayPattern joint_delays(std::size_t q_levels, std::size_t tau,
                                 std::int32_t text_delay_steps = 0) {
  DelayPattern p;
  std::size_t text_d = text_delay_steps > 0 ? static_cast<std::size_t>(text_delay_steps) : 0;
  std::size_t audio_d = text_delay_steps < 0 ? static_cast<std::size_t>(-text_delay_steps) : 0;
  p.text_delay_steps = text_delay_steps;
  p.delays.push_back(text_d);
  for (std::size_t speaker = 0; speaker < 2; ++speaker) {
    p.delays.push_back(audio_d);  // semantic
    for (std::size_t q = 1; q < q_levels; ++q) p.delays.push_back(audio_d + tau);
  }
  return p;
}

/// Joint K = 2Q+1 grid: text, agent semantic, agent acoustic (delayed tau),
/// user semantic, user acoustic (delayed tau).
inline TokenGrid joint_layout(const std::vector<TokenId> &text,
                              const std::vector<std::vector<TokenId>> &agent,
                              const std::vector<std::vector<TokenId>> &user, std::size_t tau,
                              std::int32_t text_delay_steps = 0) {
  if (agent.size() != user.size())
    throw std::invalid_argument("joint_layout: speaker stream counts differ");
  if (agent.empty()) throw std::invalid_argument("joint_layout: no audio streams");
  std::vector<std::vector<TokenId>> streams;
  streams.push_back(text);
  for (const auto &s : agent) streams.push_back(s);
  for (const auto &s : user) streams.push_back(s);
  const std::size_t t_len = text.size();
  for (const auto &s : streams)
    if (s.size() != t_len) throw std::invalid_argument("joint_layout: length mismatch");
  return apply_delay(streams, joint_delays(agent.size(), tau, text_delay_steps));
}

/// Row-major flattening: the K tokens of step s precede those of step s+1.
inline std::vector<TokenId> flatten(const TokenGrid &grid) {
  std::vector<TokenId> out;
  out.reserve(grid.steps() * grid.streams());
  for (const auto &row : grid.tokens) out.insert(out.end(), row.begin(), row.end());
  return out;
}

inline TokenGrid unflatten(const std::vector<TokenId> &flat, std::size_t k_count) {
  if (k_count == 0 || flat.size() % k_count != 0)
    throw std::invalid_argument("unflatten: length not divisible by stream count");
  TokenGrid grid;
  grid.tokens.assign(flat.size() / k_count, std::vector<TokenId>(k_count));
  for (std::size_t s = 0; s < grid.tokens.size(); ++s)
    for (std::size_t k = 0; k < k_count; ++k) grid.tokens[s][k] = flat[s * k_count + k];
  return grid;
}

/// (max delay + 1) * frame_ms: the wait before the first fully-populated step.
inline double latency_ms(const DelayPattern &pattern, double frame_ms = 80.0) {
  return static_cast<double>(pattern.max_delay() + 1) * frame_ms;
}

inline constexpr std::uint32_t kGridMagic = 0x44524744;  // "DGRD"
inline constexpr std::uint32_t kGridVersion = 1;

/// Packed binary grid: header (magic, version, S, K, N_k...) then 16-bit
/// little-endian ids, row-major.
inline void save_grid(std::ostream &os, const TokenGrid &grid,
                      const std::vector<std::size_t> &cardinalities = {}) {
  io::write_u32(os, kGridMagic);
  io::write_u32(os, kGridVersion);
  io::write_u32(os, static_cast<std::uint32_t>(grid.steps()));
  io::write_u32(os, static_cast<std::uint32_t>(grid.streams()));
  for (std::size_t k = 0; k < grid.streams(); ++k)
    io::write_u32(os, k < cardinalities.size() ? static_cast<std::uint32_t>(cardinalities[k]) : 0);
  for (const auto &row : grid.tokens)
    for (TokenId t : row) {
      if (t < 0 || t > 0xffff) throw std::invalid_argument("save_grid: token id out of 16-bit range");
      io::write_u16(os, static_cast<std::uint16_t>(t));
    }
}

inline TokenGrid load_grid(std::istream &is, std::vector<std::size_t> *cardinalities = nullptr) {
  if (io::read_u32(is) != kGridMagic) throw std::runtime_error("load_grid: bad magic");
  if (io::read_u32(is) != kGridVersion) throw std::runtime_error("load_grid: bad version");
  std::uint32_t s_len = io::read_u32(is);
  std::uint32_t k_count = io::read_u32(is);
  if (cardinalities) cardinalities->clear();
  for (std::uint32_t k = 0; k < k_count; ++k) {
    std::uint32_t n = io::read_u32(is);
    if (cardinalities) cardinalities->push_back(n);
  }
  TokenGrid grid;
  grid.tokens.assign(s_len, std::vector<TokenId>(k_count));
  for (auto &row : grid.tokens)
    for (auto &t : row) t = static_cast<TokenId>(io::read_u16(is));
  return grid;
}

}  // namespace duplexkit::layout
