#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "duplexkit/alignment.hpp"
#include "duplexkit/layout.hpp"
#include "duplexkit/rqt.hpp"

namespace duplexkit::duplex {

using TokenId = layout::TokenId;

enum class Mode { Dialogue, Asr, Tts };

/// Step-wise model interface driven by the engine: text logits first, then the
/// depth chain fed with each committed token, then the full row committed.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual const std::vector<std::size_t> &cardinalities() const = 0;
  virtual rqt::Vec text_logits() = 0;
  virtual rqt::Vec depth_next(TokenId token_for_prev_stream) = 0;
  virtual void commit_row(const std::vector<TokenId> &row) = 0;
  std::size_t streams() const { return cardinalities().size(); }
};

/// Adapter running a cached RqtSession behind the StepModel interface.
class RqtStepModel : public StepModel {
 public:
  explicit RqtStepModel(const rqt::RqtModel &model) : model_(model), session_(model) {}

  const std::vector<std::size_t> &cardinalities() const override {
    return model_.config().cardinalities;
  }
  rqt::Vec text_logits() override { return session_.text_logits(); }
  rqt::Vec depth_next(TokenId t) override { return session_.depth_next(t); }
  void commit_row(const std::vector<TokenId> &row) override { session_.commit_row(row); }

 private:
  const rqt::RqtModel &model_;
  rqt::RqtSession session_;
};

/// Keeps the long-run PAD fraction near a target by bumping the PAD/EPAD
/// logits when the running average falls below it.
struct PadController {
  double target_rate = 0.65;
  double bonus = 2.0;  // logit units
  std::size_t pad_seen = 0;
  std::size_t total_seen = 0;

  double running_fraction() const {
    return total_seen == 0 ? 0.0 : static_cast<double>(pad_seen) / static_cast<double>(total_seen);
  }

  bool wants_bonus() const { return total_seen > 0 && running_fraction() < target_rate; }

  void observe(bool was_pad) {
    ++total_seen;
    if (was_pad) ++pad_seen;
  }
};

struct EngineConfig {
  Mode mode = Mode::Dialogue;
  std::size_t q_levels = 8;  // audio streams per speaker
  TokenId pad_id = 1;
  TokenId epad_id = 2;
  std::size_t text_delay_steps = 25;  // 2 s at 12.5 Hz (ASR/TTS modes)
  double temperature = 0.8;
  double pad_target_rate = 0.65;
  double pad_bonus = 2.0;
  std::uint32_t seed = 0;
  double frame_ms = 80.0;
};

struct StepEvents {
  bool epad_forced = false;
  bool queue_exhausted = false;
};

struct DialogueOutput {
  TokenId text = 0;
  std::vector<TokenId> agent_audio;
  StepEvents events;
};

struct TtsOutput {
  TokenId text = 0;
  std::vector<TokenId> audio;
  bool finished = false;
  StepEvents events;
};

struct AsrWord {
  std::vector<TokenId> tokens;
  double start_ms = 0.0;  // audio-aligned; always a multiple of frame_ms
};

/// Streaming inference: samples the model-owned streams, teacher-forces the
/// rest, and records the grid row by row. One engine per session.
class Engine {
 public:
  Engine(StepModel &model, EngineConfig cfg) : cfg_(cfg), model_(model), rng_(cfg.seed) {
    const std::size_t k = model.streams();
    const std::size_t expected =
        cfg_.mode == Mode::Dialogue ? 2 * cfg_.q_levels + 1 : cfg_.q_levels + 1;
    if (k != expected)
      throw std::invalid_argument("engine: model has " + std::to_string(k) +
                                  " streams, mode needs " + std::to_string(expected));
    pad_.target_rate = cfg_.pad_target_rate;
    pad_.bonus = cfg_.pad_bonus;
  }

  const layout::TokenGrid &grid() const { return grid_; }
  std::size_t step_count() const { return grid_.steps(); }
  Mode mode() const { return cfg_.mode; }

  /// Next sampled text token is EPAD regardless of logits (one-shot).
  void force_epad() {
    if (cfg_.mode != Mode::Dialogue) throw std::logic_error("force_epad: dialogue mode only");
    force_epad_ = true;
  }

  /// One full-duplex step: streams 0..Q sampled (text + agent audio), streams
  /// Q+1..2Q overwritten with the user's tokens.
  DialogueOutput step_dialogue(const std::vector<TokenId> &user_tokens) {
    if (cfg_.mode != Mode::Dialogue) throw std::logic_error("step_dialogue: wrong mode");
    if (user_tokens.size() != cfg_.q_levels)
      throw std::invalid_argument("step_dialogue: need Q user tokens");
    const auto &card = model_.cardinalities();
    for (std::size_t q = 0; q < cfg_.q_levels; ++q)
      if (user_tokens[q] < 0 ||
          static_cast<std::size_t>(user_tokens[q]) >= card[1 + cfg_.q_levels + q])
        throw std::invalid_argument("step_dialogue: user token out of range");

    DialogueOutput out;
    std::vector<TokenId> row;
    rqt::Vec l = model_.text_logits();
    TokenId text = force_epad_ ? cfg_.epad_id : rqt::sample_token(l, cfg_.temperature, rng_);
    out.events.epad_forced = force_epad_;
    force_epad_ = false;
    row.push_back(text);
    out.text = text;
    for (std::size_t k = 1; k < model_.streams(); ++k) {
      l = model_.depth_next(row.back());
      TokenId tok;
      if (k <= cfg_.q_levels) {
        tok = rqt::sample_token(l, cfg_.temperature, rng_);
        out.agent_audio.push_back(tok);
      } else {
        tok = user_tokens[k - 1 - cfg_.q_levels];  // teacher forcing
      }
      row.push_back(tok);
    }
    commit(row);
    return out;
  }

  /// ASR: audio teacher-forced, text sampled greedily. Returns the text token
  /// once text_delay_steps of audio lag have been consumed.
  std::optional<TokenId> step_asr(const std::vector<TokenId> &audio_tokens) {
    if (cfg_.mode != Mode::Asr) throw std::logic_error("step_asr: wrong mode");
    if (audio_tokens.size() != cfg_.q_levels)
      throw std::invalid_argument("step_asr: need Q audio tokens");
    const auto &card = model_.cardinalities();
    for (std::size_t q = 0; q < cfg_.q_levels; ++q)
      if (audio_tokens[q] < 0 || static_cast<std::size_t>(audio_tokens[q]) >= card[1 + q])
        throw std::invalid_argument("step_asr: audio token out of range");
    const std::size_t s = grid_.steps();
    std::vector<TokenId> row;
    rqt::Vec l = model_.text_logits();
    TokenId text = rqt::sample_token(l, 0.0, rng_);  // greedy decoding
    row.push_back(text);
    for (std::size_t k = 1; k < model_.streams(); ++k) {
      model_.depth_next(row.back());  // prediction discarded, audio forced
      row.push_back(audio_tokens[k - 1]);
    }
    commit(row);
    if (s < cfg_.text_delay_steps) return std::nullopt;
    return text;
  }

  /// Words recovered from the emitted text stream; timestamps are audio
  /// aligned (emission step minus the text delay, times frame_ms).
  std::vector<AsrWord> asr_words() const {
    std::vector<AsrWord> words;
    align::SpecialTokens sp{cfg_.pad_id, cfg_.epad_id};
    align::TextStream ts;
    for (const auto &row : grid_.tokens) ts.tokens.push_back(row[0]);
    for (const auto &w : align::extract_words(ts, sp)) {
      if (w.start_index < cfg_.text_delay_steps) continue;
      words.push_back(
          {w.tokens, static_cast<double>(w.start_index - cfg_.text_delay_steps) * cfg_.frame_ms});
    }
    return words;
  }

  /// TTS: PAD/EPAD sampled freely (with the pad-controller bonus); any attempt
  /// to emit a word token is replaced by the next queued token, and a started
  /// word is forced to completion so its tokens stay contiguous.
  TtsOutput step_tts() {
    if (cfg_.mode != Mode::Tts) throw std::logic_error("step_tts: wrong mode");
    TtsOutput out;
    std::vector<TokenId> row;
    rqt::Vec l = model_.text_logits();
    TokenId text;
    if (!current_word_.empty()) {
      text = take_queued_token();
    } else {
      if (pad_.wants_bonus()) {
        if (static_cast<std::size_t>(cfg_.pad_id) < l.size()) l[cfg_.pad_id] += pad_.bonus;
        if (static_cast<std::size_t>(cfg_.epad_id) < l.size()) l[cfg_.epad_id] += pad_.bonus;
      }
      TokenId proposed = rqt::sample_token(l, cfg_.temperature, rng_);
      if (proposed == cfg_.pad_id || proposed == cfg_.epad_id) {
        text = proposed;
      } else if (!word_queue_.empty()) {
        current_word_ = word_queue_.front();
        word_queue_.pop_front();
        word_consumption_steps_.push_back(grid_.steps());
        text = take_queued_token();
      } else {
        text = cfg_.pad_id;  // queue exhausted
        out.events.queue_exhausted = true;
      }
    }
    pad_.observe(text == cfg_.pad_id || text == cfg_.epad_id);
    trailing_pads_ = text == cfg_.pad_id ? trailing_pads_ + 1 : 0;
    row.push_back(text);
    out.text = text;
    for (std::size_t k = 1; k < model_.streams(); ++k) {
      l = model_.depth_next(row.back());
      TokenId tok = rqt::sample_token(l, cfg_.temperature, rng_);
      out.audio.push_back(tok);
      row.push_back(tok);
    }
    commit(row);
    // done once the queue is drained and ~1 s of PAD has been sampled
    out.finished = word_queue_.empty() && current_word_.empty() && trailing_pads_ >= 13;
    return out;
  }

  void queue_word(const std::vector<TokenId> &tokens) {
    if (tokens.empty()) throw std::invalid_argument("queue_word: empty word");
    word_queue_.push_back(tokens);
  }

  /// Steps at which each queued word started being consumed.
  const std::vector<std::size_t> &word_consumption_steps() const {
    return word_consumption_steps_;
  }

  const PadController &pad_controller() const { return pad_; }

 private:
  void commit(const std::vector<TokenId> &row) {
    model_.commit_row(row);
    grid_.tokens.push_back(row);
  }

  TokenId take_queued_token() {
    TokenId t = current_word_.front();
    current_word_.erase(current_word_.begin());
    return t;
  }

  EngineConfig cfg_;
  StepModel &model_;
  layout::TokenGrid grid_;
  std::mt19937 rng_;
  PadController pad_;
  bool force_epad_ = false;
  std::deque<std::vector<TokenId>> word_queue_;
  std::vector<TokenId> current_word_;
  std::vector<std::size_t> word_consumption_steps_;
  std::size_t trailing_pads_ = 0;
};

}  // namespace duplexkit::duplex
