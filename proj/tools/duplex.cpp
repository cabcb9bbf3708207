// duplex: file-based front end for the token-plane pipelines. JSON on stdout,
// tables behind --pretty. Exit codes: 0 success, 1 data error, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "duplexkit/alignment.hpp"
#include "duplexkit/duplex.hpp"
#include "duplexkit/entropy.hpp"
#include "duplexkit/fingerprint.hpp"
#include "duplexkit/layout.hpp"
#include "duplexkit/rqt.hpp"
#include "duplexkit/rvq.hpp"
#include "duplexkit/wav.hpp"

using json = nlohmann::json;
using namespace duplexkit;

namespace {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> read_lines(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

json parse_json(const std::string &text, const std::string &where) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("invalid JSON in " + where);
  return j;
}

/// words.jsonl: one {"word": str, "tokens": [int], "start": seconds} per line.
std::vector<align::WordTiming> read_words(const std::string &path) {
  std::vector<align::WordTiming> words;
  for (const auto &line : read_lines(path)) {
    json j = parse_json(line, path);
    if (!j.contains("tokens") || !j.contains("start"))
      throw DataError(path + ": each word needs \"tokens\" and \"start\"");
    align::WordTiming w;
    w.tokens = j["tokens"].get<std::vector<align::TokenId>>();
    w.start_time_s = j["start"].get<double>();
    if (j.contains("word")) w.word = j["word"].get<std::string>();
    words.push_back(std::move(w));
  }
  return words;
}

/// streams.jsonl: one JSON array of token ids per line, one line per stream.
std::vector<std::vector<layout::TokenId>> read_streams(const std::string &path) {
  std::vector<std::vector<layout::TokenId>> streams;
  for (const auto &line : read_lines(path)) {
    json j = parse_json(line, path);
    if (!j.is_array()) throw DataError(path + ": each line must be a JSON array");
    streams.push_back(j.get<std::vector<layout::TokenId>>());
  }
  if (streams.empty()) throw DataError(path + ": no streams");
  return streams;
}

std::vector<std::size_t> parse_delays(const std::string &spec) {
  std::vector<std::size_t> delays;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      delays.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (...) {
      throw DataError("bad delay value '" + item + "'");
    }
  }
  if (delays.empty()) throw DataError("empty delay pattern");
  return delays;
}

layout::TokenGrid load_grid_file(const std::string &path, std::vector<std::size_t> *cards) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  try {
    return layout::load_grid(is, cards);
  } catch (const std::exception &e) {
    throw DataError(path + ": " + e.what());
  }
}

void emit(const json &j, bool pretty) {
  if (pretty)
    std::cout << j.dump(2) << "\n";
  else
    std::cout << j.dump() << "\n";
}

struct SessionLog {
  std::ofstream os;
  explicit SessionLog(const std::string &path) {
    if (path.empty()) return;
    os.open(path);
    if (!os) throw DataError("cannot open log " + path);
  }
  void row(std::size_t step, const char *mode, const json &forced, const json &sampled,
           const json &events) {
    if (!os.is_open()) return;
    json j = {{"step", step}, {"mode", mode}, {"forced", forced}, {"sampled", sampled},
              {"events", events}};
    os << j.dump() << "\n";
  }
};

struct ModelBundle {
  rqt::RqtConfig cfg;
  std::unique_ptr<rqt::RqtModel> model;
};

rqt::RqtConfig config_from_json(const json &j) {
  rqt::RqtConfig cfg;
  cfg.d_temporal = j.at("d_temporal").get<std::size_t>();
  cfg.d_depth = j.at("d_depth").get<std::size_t>();
  cfg.temporal_layers = j.at("temporal_layers").get<std::size_t>();
  cfg.depth_layers = j.at("depth_layers").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.cardinalities = j.at("cardinalities").get<std::vector<std::size_t>>();
  cfg.depthwise_params = j.at("depthwise_params").get<bool>();
  cfg.independent_heads = j.at("independent_heads").get<bool>();
  cfg.seed = j.at("seed").get<std::uint32_t>();
  return cfg;
}

json config_to_json(const rqt::RqtConfig &cfg) {
  return {{"d_temporal", cfg.d_temporal},
          {"d_depth", cfg.d_depth},
          {"temporal_layers", cfg.temporal_layers},
          {"depth_layers", cfg.depth_layers},
          {"heads", cfg.heads},
          {"cardinalities", cfg.cardinalities},
          {"depthwise_params", cfg.depthwise_params},
          {"independent_heads", cfg.independent_heads},
          {"seed", cfg.seed}};
}

/// Checkpoints travel as <path> (tensors) + <path>.json (architecture).
ModelBundle load_model(const std::string &path) {
  std::ifstream cfg_is(path + ".json");
  if (!cfg_is) throw DataError("cannot open " + path + ".json");
  std::stringstream ss;
  ss << cfg_is.rdbuf();
  ModelBundle b;
  b.cfg = config_from_json(parse_json(ss.str(), path + ".json"));
  try {
    b.model = std::make_unique<rqt::RqtModel>(b.cfg);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    b.model->load(is);
  } catch (const DataError &) {
    throw;
  } catch (const std::exception &e) {
    throw DataError(path + ": " + e.what());
  }
  return b;
}

void save_model(const std::string &path, rqt::RqtModel &model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  model.save(os);
  std::ofstream cfg_os(path + ".json");
  if (!cfg_os) throw DataError("cannot write " + path + ".json");
  cfg_os << config_to_json(model.config()).dump() << "\n";
}

std::vector<fp::Signature> fingerprint_file(const std::string &path) {
  wav::Audio a;
  try {
    a = wav::read_wav(path);
  } catch (const std::exception &e) {
    throw DataError(e.what());
  }
  try {
    return fp::fingerprint_waveform(a.samples, a.sample_rate);
  } catch (const std::exception &e) {
    throw DataError(path + ": " + e.what());
  }
}

// --- subcommand bodies --------------------------------------------------------

int cmd_latency(const std::string &pattern, double frame_ms) {
  layout::DelayPattern p{parse_delays(pattern)};
  double ms = layout::latency_ms(p, frame_ms);
  if (ms == static_cast<double>(static_cast<long long>(ms)))
    std::cout << static_cast<long long>(ms) << "\n";
  else
    std::cout << ms << "\n";
  return 0;
}

int cmd_align(const std::string &words_path, std::size_t frames, double rate,
              align::TokenId pad, align::TokenId epad, bool pretty) {
  auto words = read_words(words_path);
  align::SpecialTokens sp{pad, epad};
  align::TextStream ts;
  try {
    ts = align::build_text_stream(words, frames, sp, rate);
  } catch (const std::exception &e) {
    throw DataError(e.what());
  }
  if (pretty) {
    std::cout << "index  token\n";
    for (std::size_t i = 0; i < ts.tokens.size(); ++i)
      std::cout << i << "  " << ts.tokens[i] << "\n";
    std::cout << "pad fraction: " << align::pad_fraction(ts, sp) << "\n";
  } else {
    emit(json(ts.tokens), false);
  }
  return 0;
}

int cmd_layout(const std::string &streams_path, const std::string &delays_spec,
               const std::string &out_path, const std::string &inspect_path, bool pretty) {
  if (!inspect_path.empty()) {
    auto grid = load_grid_file(inspect_path, nullptr);
    for (const auto &row : grid.tokens) std::cout << json(row).dump() << "\n";
    return 0;
  }
  auto streams = read_streams(streams_path);
  layout::DelayPattern p{parse_delays(delays_spec)};
  layout::TokenGrid grid;
  try {
    grid = layout::apply_delay(streams, p);
  } catch (const std::exception &e) {
    throw DataError(e.what());
  }
  if (!out_path.empty()) {
    std::ofstream os(out_path, std::ios::binary);
    if (!os) throw DataError("cannot write " + out_path);
    layout::save_grid(os, grid);
  }
  emit({{"steps", grid.steps()},
        {"streams", grid.streams()},
        {"latency_ms", layout::latency_ms(p)}},
       pretty);
  return 0;
}

int cmd_entropy(const std::string &grid_path, std::size_t audio_streams,
                const entropy::EntropyParams &params, bool pretty) {
  auto grid = load_grid_file(grid_path, nullptr);
  entropy::ArtifactReport rep;
  try {
    rep = entropy::artifact_report(grid, params, audio_streams);
  } catch (const std::exception &e) {
    throw DataError(e.what());
  }
  json labels = json::array();
  for (auto l : rep.window_labels) labels.push_back(entropy::label_name(l));
  emit({{"windows", labels}, {"percentages", rep.percentages}}, pretty);
  return 0;
}

int cmd_rqt_train(const std::string &grid_path, const std::string &out_path, int iters,
                  double lr, std::uint32_t seed, std::size_t q_levels, layout::TokenId pad_id,
                  bool pretty) {
  std::vector<std::size_t> cards;
  auto grid = load_grid_file(grid_path, &cards);
  if (grid.steps() == 0) throw DataError("empty grid");
  for (std::size_t k = 0; k < cards.size(); ++k)
    if (cards[k] == 0) {
      layout::TokenId mx = 1;
      for (const auto &row : grid.tokens) mx = std::max(mx, row[k]);
      cards[k] = static_cast<std::size_t>(mx) + 1;
    }
  rqt::RqtConfig cfg;
  cfg.cardinalities = cards;
  cfg.seed = seed;
  rqt::RqtModel model(cfg);
  auto w = rqt::default_loss_weights(cards.size(), q_levels, pad_id);
  rqt::AdamTrainer trainer(model, lr);
  double initial = 0, final_loss = 0;
  try {
    for (int it = 0; it < iters; ++it) {
      model.zero_grad();
      double l = model.train_loss(grid, w, true);
      if (it == 0) initial = l;
      final_loss = l;
      trainer.step();
    }
  } catch (const std::exception &e) {
    throw DataError(e.what());
  }
  if (!out_path.empty()) save_model(out_path, model);
  emit({{"iterations", iters}, {"initial_loss", initial}, {"final_loss", final_loss}}, pretty);
  return 0;
}

int cmd_rqt_sample(const std::string &model_path, std::size_t steps, double temperature,
                   std::uint32_t seed, const std::string &out_path) {
  auto b = load_model(model_path);
  rqt::RqtSession sess(*b.model);
  std::mt19937 rng(seed);
  layout::TokenGrid grid;
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<layout::TokenId> row;
    row.push_back(rqt::sample_token(sess.text_logits(), temperature, rng));
    for (std::size_t k = 1; k < b.cfg.streams(); ++k)
      row.push_back(rqt::sample_token(sess.depth_next(row.back()), temperature, rng));
    sess.commit_row(row);
    grid.tokens.push_back(row);
  }
  if (!out_path.empty()) {
    std::ofstream os(out_path, std::ios::binary);
    if (!os) throw DataError("cannot write " + out_path);
    layout::save_grid(os, grid, b.cfg.cardinalities);
  }
  for (const auto &row : grid.tokens) std::cout << json(row).dump() << "\n";
  return 0;
}

int cmd_asr(const std::string &model_path, const std::string &audio_path,
            const duplex::EngineConfig &base_cfg, const std::string &log_path, bool pretty) {
  auto b = load_model(model_path);
  duplex::RqtStepModel step(*b.model);
  duplex::EngineConfig cfg = base_cfg;
  cfg.mode = duplex::Mode::Asr;
  cfg.q_levels = b.cfg.streams() - 1;
  duplex::Engine eng(step, cfg);
  SessionLog log(log_path);
  for (const auto &line : read_lines(audio_path)) {
    json j = parse_json(line, audio_path);
    auto audio = j.get<std::vector<duplex::TokenId>>();
    std::size_t s = eng.step_count();
    std::optional<duplex::TokenId> text;
    try {
      text = eng.step_asr(audio);
    } catch (const std::exception &e) {
      throw DataError(e.what());
    }
    log.row(s, "asr", json(audio), text ? json::array({*text}) : json::array(), json::array());
  }
  json words = json::array();
  for (const auto &w : eng.asr_words())
    words.push_back({{"tokens", w.tokens}, {"start_ms", w.start_ms}});
  emit({{"steps", eng.step_count()}, {"words", words}}, pretty);
  return 0;
}

int cmd_tts(const std::string &model_path, const std::string &words_path, std::size_t max_steps,
            const duplex::EngineConfig &base_cfg, const std::string &log_path, bool pretty) {
  auto b = load_model(model_path);
  duplex::RqtStepModel step(*b.model);
  duplex::EngineConfig cfg = base_cfg;
  cfg.mode = duplex::Mode::Tts;
  cfg.q_levels = b.cfg.streams() - 1;
  duplex::Engine eng(step, cfg);
  for (const auto &w : read_words(words_path)) {
    if (w.tokens.empty()) throw DataError("empty word in " + words_path);
    eng.queue_word(w.tokens);
  }
  SessionLog log(log_path);
  std::vector<duplex::TokenId> text;
  bool finished = false;
  for (std::size_t s = 0; s < max_steps && !finished; ++s) {
    duplex::TtsOutput out;
    try {
      out = eng.step_tts();
    } catch (const std::exception &e) {
      throw DataError(e.what());
    }
    text.push_back(out.text);
    finished = out.finished;
    json events = json::array();
    if (out.events.queue_exhausted) events.push_back("queue_exhausted");
    json sampled = json::array({out.text});
    for (auto a : out.audio) sampled.push_back(a);
    log.row(s, "tts", json::array(), sampled, events);
  }
  emit({{"finished", finished},
        {"text", text},
        {"steps", text.size()},
        {"consumption_steps", eng.word_consumption_steps()},
        {"pad_fraction", eng.pad_controller().running_fraction()}},
       pretty);
  return 0;
}

int cmd_dialogue(const std::string &model_path, const std::string &user_path,
                 const duplex::EngineConfig &base_cfg, const std::string &log_path,
                 bool pretty) {
  auto b = load_model(model_path);
  if (b.cfg.streams() < 3 || (b.cfg.streams() - 1) % 2 != 0)
    throw DataError("dialogue needs a model with 2Q+1 streams");
  duplex::RqtStepModel step(*b.model);
  duplex::EngineConfig cfg = base_cfg;
  cfg.mode = duplex::Mode::Dialogue;
  cfg.q_levels = (b.cfg.streams() - 1) / 2;
  duplex::Engine eng(step, cfg);
  SessionLog log(log_path);
  std::vector<duplex::TokenId> text;
  json audio_rows = json::array();
  for (const auto &line : read_lines(user_path)) {
    json j = parse_json(line, user_path);
    auto user = j.get<std::vector<duplex::TokenId>>();
    std::size_t s = eng.step_count();
    duplex::DialogueOutput out;
    try {
      out = eng.step_dialogue(user);
    } catch (const std::exception &e) {
      throw DataError(e.what());
    }
    text.push_back(out.text);
    audio_rows.push_back(out.agent_audio);
    json events = json::array();
    if (out.events.epad_forced) events.push_back("epad_forced");
    json sampled = json::array({out.text});
    for (auto a : out.agent_audio) sampled.push_back(a);
    log.row(s, "dialogue", json(user), sampled, events);
  }
  emit({{"steps", eng.step_count()}, {"text", text}, {"agent_audio", audio_rows}}, pretty);
  return 0;
}

int cmd_fp_index(const std::vector<std::string> &clips, const std::string &out_path,
                 bool pretty) {
  fp::SignatureIndex ix;
  std::size_t total = 0;
  for (std::uint32_t id = 0; id < clips.size(); ++id) {
    auto sigs = fingerprint_file(clips[id]);
    total += sigs.size();
    ix.add(id, sigs);
  }
  std::ofstream os(out_path, std::ios::binary);
  if (!os) throw DataError("cannot write " + out_path);
  ix.save(os);
  emit({{"indexed", clips.size()}, {"signatures", total}}, pretty);
  return 0;
}

int cmd_fp_query(const std::string &index_path, const std::string &audio_path, int tolerance,
                 bool pretty) {
  std::ifstream is(index_path, std::ios::binary);
  if (!is) throw DataError("cannot open " + index_path);
  fp::SignatureIndex ix;
  try {
    ix = fp::SignatureIndex::load(is);
  } catch (const std::exception &e) {
    throw DataError(index_path + ": " + e.what());
  }
  auto sigs = fingerprint_file(audio_path);
  json results = json::array();
  for (const auto &h : ix.query(sigs, tolerance))
    results.push_back({{"audio_id", h.audio_id}, {"offset", h.offset}, {"votes", h.votes}});
  emit({{"results", results}}, pretty);
  return 0;
}

int cmd_fp_dedup(const std::vector<std::string> &clips, const std::string &out_path,
                 std::size_t min_matches, std::size_t threshold, bool pretty) {
  std::vector<std::pair<std::uint32_t, std::vector<fp::Signature>>> corpus;
  for (std::uint32_t id = 0; id < clips.size(); ++id)
    corpus.push_back({id, fingerprint_file(clips[id])});
  fp::DuplicateSet dup;
  try {
    dup = fp::build_duplicate_set(corpus, min_matches, threshold);
  } catch (const std::exception &e) {
    throw DataError(e.what());
  }
  if (!out_path.empty()) {
    std::ofstream os(out_path, std::ios::binary);
    if (!os) throw DataError("cannot write " + out_path);
    fp::save_signatures(os, dup.signatures, dup.params);
  }
  json results = json::array();
  for (std::uint32_t id = 0; id < clips.size(); ++id) {
    auto v = fp::is_duplicate(corpus[id].second, dup);
    results.push_back({{"audio", clips[id]}, {"duplicate", v.is_duplicate}, {"score", v.score}});
  }
  emit({{"fused_signatures", dup.signatures.size()}, {"results", results}}, pretty);
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Token-plane toolkit for full-duplex speech-text modeling"};
  app.require_subcommand(1);
  bool pretty = false;
  app.add_flag("--pretty", pretty, "human-readable output instead of compact JSON");

  // latency
  auto *latency = app.add_subcommand("latency", "theoretical latency of a delay pattern");
  std::string pattern;
  double frame_ms = 80.0;
  latency->add_option("--pattern", pattern, "comma-separated per-stream delays")->required();
  latency->add_option("--frame-ms", frame_ms, "milliseconds per step (default 80)");

  // align
  auto *align_cmd = app.add_subcommand("align", "build a frame-aligned text stream");
  std::string words_path;
  std::size_t frames = 0;
  double rate = 12.5;
  align::TokenId pad_tok = 0, epad_tok = 1;
  align_cmd->add_option("--words", words_path, "JSONL word timings")->required();
  align_cmd->add_option("--frames", frames, "stream length in frames")->required();
  align_cmd->add_option("--rate", rate, "frame rate in Hz (default 12.5)");
  align_cmd->add_option("--pad", pad_tok, "PAD token id (default 0)");
  align_cmd->add_option("--epad", epad_tok, "EPAD token id (default 1)");

  // layout
  auto *layout_cmd = app.add_subcommand("layout", "apply a delay pattern or inspect a grid");
  std::string streams_path, delays_spec, grid_out, inspect_path;
  layout_cmd->add_option("--streams", streams_path, "JSONL streams, one array per line");
  layout_cmd->add_option("--delays", delays_spec, "comma-separated per-stream delays");
  layout_cmd->add_option("--output", grid_out, "write the packed binary grid here");
  layout_cmd->add_option("--inspect", inspect_path, "print a binary grid as JSONL rows");

  // entropy
  auto *entropy_cmd = app.add_subcommand("entropy", "entropy-spectrum artifact report");
  std::string entropy_grid;
  std::size_t audio_streams = 8;
  entropy::EntropyParams eparams;
  entropy_cmd->add_option("--grid", entropy_grid, "binary token grid")->required();
  entropy_cmd->add_option("--audio-streams", audio_streams, "audio columns after text (default 8)");
  entropy_cmd->add_option("--context", eparams.context, "tokens per entropy window (default 64)");
  entropy_cmd->add_option("--window", eparams.window, "steps per classification window (default 64)");
  entropy_cmd->add_option("--eta-flat", eparams.eta_flat, "flat-slope threshold (default 1e-3)");
  entropy_cmd->add_option("--eta-silence", eparams.eta_audio_silence,
                          "audio silence threshold in bits (default 2)");
  entropy_cmd->add_option("--eta-gibberish", eparams.eta_gibberish,
                          "text gibberish threshold in bits (default 3.5)");
  entropy_cmd->add_option("--eta-noise", eparams.eta_noise,
                          "codebook dispersion threshold (default 0.6)");

  // rqt-train
  auto *train_cmd = app.add_subcommand("rqt-train", "train the toy model on a grid");
  std::string train_grid, train_out;
  int iters = 100;
  double lr = 1e-3;
  std::uint32_t seed = 0;
  std::size_t q_levels = 8;
  layout::TokenId pad_id = 1;
  train_cmd->add_option("--grid", train_grid, "binary token grid")->required();
  train_cmd->add_option("--out", train_out, "checkpoint path (also writes <out>.json)");
  train_cmd->add_option("--iters", iters, "Adam iterations (default 100)");
  train_cmd->add_option("--lr", lr, "learning rate (default 1e-3)");
  train_cmd->add_option("--seed", seed, "init seed (default 0)");
  train_cmd->add_option("--q-levels", q_levels, "audio levels per speaker for loss weights (default 8)");
  train_cmd->add_option("--pad-id", pad_id, "PAD text id for loss down-weighting (default 1)");

  // rqt-sample
  auto *sample_cmd = app.add_subcommand("rqt-sample", "sample a token grid from a checkpoint");
  std::string sample_model, sample_out;
  std::size_t sample_steps = 16;
  double temperature = 0.8;
  std::uint32_t sample_seed = 0;
  sample_cmd->add_option("--model", sample_model, "checkpoint path")->required();
  sample_cmd->add_option("--steps", sample_steps, "steps to generate (default 16)");
  sample_cmd->add_option("--temperature", temperature, "sampling temperature (default 0.8)");
  sample_cmd->add_option("--seed", sample_seed, "sampling seed (default 0)");
  sample_cmd->add_option("--output", sample_out, "also write the grid as packed binary");

  // simulation modes share a config skeleton
  duplex::EngineConfig ecfg;
  auto add_engine_opts = [&](CLI::App *cmd) {
    cmd->add_option("--temperature", ecfg.temperature, "sampling temperature (default 0.8)");
    cmd->add_option("--seed", ecfg.seed, "sampling seed (default 0)");
    cmd->add_option("--pad-id", ecfg.pad_id, "PAD text id (default 1)");
    cmd->add_option("--epad-id", ecfg.epad_id, "EPAD text id (default 2)");
    cmd->add_option("--text-delay", ecfg.text_delay_steps, "text delay in steps (default 25)");
  };

  auto *asr_cmd = app.add_subcommand("asr", "streaming transcription over forced audio tokens");
  std::string asr_model, asr_audio, asr_log;
  asr_cmd->add_option("--model", asr_model, "checkpoint path")->required();
  asr_cmd->add_option("--audio", asr_audio, "JSONL audio rows, Q tokens per line")->required();
  asr_cmd->add_option("--log", asr_log, "JSONL session log path");
  add_engine_opts(asr_cmd);

  auto *tts_cmd = app.add_subcommand("tts", "streaming synthesis from queued words");
  std::string tts_model, tts_words, tts_log;
  std::size_t max_steps = 400;
  tts_cmd->add_option("--model", tts_model, "checkpoint path")->required();
  tts_cmd->add_option("--words", tts_words, "JSONL word list")->required();
  tts_cmd->add_option("--max-steps", max_steps, "step budget (default 400)");
  tts_cmd->add_option("--log", tts_log, "JSONL session log path");
  add_engine_opts(tts_cmd);

  auto *dlg_cmd = app.add_subcommand("dialogue", "full-duplex stepping with forced user streams");
  std::string dlg_model, dlg_user, dlg_log;
  dlg_cmd->add_option("--model", dlg_model, "checkpoint path")->required();
  dlg_cmd->add_option("--user", dlg_user, "JSONL user audio rows, Q tokens per line")->required();
  dlg_cmd->add_option("--log", dlg_log, "JSONL session log path");
  add_engine_opts(dlg_cmd);

  // fingerprinting
  auto *fpi_cmd = app.add_subcommand("fp-index", "fingerprint WAV clips into an inverted index");
  std::vector<std::string> fpi_clips;
  std::string fpi_out;
  fpi_cmd->add_option("--out", fpi_out, "index file path")->required();
  fpi_cmd->add_option("clips", fpi_clips, "WAV files, indexed as ids 0..n-1")->required();

  auto *fpq_cmd = app.add_subcommand("fp-query", "match a clip against an index");
  std::string fpq_index, fpq_audio;
  int tolerance = 0;
  fpq_cmd->add_option("--index", fpq_index, "index file")->required();
  fpq_cmd->add_option("--audio", fpq_audio, "WAV file to match")->required();
  fpq_cmd->add_option("--tolerance", tolerance, "frame-delta tolerance (default 0)");

  auto *fpd_cmd = app.add_subcommand("fp-dedup", "build a fused duplicate set and flag clips");
  std::vector<std::string> fpd_clips;
  std::string fpd_out;
  std::size_t min_matches = 10, threshold = fp::kDefaultMatchThreshold;
  fpd_cmd->add_option("--out", fpd_out, "write the fused signature set here");
  fpd_cmd->add_option("--min-matches", min_matches, "audios a segment must recur in (default 10)");
  fpd_cmd->add_option("--threshold", threshold, "votes for a temporal match (default 5)");
  fpd_cmd->add_option("clips", fpd_clips, "WAV corpus")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError &e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (latency->parsed()) return cmd_latency(pattern, frame_ms);
    if (align_cmd->parsed())
      return cmd_align(words_path, frames, rate, pad_tok, epad_tok, pretty);
    if (layout_cmd->parsed()) {
      if (inspect_path.empty() && (streams_path.empty() || delays_spec.empty())) {
        std::cerr << "layout: need --streams and --delays, or --inspect\n";
        return 2;
      }
      return cmd_layout(streams_path, delays_spec, grid_out, inspect_path, pretty);
    }
    if (entropy_cmd->parsed()) return cmd_entropy(entropy_grid, audio_streams, eparams, pretty);
    if (train_cmd->parsed()) {
      if (iters < 1) {
        std::cerr << "rqt-train: --iters must be >= 1\n";
        return 2;
      }
      return cmd_rqt_train(train_grid, train_out, iters, lr, seed, q_levels, pad_id, pretty);
    }
    if (sample_cmd->parsed())
      return cmd_rqt_sample(sample_model, sample_steps, temperature, sample_seed, sample_out);
    if (asr_cmd->parsed()) return cmd_asr(asr_model, asr_audio, ecfg, asr_log, pretty);
    if (tts_cmd->parsed()) return cmd_tts(tts_model, tts_words, max_steps, ecfg, tts_log, pretty);
    if (dlg_cmd->parsed()) return cmd_dialogue(dlg_model, dlg_user, ecfg, dlg_log, pretty);
    if (fpi_cmd->parsed()) return cmd_fp_index(fpi_clips, fpi_out, pretty);
    if (fpq_cmd->parsed()) return cmd_fp_query(fpq_index, fpq_audio, tolerance, pretty);
    if (fpd_cmd->parsed()) return cmd_fp_dedup(fpd_clips, fpd_out, min_matches, threshold, pretty);
  } catch (const DataError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
