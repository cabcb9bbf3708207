// Acceptance gate: runs every release criterion and prints one line per
// criterion. Exit code 0 only when all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "duplexkit/alignment.hpp"
#include "duplexkit/duplex.hpp"
#include "duplexkit/entropy.hpp"
#include "duplexkit/fingerprint.hpp"
#include "duplexkit/layout.hpp"
#include "duplexkit/rqt.hpp"
#include "duplexkit/rvq.hpp"

using namespace duplexkit;

namespace {

struct Checker {
  bool ok = true;
  void require(bool cond, const char *what) {
    if (!cond) {
      ok = false;
      std::printf("    failed: %s\n", what);
    }
  }
};

// --- 1: latency arithmetic ---------------------------------------------------

bool latency_values() {
  Checker c;
  c.require(layout::latency_ms({{0, 1, 2, 3, 4, 5, 6, 7}}) == 640.0, "[0,1..7] -> 640 ms");
  c.require(layout::latency_ms({{0, 2, 2, 2, 2, 2, 2, 2}}) == 240.0, "[0,2..2] -> 240 ms");
  c.require(layout::latency_ms({{0, 0, 0, 0, 0, 0, 0, 0}}) == 80.0, "[0,0..0] -> 80 ms");
  c.require(layout::latency_ms({{0, 1, 1, 1, 1, 1, 1, 1}}) == 160.0, "acoustic delay 1 -> 160 ms");
  return c.ok;
}

// --- 2: joint stream geometry ------------------------------------------------

bool joint_geometry() {
  Checker c;
  layout::StreamSpec with_text{8, true, {}, 80.0};
  layout::StreamSpec without{8, false, {}, 80.0};
  c.require(with_text.streams() == 17, "K = 17 with the text stream");
  c.require(without.streams() == 16, "K = 16 without the text stream");
  std::vector<layout::TokenId> text(6, 1);
  std::vector<std::vector<layout::TokenId>> audio(8, std::vector<layout::TokenId>(6, 3));
  auto grid = layout::joint_layout(text, audio, audio, 1);
  c.require(grid.streams() == 17, "joint grid rows hold 17 tokens per step");
  return c.ok;
}

// --- 3: RVQ bitrate and monotone reconstruction ------------------------------

bool rvq_bitrate_and_monotonicity() {
  Checker c;
  rvq::RvqConfig cfg;  // Q=8, N_A=2048, 12.5 Hz defaults
  c.require(rvq::bitrate_bps(cfg) == 1100.0, "8 x log2(2048) x 12.5 = 1100 bps");

  rvq::RvqConfig small;
  small.levels = 6;
  small.codebook_size = 32;
  small.dim = 4;
  small.seed = 7;
  std::mt19937 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<rvq::Vec> vecs(10000, rvq::Vec(small.dim));
  for (auto &v : vecs)
    for (auto &x : v) x = g(rng);
  auto cbs = rvq::learn_codebooks(vecs, small);

  // aggregate error with learned codebooks
  double prev_total = -1;
  bool monotone = true;
  for (std::size_t n = 1; n <= small.levels; ++n) {
    double total = 0;
    for (const auto &v : vecs)
      total += rvq::squared_dist(v, rvq::rvq_decode(rvq::rvq_encode(v, cbs, n), cbs));
    if (prev_total >= 0 && total > prev_total + 1e-9) monotone = false;
    prev_total = total;
  }
  c.require(monotone, "mean reconstruction error non-increasing in level count");

  // exact per-sample with a zero-vector option at every level
  auto zcbs = cbs;
  for (auto &cb : zcbs) cb.centroids[0] = rvq::Vec(small.dim, 0.0);
  bool per_sample = true;
  for (std::size_t i = 0; i < vecs.size() && per_sample; ++i) {
    double prev = -1;
    for (std::size_t n = 1; n <= small.levels; ++n) {
      double err =
          rvq::squared_dist(vecs[i], rvq::rvq_decode(rvq::rvq_encode(vecs[i], zcbs, n), zcbs));
      if (prev >= 0 && err > prev + 1e-12) per_sample = false;
      prev = err;
    }
  }
  c.require(per_sample, "per-sample monotone with zero-vector codebooks");
  return c.ok;
}

// --- 4: delay and flatten round-trips ----------------------------------------

bool layout_round_trips() {
  Checker c;
  std::mt19937 rng(2);
  std::uniform_int_distribution<std::size_t> kd(1, 17), td(1, 40), dd(0, 5);
  std::uniform_int_distribution<layout::TokenId> tok(1, 30);
  bool all = true;
  for (int trial = 0; trial < 1000 && all; ++trial) {
    std::size_t k = kd(rng), t = td(rng);
    std::vector<std::vector<layout::TokenId>> streams(k, std::vector<layout::TokenId>(t));
    for (auto &st : streams)
      for (auto &x : st) x = tok(rng);
    layout::DelayPattern p;
    for (std::size_t i = 0; i < k; ++i) p.delays.push_back(i == 0 ? 0 : dd(rng));
    auto grid = layout::apply_delay(streams, p);
    if (layout::remove_delay(grid, p) != streams) all = false;
    if (layout::unflatten(layout::flatten(grid), k).tokens != grid.tokens) all = false;
  }
  c.require(all, "delay/undelay and flatten/unflatten identities on 1000 grids");
  return c.ok;
}

// --- 5: alignment round-trip and boundary rule --------------------------------

bool alignment_round_trip() {
  Checker c;
  align::SpecialTokens sp{0, 1};
  std::mt19937 rng(3);
  bool all = true;
  for (int trial = 0; trial < 1000 && all; ++trial) {
    std::uniform_int_distribution<std::size_t> nw(0, 6), len(1, 3), gap(2, 4);
    std::vector<align::WordTiming> words;
    std::size_t idx = 2;
    std::size_t n = nw(rng);
    for (std::size_t i = 0; i < n; ++i) {
      align::WordTiming w;
      std::size_t l = len(rng);
      for (std::size_t j = 0; j < l; ++j)
        w.tokens.push_back(static_cast<align::TokenId>(2 + (i * 3 + j) % 50));
      w.start_time_s = static_cast<double>(idx) / 12.5;
      words.push_back(w);
      idx += l + gap(rng);
    }
    std::size_t frames = idx + 2;
    auto ts = align::build_text_stream(words, frames, sp);
    auto back = align::extract_words(ts, sp);
    if (back.size() != words.size()) {
      all = false;
      break;
    }
    for (std::size_t i = 0; i < words.size(); ++i)
      if (back[i].tokens != words[i].tokens ||
          back[i].start_index != align::time_to_index(words[i].start_time_s, 12.5))
        all = false;
  }
  c.require(all, "extract_words(build_text_stream(w)) == w on 1000 word lists");

  align::WordTiming early;
  early.tokens = {5, 6};
  early.start_time_s = 0.0;
  auto ts = align::build_text_stream({early}, 6, sp);
  c.require(ts.tokens == std::vector<align::TokenId>{0, 1, 5, 6, 0, 0},
            "t_i <= 1 puts EPAD at index 1 and shifts the word to index 2");
  return c.ok;
}

// --- 6: causality, gradient check, initial CE --------------------------------

rqt::RqtConfig toy_config(std::uint32_t seed) {
  rqt::RqtConfig cfg;
  cfg.d_temporal = 16;
  cfg.d_depth = 16;
  cfg.temporal_layers = 2;
  cfg.depth_layers = 2;
  cfg.heads = 2;
  cfg.cardinalities = {7, 5, 5, 5};
  cfg.seed = seed;
  return cfg;
}

layout::TokenGrid random_toy_grid(std::mt19937 &rng, const rqt::RqtConfig &cfg,
                                  std::size_t steps) {
  layout::TokenGrid g;
  g.tokens.assign(steps, std::vector<layout::TokenId>(cfg.streams()));
  for (auto &row : g.tokens)
    for (std::size_t k = 0; k < cfg.streams(); ++k)
      row[k] = static_cast<layout::TokenId>(rng() % cfg.cardinalities[k]);
  return g;
}

bool rqt_gradients_and_causality() {
  Checker c;
  auto cfg = toy_config(0);
  rqt::RqtModel model(cfg);
  std::mt19937 rng(4);

  // temporal causality on 100 random perturbations
  bool causal = true;
  for (int trial = 0; trial < 100 && causal; ++trial) {
    auto grid = random_toy_grid(rng, cfg, 5);
    std::size_t s = rng() % 5;
    auto grid2 = grid;
    std::size_t k = rng() % cfg.streams();
    grid2.tokens[s][k] =
        (grid2.tokens[s][k] + 1) % static_cast<layout::TokenId>(cfg.cardinalities[k]);
    rqt::RqtSession a(model), b(model);
    for (std::size_t t = 0; t < 5; ++t) {
      if (t <= s && a.context() != b.context()) causal = false;
      a.commit_row(grid.tokens[t]);
      b.commit_row(grid2.tokens[t]);
    }
  }
  c.require(causal, "temporal context untouched by same-step and future perturbations");

  // depth causality: logits for stream k ignore row positions >= k
  bool depth_causal = true;
  for (int trial = 0; trial < 100 && depth_causal; ++trial) {
    auto grid = random_toy_grid(rng, cfg, 1);
    auto row2 = grid.tokens[0];
    std::size_t j = 1 + rng() % 3;
    row2[j] = (row2[j] + 1) % static_cast<layout::TokenId>(cfg.cardinalities[j]);
    rqt::Vec z = model.temporal_forward({});
    auto la = model.step_logits(z, grid.tokens[0]);
    auto lb = model.step_logits(z, row2);
    for (std::size_t k = 0; k <= j; ++k)
      if (la.l[k] != lb.l[k]) depth_causal = false;
  }
  c.require(depth_causal, "depth logits independent of later within-row tokens");

  // gradient check against central finite differences
  auto grid = random_toy_grid(rng, cfg, 4);
  auto w = rqt::default_loss_weights(cfg.streams(), 3, 1);
  model.zero_grad();
  model.train_loss(grid, w, true);
  double worst = 0;
  model.visit_params([&](const std::string &, rqt::Param &p) {
    for (int n = 0; n < 2; ++n) {
      std::size_t i = rng() % p.size();
      double analytic = p.g[i];
      double orig = p.w[i];
      const double eps = 1e-5;
      p.w[i] = orig + eps;
      double lp = model.train_loss(grid, w, false);
      p.w[i] = orig - eps;
      double lm = model.train_loss(grid, w, false);
      p.w[i] = orig;
      double numeric = (lp - lm) / (2 * eps);
      double rel = std::abs(numeric - analytic) /
                   std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      worst = std::max(worst, rel);
    }
  });
  c.require(worst < 1e-4, "gradient check relative error < 1e-4");

  // near-uniform heads: per-token CE within 5% of ln N_k
  rqt::RqtModel flat(cfg);
  flat.visit_params([](const std::string &name, rqt::Param &p) {
    if (name.find("head") != std::string::npos)
      for (auto &x : p.w) x *= 1e-3;
  });
  bool ce_ok = true;
  auto probe = random_toy_grid(rng, cfg, 3);
  std::vector<std::vector<layout::TokenId>> prefix;
  for (std::size_t s = 0; s < probe.steps(); ++s) {
    rqt::Vec z = flat.temporal_forward(prefix);
    auto sl = flat.step_logits(z, probe.tokens[s]);
    for (std::size_t k = 0; k < cfg.streams(); ++k) {
      double ce = rqt::RqtModel::cross_entropy(sl.l[k], probe.tokens[s][k]);
      double ref = std::log(static_cast<double>(cfg.cardinalities[k]));
      if (std::abs(ce - ref) > 0.05 * ref) ce_ok = false;
    }
    prefix.push_back(probe.tokens[s]);
  }
  c.require(ce_ok, "initial per-token CE within 5% of ln N_k");
  return c.ok;
}

// --- 7: depth-joint vs independent-heads ablation -----------------------------

double train_on_task(bool independent, std::uint32_t seed) {
  rqt::RqtConfig cfg;
  cfg.d_temporal = 16;
  cfg.d_depth = 16;
  cfg.temporal_layers = 1;
  cfg.depth_layers = 1;
  cfg.heads = 2;
  cfg.cardinalities = {4, 8, 8, 8};
  cfg.independent_heads = independent;
  cfg.seed = seed;
  rqt::RqtModel model(cfg);

  // intra-step dependency: streams 2 and 3 share a fresh hidden value per
  // step, unpredictable from the temporal context; audio delayed by 2
  std::mt19937 rng(seed + 100);
  const std::size_t t_len = 40;
  std::vector<std::vector<layout::TokenId>> streams(4, std::vector<layout::TokenId>(t_len));
  for (std::size_t t = 0; t < t_len; ++t) {
    streams[0][t] = 1;
    streams[1][t] = static_cast<layout::TokenId>(1 + rng() % 7);
    layout::TokenId hidden = static_cast<layout::TokenId>(1 + rng() % 7);
    streams[2][t] = hidden;
    streams[3][t] = hidden;
  }
  auto grid = layout::apply_delay(streams, {{0, 2, 2, 2}});

  rqt::LossWeights w;
  w.alpha = {1.0, 1.0, 1.0};
  w.pad_id = -1;
  rqt::AdamTrainer trainer(model, 3e-3);
  double loss = 0;
  for (int it = 0; it < 150; ++it) {
    model.zero_grad();
    loss = model.train_loss(grid, w, true);
    trainer.step();
  }
  return loss;
}

bool depth_ablation() {
  Checker c;
  bool all = true;
  for (std::uint32_t seed = 1; seed <= 3; ++seed) {
    double joint = train_on_task(false, seed);
    double indep = train_on_task(true, seed);
    std::printf("    seed %u: depth-joint %.4f vs independent heads %.4f\n", seed, joint, indep);
    if (!(joint < indep)) all = false;
  }
  c.require(all, "depth-joint final loss strictly lower across 3 seeds");
  return c.ok;
}

// --- 8: engine streaming consistency ------------------------------------------

struct UniformStub : duplex::StepModel {
  std::vector<std::size_t> card;
  std::size_t depth_k = 0;
  const std::vector<std::size_t> &cardinalities() const override { return card; }
  rqt::Vec text_logits() override { return rqt::Vec(card[0], 0.0); }
  rqt::Vec depth_next(duplex::TokenId) override { return rqt::Vec(card[++depth_k], 0.0); }
  void commit_row(const std::vector<duplex::TokenId> &) override { depth_k = 0; }
};

struct EchoStub : duplex::StepModel {
  std::vector<std::size_t> card{16, 16};
  std::vector<duplex::TokenId> hist;
  const std::vector<std::size_t> &cardinalities() const override { return card; }
  rqt::Vec text_logits() override {
    duplex::TokenId t = hist.size() >= 25 ? hist[hist.size() - 25] : 1;
    rqt::Vec l(card[0], -100.0);
    l[static_cast<std::size_t>(t)] = 100.0;
    return l;
  }
  rqt::Vec depth_next(duplex::TokenId) override { return rqt::Vec(card[1], 0.0); }
  void commit_row(const std::vector<duplex::TokenId> &row) override { hist.push_back(row[1]); }
};

struct WordStub : duplex::StepModel {
  std::vector<std::size_t> card{16, 8};
  std::size_t depth_k = 0;
  const std::vector<std::size_t> &cardinalities() const override { return card; }
  rqt::Vec text_logits() override {
    rqt::Vec l(card[0], -100.0);
    l[3] = 100.0;  // always tries to start a word
    return l;
  }
  rqt::Vec depth_next(duplex::TokenId) override { return rqt::Vec(card[++depth_k], 0.0); }
  void commit_row(const std::vector<duplex::TokenId> &) override { depth_k = 0; }
};

bool engine_streaming() {
  Checker c;

  bool identical = true;
  for (std::uint32_t trial = 0; trial < 50 && identical; ++trial) {
    UniformStub s1, s2;
    s1.card.assign(5, 12);
    s2.card.assign(5, 12);
    duplex::EngineConfig cfg;
    cfg.q_levels = 2;
    cfg.temperature = 0.9;
    cfg.seed = trial;
    duplex::Engine a(s1, cfg), b(s2, cfg);
    std::mt19937 rng(trial);
    for (int s = 0; s < 15; ++s) {
      std::vector<duplex::TokenId> user = {static_cast<duplex::TokenId>(rng() % 12),
                                           static_cast<duplex::TokenId>(rng() % 12)};
      a.step_dialogue(user);
      b.step_dialogue(user);
    }
    if (a.grid().tokens != b.grid().tokens) identical = false;
  }
  c.require(identical, "stepwise runs bit-identical across 50 stub sessions");

  EchoStub echo;
  duplex::EngineConfig asr_cfg;
  asr_cfg.mode = duplex::Mode::Asr;
  asr_cfg.q_levels = 1;
  duplex::Engine asr(echo, asr_cfg);
  std::vector<duplex::TokenId> audio(40, 1);
  audio[2] = 5;
  audio[3] = 6;
  bool first_at_25 = true, transcript_ok = true;
  for (std::size_t s = 0; s < audio.size(); ++s) {
    auto r = asr.step_asr({audio[s]});
    if ((s < 25) != !r.has_value()) first_at_25 = false;
    if (r && *r != audio[s - 25]) transcript_ok = false;
  }
  c.require(first_at_25, "ASR first emission at step 25");
  c.require(transcript_ok, "ASR text equals the audio-aligned transcript after the delay");
  bool multiples = true;
  for (const auto &w : asr.asr_words())
    if (std::fmod(w.start_ms, 80.0) != 0.0) multiples = false;
  c.require(multiples && !asr.asr_words().empty(), "ASR timestamps are multiples of 80 ms");

  WordStub words;
  duplex::EngineConfig tts_cfg;
  tts_cfg.mode = duplex::Mode::Tts;
  tts_cfg.q_levels = 1;
  tts_cfg.temperature = 0.0;
  duplex::Engine tts(words, tts_cfg);
  tts.queue_word({10, 11});
  tts.queue_word({12});
  std::vector<duplex::TokenId> emitted;
  for (int s = 0; s < 30; ++s) {
    auto out = tts.step_tts();
    if (out.text != 1 && out.text != 2) emitted.push_back(out.text);
    if (out.finished) break;
  }
  c.require(emitted == std::vector<duplex::TokenId>{10, 11, 12},
            "TTS text output equals queued words in order");

  UniformStub pad_stub;
  pad_stub.card = {4, 8};
  duplex::EngineConfig pad_cfg;
  pad_cfg.mode = duplex::Mode::Tts;
  pad_cfg.q_levels = 1;
  pad_cfg.temperature = 1.0;
  pad_cfg.seed = 42;
  duplex::Engine pad_eng(pad_stub, pad_cfg);
  for (int i = 0; i < 6000; ++i) pad_eng.queue_word({3});
  for (int s = 0; s < 5000; ++s) pad_eng.step_tts();
  double f = pad_eng.pad_controller().running_fraction();
  std::printf("    pad fraction %.4f (target %.2f)\n", f, pad_cfg.pad_target_rate);
  c.require(std::abs(f - pad_cfg.pad_target_rate) <= 0.05,
            "pad controller within +/-0.05 of target");
  return c.ok;
}

// --- 9: entropy classifier -----------------------------------------------------

bool entropy_rules() {
  Checker c;
  std::vector<entropy::TokenId> constant(64, 7);
  c.require(entropy::windowed_entropy(constant, 64)[0] == 0.0, "constant -> 0 bits");
  std::vector<entropy::TokenId> two;
  for (int i = 0; i < 32; ++i) {
    two.push_back(1);
    two.push_back(2);
  }
  c.require(std::abs(entropy::windowed_entropy(two, 64)[0] - 1.0) < 1e-12, "2-symbol -> 1 bit");
  std::vector<entropy::TokenId> all;
  for (int i = 0; i < 64; ++i) all.push_back(i);
  c.require(std::abs(entropy::windowed_entropy(all, 64)[0] - 6.0) < 1e-12, "64 distinct -> 6 bits");

  entropy::EntropyParams p;
  p.window = 8;
  auto flat = [](double v) { return std::vector<double>(8, v); };
  std::vector<double> rising(8);
  for (std::size_t i = 0; i < 8; ++i) rising[i] = 0.5 + 0.25 * static_cast<double>(i);
  using L = entropy::ArtifactLabel;
  c.require(entropy::classify_window(flat(4.0), {flat(3.0), flat(3.0)}, p) == L::Gibberish,
            "Gibberish window");
  c.require(entropy::classify_window(flat(0.0), {flat(1.0), flat(1.0)}, p) == L::Silence,
            "Silence window");
  c.require(entropy::classify_window(flat(0.0), {flat(4.0), flat(4.0)}, p) == L::BackgroundNoise,
            "BackgroundNoise window");
  c.require(entropy::classify_window(flat(1.5), {flat(3.0), flat(3.0)}, p) == L::RepetitiveText,
            "RepetitiveText window");
  c.require(entropy::classify_window(rising, {flat(1.0), flat(3.0)}, p) == L::NoisyAudio,
            "NoisyAudio window");
  c.require(entropy::classify_window(rising, {flat(3.0), flat(3.0)}, p) == L::None,
            "None window");

  entropy::EntropyParams rp;
  rp.context = 4;
  rp.window = 4;
  layout::TokenGrid grid;
  grid.tokens.assign(19, {5, 1, 2});
  auto rep = entropy::artifact_report(grid, rp, 2);
  double total = 0;
  for (const auto &[name, pct] : rep.percentages) total += pct;
  c.require(std::abs(total - 100.0) < 1e-9, "report percentages partition to 100");
  c.require(rep.percentages.at("No artifacts") == 100.0, "Silence folds into no-artifacts");
  return c.ok;
}

// --- 10: fingerprinting --------------------------------------------------------

std::vector<double> tone_seq(std::mt19937 &rng, double seconds, std::uint32_t rate) {
  std::vector<double> w;
  w.reserve(static_cast<std::size_t>(seconds * rate));
  std::uniform_real_distribution<double> hz(300.0, 2800.0);
  while (w.size() < static_cast<std::size_t>(seconds * rate)) {
    double f = hz(rng);
    std::size_t n = rate / 4;  // 250 ms notes
    for (std::size_t i = 0; i < n; ++i)
      w.push_back(0.5 * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) /
                                 static_cast<double>(rate)));
  }
  return w;
}

bool fingerprint_dedup() {
  Checker c;
  std::mt19937 rng(5);

  // pack/unpack over 1e5 random signatures
  bool pack_ok = true;
  for (int i = 0; i < 100000 && pack_ok; ++i) {
    fp::Signature s{static_cast<std::uint8_t>(rng() % 64), static_cast<std::uint8_t>(rng() % 64),
                    static_cast<std::uint8_t>(rng() % 64),
                    static_cast<std::uint8_t>(4 + rng() % 16),
                    static_cast<std::uint8_t>(4 + rng() % 16), 0};
    std::uint32_t key = fp::pack_key(s);
    if (key >= (1u << 26)) pack_ok = false;
    fp::Signature u = fp::unpack_key(key);
    if (u.f_b != s.f_b || u.f_k != s.f_k || u.f_f != s.f_f || u.dt_b != s.dt_b ||
        u.dt_f != s.dt_f)
      pack_ok = false;
  }
  c.require(pack_ok, "pack/unpack exact on 1e5 signatures with keys < 2^26");

  // 100-clip corpus, 16 s segment planted in 12 clips
  const std::uint32_t rate = 16000;
  const std::size_t hop = rate / 40;
  auto plant = tone_seq(rng, 16.0, rate);
  std::vector<std::vector<fp::Signature>> sigs(100);
  for (std::uint32_t id = 0; id < 100; ++id) {
    auto clip = tone_seq(rng, 30.0, rate);
    if (id < 12) {
      std::size_t frame_off = 20 + rng() % 300;  // hop-aligned insertion
      std::copy(plant.begin(), plant.end(),
                clip.begin() + static_cast<std::ptrdiff_t>(frame_off * hop));
    }
    sigs[id] = fp::fingerprint_waveform(clip, rate);
  }

  fp::SignatureIndex ix;
  std::vector<std::pair<std::uint32_t, std::vector<fp::Signature>>> corpus;
  for (std::uint32_t id = 0; id < 100; ++id) {
    ix.add(id, sigs[id]);
    corpus.push_back({id, sigs[id]});
  }
  bool rank1 = true;
  for (std::uint32_t id = 0; id < 100 && rank1; ++id) {
    auto hits = ix.query(sigs[id]);
    if (hits.empty() || hits[0].audio_id != id || hits[0].offset != 0) rank1 = false;
  }
  c.require(rank1, "self-query rank-1 with offset 0 on all 100 clips");

  auto dup = fp::build_duplicate_set(corpus, 10);
  std::size_t flagged = 0, false_pos = 0;
  for (std::uint32_t id = 0; id < 100; ++id) {
    bool d = fp::is_duplicate(sigs[id], dup).is_duplicate;
    if (id < 12 && d) ++flagged;
    if (id >= 12 && d) ++false_pos;
  }
  std::printf("    flagged %zu/12 planted, %zu/88 false positives\n", flagged, false_pos);
  c.require(flagged == 12, "dedup removes 12/12 planted clips");
  c.require(false_pos == 0, "no false positives among the 88 clean clips");
  return c.ok;
}

}  // namespace

int main() {
  struct Criterion {
    const char *name;
    std::function<bool()> run;
  };
  const std::vector<Criterion> criteria = {
      {"1 latency arithmetic (640/240/80/160 ms)", latency_values},
      {"2 joint layout: 17 streams with text, 16 without", joint_geometry},
      {"3 RVQ bitrate 1100 bps and monotone reconstruction", rvq_bitrate_and_monotonicity},
      {"4 delay/flatten round-trips on 1000 grids", layout_round_trips},
      {"5 alignment round-trip and boundary rule", alignment_round_trip},
      {"6 causality, gradient check, initial CE", rqt_gradients_and_causality},
      {"7 depth-joint beats independent heads (3 seeds)", depth_ablation},
      {"8 engine streaming consistency", engine_streaming},
      {"9 entropy fixtures and artifact labels", entropy_rules},
      {"10 fingerprint round-trip, self-query, dedup", fingerprint_dedup},
  };

  int failures = 0;
  for (const auto &cr : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = cr.run();
    } catch (const std::exception &e) {
      std::printf("    exception: %s\n", e.what());
    }
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    std::printf("[%s] criterion %s (%lld ms)\n", ok ? "PASS" : "FAIL", cr.name,
                static_cast<long long>(ms));
    if (!ok) ++failures;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
