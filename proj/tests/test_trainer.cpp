// tests/test_trainer.cpp
//
// Copyright 2026  The pse-toolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include "pse/synthesis.hpp"
#include "pse/toyworld.hpp"
#include "pse/trainer.hpp"
#include "test_util.hpp"

using namespace pse;
using pse_test::TempDir;

namespace {

ModelConfig unit_config() {
  ModelConfig c;
  c.encoder_filters = 32;
  c.encoder_kernel = 16;
  c.bottleneck_channels = 16;
  c.convblock_channels = 16;
  c.skip_channels = 16;
  c.convblock_kernel = 3;
  c.blocks_per_repeat = 2;
  c.repeats = 2;
  c.size = ModelSize::L;
  return c;
}

AudioClip clip_of(const std::vector<double> &v) {
  AudioClip c;
  c.samples = v;
  return c;
}

// Independently coded direct form of the loss expression, long double
// accumulation, for oracle comparisons.
long double oracle_neg_sdr(const std::vector<double> &est,
                           const std::vector<double> &tgt) {
  long double pt = 0.0L, pr = 0.0L;
  for (std::size_t i = 0; i < tgt.size(); ++i) pt += (long double)tgt[i] * tgt[i];
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    const long double d = (long double)tgt[i] - (long double)est[i];
    pr += d * d;
  }
  return -10.0L * log10l(pt / (pr + 1e-8L * pt));
}

std::vector<Mixture> toy_mixtures(int count, double seconds, std::uint64_t seed) {
  std::vector<Mixture> out;
  for (int i = 0; i < count; ++i) {
    const AudioClip s =
        pse_test::tone(150.0 + 37.0 * i, seconds + 0.5, 0.35);
    const AudioClip n = pse_test::noise_clip(seed + 100 + i, seconds + 0.5, 0.2);
    out.push_back(mix_at_snr(s, n, -3.0 + i, seconds, seed + i));
  }
  return out;
}

}  // namespace

TEST_CASE("neg-SDR analytic cases") {
  const std::vector<double> v = {0.3, -0.2, 0.5, 0.1, -0.4};
  const std::vector<double> zero(v.size(), 0.0);
  // Estimate zero: residual power equals target power, 0 dB.
  REQUIRE(neg_sdr_loss(clip_of(zero), clip_of(v)) ==
          Catch::Approx(0.0).margin(1e-6));
  // Residual power a tenth of target power: -10 dB.
  std::vector<double> est(v.size());
  const double k = 1.0 - std::sqrt(0.1);
  for (std::size_t i = 0; i < v.size(); ++i) est[i] = k * v[i];
  REQUIRE(neg_sdr_loss(clip_of(est), clip_of(v)) ==
          Catch::Approx(-10.0).margin(1e-6));
  // Perfect reconstruction hits the -80 dB stabilizer floor.
  REQUIRE(neg_sdr_loss(clip_of(v), clip_of(v)) ==
          Catch::Approx(-80.0).margin(1e-9));
}

TEST_CASE("neg-SDR equals the independent oracle on random pairs") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 64 + rng.below(512);
    std::vector<double> tgt(n), est(n);
    for (auto &x : tgt) x = 0.4 * rng.normal();
    for (std::size_t i = 0; i < n; ++i) est[i] = tgt[i] + 0.2 * rng.normal();
    const double got = neg_sdr_loss(clip_of(est), clip_of(tgt));
    const double want = static_cast<double>(oracle_neg_sdr(est, tgt));
    REQUIRE(got == Catch::Approx(want).margin(1e-9));
  }
}

TEST_CASE("neg-SDR error paths") {
  REQUIRE_THROWS_AS(neg_sdr_loss(clip_of({0.1}), clip_of({0.1, 0.2})),
                    ArgumentError);
  REQUIRE_THROWS_AS(neg_sdr_loss(clip_of({0.1, 0.2}), clip_of({0.0, 0.0})),
                    ArgumentError);
}

TEST_CASE("loss/metric duality away from the floor") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> tgt(1000), est(1000);
    for (auto &x : tgt) x = 0.4 * rng.normal();
    for (std::size_t i = 0; i < tgt.size(); ++i)
      est[i] = tgt[i] + 0.05 * rng.normal();
    const double loss = neg_sdr_loss(clip_of(est), clip_of(tgt));
    const double metric = sdr(clip_of(est), clip_of(tgt));
    REQUIRE(loss == Catch::Approx(-metric).margin(1e-6));
  }
}

TEST_CASE("early stopping fires exactly patience/validate_every after the best") {
  // Stubbed validation sequence: rises for 3 validations, then plateaus.
  EarlyStopper st(500, 5000);
  std::uint64_t stop_at = 0;
  for (std::uint64_t k = 1; k <= 100; ++k) {
    const std::uint64_t seen = 500 * k;
    const double score = k <= 3 ? static_cast<double>(k) : 3.0;
    st.observe(seen, score);
    if (st.should_stop(seen)) {
      stop_at = k;
      break;
    }
  }
  // Best at validation 3; 5000/500 = 10 validations later.
  REQUIRE(stop_at == 13);
  REQUIRE(st.best_at() == 1500);
}

TEST_CASE("early stopping matches the analytic prediction on random sequences") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint64_t validate_every = 100 + rng.below(400);
    const std::uint64_t patience = validate_every * (1 + rng.below(8));
    std::vector<double> scores(60);
    for (auto &s : scores) s = rng.uniform(0.0, 10.0);

    EarlyStopper st(validate_every, patience);
    std::uint64_t sim_stop = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      const std::uint64_t seen = validate_every * (k + 1);
      st.observe(seen, scores[k]);
      if (st.should_stop(seen)) {
        sim_stop = k + 1;
        break;
      }
    }

    // Analytic: stop patience/validate_every validations after the
    // running argmax (first occurrence).
    const std::uint64_t gap = patience / validate_every;
    std::uint64_t predicted = 0;
    std::size_t best = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      if (scores[k] > scores[best]) best = k;
      if (k - best >= gap) {
        predicted = k + 1;
        break;
      }
    }
    REQUIRE(sim_stop == predicted);
  }
}

TEST_CASE("a small gradient step does not increase the batch loss") {
  const ModelConfig cfg = unit_config();
  const auto mixtures = toy_mixtures(2, 0.3, 50);
  for (std::uint64_t init = 0; init < 20; ++init) {
    EnhancementModel model = build_model(cfg.size, cfg, init);
    auto batch_loss = [&](const SepNetParams &p) {
      double acc = 0.0;
      for (const auto &m : mixtures) {
        AudioClip y;
        y.samples = sepnet_forward(cfg, p, m.x.samples, nullptr);
        acc += neg_sdr_loss(y, m.s);
      }
      return acc / static_cast<double>(mixtures.size());
    };
    const double before = batch_loss(model.params);
    SepNetParams grads = zeros_like(cfg);
    for (const auto &m : mixtures) {
      detail::Workspace ws;
      const auto y = sepnet_forward(cfg, model.params, m.x.samples, &ws);
      const auto dy = neg_sdr_loss_grad(y, m.s.samples);
      sepnet_backward(cfg, model.params, ws, dy, grads);
    }
    // Plain SGD with a tiny step: first-order decrease must hold.
    auto ps = collect_tensors(model.params);
    auto gs = collect_tensors(grads);
    for (std::size_t i = 0; i < ps.size(); ++i)
      ps[i]->array() -= 1e-6 * gs[i]->array();
    const double after = batch_loss(model.params);
    REQUIRE(after <= before + 1e-9);
  }
}

TEST_CASE("training is deterministic and selects the best validation model") {
  const ModelConfig cfg = unit_config();
  const auto fixed = toy_mixtures(4, 0.3, 99);

  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 4;
  tc.validate_every_mixtures = 16;
  tc.patience_mixtures = 48;
  tc.max_mixtures = 96;
  tc.segment_sec = 0.3;
  tc.seed = 7;
  tc.num_threads = 1;

  FixedCycleMixtureSource source(fixed);
  EnhancementModel m1 = build_model(cfg.size, cfg, 1);
  EnhancementModel m2 = build_model(cfg.size, cfg, 1);
  auto [out1, log1] = train_loop(std::move(m1), source, fixed, tc);
  auto [out2, log2] = train_loop(std::move(m2), source, fixed, tc);

  REQUIRE(log1.entries.size() == log2.entries.size());
  for (std::size_t i = 0; i < log1.entries.size(); ++i) {
    REQUIRE(log1.entries[i].mixtures_seen == log2.entries[i].mixtures_seen);
    REQUIRE(log1.entries[i].train_loss == log2.entries[i].train_loss);
    if (log1.entries[i].val_sdr)
      REQUIRE(*log1.entries[i].val_sdr == *log2.entries[i].val_sdr);
  }

  // Multi-thread run gives exactly the same log (ordered reduction).
  TrainConfig tc2 = tc;
  tc2.num_threads = 2;
  EnhancementModel m3 = build_model(cfg.size, cfg, 1);
  auto [out3, log3] = train_loop(std::move(m3), source, fixed, tc2);
  REQUIRE(log3.entries.size() == log1.entries.size());
  for (std::size_t i = 0; i < log1.entries.size(); ++i)
    REQUIRE(log3.entries[i].train_loss == log1.entries[i].train_loss);

  // best_val_sdr equals the max over logged validations, and re-evaluating
  // the returned model reproduces it.
  double best_logged = -1e300;
  for (const auto &e : log1.entries)
    if (e.val_sdr) best_logged = std::max(best_logged, *e.val_sdr);
  REQUIRE(log1.best_val_sdr == Catch::Approx(best_logged).margin(1e-12));
  const double recheck = validation_sdr(out1, fixed, 1);
  REQUIRE(recheck == Catch::Approx(log1.best_val_sdr).margin(1e-6));
}

TEST_CASE("trainer overfits a tiny fixed set") {
  const ModelConfig cfg = unit_config();
  const auto fixed = toy_mixtures(4, 0.3, 31);
  TrainConfig tc;
  tc.learning_rate = 2e-3;
  tc.batch_size = 4;
  tc.validate_every_mixtures = 40;
  tc.patience_mixtures = 400;
  tc.max_mixtures = 400;
  tc.segment_sec = 0.3;
  tc.seed = 3;
  FixedCycleMixtureSource source(fixed);
  EnhancementModel model = build_model(cfg.size, cfg, 2);
  auto [out, log] = train_loop(std::move(model), source, fixed, tc);
  REQUIRE(log.best_val_sdr > log.initial_val_sdr + 3.0);
}

TEST_CASE("train rejects empty manifests and empty validation sets") {
  const ModelConfig cfg = unit_config();
  EnhancementModel model = build_model(cfg.size, cfg, 1);
  Manifest empty;
  empty.kind = ManifestKind::clean_speech;
  TrainConfig tc;
  REQUIRE_THROWS_AS(
      train(std::move(model), empty, empty, {}, tc), ArgumentError);
}

TEST_CASE("finetune records the source checkpoint and validates kinds") {
  TempDir dir("ft");
  const ModelConfig cfg = unit_config();

  EnhancementModel gen = build_model(cfg.size, cfg, 6);
  const std::string ckpt = dir.str() + "/gen.ckpt";
  save_checkpoint(gen, ckpt);

  // Tiny synthesized set via the simulated backend.
  const ToySpeakerParams params = random_toy_params(4242);
  const SpeakerRef speaker = toyworld::make_enrollment(params, "spk", 3.0, 5);
  const Manifest texts = toyworld::make_text_manifest("T", 12, 8);
  const SynthesisBackend backend = simulated_backend(1.0, 11);
  const Manifest synth = build_augmented_set(backend, speaker, texts, 25.0, 3,
                                             dir.str() + "/synth");
  Manifest noise_all = pse_test::manifest_of_clips(
      dir.str() + "/noise_tr", "ntr", {pse_test::noise_clip(61, 3.0)},
      ManifestKind::noise, Partition::tr);
  {
    auto vl = pse_test::manifest_of_clips(dir.str() + "/noise_vl", "nvl",
                                          {pse_test::noise_clip(62, 3.0)},
                                          ManifestKind::noise, Partition::vl);
    for (auto &r : vl.records) noise_all.records.push_back(r);
  }

  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 2;
  tc.validate_every_mixtures = 8;
  tc.patience_mixtures = 16;
  tc.max_mixtures = 32;
  tc.segment_sec = 0.5;
  tc.val_mixture_count = 4;
  tc.seed = 13;

  auto [model, log] = finetune_pse(ckpt, synth, noise_all, tc);
  REQUIRE(log.source_checkpoint == ckpt);
  REQUIRE(model.training_meta["source_checkpoint"] == ckpt);

  Manifest empty;
  empty.kind = ManifestKind::synthesized_speech;
  REQUIRE_THROWS_AS(finetune_pse(ckpt, empty, noise_all, tc), ArgumentError);

  Manifest wrong_kind = synth;
  wrong_kind.kind = ManifestKind::noise;
  REQUIRE_THROWS_AS(finetune_pse(ckpt, wrong_kind, noise_all, tc), ArgumentError);
}

TEST_CASE("train config invariants") {
  TrainConfig tc;
  tc.patience_mixtures = 100;
  tc.validate_every_mixtures = 500;
  REQUIRE_THROWS_AS(tc.validate(), ArgumentError);
  tc = TrainConfig{};
  tc.learning_rate = 0.0;
  REQUIRE_THROWS_AS(tc.validate(), ArgumentError);
  REQUIRE_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("train log invariants") {
  TrainLog log;
  log.append(0, 0.0, 1.0);
  log.append(500, -1.0, 2.0);
  REQUIRE_THROWS_AS(log.append(500, -1.0, 2.5), ArgumentError);
  REQUIRE(log.best_val_sdr == 2.0);
  REQUIRE(log.best_at_mixtures == 500);
}
