// pse/trainer.hpp
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

// Gradient training of generalists and finetuning of PSE specialists:
// negative-SDR loss, Adam, validation every validate_every mixtures seen
// and early stopping after patience mixtures without validation-SDR
// improvement. "Mixtures seen" is the unit everywhere, not steps.

#ifndef PSE_TRAINER_HPP_
#define PSE_TRAINER_HPP_

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pse/error.hpp"
#include "pse/metrics.hpp"
#include "pse/mixer.hpp"
#include "pse/sepnet.hpp"

namespace pse {

// Relative stabilizer of the neg-SDR loss; puts the perfect-reconstruction
// floor at -80 dB independent of signal amplitude.
constexpr double kNegSdrEpsRel = 1e-8;

// Eq. style: -10*log10( sum(v^2) / (sum((v - vhat)^2) + eps) ).
inline double neg_sdr_loss(const AudioClip &estimate, const AudioClip &target) {
  if (estimate.samples.size() != target.samples.size())
    throw ArgumentError("neg_sdr_loss: length mismatch");
  if (target.samples.empty()) throw ArgumentError("neg_sdr_loss: empty signals");
  double p_t = 0.0, p_r = 0.0;
  for (std::size_t i = 0; i < target.samples.size(); ++i) {
    const double v = target.samples[i];
    const double d = v - estimate.samples[i];
    p_t += v * v;
    p_r += d * d;
  }
  if (p_t <= 0.0) throw ArgumentError("neg_sdr_loss: zero-power target");
  return -10.0 * std::log10(p_t / (p_r + kNegSdrEpsRel * p_t));
}

// dLoss/dEstimate for the same expression.
inline std::vector<double> neg_sdr_loss_grad(const std::vector<double> &estimate,
                                             const std::vector<double> &target) {
  double p_t = 0.0, p_r = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double v = target[i];
    const double d = v - estimate[i];
    p_t += v * v;
    p_r += d * d;
  }
  const double denom = p_r + kNegSdrEpsRel * p_t;
  const double scale = (20.0 / std::log(10.0)) / denom;
  std::vector<double> g(estimate.size());
  for (std::size_t i = 0; i < target.size(); ++i)
    g[i] = scale * (estimate[i] - target[i]);
  return g;
}

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch_size = 8;
  std::uint64_t validate_every_mixtures = 500;
  std::uint64_t patience_mixtures = 5000;
  std::uint64_t max_mixtures = 200000;  // safety cap
  std::pair<double, double> snr_range = {-5.0, 5.0};
  std::uint64_t seed = 0;
  double segment_sec = 4.0;
  std::uint64_t val_mixture_count = 100;
  int num_threads = 0;  // 0 = hardware concurrency
  std::string checkpoint_dir;  // when set, best checkpoints land here

  void validate() const {
    if (learning_rate <= 0.0 || batch_size <= 0 || validate_every_mixtures == 0 ||
        patience_mixtures == 0 || max_mixtures == 0 || segment_sec <= 0.0)
      throw ArgumentError("train config fields must be positive");
    if (patience_mixtures < validate_every_mixtures)
      throw ArgumentError("patience must be >= validation cadence");
    if (snr_range.second < snr_range.first)
      throw ArgumentError("empty SNR range");
  }

  int threads() const {
    if (num_threads > 0) return num_threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }
};

// The stopping rule, factored out so protocol tests can drive it with a
// stubbed score sequence. Improvement means strictly greater.
class EarlyStopper {
 public:
  EarlyStopper(std::uint64_t validate_every, std::uint64_t patience)
      : validate_every_(validate_every), patience_(patience) {
    if (patience < validate_every)
      throw ArgumentError("patience must be >= validation cadence");
  }

  // Returns true when this validation is a new best.
  bool observe(std::uint64_t mixtures_seen, double score) {
    if (!has_best_ || score > best_score_) {
      has_best_ = true;
      best_score_ = score;
      best_at_ = mixtures_seen;
      return true;
    }
    return false;
  }

  bool should_stop(std::uint64_t mixtures_seen) const {
    return has_best_ && mixtures_seen - best_at_ >= patience_;
  }

  double best_score() const { return best_score_; }
  std::uint64_t best_at() const { return best_at_; }

 private:
  std::uint64_t validate_every_;
  std::uint64_t patience_;
  bool has_best_ = false;
  double best_score_ = -std::numeric_limits<double>::infinity();
  std::uint64_t best_at_ = 0;
};

struct TrainLogEntry {
  std::uint64_t mixtures_seen = 0;
  double train_loss = 0.0;
  std::optional<double> val_sdr;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  double best_val_sdr = -std::numeric_limits<double>::infinity();
  std::uint64_t best_at_mixtures = 0;
  std::string best_checkpoint;
  std::string source_checkpoint;
  double initial_val_sdr = 0.0;
  std::uint64_t total_mixtures_seen = 0;

  void append(std::uint64_t mixtures_seen, double train_loss,
              std::optional<double> val_sdr) {
    if (!entries.empty() && mixtures_seen <= entries.back().mixtures_seen)
      throw ArgumentError("train log mixtures_seen must strictly increase");
    entries.push_back({mixtures_seen, train_loss, val_sdr});
    if (val_sdr && *val_sdr > best_val_sdr) {
      best_val_sdr = *val_sdr;
      best_at_mixtures = mixtures_seen;
    }
  }

  void write_jsonl(const std::string &path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write train log: " + path);
    ordered_json header;
    header["best_val_sdr"] = best_val_sdr;
    header["best_at_mixtures"] = best_at_mixtures;
    header["best_checkpoint"] = best_checkpoint;
    header["source_checkpoint"] = source_checkpoint;
    header["initial_val_sdr"] = initial_val_sdr;
    header["total_mixtures_seen"] = total_mixtures_seen;
    out << header.dump() << "\n";
    for (const auto &e : entries) {
      ordered_json j;
      j["mixtures_seen"] = e.mixtures_seen;
      j["train_loss"] = e.train_loss;
      if (e.val_sdr) j["val_sdr"] = *e.val_sdr;
      out << j.dump() << "\n";
    }
  }
};

// Adam with the conventional published defaults; lr comes per step.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const ModelConfig &cfg)
      : m_(zeros_like(cfg)), v_(zeros_like(cfg)) {}

  void step(SepNetParams &params, SepNetParams &grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto ps = collect_tensors(params);
    auto gs = collect_tensors(grads);
    auto ms = collect_tensors(m_);
    auto vs = collect_tensors(v_);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      Mat &p = *ps[i];
      const Mat &g = *gs[i];
      Mat &m = *ms[i];
      Mat &v = *vs[i];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = (beta2_ * v.array() + (1.0 - beta2_) * g.array().square()).matrix();
      p.array() -=
          lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
    }
  }

 private:
  SepNetParams m_, v_;
  std::uint64_t t_ = 0;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

// Anything that can produce the i-th training mixture. Training streams
// are the normal case; tests train on small fixed sets recycled forever.
class MixtureSource {
 public:
  virtual ~MixtureSource() = default;
  virtual Mixture at(std::uint64_t index) const = 0;
};

class StreamMixtureSource : public MixtureSource {
 public:
  explicit StreamMixtureSource(MixtureStream stream) : stream_(std::move(stream)) {}
  Mixture at(std::uint64_t index) const override { return stream_.at(index); }

 private:
  MixtureStream stream_;
};

class FixedCycleMixtureSource : public MixtureSource {
 public:
  explicit FixedCycleMixtureSource(std::vector<Mixture> items)
      : items_(std::move(items)) {
    if (items_.empty()) throw ArgumentError("empty mixture set");
  }
  Mixture at(std::uint64_t index) const override {
    return items_[index % items_.size()];
  }

 private:
  std::vector<Mixture> items_;
};

namespace detail {

// Index-parallel map with a deterministic result layout.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn &&fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const int use = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  pool.reserve(static_cast<std::size_t>(use));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(use));
  for (int w = 0; w < use; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= n) break;
          fn(i);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto &t : pool) t.join();
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

inline void accumulate(SepNetParams &into, SepNetParams &from, double scale) {
  auto dst = collect_tensors(into);
  auto src = collect_tensors(from);
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i]->array() += scale * src[i]->array();
}

}  // namespace detail

// Mean SDR of the model over a fixed mixture set.
inline double validation_sdr(const EnhancementModel &model,
                             const std::vector<Mixture> &val_mixtures,
                             int threads = 1) {
  if (val_mixtures.empty()) throw ArgumentError("empty validation set");
  std::vector<double> scores(val_mixtures.size(), 0.0);
  detail::parallel_for(val_mixtures.size(), threads, [&](std::size_t i) {
    const AudioClip y = enhance(model, val_mixtures[i].x);
    scores[i] = sdr(y, val_mixtures[i].s);
  });
  double acc = 0.0;
  for (double s : scores) acc += s;  // fixed order, deterministic
  return acc / static_cast<double>(scores.size());
}

// Core loop shared by train() and finetune_pse(). Returns the
// best-validation model. Deterministic for a fixed config regardless of
// thread count: per-item gradients are reduced in batch order.
inline std::pair<EnhancementModel, TrainLog> train_loop(
    EnhancementModel model, const MixtureSource &source,
    const std::vector<Mixture> &val_mixtures, const TrainConfig &cfg) {
  cfg.validate();
  if (val_mixtures.empty())
    throw ArgumentError("train: validation mixture set is empty");
  const int threads = cfg.threads();

  TrainLog log;
  EarlyStopper stopper(cfg.validate_every_mixtures, cfg.patience_mixtures);
  AdamOptimizer opt(model.config);

  SepNetParams best_params = model.params;
  json best_meta = model.training_meta;

  const std::uint64_t prior_mixtures =
      model.training_meta.value("mixtures_seen", std::uint64_t{0});

  // Baseline validation before any update.
  double val0 = validation_sdr(model, val_mixtures, threads);
  log.initial_val_sdr = val0;
  stopper.observe(0, val0);
  log.append(0, 0.0, val0);

  auto write_best = [&](std::uint64_t seen) {
    if (cfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    EnhancementModel best;
    best.config = model.config;
    best.params = best_params;
    best.training_meta = best_meta;
    const std::string path =
        (std::filesystem::path(cfg.checkpoint_dir) / "best.ckpt").string();
    save_checkpoint(best, path);
    log.best_checkpoint = path;
    (void)seen;
  };
  write_best(0);

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<Mixture> items(batch);
  std::vector<SepNetParams> item_grads;
  item_grads.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i)
    item_grads.push_back(zeros_like(model.config));
  std::vector<double> item_loss(batch, 0.0);

  SepNetParams grad_sum = zeros_like(model.config);
  std::uint64_t seen = 0, stream_index = 0, since_val = 0;
  double loss_acc = 0.0;
  std::uint64_t loss_n = 0;

  while (seen < cfg.max_mixtures) {
    for (std::size_t b = 0; b < batch; ++b) items[b] = source.at(stream_index++);

    detail::parallel_for(batch, threads, [&](std::size_t b) {
      auto zero = collect_tensors(item_grads[b]);
      for (Mat *m : zero) m->setZero();
      detail::Workspace ws;
      const std::vector<double> y =
          sepnet_forward(model.config, model.params, items[b].x.samples, &ws);
      AudioClip yc;
      yc.samples = y;
      item_loss[b] = neg_sdr_loss(yc, items[b].s);
      const std::vector<double> dy = neg_sdr_loss_grad(y, items[b].s.samples);
      sepnet_backward(model.config, model.params, ws, dy, item_grads[b]);
    });

    auto gsum = collect_tensors(grad_sum);
    for (Mat *m : gsum) m->setZero();
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      batch_loss += item_loss[b];
      detail::accumulate(grad_sum, item_grads[b], 1.0 / static_cast<double>(batch));
    }
    batch_loss /= static_cast<double>(batch);

    if (!std::isfinite(batch_loss)) {
      ordered_json dump = ordered_json::array();
      for (std::size_t b = 0; b < batch; ++b) dump.push_back(items[b].spec.to_json());
      throw NumericError("non-finite training loss at " + std::to_string(seen) +
                         " mixtures; batch specs: " + dump.dump());
    }

    opt.step(model.params, grad_sum, cfg.learning_rate);
    seen += batch;
    since_val += batch;
    loss_acc += batch_loss;
    ++loss_n;
    model.training_meta["mixtures_seen"] = prior_mixtures + seen;

    if (since_val >= cfg.validate_every_mixtures) {
      since_val = 0;
      const double val = validation_sdr(model, val_mixtures, threads);
      const double mean_loss = loss_n ? loss_acc / static_cast<double>(loss_n) : 0.0;
      loss_acc = 0.0;
      loss_n = 0;
      log.append(seen, mean_loss, val);
      if (stopper.observe(seen, val)) {
        best_params = model.params;
        best_meta = model.training_meta;
        best_meta["best_val_sdr"] = val;
        write_best(seen);
      }
      if (stopper.should_stop(seen)) break;
    }
  }

  log.total_mixtures_seen = seen;
  model.params = std::move(best_params);
  model.training_meta = std::move(best_meta);
  if (model.training_meta.contains("source_checkpoint"))
    log.source_checkpoint = model.training_meta["source_checkpoint"];
  return {std::move(model), std::move(log)};
}

// Generalist-style training: mixtures streamed from the given manifests.
inline std::pair<EnhancementModel, TrainLog> train(
    EnhancementModel model, const Manifest &speech, const Manifest &noise,
    const std::vector<Mixture> &val_mixtures, const TrainConfig &cfg) {
  if (speech.records.empty() || noise.records.empty())
    throw ArgumentError("train: empty speech or noise manifest");
  StreamMixtureSource source(
      MixtureStream(speech, noise, cfg.snr_range, cfg.segment_sec, cfg.seed));
  return train_loop(std::move(model), source, val_mixtures, cfg);
}

// PSE finetuning: initialize from a generalist checkpoint and train on the
// synthesized set; validation mixtures come from the vl partitions.
inline std::pair<EnhancementModel, TrainLog> finetune_pse(
    const std::string &generalist_ckpt, const Manifest &synth_speech,
    const Manifest &noise, const TrainConfig &cfg) {
  if (synth_speech.records.empty())
    throw ArgumentError("finetune: empty synthesized-speech manifest");
  if (synth_speech.kind != ManifestKind::synthesized_speech &&
      synth_speech.kind != ManifestKind::clean_speech)
    throw ArgumentError("finetune: manifest must be synthesized or clean speech");

  EnhancementModel model = load_checkpoint(generalist_ckpt);
  model.training_meta["source_checkpoint"] = generalist_ckpt;

  const Manifest synth_tr = synth_speech.filter_partition(Partition::tr);
  const Manifest synth_vl = synth_speech.filter_partition(Partition::vl);
  const Manifest noise_tr = noise.filter_partition(Partition::tr);
  const Manifest noise_vl = noise.filter_partition(Partition::vl);
  if (synth_tr.records.empty() || synth_vl.records.empty())
    throw ArgumentError("finetune: synthesized manifest needs tr and vl records");
  if (noise_tr.records.empty() || noise_vl.records.empty())
    throw ArgumentError("finetune: noise manifest needs tr and vl records");

  const std::vector<Mixture> val_mixtures =
      mixture_stream(synth_vl, noise_vl, cfg.val_mixture_count, cfg.snr_range,
                     cfg.segment_sec, mix_seed(cfg.seed, 0xA11DULL));

  StreamMixtureSource source(MixtureStream(synth_tr, noise_tr, cfg.snr_range,
                                           cfg.segment_sec, cfg.seed));
  auto [out, log] = train_loop(std::move(model), source, val_mixtures, cfg);
  log.source_checkpoint = generalist_ckpt;
  return {std::move(out), std::move(log)};
}

}  // namespace pse

#endif  // PSE_TRAINER_HPP_
