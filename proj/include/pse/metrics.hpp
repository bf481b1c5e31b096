// pse/metrics.hpp
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

// Objective evaluation. SDR, SDRI and eSTOI are native; PESQ and MOS
// estimation wrap external tools through command templates and degrade
// gracefully when unconfigured. Speaker similarity uses either an
// external embedding extractor or the built-in fallback embedding
// (mean f0 + 8 z-normalized band log-energies).

#ifndef PSE_METRICS_HPP_
#define PSE_METRICS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pse/audio.hpp"
#include "pse/dsp.hpp"
#include "pse/error.hpp"
#include "pse/manifest.hpp"
#include "pse/subprocess.hpp"

namespace pse {

constexpr double kSdrCapDb = 80.0;

// 10*log10(ref_power / residual_power), capped at 80 dB.
inline double sdr(const AudioClip &estimate, const AudioClip &reference) {
  if (estimate.samples.size() != reference.samples.size())
    throw ArgumentError("sdr: length mismatch");
  if (reference.samples.empty()) throw ArgumentError("sdr: empty signals");
  double p_ref = 0.0, p_res = 0.0;
  for (std::size_t t = 0; t < reference.samples.size(); ++t) {
    const double v = reference.samples[t];
    const double d = v - estimate.samples[t];
    p_ref += v * v;
    p_res += d * d;
  }
  if (p_ref <= 0.0) throw ArgumentError("sdr: zero-power reference");
  if (p_res <= 0.0) return kSdrCapDb;
  return std::min(10.0 * std::log10(p_ref / p_res), kSdrCapDb);
}

// Improvement over the unprocessed mixture.
inline double sdri(const AudioClip &estimate, const AudioClip &reference,
                   const AudioClip &mixture) {
  return sdr(estimate, reference) - sdr(mixture, reference);
}

// ---------------------------------------------------------------------
// eSTOI (extended short-time objective intelligibility).

namespace detail {

constexpr int kStoiFs = 10000;
constexpr std::size_t kStoiFrame = 256;
constexpr std::size_t kStoiHop = 128;
constexpr std::size_t kStoiFft = 512;
constexpr int kStoiBands = 15;
constexpr double kStoiMinBandHz = 150.0;
constexpr std::size_t kStoiSegFrames = 30;  // 384 ms at the 10 kHz rate
constexpr double kStoiDynRangeDb = 40.0;

// Bin ranges of the 15 one-third-octave bands on the 512-point grid.
inline std::vector<std::pair<std::size_t, std::size_t>> third_octave_bins() {
  std::vector<std::pair<std::size_t, std::size_t>> bands;
  const std::size_t n_bins = kStoiFft / 2 + 1;
  auto nearest_bin = [&](double hz) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * kStoiFs / kStoiFft;
      const double d = (f - hz) * (f - hz);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  };
  for (int j = 0; j < kStoiBands; ++j) {
    const double cf = kStoiMinBandHz * std::pow(2.0, j / 3.0);
    bands.push_back({nearest_bin(cf * std::pow(2.0, -1.0 / 6.0)),
                     nearest_bin(cf * std::pow(2.0, 1.0 / 6.0))});
  }
  return bands;
}

// Drops frames whose reference energy is more than 40 dB below the
// loudest frame, overlap-adding the kept frames of both signals.
inline void remove_silent_frames(std::vector<double> &x, std::vector<double> &y) {
  const std::vector<double> w = hann_inner(kStoiFrame);
  if (x.size() < kStoiFrame) {
    x.clear();
    y.clear();
    return;
  }
  const std::size_t n_frames = 1 + (x.size() - kStoiFrame) / kStoiHop;
  std::vector<double> energy_db(n_frames);
  double max_db = -1e300;
  for (std::size_t f = 0; f < n_frames; ++f) {
    double e = 0.0;
    for (std::size_t i = 0; i < kStoiFrame; ++i) {
      const double v = x[f * kStoiHop + i] * w[i];
      e += v * v;
    }
    energy_db[f] = 20.0 * std::log10(std::sqrt(e) + 1e-16);
    max_db = std::max(max_db, energy_db[f]);
  }
  std::vector<std::size_t> kept;
  for (std::size_t f = 0; f < n_frames; ++f)
    if (energy_db[f] > max_db - kStoiDynRangeDb) kept.push_back(f);

  const std::size_t out_len =
      kept.empty() ? 0 : (kept.size() - 1) * kStoiHop + kStoiFrame;
  std::vector<double> xs(out_len, 0.0), ys(out_len, 0.0);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::size_t src = kept[i] * kStoiHop;
    const std::size_t dst = i * kStoiHop;
    for (std::size_t t = 0; t < kStoiFrame; ++t) {
      xs[dst + t] += x[src + t] * w[t];
      ys[dst + t] += y[src + t] * w[t];
    }
  }
  x = std::move(xs);
  y = std::move(ys);
}

// 15 x M band envelope matrix.
inline std::vector<std::array<double, kStoiBands>> band_envelopes(
    const std::vector<double> &x) {
  static const std::vector<double> w = hann_inner(kStoiFrame);
  static const auto bands = third_octave_bins();
  const auto spec = stft_power(x, kStoiFrame, kStoiHop, kStoiFft, w);
  std::vector<std::array<double, kStoiBands>> env(spec.size());
  for (std::size_t m = 0; m < spec.size(); ++m) {
    for (int j = 0; j < kStoiBands; ++j) {
      double acc = 0.0;
      for (std::size_t k = bands[static_cast<std::size_t>(j)].first;
           k < bands[static_cast<std::size_t>(j)].second; ++k)
        acc += spec[m][k];
      env[m][static_cast<std::size_t>(j)] = std::sqrt(acc);
    }
  }
  return env;
}

// Row (per band over time) then column (per frame over bands)
// mean/norm normalization of one 15 x 30 segment.
inline void row_col_normalize(std::array<std::array<double, kStoiSegFrames>,
                                         kStoiBands> &seg) {
  for (int j = 0; j < kStoiBands; ++j) {
    auto &row = seg[static_cast<std::size_t>(j)];
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(kStoiSegFrames);
    double norm = 0.0;
    for (double &v : row) {
      v -= mu;
      norm += v * v;
    }
    norm = std::sqrt(norm) + 1e-15;
    for (double &v : row) v /= norm;
  }
  for (std::size_t n = 0; n < kStoiSegFrames; ++n) {
    double mu = 0.0;
    for (int j = 0; j < kStoiBands; ++j) mu += seg[static_cast<std::size_t>(j)][n];
    mu /= static_cast<double>(kStoiBands);
    double norm = 0.0;
    for (int j = 0; j < kStoiBands; ++j) {
      seg[static_cast<std::size_t>(j)][n] -= mu;
      norm += seg[static_cast<std::size_t>(j)][n] * seg[static_cast<std::size_t>(j)][n];
    }
    norm = std::sqrt(norm) + 1e-15;
    for (int j = 0; j < kStoiBands; ++j) seg[static_cast<std::size_t>(j)][n] /= norm;
  }
}

}  // namespace detail

// Number of 16 kHz samples required for one 384 ms analysis segment.
inline std::size_t estoi_min_samples_16k() {
  const std::size_t min_10k =
      (detail::kStoiSegFrames - 1) * detail::kStoiHop + detail::kStoiFrame;
  return static_cast<std::size_t>(
      std::ceil(static_cast<double>(min_10k) * 16000.0 / detail::kStoiFs));
}

inline double estoi(const AudioClip &estimate, const AudioClip &reference) {
  if (estimate.samples.size() != reference.samples.size())
    throw ArgumentError("estoi: length mismatch");
  if (estimate.sample_rate_hz != kCanonicalSampleRate ||
      reference.sample_rate_hz != kCanonicalSampleRate)
    throw ArgumentError("estoi: inputs must be 16 kHz");
  if (reference.samples.size() < estoi_min_samples_16k())
    throw ArgumentError(
        "estoi: input shorter than the algorithm minimum of " +
        std::to_string(estoi_min_samples_16k()) + " samples (" +
        std::to_string(estoi_min_samples_16k() / 16000.0) + " s at 16 kHz)");

  std::vector<double> x = resample(reference.samples, kCanonicalSampleRate,
                                   detail::kStoiFs);
  std::vector<double> y = resample(estimate.samples, kCanonicalSampleRate,
                                   detail::kStoiFs);
  detail::remove_silent_frames(x, y);

  const auto ex = detail::band_envelopes(x);
  const auto ey = detail::band_envelopes(y);
  const std::size_t n_frames = std::min(ex.size(), ey.size());
  if (n_frames < detail::kStoiSegFrames)
    throw ArgumentError("estoi: fewer than " +
                        std::to_string(detail::kStoiSegFrames) +
                        " analysis frames remain after silence removal");

  double total = 0.0;
  std::size_t n_segments = 0;
  for (std::size_t m = detail::kStoiSegFrames; m <= n_frames; ++m) {
    std::array<std::array<double, detail::kStoiSegFrames>, detail::kStoiBands> sx{},
        sy{};
    for (std::size_t n = 0; n < detail::kStoiSegFrames; ++n) {
      for (int j = 0; j < detail::kStoiBands; ++j) {
        sx[static_cast<std::size_t>(j)][n] =
            ex[m - detail::kStoiSegFrames + n][static_cast<std::size_t>(j)];
        sy[static_cast<std::size_t>(j)][n] =
            ey[m - detail::kStoiSegFrames + n][static_cast<std::size_t>(j)];
      }
    }
    detail::row_col_normalize(sx);
    detail::row_col_normalize(sy);
    double d = 0.0;
    for (int j = 0; j < detail::kStoiBands; ++j)
      for (std::size_t n = 0; n < detail::kStoiSegFrames; ++n)
        d += sx[static_cast<std::size_t>(j)][n] * sy[static_cast<std::size_t>(j)][n];
    total += d / static_cast<double>(detail::kStoiSegFrames);
    ++n_segments;
  }
  return total / static_cast<double>(n_segments);
}

// ---------------------------------------------------------------------
// Speaker embeddings and similarity.

struct SpeakerEmbedding {
  std::vector<double> vec;
  std::string extractor_id;
};

struct EmbeddingExtractor {
  std::string id;
  std::string command_template;  // empty => built-in fallback
  int timeout_sec = 120;
};

inline EmbeddingExtractor fallback_extractor() {
  return {"fallback-f0band8", "", 0};
}

// Command contract: template with {wav} and {out_txt}; the tool writes
// whitespace-separated floats to {out_txt}.
inline EmbeddingExtractor external_extractor(const std::string &command_template,
                                             int timeout_sec = 120) {
  return {"external:" + std::to_string(fnv1a(command_template) % 0xFFFFFF),
          command_template, timeout_sec};
}

// Mean-f0 plus 8-band log-energy feature vector; the band components are
// z-normalized so the cosine is dominated by spectral shape, with f0
// scaled into a comparable range.
inline SpeakerEmbedding fallback_embedding(const AudioClip &clip) {
  if (clip.duration_sec() < 1.0)
    throw ArgumentError("fallback embedding needs at least 1 s of audio");
  const PitchEstimate pitch = estimate_f0(clip.samples, clip.sample_rate_hz);
  const double f0 = pitch.f0_hz > 0.0 ? pitch.f0_hz : 150.0;
  const auto powers = band_powers(clip.samples, clip.sample_rate_hz);
  std::array<double, 8> logs;
  for (int b = 0; b < 8; ++b) logs[b] = std::log10(powers[b] + 1e-12);
  double mu = 0.0;
  for (double v : logs) mu += v;
  mu /= 8.0;
  double var = 0.0;
  for (double v : logs) var += (v - mu) * (v - mu);
  const double sigma = std::max(std::sqrt(var / 8.0), 1e-6);

  SpeakerEmbedding emb;
  emb.extractor_id = "fallback-f0band8";
  emb.vec.resize(9);
  emb.vec[0] = (f0 - 190.0) / 55.0;
  for (int b = 0; b < 8; ++b) emb.vec[static_cast<std::size_t>(b) + 1] = (logs[b] - mu) / sigma;
  return emb;
}

inline SpeakerEmbedding external_embedding(const EmbeddingExtractor &ex,
                                           const AudioClip &clip) {
  const auto dir = detail::scratch_dir();
  const auto wav = dir / "in.wav";
  const auto out_txt = dir / "emb.txt";
  save_wav(clip, wav.string());
  std::string cmd = render_template(ex.command_template, "wav", wav.string());
  cmd = render_template(cmd, "out_txt", out_txt.string());
  const CommandResult res = run_command(cmd, ex.timeout_sec);
  SpeakerEmbedding emb;
  emb.extractor_id = ex.id;
  if (res.exit_code != 0)
    throw BackendError("embedding extractor failed (exit " +
                       std::to_string(res.exit_code) + "): " + res.err);
  std::ifstream in(out_txt);
  double v;
  while (in >> v) emb.vec.push_back(v);
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  if (emb.vec.empty())
    throw BackendError("embedding extractor produced no values");
  return emb;
}

inline SpeakerEmbedding extract_embedding(const EmbeddingExtractor &ex,
                                          const AudioClip &clip) {
  return ex.command_template.empty() ? fallback_embedding(clip)
                                     : external_embedding(ex, clip);
}

inline double cosine_similarity(const SpeakerEmbedding &a,
                                const SpeakerEmbedding &b) {
  if (a.vec.size() != b.vec.size())
    throw ArgumentError("embedding dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.vec.size(); ++i) {
    if (!std::isfinite(a.vec[i]) || !std::isfinite(b.vec[i]))
      throw NumericError("non-finite embedding");
    dot += a.vec[i] * b.vec[i];
    na += a.vec[i] * a.vec[i];
    nb += b.vec[i] * b.vec[i];
  }
  if (na <= 0.0 || nb <= 0.0) throw NumericError("zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double speaker_similarity(const AudioClip &a, const AudioClip &b,
                                 const EmbeddingExtractor &extractor =
                                     fallback_extractor()) {
  return cosine_similarity(extract_embedding(extractor, a),
                           extract_embedding(extractor, b));
}

// ---------------------------------------------------------------------
// External scorer adapters (PESQ, MOS). Absence or failure degrades to
// an absent value, never to a zero.

// {ref_wav} {deg_wav} {out_txt}; first float in out_txt is the score.
inline std::optional<double> pesq_adapter(const AudioClip &estimate,
                                          const AudioClip &reference,
                                          const std::string &command_template,
                                          int timeout_sec = 120) {
  if (command_template.empty()) return std::nullopt;
  try {
    const auto dir = detail::scratch_dir();
    const auto ref = dir / "ref.wav";
    const auto deg = dir / "deg.wav";
    const auto out_txt = dir / "score.txt";
    save_wav(reference, ref.string());
    save_wav(estimate, deg.string());
    std::string cmd = render_template(command_template, "ref_wav", ref.string());
    cmd = render_template(cmd, "deg_wav", deg.string());
    cmd = render_template(cmd, "out_txt", out_txt.string());
    const CommandResult res = run_command(cmd, timeout_sec);
    std::optional<double> score;
    if (res.exit_code == 0) {
      std::ifstream in(out_txt);
      double v;
      if (in >> v && std::isfinite(v)) score = v;
    }
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
    if (!score)
      std::cerr << "[pse] pesq adapter failed (exit " << res.exit_code
                << "); value omitted\n";
    return score;
  } catch (const Error &e) {
    std::cerr << "[pse] pesq adapter error: " << e.what() << "\n";
    return std::nullopt;
  }
}

// {deg_wav} {out_txt}; first float is the estimated MOS.
inline std::optional<double> mos_adapter(const AudioClip &clip,
                                         const std::string &command_template,
                                         int timeout_sec = 120) {
  if (command_template.empty()) return std::nullopt;
  try {
    const auto dir = detail::scratch_dir();
    const auto deg = dir / "deg.wav";
    const auto out_txt = dir / "score.txt";
    save_wav(clip, deg.string());
    std::string cmd = render_template(command_template, "deg_wav", deg.string());
    cmd = render_template(cmd, "out_txt", out_txt.string());
    const CommandResult res = run_command(cmd, timeout_sec);
    std::optional<double> score;
    if (res.exit_code == 0) {
      std::ifstream in(out_txt);
      double v;
      if (in >> v && std::isfinite(v)) score = v;
    }
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
    if (!score)
      std::cerr << "[pse] mos adapter failed (exit " << res.exit_code
                << "); value omitted\n";
    return score;
  } catch (const Error &e) {
    std::cerr << "[pse] mos adapter error: " << e.what() << "\n";
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------
// Evaluation reports.

struct EvalRow {
  std::string utterance_id;
  double sdr_db = 0.0;
  double sdri_db = 0.0;
  double estoi_value = 0.0;
  std::optional<double> pesq;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::map<std::string, double> aggregates;
  std::map<std::string, std::string> condition_tags;

  void finalize() {
    aggregates.clear();
    if (rows.empty()) return;
    double s = 0.0, si = 0.0, e = 0.0, p = 0.0;
    std::size_t n_pesq = 0;
    for (const auto &r : rows) {
      if (r.estoi_value < -1.0 || r.estoi_value > 1.0)
        throw ValidationError("estoi out of [-1,1] in report row " + r.utterance_id);
      if (r.pesq && (*r.pesq < -0.5 || *r.pesq > 4.5))
        throw ValidationError("pesq out of [-0.5,4.5] in report row " + r.utterance_id);
      s += r.sdr_db;
      si += r.sdri_db;
      e += r.estoi_value;
      if (r.pesq) {
        p += *r.pesq;
        ++n_pesq;
      }
    }
    const double n = static_cast<double>(rows.size());
    aggregates["sdr_db"] = s / n;
    aggregates["sdri_db"] = si / n;
    aggregates["estoi"] = e / n;
    if (n_pesq > 0) aggregates["pesq"] = p / static_cast<double>(n_pesq);
    check_aggregates();
  }

  // Aggregates must equal recomputed arithmetic means within 1e-9.
  void check_aggregates() const {
    if (rows.empty()) return;
    double s = 0.0;
    for (const auto &r : rows) s += r.sdr_db;
    if (std::abs(aggregates.at("sdr_db") - s / static_cast<double>(rows.size())) >
        1e-9)
      throw ValidationError("report aggregate does not match row mean");
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "utterance_id,sdr_db,sdri_db,estoi,pesq\n";
    for (const auto &r : rows) {
      os << r.utterance_id << "," << r.sdr_db << "," << r.sdri_db << ","
         << r.estoi_value << ",";
      if (r.pesq) os << *r.pesq;
      os << "\n";
    }
    return os.str();
  }

  ordered_json to_json() const {
    ordered_json j;
    j["aggregates"] = aggregates;
    j["condition_tags"] = condition_tags;
    j["rows"] = rows.size();
    return j;
  }
};

// ---------------------------------------------------------------------
// Synthesis-quality assessment (Table-2-shaped).

struct QualityRow {
  std::string subset;
  std::optional<double> mos;
  double mean_cosine = 0.0;
  std::size_t n_utterances = 0;
  double total_sec = 0.0;
};

inline std::vector<QualityRow> assess_synthesis_quality(
    const Manifest &synth, const SpeakerRef &enrollment,
    const std::string &mos_command = "",
    const EmbeddingExtractor &extractor = fallback_extractor()) {
  if (synth.records.empty())
    throw ArgumentError("assess_synthesis_quality: empty manifest");
  const SpeakerEmbedding ref_emb =
      extract_embedding(extractor, enrollment.concatenated());

  std::map<std::string, QualityRow> by_subset;
  for (const auto &rec : synth.records) {
    const std::string subset = rec.backend_tag.value_or("natural");
    auto &row = by_subset[subset];
    row.subset = subset;
    const AudioClip clip = read_clip(rec);
    row.mean_cosine += cosine_similarity(ref_emb, extract_embedding(extractor, clip));
    if (!mos_command.empty()) {
      const auto mos = mos_adapter(clip, mos_command);
      if (mos) row.mos = row.mos.value_or(0.0) + *mos;
    }
    row.n_utterances += 1;
    row.total_sec += rec.duration_sec;
  }
  std::vector<QualityRow> rows;
  for (auto &[subset, row] : by_subset) {
    row.mean_cosine /= static_cast<double>(row.n_utterances);
    if (row.mos) row.mos = *row.mos / static_cast<double>(row.n_utterances);
    rows.push_back(row);
  }
  return rows;
}

// Markdown table with the best MOS / cosine per column in bold. A missing
// MOS renders as "-" rather than zero.
inline std::string render_quality_table(const std::vector<QualityRow> &rows) {
  std::ostringstream os;
  os << "| Subset | MOS (est.) | Cosine Similarity |\n";
  os << "|---|---|---|\n";
  double best_mos = -1e300, best_cos = -1e300;
  for (const auto &r : rows) {
    if (r.mos) best_mos = std::max(best_mos, *r.mos);
    best_cos = std::max(best_cos, r.mean_cosine);
  }
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  for (const auto &r : rows) {
    os << "| " << r.subset << " | ";
    if (r.mos) {
      const std::string s = fmt(*r.mos);
      os << (std::abs(*r.mos - best_mos) < 1e-12 ? "**" + s + "**" : s);
    } else {
      os << "-";
    }
    os << " | ";
    const std::string c = fmt(r.mean_cosine);
    os << (std::abs(r.mean_cosine - best_cos) < 1e-12 ? "**" + c + "**" : c);
    os << " |\n";
  }
  return os.str();
}

}  // namespace pse

#endif  // PSE_METRICS_HPP_
