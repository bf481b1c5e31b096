// pse/synthesis.hpp
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

// Pluggable speech-synthesis backends. Two kinds exist: a wrapper around
// an arbitrary external TTS command, and a built-in simulated backend
// whose fidelity knob interpolates between the target speaker's
// parameters (derived from enrollment audio) and a distractor speaker's.
// The simulated backend renders "phoneme" sequences of harmonic segments
// shaped by an 8-band envelope, one unit per text character.

#ifndef PSE_SYNTHESIS_HPP_
#define PSE_SYNTHESIS_HPP_

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pse/audio.hpp"
#include "pse/dsp.hpp"
#include "pse/error.hpp"
#include "pse/manifest.hpp"
#include "pse/rng.hpp"
#include "pse/subprocess.hpp"

namespace pse {

// Parametric stand-in for a human voice.
struct ToySpeakerParams {
  double f0_hz = 150.0;               // [80, 300]
  std::array<double, 8> envelope{};   // spectral band gains in [0, 1]
  double rate_units_per_sec = 5.0;    // [2, 8]
  std::uint64_t identity_seed = 0;

  void validate() const {
    if (!(f0_hz >= 80.0 && f0_hz <= 300.0))
      throw ArgumentError("f0 out of [80, 300]: " + std::to_string(f0_hz));
    for (double g : envelope)
      if (!std::isfinite(g) || g < 0.0 || g > 1.0)
        throw ArgumentError("envelope gain out of [0, 1]");
    if (!(rate_units_per_sec >= 2.0 && rate_units_per_sec <= 8.0))
      throw ArgumentError("rate out of [2, 8]");
  }
};

inline ToySpeakerParams interpolate(const ToySpeakerParams &target,
                                    const ToySpeakerParams &distractor,
                                    double alpha) {
  ToySpeakerParams p;
  p.f0_hz = alpha * target.f0_hz + (1.0 - alpha) * distractor.f0_hz;
  for (int b = 0; b < 8; ++b)
    p.envelope[b] = alpha * target.envelope[b] + (1.0 - alpha) * distractor.envelope[b];
  p.rate_units_per_sec =
      alpha * target.rate_units_per_sec + (1.0 - alpha) * distractor.rate_units_per_sec;
  p.identity_seed =
      alpha >= 0.5 ? target.identity_seed : distractor.identity_seed;
  return p;
}

// Fixed feature recipe realizing the "conditioned on s" arrow: mean f0 by
// autocorrelation plus the 8-band envelope, rate from the RMS envelope.
inline ToySpeakerParams derive_toy_params(const SpeakerRef &speaker) {
  speaker.validate();
  const AudioClip all = speaker.concatenated();
  ToySpeakerParams p;
  const PitchEstimate pitch = estimate_f0(all.samples, kCanonicalSampleRate);
  p.f0_hz = pitch.f0_hz > 0.0 ? std::clamp(pitch.f0_hz, 80.0, 300.0) : 150.0;
  const auto powers = band_powers(all.samples, kCanonicalSampleRate);
  // Undo the renderer's 1/sqrt(harmonic) spectral tilt so that deriving
  // from rendered audio approximately recovers the generating envelope.
  const auto edges = envelope_band_edges();
  std::array<double, 8> amps{};
  double top = 0.0;
  for (int b = 0; b < 8; ++b) {
    const double center = std::sqrt(edges[b] * edges[b + 1]);
    const double tilt = 1.0 / std::sqrt(std::max(1.0, center / p.f0_hz));
    amps[b] = std::sqrt(std::max(powers[b], 0.0)) / tilt;
    top = std::max(top, amps[b]);
  }
  if (top > 0.0) {
    for (int b = 0; b < 8; ++b)
      p.envelope[b] = std::clamp(amps[b] / top, 0.0, 1.0);
  } else {
    p.envelope.fill(0.5);
  }
  const double rate = estimate_unit_rate(all.samples, kCanonicalSampleRate);
  p.rate_units_per_sec = rate > 0.0 ? std::clamp(rate, 2.0, 8.0) : 5.0;
  p.identity_seed = fnv1a(speaker.speaker_id);
  return p;
}

inline ToySpeakerParams random_toy_params(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xD157ULL));
  ToySpeakerParams p;
  p.f0_hz = rng.uniform(90.0, 290.0);
  for (int b = 0; b < 8; ++b) p.envelope[b] = rng.uniform(0.05, 1.0);
  p.rate_units_per_sec = rng.uniform(2.5, 7.5);
  p.identity_seed = seed;
  return p;
}

enum class BackendKind { external_command, simulated };

struct SynthesisBackend {
  std::string backend_id;
  BackendKind kind = BackendKind::simulated;
  // simulated
  double fidelity = 1.0;
  std::uint64_t distractor_seed = 0;
  // external_command: template with {text_file} {ref_wav} {out_wav}
  std::string command_template;
  int timeout_sec = 120;
};

inline SynthesisBackend simulated_backend(double fidelity,
                                          std::uint64_t distractor_seed) {
  if (!(fidelity >= 0.0 && fidelity <= 1.0))
    throw ArgumentError("fidelity out of [0, 1]: " + std::to_string(fidelity));
  SynthesisBackend b;
  b.kind = BackendKind::simulated;
  b.fidelity = fidelity;
  b.distractor_seed = distractor_seed;
  std::ostringstream id;
  id.precision(2);
  id << std::fixed << "simulated:a=" << fidelity << ":d=" << distractor_seed;
  b.backend_id = id.str();
  return b;
}

inline SynthesisBackend external_backend(const std::string &command_template,
                                         int timeout_sec = 120) {
  if (command_template.empty())
    throw ArgumentError("external backend needs a command template");
  SynthesisBackend b;
  b.kind = BackendKind::external_command;
  b.command_template = command_template;
  b.timeout_sec = timeout_sec;
  b.backend_id = "external:" + std::to_string(fnv1a(command_template) % 0xFFFFFF);
  return b;
}

struct SynthesisRequest {
  std::string text;
  SpeakerRef speaker;
  std::uint64_t seed = 0;

  void validate() const {
    if (text.empty()) throw ArgumentError("synthesis request with empty text");
    speaker.validate();
  }
};

namespace detail {

enum class UnitClass { vowel, voiced, unvoiced, digit, silence };

inline UnitClass classify_char(char c) {
  if (std::isdigit(static_cast<unsigned char>(c))) return UnitClass::digit;
  const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lc == 'a' || lc == 'e' || lc == 'i' || lc == 'o' || lc == 'u')
    return UnitClass::vowel;
  if (std::isalpha(static_cast<unsigned char>(lc))) {
    static const std::string unvoiced = "ptkfshcqx";
    return unvoiced.find(lc) != std::string::npos ? UnitClass::unvoiced
                                                  : UnitClass::voiced;
  }
  return UnitClass::silence;
}

// Linear-amplitude envelope gain at frequency f, interpolated between the
// geometric band centers.
inline double envelope_gain_at(const std::array<double, 8> &env, double f) {
  static const std::array<double, 9> edges = envelope_band_edges();
  std::array<double, 8> centers;
  for (int b = 0; b < 8; ++b) centers[b] = std::sqrt(edges[b] * edges[b + 1]);
  double g;
  if (f <= centers[0]) {
    g = env[0];
  } else if (f >= centers[7]) {
    g = env[7];
  } else {
    int b = 0;
    while (f > centers[b + 1]) ++b;
    const double t = (std::log(f) - std::log(centers[b])) /
                     (std::log(centers[b + 1]) - std::log(centers[b]));
    g = (1.0 - t) * env[b] + t * env[b + 1];
  }
  return std::max(g, 0.02);
}

}  // namespace detail

// Deterministic toy utterance: one unit per character, 1/rate seconds
// each; voiced units are harmonic stacks shaped by the speaker envelope,
// unvoiced units are high-passed noise bursts, other characters pause.
inline AudioClip render_toy_utterance(const std::string &text,
                                      const ToySpeakerParams &params,
                                      std::uint64_t seed) {
  if (text.empty()) throw ArgumentError("cannot render empty text");
  params.validate();
  const int fs = kCanonicalSampleRate;
  const std::size_t unit_len =
      std::max<std::size_t>(1, static_cast<std::size_t>(
                                   std::llround(fs / params.rate_units_per_sec)));

  // Identity flavor: fixed per speaker. Trajectory: fixed per request.
  Rng id_rng(mix_seed(params.identity_seed, 0x1DF1ULL));
  const double vib_rate = id_rng.uniform(4.0, 7.0);
  const double vib_cents = id_rng.uniform(10.0, 30.0);
  std::array<double, 5> vowel_semitones = {0.0, 2.0, 4.0, 5.0, 7.0};
  for (auto &st : vowel_semitones) st += id_rng.uniform(-0.5, 0.5);

  Rng traj(mix_seed(seed, 0x7247ULL));
  double walk_cents = 0.0;

  std::vector<double> out(text.size() * unit_len, 0.0);
  double phase = traj.uniform(0.0, 2.0 * kPi);
  const std::size_t ramp = std::max<std::size_t>(
      1, std::min(unit_len / 4, static_cast<std::size_t>(0.012 * fs)));

  double hp_prev_x = 0.0, hp_prev_y = 0.0;
  for (std::size_t u = 0; u < text.size(); ++u) {
    const detail::UnitClass cls = detail::classify_char(text[u]);
    const double unit_amp = traj.uniform(0.8, 1.0);
    walk_cents = std::clamp(walk_cents + traj.uniform(-60.0, 60.0), -150.0, 150.0);
    double *dst = out.data() + u * unit_len;

    if (cls == detail::UnitClass::silence) continue;

    if (cls == detail::UnitClass::unvoiced) {
      const double hi_gain =
          (params.envelope[5] + params.envelope[6] + params.envelope[7]) / 3.0;
      const double amp = 0.25 * std::max(hi_gain, 0.02) * unit_amp;
      for (std::size_t t = 0; t < unit_len; ++t) {
        const double x = traj.normal();
        const double y = 0.7 * (hp_prev_y + x - hp_prev_x);
        hp_prev_x = x;
        hp_prev_y = y;
        double w = 1.0;
        if (t < ramp) w = static_cast<double>(t) / ramp;
        if (t >= unit_len - ramp) w = static_cast<double>(unit_len - 1 - t) / ramp;
        dst[t] = amp * y * w;
      }
      continue;
    }

    double semitones = 0.0;
    double amp_scale = 1.0;
    if (cls == detail::UnitClass::vowel) {
      const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(text[u])));
      const int vi = (lc == 'a') ? 0 : (lc == 'e') ? 1 : (lc == 'i') ? 2
                     : (lc == 'o') ? 3 : 4;
      semitones = vowel_semitones[static_cast<std::size_t>(vi)];
    } else if (cls == detail::UnitClass::digit) {
      semitones = 9.0;
    } else {  // voiced consonant
      semitones = -3.0;
      amp_scale = 0.6;
    }

    const double f0_unit =
        params.f0_hz * std::pow(2.0, (semitones + walk_cents / 100.0) / 12.0);
    const int k_max = std::max(1, static_cast<int>(7400.0 / f0_unit));
    std::vector<double> harm_amp(static_cast<std::size_t>(k_max));
    double amp_sum = 0.0;
    for (int k = 1; k <= k_max; ++k) {
      const double a = detail::envelope_gain_at(params.envelope, k * f0_unit) /
                       std::sqrt(static_cast<double>(k));
      harm_amp[static_cast<std::size_t>(k - 1)] = a;
      amp_sum += a;
    }
    const double norm = amp_sum > 0.0 ? 0.6 / amp_sum : 0.0;

    for (std::size_t t = 0; t < unit_len; ++t) {
      const double tt = static_cast<double>(u * unit_len + t) / fs;
      const double vib =
          std::pow(2.0, vib_cents * std::sin(2.0 * kPi * vib_rate * tt) / 1200.0);
      phase += 2.0 * kPi * f0_unit * vib / fs;
      double v = 0.0;
      for (int k = 1; k <= k_max; ++k)
        v += harm_amp[static_cast<std::size_t>(k - 1)] * std::sin(k * phase);
      double w = 1.0;
      if (t < ramp) w = static_cast<double>(t) / ramp;
      if (t >= unit_len - ramp) w = static_cast<double>(unit_len - 1 - t) / ramp;
      dst[t] = norm * amp_scale * unit_amp * v * w;
    }
  }

  AudioClip clip;
  clip.samples = std::move(out);
  double peak = clip.peak();
  if (peak > 0.0) {
    const double target = 0.5;
    for (double &v : clip.samples) v *= target / peak;
  }
  return clip;
}

namespace detail {

inline AudioClip synthesize_external(const SynthesisBackend &backend,
                                     const SynthesisRequest &request) {
  const auto dir = scratch_dir();
  const auto text_file = dir / "text.txt";
  const auto ref_wav = dir / "ref.wav";
  const auto out_wav = dir / "out.wav";
  {
    std::ofstream t(text_file);
    t << request.text << "\n";
  }
  save_wav(request.speaker.concatenated(), ref_wav.string());

  std::string cmd = backend.command_template;
  cmd = render_template(cmd, "text_file", text_file.string());
  cmd = render_template(cmd, "ref_wav", ref_wav.string());
  cmd = render_template(cmd, "out_wav", out_wav.string());

  const CommandResult res = run_command(cmd, backend.timeout_sec);
  auto cleanup = [&] {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  };
  if (res.timed_out) {
    cleanup();
    throw BackendError("synthesis command timed out after " +
                       std::to_string(backend.timeout_sec) + " s");
  }
  if (res.exit_code != 0) {
    cleanup();
    throw BackendError("synthesis command failed (exit " +
                       std::to_string(res.exit_code) + ")\nstdout:\n" + res.out +
                       "stderr:\n" + res.err);
  }
  AudioClip clip;
  try {
    clip = load_wav(out_wav.string());
  } catch (const Error &e) {
    cleanup();
    throw BackendError(std::string("synthesis command produced bad audio: ") +
                       e.what() + "\nstderr:\n" + res.err);
  }
  cleanup();
  if (clip.samples.empty())
    throw BackendError("synthesis command produced empty audio");
  return clip;
}

}  // namespace detail

inline AudioClip synthesize(const SynthesisBackend &backend,
                            const SynthesisRequest &request) {
  request.validate();
  if (backend.kind == BackendKind::simulated) {
    const ToySpeakerParams target = derive_toy_params(request.speaker);
    const ToySpeakerParams distractor = random_toy_params(backend.distractor_seed);
    const ToySpeakerParams p = interpolate(target, distractor, backend.fidelity);
    return render_toy_utterance(request.text, p, request.seed);
  }
  return detail::synthesize_external(backend, request);
}

// Synthesizes utterances (texts sampled without replacement, reshuffling
// once exhausted) until the collected duration reaches the target, writes
// the WAVs and returns the manifest with a tr/vl split assigned by
// duration quota (default 2:1).
inline Manifest build_augmented_set(const SynthesisBackend &backend,
                                    const SpeakerRef &speaker,
                                    const Manifest &texts,
                                    double target_duration_sec,
                                    std::uint64_t seed,
                                    const std::string &out_dir,
                                    double tr_fraction = 2.0 / 3.0,
                                    int retries = 3) {
  if (!texts.is_text() || texts.texts.empty())
    throw ArgumentError("build_augmented_set needs a non-empty text manifest");
  if (!(target_duration_sec > 0.0))
    throw ArgumentError("target duration must be positive");
  speaker.validate();
  std::filesystem::create_directories(out_dir);

  Manifest out;
  out.name = "synth_" + speaker.speaker_id;
  out.kind = ManifestKind::synthesized_speech;

  Rng order_rng(mix_seed(seed, 0x0DD5ULL));
  std::vector<std::size_t> order(texts.texts.size());
  std::iota(order.begin(), order.end(), 0);
  order_rng.shuffle(order);
  std::size_t cursor = 0;

  double collected = 0.0;
  double dur_tr = 0.0, dur_vl = 0.0;
  const double vl_fraction = 1.0 - tr_fraction;
  int idx = 0;
  while (collected < target_duration_sec) {
    if (cursor >= order.size()) {
      order_rng.shuffle(order);
      cursor = 0;
    }
    const TextRecord &text = texts.texts[order[cursor++]];

    SynthesisRequest req;
    req.text = text.text;
    req.speaker = speaker;
    req.seed = mix_seed(seed, static_cast<std::uint64_t>(idx));

    AudioClip clip;
    bool ok = false;
    std::string last_err;
    for (int attempt = 0; attempt < std::max(retries, 1); ++attempt) {
      try {
        clip = synthesize(backend, req);
        ok = true;
        break;
      } catch (const BackendError &e) {
        last_err = e.what();
      }
    }
    if (!ok) {
      // Leave a partial manifest behind for diagnosis, then abort.
      write_manifest(out, (std::filesystem::path(out_dir) / "partial_manifest.jsonl").string());
      throw BackendError("backend failed " + std::to_string(retries) +
                         " times on text '" + text.id + "': " + last_err +
                         " (partial manifest written)");
    }

    char name[64];
    std::snprintf(name, sizeof(name), "%s_%04d.wav", speaker.speaker_id.c_str(), idx);
    const auto wav_path = std::filesystem::path(out_dir) / name;
    save_wav(clip, wav_path.string());

    UtteranceRecord rec;
    rec.id = speaker.speaker_id + "_synth_" + std::to_string(idx);
    rec.speaker_id = speaker.speaker_id;
    rec.path = wav_path.string();
    rec.duration_sec = clip.duration_sec();
    rec.origin = Origin::synthesized;
    rec.backend_tag = backend.backend_id;
    // Assign to whichever partition is furthest below its quota.
    const double deficit_tr = tr_fraction > 0.0 ? dur_tr / tr_fraction : 1e300;
    const double deficit_vl = vl_fraction > 0.0 ? dur_vl / vl_fraction : 1e300;
    if (deficit_tr <= deficit_vl) {
      rec.partition = Partition::tr;
      dur_tr += rec.duration_sec;
    } else {
      rec.partition = Partition::vl;
      dur_vl += rec.duration_sec;
    }
    collected += rec.duration_sec;
    out.records.push_back(std::move(rec));
    ++idx;
  }

  write_manifest(out, (std::filesystem::path(out_dir) / "manifest.jsonl").string());
  out.validate();
  return out;
}

}  // namespace pse

#endif  // PSE_SYNTHESIS_HPP_
