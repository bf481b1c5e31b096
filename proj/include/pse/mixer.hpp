// pse/mixer.hpp
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

// Noisy-mixture simulation x = s + n at an exact segment SNR. Every
// mixture is a pure function of (seed, index), so training streams and
// fixed validation/test sets reproduce bit-identically.

#ifndef PSE_MIXER_HPP_
#define PSE_MIXER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pse/audio.hpp"
#include "pse/error.hpp"
#include "pse/manifest.hpp"
#include "pse/rng.hpp"

namespace pse {

// Segments whose mean-square power falls below this (full-scale^2) count
// as silent and are rejected before the gain computation.
constexpr double kSilencePowerFloor = 1e-8;
constexpr double kNoisePowerFloor = 1e-12;
constexpr int kSilentSegmentRetries = 10;
constexpr double kNoiseLoopCrossfadeSec = 0.010;

struct MixtureSpec {
  std::string clean_id;
  std::string noise_id;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  double clean_offset_sec = 0.0;
  double noise_offset_sec = 0.0;
  double segment_sec = 4.0;

  ordered_json to_json() const {
    ordered_json j;
    j["clean_id"] = clean_id;
    j["noise_id"] = noise_id;
    j["snr_db"] = snr_db;
    j["seed"] = seed;
    j["clean_offset_sec"] = clean_offset_sec;
    j["noise_offset_sec"] = noise_offset_sec;
    j["segment_sec"] = segment_sec;
    return j;
  }

  static MixtureSpec from_json(const json &j) {
    MixtureSpec s;
    s.clean_id = j.at("clean_id").get<std::string>();
    s.noise_id = j.at("noise_id").get<std::string>();
    s.snr_db = j.at("snr_db").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.clean_offset_sec = j.at("clean_offset_sec").get<double>();
    s.noise_offset_sec = j.at("noise_offset_sec").get<double>();
    s.segment_sec = j.at("segment_sec").get<double>();
    return s;
  }
};

struct Mixture {
  AudioClip x;         // contaminated speech
  AudioClip s;         // clean segment (possibly peak-rescaled)
  AudioClip n_scaled;  // gain-scaled noise segment
  MixtureSpec spec;
  double gain = 1.0;          // noise gain that realizes spec.snr_db
  double peak_rescale = 1.0;  // joint factor applied when |x| exceeded 1
};

// Noise gain g with 10*log10(clean_power / (g^2 * noise_power)) == snr_db.
inline double gain_for_snr(double clean_power, double noise_power, double snr_db) {
  if (!(noise_power > kNoisePowerFloor))
    throw DegenerateSourceError("noise power " + std::to_string(noise_power) +
                                " below floor");
  if (!(clean_power > 0.0))
    throw DegenerateSourceError("clean segment has zero power");
  return std::sqrt(clean_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

namespace detail {

// Noise segment of `length` starting at `offset`, looping with a 10 ms
// linear crossfade when the source is shorter than required.
inline std::vector<double> noise_segment(const std::vector<double> &noise,
                                         std::size_t offset, std::size_t length,
                                         int sample_rate) {
  const std::size_t n = noise.size();
  std::vector<double> out(length);
  if (offset + length <= n) {
    std::copy(noise.begin() + offset, noise.begin() + offset + length, out.begin());
    return out;
  }
  const std::size_t fade = std::min<std::size_t>(
      static_cast<std::size_t>(kNoiseLoopCrossfadeSec * sample_rate),
      n > 2 ? n / 2 : 0);
  // Each pass plays noise[fade..n); the last `fade` samples are blended
  // with the head that the next pass resumes after.
  std::size_t src = offset % n;
  for (std::size_t i = 0; i < length; ++i) {
    if (fade > 0 && src >= n - fade) {
      const std::size_t k = src - (n - fade);
      const double t = static_cast<double>(k + 1) / static_cast<double>(fade + 1);
      out[i] = (1.0 - t) * noise[src] + t * noise[k];
    } else {
      out[i] = noise[src];
    }
    ++src;
    if (src >= n) src = fade;
  }
  return out;
}

}  // namespace detail

// Mixes explicit segments per an already-sampled spec. Deterministic; no
// offset retries happen at this level.
inline Mixture mix_from_spec(const AudioClip &s_full, const AudioClip &n_full,
                             const MixtureSpec &spec) {
  if (s_full.sample_rate_hz != kCanonicalSampleRate ||
      n_full.sample_rate_hz != kCanonicalSampleRate)
    throw ArgumentError("mix inputs must be 16 kHz");
  const int fs = kCanonicalSampleRate;
  const std::size_t seg = static_cast<std::size_t>(std::llround(spec.segment_sec * fs));
  if (seg == 0) throw ArgumentError("segment_sec must be positive");
  const std::size_t c_off = static_cast<std::size_t>(std::llround(spec.clean_offset_sec * fs));
  const std::size_t n_off = static_cast<std::size_t>(std::llround(spec.noise_offset_sec * fs));
  if (c_off + seg > s_full.samples.size())
    throw ArgumentError("clean segment out of range for '" + spec.clean_id + "'");

  std::vector<double> s(s_full.samples.begin() + c_off,
                        s_full.samples.begin() + c_off + seg);
  std::vector<double> n = detail::noise_segment(n_full.samples, n_off, seg, fs);

  auto seg_power = [](const std::vector<double> &v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return acc / static_cast<double>(v.size());
  };
  const double ps = seg_power(s);
  const double pn = seg_power(n);
  if (ps < kSilencePowerFloor)
    throw DegenerateSourceError("silent clean segment ('" + spec.clean_id + "')");
  if (pn < kSilencePowerFloor)
    throw DegenerateSourceError("silent noise segment ('" + spec.noise_id + "')");

  const double g = gain_for_snr(ps, pn, spec.snr_db);

  Mixture m;
  m.spec = spec;
  m.gain = g;
  m.s.samples = std::move(s);
  m.n_scaled.samples.resize(seg);
  for (std::size_t t = 0; t < seg; ++t) m.n_scaled.samples[t] = g * n[t];

  // Peak guard: joint rescale (never clipping) keeps both the exact SNR
  // and sample-exact additivity.
  double peak = 0.0;
  for (std::size_t t = 0; t < seg; ++t)
    peak = std::max(peak, std::abs(m.s.samples[t] + m.n_scaled.samples[t]));
  if (peak > 1.0) {
    m.peak_rescale = 1.0 / peak;
    for (std::size_t t = 0; t < seg; ++t) {
      m.s.samples[t] *= m.peak_rescale;
      m.n_scaled.samples[t] *= m.peak_rescale;
    }
  }
  m.x.samples.resize(seg);
  for (std::size_t t = 0; t < seg; ++t)
    m.x.samples[t] = m.s.samples[t] + m.n_scaled.samples[t];
  return m;
}

// Samples offsets from `seed`, retrying silent segments up to
// kSilentSegmentRetries times, then mixes.
inline Mixture mix_at_snr(const AudioClip &s, const AudioClip &n, double snr_db,
                          double segment_sec, std::uint64_t seed,
                          const std::string &clean_id = "",
                          const std::string &noise_id = "") {
  const int fs = kCanonicalSampleRate;
  if (s.sample_rate_hz != fs || n.sample_rate_hz != fs)
    throw ArgumentError("mix inputs must be 16 kHz");
  if (s.duration_sec() + 1e-12 < segment_sec)
    throw ArgumentError("clean clip shorter than segment");
  const std::size_t seg = static_cast<std::size_t>(std::llround(segment_sec * fs));
  if (seg == 0 || seg > s.samples.size())
    throw ArgumentError("bad segment length");

  Rng rng(mix_seed(seed, 0x31337ULL));
  std::string last_err;
  for (int attempt = 0; attempt <= kSilentSegmentRetries; ++attempt) {
    MixtureSpec spec;
    spec.clean_id = clean_id;
    spec.noise_id = noise_id;
    spec.snr_db = snr_db;
    spec.seed = seed;
    spec.segment_sec = segment_sec;
    const std::size_t c_max = s.samples.size() - seg;
    spec.clean_offset_sec =
        static_cast<double>(c_max > 0 ? rng.below(c_max + 1) : 0) / fs;
    const std::size_t n_max =
        n.samples.size() > seg ? n.samples.size() - seg : n.samples.size() - 1;
    spec.noise_offset_sec =
        static_cast<double>(n_max > 0 ? rng.below(n_max + 1) : 0) / fs;
    try {
      return mix_from_spec(s, n, spec);
    } catch (const DegenerateSourceError &e) {
      last_err = e.what();
    }
  }
  throw DegenerateSourceError("no non-silent segment after " +
                              std::to_string(kSilentSegmentRetries) +
                              " retries: " + last_err);
}

// Seeded mixture source over a speech manifest and a noise manifest.
// Item i is a pure function of (seed, i); materializing the same stream
// twice gives identical mixtures. Clips are preloaded once.
class MixtureStream {
 public:
  MixtureStream(const Manifest &speech, const Manifest &noise,
                std::pair<double, double> snr_range, double segment_sec,
                std::uint64_t seed)
      : snr_range_(snr_range), segment_sec_(segment_sec), seed_(seed) {
    if (snr_range_.second < snr_range_.first)
      throw ArgumentError("empty SNR range");
    if (segment_sec <= 0.0) throw ArgumentError("segment_sec must be positive");
    for (const auto &r : speech.records) {
      if (r.duration_sec + 1e-9 < segment_sec) continue;
      speech_ids_.push_back(r.id);
      speech_clips_.push_back(read_clip(r));
    }
    for (const auto &r : noise.records) {
      noise_ids_.push_back(r.id);
      noise_clips_.push_back(read_clip(r));
    }
    if (speech_clips_.empty())
      throw ArgumentError("speech manifest '" + speech.name +
                          "' has no utterance covering " +
                          std::to_string(segment_sec) + " s");
    if (noise_clips_.empty())
      throw ArgumentError("noise manifest '" + noise.name + "' is empty");
  }

  Mixture at(std::uint64_t index) const {
    Rng rng(mix_seed(seed_, index));
    const std::size_t si = static_cast<std::size_t>(rng.below(speech_clips_.size()));
    const std::size_t ni = static_cast<std::size_t>(rng.below(noise_clips_.size()));
    const double snr = rng.uniform(snr_range_.first, snr_range_.second);
    try {
      return mix_at_snr(speech_clips_[si], noise_clips_[ni], snr, segment_sec_,
                        mix_seed(seed_, index), speech_ids_[si], noise_ids_[ni]);
    } catch (const Error &e) {
      throw DegenerateSourceError("mixture index " + std::to_string(index) +
                                  ": " + e.what());
    }
  }

  std::vector<Mixture> take(std::uint64_t count) const {
    std::vector<Mixture> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) out.push_back(at(i));
    return out;
  }

  double segment_sec() const { return segment_sec_; }

 private:
  std::vector<std::string> speech_ids_, noise_ids_;
  std::vector<AudioClip> speech_clips_, noise_clips_;
  std::pair<double, double> snr_range_;
  double segment_sec_;
  std::uint64_t seed_;
};

// The spec'd one-shot form: exactly `count` seeded mixtures.
inline std::vector<Mixture> mixture_stream(const Manifest &speech,
                                           const Manifest &noise,
                                           std::uint64_t count,
                                           std::pair<double, double> snr_range,
                                           double segment_sec,
                                           std::uint64_t seed) {
  if (count == 0) return {};
  MixtureStream stream(speech, noise, snr_range, segment_sec, seed);
  return stream.take(count);
}

}  // namespace pse

#endif  // PSE_MIXER_HPP_
