// pse/toyworld.hpp
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

// Desk-scale corpus fabrication: toy multi-speaker clean-speech sets for
// generalist pretraining, procedural noise sets with tr/vl/te partitions,
// and sentence manifests for the synthesis path. Everything is a pure
// function of its seed.

#ifndef PSE_TOYWORLD_HPP_
#define PSE_TOYWORLD_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pse/audio.hpp"
#include "pse/manifest.hpp"
#include "pse/rng.hpp"
#include "pse/synthesis.hpp"

namespace pse {

namespace toyworld {

// Random pronounceable "sentence"; words of alternating consonant/vowel
// syllables, so the toy renderer sees a realistic class mix.
inline std::string random_sentence(Rng &rng, int min_chars = 28,
                                   int max_chars = 56) {
  static const std::string consonants = "bdgklmnprstvz";
  static const std::string vowels = "aeiou";
  const int target =
      min_chars + static_cast<int>(rng.below(static_cast<std::uint64_t>(
                      max_chars - min_chars + 1)));
  std::string s;
  while (static_cast<int>(s.size()) < target) {
    const int syllables = 1 + static_cast<int>(rng.below(3));
    for (int k = 0; k < syllables; ++k) {
      s += consonants[rng.below(consonants.size())];
      s += vowels[rng.below(vowels.size())];
    }
    s += ' ';
  }
  if (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

inline Manifest make_text_manifest(const std::string &name, int n_sentences,
                                   std::uint64_t seed) {
  Manifest m;
  m.name = name;
  m.kind = ManifestKind::text;
  Rng rng(mix_seed(seed, 0x7E87ULL));
  for (int i = 0; i < n_sentences; ++i) {
    TextRecord t;
    t.id = name + "_" + std::to_string(i);
    t.text = random_sentence(rng);
    m.texts.push_back(std::move(t));
  }
  m.validate();
  return m;
}

// Direct toy-speech rendering from a speaker's true parameters (the
// "natural" recordings of the toy world).
inline AudioClip render_natural_utterance(const ToySpeakerParams &params,
                                          std::uint64_t utterance_seed) {
  Rng rng(mix_seed(utterance_seed, 0x9A7EULL));
  const std::string sentence = random_sentence(rng);
  return render_toy_utterance(sentence, params, utterance_seed);
}

// Clean-speech corpus of n_speakers toy speakers, utts_per_speaker each,
// partitioned round-robin as tr,tr,tr,vl,te per speaker.
inline Manifest build_speech_corpus(const std::string &out_dir,
                                    const std::string &name, int n_speakers,
                                    int utts_per_speaker, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  Manifest m;
  m.name = name;
  m.kind = ManifestKind::clean_speech;
  for (int spk = 0; spk < n_speakers; ++spk) {
    const ToySpeakerParams params = random_toy_params(mix_seed(seed, spk));
    const std::string speaker_id =
        name + "_spk" + std::to_string(spk);
    for (int u = 0; u < utts_per_speaker; ++u) {
      const std::uint64_t utt_seed =
          mix_seed(seed, 1000003ULL * static_cast<std::uint64_t>(spk) +
                             static_cast<std::uint64_t>(u) + 17);
      const AudioClip clip = render_natural_utterance(params, utt_seed);
      char fname[96];
      std::snprintf(fname, sizeof(fname), "%s_u%03d.wav", speaker_id.c_str(), u);
      const auto path = std::filesystem::path(out_dir) / fname;
      save_wav(clip, path.string());
      UtteranceRecord rec;
      rec.id = speaker_id + "_u" + std::to_string(u);
      rec.speaker_id = speaker_id;
      rec.path = path.string();
      rec.duration_sec = clip.duration_sec();
      rec.origin = Origin::natural;
      const int slot = u % 5;
      rec.partition = slot <= 2 ? Partition::tr
                      : slot == 3 ? Partition::vl
                                  : Partition::te;
      m.records.push_back(std::move(rec));
    }
  }
  write_manifest(m, (std::filesystem::path(out_dir) / (name + ".jsonl")).string());
  m.validate();
  return m;
}

// Returns the true generating parameters of a named corpus speaker, so
// experiments can fabricate matching enrollment/test material.
inline ToySpeakerParams corpus_speaker_params(std::uint64_t corpus_seed, int spk) {
  return random_toy_params(mix_seed(corpus_seed, spk));
}

namespace detail {

inline std::vector<double> colored_noise(Rng &rng, std::size_t n, int kind) {
  std::vector<double> x(n);
  switch (kind % 5) {
    case 0: {  // white
      for (auto &v : x) v = rng.normal();
      break;
    }
    case 1: {  // pink-ish: one-pole lowpassed white stacked with white
      double lp = 0.0;
      for (auto &v : x) {
        const double w = rng.normal();
        lp = 0.98 * lp + 0.02 * w;
        v = 12.0 * lp + 0.15 * w;
      }
      break;
    }
    case 2: {  // brown: integrated white with leakage
      double acc = 0.0;
      for (auto &v : x) {
        acc = 0.995 * acc + rng.normal();
        v = 0.08 * acc;
      }
      break;
    }
    case 3: {  // machine hum: harmonics of 50-120 Hz with AM
      const double f0 = rng.uniform(50.0, 120.0);
      const double am = rng.uniform(0.5, 3.0);
      double ph = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t t = 0; t < n; ++t) {
        const double tt = static_cast<double>(t) / kCanonicalSampleRate;
        const double mod = 0.7 + 0.3 * std::sin(2.0 * kPi * am * tt);
        double v = 0.0;
        for (int h = 1; h <= 6; ++h)
          v += std::sin(h * (2.0 * kPi * f0 * tt + ph)) / h;
        x[t] = mod * v * 0.3 + 0.05 * rng.normal();
      }
      break;
    }
    default: {  // impulsive clatter over a noise bed
      for (auto &v : x) v = 0.08 * rng.normal();
      const int events = 4 + static_cast<int>(rng.below(10));
      for (int e = 0; e < events; ++e) {
        const std::size_t pos = rng.below(n);
        const double amp = rng.uniform(0.4, 1.0);
        const double decay = rng.uniform(0.9985, 0.9998);
        double env = amp;
        for (std::size_t t = pos; t < n && env > 1e-3; ++t) {
          x[t] += env * rng.normal() * 0.5;
          env *= decay;
        }
      }
      break;
    }
  }
  // Normalize to a moderate RMS.
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms = std::sqrt(ms / static_cast<double>(n));
  const double target = 0.1;
  if (ms > 0.0)
    for (auto &v : x) v = std::clamp(v * target / ms, -1.0, 1.0);
  return x;
}

}  // namespace detail

// Procedural noise corpus: n_clips per partition, 4-6 s each, cycling
// through the five noise families. te clips use distinct seeds, so test
// noises are never seen in training.
inline Manifest build_noise_corpus(const std::string &out_dir,
                                   const std::string &name, int clips_per_part,
                                   std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  Manifest m;
  m.name = name;
  m.kind = ManifestKind::noise;
  const Partition parts[3] = {Partition::tr, Partition::vl, Partition::te};
  int serial = 0;
  for (int pi = 0; pi < 3; ++pi) {
    for (int i = 0; i < clips_per_part; ++i, ++serial) {
      Rng rng(mix_seed(seed, 7919ULL * static_cast<std::uint64_t>(serial) + 13));
      const std::size_t n = static_cast<std::size_t>(
          kCanonicalSampleRate * rng.uniform(4.0, 6.0));
      AudioClip clip;
      clip.samples = detail::colored_noise(rng, n, serial);
      char fname[96];
      std::snprintf(fname, sizeof(fname), "%s_%s_%03d.wav", name.c_str(),
                    to_string(parts[pi]).c_str(), i);
      const auto path = std::filesystem::path(out_dir) / fname;
      save_wav(clip, path.string());
      UtteranceRecord rec;
      rec.id = name + "_" + to_string(parts[pi]) + "_" + std::to_string(i);
      rec.speaker_id = "noise";
      rec.path = path.string();
      rec.duration_sec = clip.duration_sec();
      rec.origin = Origin::natural;
      rec.partition = parts[pi];
      m.records.push_back(std::move(rec));
    }
  }
  write_manifest(m, (std::filesystem::path(out_dir) / (name + ".jsonl")).string());
  m.validate();
  return m;
}

// Enrollment reference of roughly `seconds` for a toy speaker.
inline SpeakerRef make_enrollment(const ToySpeakerParams &params,
                                  const std::string &speaker_id, double seconds,
                                  std::uint64_t seed) {
  SpeakerRef ref;
  ref.speaker_id = speaker_id;
  double have = 0.0;
  int i = 0;
  while (have < seconds) {
    Rng rng(mix_seed(seed, 811ULL + static_cast<std::uint64_t>(i)));
    std::string sentence = random_sentence(rng, 10, 24);
    AudioClip clip = render_toy_utterance(
        sentence, params, mix_seed(seed, 0xE40ULL + static_cast<std::uint64_t>(i)));
    const double want = seconds - have;
    if (clip.duration_sec() > want + 0.5) {
      const std::size_t keep = static_cast<std::size_t>(
          std::max(1.0, (want + 0.5) * kCanonicalSampleRate));
      clip.samples.resize(std::min(keep, clip.samples.size()));
    }
    have += clip.duration_sec();
    ref.enrollment_clips.push_back(std::move(clip));
    ++i;
  }
  return ref;
}

}  // namespace toyworld

}  // namespace pse

#endif  // PSE_TOYWORLD_HPP_
