// tests/test_util.hpp
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

#ifndef PSE_TESTS_TEST_UTIL_HPP_
#define PSE_TESTS_TEST_UTIL_HPP_

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pse/audio.hpp"
#include "pse/manifest.hpp"
#include "pse/rng.hpp"

namespace pse_test {

// Unique scratch dir removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string &tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("pse_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path &path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline pse::AudioClip tone(double freq_hz, double seconds, double amp = 0.3,
                           int fs = 16000) {
  pse::AudioClip c;
  c.sample_rate_hz = fs;
  const std::size_t n = static_cast<std::size_t>(seconds * fs);
  c.samples.resize(n);
  for (std::size_t t = 0; t < n; ++t)
    c.samples[t] = amp * std::sin(2.0 * 3.14159265358979323846 * freq_hz *
                                  static_cast<double>(t) / fs);
  return c;
}

inline pse::AudioClip noise_clip(std::uint64_t seed, double seconds,
                                 double rms = 0.1, int fs = 16000) {
  pse::AudioClip c;
  c.sample_rate_hz = fs;
  const std::size_t n = static_cast<std::size_t>(seconds * fs);
  c.samples.resize(n);
  pse::Rng rng(seed);
  for (auto &v : c.samples) v = rms * rng.normal();
  for (auto &v : c.samples) v = std::clamp(v, -0.999, 0.999);
  return c;
}

// Writes clips as wavs and returns a manifest covering them, all in the
// given partition.
inline pse::Manifest manifest_of_clips(const std::string &dir,
                                       const std::string &name,
                                       const std::vector<pse::AudioClip> &clips,
                                       pse::ManifestKind kind,
                                       pse::Partition part = pse::Partition::tr,
                                       const std::string &speaker = "spk") {
  std::filesystem::create_directories(dir);
  pse::Manifest m;
  m.name = name;
  m.kind = kind;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::string path = dir + "/" + name + "_" + std::to_string(i) + ".wav";
    pse::save_wav(clips[i], path);
    pse::UtteranceRecord rec;
    rec.id = name + "_" + std::to_string(i);
    rec.speaker_id = speaker;
    rec.path = path;
    rec.duration_sec = clips[i].duration_sec();
    rec.partition = part;
    rec.origin = pse::Origin::natural;
    m.records.push_back(std::move(rec));
  }
  return m;
}

}  // namespace pse_test

#endif  // PSE_TESTS_TEST_UTIL_HPP_
