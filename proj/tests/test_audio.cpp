// tests/test_audio.cpp
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

#include <cstdint>
#include <cstring>
#include <fstream>

#include "pse/audio.hpp"
#include "test_util.hpp"

using namespace pse;
using pse_test::TempDir;

namespace {

// Minimal interleaved 16-bit PCM writer for multi-channel fixtures.
void write_pcm16(const std::string &path, const std::vector<double> &interleaved,
                 int channels, int rate) {
  std::ofstream out(path, std::ios::binary);
  const std::uint32_t n = static_cast<std::uint32_t>(interleaved.size());
  const std::uint32_t data_bytes = n * 2;
  auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<char *>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<char *>(&v), 2); };
  out.write("RIFF", 4);
  u32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  u32(16);
  u16(1);
  u16(static_cast<std::uint16_t>(channels));
  u32(static_cast<std::uint32_t>(rate));
  u32(static_cast<std::uint32_t>(rate * channels * 2));
  u16(static_cast<std::uint16_t>(channels * 2));
  u16(16);
  out.write("data", 4);
  u32(data_bytes);
  for (double v : interleaved) {
    const std::int16_t q = static_cast<std::int16_t>(
        std::clamp<long>(std::lround(v * 32767.0), -32768, 32767));
    u16(static_cast<std::uint16_t>(q));
  }
}

}  // namespace

TEST_CASE("wav round trip at quantization precision") {
  TempDir dir("audio");
  AudioClip c = pse_test::noise_clip(7, 0.5);
  const std::string path = dir.str() + "/a.wav";
  save_wav(c, path);
  AudioClip back = load_wav(path);
  REQUIRE(back.samples.size() == c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i)
    REQUIRE(std::abs(back.samples[i] - c.samples[i]) <= 1.0 / 32768.0 + 1e-12);

  // A second round trip of already-quantized samples is exact.
  save_wav(back, path);
  AudioClip again = load_wav(path);
  REQUIRE(again.samples == back.samples);
}

TEST_CASE("16 kHz mono 48000 samples lasts 3 seconds") {
  TempDir dir("audio");
  AudioClip c;
  c.samples.assign(48000, 0.1);
  const std::string path = dir.str() + "/b.wav";
  save_wav(c, path);
  AudioClip back = load_wav(path);
  REQUIRE(back.samples.size() == 48000);
  REQUIRE(back.duration_sec() == Catch::Approx(3.0));
}

TEST_CASE("8 kHz input resamples to 16000 samples per second") {
  TempDir dir("audio");
  AudioClip c = pse_test::tone(440.0, 1.0, 0.3, 8000);
  REQUIRE(c.samples.size() == 8000);
  const std::string path = dir.str() + "/c.wav";
  save_wav(c, path);
  AudioClip back = load_wav(path);
  REQUIRE(back.sample_rate_hz == 16000);
  REQUIRE(back.samples.size() == 16000);
  // Tone energy survives the rate change.
  REQUIRE(back.rms() == Catch::Approx(c.rms()).margin(0.01));
}

TEST_CASE("stereo downmix averages channels") {
  TempDir dir("audio");
  // L == -R: the mean is identically zero.
  std::vector<double> inter;
  pse::Rng rng(3);
  for (int t = 0; t < 16000; ++t) {
    const double v = 0.4 * rng.normal();
    inter.push_back(std::clamp(v, -0.99, 0.99));
    inter.push_back(std::clamp(-v, -0.99, 0.99));
  }
  const std::string path = dir.str() + "/d.wav";
  write_pcm16(path, inter, 2, 16000);
  AudioClip back = load_wav(path);
  REQUIRE(back.samples.size() == 16000);
  REQUIRE(back.peak() <= 1.5 / 32768.0);
}

TEST_CASE("read is deterministic") {
  TempDir dir("audio");
  AudioClip c = pse_test::noise_clip(11, 1.0);
  const std::string path = dir.str() + "/e.wav";
  save_wav(c, path);
  AudioClip a = load_wav(path);
  AudioClip b = load_wav(path);
  REQUIRE(a.samples == b.samples);
}

TEST_CASE("resampler preserves a tone and the DC level") {
  AudioClip c = pse_test::tone(1000.0, 1.0);
  auto down = resample(c.samples, 16000, 10000);
  REQUIRE(down.size() == 10000);
  double ms = 0.0;
  for (double v : down) ms += v * v;
  ms = std::sqrt(ms / static_cast<double>(down.size()));
  REQUIRE(ms == Catch::Approx(c.rms()).epsilon(0.02));

  std::vector<double> dc(4000, 0.25);
  auto up = resample(dc, 8000, 16000);
  REQUIRE(up.size() == 8000);
  for (std::size_t i = 100; i + 100 < up.size(); ++i)
    REQUIRE(up[i] == Catch::Approx(0.25).margin(1e-6));
}

TEST_CASE("audio error paths") {
  REQUIRE_THROWS_AS(load_wav("/nonexistent/file.wav"), IoError);
  AudioClip empty;
  REQUIRE_THROWS_AS(save_wav(empty, "/tmp/never.wav"), ArgumentError);
  AudioClip bad;
  bad.samples = {0.0, std::nan("")};
  REQUIRE_THROWS_AS(bad.validate(), ArgumentError);
  AudioClip loud;
  loud.samples = {1.5};
  REQUIRE_THROWS_AS(loud.validate(), ArgumentError);

  TempDir dir("audio");
  const std::string path = dir.str() + "/garbage.wav";
  std::ofstream(path) << "not a wav at all";
  REQUIRE_THROWS_AS(load_wav(path), IoError);
}
