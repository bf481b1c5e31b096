// tests/test_mixer.cpp
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

#include "pse/mixer.hpp"
#include "test_util.hpp"

using namespace pse;
using pse_test::TempDir;

namespace {

double measured_snr_db(const Mixture &m) {
  double ps = 0.0, pn = 0.0;
  for (double v : m.s.samples) ps += v * v;
  for (double v : m.n_scaled.samples) pn += v * v;
  return 10.0 * std::log10(ps / pn);
}

}  // namespace

TEST_CASE("gain_for_snr analytic cases") {
  REQUIRE(gain_for_snr(0.01, 0.01, 0.0) == Catch::Approx(1.0));
  REQUIRE(gain_for_snr(0.01, 0.01, 10.0) ==
          Catch::Approx(std::pow(10.0, -0.5)).epsilon(1e-12));
  REQUIRE(gain_for_snr(0.04, 0.01, 0.0) == Catch::Approx(2.0));
  REQUIRE_THROWS_AS(gain_for_snr(0.01, 0.0, 0.0), DegenerateSourceError);
  REQUIRE_THROWS_AS(gain_for_snr(0.0, 0.01, 0.0), DegenerateSourceError);
}

TEST_CASE("mix realizes the requested SNR exactly and additively") {
  const AudioClip s = pse_test::tone(220.0, 3.0, 0.4);
  const AudioClip n = pse_test::noise_clip(9, 3.0, 0.2);
  for (double snr : {-5.0, -1.3, 0.0, 2.7, 5.0}) {
    const Mixture m = mix_at_snr(s, n, snr, 1.0, 42);
    REQUIRE(measured_snr_db(m) == Catch::Approx(snr).margin(1e-6));
    REQUIRE(m.x.samples.size() == m.s.samples.size());
    REQUIRE(m.x.samples.size() == m.n_scaled.samples.size());
    for (std::size_t t = 0; t < m.x.samples.size(); ++t)
      REQUIRE(m.x.samples[t] == m.s.samples[t] + m.n_scaled.samples[t]);
  }
}

TEST_CASE("same seed gives a bit-identical mixture") {
  const AudioClip s = pse_test::noise_clip(1, 2.0, 0.2);
  const AudioClip n = pse_test::noise_clip(2, 2.0, 0.2);
  const Mixture a = mix_at_snr(s, n, -2.0, 1.0, 77);
  const Mixture b = mix_at_snr(s, n, -2.0, 1.0, 77);
  REQUIRE(a.x.samples == b.x.samples);
  REQUIRE(a.spec.clean_offset_sec == b.spec.clean_offset_sec);
  REQUIRE(a.spec.noise_offset_sec == b.spec.noise_offset_sec);
}

TEST_CASE("all-zero noise is degenerate") {
  const AudioClip s = pse_test::tone(150.0, 2.0);
  AudioClip n;
  n.samples.assign(32000, 0.0);
  REQUIRE_THROWS_AS(mix_at_snr(s, n, 0.0, 1.0, 5), DegenerateSourceError);
}

TEST_CASE("clean shorter than the segment is rejected") {
  const AudioClip s = pse_test::tone(150.0, 0.5);
  const AudioClip n = pse_test::noise_clip(3, 2.0);
  REQUIRE_THROWS_AS(mix_at_snr(s, n, 0.0, 1.0, 5), ArgumentError);
}

TEST_CASE("peak overflow rescales jointly, keeping SNR and additivity") {
  AudioClip s = pse_test::tone(100.0, 1.0, 0.95);
  AudioClip n = pse_test::noise_clip(4, 1.0, 0.3);
  const Mixture m = mix_at_snr(s, n, -5.0, 1.0, 8);
  REQUIRE(m.peak_rescale < 1.0);
  REQUIRE(m.x.peak() <= 1.0 + 1e-12);
  REQUIRE(measured_snr_db(m) == Catch::Approx(-5.0).margin(1e-6));
  for (std::size_t t = 0; t < m.x.samples.size(); ++t)
    REQUIRE(m.x.samples[t] == m.s.samples[t] + m.n_scaled.samples[t]);
}

TEST_CASE("short noise loops with a crossfade") {
  const AudioClip s = pse_test::tone(180.0, 4.0, 0.3);
  const AudioClip n = pse_test::noise_clip(6, 0.5, 0.2);
  const Mixture m = mix_at_snr(s, n, 0.0, 3.0, 11);
  REQUIRE(m.x.samples.size() == 48000);
  REQUIRE(measured_snr_db(m) == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("stream yields count mixtures inside the SNR range") {
  TempDir dir("mixer");
  const auto speech = pse_test::manifest_of_clips(
      dir.str() + "/sp", "speech",
      {pse_test::tone(200.0, 2.0), pse_test::tone(300.0, 3.0)},
      ManifestKind::clean_speech);
  const auto noise = pse_test::manifest_of_clips(
      dir.str() + "/no", "noise",
      {pse_test::noise_clip(21, 2.0), pse_test::noise_clip(22, 4.0)},
      ManifestKind::noise);

  const auto mixtures = mixture_stream(speech, noise, 100, {-5.0, 5.0}, 1.0, 3);
  REQUIRE(mixtures.size() == 100);
  for (const auto &m : mixtures) {
    REQUIRE(m.spec.snr_db >= -5.0);
    REQUIRE(m.spec.snr_db <= 5.0);
    REQUIRE(measured_snr_db(m) == Catch::Approx(m.spec.snr_db).margin(1e-6));
  }

  REQUIRE(mixture_stream(speech, noise, 0, {-5.0, 5.0}, 1.0, 3).empty());
}

TEST_CASE("streams with different seeds differ") {
  TempDir dir("mixer");
  const auto speech = pse_test::manifest_of_clips(
      dir.str() + "/sp", "speech",
      {pse_test::tone(200.0, 2.0), pse_test::tone(260.0, 2.0)},
      ManifestKind::clean_speech);
  const auto noise = pse_test::manifest_of_clips(
      dir.str() + "/no", "noise",
      {pse_test::noise_clip(31, 3.0), pse_test::noise_clip(32, 3.0)},
      ManifestKind::noise);
  const auto a = mixture_stream(speech, noise, 20, {-5.0, 5.0}, 1.0, 1);
  const auto b = mixture_stream(speech, noise, 20, {-5.0, 5.0}, 1.0, 2);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    any_diff = any_diff || a[i].spec.snr_db != b[i].spec.snr_db ||
               a[i].spec.clean_id != b[i].spec.clean_id ||
               a[i].spec.noise_offset_sec != b[i].spec.noise_offset_sec;
  REQUIRE(any_diff);
}

TEST_CASE("stream items are pure functions of (seed, index)") {
  TempDir dir("mixer");
  const auto speech = pse_test::manifest_of_clips(
      dir.str() + "/sp", "speech", {pse_test::tone(210.0, 2.5)},
      ManifestKind::clean_speech);
  const auto noise = pse_test::manifest_of_clips(
      dir.str() + "/no", "noise", {pse_test::noise_clip(41, 2.0)},
      ManifestKind::noise);
  for (std::uint64_t seed : {1ULL, 9ULL, 123456ULL}) {
    MixtureStream st1(speech, noise, {-5.0, 5.0}, 1.0, seed);
    MixtureStream st2(speech, noise, {-5.0, 5.0}, 1.0, seed);
    for (std::uint64_t i : {0ULL, 3ULL, 17ULL}) {
      const Mixture a = st1.at(i);
      const Mixture b = st2.at(i);
      REQUIRE(a.x.samples == b.x.samples);
      REQUIRE(a.spec.snr_db == b.spec.snr_db);
    }
  }
}

TEST_CASE("stream SNR sampling is uniform-ish over its range") {
  TempDir dir("mixer");
  const auto speech = pse_test::manifest_of_clips(
      dir.str() + "/sp", "speech", {pse_test::tone(210.0, 2.0)},
      ManifestKind::clean_speech);
  const auto noise = pse_test::manifest_of_clips(
      dir.str() + "/no", "noise", {pse_test::noise_clip(51, 2.0)},
      ManifestKind::noise);
  MixtureStream st(speech, noise, {-5.0, 5.0}, 1.0, 77);
  double mean = 0.0, lo = 1e9, hi = -1e9;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const double snr = st.at(static_cast<std::uint64_t>(i)).spec.snr_db;
    mean += snr;
    lo = std::min(lo, snr);
    hi = std::max(hi, snr);
  }
  mean /= n;
  REQUIRE(std::abs(mean) < 0.25);
  REQUIRE(lo >= -5.0);
  REQUIRE(hi <= 5.0);
  REQUIRE(lo < -4.0);  // the range edges actually get visited
  REQUIRE(hi > 4.0);
}
