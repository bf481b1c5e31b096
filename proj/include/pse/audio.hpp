// pse/audio.hpp
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

// AudioClip (the universal signal currency: mono, 16 kHz, [-1,1]) plus
// RIFF WAV I/O, channel downmix and windowed-sinc resampling.

#ifndef PSE_AUDIO_HPP_
#define PSE_AUDIO_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pse/error.hpp"

namespace pse {

constexpr int kCanonicalSampleRate = 16000;

struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = kCanonicalSampleRate;

  double duration_sec() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }

  std::size_t size() const { return samples.size(); }

  // Mean squared amplitude.
  double power() const {
    if (samples.empty()) return 0.0;
    double acc = 0.0;
    for (double s : samples) acc += s * s;
    return acc / static_cast<double>(samples.size());
  }

  double rms() const { return std::sqrt(power()); }

  double peak() const {
    double p = 0.0;
    for (double s : samples) p = std::max(p, std::abs(s));
    return p;
  }

  // Enforces the type invariants: nonempty, finite, amplitudes in [-1,1].
  void validate(const std::string &context = "clip") const {
    if (samples.empty())
      throw ArgumentError(context + ": empty audio clip");
    if (sample_rate_hz != kCanonicalSampleRate)
      throw ArgumentError(context + ": sample rate " +
                          std::to_string(sample_rate_hz) + " != 16000");
    for (double s : samples) {
      if (!std::isfinite(s))
        throw ArgumentError(context + ": non-finite sample");
      if (s < -1.0 || s > 1.0)
        throw ArgumentError(context + ": sample out of [-1,1]");
    }
  }

  AudioClip segment(std::size_t offset, std::size_t length) const {
    if (offset + length > samples.size())
      throw ArgumentError("segment out of range");
    AudioClip out;
    out.sample_rate_hz = sample_rate_hz;
    out.samples.assign(samples.begin() + offset,
                       samples.begin() + offset + length);
    return out;
  }
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char *p) {
  return static_cast<std::uint32_t>(p[0]) | (p[1] << 8) | (p[2] << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char *p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

struct RawWav {
  std::vector<double> interleaved;
  int channels = 1;
  int sample_rate = 0;
};

inline RawWav read_wav_raw(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path);

  int fmt_tag = 0, channels = 0, bits = 0, rate = 0;
  std::size_t data_off = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char *id = reinterpret_cast<const char *>(&bytes[pos]);
    std::uint32_t sz = read_u32(&bytes[pos + 4]);
    std::size_t body = pos + 8;
    if (body + sz > bytes.size()) sz = static_cast<std::uint32_t>(bytes.size() - body);
    if (std::memcmp(id, "fmt ", 4) == 0 && sz >= 16) {
      fmt_tag = read_u16(&bytes[body]);
      channels = read_u16(&bytes[body + 2]);
      rate = static_cast<int>(read_u32(&bytes[body + 4]));
      bits = read_u16(&bytes[body + 14]);
      if (fmt_tag == 0xFFFE && sz >= 40) {
        // WAVE_FORMAT_EXTENSIBLE: subformat GUID starts with the real tag.
        fmt_tag = read_u16(&bytes[body + 24]);
      }
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = sz;
    }
    pos = body + sz + (sz & 1);  // chunks are word aligned
  }
  if (channels <= 0 || rate <= 0)
    throw IoError("missing or bad fmt chunk: " + path);
  if (data_off == 0 || data_len == 0)
    throw IoError("missing data chunk: " + path);

  RawWav out;
  out.channels = channels;
  out.sample_rate = rate;
  const unsigned char *d = &bytes[data_off];
  const std::size_t n_bytes = data_len;
  if (fmt_tag == 1 && bits == 16) {
    const std::size_t n = n_bytes / 2;
    out.interleaved.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t v = static_cast<std::int16_t>(read_u16(d + 2 * i));
      out.interleaved[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (fmt_tag == 1 && bits == 24) {
    const std::size_t n = n_bytes / 3;
    out.interleaved.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int32_t v = d[3 * i] | (d[3 * i + 1] << 8) | (d[3 * i + 2] << 16);
      if (v & 0x800000) v |= ~0xFFFFFF;
      out.interleaved[i] = static_cast<double>(v) / 8388608.0;
    }
  } else if (fmt_tag == 1 && bits == 32) {
    const std::size_t n = n_bytes / 4;
    out.interleaved.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int32_t v = static_cast<std::int32_t>(read_u32(d + 4 * i));
      out.interleaved[i] = static_cast<double>(v) / 2147483648.0;
    }
  } else if (fmt_tag == 1 && bits == 8) {
    out.interleaved.resize(n_bytes);
    for (std::size_t i = 0; i < n_bytes; ++i)
      out.interleaved[i] = (static_cast<double>(d[i]) - 128.0) / 128.0;
  } else if (fmt_tag == 3 && bits == 32) {
    const std::size_t n = n_bytes / 4;
    out.interleaved.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, d + 4 * i, 4);
      out.interleaved[i] = static_cast<double>(f);
    }
  } else if (fmt_tag == 3 && bits == 64) {
    const std::size_t n = n_bytes / 8;
    out.interleaved.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double f;
      std::memcpy(&f, d + 8 * i, 8);
      out.interleaved[i] = f;
    }
  } else {
    throw IoError("unsupported wav encoding (fmt=" + std::to_string(fmt_tag) +
                  ", bits=" + std::to_string(bits) + "): " + path);
  }
  if (out.interleaved.empty()) throw IoError("empty data chunk: " + path);
  return out;
}

}  // namespace detail

// Windowed-sinc rational resampler. Fixed design: Blackman window,
// 16 zero crossings, cutoff at 0.45 of the lower Nyquist pair, per-sample
// weight normalization (exact DC gain). Deterministic across platforms
// up to libm rounding.
inline std::vector<double> resample(const std::vector<double> &in, int sr_in,
                                    int sr_out) {
  if (sr_in <= 0 || sr_out <= 0) throw ArgumentError("bad sample rate");
  if (in.empty()) throw ArgumentError("resample: empty input");
  if (sr_in == sr_out) return in;

  const double ratio = static_cast<double>(sr_out) / sr_in;
  const std::size_t n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(in.size()) * ratio));
  const double fc = 0.45 * std::min(sr_in, sr_out);  // Hz
  const double r = fc / sr_in;                       // cycles per input sample
  const double half_width = 16.0 / (2.0 * r);
  const auto kernel = [&](double d) {
    const double pi = 3.14159265358979323846;
    double sinc = (d == 0.0) ? 1.0 : std::sin(2.0 * pi * r * d) / (2.0 * pi * r * d);
    const double u = d / half_width;  // in [-1, 1]
    const double win = 0.42 + 0.5 * std::cos(pi * u) + 0.08 * std::cos(2.0 * pi * u);
    return 2.0 * r * sinc * win;
  };

  std::vector<double> out(std::max<std::size_t>(n_out, 1), 0.0);
  const std::int64_t n_in = static_cast<std::int64_t>(in.size());
  for (std::size_t m = 0; m < out.size(); ++m) {
    const double p = static_cast<double>(m) / ratio;
    const std::int64_t k_lo =
        std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(p - half_width)));
    const std::int64_t k_hi = std::min<std::int64_t>(
        n_in - 1, static_cast<std::int64_t>(std::floor(p + half_width)));
    double acc = 0.0, wsum = 0.0;
    for (std::int64_t k = k_lo; k <= k_hi; ++k) {
      const double w = kernel(p - static_cast<double>(k));
      acc += w * in[static_cast<std::size_t>(k)];
      wsum += w;
    }
    out[m] = (wsum != 0.0) ? acc / wsum : 0.0;
  }
  return out;
}

// Reads a WAV file into the canonical format: mono (channel mean),
// 16 kHz (windowed-sinc), amplitudes clamped to [-1,1].
inline AudioClip load_wav(const std::string &path,
                          int target_rate = kCanonicalSampleRate) {
  detail::RawWav raw = detail::read_wav_raw(path);
  const std::size_t frames = raw.interleaved.size() / raw.channels;
  if (frames == 0) throw IoError("wav has no complete frames: " + path);
  std::vector<double> mono(frames, 0.0);
  if (raw.channels == 1) {
    mono.assign(raw.interleaved.begin(), raw.interleaved.begin() + frames);
  } else {
    for (std::size_t t = 0; t < frames; ++t) {
      double acc = 0.0;
      for (int c = 0; c < raw.channels; ++c)
        acc += raw.interleaved[t * raw.channels + c];
      mono[t] = acc / raw.channels;
    }
  }
  AudioClip clip;
  clip.sample_rate_hz = target_rate;
  clip.samples = (raw.sample_rate == target_rate)
                     ? std::move(mono)
                     : resample(mono, raw.sample_rate, target_rate);
  for (double &s : clip.samples) s = std::clamp(s, -1.0, 1.0);
  return clip;
}

// Writes the canonical output format: RIFF WAV, 16-bit PCM, mono.
inline void save_wav(const AudioClip &clip, const std::string &path) {
  if (clip.samples.empty()) throw ArgumentError("save_wav: empty clip");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write wav file: " + path);

  const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_bytes = n * 2;
  const std::uint32_t rate = static_cast<std::uint32_t>(clip.sample_rate_hz);

  auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<char *>(b), 4);
  };
  auto put_u16 = [&](std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF)};
    out.write(reinterpret_cast<char *>(b), 2);
  };

  out.write("RIFF", 4);
  put_u32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(rate);
  put_u32(rate * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_bytes);
  for (std::uint32_t i = 0; i < n; ++i) {
    double v = std::clamp(clip.samples[i], -1.0, 1.0);
    std::int32_t q = static_cast<std::int32_t>(std::llround(v * 32767.0));
    q = std::clamp(q, -32768, 32767);
    put_u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  if (!out) throw IoError("short write: " + path);
}

}  // namespace pse

#endif  // PSE_AUDIO_HPP_
