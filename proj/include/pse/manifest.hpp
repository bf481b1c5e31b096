// pse/manifest.hpp
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

// Manifest-driven corpus management. A manifest is a JSON-lines file:
// one header object {"name":..., "kind":...} followed by one record per
// line. Audio kinds carry UtteranceRecords, text manifests TextRecords.

#ifndef PSE_MANIFEST_HPP_
#define PSE_MANIFEST_HPP_

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pse/audio.hpp"
#include "pse/error.hpp"
#include "pse/rng.hpp"

namespace pse {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

enum class Partition { tr, vl, te };
enum class Origin { natural, synthesized };
enum class ManifestKind { clean_speech, noise, text, synthesized_speech };

inline std::string to_string(Partition p) {
  switch (p) {
    case Partition::tr: return "tr";
    case Partition::vl: return "vl";
    default: return "te";
  }
}

inline Partition partition_from_string(const std::string &s) {
  if (s == "tr") return Partition::tr;
  if (s == "vl") return Partition::vl;
  if (s == "te") return Partition::te;
  throw ArgumentError("unknown partition: " + s);
}

inline std::string to_string(Origin o) {
  return o == Origin::natural ? "natural" : "synthesized";
}

inline Origin origin_from_string(const std::string &s) {
  if (s == "natural") return Origin::natural;
  if (s == "synthesized") return Origin::synthesized;
  throw ArgumentError("unknown origin: " + s);
}

inline std::string to_string(ManifestKind k) {
  switch (k) {
    case ManifestKind::clean_speech: return "clean_speech";
    case ManifestKind::noise: return "noise";
    case ManifestKind::text: return "text";
    default: return "synthesized_speech";
  }
}

inline ManifestKind kind_from_string(const std::string &s) {
  if (s == "clean_speech") return ManifestKind::clean_speech;
  if (s == "noise") return ManifestKind::noise;
  if (s == "text") return ManifestKind::text;
  if (s == "synthesized_speech") return ManifestKind::synthesized_speech;
  throw ArgumentError("unknown manifest kind: " + s);
}

struct UtteranceRecord {
  std::string id;
  std::string speaker_id;
  std::string path;
  double duration_sec = 0.0;
  Partition partition = Partition::tr;
  Origin origin = Origin::natural;
  std::optional<std::string> backend_tag;

  ordered_json to_json() const {
    ordered_json j;
    j["id"] = id;
    j["speaker_id"] = speaker_id;
    j["path"] = path;
    j["duration_sec"] = duration_sec;
    j["partition"] = to_string(partition);
    j["origin"] = to_string(origin);
    if (backend_tag) j["backend_tag"] = *backend_tag;
    return j;
  }

  static UtteranceRecord from_json(const json &j) {
    UtteranceRecord r;
    r.id = j.at("id").get<std::string>();
    r.speaker_id = j.at("speaker_id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.duration_sec = j.at("duration_sec").get<double>();
    r.partition = partition_from_string(j.at("partition").get<std::string>());
    r.origin = origin_from_string(j.at("origin").get<std::string>());
    if (j.contains("backend_tag"))
      r.backend_tag = j.at("backend_tag").get<std::string>();
    return r;
  }
};

struct TextRecord {
  std::string id;
  std::string text;

  ordered_json to_json() const {
    ordered_json j;
    j["id"] = id;
    j["text"] = text;
    return j;
  }

  static TextRecord from_json(const json &j) {
    TextRecord r;
    r.id = j.at("id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    return r;
  }
};

struct Manifest {
  std::string name;
  ManifestKind kind = ManifestKind::clean_speech;
  std::vector<UtteranceRecord> records;
  std::vector<TextRecord> texts;  // used when kind == text

  bool is_text() const { return kind == ManifestKind::text; }

  double total_duration_sec() const {
    double acc = 0.0;
    for (const auto &r : records) acc += r.duration_sec;
    return acc;
  }

  std::size_t record_count() const {
    return is_text() ? texts.size() : records.size();
  }

  // Checks the type invariants. With validate_files set, every referenced
  // audio file must exist; with strict_durations, manifest durations are
  // re-verified against the files (0.1 s tolerance).
  void validate(bool validate_files = false, bool strict_durations = false) const {
    if (is_text()) {
      std::set<std::string> ids;
      for (const auto &t : texts) {
        if (t.text.empty())
          throw ValidationError("text record '" + t.id + "' has empty text");
        if (!ids.insert(t.id).second)
          throw ValidationError("duplicate id in manifest: " + t.id);
      }
      if (!records.empty())
        throw ValidationError("text manifest must not carry audio records");
      return;
    }
    std::set<std::string> ids;
    std::map<std::string, Partition> path_partition;
    for (const auto &r : records) {
      if (!ids.insert(r.id).second)
        throw ValidationError("duplicate id in manifest: " + r.id);
      if (r.duration_sec <= 0.0)
        throw ValidationError("record '" + r.id + "' has non-positive duration");
      const bool synth = r.origin == Origin::synthesized;
      if (synth != r.backend_tag.has_value())
        throw ValidationError("record '" + r.id +
                              "': origin/backend_tag inconsistency");
      auto it = path_partition.find(r.path);
      if (it == path_partition.end()) {
        path_partition.emplace(r.path, r.partition);
      } else if (it->second != r.partition) {
        throw ValidationError("file shared across partitions: " + r.path);
      }
      if (validate_files || strict_durations) {
        if (!std::filesystem::exists(r.path))
          throw ValidationError("missing audio file for '" + r.id + "': " + r.path);
        if (strict_durations) {
          AudioClip clip = load_wav(r.path);
          if (std::abs(clip.duration_sec() - r.duration_sec) > 0.1)
            throw ValidationError("duration mismatch for '" + r.id + "': manifest " +
                                  std::to_string(r.duration_sec) + "s, file " +
                                  std::to_string(clip.duration_sec()) + "s");
        }
      }
    }
  }

  Manifest filter_partition(Partition p) const {
    Manifest out;
    out.name = name + "_" + to_string(p);
    out.kind = kind;
    for (const auto &r : records)
      if (r.partition == p) out.records.push_back(r);
    return out;
  }

  Manifest filter_speaker(const std::string &speaker_id) const {
    Manifest out;
    out.name = name + "_" + speaker_id;
    out.kind = kind;
    for (const auto &r : records)
      if (r.speaker_id == speaker_id) out.records.push_back(r);
    return out;
  }

  std::vector<std::string> speakers() const {
    std::set<std::string> s;
    for (const auto &r : records) s.insert(r.speaker_id);
    return {s.begin(), s.end()};
  }
};

inline Manifest load_manifest(const std::string &path,
                              bool validate_files = false,
                              bool strict_durations = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  Manifest m;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception &e) {
      throw ParseError(std::string("malformed manifest line: ") + e.what(), line_no);
    }
    try {
      if (!have_header) {
        m.name = j.at("name").get<std::string>();
        m.kind = kind_from_string(j.at("kind").get<std::string>());
        have_header = true;
      } else if (m.is_text()) {
        m.texts.push_back(TextRecord::from_json(j));
      } else {
        m.records.push_back(UtteranceRecord::from_json(j));
      }
    } catch (const json::exception &e) {
      throw ParseError(std::string("bad manifest record: ") + e.what(), line_no);
    }
  }
  if (!have_header) throw ParseError("manifest missing header line", 1);
  m.validate(validate_files, strict_durations);
  return m;
}

inline void write_manifest(const Manifest &m, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  ordered_json header;
  header["name"] = m.name;
  header["kind"] = to_string(m.kind);
  out << header.dump() << "\n";
  if (m.is_text()) {
    for (const auto &t : m.texts) out << t.to_json().dump() << "\n";
  } else {
    for (const auto &r : m.records) out << r.to_json().dump() << "\n";
  }
  if (!out) throw IoError("short write: " + path);
}

// Deterministically reassigns partitions. Fractions must sum to 1 (1e-9);
// resulting sizes match the fractions within one record (largest remainder).
inline Manifest split_partitions(const Manifest &manifest,
                                 const std::map<Partition, double> &fractions,
                                 std::uint64_t seed) {
  double sum = 0.0;
  for (const auto &[p, f] : fractions) {
    if (f < 0.0) throw ArgumentError("negative partition fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ArgumentError("partition fractions must sum to 1, got " +
                        std::to_string(sum));

  const std::size_t n = manifest.records.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5117ULL));
  rng.shuffle(order);

  // Largest-remainder apportionment of n records to the partitions.
  std::vector<std::pair<Partition, double>> want(fractions.begin(), fractions.end());
  std::vector<std::size_t> counts(want.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    const double exact = want[i].second * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(exact);
    assigned += counts[i];
    rema.push_back({exact - std::floor(exact), i});
  }
  std::sort(rema.begin(), rema.end(), [](const auto &a, const auto &b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned)
    counts[rema[i % rema.size()].second] += 1;

  Manifest out = manifest;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    for (std::size_t k = 0; k < counts[i]; ++k)
      out.records[order[cursor++]].partition = want[i].first;
  }
  return out;
}

// Table-1-style per-speaker duration summary.
inline std::string manifest_summary(const Manifest &m) {
  std::ostringstream os;
  os << "manifest " << m.name << " (" << to_string(m.kind) << ")\n";
  if (m.is_text()) {
    os << "  " << m.texts.size() << " sentences\n";
    return os.str();
  }
  std::map<std::string, std::map<Partition, double>> per_speaker;
  std::map<Partition, double> per_partition;
  for (const auto &r : m.records) {
    per_speaker[r.speaker_id][r.partition] += r.duration_sec;
    per_partition[r.partition] += r.duration_sec;
  }
  os << "  records: " << m.records.size()
     << "  speakers: " << per_speaker.size()
     << "  total: " << m.total_duration_sec() << " sec";
  if (m.records.empty()) os << "  [empty]";
  os << "\n";
  for (const auto &[p, d] : per_partition)
    os << "  " << to_string(p) << ": " << d << " sec\n";
  for (const auto &[spk, parts] : per_speaker) {
    os << "  speaker " << spk << ":";
    for (const auto &[p, d] : parts) os << "  " << to_string(p) << "=" << d << "s";
    os << "\n";
  }
  return os.str();
}

// Reads a record's audio in the canonical format; errors carry the id.
inline AudioClip read_clip(const UtteranceRecord &record) {
  try {
    return load_wav(record.path);
  } catch (const IoError &e) {
    throw IoError("record '" + record.id + "': " + e.what());
  }
}

// The few seconds of clean target-speaker audio that condition synthesis.
struct SpeakerRef {
  std::string speaker_id;
  std::vector<AudioClip> enrollment_clips;

  double total_enrollment_sec() const {
    double acc = 0.0;
    for (const auto &c : enrollment_clips) acc += c.duration_sec();
    return acc;
  }

  void validate() const {
    if (enrollment_clips.empty() || total_enrollment_sec() <= 0.0)
      throw ArgumentError("speaker '" + speaker_id + "' has no enrollment audio");
  }

  // All enrollment audio concatenated, for feature extraction.
  AudioClip concatenated() const {
    AudioClip out;
    for (const auto &c : enrollment_clips)
      out.samples.insert(out.samples.end(), c.samples.begin(), c.samples.end());
    return out;
  }
};

}  // namespace pse

#endif  // PSE_MANIFEST_HPP_
