// tests/test_manifest.cpp
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

#include <fstream>
#include <sstream>

#include "pse/manifest.hpp"
#include "test_util.hpp"

using namespace pse;
using pse_test::TempDir;

namespace {

Manifest sample_manifest(int speakers, double sec_per_speaker) {
  Manifest m;
  m.name = "S_te";
  m.kind = ManifestKind::clean_speech;
  for (int s = 0; s < speakers; ++s) {
    UtteranceRecord r;
    r.id = "utt_" + std::to_string(s);
    r.speaker_id = "spk" + std::to_string(s);
    r.path = "/data/" + r.id + ".wav";
    r.duration_sec = sec_per_speaker;
    r.partition = Partition::te;
    r.origin = Origin::natural;
    m.records.push_back(r);
  }
  return m;
}

std::string slurp(const std::string &path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("20 speakers x 30 sec totals 600 seconds") {
  Manifest m = sample_manifest(20, 30.0);
  REQUIRE(m.total_duration_sec() == Catch::Approx(600.0));
}

TEST_CASE("empty manifest is valid with zero duration") {
  Manifest m;
  m.name = "empty";
  m.kind = ManifestKind::noise;
  m.validate();
  REQUIRE(m.total_duration_sec() == 0.0);
  REQUIRE(m.record_count() == 0);
  REQUIRE(manifest_summary(m).find("[empty]") != std::string::npos);
}

TEST_CASE("duplicate ids are rejected") {
  Manifest m = sample_manifest(2, 10.0);
  m.records[1].id = m.records[0].id;
  REQUIRE_THROWS_AS(m.validate(), ValidationError);
}

TEST_CASE("origin and backend_tag must be consistent") {
  Manifest m = sample_manifest(1, 10.0);
  m.records[0].origin = Origin::synthesized;  // no backend_tag
  REQUIRE_THROWS_AS(m.validate(), ValidationError);
  m.records[0].backend_tag = "yourtts";
  m.validate();
  m.records[0].origin = Origin::natural;  // tag without synthesized origin
  REQUIRE_THROWS_AS(m.validate(), ValidationError);
}

TEST_CASE("a file may not straddle partitions") {
  Manifest m = sample_manifest(2, 10.0);
  m.records[1].path = m.records[0].path;
  m.records[1].partition = Partition::tr;
  REQUIRE_THROWS_AS(m.validate(), ValidationError);
}

TEST_CASE("write/load round trip normalizes to a fixed point") {
  TempDir dir("manifest");
  Manifest m = sample_manifest(5, 12.5);
  m.records[2].origin = Origin::synthesized;
  m.records[2].backend_tag = "audiolm";
  const std::string p1 = dir.str() + "/m1.jsonl";
  const std::string p2 = dir.str() + "/m2.jsonl";
  write_manifest(m, p1);
  Manifest loaded = load_manifest(p1);
  write_manifest(loaded, p2);
  REQUIRE(slurp(p1) == slurp(p2));
  REQUIRE(loaded.name == m.name);
  REQUIRE(loaded.records.size() == m.records.size());
  REQUIRE(loaded.records[2].backend_tag == m.records[2].backend_tag);
}

TEST_CASE("duration sum matches total within 1e-6") {
  Rng rng(5);
  Manifest m;
  m.name = "rand";
  m.kind = ManifestKind::clean_speech;
  double expect = 0.0;
  for (int i = 0; i < 200; ++i) {
    UtteranceRecord r;
    r.id = "u" + std::to_string(i);
    r.speaker_id = "s";
    r.path = "/p/" + r.id;
    r.duration_sec = rng.uniform(0.1, 30.0);
    expect += r.duration_sec;
    m.records.push_back(r);
  }
  REQUIRE(std::abs(m.total_duration_sec() - expect) < 1e-6);
}

TEST_CASE("malformed line reports its line number") {
  TempDir dir("manifest");
  const std::string path = dir.str() + "/bad.jsonl";
  std::ofstream(path) << R"({"name":"x","kind":"noise"})" << "\n"
                      << "this is not json\n";
  try {
    load_manifest(path);
    FAIL("expected ParseError");
  } catch (const ParseError &e) {
    REQUIRE(e.line() == 2);
  }
}

TEST_CASE("text manifests carry sentences and no audio") {
  TempDir dir("manifest");
  Manifest t;
  t.name = "T";
  t.kind = ManifestKind::text;
  t.texts.push_back({"s0", "hello there"});
  t.texts.push_back({"s1", "another line"});
  const std::string path = dir.str() + "/t.jsonl";
  write_manifest(t, path);
  Manifest back = load_manifest(path);
  REQUIRE(back.is_text());
  REQUIRE(back.texts.size() == 2);
  REQUIRE(back.texts[1].text == "another line");

  back.records.push_back(UtteranceRecord{});
  back.records[0].id = "bogus";
  back.records[0].duration_sec = 1.0;
  REQUIRE_THROWS_AS(back.validate(), ValidationError);
}

TEST_CASE("missing audio file detected when validate_files set") {
  TempDir dir("manifest");
  Manifest m = sample_manifest(1, 2.0);
  const std::string path = dir.str() + "/m.jsonl";
  write_manifest(m, path);
  REQUIRE_NOTHROW(load_manifest(path));
  REQUIRE_THROWS_AS(load_manifest(path, /*validate_files=*/true), ValidationError);
}

TEST_CASE("split_partitions is deterministic and sized by fractions") {
  Manifest m = sample_manifest(10, 5.0);
  const std::map<Partition, double> fr = {
      {Partition::tr, 0.8}, {Partition::vl, 0.1}, {Partition::te, 0.1}};
  Manifest a = split_partitions(m, fr, 7);
  Manifest b = split_partitions(m, fr, 7);
  int tr = 0, vl = 0, te = 0;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    REQUIRE(a.records[i].partition == b.records[i].partition);
    if (a.records[i].partition == Partition::tr) ++tr;
    if (a.records[i].partition == Partition::vl) ++vl;
    if (a.records[i].partition == Partition::te) ++te;
  }
  REQUIRE(tr == 8);
  REQUIRE(vl == 1);
  REQUIRE(te == 1);

  Manifest c = split_partitions(m, {{Partition::tr, 1.0}}, 3);
  for (const auto &r : c.records) REQUIRE(r.partition == Partition::tr);

  REQUIRE_THROWS_AS(
      split_partitions(m, {{Partition::tr, 0.8}, {Partition::vl, 0.1}}, 1),
      ArgumentError);
}

TEST_CASE("read_clip carries the record id in errors") {
  UtteranceRecord r;
  r.id = "gone";
  r.path = "/no/such.wav";
  r.duration_sec = 1.0;
  try {
    read_clip(r);
    FAIL("expected IoError");
  } catch (const IoError &e) {
    REQUIRE(std::string(e.what()).find("gone") != std::string::npos);
  }
}
