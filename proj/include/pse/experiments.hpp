// pse/experiments.hpp
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

// End-to-end experiment orchestration: generalist baseline vs. finetuned
// PSE models across sizes and synthesis conditions, evaluated per target
// speaker on fixed seeded test mixtures with unseen (te) noise. Every
// grid cell persists its artifacts and can be resumed or recomputed in
// isolation; a lockfile pins the plan hash and seeds.

#ifndef PSE_EXPERIMENTS_HPP_
#define PSE_EXPERIMENTS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pse/error.hpp"
#include "pse/manifest.hpp"
#include "pse/metrics.hpp"
#include "pse/mixer.hpp"
#include "pse/sepnet.hpp"
#include "pse/synthesis.hpp"
#include "pse/toyworld.hpp"
#include "pse/trainer.hpp"

namespace pse {

struct ExperimentCondition {
  std::string backend_id = "simulated";  // "simulated" or "external"
  std::optional<double> fidelity;        // simulated backends only
  double augment_duration_sec = 60.0;
  std::string external_command;

  std::string label() const {
    std::ostringstream os;
    if (backend_id == "simulated") {
      os << "simulated";
      if (fidelity) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.2f", *fidelity);
        os << " a=" << buf;
      }
    } else {
      os << backend_id;
    }
    os << ", " << static_cast<int>(augment_duration_sec) << "s";
    return os.str();
  }

  ordered_json to_json() const {
    ordered_json j;
    j["backend_id"] = backend_id;
    if (fidelity) j["fidelity"] = *fidelity;
    j["augment_duration_sec"] = augment_duration_sec;
    if (!external_command.empty()) j["external_command"] = external_command;
    return j;
  }

  static ExperimentCondition from_json(const json &j) {
    ExperimentCondition c;
    c.backend_id = j.value("backend_id", std::string("simulated"));
    if (j.contains("fidelity")) c.fidelity = j.at("fidelity").get<double>();
    c.augment_duration_sec = j.value("augment_duration_sec", 60.0);
    c.external_command = j.value("external_command", std::string());
    return c;
  }
};

// Fabricated-world knobs for desk-scale runs with no real corpora.
struct ToyWorldSpec {
  std::uint64_t corpus_seed = 42;
  int generalist_speakers = 12;
  int generalist_utts_per_speaker = 10;
  int noise_clips_per_partition = 8;
  double enrollment_sec = 5.0;
  int test_utts_per_speaker = 6;

  ordered_json to_json() const {
    ordered_json j;
    j["corpus_seed"] = corpus_seed;
    j["generalist_speakers"] = generalist_speakers;
    j["generalist_utts_per_speaker"] = generalist_utts_per_speaker;
    j["noise_clips_per_partition"] = noise_clips_per_partition;
    j["enrollment_sec"] = enrollment_sec;
    j["test_utts_per_speaker"] = test_utts_per_speaker;
    return j;
  }

  static ToyWorldSpec from_json(const json &j) {
    ToyWorldSpec s;
    s.corpus_seed = j.value("corpus_seed", std::uint64_t{42});
    s.generalist_speakers = j.value("generalist_speakers", 12);
    s.generalist_utts_per_speaker = j.value("generalist_utts_per_speaker", 10);
    s.noise_clips_per_partition = j.value("noise_clips_per_partition", 8);
    s.enrollment_sec = j.value("enrollment_sec", 5.0);
    s.test_utts_per_speaker = j.value("test_utts_per_speaker", 6);
    return s;
  }
};

namespace detail {

inline ordered_json train_cfg_to_json(const TrainConfig &c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["validate_every_mixtures"] = c.validate_every_mixtures;
  j["patience_mixtures"] = c.patience_mixtures;
  j["max_mixtures"] = c.max_mixtures;
  j["snr_lo"] = c.snr_range.first;
  j["snr_hi"] = c.snr_range.second;
  j["segment_sec"] = c.segment_sec;
  j["val_mixture_count"] = c.val_mixture_count;
  return j;
}

inline TrainConfig train_cfg_from_json(const json &j, TrainConfig base) {
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.validate_every_mixtures =
      j.value("validate_every_mixtures", base.validate_every_mixtures);
  base.patience_mixtures = j.value("patience_mixtures", base.patience_mixtures);
  base.max_mixtures = j.value("max_mixtures", base.max_mixtures);
  base.snr_range.first = j.value("snr_lo", base.snr_range.first);
  base.snr_range.second = j.value("snr_hi", base.snr_range.second);
  base.segment_sec = j.value("segment_sec", base.segment_sec);
  base.val_mixture_count = j.value("val_mixture_count", base.val_mixture_count);
  return base;
}

}  // namespace detail

struct ExperimentPlan {
  std::string name = "experiment";
  std::vector<ModelSize> sizes;
  std::vector<ExperimentCondition> conditions;
  std::vector<std::string> speakers;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;

  // World sources: either a fabricated toy world, or explicit manifests.
  std::optional<ToyWorldSpec> toyworld;
  std::string speech_corpus;   // clean speech for generalist pretraining
  std::string noise_corpus;    // noise manifest with tr/vl/te partitions
  std::string target_speech;   // target speakers: tr = enrollment, te = test
  std::string texts;           // sentences for synthesis

  std::map<std::string, std::string> generalist_checkpoints;  // size -> path

  TrainConfig pretrain_cfg = desk_default_pretrain();
  TrainConfig finetune_cfg = desk_default_finetune();
  int test_mixtures_per_speaker = 30;
  double eval_segment_sec = 2.0;
  std::uint64_t eval_seed = 99;
  std::string pesq_command;

  // Desk-scale defaults; full-paper scale needs hundreds of GPU-hours.
  static TrainConfig desk_default_pretrain() {
    TrainConfig c;
    c.learning_rate = 1e-3;
    c.validate_every_mixtures = 1000;
    c.patience_mixtures = 6000;
    c.max_mixtures = 16000;
    c.segment_sec = 1.0;
    c.val_mixture_count = 100;
    return c;
  }

  static TrainConfig desk_default_finetune() {
    TrainConfig c;
    c.learning_rate = 3e-4;
    c.validate_every_mixtures = 250;
    c.patience_mixtures = 1500;
    c.max_mixtures = 6000;
    c.segment_sec = 1.0;
    c.val_mixture_count = 30;
    return c;
  }

  void validate() const {
    if (sizes.empty() || conditions.empty() || speakers.empty() || seeds.empty())
      throw ArgumentError("plan needs sizes, conditions, speakers and seeds");
    std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
    if (uniq.size() != seeds.size())
      throw ArgumentError("plan seeds must be distinct");
    if (output_dir.empty()) throw ArgumentError("plan needs an output_dir");
    if (!toyworld && (speech_corpus.empty() || noise_corpus.empty() ||
                      target_speech.empty() || texts.empty()))
      throw ArgumentError(
          "plan needs either a toyworld spec or explicit corpus manifests");
    pretrain_cfg.validate();
    finetune_cfg.validate();
    if (test_mixtures_per_speaker <= 0)
      throw ArgumentError("test_mixtures_per_speaker must be positive");
  }

  ordered_json to_json() const {
    ordered_json j;
    j["name"] = name;
    j["sizes"] = ordered_json::array();
    for (auto s : sizes) j["sizes"].push_back(to_string(s));
    j["conditions"] = ordered_json::array();
    for (const auto &c : conditions) j["conditions"].push_back(c.to_json());
    j["speakers"] = speakers;
    j["seeds"] = seeds;
    j["output_dir"] = output_dir;
    if (toyworld) j["toyworld"] = toyworld->to_json();
    if (!speech_corpus.empty()) j["speech_corpus"] = speech_corpus;
    if (!noise_corpus.empty()) j["noise_corpus"] = noise_corpus;
    if (!target_speech.empty()) j["target_speech"] = target_speech;
    if (!texts.empty()) j["texts"] = texts;
    if (!generalist_checkpoints.empty())
      j["generalist_checkpoints"] = generalist_checkpoints;
    j["pretrain"] = detail::train_cfg_to_json(pretrain_cfg);
    j["finetune"] = detail::train_cfg_to_json(finetune_cfg);
    j["test_mixtures_per_speaker"] = test_mixtures_per_speaker;
    j["eval_segment_sec"] = eval_segment_sec;
    j["eval_seed"] = eval_seed;
    if (!pesq_command.empty()) j["pesq_command"] = pesq_command;
    return j;
  }

  static ExperimentPlan from_json(const json &j) {
    ExperimentPlan p;
    p.name = j.value("name", std::string("experiment"));
    for (const auto &s : j.at("sizes"))
      p.sizes.push_back(model_size_from_string(s.get<std::string>()));
    for (const auto &c : j.at("conditions"))
      p.conditions.push_back(ExperimentCondition::from_json(c));
    p.speakers = j.at("speakers").get<std::vector<std::string>>();
    p.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    p.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("toyworld"))
      p.toyworld = ToyWorldSpec::from_json(j.at("toyworld"));
    p.speech_corpus = j.value("speech_corpus", std::string());
    p.noise_corpus = j.value("noise_corpus", std::string());
    p.target_speech = j.value("target_speech", std::string());
    p.texts = j.value("texts", std::string());
    if (j.contains("generalist_checkpoints"))
      p.generalist_checkpoints =
          j.at("generalist_checkpoints").get<std::map<std::string, std::string>>();
    if (j.contains("pretrain"))
      p.pretrain_cfg = detail::train_cfg_from_json(j.at("pretrain"), p.pretrain_cfg);
    if (j.contains("finetune"))
      p.finetune_cfg = detail::train_cfg_from_json(j.at("finetune"), p.finetune_cfg);
    p.test_mixtures_per_speaker =
        j.value("test_mixtures_per_speaker", p.test_mixtures_per_speaker);
    p.eval_segment_sec = j.value("eval_segment_sec", p.eval_segment_sec);
    p.eval_seed = j.value("eval_seed", p.eval_seed);
    p.pesq_command = j.value("pesq_command", std::string());
    return p;
  }

  std::uint64_t plan_hash() const { return fnv1a(to_json().dump()); }
};

inline ExperimentPlan load_plan(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open plan file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    throw ParseError(std::string("bad plan JSON: ") + e.what(), 1);
  }
  ExperimentPlan p = ExperimentPlan::from_json(j);
  p.validate();
  return p;
}

// ---------------------------------------------------------------------
// Result table.

struct ColumnStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

struct TableCell {
  std::map<std::string, ColumnStats> columns;
  bool failed = false;
  std::string error;
  bool val_improved_all = false;  // every run improved its validation SDR
};

// Rows keyed by (condition label, size); "generalist" is the baseline row.
struct ResultTable {
  std::string experiment_name;
  std::vector<std::string> condition_order;
  std::vector<std::string> size_order;
  std::map<std::string, std::map<std::string, TableCell>> cells;  // cond -> size

  static const std::vector<std::string> &column_order() {
    static const std::vector<std::string> cols = {
        "sdri_te", "sdr_te", "estoi_te", "pesq_te",
        "sdri_vl", "sdr_vl", "estoi_vl", "pesq_vl"};
    return cols;
  }

  bool any_failed() const {
    for (const auto &[c, row] : cells)
      for (const auto &[s, cell] : row)
        if (cell.failed) return true;
    return false;
  }

  const TableCell *find(const std::string &cond, const std::string &size) const {
    auto it = cells.find(cond);
    if (it == cells.end()) return nullptr;
    auto jt = it->second.find(size);
    return jt == it->second.end() ? nullptr : &jt->second;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["experiment_name"] = experiment_name;
    j["condition_order"] = condition_order;
    j["size_order"] = size_order;
    ordered_json cj = ordered_json::object();
    for (const auto &cond : condition_order) {
      auto it = cells.find(cond);
      if (it == cells.end()) continue;
      ordered_json row = ordered_json::object();
      for (const auto &size : size_order) {
        auto jt = it->second.find(size);
        if (jt == it->second.end()) continue;
        ordered_json cell;
        cell["failed"] = jt->second.failed;
        if (!jt->second.error.empty()) cell["error"] = jt->second.error;
        cell["val_improved_all"] = jt->second.val_improved_all;
        ordered_json cols = ordered_json::object();
        for (const auto &[col, st] : jt->second.columns) {
          cols[col] = {{"mean", st.mean}, {"stddev", st.stddev}, {"n", st.n}};
        }
        cell["columns"] = cols;
        row[size] = cell;
      }
      cj[cond] = row;
    }
    j["cells"] = cj;
    return j;
  }

  static ResultTable from_json(const json &j) {
    ResultTable t;
    t.experiment_name = j.value("experiment_name", std::string());
    t.condition_order = j.at("condition_order").get<std::vector<std::string>>();
    t.size_order = j.at("size_order").get<std::vector<std::string>>();
    for (const auto &[cond, row] : j.at("cells").items()) {
      for (const auto &[size, cell] : row.items()) {
        TableCell c;
        c.failed = cell.value("failed", false);
        c.error = cell.value("error", std::string());
        c.val_improved_all = cell.value("val_improved_all", false);
        if (cell.contains("columns")) {
          for (const auto &[col, st] : cell.at("columns").items()) {
            ColumnStats s;
            s.mean = st.at("mean").get<double>();
            s.stddev = st.value("stddev", 0.0);
            s.n = st.value("n", std::size_t{1});
            c.columns[col] = s;
          }
        }
        t.cells[cond][size] = c;
      }
    }
    return t;
  }
};

// Literature values rendered for comparison: quoted style, never bolded.
struct LiteratureRow {
  std::string label;
  std::string size;
  std::map<std::string, double> values;
};

// Markdown report, one section per size, best computed value per column
// in bold (ties all bold). Literature rows are italic with a (lit.) tag.
inline std::string render_report(const ResultTable &table,
                                 const std::vector<LiteratureRow> &literature = {}) {
  std::ostringstream os;
  os << "# " << (table.experiment_name.empty() ? "experiment" : table.experiment_name)
     << "\n\n";
  bool any_row = false;
  for (const auto &cond : table.condition_order) {
    auto it = table.cells.find(cond);
    if (it != table.cells.end() && !it->second.empty()) any_row = true;
  }
  if (!any_row) {
    os << "_no results_\n";
    return os.str();
  }

  static const std::vector<std::pair<std::string, std::string>> col_titles = {
      {"sdri_te", "SDRI (te)"}, {"sdr_te", "SDR (te)"},
      {"estoi_te", "eSTOI (te)"}, {"pesq_te", "PESQ (te)"},
      {"sdri_vl", "SDRI (vl)"}, {"sdr_vl", "SDR (vl)"},
      {"estoi_vl", "eSTOI (vl)"}, {"pesq_vl", "PESQ (vl)"}};

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  for (const auto &size : table.size_order) {
    os << "## Size " << size << "\n\n";
    os << "| Condition |";
    for (const auto &[key, title] : col_titles) os << " " << title << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < col_titles.size(); ++i) os << "---|";
    os << "\n";

    // Column maxima over computed (non-failed) rows in this size group.
    std::map<std::string, double> best;
    for (const auto &cond : table.condition_order) {
      const TableCell *cell = table.find(cond, size);
      if (!cell || cell->failed) continue;
      for (const auto &[col, st] : cell->columns) {
        auto bit = best.find(col);
        if (bit == best.end() || st.mean > bit->second) best[col] = st.mean;
      }
    }

    for (const auto &cond : table.condition_order) {
      const TableCell *cell = table.find(cond, size);
      if (!cell) continue;
      os << "| " << cond << " |";
      if (cell->failed) {
        for (std::size_t i = 0; i < col_titles.size(); ++i) os << " FAILED |";
        os << "\n";
        continue;
      }
      for (const auto &[key, title] : col_titles) {
        auto cit = cell->columns.find(key);
        if (cit == cell->columns.end()) {
          os << " - |";
          continue;
        }
        const double v = cit->second.mean;
        std::string s = fmt(v);
        if (cit->second.n > 1) s += " (" + fmt(cit->second.stddev) + ")";
        if (std::abs(v - best[key]) < 1e-9) s = "**" + s + "**";
        os << " " << s << " |";
      }
      os << "\n";
    }

    for (const auto &lit : literature) {
      if (lit.size != size) continue;
      os << "| *" << lit.label << "* (lit.) |";
      for (const auto &[key, title] : col_titles) {
        auto vit = lit.values.find(key);
        if (vit == lit.values.end())
          os << " - |";
        else
          os << " *" << fmt(vit->second) << "* |";
      }
      os << "\n";
    }
    os << "\n";
  }
  return os.str();
}

inline std::string render_report_csv(const ResultTable &table) {
  std::ostringstream os;
  os << "condition,size,column,mean,stddev,n,failed\n";
  for (const auto &cond : table.condition_order) {
    for (const auto &size : table.size_order) {
      const TableCell *cell = table.find(cond, size);
      if (!cell) continue;
      if (cell->failed) {
        os << cond << "," << size << ",,,,," << "1\n";
        continue;
      }
      for (const auto &[col, st] : cell->columns)
        os << cond << "," << size << "," << col << "," << st.mean << ","
           << st.stddev << "," << st.n << ",0\n";
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------
// Runner.

namespace detail {

// Everything the grid needs, fabricated or loaded once per run.
struct ExperimentWorld {
  Manifest speech_corpus;   // generalist training speech (tr/vl partitions)
  Manifest noise;           // tr/vl/te partitions
  Manifest texts;
  std::map<std::string, SpeakerRef> enrollment;      // per target speaker
  std::map<std::string, Manifest> target_test;       // te utterances per speaker
};

inline ExperimentWorld prepare_world(const ExperimentPlan &plan) {
  ExperimentWorld w;
  const auto world_dir = std::filesystem::path(plan.output_dir) / "world";
  if (plan.toyworld) {
    const ToyWorldSpec &spec = *plan.toyworld;
    const auto speech_dir = (world_dir / "speech").string();
    const auto noise_dir = (world_dir / "noise").string();
    const auto manifest_path =
        std::filesystem::path(speech_dir) / "toy_G.jsonl";
    if (std::filesystem::exists(manifest_path)) {
      w.speech_corpus = load_manifest(manifest_path.string());
      w.noise = load_manifest(
          (std::filesystem::path(noise_dir) / "toy_N.jsonl").string());
    } else {
      w.speech_corpus = toyworld::build_speech_corpus(
          speech_dir, "toy_G", spec.generalist_speakers,
          spec.generalist_utts_per_speaker, spec.corpus_seed);
      w.noise = toyworld::build_noise_corpus(
          noise_dir, "toy_N", spec.noise_clips_per_partition,
          mix_seed(spec.corpus_seed, 0x4015EULL));
    }
    w.texts = toyworld::make_text_manifest("toy_T", 200,
                                           mix_seed(spec.corpus_seed, 0x7E87ULL));

    // Target speakers are fresh identities, never part of the corpus.
    for (std::size_t i = 0; i < plan.speakers.size(); ++i) {
      const std::string &spk = plan.speakers[i];
      const ToySpeakerParams params = random_toy_params(
          mix_seed(spec.corpus_seed, 100000ULL + fnv1a(spk) % 100000ULL));
      w.enrollment[spk] = toyworld::make_enrollment(
          params, spk, spec.enrollment_sec, mix_seed(spec.corpus_seed, fnv1a(spk)));

      const auto spk_dir = world_dir / "targets" / spk;
      std::filesystem::create_directories(spk_dir);
      Manifest te;
      te.name = "S_" + spk + "_te";
      te.kind = ManifestKind::clean_speech;
      for (int u = 0; u < spec.test_utts_per_speaker; ++u) {
        const AudioClip clip = toyworld::render_natural_utterance(
            params, mix_seed(spec.corpus_seed,
                             fnv1a(spk) + 7777ULL * static_cast<std::uint64_t>(u + 1)));
        const auto path = spk_dir / ("te_" + std::to_string(u) + ".wav");
        save_wav(clip, path.string());
        UtteranceRecord rec;
        rec.id = spk + "_te_" + std::to_string(u);
        rec.speaker_id = spk;
        rec.path = path.string();
        rec.duration_sec = clip.duration_sec();
        rec.partition = Partition::te;
        rec.origin = Origin::natural;
        te.records.push_back(std::move(rec));
      }
      write_manifest(te, (spk_dir / "te.jsonl").string());
      w.target_test[spk] = std::move(te);
    }
    return w;
  }

  // Explicit manifests.
  w.speech_corpus = load_manifest(plan.speech_corpus);
  w.noise = load_manifest(plan.noise_corpus);
  w.texts = load_manifest(plan.texts);
  Manifest targets = load_manifest(plan.target_speech);
  for (const auto &spk : plan.speakers) {
    Manifest mine = targets.filter_speaker(spk);
    if (mine.records.empty())
      throw ArgumentError("target speaker '" + spk + "' not in " +
                          plan.target_speech);
    SpeakerRef ref;
    ref.speaker_id = spk;
    for (const auto &rec : mine.records)
      if (rec.partition == Partition::tr)
        ref.enrollment_clips.push_back(read_clip(rec));
    ref.validate();
    w.enrollment[spk] = std::move(ref);
    w.target_test[spk] = mine.filter_partition(Partition::te);
    if (w.target_test[spk].records.empty())
      throw ArgumentError("target speaker '" + spk + "' has no te records");
  }
  return w;
}

struct RunStats {
  double sdri = 0.0, sdr = 0.0, estoi_v = 0.0;
  std::optional<double> pesq;
};

inline RunStats evaluate_on(const EnhancementModel &model,
                            const std::vector<Mixture> &mixtures,
                            const std::string &pesq_cmd) {
  RunStats st;
  double pesq_sum = 0.0;
  std::size_t pesq_n = 0;
  for (const auto &mx : mixtures) {
    const AudioClip y = enhance(model, mx.x);
    st.sdr += sdr(y, mx.s);
    st.sdri += sdri(y, mx.s, mx.x);
    st.estoi_v += estoi(y, mx.s);
    if (!pesq_cmd.empty()) {
      const auto p = pesq_adapter(y, mx.s, pesq_cmd);
      if (p) {
        pesq_sum += *p;
        ++pesq_n;
      }
    }
  }
  const double n = static_cast<double>(mixtures.size());
  st.sdr /= n;
  st.sdri /= n;
  st.estoi_v /= n;
  if (pesq_n > 0) st.pesq = pesq_sum / static_cast<double>(pesq_n);
  return st;
}

// One (condition, size, speaker, seed) result, as persisted per cell.
struct CellRun {
  RunStats te, vl;
  bool val_improved = false;
  bool failed = false;
  std::string error;

  ordered_json to_json() const {
    ordered_json j;
    j["failed"] = failed;
    if (failed) {
      j["error"] = error;
      return j;
    }
    j["te"] = {{"sdri", te.sdri}, {"sdr", te.sdr}, {"estoi", te.estoi_v}};
    if (te.pesq) j["te"]["pesq"] = *te.pesq;
    j["vl"] = {{"sdri", vl.sdri}, {"sdr", vl.sdr}, {"estoi", vl.estoi_v}};
    if (vl.pesq) j["vl"]["pesq"] = *vl.pesq;
    j["val_improved"] = val_improved;
    return j;
  }

  static CellRun from_json(const json &j) {
    CellRun r;
    r.failed = j.value("failed", false);
    if (r.failed) {
      r.error = j.value("error", std::string());
      return r;
    }
    r.te.sdri = j.at("te").at("sdri").get<double>();
    r.te.sdr = j.at("te").at("sdr").get<double>();
    r.te.estoi_v = j.at("te").at("estoi").get<double>();
    if (j.at("te").contains("pesq")) r.te.pesq = j.at("te").at("pesq").get<double>();
    r.vl.sdri = j.at("vl").at("sdri").get<double>();
    r.vl.sdr = j.at("vl").at("sdr").get<double>();
    r.vl.estoi_v = j.at("vl").at("estoi").get<double>();
    if (j.at("vl").contains("pesq")) r.vl.pesq = j.at("vl").at("pesq").get<double>();
    r.val_improved = j.value("val_improved", false);
    return r;
  }
};

inline ColumnStats stats_of(const std::vector<double> &xs) {
  ColumnStats st;
  st.n = xs.size();
  if (xs.empty()) return st;
  for (double v : xs) st.mean += v;
  st.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double v : xs) var += (v - st.mean) * (v - st.mean);
  st.stddev = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
  return st;
}

}  // namespace detail

// Runs (or resumes) the full grid and returns the aggregated table. Every
// artifact lands under plan.output_dir; a cell that fails is recorded in
// the table and does not stop the others.
inline ResultTable run_experiment(const ExperimentPlan &plan,
                                  std::ostream *progress = nullptr) {
  plan.validate();
  namespace fs = std::filesystem;
  const fs::path out(plan.output_dir);
  fs::create_directories(out);

  auto say = [&](const std::string &msg) {
    if (progress) (*progress) << "[exp] " << msg << std::endl;
  };

  // Lockfile: plan hash + seeds; a resumed run must match.
  const fs::path lock_path = out / "lock.json";
  ordered_json lock;
  lock["plan_hash"] = plan.plan_hash();
  lock["seeds"] = plan.seeds;
  if (fs::exists(lock_path)) {
    std::ifstream in(lock_path);
    json old;
    in >> old;
    if (old.value("plan_hash", std::uint64_t{0}) != plan.plan_hash())
      throw ValidationError("lockfile mismatch: output_dir was produced by a "
                            "different plan; refusing to resume");
  } else {
    std::ofstream lf(lock_path);
    lf << lock.dump(2) << "\n";
  }
  {
    std::ofstream pf(out / "plan.json");
    pf << plan.to_json().dump(2) << "\n";
  }

  say("preparing world");
  detail::ExperimentWorld world = detail::prepare_world(plan);
  const Manifest speech_tr = world.speech_corpus.filter_partition(Partition::tr);
  const Manifest speech_vl = world.speech_corpus.filter_partition(Partition::vl);
  const Manifest noise_tr = world.noise.filter_partition(Partition::tr);
  const Manifest noise_vl = world.noise.filter_partition(Partition::vl);
  const Manifest noise_te = world.noise.filter_partition(Partition::te);
  if (noise_te.records.empty())
    throw ArgumentError("noise manifest has no te partition");

  // Generalist validation mixtures (fixed, seeded).
  const std::vector<Mixture> gen_val = mixture_stream(
      speech_vl, noise_vl, plan.pretrain_cfg.val_mixture_count,
      plan.pretrain_cfg.snr_range, plan.pretrain_cfg.segment_sec,
      mix_seed(plan.eval_seed, 0x6E41ULL));

  // Generalists: load mapped checkpoints or pretrain once per size.
  std::map<std::string, std::string> gen_ckpt;
  std::map<std::string, detail::RunStats> gen_vl_stats;
  for (ModelSize size : plan.sizes) {
    const std::string size_s = to_string(size);
    auto it = plan.generalist_checkpoints.find(size_s);
    std::string path;
    if (it != plan.generalist_checkpoints.end()) {
      path = it->second;
    } else {
      path = (out / ("generalist_" + size_s + ".ckpt")).string();
      if (!fs::exists(path)) {
        say("pretraining generalist " + size_s);
        TrainConfig cfg = plan.pretrain_cfg;
        cfg.seed = mix_seed(plan.eval_seed, 0x93ULL + static_cast<std::uint64_t>(size));
        EnhancementModel model =
            build_model(size, ModelConfig::preset(size), cfg.seed);
        auto [trained, log] = train(std::move(model), speech_tr, noise_tr,
                                    gen_val, cfg);
        save_checkpoint(trained, path);
        log.write_jsonl((out / ("generalist_" + size_s + ".log.jsonl")).string());
      }
    }
    gen_ckpt[size_s] = path;
    const EnhancementModel gen = load_checkpoint(path);
    gen_vl_stats[size_s] = detail::evaluate_on(gen, gen_val, plan.pesq_command);
  }

  // Fixed per-speaker test mixtures with unseen (te) noise.
  std::map<std::string, std::vector<Mixture>> test_mixtures;
  for (std::size_t i = 0; i < plan.speakers.size(); ++i) {
    const std::string &spk = plan.speakers[i];
    test_mixtures[spk] = mixture_stream(
        world.target_test.at(spk), noise_te,
        static_cast<std::uint64_t>(plan.test_mixtures_per_speaker),
        plan.finetune_cfg.snr_range, plan.eval_segment_sec,
        mix_seed(plan.eval_seed, 0x7E57ULL + fnv1a(spk)));
  }

  ResultTable table;
  table.experiment_name = plan.name;
  for (ModelSize s : plan.sizes) table.size_order.push_back(to_string(s));
  table.condition_order.push_back("generalist");
  for (const auto &c : plan.conditions) table.condition_order.push_back(c.label());

  // Baseline row: the generalist evaluated per speaker.
  for (ModelSize size : plan.sizes) {
    const std::string size_s = to_string(size);
    const EnhancementModel gen = load_checkpoint(gen_ckpt[size_s]);
    std::vector<double> sdri_v, sdr_v, estoi_v;
    for (const auto &spk : plan.speakers) {
      const auto st = detail::evaluate_on(gen, test_mixtures[spk], plan.pesq_command);
      sdri_v.push_back(st.sdri);
      sdr_v.push_back(st.sdr);
      estoi_v.push_back(st.estoi_v);
    }
    TableCell cell;
    cell.columns["sdri_te"] = detail::stats_of(sdri_v);
    cell.columns["sdr_te"] = detail::stats_of(sdr_v);
    cell.columns["estoi_te"] = detail::stats_of(estoi_v);
    cell.columns["sdri_vl"] = detail::stats_of({gen_vl_stats[size_s].sdri});
    cell.columns["sdr_vl"] = detail::stats_of({gen_vl_stats[size_s].sdr});
    cell.columns["estoi_vl"] = detail::stats_of({gen_vl_stats[size_s].estoi_v});
    table.cells["generalist"][size_s] = std::move(cell);
  }

  // Grid cells.
  for (std::size_t ci = 0; ci < plan.conditions.size(); ++ci) {
    const ExperimentCondition &cond = plan.conditions[ci];
    for (ModelSize size : plan.sizes) {
      const std::string size_s = to_string(size);
      std::vector<detail::CellRun> runs;
      for (const auto &spk : plan.speakers) {
        for (std::uint64_t seed : plan.seeds) {
          const std::string cell_name = "c" + std::to_string(ci) + "_" + size_s +
                                        "_" + spk + "_s" + std::to_string(seed);
          const fs::path cell_dir = out / "cells" / cell_name;
          const fs::path result_path = cell_dir / "result.json";
          detail::CellRun run;
          if (fs::exists(result_path)) {
            std::ifstream in(result_path);
            json j;
            in >> j;
            run = detail::CellRun::from_json(j);
            runs.push_back(run);
            continue;
          }
          say("cell " + cell_name);
          try {
            fs::create_directories(cell_dir);
            SynthesisBackend backend;
            if (cond.backend_id == "simulated") {
              if (!cond.fidelity)
                throw ArgumentError("simulated condition needs a fidelity");
              backend = simulated_backend(
                  *cond.fidelity, mix_seed(fnv1a(spk), 0xD123ULL + seed));
            } else if (cond.backend_id == "external") {
              backend = external_backend(cond.external_command);
            } else {
              throw ArgumentError("unknown backend '" + cond.backend_id + "'");
            }

            const Manifest synth = build_augmented_set(
                backend, world.enrollment.at(spk), world.texts,
                cond.augment_duration_sec, mix_seed(seed, fnv1a(spk)),
                (cell_dir / "synth").string());

            TrainConfig cfg = plan.finetune_cfg;
            cfg.seed = mix_seed(seed, 0xF17EULL + fnv1a(spk));
            auto [model, log] =
                finetune_pse(gen_ckpt[size_s], synth, world.noise, cfg);
            save_checkpoint(model, (cell_dir / "pse.ckpt").string());
            log.write_jsonl((cell_dir / "train_log.jsonl").string());

            run.te = detail::evaluate_on(model, test_mixtures[spk],
                                         plan.pesq_command);
            const std::vector<Mixture> vl_mixtures = mixture_stream(
                synth.filter_partition(Partition::vl),
                world.noise.filter_partition(Partition::vl),
                cfg.val_mixture_count, cfg.snr_range, cfg.segment_sec,
                mix_seed(cfg.seed, 0xA11DULL));
            run.vl = detail::evaluate_on(model, vl_mixtures, plan.pesq_command);
            run.val_improved = log.best_val_sdr > log.initial_val_sdr;
          } catch (const Error &e) {
            run.failed = true;
            run.error = e.what();
            say("cell " + cell_name + " FAILED: " + run.error);
          }
          {
            std::ofstream rf(result_path);
            rf << run.to_json().dump(2) << "\n";
          }
          runs.push_back(run);
        }
      }

      TableCell cell;
      std::vector<double> sdri_te, sdr_te, estoi_te, sdri_vl, sdr_vl, estoi_vl;
      bool all_improved = true;
      std::string first_error;
      for (const auto &r : runs) {
        if (r.failed) {
          if (first_error.empty()) first_error = r.error;
          continue;
        }
        sdri_te.push_back(r.te.sdri);
        sdr_te.push_back(r.te.sdr);
        estoi_te.push_back(r.te.estoi_v);
        sdri_vl.push_back(r.vl.sdri);
        sdr_vl.push_back(r.vl.sdr);
        estoi_vl.push_back(r.vl.estoi_v);
        all_improved = all_improved && r.val_improved;
      }
      if (sdri_te.empty()) {
        cell.failed = true;
        cell.error = first_error.empty() ? "no successful runs" : first_error;
      } else {
        cell.columns["sdri_te"] = detail::stats_of(sdri_te);
        cell.columns["sdr_te"] = detail::stats_of(sdr_te);
        cell.columns["estoi_te"] = detail::stats_of(estoi_te);
        cell.columns["sdri_vl"] = detail::stats_of(sdri_vl);
        cell.columns["sdr_vl"] = detail::stats_of(sdr_vl);
        cell.columns["estoi_vl"] = detail::stats_of(estoi_vl);
        cell.val_improved_all = all_improved;
        if (!first_error.empty()) {
          // partial failure: keep stats but surface the error text
          cell.error = first_error;
        }
      }
      table.cells[cond.label()][size_s] = std::move(cell);
    }
  }

  {
    std::ofstream tf(out / "table.json");
    tf << table.to_json().dump(2) << "\n";
  }
  {
    std::ofstream rf(out / "report.md");
    rf << render_report(table);
    std::ofstream cf(out / "report.csv");
    cf << render_report_csv(table);
  }
  return table;
}

inline ResultTable load_result_table(const std::string &run_dir) {
  const auto path = std::filesystem::path(run_dir) / "table.json";
  std::ifstream in(path);
  if (!in) throw IoError("no table.json under " + run_dir);
  json j;
  in >> j;
  return ResultTable::from_json(j);
}

}  // namespace pse

#endif  // PSE_EXPERIMENTS_HPP_
