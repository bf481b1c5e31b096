// tools/pse.cpp
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

// Command-line front end: corpus tooling, mixture simulation, synthesis,
// training/finetuning, evaluation and experiment orchestration.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pse/pse.hpp"

namespace fs = std::filesystem;

namespace {

pse::TrainConfig load_train_config(const std::string &config_path) {
  pse::TrainConfig cfg;
  if (config_path.empty()) return cfg;
  std::ifstream in(config_path);
  if (!in) throw pse::IoError("cannot open config: " + config_path);
  pse::json j;
  in >> j;
  return pse::detail::train_cfg_from_json(j, cfg);
}

void add_train_flags(CLI::App *cmd, pse::TrainConfig &cfg) {
  cmd->add_option("--lr", cfg.learning_rate, "learning rate");
  cmd->add_option("--batch", cfg.batch_size, "batch size");
  cmd->add_option("--validate-every", cfg.validate_every_mixtures,
                  "validate every N mixtures seen");
  cmd->add_option("--patience", cfg.patience_mixtures,
                  "stop after N mixtures without validation improvement");
  cmd->add_option("--max-mixtures", cfg.max_mixtures, "safety cap");
  cmd->add_option("--segment", cfg.segment_sec, "training segment seconds");
  cmd->add_option("--snr-lo", cfg.snr_range.first, "SNR range low (dB)");
  cmd->add_option("--snr-hi", cfg.snr_range.second, "SNR range high (dB)");
  cmd->add_option("--seed", cfg.seed, "training stream seed");
  cmd->add_option("--val-count", cfg.val_mixture_count,
                  "validation mixture count");
  cmd->add_option("--threads", cfg.num_threads, "worker threads (0 = auto)");
}

// Config file provides the base; explicitly passed flags override it.
void merge_explicit_flags(CLI::App *cmd, pse::TrainConfig &dst,
                          const pse::TrainConfig &flags) {
  if (cmd->count("--lr")) dst.learning_rate = flags.learning_rate;
  if (cmd->count("--batch")) dst.batch_size = flags.batch_size;
  if (cmd->count("--validate-every"))
    dst.validate_every_mixtures = flags.validate_every_mixtures;
  if (cmd->count("--patience")) dst.patience_mixtures = flags.patience_mixtures;
  if (cmd->count("--max-mixtures")) dst.max_mixtures = flags.max_mixtures;
  if (cmd->count("--segment")) dst.segment_sec = flags.segment_sec;
  if (cmd->count("--snr-lo")) dst.snr_range.first = flags.snr_range.first;
  if (cmd->count("--snr-hi")) dst.snr_range.second = flags.snr_range.second;
  if (cmd->count("--seed")) dst.seed = flags.seed;
  if (cmd->count("--val-count")) dst.val_mixture_count = flags.val_mixture_count;
  if (cmd->count("--threads")) dst.num_threads = flags.num_threads;
}

pse::SpeakerRef speaker_from_wav(const std::string &wav,
                                 const std::string &speaker_id) {
  pse::SpeakerRef ref;
  ref.speaker_id = speaker_id.empty() ? fs::path(wav).stem().string() : speaker_id;
  ref.enrollment_clips.push_back(pse::load_wav(wav));
  return ref;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"pse - personalized speech enhancement toolkit"};
  app.require_subcommand(1);

  // ---- pse data {validate, summary} ----
  auto *data = app.add_subcommand("data", "manifest tooling");
  data->require_subcommand(1);

  std::string data_manifest;
  bool data_files = false, data_strict = false;
  auto *data_validate = data->add_subcommand("validate", "validate a manifest");
  data_validate->add_option("manifest", data_manifest)->required();
  data_validate->add_flag("--files", data_files, "check referenced files exist");
  data_validate->add_flag("--strict", data_strict,
                          "re-verify durations against the audio");
  data_validate->callback([&] {
    pse::Manifest m = pse::load_manifest(data_manifest, data_files, data_strict);
    std::cout << "OK: " << m.name << " (" << pse::to_string(m.kind) << "), "
              << m.record_count() << " records, " << m.total_duration_sec()
              << " sec total\n";
  });

  auto *data_summary = data->add_subcommand("summary", "per-speaker durations");
  data_summary->add_option("manifest", data_manifest)->required();
  data_summary->callback([&] {
    std::cout << pse::manifest_summary(pse::load_manifest(data_manifest));
  });

  // ---- pse mix ----
  auto *mix = app.add_subcommand("mix", "write seeded mixture triplets");
  std::string mix_speech, mix_noise, mix_out;
  std::uint64_t mix_count = 10, mix_seed_v = 0;
  double mix_snr_lo = -5.0, mix_snr_hi = 5.0, mix_segment = 4.0;
  mix->add_option("--speech", mix_speech)->required();
  mix->add_option("--noise", mix_noise)->required();
  mix->add_option("--count", mix_count);
  mix->add_option("--seed", mix_seed_v);
  mix->add_option("--snr-lo", mix_snr_lo);
  mix->add_option("--snr-hi", mix_snr_hi);
  mix->add_option("--segment", mix_segment);
  mix->add_option("--out", mix_out)->required();
  mix->callback([&] {
    const pse::Manifest speech = pse::load_manifest(mix_speech);
    const pse::Manifest noise = pse::load_manifest(mix_noise);
    fs::create_directories(mix_out);
    const auto mixtures = pse::mixture_stream(
        speech, noise, mix_count, {mix_snr_lo, mix_snr_hi}, mix_segment, mix_seed_v);
    std::ofstream specs(fs::path(mix_out) / "specs.jsonl");
    for (std::size_t i = 0; i < mixtures.size(); ++i) {
      char base[32];
      std::snprintf(base, sizeof(base), "%06zu", i);
      pse::save_wav(mixtures[i].x, (fs::path(mix_out) / (std::string("x_") + base + ".wav")).string());
      pse::save_wav(mixtures[i].s, (fs::path(mix_out) / (std::string("s_") + base + ".wav")).string());
      pse::save_wav(mixtures[i].n_scaled, (fs::path(mix_out) / (std::string("n_") + base + ".wav")).string());
      specs << mixtures[i].spec.to_json().dump() << "\n";
    }
    std::cout << "wrote " << mixtures.size() << " mixtures to " << mix_out << "\n";
  });

  // ---- pse synth ----
  auto *synth = app.add_subcommand("synth", "build an augmented speaker set");
  std::string sy_backend = "simulated", sy_speaker_wav, sy_speaker_id, sy_texts,
              sy_out, sy_command;
  double sy_duration = 60.0, sy_fidelity = 1.0, sy_tr_fraction = 2.0 / 3.0;
  std::uint64_t sy_seed = 0, sy_distractor = 0;
  synth->add_option("--backend", sy_backend, "simulated | external");
  synth->add_option("--speaker", sy_speaker_wav, "enrollment wav")->required();
  synth->add_option("--speaker-id", sy_speaker_id);
  synth->add_option("--texts", sy_texts, "text manifest")->required();
  synth->add_option("--duration", sy_duration, "target seconds");
  synth->add_option("--fidelity", sy_fidelity, "simulated fidelity in [0,1]");
  synth->add_option("--distractor-seed", sy_distractor);
  synth->add_option("--seed", sy_seed);
  synth->add_option("--tr-fraction", sy_tr_fraction);
  synth->add_option("--command", sy_command,
                    "external command template ({text_file} {ref_wav} {out_wav}); "
                    "defaults to $PSE_SYNTH_CMD");
  synth->add_option("--out", sy_out)->required();
  synth->callback([&] {
    pse::SynthesisBackend backend;
    if (sy_backend == "simulated") {
      backend = pse::simulated_backend(sy_fidelity, sy_distractor);
    } else if (sy_backend == "external") {
      std::string cmd = sy_command;
      if (cmd.empty()) {
        const char *env = std::getenv("PSE_SYNTH_CMD");
        if (env) cmd = env;
      }
      backend = pse::external_backend(cmd);
    } else {
      throw pse::ArgumentError("unknown backend: " + sy_backend);
    }
    const pse::Manifest texts = pse::load_manifest(sy_texts);
    const pse::SpeakerRef speaker = speaker_from_wav(sy_speaker_wav, sy_speaker_id);
    const pse::Manifest out = pse::build_augmented_set(
        backend, speaker, texts, sy_duration, sy_seed, sy_out, sy_tr_fraction);
    std::cout << "synthesized " << out.records.size() << " utterances ("
              << out.total_duration_sec() << " sec) -> " << sy_out
              << "/manifest.jsonl\n";
  });

  // ---- pse train ----
  auto *train_cmd = app.add_subcommand("train", "train a generalist");
  std::string tr_speech, tr_noise, tr_out, tr_log, tr_size = "T", tr_config;
  std::uint64_t tr_init_seed = 0;
  pse::TrainConfig tr_cfg;
  train_cmd->add_option("--speech", tr_speech)->required();
  train_cmd->add_option("--noise", tr_noise)->required();
  train_cmd->add_option("--size", tr_size, "L|M|S|T");
  train_cmd->add_option("--init-seed", tr_init_seed);
  train_cmd->add_option("--config", tr_config, "TrainConfig JSON (flags override)");
  add_train_flags(train_cmd, tr_cfg);
  train_cmd->add_option("--out", tr_out, "checkpoint path")->required();
  train_cmd->add_option("--log", tr_log, "train log jsonl path");
  train_cmd->callback([&] {
    pse::TrainConfig cfg = tr_cfg;
    if (!tr_config.empty()) {
      cfg = load_train_config(tr_config);
      merge_explicit_flags(train_cmd, cfg, tr_cfg);
    }
    const pse::Manifest speech = pse::load_manifest(tr_speech);
    const pse::Manifest noise = pse::load_manifest(tr_noise);
    const pse::Manifest speech_tr = speech.filter_partition(pse::Partition::tr);
    const pse::Manifest speech_vl = speech.filter_partition(pse::Partition::vl);
    const pse::Manifest noise_tr = noise.filter_partition(pse::Partition::tr);
    const pse::Manifest noise_vl = noise.filter_partition(pse::Partition::vl);
    const auto val = pse::mixture_stream(speech_vl, noise_vl, cfg.val_mixture_count,
                                         cfg.snr_range, cfg.segment_sec,
                                         pse::mix_seed(cfg.seed, 0xA11DULL));
    const pse::ModelSize size = pse::model_size_from_string(tr_size);
    pse::EnhancementModel model =
        pse::build_model(size, pse::ModelConfig::preset(size), tr_init_seed);
    auto [trained, log] = pse::train(std::move(model), speech_tr, noise_tr, val, cfg);
    pse::save_checkpoint(trained, tr_out);
    if (!tr_log.empty()) log.write_jsonl(tr_log);
    std::cout << "best val SDR " << log.best_val_sdr << " dB at "
              << log.best_at_mixtures << " mixtures; checkpoint -> " << tr_out
              << "\n";
  });

  // ---- pse finetune ----
  auto *ft = app.add_subcommand("finetune", "finetune a PSE specialist");
  std::string ft_from, ft_synth, ft_noise, ft_out, ft_log, ft_config;
  pse::TrainConfig ft_cfg;
  ft->add_option("--from", ft_from, "generalist checkpoint")->required();
  ft->add_option("--synth", ft_synth, "synthesized-speech manifest")->required();
  ft->add_option("--noise", ft_noise)->required();
  ft->add_option("--config", ft_config);
  add_train_flags(ft, ft_cfg);
  ft->add_option("--out", ft_out)->required();
  ft->add_option("--log", ft_log);
  ft->callback([&] {
    pse::TrainConfig cfg = ft_cfg;
    if (!ft_config.empty()) {
      cfg = load_train_config(ft_config);
      merge_explicit_flags(ft, cfg, ft_cfg);
    }
    const pse::Manifest synth_m = pse::load_manifest(ft_synth);
    const pse::Manifest noise = pse::load_manifest(ft_noise);
    auto [model, log] = pse::finetune_pse(ft_from, synth_m, noise, cfg);
    pse::save_checkpoint(model, ft_out);
    if (!ft_log.empty()) log.write_jsonl(ft_log);
    std::cout << "best val SDR " << log.best_val_sdr << " dB at "
              << log.best_at_mixtures << " mixtures; checkpoint -> " << ft_out
              << "\n";
  });

  // ---- pse eval ----
  auto *ev = app.add_subcommand("eval", "evaluate a checkpoint on seeded mixtures");
  std::string ev_model, ev_speech, ev_noise, ev_out, ev_pesq;
  std::uint64_t ev_count = 30, ev_seed = 0;
  double ev_segment = 2.0, ev_snr_lo = -5.0, ev_snr_hi = 5.0;
  std::string ev_partition = "te";
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--speech", ev_speech)->required();
  ev->add_option("--noise", ev_noise)->required();
  ev->add_option("--partition", ev_partition, "partition of both manifests");
  ev->add_option("--count", ev_count);
  ev->add_option("--seed", ev_seed);
  ev->add_option("--segment", ev_segment);
  ev->add_option("--snr-lo", ev_snr_lo);
  ev->add_option("--snr-hi", ev_snr_hi);
  ev->add_option("--pesq-cmd", ev_pesq, "{ref_wav} {deg_wav} {out_txt} template");
  ev->add_option("--out", ev_out, "report path prefix (.csv/.json)");
  ev->callback([&] {
    const pse::EnhancementModel model = pse::load_checkpoint(ev_model);
    const pse::Partition part = pse::partition_from_string(ev_partition);
    const pse::Manifest speech =
        pse::load_manifest(ev_speech).filter_partition(part);
    const pse::Manifest noise = pse::load_manifest(ev_noise).filter_partition(part);
    const auto mixtures = pse::mixture_stream(speech, noise, ev_count,
                                              {ev_snr_lo, ev_snr_hi}, ev_segment,
                                              ev_seed);
    pse::EvalReport report;
    report.condition_tags["model"] = ev_model;
    report.condition_tags["size"] = pse::to_string(model.config.size);
    for (std::size_t i = 0; i < mixtures.size(); ++i) {
      const auto &mx = mixtures[i];
      const pse::AudioClip y = pse::enhance(model, mx.x);
      pse::EvalRow row;
      row.utterance_id = mx.spec.clean_id + "#" + std::to_string(i);
      row.sdr_db = pse::sdr(y, mx.s);
      row.sdri_db = pse::sdri(y, mx.s, mx.x);
      row.estoi_value = pse::estoi(y, mx.s);
      if (!ev_pesq.empty()) row.pesq = pse::pesq_adapter(y, mx.s, ev_pesq);
      report.rows.push_back(std::move(row));
    }
    report.finalize();
    if (!ev_out.empty()) {
      std::ofstream csv(ev_out + ".csv");
      csv << report.to_csv();
      std::ofstream js(ev_out + ".json");
      js << report.to_json().dump(2) << "\n";
    }
    std::cout << "n=" << report.rows.size();
    for (const auto &[k, v] : report.aggregates) std::cout << "  " << k << "=" << v;
    std::cout << "\n";
  });

  // ---- pse quality ----
  auto *qa = app.add_subcommand("quality", "synthesis-quality assessment");
  std::string qa_synth, qa_enroll, qa_speaker_id, qa_mos, qa_extractor;
  qa->add_option("--synth", qa_synth, "synthesized manifest")->required();
  qa->add_option("--enroll", qa_enroll, "enrollment wav")->required();
  qa->add_option("--speaker-id", qa_speaker_id);
  qa->add_option("--mos-cmd", qa_mos, "{deg_wav} {out_txt} template");
  qa->add_option("--extractor-cmd", qa_extractor, "{wav} {out_txt} template");
  qa->callback([&] {
    const pse::Manifest synth_m = pse::load_manifest(qa_synth);
    const pse::SpeakerRef ref = speaker_from_wav(qa_enroll, qa_speaker_id);
    const pse::EmbeddingExtractor extractor =
        qa_extractor.empty() ? pse::fallback_extractor()
                             : pse::external_extractor(qa_extractor);
    const auto rows =
        pse::assess_synthesis_quality(synth_m, ref, qa_mos, extractor);
    std::cout << pse::render_quality_table(rows);
  });

  // ---- pse toyworld ----
  auto *toy = app.add_subcommand("toyworld", "fabricate a desk-scale corpus");
  std::string toy_out;
  int toy_speakers = 12, toy_utts = 10, toy_noise = 8, toy_sentences = 200;
  std::uint64_t toy_seed = 42;
  toy->add_option("--out", toy_out)->required();
  toy->add_option("--speakers", toy_speakers);
  toy->add_option("--utts", toy_utts);
  toy->add_option("--noise-clips", toy_noise, "per partition");
  toy->add_option("--sentences", toy_sentences);
  toy->add_option("--seed", toy_seed);
  toy->callback([&] {
    const auto speech = pse::toyworld::build_speech_corpus(
        (fs::path(toy_out) / "speech").string(), "toy_G", toy_speakers, toy_utts,
        toy_seed);
    const auto noise = pse::toyworld::build_noise_corpus(
        (fs::path(toy_out) / "noise").string(), "toy_N", toy_noise,
        pse::mix_seed(toy_seed, 0x4015EULL));
    const auto texts =
        pse::toyworld::make_text_manifest("toy_T", toy_sentences,
                                          pse::mix_seed(toy_seed, 0x7E87ULL));
    pse::write_manifest(texts, (fs::path(toy_out) / "texts.jsonl").string());
    std::cout << "speech: " << speech.total_duration_sec() << " sec, noise: "
              << noise.total_duration_sec() << " sec, texts: "
              << texts.texts.size() << " sentences -> " << toy_out << "\n";
  });

  // ---- pse exp {run, report} ----
  auto *exp = app.add_subcommand("exp", "experiment orchestration");
  exp->require_subcommand(1);
  std::string exp_plan, exp_dir, exp_lit;
  auto *exp_run = exp->add_subcommand("run", "run (or resume) a plan");
  exp_run->add_option("plan", exp_plan, "plan JSON file")->required();
  exp_run->callback([&] {
    const pse::ExperimentPlan plan = pse::load_plan(exp_plan);
    const pse::ResultTable table = pse::run_experiment(plan, &std::cout);
    std::cout << pse::render_report(table);
    if (table.any_failed()) throw pse::Error("one or more cells failed");
  });
  auto *exp_report = exp->add_subcommand("report", "render a finished run");
  exp_report->add_option("run_dir", exp_dir)->required();
  exp_report->add_option("--literature", exp_lit,
                         "JSON list of quoted literature rows");
  exp_report->callback([&] {
    const pse::ResultTable table = pse::load_result_table(exp_dir);
    std::vector<pse::LiteratureRow> lit;
    if (!exp_lit.empty()) {
      std::ifstream in(exp_lit);
      if (!in) throw pse::IoError("cannot open literature file: " + exp_lit);
      pse::json j;
      in >> j;
      for (const auto &row : j) {
        pse::LiteratureRow r;
        r.label = row.at("label").get<std::string>();
        r.size = row.at("size").get<std::string>();
        r.values = row.at("values").get<std::map<std::string, double>>();
        lit.push_back(std::move(r));
      }
    }
    std::cout << pse::render_report(table, lit);
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const pse::Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
