// Command-line entry point wiring the toolkit into reproducible batch runs:
//   generate  note tracks -> labeled error dataset + manifest
//   synth     manifest -> reference and performance WAV files
//   train     manifest + audio -> model checkpoint + loss curve
//   detect    checkpoint + audio pair -> labeled note files
//   baseline  alignment-based detector over the same inputs
//   evaluate  truth vs predicted label files -> detection reports
//
// Exit codes: 0 success, 1 user error (bad input, missing file), 2 internal.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "polytune/baseline.hpp"
#include "polytune/errors.hpp"
#include "polytune/error_gen.hpp"
#include "polytune/eval.hpp"
#include "polytune/features.hpp"
#include "polytune/model.hpp"
#include "polytune/note_io.hpp"
#include "polytune/parallel.hpp"
#include "polytune/synth.hpp"
#include "polytune/token_codec.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace polytune;

namespace {

// ---------------------------------------------------------------------------
// Run configuration: defaults < config file < command-line flags.
// ---------------------------------------------------------------------------

struct RunConfig {
  uint64_t seed = 0;
  int threads = 1;
  ErrorConfig error;
  ModelConfig model;
  TrainConfig train;
  BaselineConfig baseline;
  FeatureConfig features;
  double eval_tolerance = 0.05;
  std::string instrument = "piano";
};

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["instrument"] = c.instrument;
  j["error"] = {{"lambda_low", c.error.lambda_low},
                {"lambda_high", c.error.lambda_high},
                {"pitch_sigma", c.error.pitch_sigma},
                {"time_sigma", c.error.time_sigma},
                {"pitch_truncation", c.error.pitch_truncation},
                {"time_truncation", c.error.time_truncation},
                {"weights", c.error.error_type_weights},
                {"match_tolerance", c.error.match_tolerance}};
  j["model"] = {{"enc_dim", c.model.enc_dim},
                {"dec_dim", c.model.dec_dim},
                {"enc_layers", c.model.enc_layers},
                {"joint_layers", c.model.joint_layers},
                {"dec_layers", c.model.dec_layers},
                {"heads", c.model.heads},
                {"ff_multiplier", c.model.ff_multiplier},
                {"max_decoder_len", c.model.max_decoder_len},
                {"alpha_error", c.model.alpha_error},
                {"alpha_scope", c.model.alpha_scope == AlphaScope::EventGroup
                                    ? "event_group"
                                    : "label_only"},
                {"dropout", c.model.dropout}};
  j["train"] = {{"max_steps", c.train.max_steps},
                {"learning_rate", c.train.learning_rate},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"adam_eps", c.train.adam_eps},
                {"eval_every", c.train.eval_every},
                {"stop_accuracy", c.train.stop_accuracy}};
  j["baseline"] = {{"onset_tolerance", c.baseline.onset_tolerance},
                   {"pitch_cost", c.baseline.pitch_cost},
                   {"time_cost", c.baseline.time_cost},
                   {"jitter", c.baseline.noise.onset_jitter_sigma},
                   {"drop_rate", c.baseline.noise.drop_rate},
                   {"insert_rate", c.baseline.noise.insert_rate}};
  j["features"] = {{"sample_rate", c.features.sample_rate},
                   {"mel_bins", c.features.mel_bins},
                   {"mel_fmin", c.features.mel_fmin},
                   {"log_floor", c.features.log_floor}};
  j["eval"] = {{"tolerance", c.eval_tolerance}};
  return j;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void from_json_file(const std::string& path, RunConfig& c) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json j = json::parse(in, nullptr, /*allow_exceptions=*/true);
  maybe(j, "seed", c.seed);
  maybe(j, "threads", c.threads);
  maybe(j, "instrument", c.instrument);
  if (j.contains("error")) {
    const json& e = j["error"];
    maybe(e, "lambda_low", c.error.lambda_low);
    maybe(e, "lambda_high", c.error.lambda_high);
    maybe(e, "pitch_sigma", c.error.pitch_sigma);
    maybe(e, "time_sigma", c.error.time_sigma);
    maybe(e, "pitch_truncation", c.error.pitch_truncation);
    maybe(e, "time_truncation", c.error.time_truncation);
    maybe(e, "weights", c.error.error_type_weights);
    maybe(e, "match_tolerance", c.error.match_tolerance);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    maybe(m, "enc_dim", c.model.enc_dim);
    maybe(m, "dec_dim", c.model.dec_dim);
    maybe(m, "enc_layers", c.model.enc_layers);
    maybe(m, "joint_layers", c.model.joint_layers);
    maybe(m, "dec_layers", c.model.dec_layers);
    maybe(m, "heads", c.model.heads);
    maybe(m, "ff_multiplier", c.model.ff_multiplier);
    maybe(m, "max_decoder_len", c.model.max_decoder_len);
    maybe(m, "alpha_error", c.model.alpha_error);
    maybe(m, "dropout", c.model.dropout);
    if (m.contains("alpha_scope"))
      c.model.alpha_scope = m["alpha_scope"] == "label_only"
                                ? AlphaScope::LabelOnly
                                : AlphaScope::EventGroup;
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    maybe(t, "max_steps", c.train.max_steps);
    maybe(t, "learning_rate", c.train.learning_rate);
    maybe(t, "beta1", c.train.beta1);
    maybe(t, "beta2", c.train.beta2);
    maybe(t, "adam_eps", c.train.adam_eps);
    maybe(t, "eval_every", c.train.eval_every);
    maybe(t, "stop_accuracy", c.train.stop_accuracy);
  }
  if (j.contains("baseline")) {
    const json& b = j["baseline"];
    maybe(b, "onset_tolerance", c.baseline.onset_tolerance);
    maybe(b, "pitch_cost", c.baseline.pitch_cost);
    maybe(b, "time_cost", c.baseline.time_cost);
    maybe(b, "jitter", c.baseline.noise.onset_jitter_sigma);
    maybe(b, "drop_rate", c.baseline.noise.drop_rate);
    maybe(b, "insert_rate", c.baseline.noise.insert_rate);
  }
  if (j.contains("features")) {
    const json& f = j["features"];
    maybe(f, "sample_rate", c.features.sample_rate);
    maybe(f, "mel_bins", c.features.mel_bins);
    maybe(f, "mel_fmin", c.features.mel_fmin);
    maybe(f, "log_floor", c.features.log_floor);
  }
  if (j.contains("eval")) maybe(j["eval"], "tolerance", c.eval_tolerance);
}

void echo_config(const RunConfig& c, const std::string& dir,
                 const std::string& name) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / name, std::ios::trunc);
  out << to_json(c).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

std::vector<NoteTrack> load_references(const std::string& dir,
                                       const std::string& default_instrument) {
  if (!fs::is_directory(dir))
    throw InvalidInputError("reference directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".mid" || ext == ".midi" || ext == ".notes")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw InvalidInputError("no .mid/.midi/.notes files under " + dir);

  std::vector<NoteTrack> refs;
  for (const auto& f : files) {
    NoteTrack t = read_track(f.string());
    // A subdirectory layout names the instrument, e.g. refs/flute/x.notes.
    const fs::path parent = f.parent_path();
    t.instrument = parent == fs::path(dir) ? default_instrument
                                           : parent.filename().string();
    refs.push_back(std::move(t));
  }
  return refs;
}

std::string wav_path(const DatasetManifest& manifest, const ManifestEntry& e,
                     bool performance) {
  std::string notes = performance ? e.performance_file : e.reference_file;
  const std::string suffix = ".notes";
  if (notes.size() > suffix.size() &&
      notes.compare(notes.size() - suffix.size(), suffix.size(), suffix) == 0)
    notes.resize(notes.size() - suffix.size());
  return manifest.resolve(notes + ".wav");
}

LabeledScore read_labels(const std::string& dir, const std::string& id) {
  LabeledScore score;
  score.correct = read_track((fs::path(dir) / (id + ".correct.notes")).string());
  score.missed = read_track((fs::path(dir) / (id + ".missed.notes")).string());
  score.extra = read_track((fs::path(dir) / (id + ".extra.notes")).string());
  return score;
}

void write_labels(const LabeledScore& labels, const std::string& dir,
                  const std::string& id) {
  fs::create_directories(dir);
  write_notes_text(labels.correct, (fs::path(dir) / (id + ".correct.notes")).string());
  write_notes_text(labels.missed, (fs::path(dir) / (id + ".missed.notes")).string());
  write_notes_text(labels.extra, (fs::path(dir) / (id + ".extra.notes")).string());
}

/// Builds per-segment training samples for one manifest entry. The pad
/// sample (all-floor spectrogram) fills segments past the audio end.
std::vector<TrainSample> build_samples(const DatasetManifest& manifest,
                                       const ManifestEntry& entry,
                                       const FeatureConfig& fc,
                                       double norm_mean, double norm_std,
                                       int max_decoder_len,
                                       int* dropped_segments) {
  AudioBuffer score_audio = read_wav(wav_path(manifest, entry, false));
  AudioBuffer perf_audio = read_wav(wav_path(manifest, entry, true));
  auto score_feats = extract_features(score_audio, fc, norm_mean, norm_std);
  auto perf_feats = extract_features(perf_audio, fc, norm_mean, norm_std);

  LabeledScore labels;
  labels.correct = read_track(manifest.resolve(entry.correct_file));
  labels.missed = read_track(manifest.resolve(entry.missed_file));
  labels.extra = read_track(manifest.resolve(entry.extra_file));
  CodecConfig codec;
  codec.segment_seconds = fc.segment_seconds;
  auto token_segments = encode_all(labels, codec);

  const std::size_t n = std::max(
      {score_feats.size(), perf_feats.size(), token_segments.size()});

  AudioBuffer zero;
  zero.sample_rate = fc.sample_rate;
  zero.samples.assign(std::size_t(fc.segment_samples()), 0.0);
  Matrix pad_patches =
      patchify(((logmel(zero, fc).array() - norm_mean) / norm_std).matrix(), fc);

  std::vector<TrainSample> samples;
  for (std::size_t s = 0; s < n; ++s) {
    TrainSample sample;
    sample.score_patches =
        s < score_feats.size() ? score_feats[s].patches : pad_patches;
    sample.perf_patches =
        s < perf_feats.size() ? perf_feats[s].patches : pad_patches;
    if (s < token_segments.size())
      sample.tokens = token_segments[s].tokens;
    else
      sample.tokens = {vocab::kSos, vocab::kEndTie, vocab::kEos};
    if (int(sample.tokens.size()) - 1 > max_decoder_len) {
      if (dropped_segments) (*dropped_segments)++;
      continue;
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

/// Dataset-wide log-mel statistics used for input normalization.
std::pair<double, double> feature_stats(const DatasetManifest& manifest,
                                        const FeatureConfig& fc) {
  double sum = 0.0, sum2 = 0.0;
  int64_t count = 0;
  for (const auto& entry : manifest.entries) {
    for (bool performance : {false, true}) {
      AudioBuffer audio = read_wav(wav_path(manifest, entry, performance));
      for (const auto& seg : segment_audio(audio, fc)) {
        Matrix m = logmel(seg, fc);
        sum += m.sum();
        sum2 += m.array().square().sum();
        count += m.size();
      }
    }
  }
  if (count == 0) throw InvalidInputError("dataset contains no audio");
  const double mean = sum / double(count);
  const double var = std::max(sum2 / double(count) - mean * mean, 1e-12);
  return {mean, std::sqrt(var)};
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_generate(const RunConfig& cfg, const std::string& refs_dir,
                 const std::string& out_dir) {
  ErrorConfig error = cfg.error;
  error.seed = cfg.seed;
  auto refs = load_references(refs_dir, cfg.instrument);
  DatasetManifest manifest = generate_dataset(refs, error, out_dir, cfg.threads);
  echo_config(cfg, out_dir, "generate_config.json");
  std::printf("generated %zu tracks into %s\n", manifest.entries.size(),
              out_dir.c_str());
  return 0;
}

int cmd_synth(const RunConfig& cfg, const std::string& manifest_path) {
  DatasetManifest manifest = load_manifest(manifest_path);
  parallel_for(manifest.entries.size(), cfg.threads, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    InstrumentProfile profile = InstrumentProfile::for_instrument(e.instrument);
    NoteTrack ref = read_track(manifest.resolve(e.reference_file));
    NoteTrack perf = read_track(manifest.resolve(e.performance_file));
    write_wav(render(ref, profile, cfg.features.sample_rate),
              wav_path(manifest, e, false));
    write_wav(render(perf, profile, cfg.features.sample_rate),
              wav_path(manifest, e, true));
  });
  echo_config(cfg, manifest.base_dir, "synth_config.json");
  std::printf("synthesized %zu track pairs\n", manifest.entries.size());
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& manifest_path,
              const std::string& out_dir, int checkpoint_every) {
  DatasetManifest manifest = load_manifest(manifest_path);
  cfg.model.seed = cfg.seed;
  cfg.model.validate();

  auto [norm_mean, norm_std] = feature_stats(manifest, cfg.features);
  std::printf("feature stats: mean %.4f std %.4f\n", norm_mean, norm_std);

  std::vector<TrainSample> samples;
  int dropped = 0;
  for (const auto& entry : manifest.entries) {
    auto entry_samples =
        build_samples(manifest, entry, cfg.features, norm_mean, norm_std,
                      cfg.model.max_decoder_len, &dropped);
    for (auto& s : entry_samples) samples.push_back(std::move(s));
  }
  if (dropped > 0)
    std::fprintf(stderr,
                 "warning: %d segments exceed max_decoder_len, skipped\n",
                 dropped);
  if (samples.empty()) throw InvalidInputError("no trainable segments");
  std::printf("training on %zu segments\n", samples.size());

  PolytuneModel model(cfg.model);
  Trainer trainer(model, cfg.train);

  fs::create_directories(out_dir);
  Trainer::StepCallback on_step;
  if (checkpoint_every > 0) {
    on_step = [&](int step, double) {
      if (step % checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_step%06d.ckpt", step);
        save_checkpoint((fs::path(out_dir) / name).string(), model, norm_mean,
                        norm_std, &trainer);
      }
    };
  }
  TrainResult result = trainer.run(samples, on_step);

  save_checkpoint((fs::path(out_dir) / "checkpoint.ckpt").string(), model,
                  norm_mean, norm_std, &trainer);
  write_loss_curve_csv((fs::path(out_dir) / "loss.csv").string(), result.curve);
  echo_config(cfg, out_dir, "train_config.json");
  std::printf("trained %d steps, teacher-forced accuracy %.4f\n",
              result.steps_run, result.final_accuracy);
  return 0;
}

int cmd_detect(const RunConfig& cfg, const std::string& checkpoint_path,
               const std::string& score_wav, const std::string& perf_wav,
               const std::string& out_dir, const std::string& id,
               bool emit_tokens) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  PolytuneModel model = restore_model(ck);

  FeatureConfig fc = cfg.features;
  AudioBuffer score_audio = read_wav(score_wav);
  AudioBuffer perf_audio = read_wav(perf_wav);
  auto score_feats =
      extract_features(score_audio, fc, ck.feature_mean, ck.feature_std);
  auto perf_feats =
      extract_features(perf_audio, fc, ck.feature_mean, ck.feature_std);
  const std::size_t n = std::max(score_feats.size(), perf_feats.size());
  if (n == 0) throw InvalidInputError("no audio segments to decode");

  AudioBuffer zero;
  zero.sample_rate = fc.sample_rate;
  zero.samples.assign(std::size_t(fc.segment_samples()), 0.0);
  Matrix pad =
      patchify(((logmel(zero, fc).array() - ck.feature_mean) / ck.feature_std)
                   .matrix(),
               fc);

  fs::create_directories(out_dir);
  std::ofstream token_dump;
  if (emit_tokens)
    token_dump.open(fs::path(out_dir) / (id + ".tokens.txt"), std::ios::trunc);

  std::vector<TokenSegment> segments;
  int truncated_count = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const Matrix& sp = s < score_feats.size() ? score_feats[s].patches : pad;
    const Matrix& pp = s < perf_feats.size() ? perf_feats[s].patches : pad;
    bool truncated = false;
    TokenSegment seg;
    seg.segment_index = int(s);
    seg.tokens = model.greedy_decode(sp, pp, ck.config.max_decoder_len, &truncated);
    truncated_count += truncated;
    if (emit_tokens) {
      token_dump << "# segment " << s << "\n" << dump_tokens(seg.tokens);
    }
    segments.push_back(std::move(seg));
  }

  CodecConfig codec;
  codec.segment_seconds = fc.segment_seconds;
  DecodeDiagnostics diag;
  LabeledScore labels = decode_and_stitch(segments, &diag, codec);
  write_labels(labels, out_dir, id);
  echo_config(cfg, out_dir, "detect_config.json");
  std::printf(
      "detected %zu correct / %zu missed / %zu extra notes over %zu segments "
      "(%d truncated, %d decoder diagnostics)\n",
      labels.correct.size(), labels.missed.size(), labels.extra.size(), n,
      truncated_count, diag.total());
  return 0;
}

int cmd_baseline(const RunConfig& cfg, const std::string& manifest_path,
                 const std::string& score_file, const std::string& perf_file,
                 const std::string& out_dir, const std::string& id) {
  BaselineConfig bc = cfg.baseline;
  bc.noise.seed = cfg.seed;
  if (!manifest_path.empty()) {
    DatasetManifest manifest = load_manifest(manifest_path);
    parallel_for(manifest.entries.size(), cfg.threads, [&](std::size_t i) {
      const ManifestEntry& e = manifest.entries[i];
      NoteTrack score = read_track(manifest.resolve(e.reference_file));
      NoteTrack perf = read_track(manifest.resolve(e.performance_file));
      write_labels(baseline_detect(score, perf, bc), out_dir, e.source_id);
    });
    echo_config(cfg, out_dir, "baseline_config.json");
    std::printf("baseline processed %zu tracks\n", manifest.entries.size());
    return 0;
  }
  NoteTrack score = read_track(score_file);
  NoteTrack perf = read_track(perf_file);
  LabeledScore labels = baseline_detect(score, perf, bc);
  write_labels(labels, out_dir, id);
  echo_config(cfg, out_dir, "baseline_config.json");
  std::printf("baseline: %zu correct / %zu missed / %zu extra\n",
              labels.correct.size(), labels.missed.size(), labels.extra.size());
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& truth_dir,
                 const std::string& pred_dir, const std::string& out_dir) {
  // Every *.correct.notes in the truth directory names one track.
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(truth_dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".correct.notes";
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty())
    throw InvalidInputError("no *.correct.notes files in " + truth_dir);

  // Instruments come from the dataset manifest when present.
  std::map<std::string, std::string> instruments;
  const fs::path manifest_path = fs::path(truth_dir) / "manifest.txt";
  if (fs::exists(manifest_path)) {
    DatasetManifest manifest = load_manifest(manifest_path.string());
    for (const auto& e : manifest.entries)
      instruments[e.source_id] = e.instrument;
  }

  std::vector<std::pair<std::string, DetectionReport>> reports;
  for (const auto& id : ids) {
    LabeledScore truth = read_labels(truth_dir, id);
    LabeledScore predicted = read_labels(pred_dir, id);
    const auto it = instruments.find(id);
    reports.push_back({it == instruments.end() ? std::string("unknown") : it->second,
                       report(truth, predicted, cfg.eval_tolerance)});
  }

  AggregateReport agg = aggregate(reports);
  fs::create_directories(out_dir);
  {
    std::ofstream csv(fs::path(out_dir) / "report.csv", std::ios::trunc);
    csv << to_csv(agg);
    std::ofstream table(fs::path(out_dir) / "report.txt", std::ios::trunc);
    table << to_table(agg);
    std::ofstream summary(fs::path(out_dir) / "summary.json", std::ios::trunc);
    summary << to_json_summary(agg);
  }
  echo_config(cfg, out_dir, "evaluate_config.json");
  std::cout << to_table(agg);
  return 0;
}

/// --config is honored before CLI11 parses the remaining flags, so flags win.
std::string prescan_config_path(int argc, char** argv) {
  for (int i = 1; i < argc - 1; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" || arg == "-c") return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  try {
    const std::string config_path = prescan_config_path(argc, argv);
    if (!config_path.empty()) from_json_file(config_path, cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: bad config file: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"Score-informed music error detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::string config_dummy;
  app.add_option("--config,-c", config_dummy, "JSON config file (flags win)");
  app.add_option("--seed", cfg.seed, "master seed");
  app.add_option("--threads", cfg.threads, "worker threads for batch stages");

  // generate
  auto* gen = app.add_subcommand("generate", "inject errors into note tracks");
  std::string refs_dir, out_dir;
  gen->add_option("--refs", refs_dir, "directory of .mid/.notes references")
      ->required();
  gen->add_option("--out", out_dir, "dataset output directory")->required();
  gen->add_option("--instrument", cfg.instrument,
                  "instrument for references not in an instrument subdir");
  gen->add_option("--lambda-low", cfg.error.lambda_low, "error rate low bound");
  gen->add_option("--lambda-high", cfg.error.lambda_high, "error rate high bound");
  gen->add_option("--pitch-sigma", cfg.error.pitch_sigma, "pitch offset std");
  gen->add_option("--time-sigma", cfg.error.time_sigma, "time offset std");
  gen->add_option("--pitch-trunc", cfg.error.pitch_truncation,
                  "pitch offset truncation bound");
  gen->add_option("--time-trunc", cfg.error.time_truncation,
                  "time offset truncation bound");
  gen->add_option("--weights", cfg.error.error_type_weights,
                  "miss/pc/ts/en weights");
  gen->add_option("--match-tolerance", cfg.error.match_tolerance,
                  "timing-shift labeling tolerance");

  // synth
  auto* syn = app.add_subcommand("synth", "render dataset audio");
  std::string manifest_path;
  syn->add_option("--manifest", manifest_path, "dataset manifest")->required();
  syn->add_option("--sample-rate", cfg.features.sample_rate, "output rate");

  // train
  auto* tr = app.add_subcommand("train", "train the detection model");
  std::string train_manifest, train_out;
  int checkpoint_every = 0;
  bool paper_shape = false;
  tr->add_option("--manifest", train_manifest, "dataset manifest")->required();
  tr->add_option("--out", train_out, "run output directory")->required();
  tr->add_option("--steps", cfg.train.max_steps, "max optimizer steps");
  tr->add_option("--lr", cfg.train.learning_rate, "Adam learning rate");
  tr->add_option("--eval-every", cfg.train.eval_every, "accuracy eval period");
  tr->add_option("--stop-accuracy", cfg.train.stop_accuracy,
                 "early stop threshold (teacher-forced)");
  tr->add_option("--enc-dim", cfg.model.enc_dim, "encoder width");
  tr->add_option("--dec-dim", cfg.model.dec_dim, "decoder width");
  tr->add_option("--enc-layers", cfg.model.enc_layers, "branch encoder layers");
  tr->add_option("--joint-layers", cfg.model.joint_layers, "joint encoder layers");
  tr->add_option("--dec-layers", cfg.model.dec_layers, "decoder layers");
  tr->add_option("--heads", cfg.model.heads, "attention heads");
  tr->add_option("--ff-mult", cfg.model.ff_multiplier, "feed-forward multiplier");
  tr->add_option("--max-dec-len", cfg.model.max_decoder_len,
                 "decoder length limit");
  tr->add_option("--alpha", cfg.model.alpha_error, "error token loss weight");
  tr->add_option("--dropout", cfg.model.dropout, "dropout rate");
  tr->add_option("--checkpoint-every", checkpoint_every,
                 "also checkpoint every N steps (0 = final only)");
  tr->add_flag("--paper-shape", paper_shape,
               "use the published 768/512 widths");

  // detect
  auto* det = app.add_subcommand("detect", "run the model on an audio pair");
  std::string checkpoint_path, score_wav, perf_wav, detect_out, detect_id = "track";
  bool emit_tokens = false;
  det->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  det->add_option("--score-audio", score_wav, "synthesized score WAV")->required();
  det->add_option("--perf-audio", perf_wav, "performance WAV")->required();
  det->add_option("--out", detect_out, "output directory")->required();
  det->add_option("--id", detect_id, "output file stem");
  det->add_flag("--emit-tokens", emit_tokens, "dump decoded tokens");

  // baseline
  auto* base = app.add_subcommand("baseline", "alignment-based detector");
  std::string base_manifest, base_score, base_perf, base_out, base_id = "track";
  bool external = false;
  std::string external_file;
  base->add_option("--manifest", base_manifest,
                   "run over every track of a dataset manifest");
  base->add_option("--score", base_score, "score note file");
  base->add_option("--perf", base_perf, "performance note file (oracle)");
  base->add_option("--out", base_out, "output directory")->required();
  base->add_option("--id", base_id, "output file stem");
  base->add_option("--onset-tolerance", cfg.baseline.onset_tolerance,
                   "match tolerance");
  base->add_option("--pitch-cost", cfg.baseline.pitch_cost, "per-semitone cost");
  base->add_option("--time-cost", cfg.baseline.time_cost, "per-second cost");
  base->add_option("--jitter", cfg.baseline.noise.onset_jitter_sigma,
                   "oracle onset jitter sigma");
  base->add_option("--drop-rate", cfg.baseline.noise.drop_rate,
                   "oracle note drop rate");
  base->add_option("--insert-rate", cfg.baseline.noise.insert_rate,
                   "oracle spurious note rate");
  base->add_option("--external", external_file,
                   "use this note file as the transcription");
  base->add_flag("--external-mode", external,
                 "read the transcription from --external");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score predictions against truth");
  std::string truth_dir, pred_dir, eval_out;
  ev->add_option("--truth", truth_dir, "directory of truth label files")
      ->required();
  ev->add_option("--pred", pred_dir, "directory of predicted label files")
      ->required();
  ev->add_option("--out", eval_out, "report output directory")->required();
  ev->add_option("--tolerance", cfg.eval_tolerance, "onset match tolerance");

  try {
    app.parse(argc, argv);
    if (paper_shape) {
      cfg.model.enc_dim = 768;
      cfg.model.dec_dim = 512;
    }
    if (external) {
      cfg.baseline.oracle_transcriber = false;
      cfg.baseline.external_transcription = external_file;
    }

    if (gen->parsed()) return cmd_generate(cfg, refs_dir, out_dir);
    if (syn->parsed()) return cmd_synth(cfg, manifest_path);
    if (tr->parsed())
      return cmd_train(cfg, train_manifest, train_out, checkpoint_every);
    if (det->parsed())
      return cmd_detect(cfg, checkpoint_path, score_wav, perf_wav, detect_out,
                        detect_id, emit_tokens);
    if (base->parsed()) {
      if (base_manifest.empty() && (base_score.empty() || base_perf.empty()))
        throw InvalidInputError(
            "baseline needs --manifest or both --score and --perf");
      return cmd_baseline(cfg, base_manifest, base_score, base_perf, base_out,
                          base_id);
    }
    if (ev->parsed()) return cmd_evaluate(cfg, truth_dir, pred_dir, eval_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
