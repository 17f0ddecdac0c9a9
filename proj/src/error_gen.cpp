#include "polytune/error_gen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "polytune/errors.hpp"
#include "polytune/note_io.hpp"
#include "polytune/parallel.hpp"
#include "polytune/rng.hpp"

namespace polytune {

namespace {

constexpr const char* kManifestHeader = "#polytune-manifest v1";
constexpr double kDisjointWindow = 1e-3;
constexpr int kMaxPlacementRetries = 100;

/// Tracks occupied (onset, pitch) slots so injected notes never collide with
/// an existing label slot within the disjointness window.
class SlotRegistry {
 public:
  void add(double onset, int pitch) { slots_[pitch].insert(onset); }

  bool collides(double onset, int pitch) const {
    auto it = slots_.find(pitch);
    if (it == slots_.end()) return false;
    auto lo = it->second.lower_bound(onset - kDisjointWindow);
    return lo != it->second.end() && *lo <= onset + kDisjointWindow;
  }

 private:
  std::map<int, std::set<double>> slots_;
};

/// Nearest nonzero integer, ties away from zero. Draws of exactly 0 are
/// handled by the caller (re-sampled).
int round_nonzero(double eps) {
  double r = std::round(eps);
  if (r == 0.0) r = eps > 0 ? 1.0 : -1.0;
  return static_cast<int>(r);
}

}  // namespace

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Miss: return "miss";
    case ErrorKind::PitchChange: return "pc";
    case ErrorKind::TimingShift: return "ts";
    case ErrorKind::ExtraNote: return "en";
  }
  return "unknown";
}

void ErrorConfig::validate() const {
  if (!(lambda_low >= 0.0 && lambda_low <= lambda_high && lambda_high <= 1.0))
    throw ConfigError("lambda_range must satisfy 0 <= low <= high <= 1");
  if (pitch_sigma <= 0.0 || time_sigma <= 0.0)
    throw ConfigError("sigmas must be positive");
  if (pitch_truncation <= 0.0 || time_truncation <= 0.0)
    throw ConfigError("truncation bounds must be positive");
  if (pitch_truncation < 1.0)
    throw ConfigError(
        "pitch truncation below one semitone cannot produce pitch errors");
  double total = 0.0;
  for (double w : error_type_weights) {
    if (w < 0.0) throw ConfigError("error type weights must be non-negative");
    total += w;
  }
  if (total <= 0.0) throw ConfigError("error type weights must not all be zero");
}

std::array<int, 4> InjectionResult::counts_by_kind() const {
  std::array<int, 4> counts = {0, 0, 0, 0};
  for (const auto& rec : log) counts[static_cast<int>(rec.kind)]++;
  return counts;
}

InjectionResult inject_errors(const NoteTrack& reference,
                              const ErrorConfig& config) {
  config.validate();
  if (reference.empty())
    throw InvalidInputError("cannot inject errors into an empty reference");

  NoteTrack ref = reference;
  canonicalize(ref);

  Rng rng(config.seed);
  InjectionResult result;
  result.lambda = rng.uniform(config.lambda_low, config.lambda_high);

  const std::vector<double> weights(config.error_type_weights.begin(),
                                    config.error_type_weights.end());

  // Every reference slot is occupied by either a Correct or a Missed label,
  // so injected notes must avoid all of them up front.
  SlotRegistry slots;
  for (const auto& n : ref.notes) slots.add(n.onset, n.pitch);

  auto& perf = result.performance.notes;
  auto& labels = result.labels;

  auto draw_pitch_offset = [&](int base_pitch) -> std::optional<int> {
    for (int attempt = 0; attempt < kMaxPlacementRetries; ++attempt) {
      double eps = rng.truncated_normal(config.pitch_sigma, config.pitch_truncation);
      if (eps == 0.0) continue;
      int delta = round_nonzero(eps);
      int shifted = base_pitch + delta;
      if (shifted < 0 || shifted > 127) continue;
      return delta;
    }
    return std::nullopt;
  };

  for (const auto& note : ref.notes) {
    if (!rng.bernoulli(result.lambda)) {
      perf.push_back(note);
      labels.correct.notes.push_back(note);
      continue;
    }
    auto kind = static_cast<ErrorKind>(rng.weighted_choice(weights));

    // Placement loops re-draw the offsets until the mutated note lands on a
    // free slot; after kMaxPlacementRetries the note is left unmodified.
    switch (kind) {
      case ErrorKind::Miss: {
        labels.missed.notes.push_back(note);
        result.log.push_back({note, std::nullopt, ErrorKind::Miss, 0, 0.0});
        continue;
      }
      case ErrorKind::PitchChange: {
        std::optional<NoteEvent> placed;
        int eps_p = 0;
        for (int attempt = 0; attempt < kMaxPlacementRetries && !placed;
             ++attempt) {
          auto delta = draw_pitch_offset(note.pitch);
          if (!delta) break;
          NoteEvent cand = note;
          cand.pitch = note.pitch + *delta;
          if (slots.collides(cand.onset, cand.pitch)) continue;
          placed = cand;
          eps_p = *delta;
        }
        if (placed) {
          slots.add(placed->onset, placed->pitch);
          perf.push_back(*placed);
          labels.missed.notes.push_back(note);
          labels.extra.notes.push_back(*placed);
          result.log.push_back({note, placed, ErrorKind::PitchChange, eps_p, 0.0});
          continue;
        }
        break;
      }
      case ErrorKind::TimingShift: {
        std::optional<NoteEvent> placed;
        double eps_t = 0.0;
        for (int attempt = 0; attempt < kMaxPlacementRetries && !placed;
             ++attempt) {
          double eps = rng.truncated_normal(config.time_sigma, config.time_truncation);
          NoteEvent cand = note;
          cand.onset = note.onset + eps;
          cand.offset = note.offset + eps;
          if (cand.onset < 0.0) continue;
          if (slots.collides(cand.onset, cand.pitch)) continue;
          placed = cand;
          eps_t = eps;
        }
        if (placed) {
          slots.add(placed->onset, placed->pitch);
          perf.push_back(*placed);
          if (std::abs(eps_t) > config.match_tolerance) {
            labels.missed.notes.push_back(note);
            labels.extra.notes.push_back(*placed);
          } else {
            // Shifts inside the scoring tolerance are not detectable errors.
            labels.correct.notes.push_back(*placed);
          }
          result.log.push_back({note, placed, ErrorKind::TimingShift, 0, eps_t});
          continue;
        }
        break;
      }
      case ErrorKind::ExtraNote: {
        std::optional<NoteEvent> placed;
        int eps_p = 0;
        double eps_t = 0.0;
        for (int attempt = 0; attempt < kMaxPlacementRetries && !placed;
             ++attempt) {
          auto delta = draw_pitch_offset(note.pitch);
          if (!delta) break;
          double eps = rng.truncated_normal(config.time_sigma, config.time_truncation);
          NoteEvent cand = note;
          cand.pitch = note.pitch + *delta;
          cand.onset = note.onset + eps;
          cand.offset = note.offset + eps;  // duration copied
          if (cand.onset < 0.0) continue;
          if (slots.collides(cand.onset, cand.pitch)) continue;
          placed = cand;
          eps_p = *delta;
          eps_t = eps;
        }
        if (placed) {
          slots.add(placed->onset, placed->pitch);
          // The original note is kept and stays correct.
          perf.push_back(note);
          perf.push_back(*placed);
          labels.correct.notes.push_back(note);
          labels.extra.notes.push_back(*placed);
          result.log.push_back({note, placed, ErrorKind::ExtraNote, eps_p, eps_t});
          continue;
        }
        break;
      }
    }

    // Placement failed: the note stays correct and no error is recorded.
    perf.push_back(note);
    labels.correct.notes.push_back(note);
  }

  canonicalize(result.performance);
  canonicalize(labels.correct);
  canonicalize(labels.missed);
  canonicalize(labels.extra);
  result.performance.instrument = ref.instrument;
  result.performance.source_id = ref.source_id;
  for (Label label : {Label::Correct, Label::Missed, Label::Extra}) {
    labels.track(label).instrument = ref.instrument;
    labels.track(label).source_id = ref.source_id;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Dataset generation and manifest I/O
// ---------------------------------------------------------------------------

std::string DatasetManifest::resolve(const std::string& relative_path) const {
  if (base_dir.empty()) return relative_path;
  return (std::filesystem::path(base_dir) / relative_path).string();
}

DatasetManifest generate_dataset(const std::vector<NoteTrack>& references,
                                 const ErrorConfig& config,
                                 const std::string& out_dir, int threads) {
  config.validate();
  if (references.empty())
    throw InvalidInputError("reference list must not be empty");
  {
    std::set<std::string> ids;
    for (const auto& ref : references) {
      if (ref.source_id.empty())
        throw InvalidInputError("every reference needs a source_id");
      if (!ids.insert(ref.source_id).second)
        throw InvalidInputError("duplicate source_id: " + ref.source_id);
    }
  }

  std::filesystem::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  manifest.entries.resize(references.size());

  parallel_for(references.size(), threads, [&](std::size_t i) {
    const NoteTrack& ref = references[i];
    ErrorConfig track_config = config;
    track_config.seed = derive_seed(config.seed, ref.source_id);
    InjectionResult injected = inject_errors(ref, track_config);

    ManifestEntry& entry = manifest.entries[i];
    entry.source_id = ref.source_id;
    entry.instrument = ref.instrument;
    entry.lambda = injected.lambda;
    entry.error_counts = injected.counts_by_kind();
    entry.seed = track_config.seed;
    entry.reference_file = ref.source_id + ".ref.notes";
    entry.performance_file = ref.source_id + ".perf.notes";
    entry.correct_file = ref.source_id + ".correct.notes";
    entry.missed_file = ref.source_id + ".missed.notes";
    entry.extra_file = ref.source_id + ".extra.notes";

    write_notes_text(ref, manifest.resolve(entry.reference_file));
    write_notes_text(injected.performance, manifest.resolve(entry.performance_file));
    write_notes_text(injected.labels.correct, manifest.resolve(entry.correct_file));
    write_notes_text(injected.labels.missed, manifest.resolve(entry.missed_file));
    write_notes_text(injected.labels.extra, manifest.resolve(entry.extra_file));
  });

  save_manifest(manifest, (std::filesystem::path(out_dir) / "manifest.txt").string());
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << kManifestHeader << "\n";
  for (const auto& e : manifest.entries) {
    nlohmann::json j;
    j["source_id"] = e.source_id;
    j["instrument"] = e.instrument;
    j["files"] = {{"reference", e.reference_file},
                  {"performance", e.performance_file},
                  {"correct", e.correct_file},
                  {"missed", e.missed_file},
                  {"extra", e.extra_file}};
    j["lambda"] = e.lambda;
    j["errors"] = {{"miss", e.error_counts[0]},
                   {"pc", e.error_counts[1]},
                   {"ts", e.error_counts[2]},
                   {"en", e.error_counts[3]}};
    j["seed"] = e.seed;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("manifest write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw ParseError("missing '#polytune-manifest v1' header", 0);

  DatasetManifest manifest;
  manifest.base_dir = std::filesystem::path(path).parent_path().string();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("bad manifest line: ") + ex.what(), 0);
    }
    ManifestEntry e;
    e.source_id = j.at("source_id").get<std::string>();
    e.instrument = j.value("instrument", std::string());
    const auto& files = j.at("files");
    e.reference_file = files.at("reference").get<std::string>();
    e.performance_file = files.at("performance").get<std::string>();
    e.correct_file = files.at("correct").get<std::string>();
    e.missed_file = files.at("missed").get<std::string>();
    e.extra_file = files.at("extra").get<std::string>();
    e.lambda = j.at("lambda").get<double>();
    const auto& errors = j.at("errors");
    e.error_counts = {errors.at("miss").get<int>(), errors.at("pc").get<int>(),
                      errors.at("ts").get<int>(), errors.at("en").get<int>()};
    e.seed = j.at("seed").get<uint64_t>();
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

}  // namespace polytune
