#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "polytune/note.hpp"

namespace polytune {

enum class ErrorKind { Miss = 0, PitchChange = 1, TimingShift = 2, ExtraNote = 3 };

const char* error_kind_name(ErrorKind kind);

/// Configuration of the note-error injection process. Pitch offsets are drawn
/// from a truncated normal P (semitones), timing offsets from a truncated
/// normal Q (seconds); the per-track error rate lambda is drawn uniformly
/// from lambda_range.
struct ErrorConfig {
  double lambda_low = 0.1;
  double lambda_high = 0.4;
  double pitch_sigma = 1.0;        // std of P, semitones
  double time_sigma = 0.02;        // std of Q, seconds
  double pitch_truncation = 3.0;   // P support is [-this, +this]
  double time_truncation = 0.06;   // Q support is [-this, +this]
  std::array<double, 4> error_type_weights = {1.0, 1.0, 1.0, 1.0};
  uint64_t seed = 0;
  double match_tolerance = 0.05;   // timing shifts beyond this become errors

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Bookkeeping for one injected error.
struct ErrorRecord {
  std::optional<NoteEvent> original_note;
  std::optional<NoteEvent> injected_note;
  ErrorKind kind = ErrorKind::Miss;
  int eps_p = 0;        // semitones, 0 when the kind carries no pitch offset
  double eps_t = 0.0;   // seconds, 0 when the kind carries no time offset
};

struct InjectionResult {
  NoteTrack performance;
  LabeledScore labels;
  std::vector<ErrorRecord> log;
  double lambda = 0.0;

  std::array<int, 4> counts_by_kind() const;
};

/// Injects errors into a reference track per the generation algorithm:
/// each note is independently selected with probability lambda; selected
/// notes receive one of {miss, pitch change, timing shift, extra note}.
/// Deterministic given config.seed.
InjectionResult inject_errors(const NoteTrack& reference,
                              const ErrorConfig& config);

struct ManifestEntry {
  std::string source_id;
  std::string instrument;
  std::string reference_file;
  std::string performance_file;
  std::string correct_file;
  std::string missed_file;
  std::string extra_file;
  double lambda = 0.0;
  std::array<int, 4> error_counts = {0, 0, 0, 0};  // miss, pc, ts, en
  uint64_t seed = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  /// Directory the entry file paths are relative to; set on load/save.
  std::string base_dir;

  std::string resolve(const std::string& relative_path) const;
};

/// Writes per-track note files (reference, performance, three label tracks)
/// plus a `manifest.txt` under out_dir. Per-track seeds are derived from the
/// master seed by hashing source_id, so parallel and serial runs produce
/// byte-identical outputs.
DatasetManifest generate_dataset(const std::vector<NoteTrack>& references,
                                 const ErrorConfig& config,
                                 const std::string& out_dir, int threads = 1);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

}  // namespace polytune
