#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polytune/note.hpp"
#include "polytune/synth.hpp"

namespace polytune {

/// Monotone alignment between performance notes (i) and reference notes (j).
struct AlignmentPath {
  std::vector<std::pair<int, int>> pairs;
  double cost = 0.0;
};

/// Perturbations applied by the oracle transcriber to emulate a real
/// transcription frontend.
struct TranscriptionNoise {
  double onset_jitter_sigma = 0.0;  // seconds
  double drop_rate = 0.0;
  double insert_rate = 0.0;
  uint64_t seed = 0;
};

struct BaselineConfig {
  double onset_tolerance = 0.05;  // seconds
  double pitch_cost = 1.0;        // per semitone
  double time_cost = 10.0;        // per second
  bool oracle_transcriber = true;
  std::string external_transcription;  // note file, used when not oracle
  TranscriptionNoise noise;

  void validate() const;
};

/// Stand-in for a neural transcriber: returns the ground-truth performance
/// notes, optionally perturbed (jitter, drops, insertions). External mode
/// reads a note file produced by any outside transcriber.
NoteTrack transcribe(const AudioBuffer& audio, const NoteTrack& ground_truth,
                     const BaselineConfig& config);

/// Minimal-cost monotone alignment via dynamic programming with steps
/// diagonal, down and right; cell cost is time_cost * |onset difference| +
/// pitch_cost * |pitch difference|. Ties prefer diagonal, then (1,0).
AlignmentPath dtw_align(const NoteTrack& perf, const NoteTrack& ref,
                        const BaselineConfig& config);

/// Labels notes from an alignment path: a path pair with equal pitch and
/// onsets within tolerance is Correct (first qualifying match wins);
/// unmatched reference notes are Missed, unmatched performance notes Extra.
LabeledScore classify(const AlignmentPath& path, const NoteTrack& perf,
                      const NoteTrack& ref, const BaselineConfig& config);

/// transcribe -> dtw_align -> classify.
LabeledScore baseline_detect(const NoteTrack& score_track,
                             const NoteTrack& performance_truth,
                             const BaselineConfig& config,
                             const AudioBuffer* performance_audio = nullptr);

}  // namespace polytune
