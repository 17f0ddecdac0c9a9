#pragma once

#include <string>
#include <vector>

#include "polytune/note.hpp"

namespace polytune {

struct CategoryMetrics {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Per-category precision/recall/F1 for one piece, plus the macro average
/// over the three categories.
struct DetectionReport {
  CategoryMetrics correct;
  CategoryMetrics missed;
  CategoryMetrics extra;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;

  const CategoryMetrics& category(Label label) const;
};

/// Maximum bipartite matching between reference and estimated notes where a
/// pair is admissible iff pitches are equal and onsets differ by at most
/// tolerance. Offsets are ignored. Returns (ref index, est index) pairs.
std::vector<std::pair<int, int>> onset_match(const NoteTrack& ref_notes,
                                             const NoteTrack& est_notes,
                                             double tolerance = 0.05);

/// Per-category isolation then onset matching; the macro average is the
/// unweighted mean over the three categories.
DetectionReport report(const LabeledScore& truth, const LabeledScore& predicted,
                       double tolerance = 0.05);

/// Aggregated dataset-level table: one row per instrument (mean over its
/// tracks) plus an overall track-weighted average row.
struct AggregateRow {
  std::string instrument;
  int tracks = 0;
  DetectionReport mean;
};

struct AggregateReport {
  std::vector<AggregateRow> per_instrument;
  AggregateRow overall;  // instrument = "Average", track-weighted
};

AggregateReport aggregate(
    const std::vector<std::pair<std::string, DetectionReport>>& reports);

/// CSV: rows = instruments, columns = (category x P/R/F1).
std::string to_csv(const AggregateReport& agg);

/// Fixed-width table for terminal output.
std::string to_table(const AggregateReport& agg);

/// Machine-readable JSON summary.
std::string to_json_summary(const AggregateReport& agg);

}  // namespace polytune
