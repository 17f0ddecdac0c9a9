#include "polytune/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "polytune/errors.hpp"

namespace polytune {

namespace {

/// Kuhn's augmenting-path maximum matching on the admissibility graph.
class BipartiteMatcher {
 public:
  BipartiteMatcher(int n_ref, int n_est) : adj_(std::size_t(n_ref)), match_est_(std::size_t(n_est), -1) {}

  void add_edge(int ref, int est) { adj_[std::size_t(ref)].push_back(est); }

  std::vector<std::pair<int, int>> solve() {
    for (int r = 0; r < int(adj_.size()); ++r) {
      visited_.assign(match_est_.size(), false);
      try_augment(r);
    }
    std::vector<std::pair<int, int>> pairs;
    for (int e = 0; e < int(match_est_.size()); ++e)
      if (match_est_[std::size_t(e)] >= 0)
        pairs.push_back({match_est_[std::size_t(e)], e});
    std::sort(pairs.begin(), pairs.end());
    return pairs;
  }

 private:
  bool try_augment(int r) {
    for (int e : adj_[std::size_t(r)]) {
      if (visited_[std::size_t(e)]) continue;
      visited_[std::size_t(e)] = true;
      if (match_est_[std::size_t(e)] < 0 || try_augment(match_est_[std::size_t(e)])) {
        match_est_[std::size_t(e)] = r;
        return true;
      }
    }
    return false;
  }

  std::vector<std::vector<int>> adj_;
  std::vector<int> match_est_;
  std::vector<bool> visited_;
};

CategoryMetrics score_category(const NoteTrack& ref, const NoteTrack& est,
                               double tolerance) {
  CategoryMetrics m;
  m.tp = int(onset_match(ref, est, tolerance).size());
  m.fp = int(est.size()) - m.tp;
  m.fn = int(ref.size()) - m.tp;
  if (est.empty())
    m.precision = ref.empty() ? 1.0 : 0.0;
  else
    m.precision = double(m.tp) / double(est.size());
  if (ref.empty())
    m.recall = est.empty() ? 1.0 : 0.0;
  else
    m.recall = double(m.tp) / double(ref.size());
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

void accumulate(DetectionReport& total, const DetectionReport& r) {
  auto add = [](CategoryMetrics& a, const CategoryMetrics& b) {
    a.tp += b.tp;
    a.fp += b.fp;
    a.fn += b.fn;
    a.precision += b.precision;
    a.recall += b.recall;
    a.f1 += b.f1;
  };
  add(total.correct, r.correct);
  add(total.missed, r.missed);
  add(total.extra, r.extra);
  total.macro_precision += r.macro_precision;
  total.macro_recall += r.macro_recall;
  total.macro_f1 += r.macro_f1;
}

void divide(DetectionReport& total, int n) {
  auto div = [n](CategoryMetrics& a) {
    a.precision /= n;
    a.recall /= n;
    a.f1 /= n;
  };
  div(total.correct);
  div(total.missed);
  div(total.extra);
  total.macro_precision /= n;
  total.macro_recall /= n;
  total.macro_f1 /= n;
}

}  // namespace

const CategoryMetrics& DetectionReport::category(Label label) const {
  switch (label) {
    case Label::Missed: return missed;
    case Label::Extra: return extra;
    default: return correct;
  }
}

std::vector<std::pair<int, int>> onset_match(const NoteTrack& ref_notes,
                                             const NoteTrack& est_notes,
                                             double tolerance) {
  if (tolerance <= 0.0) throw ConfigError("matching tolerance must be positive");
  BipartiteMatcher matcher(int(ref_notes.size()), int(est_notes.size()));
  for (int r = 0; r < int(ref_notes.size()); ++r)
    for (int e = 0; e < int(est_notes.size()); ++e) {
      const auto& rn = ref_notes.notes[std::size_t(r)];
      const auto& en = est_notes.notes[std::size_t(e)];
      if (rn.pitch == en.pitch && std::abs(rn.onset - en.onset) <= tolerance)
        matcher.add_edge(r, e);
    }
  return matcher.solve();
}

DetectionReport report(const LabeledScore& truth, const LabeledScore& predicted,
                       double tolerance) {
  DetectionReport rep;
  rep.correct = score_category(truth.correct, predicted.correct, tolerance);
  rep.missed = score_category(truth.missed, predicted.missed, tolerance);
  rep.extra = score_category(truth.extra, predicted.extra, tolerance);
  rep.macro_precision =
      (rep.correct.precision + rep.missed.precision + rep.extra.precision) / 3.0;
  rep.macro_recall =
      (rep.correct.recall + rep.missed.recall + rep.extra.recall) / 3.0;
  rep.macro_f1 = (rep.correct.f1 + rep.missed.f1 + rep.extra.f1) / 3.0;
  return rep;
}

AggregateReport aggregate(
    const std::vector<std::pair<std::string, DetectionReport>>& reports) {
  if (reports.empty()) throw InvalidInputError("no reports to aggregate");

  AggregateReport agg;
  std::map<std::string, std::vector<const DetectionReport*>> groups;
  for (const auto& [instrument, rep] : reports)
    groups[instrument].push_back(&rep);

  for (const auto& [instrument, list] : groups) {
    AggregateRow row;
    row.instrument = instrument;
    row.tracks = int(list.size());
    for (const DetectionReport* r : list) accumulate(row.mean, *r);
    divide(row.mean, row.tracks);
    agg.per_instrument.push_back(std::move(row));
  }

  agg.overall.instrument = "Average";
  agg.overall.tracks = int(reports.size());
  for (const auto& [instrument, rep] : reports) accumulate(agg.overall.mean, rep);
  divide(agg.overall.mean, agg.overall.tracks);
  return agg;
}

namespace {

void append_row_csv(std::string& out, const AggregateRow& row) {
  char buf[256];
  auto put = [&](const CategoryMetrics& m, bool last) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f%s", m.precision, m.recall,
                  m.f1, last ? "\n" : ",");
    out += buf;
  };
  out += row.instrument + "," + std::to_string(row.tracks) + ",";
  put(row.mean.correct, false);
  put(row.mean.missed, false);
  put(row.mean.extra, true);
}

}  // namespace

std::string to_csv(const AggregateReport& agg) {
  std::string out =
      "# averages are track-weighted (every track counts once)\n"
      "instrument,tracks,correct_p,correct_r,correct_f1,"
      "missed_p,missed_r,missed_f1,extra_p,extra_r,extra_f1\n";
  for (const auto& row : agg.per_instrument) append_row_csv(out, row);
  append_row_csv(out, agg.overall);
  return out;
}

std::string to_table(const AggregateReport& agg) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-14s %6s | %23s | %23s | %23s\n",
                "instrument", "tracks", "correct (P/R/F1)",
                "missed (P/R/F1)", "extra (P/R/F1)");
  out << line;
  out << std::string(98, '-') << "\n";
  auto put = [&](const AggregateRow& row) {
    auto fmt = [](const CategoryMetrics& m, char* buf, std::size_t n) {
      std::snprintf(buf, n, "%6.1f%% %6.1f%% %6.1f%%", 100.0 * m.precision,
                    100.0 * m.recall, 100.0 * m.f1);
    };
    char a[64], b[64], c[64];
    fmt(row.mean.correct, a, sizeof(a));
    fmt(row.mean.missed, b, sizeof(b));
    fmt(row.mean.extra, c, sizeof(c));
    std::snprintf(line, sizeof(line), "%-14s %6d | %s | %s | %s\n",
                  row.instrument.c_str(), row.tracks, a, b, c);
    out << line;
  };
  for (const auto& row : agg.per_instrument) put(row);
  out << std::string(98, '-') << "\n";
  put(agg.overall);
  return out.str();
}

std::string to_json_summary(const AggregateReport& agg) {
  nlohmann::json j;
  j["averaging"] = "track_weighted";
  auto cat = [](const CategoryMetrics& m) {
    return nlohmann::json{{"precision", m.precision},
                          {"recall", m.recall},
                          {"f1", m.f1},
                          {"tp", m.tp},
                          {"fp", m.fp},
                          {"fn", m.fn}};
  };
  auto row_json = [&](const AggregateRow& row) {
    return nlohmann::json{{"instrument", row.instrument},
                          {"tracks", row.tracks},
                          {"correct", cat(row.mean.correct)},
                          {"missed", cat(row.mean.missed)},
                          {"extra", cat(row.mean.extra)},
                          {"macro_f1", row.mean.macro_f1}};
  };
  j["instruments"] = nlohmann::json::array();
  for (const auto& row : agg.per_instrument)
    j["instruments"].push_back(row_json(row));
  j["overall"] = row_json(agg.overall);
  return j.dump(2) + "\n";
}

}  // namespace polytune
