#include "polytune/note.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace polytune {

const char* label_name(Label label) {
  switch (label) {
    case Label::Correct: return "Correct";
    case Label::Missed: return "Missed";
    case Label::Extra: return "Extra";
  }
  return "Unknown";
}

bool operator==(const NoteEvent& a, const NoteEvent& b) {
  return a.pitch == b.pitch && a.onset == b.onset && a.offset == b.offset &&
         a.velocity == b.velocity;
}

bool canonical_less(const NoteEvent& a, const NoteEvent& b) {
  if (a.onset != b.onset) return a.onset < b.onset;
  if (a.pitch != b.pitch) return a.pitch < b.pitch;
  return a.offset < b.offset;
}

double NoteTrack::end_time() const {
  double end = 0.0;
  for (const auto& n : notes) end = std::max(end, n.offset);
  return end;
}

void canonicalize(NoteTrack& track) {
  std::sort(track.notes.begin(), track.notes.end(), canonical_less);
  // Collapse (onset, pitch) collisions, keeping the longer note. After the
  // sort the longer note of a colliding pair comes last.
  std::vector<NoteEvent> kept;
  kept.reserve(track.notes.size());
  for (const auto& n : track.notes) {
    if (!kept.empty() && kept.back().onset == n.onset &&
        kept.back().pitch == n.pitch) {
      kept.back() = n;
    } else {
      kept.push_back(n);
    }
  }
  track.notes = std::move(kept);
}

NoteTrack merge(const std::vector<NoteTrack>& tracks) {
  NoteTrack out;
  if (!tracks.empty()) {
    out.instrument = tracks.front().instrument;
    out.source_id = tracks.front().source_id;
  }
  for (const auto& t : tracks)
    out.notes.insert(out.notes.end(), t.notes.begin(), t.notes.end());
  canonicalize(out);
  return out;
}

const NoteTrack& LabeledScore::track(Label label) const {
  switch (label) {
    case Label::Missed: return missed;
    case Label::Extra: return extra;
    default: return correct;
  }
}

NoteTrack& LabeledScore::track(Label label) {
  switch (label) {
    case Label::Missed: return missed;
    case Label::Extra: return extra;
    default: return correct;
  }
}

bool LabeledScore::labels_disjoint(double window_s) const {
  // pitch -> sorted onsets over all three tracks; a collision is two entries
  // from different tracks with equal pitch and onsets within window_s.
  std::map<int, std::vector<std::pair<double, int>>> by_pitch;
  auto collect = [&](const NoteTrack& t, int tag) {
    for (const auto& n : t.notes) by_pitch[n.pitch].push_back({n.onset, tag});
  };
  collect(correct, 0);
  collect(missed, 1);
  collect(extra, 2);
  for (auto& [pitch, entries] : by_pitch) {
    std::sort(entries.begin(), entries.end());
    for (std::size_t i = 1; i < entries.size(); ++i) {
      if (entries[i].second != entries[i - 1].second &&
          entries[i].first - entries[i - 1].first <= window_s)
        return false;
    }
  }
  return true;
}

}  // namespace polytune
