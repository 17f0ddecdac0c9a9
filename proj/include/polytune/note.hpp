#pragma once

#include <string>
#include <vector>

namespace polytune {

/// Error-detection category attached to a note.
enum class Label { Correct = 0, Missed = 1, Extra = 2 };

const char* label_name(Label label);

/// A pitched note in absolute time. Times are seconds, pitch is a MIDI
/// semitone in [0,127], velocity in [1,127].
struct NoteEvent {
  int pitch = 60;
  double onset = 0.0;
  double offset = 0.0;
  int velocity = 96;

  bool valid() const {
    return pitch >= 0 && pitch <= 127 && onset >= 0.0 && offset > onset &&
           velocity >= 1 && velocity <= 127;
  }
};

bool operator==(const NoteEvent& a, const NoteEvent& b);

/// Canonical ordering: (onset, pitch, offset) ascending.
bool canonical_less(const NoteEvent& a, const NoteEvent& b);

/// A sequence of notes for one instrument, kept in canonical order.
struct NoteTrack {
  std::vector<NoteEvent> notes;
  std::string instrument;
  std::string source_id;

  bool empty() const { return notes.empty(); }
  std::size_t size() const { return notes.size(); }

  /// Last note offset, or 0 for an empty track.
  double end_time() const;
};

/// Sorts canonically and collapses (onset, pitch) collisions keeping the
/// longer note. Exact duplicates are removed.
void canonicalize(NoteTrack& track);

/// Union of all input tracks, canonicalized. Instrument and source_id are
/// taken from the first track.
NoteTrack merge(const std::vector<NoteTrack>& tracks);

/// Ground-truth (or predicted) labeling of a performance against a score.
/// Correct and Extra carry performance timing; Missed carries score timing.
struct LabeledScore {
  NoteTrack correct;
  NoteTrack missed;
  NoteTrack extra;

  const NoteTrack& track(Label label) const;
  NoteTrack& track(Label label);

  NoteTrack reconstruct_performance() const { return merge({correct, extra}); }
  NoteTrack reconstruct_reference() const { return merge({correct, missed}); }

  /// True when no (onset, pitch) pair appears in two label tracks within
  /// the given time window.
  bool labels_disjoint(double window_s = 1e-3) const;
};

}  // namespace polytune
