#include "polytune/token_codec.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <sstream>

#include "polytune/errors.hpp"

namespace polytune {

namespace vocab {

std::string name(int id) {
  if (id == kSos) return "SOS";
  if (id == kEos) return "EOS";
  if (id == kEndTie) return "EndTie";
  if (is_time(id)) return "Time(" + std::to_string(time_bin(id)) + ")";
  if (is_label(id)) return std::string("Label(") + label_name(label_of(id)) + ")";
  if (id == kOn) return "On";
  if (id == kOff) return "Off";
  if (is_note(id)) return "Note(" + std::to_string(pitch_of(id)) + ")";
  return "Invalid(" + std::to_string(id) + ")";
}

}  // namespace vocab

namespace {

/// Segment index owning an absolute time.
int segment_of(double t, const CodecConfig& cfg) {
  return std::max(0, static_cast<int>(std::floor(t / cfg.segment_seconds)));
}

int bin_of(double t, int segment_index, const CodecConfig& cfg) {
  const double local = t - segment_index * cfg.segment_seconds;
  int bin = static_cast<int>(std::floor(local / cfg.time_delta()));
  return std::clamp(bin, 0, vocab::kNumTime - 1);
}

double bin_center(int bin, const CodecConfig& cfg) {
  return (bin + 0.5) * cfg.time_delta();
}

struct Event {
  int bin;
  bool on;
  Label label;
  int pitch;

  bool operator<(const Event& other) const {
    if (bin != other.bin) return bin < other.bin;
    if (on != other.on) return !on;  // Offs before Ons
    if (label != other.label) return label < other.label;
    return pitch < other.pitch;
  }
};

}  // namespace

void DecodeDiagnostics::accumulate(const DecodeDiagnostics& other) {
  skipped_tokens += other.skipped_tokens;
  unmatched_offs += other.unmatched_offs;
  auto_closed += other.auto_closed;
  unexpected_ties += other.unexpected_ties;
  time_regressions += other.time_regressions;
  truncated_segments += other.truncated_segments;
}

int DecodeDiagnostics::total() const {
  return skipped_tokens + unmatched_offs + auto_closed + unexpected_ties +
         time_regressions + truncated_segments;
}

int segment_count(const LabeledScore& labels, const CodecConfig& config) {
  double last = 0.0;
  const double delta = config.time_delta();
  for (Label l : {Label::Correct, Label::Missed, Label::Extra})
    for (const auto& n : labels.track(l).notes)
      last = std::max(last, std::max(n.offset, n.onset + delta));
  return segment_of(last, config) + 1;
}

TokenSegment encode(const LabeledScore& labels, int segment_index,
                    const CodecConfig& config) {
  if (segment_index < 0)
    throw InvalidInputError("segment index must be non-negative");

  const double delta = config.time_delta();
  std::vector<std::pair<Label, int>> ties;
  std::vector<Event> events;

  for (Label label : {Label::Correct, Label::Missed, Label::Extra}) {
    for (const auto& n : labels.track(label).notes) {
      // Notes shorter than one bin are stretched to a single bin so that the
      // Off always lands strictly after the On.
      const double off = std::max(n.offset, n.onset + delta);
      const int on_seg = segment_of(n.onset, config);
      const int off_seg = segment_of(off, config);
      if (on_seg < segment_index && off_seg >= segment_index)
        ties.push_back({label, n.pitch});
      if (on_seg == segment_index)
        events.push_back({bin_of(n.onset, segment_index, config), true, label, n.pitch});
      if (off_seg == segment_index)
        events.push_back({bin_of(off, segment_index, config), false, label, n.pitch});
    }
  }

  std::sort(ties.begin(), ties.end());
  std::sort(events.begin(), events.end());

  TokenSegment seg;
  seg.segment_index = segment_index;
  auto& out = seg.tokens;
  out.push_back(vocab::kSos);
  for (const auto& [label, pitch] : ties) {
    out.push_back(vocab::label_token(label));
    out.push_back(vocab::note_token(pitch));
  }
  out.push_back(vocab::kEndTie);
  int current_bin = -1;
  for (const auto& e : events) {
    if (e.bin != current_bin) {
      out.push_back(vocab::time_token(e.bin));
      current_bin = e.bin;
    }
    out.push_back(vocab::label_token(e.label));
    out.push_back(e.on ? vocab::kOn : vocab::kOff);
    out.push_back(vocab::note_token(e.pitch));
  }
  out.push_back(vocab::kEos);
  return seg;
}

std::vector<TokenSegment> encode_all(const LabeledScore& labels,
                                     const CodecConfig& config) {
  const int count = segment_count(labels, config);
  std::vector<TokenSegment> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(encode(labels, i, config));
  return out;
}

DecodedSegment decode(const TokenSegment& segment, const TieSet& prior_ties,
                      const CodecConfig& config) {
  DecodedSegment result;
  result.segment_index = segment.segment_index;
  auto& diag = result.diagnostics;

  struct Open {
    Label label;
    int pitch;
    double onset;
    bool tied;
  };
  std::vector<Open> open;
  std::vector<std::pair<Label, int>> unmatched_prior(prior_ties);

  enum Phase { kStart, kTie, kBody, kDone };
  Phase phase = kStart;
  std::optional<Label> cur_label;
  std::optional<bool> cur_on;
  int cur_bin = 0;
  const double delta = config.time_delta();

  for (int id : segment.tokens) {
    if (id < 0 || id >= vocab::kSize) {
      diag.skipped_tokens++;
      continue;
    }
    if (phase == kDone) {
      diag.skipped_tokens++;
      continue;
    }
    if (phase == kStart) {
      if (id == vocab::kSos)
        phase = kTie;
      else
        diag.skipped_tokens++;
      continue;
    }
    if (id == vocab::kEos) {
      phase = kDone;
      continue;
    }
    if (phase == kTie) {
      if (id == vocab::kEndTie) {
        phase = kBody;
      } else if (vocab::is_label(id)) {
        cur_label = vocab::label_of(id);
      } else if (vocab::is_note(id) && cur_label) {
        const int pitch = vocab::pitch_of(id);
        auto it = std::find(unmatched_prior.begin(), unmatched_prior.end(),
                            std::make_pair(*cur_label, pitch));
        if (it != unmatched_prior.end())
          unmatched_prior.erase(it);
        else
          diag.unexpected_ties++;
        open.push_back({*cur_label, pitch, 0.0, true});
      } else {
        diag.skipped_tokens++;
      }
      continue;
    }
    // Body.
    if (vocab::is_time(id)) {
      const int bin = vocab::time_bin(id);
      if (bin < cur_bin)
        diag.time_regressions++;
      else
        cur_bin = bin;
    } else if (vocab::is_label(id)) {
      cur_label = vocab::label_of(id);
    } else if (id == vocab::kOn || id == vocab::kOff) {
      cur_on = (id == vocab::kOn);
    } else if (vocab::is_note(id)) {
      if (!cur_label || !cur_on) {
        diag.skipped_tokens++;
        continue;
      }
      const int pitch = vocab::pitch_of(id);
      if (*cur_on) {
        open.push_back({*cur_label, pitch, bin_center(cur_bin, config), false});
      } else {
        // Close the earliest open note of the same label and pitch.
        auto it = std::find_if(open.begin(), open.end(), [&](const Open& o) {
          return o.label == *cur_label && o.pitch == pitch;
        });
        if (it == open.end()) {
          diag.unmatched_offs++;
        } else {
          DecodedNote n;
          n.label = it->label;
          n.pitch = it->pitch;
          n.local_onset = it->onset;
          n.local_offset =
              std::max(bin_center(cur_bin, config), it->onset + delta / 2.0);
          n.tied_from_start = it->tied;
          result.notes.push_back(n);
          open.erase(it);
        }
      }
    } else {
      diag.skipped_tokens++;  // stray SOS or EndTie
    }
  }

  if (phase != kDone) diag.truncated_segments++;

  // Notes with no Off are carried over as ties to the next segment.
  for (const auto& o : open) {
    DecodedNote n;
    n.label = o.label;
    n.pitch = o.pitch;
    n.local_onset = o.onset;
    n.local_offset = config.segment_seconds;
    n.tied_from_start = o.tied;
    n.open_at_end = true;
    result.notes.push_back(n);
  }
  return result;
}

LabeledScore stitch(const std::vector<DecodedSegment>& segments,
                    DecodeDiagnostics* diagnostics,
                    const CodecConfig& config) {
  DecodeDiagnostics diag;
  LabeledScore out;
  if (segments.empty()) {
    if (diagnostics) *diagnostics = diag;
    return out;
  }
  for (std::size_t i = 1; i < segments.size(); ++i) {
    if (segments[i].segment_index != segments[i - 1].segment_index + 1)
      throw InvalidInputError("stitch requires consecutive segment indices");
  }

  struct Partial {
    double onset;
  };
  std::map<std::pair<Label, int>, std::deque<Partial>> open;
  const double delta = config.time_delta();

  auto emit = [&](Label label, int pitch, double onset, double offset) {
    NoteEvent n;
    n.pitch = pitch;
    n.onset = onset;
    n.offset = std::max(offset, onset + delta / 2.0);
    out.track(label).notes.push_back(n);
  };

  for (const auto& seg : segments) {
    const double seg_start = seg.segment_index * config.segment_seconds;
    diag.accumulate(seg.diagnostics);

    std::map<std::pair<Label, int>, std::deque<Partial>> next_open;
    for (const auto& note : seg.notes) {
      double onset;
      const auto key = std::make_pair(note.label, note.pitch);
      if (note.tied_from_start) {
        auto it = open.find(key);
        if (it != open.end() && !it->second.empty()) {
          onset = it->second.front().onset;
          it->second.pop_front();
        } else {
          // Tie declared with no antecedent: open at the boundary.
          diag.unexpected_ties++;
          onset = seg_start;
        }
      } else {
        onset = seg_start + note.local_onset;
      }
      if (note.open_at_end)
        next_open[key].push_back({onset});
      else
        emit(note.label, note.pitch, onset, seg_start + note.local_offset);
    }

    // Notes left open by the previous segment but not re-declared close at
    // the boundary.
    for (auto& [key, queue] : open) {
      for (const auto& partial : queue) {
        diag.auto_closed++;
        emit(key.first, key.second, partial.onset, seg_start);
      }
    }
    open = std::move(next_open);
  }

  const double end_time =
      (segments.back().segment_index + 1) * config.segment_seconds;
  for (auto& [key, queue] : open) {
    for (const auto& partial : queue) {
      diag.auto_closed++;
      emit(key.first, key.second, partial.onset, end_time);
    }
  }

  canonicalize(out.correct);
  canonicalize(out.missed);
  canonicalize(out.extra);
  if (diagnostics) *diagnostics = diag;
  return out;
}

LabeledScore decode_and_stitch(const std::vector<TokenSegment>& segments,
                               DecodeDiagnostics* diagnostics,
                               const CodecConfig& config) {
  std::vector<DecodedSegment> decoded;
  decoded.reserve(segments.size());
  TieSet ties;
  for (const auto& seg : segments) {
    DecodedSegment d = decode(seg, ties, config);
    ties.clear();
    for (const auto& n : d.notes)
      if (n.open_at_end) ties.push_back({n.label, n.pitch});
    decoded.push_back(std::move(d));
  }
  return stitch(decoded, diagnostics, config);
}

std::vector<bool> error_token_mask(const std::vector<int>& tokens,
                                   AlphaScope scope) {
  std::vector<bool> mask(tokens.size(), false);
  bool group_is_error = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int id = tokens[i];
    if (vocab::is_label(id)) {
      const Label l = vocab::label_of(id);
      group_is_error = (l == Label::Missed || l == Label::Extra);
      mask[i] = group_is_error;
    } else if (id == vocab::kOn || id == vocab::kOff || vocab::is_note(id)) {
      mask[i] = scope == AlphaScope::EventGroup && group_is_error;
    }
    // Time, SOS, EOS and EndTie are never error tokens.
  }
  return mask;
}

std::string dump_tokens(const std::vector<int>& tokens) {
  std::ostringstream out;
  for (int id : tokens) out << vocab::name(id) << "=" << id << "\n";
  return out.str();
}

}  // namespace polytune
