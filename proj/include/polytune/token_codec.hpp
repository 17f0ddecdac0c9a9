#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "polytune/note.hpp"

namespace polytune {

/// Fixed 341-token vocabulary for labeled MIDI note events:
/// SOS, EOS, EndTie, 205 time bins, 3 labels, On/Off, 128 pitches.
namespace vocab {
constexpr int kSos = 0;
constexpr int kEos = 1;
constexpr int kEndTie = 2;
constexpr int kTimeBase = 3;
constexpr int kNumTime = 205;
constexpr int kLabelBase = kTimeBase + kNumTime;  // 208: Correct, Missed, Extra
constexpr int kNumLabel = 3;
constexpr int kOn = kLabelBase + kNumLabel;       // 211
constexpr int kOff = kOn + 1;                     // 212
constexpr int kNoteBase = kOff + 1;               // 213
constexpr int kNumNote = 128;
constexpr int kSize = kNoteBase + kNumNote;       // 341

inline int time_token(int bin) { return kTimeBase + bin; }
inline int label_token(Label l) { return kLabelBase + static_cast<int>(l); }
inline int note_token(int pitch) { return kNoteBase + pitch; }

inline bool is_time(int id) { return id >= kTimeBase && id < kTimeBase + kNumTime; }
inline bool is_label(int id) { return id >= kLabelBase && id < kLabelBase + kNumLabel; }
inline bool is_note(int id) { return id >= kNoteBase && id < kNoteBase + kNumNote; }

inline int time_bin(int id) { return id - kTimeBase; }
inline Label label_of(int id) { return static_cast<Label>(id - kLabelBase); }
inline int pitch_of(int id) { return id - kNoteBase; }

/// Human-readable token name, `Time(17)` style.
std::string name(int id);
}  // namespace vocab

/// Codec timing constants: segments are 2.145 s long with 205 uniform time
/// bins per segment.
struct CodecConfig {
  double segment_seconds = 2.145;
  double time_delta() const { return segment_seconds / vocab::kNumTime; }
};

struct TokenSegment {
  int segment_index = 0;
  std::vector<int> tokens;
};

/// One decoded note, in segment-local time.
struct DecodedNote {
  Label label = Label::Correct;
  int pitch = 60;
  double local_onset = 0.0;
  double local_offset = 0.0;
  bool tied_from_start = false;  // declared in the tie section
  bool open_at_end = false;      // no Off before EOS
};

struct DecodeDiagnostics {
  int skipped_tokens = 0;
  int unmatched_offs = 0;
  int auto_closed = 0;
  int unexpected_ties = 0;
  int time_regressions = 0;
  int truncated_segments = 0;

  void accumulate(const DecodeDiagnostics& other);
  int total() const;
};

struct DecodedSegment {
  int segment_index = 0;
  std::vector<DecodedNote> notes;
  DecodeDiagnostics diagnostics;
};

using TieSet = std::vector<std::pair<Label, int>>;

/// Number of segments needed to cover a labeled score.
int segment_count(const LabeledScore& labels, const CodecConfig& config = {});

/// Encodes the events of one segment: SOS, tie declarations for notes
/// sounding across the segment start, EndTie, then time-binned events in
/// canonical order (Offs before Ons, label order, pitch ascending), EOS.
/// Missed notes are encoded on the reference timeline, Correct and Extra
/// on the performance timeline (the timelines their tracks carry).
TokenSegment encode(const LabeledScore& labels, int segment_index,
                    const CodecConfig& config = {});

std::vector<TokenSegment> encode_all(const LabeledScore& labels,
                                     const CodecConfig& config = {});

/// Tolerant left-to-right parse of a token sequence. prior_ties lists notes
/// open at the segment start (from the previous segment); grammar violations
/// are counted, never fatal. Decoded times sit at bin centers.
DecodedSegment decode(const TokenSegment& segment, const TieSet& prior_ties,
                      const CodecConfig& config = {});

/// Merges consecutive decoded segments into a LabeledScore with global
/// times, joining notes tied across segment boundaries. Notes still open at
/// the final segment end are closed there (counted in diagnostics).
LabeledScore stitch(const std::vector<DecodedSegment>& segments,
                    DecodeDiagnostics* diagnostics = nullptr,
                    const CodecConfig& config = {});

/// Convenience: decode a consecutive run of token segments and stitch.
LabeledScore decode_and_stitch(const std::vector<TokenSegment>& segments,
                               DecodeDiagnostics* diagnostics = nullptr,
                               const CodecConfig& config = {});

enum class AlphaScope { LabelOnly, EventGroup };

/// Marks positions whose tokens are "error tokens" for the weighted loss:
/// Label(Missed)/Label(Extra) always, plus the rest of the event group they
/// govern when scope is EventGroup.
std::vector<bool> error_token_mask(const std::vector<int>& tokens,
                                   AlphaScope scope = AlphaScope::EventGroup);

/// Debug dump, one `Name(arg)=id` line per token.
std::string dump_tokens(const std::vector<int>& tokens);

}  // namespace polytune
