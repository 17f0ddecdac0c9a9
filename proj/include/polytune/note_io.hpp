#pragma once

#include <string>

#include "polytune/note.hpp"

namespace polytune {

/// Reads a note track from a Standard MIDI File (format 0 or 1) or the
/// canonical text format, sniffing the format from the file content.
/// All times are resolved to absolute seconds through the tempo map.
NoteTrack read_track(const std::string& path);

/// Writes a track. Paths ending in .mid/.midi produce a format-0 SMF at
/// 480 ticks per quarter and a fixed 120 BPM write tempo; anything else
/// produces the canonical text format.
void write_track(const NoteTrack& track, const std::string& path);

// Format-specific entry points, used directly by tests.
NoteTrack read_smf(const std::string& path);
void write_smf(const NoteTrack& track, const std::string& path);
NoteTrack read_notes_text(const std::string& path);
void write_notes_text(const NoteTrack& track, const std::string& path);

/// Serializes to the canonical text format: header line `#polytune-notes v1`
/// then one `onset<TAB>offset<TAB>pitch<TAB>velocity` line per note, times
/// with 6 decimal places.
std::string to_notes_text(const NoteTrack& track);
NoteTrack parse_notes_text(const std::string& content);

}  // namespace polytune
