#pragma once

#include <string>
#include <vector>

#include "polytune/note.hpp"

namespace polytune {

struct AudioBuffer {
  std::vector<double> samples;  // values in [-1, 1]
  int sample_rate = 16000;

  double duration() const {
    return double(samples.size()) / double(sample_rate);
  }
};

/// Additive-synthesis voice: relative amplitudes for partials 1..K and an
/// ADSR envelope.
struct InstrumentProfile {
  std::string name = "default";
  std::vector<double> harmonic_amplitudes = {1.0, 0.5, 0.25, 0.125};
  double attack = 0.01;        // seconds
  double decay = 0.08;         // seconds
  double sustain_level = 0.7;  // fraction of peak
  double release = 0.05;       // seconds past the note offset

  /// Profile for an instrument name; unknown names get the default voice.
  static InstrumentProfile for_instrument(const std::string& name);
};

/// Renders a track by additive harmonic synthesis: each note contributes
/// sin partials at k * 440 * 2^((pitch-69)/12) Hz under an ADSR envelope,
/// all notes mixed linearly. If the mix would clip, the whole buffer is
/// peak-normalized to 0.9. Deterministic.
AudioBuffer render(const NoteTrack& track, const InstrumentProfile& profile,
                   int sample_rate = 16000);

/// 16-bit PCM mono little-endian WAV.
void write_wav(const AudioBuffer& audio, const std::string& path);
AudioBuffer read_wav(const std::string& path);

}  // namespace polytune
