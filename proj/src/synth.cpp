#include "polytune/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "polytune/errors.hpp"

namespace polytune {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kNormalizeTarget = 0.9;

double midi_to_hz(int pitch) {
  return 440.0 * std::pow(2.0, (pitch - 69) / 12.0);
}

/// ADSR gain at t seconds into a note lasting note_dur seconds (then release).
double envelope(const InstrumentProfile& p, double t, double note_dur) {
  if (t < 0.0) return 0.0;
  double held;
  if (t < p.attack && p.attack > 0.0) {
    held = t / p.attack;
  } else if (t < p.attack + p.decay && p.decay > 0.0) {
    held = 1.0 + (p.sustain_level - 1.0) * (t - p.attack) / p.decay;
  } else {
    held = p.sustain_level;
  }
  if (t <= note_dur) return held;
  if (p.release <= 0.0) return 0.0;
  double rel = 1.0 - (t - note_dur) / p.release;
  if (rel <= 0.0) return 0.0;
  // Gain at the moment of release, faded linearly to zero.
  double at_release = envelope(p, note_dur, note_dur + 1.0);
  return at_release * rel;
}

}  // namespace

InstrumentProfile InstrumentProfile::for_instrument(const std::string& name) {
  InstrumentProfile p;
  p.name = name;
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
  if (lower == "piano") {
    p.harmonic_amplitudes = {1.0, 0.6, 0.4, 0.25, 0.15, 0.08};
    p.attack = 0.005;
    p.decay = 0.25;
    p.sustain_level = 0.45;
    p.release = 0.08;
  } else if (lower == "flute") {
    p.harmonic_amplitudes = {1.0, 0.25, 0.08};
    p.attack = 0.04;
    p.decay = 0.05;
    p.sustain_level = 0.85;
    p.release = 0.05;
  } else if (lower == "clarinet") {
    // Odd partials dominate.
    p.harmonic_amplitudes = {1.0, 0.04, 0.5, 0.03, 0.3, 0.02, 0.12};
    p.attack = 0.03;
    p.decay = 0.06;
    p.sustain_level = 0.8;
    p.release = 0.05;
  } else if (lower == "violin") {
    p.harmonic_amplitudes = {1.0, 0.7, 0.5, 0.35, 0.22, 0.14, 0.09};
    p.attack = 0.06;
    p.decay = 0.08;
    p.sustain_level = 0.75;
    p.release = 0.07;
  } else if (lower == "trumpet") {
    p.harmonic_amplitudes = {1.0, 0.85, 0.65, 0.45, 0.28, 0.16};
    p.attack = 0.02;
    p.decay = 0.05;
    p.sustain_level = 0.8;
    p.release = 0.05;
  }
  return p;
}

AudioBuffer render(const NoteTrack& track, const InstrumentProfile& profile,
                   int sample_rate) {
  if (sample_rate <= 0) throw InvalidInputError("sample rate must be positive");
  if (profile.harmonic_amplitudes.empty() ||
      profile.harmonic_amplitudes.front() <= 0.0)
    throw InvalidInputError("profile needs a positive fundamental amplitude");

  AudioBuffer out;
  out.sample_rate = sample_rate;
  if (track.empty()) return out;

  double end = track.end_time() + profile.release;
  out.samples.assign(static_cast<std::size_t>(std::ceil(end * sample_rate)), 0.0);

  const double nyquist = sample_rate / 2.0;
  for (const auto& note : track.notes) {
    const double f0 = midi_to_hz(note.pitch);
    const double gain = note.velocity / 127.0;
    const double note_dur = note.offset - note.onset;
    const std::size_t first =
        static_cast<std::size_t>(std::floor(note.onset * sample_rate));
    const std::size_t last = std::min(
        out.samples.size(),
        static_cast<std::size_t>(
            std::ceil((note.offset + profile.release) * sample_rate)));
    for (std::size_t i = first; i < last; ++i) {
      const double t = double(i) / sample_rate - note.onset;
      if (t < 0.0) continue;
      const double env = envelope(profile, t, note_dur);
      if (env <= 0.0) continue;
      double v = 0.0;
      for (std::size_t k = 0; k < profile.harmonic_amplitudes.size(); ++k) {
        const double fk = f0 * double(k + 1);
        if (fk >= nyquist) break;  // drop aliasing partials
        v += profile.harmonic_amplitudes[k] * std::sin(2.0 * kPi * fk * t);
      }
      out.samples[i] += gain * env * v;
    }
  }

  double peak = 0.0;
  for (double s : out.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0) {
    const double scale = kNormalizeTarget / peak;
    for (double& s : out.samples) s *= scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAV I/O (16-bit PCM mono, little-endian)
// ---------------------------------------------------------------------------

namespace {

void put_u32le(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u16le(std::string& s, uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char(v >> 8));
}

uint32_t get_u32le(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

uint16_t get_u16le(const unsigned char* p) {
  return uint16_t(p[0]) | uint16_t(p[1]) << 8;
}

}  // namespace

void write_wav(const AudioBuffer& audio, const std::string& path) {
  const uint32_t n = static_cast<uint32_t>(audio.samples.size());
  const uint32_t data_bytes = n * 2;
  const uint32_t rate = static_cast<uint32_t>(audio.sample_rate);

  std::string s;
  s.reserve(44 + data_bytes);
  s += "RIFF";
  put_u32le(s, 36 + data_bytes);
  s += "WAVEfmt ";
  put_u32le(s, 16);
  put_u16le(s, 1);  // PCM
  put_u16le(s, 1);  // mono
  put_u32le(s, rate);
  put_u32le(s, rate * 2);  // byte rate
  put_u16le(s, 2);         // block align
  put_u16le(s, 16);        // bits per sample
  s += "data";
  put_u32le(s, data_bytes);
  for (double v : audio.samples) {
    double clamped = std::clamp(v, -1.0, 1.0);
    auto q = static_cast<int16_t>(std::lround(clamped * 32767.0));
    put_u16le(s, static_cast<uint16_t>(q));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw IoError("write failed: " + path);
}

AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 44 || bytes.compare(0, 4, "RIFF") != 0 ||
      bytes.compare(8, 4, "WAVE") != 0)
    throw ParseError("not a RIFF/WAVE file", 0);

  AudioBuffer audio;
  std::size_t pos = 12;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    std::string id = bytes.substr(pos, 4);
    uint32_t size = get_u32le(p + pos + 4);
    pos += 8;
    if (pos + size > bytes.size())
      throw ParseError("chunk '" + id + "' exceeds file size", pos - 4);
    if (id == "fmt ") {
      if (size < 16) throw ParseError("short fmt chunk", pos);
      if (get_u16le(p + pos) != 1)
        throw UnsupportedFeatureError("only PCM WAV is supported");
      if (get_u16le(p + pos + 2) != 1)
        throw UnsupportedFeatureError("only mono WAV is supported");
      audio.sample_rate = static_cast<int>(get_u32le(p + pos + 4));
      if (get_u16le(p + pos + 14) != 16)
        throw UnsupportedFeatureError("only 16-bit WAV is supported");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ParseError("data chunk before fmt chunk", pos);
      audio.samples.reserve(size / 2);
      for (uint32_t i = 0; i + 1 < size; i += 2) {
        auto q = static_cast<int16_t>(get_u16le(p + pos + i));
        audio.samples.push_back(double(q) / 32767.0);
      }
      return audio;
    }
    pos += size + (size & 1);
  }
  throw ParseError("missing data chunk", pos);
}

}  // namespace polytune
