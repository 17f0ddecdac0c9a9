#include "polytune/note_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "polytune/errors.hpp"

namespace polytune {

namespace {

constexpr int kTicksPerQuarter = 480;
constexpr int kWriteTempoUsPerQuarter = 500000;  // 120 BPM
constexpr double kWriteTicksPerSecond =
    kTicksPerQuarter * 1.0e6 / kWriteTempoUsPerQuarter;  // 960

constexpr const char* kNotesHeader = "#polytune-notes v1";

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail = s.substr(s.size() - suffix.size());
  std::transform(tail.begin(), tail.end(), tail.begin(), ::tolower);
  return tail == suffix;
}

// ---------------------------------------------------------------------------
// SMF reading
// ---------------------------------------------------------------------------

struct ByteReader {
  const std::string& data;
  std::size_t pos = 0;

  bool eof() const { return pos >= data.size(); }

  uint8_t u8() {
    if (pos >= data.size()) throw ParseError("unexpected end of file", pos);
    return static_cast<uint8_t>(data[pos++]);
  }

  uint16_t u16() { return static_cast<uint16_t>(u8() << 8 | u8()); }

  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | u8();
    return v;
  }

  uint32_t varint() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      uint8_t b = u8();
      v = v << 7 | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes", pos);
  }

  void skip(std::size_t n) {
    if (pos + n > data.size()) throw ParseError("unexpected end of file", pos);
    pos += n;
  }

  void expect(const char* tag) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (u8() != static_cast<uint8_t>(tag[i]))
        throw ParseError(std::string("expected chunk tag '") + tag + "'",
                         pos - 1);
    }
  }
};

struct RawNote {
  int64_t on_tick;
  int64_t off_tick;
  int pitch;
  int velocity;
};

struct RawTrack {
  std::vector<RawNote> notes;
  std::vector<std::pair<int64_t, uint32_t>> tempos;  // (tick, us per quarter)
};

RawTrack parse_mtrk(ByteReader& r) {
  r.expect("MTrk");
  uint32_t length = r.u32();
  std::size_t end = r.pos + length;
  if (end > r.data.size())
    throw ParseError("track chunk length exceeds file size", r.pos - 4);

  RawTrack track;
  int64_t tick = 0;
  uint8_t running_status = 0;
  // Open note-ons per pitch, FIFO: a note-off closes the earliest open note.
  std::map<int, std::deque<std::size_t>> open;

  while (r.pos < end) {
    tick += r.varint();
    uint8_t status = static_cast<uint8_t>(r.data[r.pos]);
    if (status & 0x80) {
      r.skip(1);
      if (status < 0xf0) running_status = status;
    } else {
      if (!(running_status & 0x80))
        throw ParseError("data byte without running status", r.pos);
      status = running_status;
    }

    if (status == 0xff) {  // meta
      uint8_t type = r.u8();
      uint32_t len = r.varint();
      if (type == 0x51) {
        if (len != 3) throw ParseError("malformed tempo event", r.pos);
        uint32_t us = 0;
        for (int i = 0; i < 3; ++i) us = us << 8 | r.u8();
        track.tempos.push_back({tick, us});
      } else {
        r.skip(len);
        if (type == 0x2f) break;  // end of track
      }
    } else if (status == 0xf0 || status == 0xf7) {  // sysex, no timing impact
      uint32_t len = r.varint();
      r.skip(len);
    } else {
      uint8_t kind = status & 0xf0;
      switch (kind) {
        case 0x90: {  // note on (velocity 0 acts as note off)
          int pitch = r.u8() & 0x7f;
          int vel = r.u8() & 0x7f;
          if (vel > 0) {
            open[pitch].push_back(track.notes.size());
            track.notes.push_back({tick, -1, pitch, vel});
          } else if (!open[pitch].empty()) {
            track.notes[open[pitch].front()].off_tick = tick;
            open[pitch].pop_front();
          }
          break;
        }
        case 0x80: {  // note off
          int pitch = r.u8() & 0x7f;
          r.u8();  // release velocity, ignored
          if (!open[pitch].empty()) {
            track.notes[open[pitch].front()].off_tick = tick;
            open[pitch].pop_front();
          }
          break;
        }
        case 0xa0:  // poly aftertouch
        case 0xb0:  // controller
        case 0xe0:  // pitch bend
          r.skip(2);
          break;
        case 0xc0:  // program change
        case 0xd0:  // channel aftertouch
          r.skip(1);
          break;
        default:
          throw ParseError("unknown event status byte", r.pos - 1);
      }
    }
  }
  r.pos = end;

  // Notes still open at end of track close at the final tick.
  for (auto& n : track.notes)
    if (n.off_tick < 0) n.off_tick = std::max(tick, n.on_tick + 1);
  return track;
}

/// Converts an absolute tick to seconds by walking the tempo map.
class TempoMap {
 public:
  explicit TempoMap(std::vector<std::pair<int64_t, uint32_t>> changes,
                    int ticks_per_quarter)
      : tpq_(ticks_per_quarter) {
    std::sort(changes.begin(), changes.end());
    // Implicit default tempo 120 BPM from tick 0.
    segments_.push_back({0, 0.0, 500000});
    for (auto [tick, us] : changes) {
      if (tick <= 0) {
        segments_.back().us_per_quarter = us;
        continue;
      }
      const Segment& prev = segments_.back();
      double start_s = prev.start_s + double(tick - prev.start_tick) *
                                          prev.us_per_quarter / (1e6 * tpq_);
      if (tick == prev.start_tick) {
        segments_.back().us_per_quarter = us;
      } else {
        segments_.push_back({tick, start_s, us});
      }
    }
  }

  double seconds(int64_t tick) const {
    const Segment* seg = &segments_.front();
    for (const auto& s : segments_) {
      if (s.start_tick > tick) break;
      seg = &s;
    }
    return seg->start_s +
           double(tick - seg->start_tick) * seg->us_per_quarter / (1e6 * tpq_);
  }

 private:
  struct Segment {
    int64_t start_tick;
    double start_s;
    uint32_t us_per_quarter;
  };
  std::vector<Segment> segments_;
  int tpq_;
};

NoteTrack parse_smf(const std::string& bytes) {
  ByteReader r{bytes};
  r.expect("MThd");
  uint32_t header_len = r.u32();
  if (header_len < 6) throw ParseError("malformed MThd length", r.pos - 4);
  uint16_t format = r.u16();
  uint16_t ntrks = r.u16();
  uint16_t division = r.u16();
  r.skip(header_len - 6);

  if (format > 1)
    throw UnsupportedFeatureError("SMF format " + std::to_string(format) +
                                  " is not supported (only 0 and 1)");
  if (division & 0x8000)
    throw UnsupportedFeatureError("SMPTE time division is not supported");
  if (division == 0) throw ParseError("zero time division", 12);

  std::vector<RawTrack> tracks;
  for (uint16_t i = 0; i < ntrks; ++i) tracks.push_back(parse_mtrk(r));

  // Tempo events may live in any track (format 1 keeps them in track 0).
  std::vector<std::pair<int64_t, uint32_t>> tempos;
  for (const auto& t : tracks)
    tempos.insert(tempos.end(), t.tempos.begin(), t.tempos.end());
  TempoMap tempo_map(std::move(tempos), division);

  // Single-instrument toolkit: take the first note-bearing track.
  const RawTrack* src = nullptr;
  for (const auto& t : tracks)
    if (!t.notes.empty()) {
      src = &t;
      break;
    }

  NoteTrack out;
  if (src) {
    for (const auto& rn : src->notes) {
      NoteEvent n;
      n.pitch = rn.pitch;
      n.velocity = std::clamp(rn.velocity, 1, 127);
      n.onset = tempo_map.seconds(rn.on_tick);
      n.offset = tempo_map.seconds(std::max(rn.off_tick, rn.on_tick + 1));
      out.notes.push_back(n);
    }
  }
  canonicalize(out);
  return out;
}

// ---------------------------------------------------------------------------
// SMF writing
// ---------------------------------------------------------------------------

void append_u16(std::string& out, uint16_t v) {
  out.push_back(char(v >> 8));
  out.push_back(char(v & 0xff));
}

void append_u32(std::string& out, uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8)
    out.push_back(char((v >> shift) & 0xff));
}

void append_varint(std::string& out, uint32_t v) {
  char buf[4];
  int n = 0;
  buf[n++] = char(v & 0x7f);
  while (v >>= 7) buf[n++] = char((v & 0x7f) | 0x80);
  while (n--) out.push_back(buf[n]);
}

std::string build_smf(const NoteTrack& track) {
  struct Event {
    int64_t tick;
    bool on;
    int pitch;
    int velocity;
  };
  std::vector<Event> events;
  events.reserve(track.notes.size() * 2);
  for (const auto& n : track.notes) {
    int64_t on = llround(n.onset * kWriteTicksPerSecond);
    int64_t off = llround(n.offset * kWriteTicksPerSecond);
    if (off <= on) off = on + 1;
    events.push_back({on, true, n.pitch, std::clamp(n.velocity, 1, 127)});
    events.push_back({off, false, n.pitch, 0});
  }
  // Offs before ons at equal tick so repeated pitches do not overlap.
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.tick != b.tick) return a.tick < b.tick;
    if (a.on != b.on) return !a.on;
    return a.pitch < b.pitch;
  });

  std::string body;
  append_varint(body, 0);  // tempo at tick 0
  body += "\xff\x51\x03";
  body.push_back(char((kWriteTempoUsPerQuarter >> 16) & 0xff));
  body.push_back(char((kWriteTempoUsPerQuarter >> 8) & 0xff));
  body.push_back(char(kWriteTempoUsPerQuarter & 0xff));

  int64_t tick = 0;
  for (const auto& e : events) {
    append_varint(body, static_cast<uint32_t>(e.tick - tick));
    tick = e.tick;
    body.push_back(e.on ? char(0x90) : char(0x80));
    body.push_back(char(e.pitch & 0x7f));
    body.push_back(e.on ? char(e.velocity & 0x7f) : char(0x40));
  }
  append_varint(body, 0);
  body += "\xff\x2f";
  body.push_back('\0');

  std::string out = "MThd";
  append_u32(out, 6);
  append_u16(out, 0);  // format 0
  append_u16(out, 1);  // one track
  append_u16(out, kTicksPerQuarter);
  out += "MTrk";
  append_u32(out, static_cast<uint32_t>(body.size()));
  out += body;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Canonical text format
// ---------------------------------------------------------------------------

std::string to_notes_text(const NoteTrack& track) {
  NoteTrack canon = track;
  canonicalize(canon);
  std::string out = kNotesHeader;
  out.push_back('\n');
  char line[96];
  for (const auto& n : canon.notes) {
    std::snprintf(line, sizeof(line), "%.6f\t%.6f\t%d\t%d\n", n.onset, n.offset,
                  n.pitch, n.velocity);
    out += line;
  }
  return out;
}

NoteTrack parse_notes_text(const std::string& content) {
  std::istringstream in(content);
  std::string header;
  std::getline(in, header);
  if (header != kNotesHeader)
    throw ParseError("missing '#polytune-notes v1' header", 0);

  NoteTrack track;
  std::string line;
  std::size_t offset = header.size() + 1;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      NoteEvent n;
      if (std::sscanf(line.c_str(), "%lf\t%lf\t%d\t%d", &n.onset, &n.offset,
                      &n.pitch, &n.velocity) != 4)
        throw ParseError("malformed note line '" + line + "'", offset);
      if (!n.valid())
        throw ParseError("invalid note '" + line + "'", offset);
      track.notes.push_back(n);
    }
    offset += line.size() + 1;
  }
  canonicalize(track);
  return track;
}

NoteTrack read_notes_text(const std::string& path) {
  NoteTrack t = parse_notes_text(read_file_bytes(path));
  return t;
}

void write_notes_text(const NoteTrack& track, const std::string& path) {
  write_file_bytes(path, to_notes_text(track));
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

NoteTrack read_smf(const std::string& path) {
  return parse_smf(read_file_bytes(path));
}

void write_smf(const NoteTrack& track, const std::string& path) {
  write_file_bytes(path, build_smf(track));
}

NoteTrack read_track(const std::string& path) {
  std::string bytes = read_file_bytes(path);
  NoteTrack track;
  if (bytes.rfind("MThd", 0) == 0) {
    track = parse_smf(bytes);
  } else if (bytes.rfind("#polytune-notes", 0) == 0) {
    track = parse_notes_text(bytes);
  } else {
    throw ParseError("unrecognized file format (expected SMF or notes text)",
                     0);
  }
  // source_id defaults to the file stem.
  std::size_t slash = path.find_last_of("/\\");
  std::string stem = slash == std::string::npos ? path : path.substr(slash + 1);
  std::size_t dot = stem.find('.');
  track.source_id = dot == std::string::npos ? stem : stem.substr(0, dot);
  return track;
}

void write_track(const NoteTrack& track, const std::string& path) {
  if (has_suffix(path, ".mid") || has_suffix(path, ".midi"))
    write_smf(track, path);
  else
    write_notes_text(track, path);
}

}  // namespace polytune
