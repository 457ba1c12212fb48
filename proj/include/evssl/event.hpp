#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evssl/binio.hpp"
#include "evssl/errors.hpp"

namespace evssl {

/// One camera event. Timestamps are microseconds relative to the stream
/// start; polarity is the sign of the brightness change.
struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint32_t t = 0;
  int polarity = +1;  // in {-1, +1}

  bool operator==(const Event&) const = default;
};

/// Ordered event sequence with its sensor geometry. Immutable by convention
/// after validate(); every producer in this library returns validated
/// streams.
struct EventStream {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<Event> events;

  bool operator==(const EventStream&) const = default;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  /// Stream duration in microseconds (last t minus first t); 0 when empty.
  std::uint32_t duration() const {
    return events.empty() ? 0u : events.back().t - events.front().t;
  }

  void validate() const {
    require(width > 0 && height > 0, Errc::invariant_violation, "zero sensor geometry");
    std::uint32_t prev_t = 0;
    bool first = true;
    for (const Event& e : events) {
      require(e.x < width && e.y < height, Errc::invariant_violation,
              "event out of bounds at (" + std::to_string(e.x) + "," + std::to_string(e.y) + ")");
      require(e.polarity == -1 || e.polarity == +1, Errc::invariant_violation,
              "polarity outside {-1,+1}");
      require(first || e.t >= prev_t, Errc::invariant_violation, "timestamps decrease");
      prev_t = e.t;
      first = false;
    }
  }
};

// ---------------------------------------------------------------------------
// EVT1 codec.
//
// Layout (little-endian, no padding):
//   magic "EVT1" | width u32 | height u32 | count u64
//   then `count` records of  x u16 | y u16 | t u32 | p u8   (9 bytes each)
// Polarity byte: 0 -> -1, 1 -> +1.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kEvt1HeaderSize = 20;
inline constexpr std::size_t kEvt1RecordSize = 9;

inline std::vector<std::uint8_t> encode_evt1(const EventStream& stream) {
  stream.validate();
  ByteWriter w;
  w.magic("EVT1");
  w.u32(stream.width);
  w.u32(stream.height);
  w.u64(stream.events.size());
  for (const Event& e : stream.events) {
    w.u16(e.x);
    w.u16(e.y);
    w.u32(e.t);
    w.u8(e.polarity > 0 ? 1 : 0);
  }
  return w.take();
}

inline EventStream decode_evt1(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 4, Errc::bad_magic, "input shorter than magic");
  require(bytes[0] == 'E' && bytes[1] == 'V' && bytes[2] == 'T' && bytes[3] == '1',
          Errc::bad_magic, "not an EVT1 file");
  ByteReader r(bytes);
  r.expect_magic("EVT1", Errc::bad_magic);
  EventStream s;
  s.width = r.u32();
  s.height = r.u32();
  const std::uint64_t count = r.u64();
  require(bytes.size() == kEvt1HeaderSize + count * kEvt1RecordSize, Errc::truncated,
          "byte count inconsistent with declared event count");
  s.events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.x = r.u16();
    e.y = r.u16();
    e.t = r.u32();
    const std::uint8_t p = r.u8();
    require(p == 0 || p == 1, Errc::invariant_violation, "polarity byte outside {0,1}");
    e.polarity = p == 1 ? +1 : -1;
    s.events.push_back(e);
  }
  s.validate();
  return s;
}

inline EventStream load_evt1(const std::filesystem::path& path) {
  return decode_evt1(read_file(path));
}

inline void save_evt1(const std::filesystem::path& path, const EventStream& stream) {
  write_file_atomic(path, encode_evt1(stream));
}

// ---------------------------------------------------------------------------
// Dataset manifest.
//
// UTF-8 text, one entry per line, tab-separated:
//   event_path TAB teacher_path [TAB label]
// Lines starting with '#' are ignored. Relative paths resolve against the
// manifest file's directory. Labels are all-or-nothing across the file.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::filesystem::path event_path;
  std::filesystem::path teacher_path;
  std::optional<std::uint32_t> label;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  bool labeled() const { return !entries.empty() && entries.front().label.has_value(); }
  std::size_t size() const { return entries.size(); }
};

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::missing_file, "cannot open manifest " + path.string());
  const std::filesystem::path base = path.has_parent_path() ? path.parent_path()
                                                            : std::filesystem::path(".");
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  std::optional<bool> labels_present;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;

    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    require(cols.size() == 2 || cols.size() == 3, Errc::malformed_line,
            "manifest line " + std::to_string(line_no) + ": expected 2 or 3 columns");

    const bool has_label = cols.size() == 3;
    if (labels_present.has_value()) {
      require(*labels_present == has_label, Errc::mixed_label_presence,
              "manifest line " + std::to_string(line_no) + ": label presence differs");
    } else {
      labels_present = has_label;
    }

    ManifestEntry entry;
    const std::filesystem::path event_path(cols[0]);
    const std::filesystem::path teacher_path(cols[1]);
    entry.event_path = event_path.is_absolute() ? event_path : base / event_path;
    entry.teacher_path = teacher_path.is_absolute() ? teacher_path : base / teacher_path;
    if (has_label) {
      std::uint32_t label = 0;
      std::istringstream ss(cols[2]);
      ss >> label;
      require(ss && ss.eof(), Errc::malformed_line,
              "manifest line " + std::to_string(line_no) + ": bad label '" + cols[2] + "'");
      entry.label = label;
    }
    manifest.entries.push_back(std::move(entry));
  }
  for (const ManifestEntry& e : manifest.entries) {
    require(std::filesystem::exists(e.event_path), Errc::missing_file,
            "manifest references missing file " + e.event_path.string());
    require(std::filesystem::exists(e.teacher_path), Errc::missing_file,
            "manifest references missing file " + e.teacher_path.string());
  }
  return manifest;
}

}  // namespace evssl
