#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <fstream>
#include <vector>

#include "evssl/event.hpp"
#include "helpers.hpp"

using namespace evssl;

namespace {

std::vector<std::uint8_t> evt1_bytes(std::uint32_t w, std::uint32_t h,
                                     const std::vector<std::uint8_t>& records,
                                     std::uint64_t declared_count) {
  ByteWriter wr;
  wr.magic("EVT1");
  wr.u32(w);
  wr.u32(h);
  wr.u64(declared_count);
  std::vector<std::uint8_t> out = wr.take();
  out.insert(out.end(), records.begin(), records.end());
  return out;
}

std::vector<std::uint8_t> record(std::uint16_t x, std::uint16_t y, std::uint32_t t,
                                 std::uint8_t p) {
  ByteWriter wr;
  wr.u16(x);
  wr.u16(y);
  wr.u32(t);
  wr.u8(p);
  return wr.take();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("evt1 decode: empty stream", "[event_core]") {
  const auto bytes = evt1_bytes(640, 480, {}, 0);
  REQUIRE(bytes.size() == kEvt1HeaderSize);
  const EventStream s = decode_evt1(bytes);
  CHECK(s.width == 640);
  CHECK(s.height == 480);
  CHECK(s.events.empty());
}

TEST_CASE("evt1 decode: single record", "[event_core]") {
  const EventStream s = decode_evt1(evt1_bytes(4, 4, record(2, 1, 7, 1), 1));
  REQUIRE(s.size() == 1);
  CHECK(s.events[0] == Event{2, 1, 7, +1});
}

TEST_CASE("evt1 decode: x at width is out of bounds", "[event_core]") {
  const auto bytes = evt1_bytes(640, 480, record(640, 0, 0, 1), 1);
  CHECK_THROWS_MATCHES(decode_evt1(bytes), Error, Catch::Matchers::Predicate<Error>([](
      const Error& e) { return e.code() == Errc::invariant_violation; }));
}

TEST_CASE("evt1 decode: error taxonomy", "[event_core]") {
  SECTION("bad magic") {
    auto bytes = evt1_bytes(4, 4, {}, 0);
    bytes[3] = 'X';
    CHECK_THROWS_AS(decode_evt1(bytes), Error);
    try {
      decode_evt1(bytes);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::bad_magic);
    }
  }
  SECTION("truncated: declared two records, one present") {
    const auto bytes = evt1_bytes(4, 4, record(0, 0, 0, 1), 2);
    try {
      decode_evt1(bytes);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::truncated);
    }
  }
  SECTION("polarity byte outside {0,1}") {
    const auto bytes = evt1_bytes(4, 4, record(0, 0, 0, 2), 1);
    try {
      decode_evt1(bytes);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::invariant_violation);
    }
  }
  SECTION("decreasing timestamps") {
    auto recs = record(0, 0, 5, 1);
    const auto r2 = record(1, 1, 4, 0);
    recs.insert(recs.end(), r2.begin(), r2.end());
    try {
      decode_evt1(evt1_bytes(4, 4, recs, 2));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::invariant_violation);
    }
  }
}

TEST_CASE("evt1 encode: record sizes forced by the format", "[event_core]") {
  EventStream s;
  s.width = 8;
  s.height = 8;
  CHECK(encode_evt1(s).size() == 20);
  s.events.push_back(Event{1, 2, 3, -1});
  CHECK(encode_evt1(s).size() == 20 + 9);
}

TEST_CASE("evt1 encode rejects invalid streams", "[event_core]") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  s.events.push_back(Event{5, 0, 0, +1});
  CHECK_THROWS_AS(encode_evt1(s), Error);
}

TEST_CASE("evt1 roundtrip on a 10k-event randomized stream", "[event_core]") {
  Rng rng(20240601);
  const EventStream s = test::random_stream(rng, 640, 480, 10000);
  const auto bytes = encode_evt1(s);
  const EventStream back = decode_evt1(bytes);
  CHECK(back == s);
  CHECK(encode_evt1(back) == bytes);  // byte-identical re-encode
}

TEST_CASE("evt1 decoding is pure", "[event_core]") {
  Rng rng(7);
  const EventStream s = test::random_stream(rng, 32, 32, 500);
  const auto bytes = encode_evt1(s);
  CHECK(decode_evt1(bytes) == decode_evt1(bytes));
}

TEST_CASE("manifest: labeled entries in file order", "[event_core]") {
  test::TempDir dir("manifest");
  write_text(dir.path() / "a.evt1", "x");
  write_text(dir.path() / "a.tvec", "x");
  write_text(dir.path() / "b.evt1", "x");
  write_text(dir.path() / "b.tvec", "x");
  write_text(dir.path() / "m.tsv",
             "# comment line\n"
             "a.evt1\ta.tvec\t0\n"
             "b.evt1\tb.tvec\t3\n");
  const DatasetManifest m = load_manifest(dir.path() / "m.tsv");
  REQUIRE(m.size() == 2);
  CHECK(m.labeled());
  CHECK(m.entries[0].event_path == dir.path() / "a.evt1");
  CHECK(m.entries[0].label.value() == 0);
  CHECK(m.entries[1].label.value() == 3);
}

TEST_CASE("manifest: mixed label presence is an error", "[event_core]") {
  test::TempDir dir("manifest_mixed");
  write_text(dir.path() / "a.evt1", "x");
  write_text(dir.path() / "a.tvec", "x");
  write_text(dir.path() / "m.tsv", "a.evt1\ta.tvec\t1\na.evt1\ta.tvec\n");
  try {
    load_manifest(dir.path() / "m.tsv");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::mixed_label_presence);
  }
}

TEST_CASE("manifest: empty file is a valid empty manifest", "[event_core]") {
  test::TempDir dir("manifest_empty");
  write_text(dir.path() / "m.tsv", "");
  CHECK(load_manifest(dir.path() / "m.tsv").size() == 0);
}

TEST_CASE("manifest: malformed and missing cases", "[event_core]") {
  test::TempDir dir("manifest_bad");
  SECTION("wrong column count") {
    write_text(dir.path() / "m.tsv", "only_one_column\n");
    try {
      load_manifest(dir.path() / "m.tsv");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::malformed_line);
    }
  }
  SECTION("referenced file missing") {
    write_text(dir.path() / "m.tsv", "nope.evt1\tnope.tvec\n");
    try {
      load_manifest(dir.path() / "m.tsv");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::missing_file);
    }
  }
  SECTION("manifest file itself missing") {
    try {
      load_manifest(dir.path() / "does_not_exist.tsv");
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::missing_file);
    }
  }
  SECTION("bad label") {
    write_text(dir.path() / "m.tsv", "a\tb\tnot_a_number\n");
    CHECK_THROWS_AS(load_manifest(dir.path() / "m.tsv"), Error);
  }
}
