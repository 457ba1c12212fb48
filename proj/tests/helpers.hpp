#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evssl/event.hpp"
#include "evssl/rng.hpp"
#include "evssl/tensor.hpp"

namespace evssl::test {

/// Valid random stream: sorted timestamps, in-bounds coordinates.
inline EventStream random_stream(Rng& rng, std::uint32_t width, std::uint32_t height,
                                 std::size_t count, std::uint32_t max_t = 100000) {
  EventStream s;
  s.width = width;
  s.height = height;
  std::vector<std::uint32_t> times(count);
  for (auto& t : times) t = static_cast<std::uint32_t>(rng.uniform_int(max_t + 1));
  std::sort(times.begin(), times.end());
  s.events.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Event e;
    e.x = static_cast<std::uint16_t>(rng.uniform_int(width));
    e.y = static_cast<std::uint16_t>(rng.uniform_int(height));
    e.t = times[i];
    e.polarity = rng.uniform_int(2) == 1 ? +1 : -1;
    s.events.push_back(e);
  }
  return s;
}

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.v) v = rng.uniform(-scale, scale);
  return t;
}

inline Tensor random_unit_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double nsq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      t.at(i, j) = rng.normal();
      nsq += t.at(i, j) * t.at(i, j);
    }
    const double n = std::sqrt(nsq);
    for (std::size_t j = 0; j < cols; ++j) t.at(i, j) /= n;
  }
  return t;
}

/// Unique scratch directory under the system temp dir, removed on
/// destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    dir_ = std::filesystem::temp_directory_path() /
           ("evssl_" + tag + "_" + std::to_string(counter++));
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

}  // namespace evssl::test
