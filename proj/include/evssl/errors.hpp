#pragma once

#include <stdexcept>
#include <string>

namespace evssl {

/// Error categories surfaced by the library. Tests match on the code, not
/// the message text.
enum class Errc {
  bad_magic,
  truncated,
  invariant_violation,
  mixed_label_presence,
  malformed_line,
  missing_file,
  non_divisible_geometry,
  insufficient_support,
  shape_mismatch,
  domain_error,
  non_scalar_root,
  geometry_mismatch,
  teacher_dim_mismatch,
  non_finite_loss,
  degenerate_row,
  unlabeled_data,
  io_error,
  config_error,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::bad_magic: return "bad_magic";
    case Errc::truncated: return "truncated";
    case Errc::invariant_violation: return "invariant_violation";
    case Errc::mixed_label_presence: return "mixed_label_presence";
    case Errc::malformed_line: return "malformed_line";
    case Errc::missing_file: return "missing_file";
    case Errc::non_divisible_geometry: return "non_divisible_geometry";
    case Errc::insufficient_support: return "insufficient_support";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::domain_error: return "domain_error";
    case Errc::non_scalar_root: return "non_scalar_root";
    case Errc::geometry_mismatch: return "geometry_mismatch";
    case Errc::teacher_dim_mismatch: return "teacher_dim_mismatch";
    case Errc::non_finite_loss: return "non_finite_loss";
    case Errc::degenerate_row: return "degenerate_row";
    case Errc::unlabeled_data: return "unlabeled_data";
    case Errc::io_error: return "io_error";
    case Errc::config_error: return "config_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace evssl
