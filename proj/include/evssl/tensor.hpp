#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "evssl/errors.hpp"

namespace evssl {

/// Dense row-major fp64 matrix. Vectors are 1 x n rows, scalars 1 x 1; the
/// whole engine works in two dimensions.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c); }

  static Tensor full(std::size_t r, std::size_t c, double value) {
    Tensor t(r, c);
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  static Tensor scalar(double value) { return full(1, 1, value); }

  static Tensor row(std::initializer_list<double> values) {
    Tensor t(1, values.size());
    std::copy(values.begin(), values.end(), t.v.begin());
    return t;
  }

  static Tensor row(const std::vector<double>& values) {
    Tensor t(1, values.size());
    std::copy(values.begin(), values.end(), t.v.begin());
    return t;
  }

  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  double item() const {
    require(is_scalar(), Errc::shape_mismatch, "item() on non-scalar");
    return v[0];
  }

  bool all_finite() const {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
};

inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
  require(a.cols == b.rows, Errc::shape_mismatch,
          "matmul " + a.shape_str() + " * " + b.shape_str());
  Tensor out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = &b.v[k * b.cols];
      double* orow = &out.v[i * out.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

inline Tensor transpose_values(const Tensor& a) {
  Tensor out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  }
  return out;
}

inline double dot_values(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), Errc::shape_mismatch, "dot shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.v[i] * b.v[i];
  return s;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(dot_values(a, a)); }

inline Tensor l2_normalized(const Tensor& a, double eps = 1e-12) {
  const double n = l2_norm(a);
  require(n >= eps, Errc::domain_error, "cannot normalize near-zero vector");
  Tensor out = a;
  for (double& x : out.v) x /= n;
  return out;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations. Returned in
/// descending order. Deterministic; plenty for the <=64-dim Gram matrices
/// used by the collapse diagnostics.
inline std::vector<double> sym_eigenvalues(Tensor a) {
  require(a.rows == a.cols, Errc::shape_mismatch, "eigenvalues of non-square matrix");
  const std::size_t n = a.rows;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    }
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p);
          const double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k);
          const double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a.at(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

}  // namespace evssl
