#pragma once

// Dense numeric kernel: small row-major matrices, pivoted LU solve and
// determinant, Sinkhorn normalization, and a seeded random stream.

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace georesidual::numkit {

/// Dense real-64 matrix stored row-major. Intended for the small stream-axis
/// operators (n <= 64); large activations live in Eigen storage instead.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const noexcept {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  Matrix transpose() const;
  /// Largest absolute entry; 0 for an empty matrix.
  double max_abs() const noexcept;
  bool all_finite() const noexcept;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s) noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);
Matrix operator*(const Matrix& a, const Matrix& b);
std::vector<double> operator*(const Matrix& a, std::span<const double> x);

/// u v^T
Matrix outer(std::span<const double> u, std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// ||A^T A - I||_max
double gram_deviation(const Matrix& a);

/// Solves A X = B with partial-pivot LU. Throws SingularMatrix when a pivot
/// falls below 1e-14 times the largest entry of A.
Matrix mat_solve(const Matrix& a, const Matrix& b);

/// Determinant by partial-pivot LU; exactly singular input returns 0.
double det(const Matrix& a);

inline constexpr double kSinkhornFloor = 1e-9;

/// Alternating row/column normalization, `iters` rounds (row then column).
/// Nonpositive entries are clamped to kSinkhornFloor first.
Matrix sinkhorn_project(const Matrix& m, std::size_t iters);

/// xoshiro256** seeded through SplitMix64. The output sequence depends only
/// on the seed, so identical seeds give identical draws on every platform.
/// Normal deviates use the Box-Muller transform on 53-bit uniforms.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent stream derived from (seed, name) only, never from the
  /// current state, so substreams are stable regardless of draw order.
  RandomStream substream(std::string_view name) const;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound).
  std::uint64_t uniform_index(std::uint64_t bound) noexcept;
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  std::vector<double> normal_vector(std::size_t n, double stddev = 1.0);
  /// Uniformly distributed point on the unit sphere in R^n.
  std::vector<double> unit_vector(std::size_t n);
  void shuffle(std::span<std::size_t> items) noexcept;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace georesidual::numkit
