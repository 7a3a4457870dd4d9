#pragma once

// Orthogonal residual operators on the stream axis: data-dependent Cayley
// rotations, Householder reflections, the gated blend of the two, the
// midpoint-collapse gate penalty and the diagnostics that check them.

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "georesidual/numkit.hpp"
#include "georesidual/tensor.hpp"

namespace georesidual::geometry {

using numkit::Matrix;

/// Rank-2 skew generator A = u v^T - v u^T. A is built once from u and v and
/// is skew-symmetric by construction (A(j,i) is written as -A(i,j)).
class SkewGenerator {
 public:
  SkewGenerator(std::vector<double> u, std::vector<double> v);

  std::size_t dim() const noexcept { return u_.size(); }
  const std::vector<double>& u() const noexcept { return u_; }
  const std::vector<double>& v() const noexcept { return v_; }
  const Matrix& matrix() const noexcept { return a_; }

  /// Planar rotation magnitude sqrt(|u|^2 |v|^2 - (u.v)^2): the single
  /// nonzero eigenvalue pair of A is +-i mu.
  double mu() const noexcept;

 private:
  std::vector<double> u_;
  std::vector<double> v_;
  Matrix a_;
};

/// Q = (I + beta/2 A)^-1 (I - beta/2 A) for a rank-2 generator.
Matrix cayley(const SkewGenerator& gen, double beta);
/// Same map for an arbitrary skew-symmetric matrix.
Matrix cayley_from_skew(const Matrix& skew, double beta);

struct CayleyGradient {
  Matrix grad_skew;  ///< dL/dA
  double grad_beta = 0.0;
};

/// Pulls dL/dQ back through Q = cayley_from_skew(A, beta) using
/// dQ = -(I + M)^-1 dM (Q + I) with M = beta/2 A.
CayleyGradient cayley_backward(const Matrix& skew, double beta, const Matrix& q,
                               const Matrix& grad_q);

/// Pulls dL/dA back to the generator vectors: dL/du = (G - G^T) v,
/// dL/dv = (G^T - G) u.
void skew_backward(const SkewGenerator& gen, const Matrix& grad_skew, std::span<double> grad_u,
                   std::span<double> grad_v);

struct HouseholderOperator {
  Matrix matrix;
  std::vector<double> direction;  ///< the unit k actually used
  bool renormalized = false;      ///< input k was off the unit sphere by > 1e-12
};

/// H = I - beta k k^T. k is renormalized when its norm deviates from 1.
/// Throws ZeroDirection when |k| < 1e-12.
HouseholderOperator householder(std::span<const double> k, double beta);

/// gamma * q_out + (1 - gamma) * h_out, elementwise.
ActivationTensor hybrid_blend(double gamma, const ActivationTensor& q_out,
                              const ActivationTensor& h_out);
/// Per-input gate: gamma[b] blends batch element b.
ActivationTensor hybrid_blend(std::span<const double> gamma, const ActivationTensor& q_out,
                              const ActivationTensor& h_out);

enum class GatePenalty { product, entropy, product_sq, min_dist };

std::string_view to_string(GatePenalty p) noexcept;
GatePenalty gate_penalty_from_string(std::string_view name);

struct PenaltyValue {
  double value = 0.0;
  double grad = 0.0;
};

/// lambda * f(gamma) and its derivative. `product` is f = 4 gamma (1 - gamma).
/// `min_dist` has no derivative at 0.5 (grad is NaN there); `entropy` has
/// infinite slope at the boundaries. Throws DomainError outside [0, 1].
PenaltyValue gate_penalty(double gamma, double lambda, GatePenalty variant = GatePenalty::product);

/// Rotation angle of the Cayley map on the plane of a rank-2 generator,
/// theta = -2 atan(beta mu / 2), measured from the v-side basis vector toward
/// u. Always strictly inside (-pi, pi).
double cayley_angle(double beta, double mu);

/// |det(Q + I)|; zero exactly when -1 is an eigenvalue of Q.
double negation_margin(const Matrix& q);

/// Fixed-point Cayley retraction: Y0 = X, Y(t+1) = X + alpha/2 A (X + Y(t)).
/// Converges to cayley_from_skew(A, -alpha) X. Throws InvalidInput when A is
/// not skew within 1e-12, alpha <= 0, or steps == 0.
Matrix iterative_cayley_retraction(const Matrix& skew, double alpha, std::size_t steps,
                                   const Matrix& x);

/// dL/dA for Y = iterative_cayley_retraction(A, alpha, steps, X), X held fixed.
Matrix retraction_backward(const Matrix& skew, double alpha, std::size_t steps, const Matrix& x,
                           const Matrix& grad_y);

/// Givens-style rotation by theta in plane (i, j) of R^d.
Matrix rotation_plane(std::size_t d, std::size_t i, std::size_t j, double theta);

struct OrthogonalReport {
  double gram_deviation = 0.0;      ///< ||Q^T Q - I||_max
  double det_value = 0.0;
  double isometry_deviation = 0.0;  ///< max over probes of | |Qy| - |y| |
  double negation_margin = 0.0;
  std::optional<double> mu;         ///< filled when a generator is supplied
};

/// Probe vectors are the standard basis plus 16 fixed pseudo-random vectors.
OrthogonalReport orthogonality_report(const Matrix& q, const SkewGenerator* gen = nullptr);

}  // namespace georesidual::geometry
