#include "georesidual/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "georesidual/errors.hpp"

namespace georesidual::geometry {

SkewGenerator::SkewGenerator(std::vector<double> u, std::vector<double> v)
    : u_(std::move(u)), v_(std::move(v)) {
  if (u_.size() != v_.size()) throw ShapeMismatch("skew generator u and v lengths differ");
  const std::size_t n = u_.size();
  a_ = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double x = u_[i] * v_[j] - v_[i] * u_[j];
      a_(i, j) = x;
      a_(j, i) = -x;
    }
  }
}

double SkewGenerator::mu() const noexcept {
  const double uu = numkit::dot(u_, u_);
  const double vv = numkit::dot(v_, v_);
  const double uv = numkit::dot(u_, v_);
  return std::sqrt(std::max(0.0, uu * vv - uv * uv));
}

Matrix cayley_from_skew(const Matrix& skew, double beta) {
  if (!skew.square()) throw ShapeMismatch("cayley requires a square generator");
  if (!std::isfinite(beta)) throw InvalidInput("cayley beta must be finite");
  const std::size_t n = skew.rows();
  Matrix lhs = Matrix::identity(n);
  Matrix rhs = Matrix::identity(n);
  const double h = 0.5 * beta;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      lhs(i, j) += h * skew(i, j);
      rhs(i, j) -= h * skew(i, j);
    }
  return numkit::mat_solve(lhs, rhs);
}

Matrix cayley(const SkewGenerator& gen, double beta) {
  if (gen.dim() < 2) throw InvalidInput("cayley requires n >= 2");
  return cayley_from_skew(gen.matrix(), beta);
}

CayleyGradient cayley_backward(const Matrix& skew, double beta, const Matrix& q,
                               const Matrix& grad_q) {
  const std::size_t n = skew.rows();
  // (I + M)^T = I - M for skew M.
  Matrix i_minus_m = Matrix::identity(n);
  const double h = 0.5 * beta;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) i_minus_m(i, j) -= h * skew(i, j);
  Matrix q_plus_i = q + Matrix::identity(n);
  Matrix grad_m = numkit::mat_solve(i_minus_m, grad_q) * q_plus_i.transpose();
  grad_m *= -1.0;

  CayleyGradient out;
  out.grad_skew = h * grad_m;
  double gb = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) gb += grad_m.data()[i] * skew.data()[i];
  out.grad_beta = 0.5 * gb;
  return out;
}

void skew_backward(const SkewGenerator& gen, const Matrix& grad_skew, std::span<double> grad_u,
                   std::span<double> grad_v) {
  const std::size_t n = gen.dim();
  const auto& u = gen.u();
  const auto& v = gen.v();
  for (std::size_t i = 0; i < n; ++i) {
    double gu = 0.0, gv = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double anti = grad_skew(i, j) - grad_skew(j, i);
      gu += anti * v[j];
      gv -= anti * u[j];
    }
    grad_u[i] += gu;
    grad_v[i] += gv;
  }
}

HouseholderOperator householder(std::span<const double> k, double beta) {
  const double len = numkit::norm(k);
  if (len < 1e-12) throw ZeroDirection("householder direction norm below 1e-12");
  HouseholderOperator out;
  out.direction.assign(k.begin(), k.end());
  if (std::abs(len - 1.0) > 1e-12) {
    for (double& x : out.direction) x /= len;
    out.renormalized = true;
  }
  const std::size_t m = k.size();
  out.matrix = Matrix::identity(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out.matrix(i, j) -= beta * out.direction[i] * out.direction[j];
  return out;
}

ActivationTensor hybrid_blend(double gamma, const ActivationTensor& q_out,
                              const ActivationTensor& h_out) {
  if (!q_out.same_shape(h_out)) throw ShapeMismatch("hybrid_blend operand shapes differ");
  ActivationTensor out(q_out.batch, q_out.seq, q_out.width);
  out.data = gamma * q_out.data + (1.0 - gamma) * h_out.data;
  return out;
}

ActivationTensor hybrid_blend(std::span<const double> gamma, const ActivationTensor& q_out,
                              const ActivationTensor& h_out) {
  if (!q_out.same_shape(h_out)) throw ShapeMismatch("hybrid_blend operand shapes differ");
  if (gamma.size() != q_out.batch) throw ShapeMismatch("hybrid_blend needs one gate per input");
  ActivationTensor out(q_out.batch, q_out.seq, q_out.width);
  for (std::size_t b = 0; b < q_out.batch; ++b) {
    out.slab(b) = gamma[b] * q_out.slab(b) + (1.0 - gamma[b]) * h_out.slab(b);
  }
  return out;
}

std::string_view to_string(GatePenalty p) noexcept {
  switch (p) {
    case GatePenalty::product: return "product";
    case GatePenalty::entropy: return "entropy";
    case GatePenalty::product_sq: return "product_sq";
    case GatePenalty::min_dist: return "min_dist";
  }
  return "product";
}

GatePenalty gate_penalty_from_string(std::string_view name) {
  if (name == "product") return GatePenalty::product;
  if (name == "entropy") return GatePenalty::entropy;
  if (name == "product_sq") return GatePenalty::product_sq;
  if (name == "min_dist") return GatePenalty::min_dist;
  throw InvalidInput("unknown gate penalty '" + std::string(name) + "'");
}

PenaltyValue gate_penalty(double gamma, double lambda, GatePenalty variant) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw DomainError("gate value " + std::to_string(gamma) + " outside [0, 1]");
  }
  if (!(lambda >= 0.0)) throw DomainError("penalty weight must be nonnegative");
  double f = 0.0, df = 0.0;
  const double g = gamma, c = 1.0 - gamma;
  switch (variant) {
    case GatePenalty::product:
      f = 4.0 * g * c;
      df = 4.0 - 8.0 * g;
      break;
    case GatePenalty::entropy: {
      const auto xlogx = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };
      f = -xlogx(g) - xlogx(c);
      if (g == 0.0) df = std::numeric_limits<double>::infinity();
      else if (c == 0.0) df = -std::numeric_limits<double>::infinity();
      else df = std::log(c) - std::log(g);
      break;
    }
    case GatePenalty::product_sq:
      f = (g * c) * (g * c);
      df = 2.0 * g * c * (1.0 - 2.0 * g);
      break;
    case GatePenalty::min_dist:
      if (g < 0.5) {
        f = g * g;
        df = 2.0 * g;
      } else if (g > 0.5) {
        f = c * c;
        df = -2.0 * c;
      } else {
        f = 0.25;
        df = std::numeric_limits<double>::quiet_NaN();
      }
      break;
  }
  PenaltyValue out;
  out.value = lambda * f;
  out.grad = lambda == 0.0 && !std::isnan(df) ? 0.0 : lambda * df;
  return out;
}

double cayley_angle(double beta, double mu) { return -2.0 * std::atan(0.5 * beta * mu); }

double negation_margin(const Matrix& q) {
  if (!q.square()) throw ShapeMismatch("negation_margin requires a square matrix");
  return std::abs(numkit::det(q + Matrix::identity(q.rows())));
}

namespace {

void check_retraction_args(const Matrix& skew, double alpha, std::size_t steps, const Matrix& x) {
  if (!skew.square()) throw InvalidInput("retraction generator must be square");
  if (x.rows() != skew.rows()) throw ShapeMismatch("retraction operand rows");
  if (!(alpha > 0.0)) throw InvalidInput("retraction alpha must be positive");
  if (steps == 0) throw InvalidInput("retraction needs at least one step");
  const double tol = 1e-12 * std::max(1.0, skew.max_abs());
  for (std::size_t i = 0; i < skew.rows(); ++i)
    for (std::size_t j = i; j < skew.cols(); ++j)
      if (std::abs(skew(i, j) + skew(j, i)) > tol) {
        throw InvalidInput("retraction generator is not skew-symmetric");
      }
}

}  // namespace

Matrix iterative_cayley_retraction(const Matrix& skew, double alpha, std::size_t steps,
                                   const Matrix& x) {
  check_retraction_args(skew, alpha, steps, x);
  const Matrix half_a = (0.5 * alpha) * skew;
  Matrix y = x;
  for (std::size_t t = 0; t < steps; ++t) y = x + half_a * (x + y);
  return y;
}

Matrix retraction_backward(const Matrix& skew, double alpha, std::size_t steps, const Matrix& x,
                           const Matrix& grad_y) {
  check_retraction_args(skew, alpha, steps, x);
  const Matrix half_a = (0.5 * alpha) * skew;
  std::vector<Matrix> iterates{x};
  iterates.reserve(steps + 1);
  for (std::size_t t = 0; t < steps; ++t) iterates.push_back(x + half_a * (x + iterates.back()));

  Matrix grad_a(skew.rows(), skew.cols());
  Matrix g = grad_y;
  for (std::size_t t = steps; t-- > 0;) {
    grad_a += (0.5 * alpha) * (g * (x + iterates[t]).transpose());
    g = half_a.transpose() * g;
  }
  return grad_a;
}

Matrix rotation_plane(std::size_t d, std::size_t i, std::size_t j, double theta) {
  if (!(i < j && j < d)) {
    throw IndexError("rotation plane (" + std::to_string(i) + ", " + std::to_string(j) +
                     ") invalid for dimension " + std::to_string(d));
  }
  Matrix r = Matrix::identity(d);
  const double c = std::cos(theta), s = std::sin(theta);
  r(i, i) = c;
  r(j, j) = c;
  r(i, j) = s;
  r(j, i) = -s;
  return r;
}

OrthogonalReport orthogonality_report(const Matrix& q, const SkewGenerator* gen) {
  if (!q.square()) throw ShapeMismatch("orthogonality_report requires a square matrix");
  const std::size_t n = q.rows();
  OrthogonalReport rep;
  rep.gram_deviation = numkit::gram_deviation(q);
  rep.det_value = numkit::det(q);
  rep.negation_margin = negation_margin(q);

  numkit::RandomStream probes(0x9e0b5eULL);
  auto probe = [&](const std::vector<double>& y) {
    const std::vector<double> qy = q * std::span<const double>(y);
    rep.isometry_deviation =
        std::max(rep.isometry_deviation, std::abs(numkit::norm(qy) - numkit::norm(y)));
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(n, 0.0);
    e[i] = 1.0;
    probe(e);
  }
  for (int p = 0; p < 16; ++p) probe(probes.normal_vector(n));

  if (gen != nullptr) rep.mu = gen->mu();
  return rep;
}

}  // namespace georesidual::geometry
