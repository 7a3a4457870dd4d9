#include <doctest.h>

#include <cmath>
#include <numbers>

#include "georesidual/errors.hpp"
#include "georesidual/geometry.hpp"

using namespace georesidual;
using namespace georesidual::geometry;
using numkit::RandomStream;

namespace {

constexpr double kPi = std::numbers::pi;

SkewGenerator random_generator(RandomStream& rng, std::size_t n) {
  return SkewGenerator(rng.normal_vector(n), rng.normal_vector(n));
}

Matrix random_skew(RandomStream& rng, std::size_t n, double frob = 1.0) {
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      a(i, j) = rng.normal();
      a(j, i) = -a(i, j);
    }
  double f = 0.0;
  for (double x : a.data()) f += x * x;
  return (frob / std::sqrt(f)) * a;
}

double measured_plane_angle(const SkewGenerator& gen, const Matrix& q) {
  // Orthonormal basis of span(u, v): e1 along u, e2 along v with u removed.
  std::vector<double> e1 = gen.u(), e2 = gen.v();
  const double lu = numkit::norm(e1);
  for (double& x : e1) x /= lu;
  const double proj = numkit::dot(e2, e1);
  for (std::size_t i = 0; i < e2.size(); ++i) e2[i] -= proj * e1[i];
  const double lv = numkit::norm(e2);
  for (double& x : e2) x /= lv;
  const auto qe2 = q * std::span<const double>(e2);
  return std::atan2(numkit::dot(e1, qe2), numkit::dot(e2, qe2));
}

}  // namespace

TEST_CASE("skew generator is exactly antisymmetric") {
  RandomStream rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto gen = random_generator(rng, 2 + rng.uniform_index(7));
    const Matrix& a = gen.matrix();
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) REQUIRE(a(i, j) == -a(j, i));
  }
}

TEST_CASE("cayley examples") {
  SUBCASE("parallel u and v give the identity") {
    const SkewGenerator gen({1.0, 2.0, 3.0}, {2.0, 4.0, 6.0});
    CHECK(cayley(gen, 5.0) == Matrix::identity(3));
  }
  SUBCASE("unit plane at beta 2 is a quarter turn") {
    const Matrix q = cayley(SkewGenerator({1, 0}, {0, 1}), 2.0);
    CHECK(q(0, 0) == doctest::Approx(0.0));
    CHECK(q(0, 1) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(q(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(q(1, 1) == doctest::Approx(0.0));
  }
  CHECK_THROWS_AS(cayley(SkewGenerator({1.0}, {2.0}), 1.0), InvalidInput);
  CHECK_THROWS_AS(cayley(SkewGenerator({1, 0}, {0, 1}), NAN), InvalidInput);
}

TEST_CASE("cayley is orthogonal, proper, isometric and excludes -1") {
  RandomStream rng(2);
  const std::size_t dims[] = {2, 4, 8};
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = dims[trial % 3];
    const auto gen = random_generator(rng, n);
    const double beta = rng.uniform(0.0, 1000.0);
    const Matrix q = cayley(gen, beta);
    const auto rep = orthogonality_report(q, &gen);
    REQUIRE(rep.gram_deviation <= 1e-10);
    REQUIRE(std::abs(rep.det_value - 1.0) <= 1e-8);
    REQUIRE(rep.isometry_deviation <= 1e-10 * std::sqrt(static_cast<double>(n)) * 4);
    REQUIRE(rep.negation_margin >= 1e-12);
    for (std::size_t p = 0; p < 4; ++p) {
      const auto y = rng.normal_vector(n);
      const double ny = numkit::norm(y);
      REQUIRE(std::abs(numkit::norm(q * std::span<const double>(y)) - ny) <= 1e-10 * ny);
    }
  }
}

TEST_CASE("cayley_backward and skew_backward match finite differences") {
  RandomStream rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(5);
    auto u = rng.normal_vector(n), v = rng.normal_vector(n);
    const double beta = rng.uniform(0.1, 3.0);
    Matrix w(n, n);
    for (double& x : w.data()) x = rng.normal();
    auto loss = [&](const std::vector<double>& uu, const std::vector<double>& vv, double b) {
      const Matrix q = cayley(SkewGenerator(uu, vv), b);
      double s = 0.0;
      for (std::size_t i = 0; i < n * n; ++i) s += w.data()[i] * q.data()[i];
      return s;
    };
    const SkewGenerator gen(u, v);
    const Matrix q = cayley(gen, beta);
    const auto g = cayley_backward(gen.matrix(), beta, q, w);
    std::vector<double> gu(n, 0.0), gv(n, 0.0);
    skew_backward(gen, g.grad_skew, gu, gv);

    const double h = 1e-6;
    for (std::size_t i = 0; i < n; ++i) {
      auto up = u, um = u;
      up[i] += h;
      um[i] -= h;
      REQUIRE(gu[i] == doctest::Approx((loss(up, v, beta) - loss(um, v, beta)) / (2 * h)).epsilon(1e-6));
      auto vp = v, vm = v;
      vp[i] += h;
      vm[i] -= h;
      REQUIRE(gv[i] == doctest::Approx((loss(u, vp, beta) - loss(u, vm, beta)) / (2 * h)).epsilon(1e-6));
    }
    const double fd_beta = (loss(u, v, beta + h) - loss(u, v, beta - h)) / (2 * h);
    REQUIRE(g.grad_beta == doctest::Approx(fd_beta).epsilon(1e-6));
  }
}

TEST_CASE("householder examples") {
  SUBCASE("axis reflection preserves norm") {
    const auto h = householder(std::vector<double>{1, 0}, 2.0);
    CHECK(h.matrix == Matrix{{-1, 0}, {0, 1}});
    const auto y = h.matrix * std::span<const double>(std::vector<double>{3, 4});
    CHECK(y[0] == -3.0);
    CHECK(y[1] == 4.0);
    CHECK(numkit::norm(y) == 5.0);
    CHECK_FALSE(h.renormalized);
  }
  SUBCASE("beta 1 annihilates k, matching the norm distortion identity") {
    const auto h = householder(std::vector<double>{1, 0}, 1.0);
    const auto y = h.matrix * std::span<const double>(std::vector<double>{1, 0});
    CHECK(numkit::dot(y, y) == 0.0);
    CHECK(1.0 + (1.0 - 2.0) * 1.0 == 0.0);
  }
  SUBCASE("beta 2 negates k") {
    RandomStream rng(4);
    for (int i = 0; i < 50; ++i) {
      const auto k = rng.unit_vector(2 + rng.uniform_index(10));
      const auto h = householder(k, 2.0);
      const auto hk = h.matrix * std::span<const double>(h.direction);
      for (std::size_t j = 0; j < k.size(); ++j) REQUIRE(std::abs(hk[j] + h.direction[j]) <= 1e-12);
    }
  }
  SUBCASE("non-unit directions are renormalized and flagged") {
    const auto h = householder(std::vector<double>{3, 4}, 2.0);
    CHECK(h.renormalized);
    CHECK(numkit::norm(h.direction) == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(householder(std::vector<double>{0, 1e-13}, 2.0), ZeroDirection);
}

TEST_CASE("householder is orthogonal exactly at beta 0 and 2") {
  RandomStream rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 2 + rng.uniform_index(10);
    const auto k = rng.unit_vector(m);
    for (double beta : {0.0, 2.0}) REQUIRE(numkit::gram_deviation(householder(k, beta).matrix) <= 1e-12);
    double beta = rng.uniform(-3.0, 5.0);
    if (std::abs(beta) < 1e-3 || std::abs(beta - 2.0) < 1e-3) beta = 1.0;
    const auto h = householder(k, beta);
    REQUIRE(numkit::gram_deviation(h.matrix) > 1e-12);
    const auto x = rng.normal_vector(m);
    const auto hx = h.matrix * std::span<const double>(x);
    const double kx = numkit::dot(k, x);
    const double lhs = numkit::dot(hx, hx) - numkit::dot(x, x);
    REQUIRE(std::abs(lhs - (beta * beta - 2.0 * beta) * kx * kx) <= 1e-10 * std::max(1.0, numkit::dot(x, x)));
  }
}

TEST_CASE("reflection at beta 2 fixes exactly the orthogonal complement of k") {
  RandomStream rng(6);
  const auto k = rng.unit_vector(8);
  const auto h = householder(k, 2.0);
  for (int i = 0; i < 50; ++i) {
    auto w = rng.normal_vector(8);
    const double p = numkit::dot(w, k);
    for (std::size_t j = 0; j < 8; ++j) w[j] -= p * k[j];
    const auto hw = h.matrix * std::span<const double>(w);
    for (std::size_t j = 0; j < 8; ++j) REQUIRE(std::abs(hw[j] - w[j]) <= 1e-12);
  }
  CHECK(numkit::det(h.matrix) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("hybrid_blend boundaries and the midpoint blend") {
  RandomStream rng(7);
  ActivationTensor q(2, 3, 4), h(2, 3, 4);
  for (Eigen::Index i = 0; i < q.data.size(); ++i) {
    q.data.data()[i] = rng.normal();
    h.data.data()[i] = rng.normal();
  }
  CHECK(hybrid_blend(1.0, q, h).data == q.data);
  CHECK(hybrid_blend(0.0, q, h).data == h.data);
  const double per_batch[] = {1.0, 0.0};
  const auto mixed = hybrid_blend(per_batch, q, h);
  CHECK(mixed.slab(0) == q.slab(0));
  CHECK(mixed.slab(1) == h.slab(1));
  CHECK_THROWS_AS(hybrid_blend(0.5, q, ActivationTensor(2, 3, 5)), ShapeMismatch);

  // gamma 0.5 between I and diag(-1, 1) collapses to diag(0, 1).
  const Matrix m = 0.5 * Matrix::identity(2) + 0.5 * Matrix{{-1, 0}, {0, 1}};
  CHECK(m == Matrix{{0, 0}, {0, 1}});
  CHECK(numkit::gram_deviation(m) == 1.0);
}

TEST_CASE("midpoint blend of a rotation and a reflection is never orthogonal") {
  RandomStream rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(7);
    const Matrix q = cayley_from_skew(random_skew(rng, n, rng.uniform(0.1, 10.0)), 2.0);
    const Matrix h = householder(rng.unit_vector(n), 2.0).matrix;
    const Matrix m = 0.5 * q + 0.5 * h;
    REQUIRE(numkit::gram_deviation(m) > 1e-3);
  }
}

TEST_CASE("gate_penalty anchors") {
  auto p = gate_penalty(0.5, 1.0);
  CHECK(p.value == 1.0);
  CHECK(p.grad == 0.0);
  p = gate_penalty(0.0, 1.0);
  CHECK(p.value == 0.0);
  CHECK(std::abs(p.grad) == 4.0);
  CHECK(gate_penalty(1.0, 1.0).grad == -4.0);
  p = gate_penalty(0.25, 1.0);
  CHECK(p.value == 0.75);
  CHECK(p.grad == 2.0);
  CHECK(gate_penalty(0.75, 1.0).grad == -2.0);
  CHECK(gate_penalty(0.5, 1.0, GatePenalty::entropy).value == doctest::Approx(0.69).epsilon(1e-2));
  CHECK(gate_penalty(0.5, 1.0, GatePenalty::product_sq).value == 0.0625);
  CHECK(gate_penalty(0.5, 1.0, GatePenalty::min_dist).value == 0.25);
  CHECK(std::isnan(gate_penalty(0.5, 1.0, GatePenalty::min_dist).grad));
  CHECK(std::isinf(gate_penalty(0.0, 1.0, GatePenalty::entropy).grad));
  CHECK(gate_penalty(0.3, 0.1).value == doctest::Approx(0.1 * 4 * 0.3 * 0.7));
  CHECK_THROWS_AS(gate_penalty(1.5, 1.0), DomainError);
  CHECK_THROWS_AS(gate_penalty(-0.1, 1.0), DomainError);
}

TEST_CASE("gate_penalty is symmetric with zero slope at the midpoint") {
  RandomStream rng(9);
  for (auto variant : {GatePenalty::product, GatePenalty::entropy, GatePenalty::product_sq,
                       GatePenalty::min_dist}) {
    for (int i = 0; i < 100; ++i) {
      const double g = rng.uniform();
      REQUIRE(gate_penalty(g, 1.0, variant).value ==
              doctest::Approx(gate_penalty(1.0 - g, 1.0, variant).value).epsilon(1e-12));
    }
    if (variant != GatePenalty::min_dist) CHECK(gate_penalty(0.5, 1.0, variant).grad == 0.0);
    // Analytic slope agrees with a central difference away from kinks.
    const double g = 0.3, h = 1e-6;
    const double fd = (gate_penalty(g + h, 1.0, variant).value - gate_penalty(g - h, 1.0, variant).value) / (2 * h);
    CHECK(gate_penalty(g, 1.0, variant).grad == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("cayley_angle examples and range") {
  CHECK(cayley_angle(0.0, 3.0) == 0.0);
  CHECK(cayley_angle(2.0, 1.0) == doctest::Approx(-kPi / 2).epsilon(1e-15));
  const double far = cayley_angle(1e6, 1.0);
  CHECK(std::abs(far + kPi) < 1e-5);
  CHECK(std::abs(far) < kPi);

  const SkewGenerator unit({1, 0}, {0, 1});
  CHECK(measured_plane_angle(unit, cayley(unit, 2.0)) == doctest::Approx(-kPi / 2));

  RandomStream rng(10);
  for (int i = 0; i < 500; ++i) {
    const auto gen = random_generator(rng, 2);
    const double beta = rng.uniform(0.0, 1000.0);
    const double theta = cayley_angle(beta, gen.mu());
    REQUIRE(std::abs(theta) < kPi);
    REQUIRE(std::abs(measured_plane_angle(gen, cayley(gen, beta)) - theta) <= 1e-9);
  }
}

TEST_CASE("negation_margin examples") {
  CHECK(negation_margin(Matrix::identity(2)) == 4.0);
  CHECK(negation_margin(Matrix{{0, -1}, {1, 0}}) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(negation_margin(Matrix{{-1, 0}, {0, 1}}) == 0.0);
}

TEST_CASE("iterative retraction examples") {
  RandomStream rng(11);
  const Matrix x = Matrix::identity(4);
  CHECK(iterative_cayley_retraction(Matrix(4, 4), 0.1, 2, x) == x);

  for (int trial = 0; trial < 500; ++trial) {
    const Matrix a = random_skew(rng, 4, rng.uniform(0.0, 1.0));
    const Matrix y = iterative_cayley_retraction(a, 0.1, 2, x);
    REQUIRE(numkit::gram_deviation(y) < 1e-3);
  }

  const Matrix a = random_skew(rng, 6, 1.0);
  const Matrix y = iterative_cayley_retraction(a, 0.1, 50, Matrix::identity(6));
  CHECK((y - cayley_from_skew(a, -0.1)).max_abs() <= 1e-6);

  Matrix not_skew = a;
  not_skew(0, 1) += 1e-6;
  CHECK_THROWS_AS(iterative_cayley_retraction(not_skew, 0.1, 2, Matrix::identity(6)), InvalidInput);
  CHECK_THROWS_AS(iterative_cayley_retraction(a, 0.0, 2, Matrix::identity(6)), InvalidInput);
  CHECK_THROWS_AS(iterative_cayley_retraction(a, 0.1, 0, Matrix::identity(6)), InvalidInput);
}

TEST_CASE("retraction_backward matches finite differences") {
  RandomStream rng(12);
  const std::size_t n = 4;
  const Matrix a = random_skew(rng, n, 2.0);
  Matrix w(n, n);
  for (double& v : w.data()) v = rng.normal();
  const auto loss = [&](const Matrix& aa) {
    const Matrix y = iterative_cayley_retraction(aa, 0.3, 3, Matrix::identity(n));
    double s = 0;
    for (std::size_t i = 0; i < n * n; ++i) s += w.data()[i] * y.data()[i];
    return s;
  };
  const Matrix g = retraction_backward(a, 0.3, 3, Matrix::identity(n), w);
  // Perturb along skew directions only: E_ij - E_ji.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      Matrix ap = a, am = a;
      const double h = 1e-6;
      ap(i, j) += h; ap(j, i) -= h;
      am(i, j) -= h; am(j, i) += h;
      const double fd = (loss(ap) - loss(am)) / (2 * h);
      CHECK(g(i, j) - g(j, i) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("rotation_plane examples") {
  const Matrix r = rotation_plane(4, 0, 1, kPi);
  const double expect[] = {-1, -1, 1, 1};
  CHECK((r - Matrix::diagonal(expect)).max_abs() < 1e-15);
  const Matrix q = rotation_plane(2, 0, 1, kPi / 2);
  CHECK((q - Matrix{{0, 1}, {-1, 0}}).max_abs() < 1e-15);
  CHECK(rotation_plane(5, 1, 3, 0.0) == Matrix::identity(5));
  CHECK(numkit::gram_deviation(rotation_plane(6, 2, 5, 1.234)) < 1e-15);
  CHECK(numkit::det(rotation_plane(6, 2, 5, 3.1)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(rotation_plane(4, 2, 1, 0.1), IndexError);
  CHECK_THROWS_AS(rotation_plane(4, 1, 4, 0.1), IndexError);
}

TEST_CASE("orthogonality_report mu") {
  const SkewGenerator unit({1, 0}, {0, 1});
  const auto rep = orthogonality_report(cayley(unit, 1.0), &unit);
  REQUIRE(rep.mu.has_value());
  CHECK(*rep.mu == 1.0);
  CHECK(rep.gram_deviation <= 1e-10);
  CHECK(rep.det_value == doctest::Approx(1.0));
  CHECK(rep.negation_margin > 0.0);
  const SkewGenerator par({1, 2}, {2, 4});
  CHECK(*orthogonality_report(Matrix::identity(2), &par).mu == 0.0);
  CHECK_FALSE(orthogonality_report(Matrix::identity(2)).mu.has_value());
}

TEST_CASE("(I + M)(I - M) = I - M^2 = (I - M)(I + M)") {
  RandomStream rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(6);
    Matrix m(n, n);
    for (double& x : m.data()) x = rng.normal();
    const Matrix i = Matrix::identity(n);
    const Matrix lhs = (i + m) * (i - m);
    const Matrix mid = i - m * m;
    const Matrix rhs = (i - m) * (i + m);
    REQUIRE((lhs - mid).max_abs() <= 1e-12 * std::max(1.0, mid.max_abs()));
    REQUIRE((rhs - mid).max_abs() <= 1e-12 * std::max(1.0, mid.max_abs()));
  }
}
