#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "georesidual/binio.hpp"
#include "georesidual/datasets.hpp"
#include "georesidual/errors.hpp"
#include "georesidual/geometry.hpp"

using namespace georesidual;
using namespace georesidual::datasets;
using numkit::Matrix;
using numkit::RandomStream;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("georesidual_test_" + name);
}

double vec_norm(std::span<const double> v) { return numkit::norm(v); }

void check_shape(const Dataset& ds, std::size_t n, std::size_t t, std::size_t d) {
  CHECK(ds.N == n);
  CHECK(ds.T == t);
  CHECK(ds.d == d);
  CHECK(ds.inputs.size() == n * t * d);
  CHECK(ds.targets.size() == n * t * d);
}

bool all_finite(const Dataset& ds) {
  for (double x : ds.inputs)
    if (!std::isfinite(x)) return false;
  for (double x : ds.targets)
    if (!std::isfinite(x)) return false;
  return true;
}

// Consecutive-step norm ratio over every target step.
double worst_ratio_error(const Dataset& ds) {
  double worst = 0.0;
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t t = 0; t < ds.T; ++t)
      worst = std::max(worst, std::abs(vec_norm(ds.target(n, t)) / vec_norm(ds.input(n, t)) - 1.0));
  return worst;
}

}  // namespace

TEST_CASE("gyroscope trajectories stay on the unit sphere") {
  const auto split = gen_gyroscope(7, 40, 10);
  check_shape(split.train, 40, 255, 16);
  check_shape(split.val, 10, 255, 16);
  CHECK(all_finite(split.train));
  double worst = 0.0;
  for (const Dataset* ds : {&split.train, &split.val})
    for (std::size_t n = 0; n < ds->N; ++n)
      for (std::size_t t = 0; t < ds->T; ++t) {
        worst = std::max(worst, std::abs(vec_norm(ds->input(n, t)) - 1.0));
        worst = std::max(worst, std::abs(vec_norm(ds->target(n, t)) - 1.0));
      }
  CHECK(worst <= 1e-10);
  CHECK(worst_ratio_error(split.train) <= 1e-10);
}

TEST_CASE("gyroscope targets are inputs shifted by one step") {
  const auto split = gen_gyroscope(3, 5, 1, 8, 20);
  const Dataset& ds = split.train;
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t t = 0; t + 1 < ds.T; ++t) {
      const auto a = ds.target(n, t), b = ds.input(n, t + 1);
      for (std::size_t j = 0; j < ds.d; ++j) CHECK(a[j] == b[j]);
    }
}

TEST_CASE("gyroscope default shapes") {
  const auto split = gen_gyroscope(1);
  check_shape(split.train, 9000, 255, 16);
  check_shape(split.val, 1000, 255, 16);
}

TEST_CASE("gyroscope rotations have largest planar angle 0.3") {
  RandomStream rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix s = gyroscope_skew(rng, 16);
    const Matrix r = geometry::cayley_from_skew(s, 1.0);
    CHECK(numkit::gram_deviation(r) < 1e-12);
    CHECK(max_planar_angle(r) == doctest::Approx(0.3).epsilon(1e-9));
  }
}

TEST_CASE("zero skew gives a constant trajectory") {
  const Matrix r = geometry::cayley_from_skew(Matrix(6, 6), 1.0);
  RandomStream rng(2);
  const auto x0 = rng.unit_vector(6);
  const auto xs = trajectory(r, x0, 10);
  for (std::size_t t = 0; t <= 10; ++t)
    for (std::size_t j = 0; j < 6; ++j) CHECK(xs[t * 6 + j] == x0[j]);
}

TEST_CASE("gyroscope rejects odd dimensions") {
  CHECK_THROWS_AS(gen_gyroscope(1, 2, 2, 7, 4), InvalidInput);
}

TEST_CASE("stability inputs are an impulse and targets echo it") {
  const auto split = gen_stability(5);
  check_shape(split.train, 900, 127, 64);
  check_shape(split.val, 100, 127, 64);
  const Dataset& ds = split.train;
  for (std::size_t n = 0; n < ds.N; ++n) {
    CHECK(std::abs(vec_norm(ds.input(n, 0)) - 1.0) < 1e-12);
    for (std::size_t t = 1; t < ds.T; ++t)
      for (double x : ds.input(n, t)) REQUIRE(x == 0.0);
    const auto x0 = ds.input(n, 0);
    for (std::size_t t = 0; t < ds.T; ++t) {
      const auto y = ds.target(n, t);
      REQUIRE(std::equal(y.begin(), y.end(), x0.begin()));
    }
  }
}

TEST_CASE("reflection targets are exact negations") {
  for (std::size_t n : {10u, 25u, 50u, 100u, 200u, 500u}) {
    const auto split = gen_reflection(9, n);
    check_shape(split.train, n, 1, 64);
    check_shape(split.val, 500, 1, 64);
  }
  const auto split = gen_reflection(9, 50);
  for (const Dataset* ds : {&split.train, &split.val}) {
    for (std::size_t i = 0; i < ds->inputs.size(); ++i) CHECK(ds->inputs[i] + ds->targets[i] == 0.0);
    for (std::size_t n = 0; n < ds->N; ++n) {
      const double c = numkit::dot(ds->target(n, 0), ds->input(n, 0)) /
                       (vec_norm(ds->target(n, 0)) * vec_norm(ds->input(n, 0)));
      CHECK(c == doctest::Approx(-1.0).epsilon(1e-15));
    }
  }
}

TEST_CASE("validation set does not depend on the training size") {
  CHECK(gen_reflection(4, 10).val == gen_reflection(4, 500).val);
}

TEST_CASE("near-pi single rotation has one non-identity plane") {
  const Matrix r = near_pi_rotation(NearPiKind::single, 64);
  std::size_t unit_dirs = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    Matrix e(64, 1);
    e(i, 0) = 1.0;
    const Matrix re = r * e;
    if ((re - e).max_abs() == 0.0) ++unit_dirs;
  }
  CHECK(unit_dirs == 62);
  CHECK(max_planar_angle(r) == doctest::Approx(3.10).epsilon(1e-12));
  const auto split = gen_near_pi(NearPiKind::single, 1);
  check_shape(split.train, 800, 127, 64);
  check_shape(split.val, 200, 127, 64);
  CHECK(worst_ratio_error(split.val) <= 1e-10);
}

TEST_CASE("near-pi multi rotation is close to but not equal to -I") {
  const Matrix r = near_pi_rotation(NearPiKind::multi, 64);
  const Matrix plus = r + Matrix::identity(64);
  CHECK(plus.max_abs() < 2e-3);
  CHECK(plus.max_abs() > 0.0);
  CHECK(numkit::det(r) == doctest::Approx(1.0).epsilon(1e-9));
  Matrix product = Matrix::identity(64);
  for (std::size_t p = 0; p < 32; ++p) product = product * geometry::rotation_plane(64, 2 * p, 2 * p + 1, 3.14);
  CHECK((product - r).max_abs() < 1e-15);
  const auto split = gen_near_pi(NearPiKind::multi, 2, 20, 5);
  CHECK(worst_ratio_error(split.train) <= 1e-10);
}

TEST_CASE("train and val come from disjoint substreams") {
  const auto split = gen_stability(8, 50, 50, 8, 3);
  CHECK(split.train.inputs != split.val.inputs);
  const auto other = gen_stability(9, 50, 50, 8, 3);
  CHECK(split.train.inputs != other.train.inputs);
}

TEST_CASE("regeneration with the same seed gives identical bytes") {
  CHECK(serialize(gen_gyroscope(21, 6, 2, 8, 30).train) ==
        serialize(gen_gyroscope(21, 6, 2, 8, 30).train));
  CHECK(serialize(gen_near_pi(NearPiKind::multi, 21, 3, 1).val) ==
        serialize(gen_near_pi(NearPiKind::multi, 21, 3, 1).val));
}

TEST_CASE("serialized bytes are pinned for a fixed seed") {
  const std::string bytes = serialize(gen_reflection(1, 10, 4, 3).train);
  CHECK(bytes.substr(0, 6) == "EDGEO1");
  CHECK(bytes.size() == 6 + 2 + 4 + 4 + 8 + 8 + 4 + std::string("reflection.train").size() + 2 * 10 * 4 * 8);
}

TEST_CASE("dataset files round trip bit-exactly") {
  const auto ds = gen_gyroscope(13, 4, 1, 6, 9).train;
  const auto path = temp_path("ds.bin");
  write_dataset(ds, path);
  const Dataset back = read_dataset(path);
  CHECK(back == ds);
  CHECK(serialize(back) == binio::read_file(path));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt and short dataset files are rejected") {
  const std::string bytes = serialize(gen_reflection(2, 5, 4, 2).train);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize(bad), FormatError);
  std::string wrong_version = bytes;
  wrong_version[6] = 9;
  CHECK_THROWS_AS(deserialize(wrong_version), FormatError);
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() - 8)), TruncatedFile);
  std::string more = bytes;
  more[20] = 6;  // low byte of N: 5 -> 6 sequences
  CHECK_THROWS_AS(deserialize(more), TruncatedFile);
  CHECK_THROWS_AS(read_dataset(temp_path("missing_dataset.bin")), IoError);
}

TEST_CASE("gather builds batch tensors from sequence indices") {
  const auto ds = gen_gyroscope(4, 5, 1, 4, 3).train;
  const std::size_t idx[] = {3, 0};
  const Batch b = gather(ds, idx);
  CHECK(b.input.batch == 2);
  CHECK(b.input.seq == 3);
  CHECK(b.input.width == 4);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(b.input.row(0, t)(static_cast<Eigen::Index>(j)) == ds.input(3, t)[j]);
      CHECK(b.target.row(1, t)(static_cast<Eigen::Index>(j)) == ds.target(0, t)[j]);
    }
  const std::size_t bad[] = {5};
  CHECK_THROWS_AS(gather(ds, bad), IndexError);
}
