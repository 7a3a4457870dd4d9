#include "georesidual/datasets.hpp"

#include <cmath>
#include <complex>

#include <Eigen/Eigenvalues>

#include "georesidual/binio.hpp"
#include "georesidual/errors.hpp"
#include "georesidual/geometry.hpp"

namespace georesidual::datasets {

using numkit::Matrix;
using numkit::RandomStream;

namespace {

constexpr char kMagic[] = "EDGEO1";
constexpr std::uint16_t kVersion = 1;

Eigen::Map<const Mat> view(const Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}

Dataset empty_dataset(std::string name, std::size_t n, std::size_t T, std::size_t d,
                      std::uint64_t seed) {
  Dataset ds;
  ds.name = std::move(name);
  ds.d = d;
  ds.T = T;
  ds.N = n;
  ds.inputs.assign(n * T * d, 0.0);
  ds.targets.assign(n * T * d, 0.0);
  ds.seed = seed;
  return ds;
}

// Writes x_0..x_{T-1} as inputs and x_1..x_T as targets for sequence n.
void store_trajectory(Dataset& ds, std::size_t n, std::span<const double> xs) {
  const std::size_t stride = ds.T * ds.d;
  std::copy_n(xs.begin(), stride, ds.inputs.begin() + static_cast<std::ptrdiff_t>(n * stride));
  std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(ds.d), stride,
              ds.targets.begin() + static_cast<std::ptrdiff_t>(n * stride));
}

void require_even(std::size_t d, const char* what) {
  if (d == 0 || d % 2 != 0) {
    throw InvalidInput(std::string(what) + " requires an even positive dimension, got " +
                       std::to_string(d));
  }
}

Dataset gyroscope_split(const std::string& name, RandomStream rng, std::size_t n, std::size_t d,
                        std::size_t T, std::uint64_t seed) {
  Dataset ds = empty_dataset(name, n, T, d, seed);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix r = geometry::cayley_from_skew(gyroscope_skew(rng, d), 1.0);
    const auto x0 = rng.unit_vector(d);
    store_trajectory(ds, i, trajectory(r, x0, T));
  }
  return ds;
}

Dataset fixed_rotation_split(const std::string& name, const Matrix& r, RandomStream rng,
                             std::size_t n, std::size_t d, std::size_t T, std::uint64_t seed) {
  Dataset ds = empty_dataset(name, n, T, d, seed);
  for (std::size_t i = 0; i < n; ++i) store_trajectory(ds, i, trajectory(r, rng.unit_vector(d), T));
  return ds;
}

Dataset stability_split(const std::string& name, RandomStream rng, std::size_t n, std::size_t d,
                        std::size_t T, std::uint64_t seed) {
  Dataset ds = empty_dataset(name, n, T, d, seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x0 = rng.unit_vector(d);
    std::copy(x0.begin(), x0.end(), ds.inputs.begin() + static_cast<std::ptrdiff_t>(i * T * d));
    for (std::size_t t = 0; t < T; ++t) {
      std::copy(x0.begin(), x0.end(),
                ds.targets.begin() + static_cast<std::ptrdiff_t>((i * T + t) * d));
    }
  }
  return ds;
}

Dataset reflection_split(const std::string& name, RandomStream rng, std::size_t n, std::size_t d,
                         std::uint64_t seed) {
  Dataset ds = empty_dataset(name, n, 1, d, seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = rng.unit_vector(d);
    for (std::size_t j = 0; j < d; ++j) {
      ds.inputs[i * d + j] = x[j];
      ds.targets[i * d + j] = -x[j];
    }
  }
  return ds;
}

}  // namespace

Matrix gyroscope_skew(RandomStream& rng, std::size_t d, double max_angle) {
  Matrix s(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double v = rng.normal();
      s(i, j) = v;
      s(j, i) = -v;
    }
  }
  // Cayley with beta = 1 turns singular value sigma into the angle 2 atan(sigma / 2).
  const Mat sts = view(s).transpose() * view(s);
  Eigen::SelfAdjointEigenSolver<Mat> eig(sts, Eigen::EigenvaluesOnly);
  const double sigma = std::sqrt(std::max(eig.eigenvalues().maxCoeff(), 0.0));
  if (sigma == 0.0) return s;
  s *= 2.0 * std::tan(max_angle / 2.0) / sigma;
  return s;
}

double max_planar_angle(const Matrix& r) {
  if (!r.square()) throw ShapeMismatch("max_planar_angle requires a square matrix");
  Eigen::EigenSolver<Mat> eig(Mat(view(r)), false);
  double out = 0.0;
  for (const auto& ev : eig.eigenvalues()) out = std::max(out, std::abs(std::arg(ev)));
  return out;
}

std::vector<double> trajectory(const Matrix& r, std::span<const double> x0, std::size_t T) {
  const std::size_t d = x0.size();
  if (r.rows() != d || r.cols() != d) throw ShapeMismatch("rotation and x0 dimensions differ");
  std::vector<double> xs((T + 1) * d);
  std::copy(x0.begin(), x0.end(), xs.begin());
  for (std::size_t t = 0; t < T; ++t) {
    const auto prev = std::span<const double>(xs).subspan(t * d, d);
    const auto next = r * prev;
    std::copy(next.begin(), next.end(), xs.begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
  }
  return xs;
}

Split gen_gyroscope(std::uint64_t seed, std::size_t n_train, std::size_t n_val, std::size_t d,
                    std::size_t T) {
  require_even(d, "gen_gyroscope");
  const RandomStream root(seed);
  return {gyroscope_split("gyroscope.train", root.substream("train"), n_train, d, T, seed),
          gyroscope_split("gyroscope.val", root.substream("val"), n_val, d, T, seed)};
}

Split gen_stability(std::uint64_t seed, std::size_t n_train, std::size_t n_val, std::size_t d,
                    std::size_t T) {
  const RandomStream root(seed);
  return {stability_split("stability.train", root.substream("train"), n_train, d, T, seed),
          stability_split("stability.val", root.substream("val"), n_val, d, T, seed)};
}

Split gen_reflection(std::uint64_t seed, std::size_t n_train, std::size_t d, std::size_t n_val) {
  const RandomStream root(seed);
  return {reflection_split("reflection.train", root.substream("train"), n_train, d, seed),
          reflection_split("reflection.val", root.substream("val"), n_val, d, seed)};
}

Matrix near_pi_rotation(NearPiKind kind, std::size_t d) {
  require_even(d, "near_pi_rotation");
  if (kind == NearPiKind::single) return geometry::rotation_plane(d, 0, 1, 3.10);
  Matrix r = Matrix::identity(d);
  const double c = std::cos(3.14), s = std::sin(3.14);
  // Planes are disjoint, so the product is block diagonal.
  for (std::size_t p = 0; p < d / 2; ++p) {
    r(2 * p, 2 * p) = c;
    r(2 * p + 1, 2 * p + 1) = c;
    r(2 * p, 2 * p + 1) = s;
    r(2 * p + 1, 2 * p) = -s;
  }
  return r;
}

Split gen_near_pi(NearPiKind kind, std::uint64_t seed, std::size_t n_train, std::size_t n_val,
                  std::size_t d, std::size_t T) {
  const Matrix r = near_pi_rotation(kind, d);
  const std::string base = kind == NearPiKind::single ? "near_pi_single" : "near_pi_multi";
  const RandomStream root(seed);
  return {fixed_rotation_split(base + ".train", r, root.substream("train"), n_train, d, T, seed),
          fixed_rotation_split(base + ".val", r, root.substream("val"), n_val, d, T, seed)};
}

std::string serialize(const Dataset& ds) {
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 6));
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(ds.d));
  w.u32(static_cast<std::uint32_t>(ds.T));
  w.u64(ds.N);
  w.u64(ds.seed);
  w.str(ds.name);
  w.f64s(ds.inputs);
  w.f64s(ds.targets);
  return w.buffer();
}

Dataset deserialize(std::string_view bytes) {
  binio::Reader r(bytes);
  if (r.remaining() < 6 || r.bytes(6) != std::string_view(kMagic, 6)) {
    throw FormatError("not a dataset file (bad magic)");
  }
  const std::uint16_t version = r.u16();
  if (version != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  ds.d = r.u32();
  ds.T = r.u32();
  ds.N = r.u64();
  ds.seed = r.u64();
  ds.name = r.str();
  const std::size_t count = ds.N * ds.T * ds.d;
  if (ds.d != 0 && ds.T != 0 && count / ds.d / ds.T != ds.N) throw FormatError("header overflow");
  if (count > r.remaining() / 8) {
    throw TruncatedFile("header declares " + std::to_string(ds.N) + " sequences, payload is short");
  }
  ds.inputs.resize(count);
  r.f64s(ds.inputs);
  ds.targets.resize(count);
  r.f64s(ds.targets);
  if (r.remaining() != 0) throw FormatError("trailing bytes after dataset payload");
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  binio::write_file_atomic(path, serialize(ds));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return deserialize(binio::read_file(path));
}

Batch gather(const Dataset& ds, std::span<const std::size_t> idx) {
  Batch b{ActivationTensor(idx.size(), ds.T, ds.d), ActivationTensor(idx.size(), ds.T, ds.d)};
  const auto stride = static_cast<Eigen::Index>(ds.T);
  const auto width = static_cast<Eigen::Index>(ds.d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= ds.N) {
      throw IndexError("sequence " + std::to_string(idx[i]) + " out of range " +
                       std::to_string(ds.N));
    }
    const std::size_t off = idx[i] * ds.T * ds.d;
    b.input.slab(i) = Eigen::Map<const Mat>(ds.inputs.data() + off, stride, width);
    b.target.slab(i) = Eigen::Map<const Mat>(ds.targets.data() + off, stride, width);
  }
  return b;
}

}  // namespace georesidual::datasets
