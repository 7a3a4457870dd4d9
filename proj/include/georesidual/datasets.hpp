#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "georesidual/numkit.hpp"
#include "georesidual/tensor.hpp"

namespace georesidual::datasets {

/// N sequences of T steps of d-vectors. `inputs` and `targets` are row-major
/// N x T x d.
struct Dataset {
  std::string name;
  std::size_t d = 0;
  std::size_t T = 0;
  std::size_t N = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  std::uint64_t seed = 0;

  std::span<const double> input(std::size_t n, std::size_t t) const {
    return std::span<const double>(inputs).subspan((n * T + t) * d, d);
  }
  std::span<const double> target(std::size_t n, std::size_t t) const {
    return std::span<const double>(targets).subspan((n * T + t) * d, d);
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Split {
  Dataset train;
  Dataset val;
};

/// Skew generator for one gyroscope sequence: Gaussian entries rescaled so the
/// largest planar angle of its Cayley transform is exactly `max_angle`.
numkit::Matrix gyroscope_skew(numkit::RandomStream& rng, std::size_t d, double max_angle = 0.3);

/// Largest planar rotation angle of an orthogonal matrix.
double max_planar_angle(const numkit::Matrix& r);

/// x_0 .. x_T under x_{t+1} = R x_t, flattened (T + 1) x d.
std::vector<double> trajectory(const numkit::Matrix& r, std::span<const double> x0, std::size_t T);

/// Throws InvalidInput for odd d.
Split gen_gyroscope(std::uint64_t seed, std::size_t n_train = 9000, std::size_t n_val = 1000,
                    std::size_t d = 16, std::size_t T = 255);
Split gen_stability(std::uint64_t seed, std::size_t n_train = 900, std::size_t n_val = 100,
                    std::size_t d = 64, std::size_t T = 127);
/// Validation is always 500 sequences.
Split gen_reflection(std::uint64_t seed, std::size_t n_train, std::size_t d = 64,
                     std::size_t n_val = 500);

enum class NearPiKind { single, multi };
/// The fixed rotation used by gen_near_pi.
numkit::Matrix near_pi_rotation(NearPiKind kind, std::size_t d);
Split gen_near_pi(NearPiKind kind, std::uint64_t seed, std::size_t n_train = 800,
                  std::size_t n_val = 200, std::size_t d = 64, std::size_t T = 127);

/// Serialized file bytes (see docs/FORMATS.md).
std::string serialize(const Dataset& ds);
Dataset deserialize(std::string_view bytes);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
/// IoError, FormatError (magic/version), TruncatedFile.
Dataset read_dataset(const std::filesystem::path& path);

struct Batch {
  ActivationTensor input;
  ActivationTensor target;
};
/// Gathers sequences `idx` into activation tensors. Throws IndexError.
Batch gather(const Dataset& ds, std::span<const std::size_t> idx);

}  // namespace georesidual::datasets
