#pragma once

#include <cstddef>

#include <Eigen/Dense>

#include "georesidual/errors.hpp"

namespace georesidual {

/// Row-major dense storage used for every activation and parameter.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// batch x sequence x width activations. Row `b * seq + t` of `data` holds the
/// width-vector at batch element b, position t.
struct ActivationTensor {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t width = 0;
  Mat data;

  ActivationTensor() = default;
  ActivationTensor(std::size_t b, std::size_t t, std::size_t w)
      : batch(b), seq(t), width(w), data(Mat::Zero(static_cast<Eigen::Index>(b * t),
                                                    static_cast<Eigen::Index>(w))) {}
  ActivationTensor(std::size_t b, std::size_t t, Mat values)
      : batch(b), seq(t), width(static_cast<std::size_t>(values.cols())), data(std::move(values)) {
    if (static_cast<std::size_t>(data.rows()) != b * t) {
      throw ShapeMismatch("activation rows != batch * seq");
    }
  }

  bool same_shape(const ActivationTensor& o) const noexcept {
    return batch == o.batch && seq == o.seq && width == o.width;
  }
  auto row(std::size_t b, std::size_t t) { return data.row(static_cast<Eigen::Index>(b * seq + t)); }
  auto row(std::size_t b, std::size_t t) const {
    return data.row(static_cast<Eigen::Index>(b * seq + t));
  }
  /// All positions of batch element b as a seq x width block.
  auto slab(std::size_t b) {
    return data.middleRows(static_cast<Eigen::Index>(b * seq), static_cast<Eigen::Index>(seq));
  }
  auto slab(std::size_t b) const {
    return data.middleRows(static_cast<Eigen::Index>(b * seq), static_cast<Eigen::Index>(seq));
  }
};

}  // namespace georesidual
