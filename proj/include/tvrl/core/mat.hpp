#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace tvrl {

/// Row-major dense matrix; the single numeric container used throughout.
/// T is float for training runs and double for oracles and gradient checks.
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
Mat<T> cast_mat(const Mat<float>& m) {
  if constexpr (std::is_same_v<T, float>) return m;
  return m.template cast<T>();
}

}  // namespace tvrl
