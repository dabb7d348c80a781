#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace neomlp {

// All dense state is row-major so that a (points * tokens) x D matrix keeps
// every token contiguous.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <class S>
using StridedMap = Eigen::Map<Mat<S>, 0, Eigen::OuterStride<>>;

template <class S>
using ConstStridedMap = Eigen::Map<const Mat<S>, 0, Eigen::OuterStride<>>;

using Index = Eigen::Index;

template <class To, class From>
Mat<To> cast_mat(const Mat<From>& m) {
  return m.template cast<To>();
}

}  // namespace neomlp
