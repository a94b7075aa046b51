// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include "vmolora/matrix.hpp"

namespace vmolora::detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap view(const Matrix& m) { return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }
inline MutMap view(Matrix& m) { return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }

}  // namespace vmolora::detail
