#pragma once

#include <Eigen/Core>

namespace cfgloco {

/// Row-major dense matrix. Action trajectories are (T x action_dim); batches of
/// trajectories are stacked along rows.
template <typename S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mat = MatT<double>;
using Vec = Eigen::VectorXd;

/// T x action_dim matrix; the object being diffused.
using ActionTrajectory = Mat;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace cfgloco
