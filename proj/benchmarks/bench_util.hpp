#pragma once

#include "s2v/rng.hpp"

#include <Eigen/Core>

namespace s2v::bench {

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal01(rng);
  return m;
}

}  // namespace s2v::bench
