#include "dastab/linear_system.hpp"

#include <stdexcept>

#include "dastab/matops.hpp"

namespace dastab {

void LinearSystem::validate() const {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("LinearSystem: A must be square");
  }
  if (b.rows() != a.rows()) {
    throw std::invalid_argument("LinearSystem: B must have as many rows as A");
  }
  if (a.rows() == 0 || b.cols() == 0) {
    throw std::invalid_argument("LinearSystem: empty state or input");
  }
  if (!a.allFinite() || !b.allFinite()) {
    throw std::invalid_argument("LinearSystem: non-finite entries");
  }
}

CostSpec CostSpec::identity(Eigen::Index state_dim, Eigen::Index input_dim) {
  return scaled_identity(state_dim, input_dim, 1.0);
}

CostSpec CostSpec::scaled_identity(Eigen::Index state_dim,
                                   Eigen::Index input_dim, double scale) {
  return CostSpec{scale * Eigen::MatrixXd::Identity(state_dim, state_dim),
                  scale * Eigen::MatrixXd::Identity(input_dim, input_dim)};
}

void CostSpec::validate(Eigen::Index state_dim, Eigen::Index input_dim) const {
  if (q.rows() != state_dim || q.cols() != state_dim) {
    throw std::invalid_argument("CostSpec: Q has the wrong shape");
  }
  if (r.rows() != input_dim || r.cols() != input_dim) {
    throw std::invalid_argument("CostSpec: R has the wrong shape");
  }
  for (const Eigen::MatrixXd* m : {&q, &r}) {
    if (!m->allFinite() || (*m - m->transpose()).norm() > 1e-10 * m->norm()) {
      throw std::invalid_argument("CostSpec: cost matrices must be symmetric");
    }
    if (m->llt().info() != Eigen::Success) {
      throw std::invalid_argument(
          "CostSpec: cost matrices must be positive definite");
    }
  }
}

double CostSpec::min_eigenvalue() const {
  return std::min(min_sym_eigenvalue(q), min_sym_eigenvalue(r));
}

}  // namespace dastab
