#pragma once

#include <Eigen/Dense>

namespace dastab {

/// Discrete-time dynamics x_{t+1} = A x_t + B u_t.
struct LinearSystem {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;

  Eigen::Index state_dim() const { return a.rows(); }
  Eigen::Index input_dim() const { return b.cols(); }

  /// Throws std::invalid_argument on inconsistent shapes or non-finite
  /// entries.
  void validate() const;
};

/// Quadratic stage cost x^T Q x + u^T R u.
struct CostSpec {
  Eigen::MatrixXd q;
  Eigen::MatrixXd r;

  static CostSpec identity(Eigen::Index state_dim, Eigen::Index input_dim);
  static CostSpec scaled_identity(Eigen::Index state_dim,
                                  Eigen::Index input_dim, double scale);

  /// Throws std::invalid_argument unless Q and R are symmetric positive
  /// definite with dimensions matching the given system.
  void validate(Eigen::Index state_dim, Eigen::Index input_dim) const;

  /// min(lambda_min(Q), lambda_min(R)).
  double min_eigenvalue() const;
};

}  // namespace dastab
