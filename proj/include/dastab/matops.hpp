#pragma once

#include <Eigen/Dense>

#include "dastab/linear_system.hpp"

namespace dastab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Largest eigenvalue magnitude. Throws std::invalid_argument for non-square
/// input.
double spectral_radius(const Eigen::Ref<const MatrixXd>& m);

/// Largest singular value.
double op_norm(const Eigen::Ref<const MatrixXd>& m);

bool is_stable(const Eigen::Ref<const MatrixXd>& m, double margin = 0.0);

/// Smallest eigenvalue of the symmetric part of `m`.
double min_sym_eigenvalue(const Eigen::Ref<const MatrixXd>& m);

/// Largest eigenvalue of the symmetric part of `m`.
double max_sym_eigenvalue(const Eigen::Ref<const MatrixXd>& m);

MatrixXd symmetrize(const Eigen::Ref<const MatrixXd>& m);

struct DlyapOptions {
  /// The solve is refused unless spectral_radius(a_cl) < 1 - stability_margin.
  double stability_margin = 1e-9;
};

/// Solves X = sigma + a_cl^T X a_cl for stable a_cl by repeated squaring:
/// after k rounds X holds the first 2^k terms of sum_j (a_cl^j)^T sigma a_cl^j.
///
/// Throws Unstable when a_cl is not stable within the configured margin.
MatrixXd dlyap(const Eigen::Ref<const MatrixXd>& a_cl,
               const Eigen::Ref<const MatrixXd>& sigma,
               const DlyapOptions& options = {});

/// Frobenius norm of X - sigma - a_cl^T X a_cl.
double dlyap_residual(const Eigen::Ref<const MatrixXd>& a_cl,
                      const Eigen::Ref<const MatrixXd>& sigma,
                      const Eigen::Ref<const MatrixXd>& x);

struct DareSolution {
  MatrixXd value;  // P*
  MatrixXd gain;   // K*, so that u = K* x
  long iterations = 0;
};

struct DareOptions {
  long max_iterations = 1'000'000;
  double relative_tolerance = 1e-12;
  /// Value iteration is declared divergent once ||P||_F exceeds this.
  double divergence_bound = 1e14;
};

/// Optimal gain and value matrix of the gamma-discounted LQR problem, found
/// by value iteration on the discounted Riccati recursion starting at P = Q.
/// K* = -(R + g B^T P B)^{-1} g B^T P A.
///
/// Throws NotStabilizable when the recursion diverges or fails to settle
/// within the iteration cap.
DareSolution solve_dare(const LinearSystem& sys, const CostSpec& cost,
                        double gamma, const DareOptions& options = {});

}  // namespace dastab
