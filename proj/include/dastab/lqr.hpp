#pragma once

// Closed-form discounted LQR quantities. The initial state is taken to have
// identity covariance, so every cost below is a trace of a Lyapunov solution.

#include <Eigen/Dense>

#include "dastab/linear_system.hpp"
#include "dastab/matops.hpp"

namespace dastab {

/// (sqrt(g) A, sqrt(g) B). Discounting by g and damping by sqrt(g) give the
/// same LQR cost for every gain with finite cost.
LinearSystem damp(const LinearSystem& sys, double gamma);

/// sqrt(g) (A + B K).
MatrixXd closed_loop(const LinearSystem& sys, const MatrixXd& gain,
                     double gamma = 1.0);

/// P_{K,g} = dlyap(sqrt(g)(A + BK), Q + K^T R K). Throws Unstable when the
/// damped closed loop is not stable (infinite cost).
MatrixXd value_matrix(const LinearSystem& sys, const CostSpec& cost,
                      const MatrixXd& gain, double gamma);

/// tr(P_{K,g}).
double lqr_cost(const LinearSystem& sys, const CostSpec& cost,
                const MatrixXd& gain, double gamma);

/// sum_t g^t A_cl^t (A_cl^t)^T for an identity initial covariance.
MatrixXd state_covariance(const LinearSystem& sys, const MatrixXd& gain,
                          double gamma);

/// 2 (R K + g B^T P_{K,g} (A + BK)) Sigma_K.
MatrixXd lqr_grad(const LinearSystem& sys, const CostSpec& cost,
                  const MatrixXd& gain, double gamma);

/// Cost and gradient from one pair of Lyapunov solves.
struct CostAndGradient {
  double cost;
  MatrixXd gradient;
};
CostAndGradient lqr_cost_and_grad(const LinearSystem& sys,
                                  const CostSpec& cost, const MatrixXd& gain,
                                  double gamma);

struct RewardShapingWitness {
  double beta;
  LinearSystem system;          // A = diag(0, 2), B = [1; beta]
  MatrixXd gain;                // optimal gain for the discounted problem
  double rho_damped;            // rho(sqrt(g)(A + B K))
  double rho_undamped;          // rho(A + B K), > 1
};

/// Searches beta over 0.5, 0.25, ... for an input matrix B = [1; beta] whose
/// discounted-optimal gain destabilizes A = diag(0, 2). Requires g < 1/4.
/// Throws NoWitnessFound if beta falls below 1e-12 without a witness.
RewardShapingWitness reward_shaping_counterexample(double gamma,
                                                   const CostSpec& cost);

}  // namespace dastab
