#include "dastab/lqr.hpp"

#include <cmath>
#include <stdexcept>

#include "dastab/errors.hpp"

namespace dastab {

namespace {

void check_discount(double gamma, const char* who) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument(std::string(who) +
                                ": discount must lie in (0, 1]");
  }
}

void check_gain(const LinearSystem& sys, const MatrixXd& gain) {
  if (gain.rows() != sys.input_dim() || gain.cols() != sys.state_dim()) {
    throw std::invalid_argument("gain must be input_dim x state_dim");
  }
  if (!gain.allFinite()) {
    throw std::invalid_argument("gain has non-finite entries");
  }
}

}  // namespace

LinearSystem damp(const LinearSystem& sys, double gamma) {
  check_discount(gamma, "damp");
  const double s = std::sqrt(gamma);
  return LinearSystem{s * sys.a, s * sys.b};
}

MatrixXd closed_loop(const LinearSystem& sys, const MatrixXd& gain,
                     double gamma) {
  check_gain(sys, gain);
  return std::sqrt(gamma) * (sys.a + sys.b * gain);
}

MatrixXd value_matrix(const LinearSystem& sys, const CostSpec& cost,
                      const MatrixXd& gain, double gamma) {
  check_discount(gamma, "value_matrix");
  const MatrixXd stage = cost.q + gain.transpose() * cost.r * gain;
  return dlyap(closed_loop(sys, gain, gamma), stage);
}

double lqr_cost(const LinearSystem& sys, const CostSpec& cost,
                const MatrixXd& gain, double gamma) {
  return value_matrix(sys, cost, gain, gamma).trace();
}

MatrixXd state_covariance(const LinearSystem& sys, const MatrixXd& gain,
                          double gamma) {
  check_discount(gamma, "state_covariance");
  const MatrixXd a_cl = closed_loop(sys, gain, gamma);
  return dlyap(a_cl.transpose(),
               MatrixXd::Identity(sys.state_dim(), sys.state_dim()));
}

CostAndGradient lqr_cost_and_grad(const LinearSystem& sys,
                                  const CostSpec& cost, const MatrixXd& gain,
                                  double gamma) {
  const MatrixXd p = value_matrix(sys, cost, gain, gamma);
  const MatrixXd sigma = state_covariance(sys, gain, gamma);
  const MatrixXd a_cl = sys.a + sys.b * gain;
  MatrixXd grad =
      2.0 * (cost.r * gain + gamma * sys.b.transpose() * p * a_cl) * sigma;
  return CostAndGradient{p.trace(), std::move(grad)};
}

MatrixXd lqr_grad(const LinearSystem& sys, const CostSpec& cost,
                  const MatrixXd& gain, double gamma) {
  return lqr_cost_and_grad(sys, cost, gain, gamma).gradient;
}

RewardShapingWitness reward_shaping_counterexample(double gamma,
                                                   const CostSpec& cost) {
  if (!(gamma > 0.0 && gamma < 0.25)) {
    throw std::invalid_argument(
        "reward_shaping_counterexample: need sqrt(g) diag(0, 2) stable, i.e. "
        "0 < g < 1/4");
  }
  cost.validate(2, 1);
  LinearSystem sys;
  sys.a = MatrixXd::Zero(2, 2);
  sys.a(1, 1) = 2.0;
  for (double beta = 0.5; beta >= 1e-12; beta *= 0.5) {
    sys.b = MatrixXd(2, 1);
    sys.b << 1.0, beta;
    const DareSolution opt = solve_dare(sys, cost, gamma);
    const double rho = spectral_radius(sys.a + sys.b * opt.gain);
    if (rho > 1.0) {
      const double rho_damped =
          spectral_radius(closed_loop(sys, opt.gain, gamma));
      return RewardShapingWitness{beta, sys, opt.gain, rho_damped, rho};
    }
  }
  throw NoWitnessFound(
      "reward_shaping_counterexample: no destabilizing optimal gain found "
      "down to beta = 1e-12");
}

}  // namespace dastab
