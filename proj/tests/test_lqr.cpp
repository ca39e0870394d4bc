#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "dastab/errors.hpp"
#include "dastab/lqr.hpp"
#include "dastab/matops.hpp"
#include "test_util.hpp"

namespace dastab {
namespace {

using testing::gaussian;
using testing::spd;
using testing::stabilized_instance;
using testing::uniform;
using testing::uniform_int;
using testing::with_radius;

MatrixXd fd_gradient(const LinearSystem& sys, const CostSpec& cost, const MatrixXd& k,
                     double gamma, double h) {
  MatrixXd g(k.rows(), k.cols());
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.cols(); ++j) {
      MatrixXd kp = k, km = k;
      kp(i, j) += h;
      km(i, j) -= h;
      g(i, j) = (lqr_cost(sys, cost, kp, gamma) - lqr_cost(sys, cost, km, gamma)) / (2 * h);
    }
  }
  return g;
}

TEST(Damp, Examples) {
  Rng rng(1);
  const LinearSystem sys{gaussian(rng, 3, 3), gaussian(rng, 3, 2)};
  const LinearSystem same = damp(sys, 1.0);
  EXPECT_EQ(same.a, sys.a);
  EXPECT_EQ(same.b, sys.b);
  const LinearSystem half = damp(LinearSystem{MatrixXd::Identity(2, 2), MatrixXd::Ones(2, 1)}, 0.25);
  EXPECT_TRUE(half.a.isApprox(0.5 * MatrixXd::Identity(2, 2)));
  EXPECT_THROW(damp(sys, 0.0), std::invalid_argument);
  EXPECT_THROW(damp(sys, 1.5), std::invalid_argument);
}

// Discounting by g equals damping the dynamics by sqrt(g).
TEST(Damp, DiscountEquivalence) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto dx = uniform_int(rng, 1, 4), du = uniform_int(rng, 1, 4);
    const auto in = stabilized_instance(rng, dx, du);
    const double discounted = lqr_cost(in.sys, in.cost, in.gain, in.gamma);
    const double damped = lqr_cost(damp(in.sys, in.gamma), in.cost, in.gain, 1.0);
    ASSERT_LE(std::abs(discounted - damped), 1e-8 * discounted) << "instance " << i;
  }
}

TEST(ValueMatrix, Examples) {
  Rng rng(3);
  const MatrixXd a = with_radius(rng, 3, 0.8);
  const LinearSystem sys{a, gaussian(rng, 3, 1)};
  const CostSpec cost{spd(rng, 3), spd(rng, 1)};
  EXPECT_TRUE(value_matrix(sys, cost, MatrixXd::Zero(1, 3), 1.0).isApprox(dlyap(a, cost.q), 1e-14));

  const LinearSystem scalar{MatrixXd::Constant(1, 1, 0.5), MatrixXd::Ones(1, 1)};
  EXPECT_NEAR(value_matrix(scalar, CostSpec::identity(1, 1), MatrixXd::Zero(1, 1), 1.0)(0, 0),
              4.0 / 3.0, 1e-14);

  const LinearSystem unstable{MatrixXd::Constant(1, 1, 2.0), MatrixXd::Zero(1, 1)};
  EXPECT_THROW(value_matrix(unstable, CostSpec::identity(1, 1), MatrixXd::Constant(1, 1, 7.0), 1.0),
               Unstable);
}

TEST(LqrCost, Examples) {
  Rng rng(4);
  const CostSpec cost{spd(rng, 3), spd(rng, 2)};
  const LinearSystem zero{MatrixXd::Zero(3, 3), gaussian(rng, 3, 2)};
  EXPECT_NEAR(lqr_cost(zero, cost, MatrixXd::Zero(2, 3), 1.0), cost.q.trace(), 1e-14);
  for (int i = 0; i < 50; ++i) {
    const auto in = stabilized_instance(rng, 3, 2);
    EXPECT_GE(lqr_cost(in.sys, in.cost, in.gain, in.gamma), in.cost.q.trace());
    EXPECT_GE(in.cost.q.trace(), 3.0);
  }
}

TEST(LqrCost, NondecreasingInDiscount) {
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    const auto dx = uniform_int(rng, 1, 4), du = uniform_int(rng, 1, dx);
    // Stabilizing at g = 1 keeps every damped loop stable.
    auto in = stabilized_instance(rng, dx, du);
    in.sys.a = with_radius(rng, dx, uniform(rng, 0.1, 0.9)) - in.sys.b * in.gain;
    double prev = 0.0;
    for (int k = 1; k <= 50; ++k) {
      const double c = lqr_cost(in.sys, in.cost, in.gain, k / 50.0);
      ASSERT_GE(c, prev * (1.0 - 1e-12));
      prev = c;
    }
  }
}

TEST(StateCovariance, Examples) {
  const LinearSystem zero{MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 1)};
  EXPECT_TRUE(state_covariance(zero, MatrixXd::Zero(1, 2), 1.0).isApprox(MatrixXd::Identity(2, 2)));
  const LinearSystem scalar{MatrixXd::Constant(1, 1, 0.5), MatrixXd::Ones(1, 1)};
  EXPECT_NEAR(state_covariance(scalar, MatrixXd::Zero(1, 1), 1.0)(0, 0), 4.0 / 3.0, 1e-14);
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    const auto in = stabilized_instance(rng, 4, 2);
    EXPECT_GE(state_covariance(in.sys, in.gain, in.gamma).trace(), 4.0 - 1e-12);
  }
}

TEST(LqrGrad, ZeroAtOptimum) {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const auto dx = uniform_int(rng, 1, 4), du = uniform_int(rng, 1, dx);
    const LinearSystem sys{with_radius(rng, dx, uniform(rng, 0.5, 1.8)), gaussian(rng, dx, du)};
    const CostSpec cost = CostSpec::identity(dx, du);
    const double gamma = uniform(rng, 0.2, 1.0);
    const DareSolution sol = solve_dare(sys, cost, gamma);
    EXPECT_LE(lqr_grad(sys, cost, sol.gain, gamma).norm(), 1e-7);
  }
  const LinearSystem zero{MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2)};
  EXPECT_LE(lqr_grad(zero, CostSpec::identity(2, 2), MatrixXd::Zero(2, 2), 1.0).norm(), 1e-15);
}

TEST(LqrGrad, MatchesFiniteDifferences) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto dx = uniform_int(rng, 1, 4), du = uniform_int(rng, 1, 3);
    const auto in = stabilized_instance(rng, dx, du, 0.8);
    const MatrixXd g = lqr_grad(in.sys, in.cost, in.gain, in.gamma);
    const MatrixXd fd = fd_gradient(in.sys, in.cost, in.gain, in.gamma, 1e-5);
    ASSERT_LE((g - fd).norm(), 1e-5 * g.norm()) << "instance " << i;
  }
}

TEST(LqrCostAndGrad, AgreesWithSeparateCalls) {
  Rng rng(9);
  const auto in = stabilized_instance(rng, 3, 2);
  const CostAndGradient cg = lqr_cost_and_grad(in.sys, in.cost, in.gain, in.gamma);
  EXPECT_DOUBLE_EQ(cg.cost, lqr_cost(in.sys, in.cost, in.gain, in.gamma));
  EXPECT_EQ(cg.gradient, lqr_grad(in.sys, in.cost, in.gain, in.gamma));
}

// For K' within 2 tr(P*) at g, raising g to (1/(8||P||^4) + 1)^2 g keeps the
// loop stable and at most doubles the cost.
TEST(LqrCost, DiscountStepMargin) {
  Rng rng(10);
  int checked = 0;
  while (checked < 100) {
    const auto dx = uniform_int(rng, 1, 4), du = uniform_int(rng, 1, dx);
    const LinearSystem sys{with_radius(rng, dx, uniform(rng, 1.0, 2.0)), gaussian(rng, dx, du)};
    const CostSpec cost = CostSpec::identity(dx, du);
    const double gamma = uniform(rng, 0.1, 0.9) / std::pow(spectral_radius(sys.a), 2);
    const DareSolution sol = solve_dare(sys, cost, gamma);
    const double opt = sol.value.trace();
    MatrixXd k = sol.gain + gaussian(rng, du, dx) * 0.3;
    for (int s = 0; s < 60; ++s) {
      if (spectral_radius(closed_loop(sys, k, gamma)) < 1.0 &&
          lqr_cost(sys, cost, k, gamma) <= 2.0 * opt) {
        break;
      }
      k = 0.5 * (k + sol.gain);
    }
    const MatrixXd p = value_matrix(sys, cost, k, gamma);
    const double next = std::min(1.0, std::pow(1.0 / (8.0 * std::pow(op_norm(p), 4)) + 1.0, 2) * gamma);
    ASSERT_LT(spectral_radius(closed_loop(sys, k, next)), 1.0);
    ASSERT_LE(lqr_cost(sys, cost, k, next), 2.0 * p.trace());
    ++checked;
  }
}

TEST(Counterexample, WitnessAtPointTwoTwoFive) {
  const RewardShapingWitness w = reward_shaping_counterexample(0.225, CostSpec::identity(2, 1));
  EXPECT_GT(w.beta, 0.0);
  EXPECT_LT(w.rho_damped, 1.0);
  EXPECT_GT(w.rho_undamped, 1.0);
  EXPECT_NEAR(w.rho_damped, spectral_radius(closed_loop(w.system, w.gain, 0.225)), 1e-14);
  EXPECT_NEAR(w.rho_undamped, spectral_radius(w.system.a + w.system.b * w.gain), 1e-14);
  // A gain this small cannot stabilize the unstable mode.
  EXPECT_LT(w.gain.cwiseAbs().maxCoeff(), 1.0 / (2.0 * w.beta));
  EXPECT_EQ(w.system.b(0, 0), 1.0);
  EXPECT_EQ(w.system.b(1, 0), w.beta);
}

TEST(Counterexample, RejectsLargeDiscount) {
  EXPECT_THROW(reward_shaping_counterexample(0.25, CostSpec::identity(2, 1)), std::invalid_argument);
}

}  // namespace
}  // namespace dastab
