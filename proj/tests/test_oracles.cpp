#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "dastab/dynamics.hpp"
#include "dastab/errors.hpp"
#include "dastab/lqr.hpp"
#include "dastab/oracles.hpp"
#include "test_util.hpp"

namespace dastab {
namespace {

using testing::gaussian;
using testing::stabilized_instance;

OracleConfig config(long samples, long horizon, double radius, std::uint64_t seed) {
  OracleConfig c;
  c.samples = samples;
  c.horizon = horizon;
  c.radius = radius;
  c.seed = seed;
  return c;
}

struct CartPoleSetup {
  SystemPtr sys = cartpole();
  CostSpec cost = CostSpec::scaled_identity(4, 1, 0.05);
  MatrixXd lqr_gain;
  CartPoleSetup() {
    const auto [a, b] = jacobian_linearization(*sys);
    lqr_gain = solve_dare(LinearSystem{a, b}, cost, 1.0).gain;
  }
};

TEST(EpsEval, MatchesLqrCostOnLinearSystems) {
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const auto in = stabilized_instance(rng, 3, 2, 0.7);
    const QueryResult q = eps_eval(*linear_as_nonlinear(in.sys), in.gain, in.gamma,
                                   config(2000, 400, 0.1, i), in.cost);
    const double exact = lqr_cost(in.sys, in.cost, in.gain, in.gamma);
    EXPECT_FALSE(q.capped);
    EXPECT_GT(q.std_error, 0.0);
    EXPECT_LE(std::abs(q.value - exact), 3.0 * q.std_error) << "instance " << i;
  }
}

TEST(EpsEval, UnstableLoopIsCapped) {
  const LinearSystem lin{MatrixXd::Constant(1, 1, 1.5), MatrixXd::Ones(1, 1)};
  OracleConfig c = config(50, 400, 0.1, 0);
  c.cap = 100.0;
  const QueryResult q =
      eps_eval(*linear_as_nonlinear(lin), MatrixXd::Zero(1, 1), 1.0, c, CostSpec::identity(1, 1));
  EXPECT_TRUE(q.capped);
  EXPECT_EQ(q.value, 100.0);
  // The per-rollout cap stops the query at the first offending rollout.
  EXPECT_EQ(q.rollouts_used, 1);
}

TEST(EpsEval, CapContract) {
  Rng rng(2);
  for (int i = 0; i < 30; ++i) {
    const auto in = stabilized_instance(rng, 3, 2);
    const double exact = lqr_cost(in.sys, in.cost, in.gain, in.gamma);
    for (const double cap : {0.5 * exact, 2.0 * exact, 1e9}) {
      OracleConfig c = config(100, 200, 0.1, i);
      c.cap = cap;
      const QueryResult q = eps_eval(*linear_as_nonlinear(in.sys), in.gain, in.gamma, c, in.cost);
      ASSERT_LE(q.value, cap);
      if (q.capped) ASSERT_EQ(q.value, cap);
      if (cap == 1e9) ASSERT_FALSE(q.capped);
    }
  }
}

TEST(EpsEval, DeterministicPerSeedAndQuery) {
  const CartPoleSetup cp;
  const OracleConfig c = config(100, 400, 0.1, 7);
  const QueryResult a = eps_eval(*cp.sys, cp.lqr_gain, 0.9, c, cp.cost, 3);
  const QueryResult b = eps_eval(*cp.sys, cp.lqr_gain, 0.9, c, cp.cost, 3);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.std_error, b.std_error);
  const QueryResult other_query = eps_eval(*cp.sys, cp.lqr_gain, 0.9, c, cp.cost, 4);
  EXPECT_NE(a.value, other_query.value);
  const QueryResult other_seed = eps_eval(*cp.sys, cp.lqr_gain, 0.9, config(100, 400, 0.1, 8),
                                          cp.cost, 3);
  EXPECT_NE(a.value, other_seed.value);
}

// Linear costs are quadratic in x0, so the d_x / r^2 normalization removes
// the radius entirely.
TEST(EpsEval, RadiusInvariantOnLinearSystems) {
  Rng rng(3);
  const auto in = stabilized_instance(rng, 4, 2);
  const auto sys = linear_as_nonlinear(in.sys);
  const double base = eps_eval(*sys, in.gain, in.gamma, config(200, 300, 1.0, 5), in.cost).value;
  for (const double r : {1e-3, 0.1, 10.0}) {
    const double v = eps_eval(*sys, in.gain, in.gamma, config(200, 300, r, 5), in.cost).value;
    EXPECT_NEAR(v, base, 1e-12 * base);
  }
}

TEST(EpsEval, UnbiasedAcrossSeeds) {
  Rng rng(4);
  const auto in = stabilized_instance(rng, 3, 1, 0.6);
  const auto sys = linear_as_nonlinear(in.sys);
  const double exact = lqr_cost(in.sys, in.cost, in.gain, in.gamma);
  double sum = 0.0, sum_sq = 0.0;
  const int reps = 200;
  for (int s = 0; s < reps; ++s) {
    const double v = eps_eval(*sys, in.gain, in.gamma, config(20, 400, 0.1, 1000 + s), in.cost).value;
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / reps;
  const double sd = std::sqrt((sum_sq - reps * mean * mean) / (reps - 1));
  EXPECT_LE(std::abs(mean - exact), 3.0 * sd / std::sqrt(reps));
}

TEST(EpsEval, RejectsBadInputs) {
  const CartPoleSetup cp;
  EXPECT_THROW(eps_eval(*cp.sys, MatrixXd::Zero(1, 3), 1.0, config(1, 1, 0.1, 0), cp.cost),
               std::invalid_argument);
  EXPECT_THROW(eps_eval(*cp.sys, cp.lqr_gain, 0.0, config(1, 1, 0.1, 0), cp.cost),
               std::invalid_argument);
  EXPECT_THROW(eps_eval(*cp.sys, cp.lqr_gain, 1.0, config(0, 1, 0.1, 0), cp.cost), ConfigError);
}

TEST(Sensitivity, SameRolloutsAsEpsEval) {
  const CartPoleSetup cp;
  const OracleConfig c = config(100, 400, 0.1, 11);
  const QueryResult e = eps_eval(*cp.sys, cp.lqr_gain, 0.95, c, cp.cost, 2);
  const QueryResult g = eps_grad_sensitivity(*cp.sys, cp.lqr_gain, 0.95, c, cp.cost, 2);
  EXPECT_NEAR(g.value, e.value, 1e-12 * e.value);
  EXPECT_EQ(g.gradient.rows(), 1);
  EXPECT_EQ(g.gradient.cols(), 4);
}

TEST(Sensitivity, MatchesLqrGradOnLinearSystems) {
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    const auto in = stabilized_instance(rng, 3, 2, 0.7);
    const QueryResult q = eps_grad_sensitivity(*linear_as_nonlinear(in.sys), in.gain, in.gamma,
                                               config(2000, 400, 0.1, i), in.cost);
    const MatrixXd exact = lqr_grad(in.sys, in.cost, in.gain, in.gamma);
    for (Eigen::Index k = 0; k < exact.size(); ++k) {
      ASSERT_LE(std::abs(q.gradient.data()[k] - exact.data()[k]),
                4.0 * q.gradient_std_error.data()[k] + 1e-9)
          << "instance " << i << " entry " << k;
    }
  }
}

TEST(Sensitivity, SmallAtTheOptimum) {
  Rng rng(6);
  const LinearSystem sys{testing::with_radius(rng, 3, 1.3), gaussian(rng, 3, 1)};
  const CostSpec cost = CostSpec::identity(3, 1);
  const MatrixXd k = solve_dare(sys, cost, 1.0).gain;
  const QueryResult q =
      eps_grad_sensitivity(*linear_as_nonlinear(sys), k, 1.0, config(2000, 400, 0.1, 3), cost);
  // For linear dynamics each rollout's gradient is E_K x_0 x_0^T-like and
  // vanishes with E_K at K*, so the spread is itself near zero. The floor
  // covers the round-off left in K* by the Riccati solve.
  for (Eigen::Index j = 0; j < k.size(); ++j) {
    EXPECT_LE(std::abs(q.gradient.data()[j]), 3.0 * q.gradient_std_error.data()[j] + 1e-9);
  }
}

// The sensitivity gradient is the exact derivative of the same-seed sample
// average, so central differences of eps_eval must agree closely.
TEST(Sensitivity, MatchesFiniteDifferencesOnCartPole) {
  const CartPoleSetup cp;
  const OracleConfig c = config(50, 400, 0.1, 21);
  for (const double gamma : {1.0, 0.8}) {
    const QueryResult g = eps_grad_sensitivity(*cp.sys, cp.lqr_gain, gamma, c, cp.cost, 0);
    MatrixXd fd(1, 4);
    const double h = 1e-6;
    for (int j = 0; j < 4; ++j) {
      MatrixXd kp = cp.lqr_gain, km = cp.lqr_gain;
      kp(0, j) += h;
      km(0, j) -= h;
      fd(0, j) = (eps_eval(*cp.sys, kp, gamma, c, cp.cost, 0).value -
                  eps_eval(*cp.sys, km, gamma, c, cp.cost, 0).value) / (2 * h);
    }
    EXPECT_LE((g.gradient - fd).norm(), 1e-5 * g.gradient.norm()) << "gamma " << gamma;
  }
}

TEST(Sensitivity, AllDivergedThrows) {
  const LinearSystem lin{MatrixXd::Constant(1, 1, 3.0), MatrixXd::Ones(1, 1)};
  EXPECT_THROW(eps_grad_sensitivity(*linear_as_nonlinear(lin), MatrixXd::Zero(1, 1), 1.0,
                                    config(10, 400, 0.1, 0), CostSpec::identity(1, 1)),
               DivergedAll);
}

TEST(ZerothOrder, QuadraticObjective) {
  Rng rng(7);
  const MatrixXd k0 = gaussian(rng, 2, 3), k = gaussian(rng, 2, 3);
  const SampleObjective f = [&](const MatrixXd& x, long, int) -> std::optional<double> {
    return (x - k0).squaredNorm();
  };
  const QueryResult q = zeroth_order_gradient(f, k, 20000, 0.1, 1);
  const MatrixXd expect = 2.0 * (k - k0);
  for (Eigen::Index j = 0; j < k.size(); ++j) {
    EXPECT_LE(std::abs(q.gradient.data()[j] - expect.data()[j]),
              4.0 * q.gradient_std_error.data()[j]);
  }
}

TEST(ZerothOrder, AgreesWithSensitivityOnLinearSystems) {
  Rng rng(8);
  const auto in = stabilized_instance(rng, 2, 1, 0.6);
  const auto sys = linear_as_nonlinear(in.sys);
  OracleConfig c = config(20000, 200, 0.1, 4);
  c.smoothing_radius = 1e-3;
  const QueryResult zo = eps_grad_zeroth_order(*sys, in.gain, in.gamma, c, in.cost);
  const QueryResult se = eps_grad_sensitivity(*sys, in.gain, in.gamma, c, in.cost);
  for (Eigen::Index j = 0; j < in.gain.size(); ++j) {
    const double tol = 4.0 * std::hypot(zo.gradient_std_error.data()[j],
                                        se.gradient_std_error.data()[j]);
    EXPECT_LE(std::abs(zo.gradient.data()[j] - se.gradient.data()[j]), tol) << "entry " << j;
  }
}

// f(K) = sum K_ij^4 (+ noise). Smoothing over the unit ball in R^d adds
// 12 K r^2 / (d + 2) to the gradient, so the bias falls as r^2 while the
// noise contribution grows as 1/r.
TEST(ZerothOrder, BiasVarianceTradeoff) {
  MatrixXd k(2, 2);
  k << 1.0, -0.5, 0.8, 1.2;
  const double d = 4.0;
  const MatrixXd grad = 4.0 * k.array().cube().matrix();
  const SampleObjective quartic = [](const MatrixXd& x, long, int) -> std::optional<double> {
    return x.array().pow(4).sum();
  };
  std::vector<double> bias, noise_se;
  for (const double r : {0.4, 0.2, 0.1}) {
    const QueryResult q = zeroth_order_gradient(quartic, k, 100000, r, 9);
    const MatrixXd smoothed = grad + (12.0 * r * r / (d + 2.0)) * k;
    for (Eigen::Index j = 0; j < k.size(); ++j) {
      EXPECT_LE(std::abs(q.gradient.data()[j] - smoothed.data()[j]),
                4.0 * q.gradient_std_error.data()[j]) << "r " << r;
    }
    bias.push_back((q.gradient - grad).norm());

    const SampleObjective noisy = [](const MatrixXd&, long i, int side) -> std::optional<double> {
      Rng g(substream_seed(77, static_cast<std::uint64_t>(i), side > 0 ? 1 : 2));
      return std::normal_distribution<double>()(g);
    };
    const QueryResult n = zeroth_order_gradient(noisy, k, 20000, r, 10);
    noise_se.push_back(n.gradient_std_error.norm());
  }
  EXPECT_GT(bias[0], bias[1]);
  EXPECT_GT(bias[1], bias[2]);
  EXPECT_NEAR(noise_se[1] / noise_se[0], 2.0, 0.1);
  EXPECT_NEAR(noise_se[2] / noise_se[1], 2.0, 0.1);
}

TEST(ZerothOrder, DivergedDirectionsAreDropped) {
  const MatrixXd k = MatrixXd::Zero(1, 2);
  int calls = 0;
  const SampleObjective f = [&](const MatrixXd& x, long i, int) -> std::optional<double> {
    ++calls;
    if (i % 2 == 0) return std::nullopt;
    return x.squaredNorm();
  };
  const QueryResult q = zeroth_order_gradient(f, k, 10, 0.1, 0);
  EXPECT_EQ(q.rollouts_used, 10);
  EXPECT_EQ(q.rollouts_diverged, 5);
  EXPECT_TRUE(q.capped);
  EXPECT_EQ(calls, 20);
  const SampleObjective never = [](const MatrixXd&, long, int) -> std::optional<double> {
    return std::nullopt;
  };
  EXPECT_THROW(zeroth_order_gradient(never, k, 4, 0.1, 0), DivergedAll);
}

TEST(SampledOracle, AdvancesQueryIndexAndLogs) {
  const auto dir = std::filesystem::temp_directory_path() / "dastab_oracle_log";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "queries.jsonl").string();
  const CartPoleSetup cp;
  SampledOracle oracle(cp.sys, cp.cost, config(20, 100, 0.1, 3), std::make_shared<QueryLog>(path));
  const QueryResult e = oracle.eval(cp.lqr_gain, 1.0, 1e9);
  const QueryResult g = oracle.grad(cp.lqr_gain, 1.0);
  EXPECT_EQ(oracle.next_query_index(), 2u);
  EXPECT_EQ(oracle.eval_count(), 1);
  EXPECT_EQ(oracle.grad_count(), 1);
  EXPECT_EQ(e.value, eps_eval(*cp.sys, cp.lqr_gain, 1.0, config(20, 100, 0.1, 3), cp.cost, 0).value);
  EXPECT_EQ(g.value,
            eps_grad_sensitivity(*cp.sys, cp.lqr_gain, 1.0, config(20, 100, 0.1, 3), cp.cost, 1).value);

  std::ifstream in(path);
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["kind"], "eval");
  EXPECT_EQ(rows[1]["kind"], "grad");
  EXPECT_EQ(rows[0]["value"].get<double>(), e.value);
  EXPECT_EQ(rows[0]["inputs_hash"].get<std::uint64_t>(),
            hash_query_inputs(cp.lqr_gain, 1.0, 3, 0));

  oracle.set_next_query_index(0);
  EXPECT_EQ(oracle.eval(cp.lqr_gain, 1.0, 1e9).value, e.value);
  std::filesystem::remove_all(dir);
}

TEST(ExactOracle, CapsUnstableGains) {
  const LinearSystem lin{MatrixXd::Constant(1, 1, 2.0), MatrixXd::Ones(1, 1)};
  ExactLinearOracle oracle(lin, CostSpec::identity(1, 1));
  const QueryResult q = oracle.eval(MatrixXd::Zero(1, 1), 1.0, 50.0);
  EXPECT_TRUE(q.capped);
  EXPECT_EQ(q.value, 50.0);
  EXPECT_THROW(oracle.grad(MatrixXd::Zero(1, 1), 1.0), DivergedAll);
  EXPECT_NEAR(*oracle.optimal_cost(1.0), 4.23606797749979, 1e-10);
}

}  // namespace
}  // namespace dastab
