#include "dastab/anneal.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "dastab/errors.hpp"
#include "dastab/matops.hpp"
#include "dastab/rng.hpp"

namespace dastab {

void PgConfig::validate() const {
  if (!(step_size > 0)) throw ConfigError("pg: step size must be > 0");
  if (max_steps < 1) throw ConfigError("pg: max_steps must be >= 1");
  if (gap_target && !(*gap_target > 0)) {
    throw ConfigError("pg: gap target must be > 0");
  }
  if (guard_steps < 1) throw ConfigError("pg: guard_steps must be >= 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 &&
        adam_beta2 < 1 && adam_epsilon > 0)) {
    throw ConfigError("pg: invalid Adam constants");
  }
}

namespace {

constexpr double kEvalCap = 1e12;
constexpr int kMaxHalvings = 60;

struct Adam {
  Adam(Eigen::Index rows, Eigen::Index cols, const PgConfig& cfg)
      : first(MatrixXd::Zero(rows, cols)),
        second(MatrixXd::Zero(rows, cols)),
        beta1(cfg.adam_beta1),
        beta2(cfg.adam_beta2),
        epsilon(cfg.adam_epsilon) {}

  MatrixXd direction(const MatrixXd& grad) {
    ++t;
    first = beta1 * first + (1.0 - beta1) * grad;
    second = beta2 * second + (1.0 - beta2) * grad.cwiseAbs2();
    const MatrixXd m_hat = first / (1.0 - std::pow(beta1, t));
    const MatrixXd v_hat = second / (1.0 - std::pow(beta2, t));
    return m_hat.array() / (v_hat.array().sqrt() + epsilon);
  }

  MatrixXd first, second;
  double beta1, beta2, epsilon;
  long t = 0;
};

}  // namespace

PgResult policy_gradient(CostOracle& oracle, const MatrixXd& initial_gain,
                         double gamma, const PgConfig& cfg) {
  cfg.validate();
  if (initial_gain.rows() != oracle.input_dim() ||
      initial_gain.cols() != oracle.state_dim()) {
    throw std::invalid_argument("policy_gradient: gain has the wrong shape");
  }
  const bool certified = cfg.stop == PgStop::kCertifiedGap;
  const double gap_target =
      cfg.gap_target.value_or(static_cast<double>(oracle.state_dim()) *
                              oracle.cost_scale());

  PgResult res;
  res.gain = initial_gain;
  const QueryResult start = oracle.eval(initial_gain, gamma, kEvalCap);
  if (start.capped) {
    throw InnerDiverged("policy_gradient: initial gain has unbounded cost");
  }
  res.initial_cost = start.value;
  if (certified) {
    res.optimal_cost = oracle.optimal_cost(gamma);
    if (!res.optimal_cost) {
      throw ConfigError(
          "policy_gradient: certified-gap stopping needs an exact oracle");
    }
  }

  MatrixXd gain = initial_gain;
  MatrixXd last_good = initial_gain;
  double cost = start.value;
  MatrixXd best_gain = initial_gain;
  double best_cost = start.value;
  double step = cfg.step_size;
  Adam adam(gain.rows(), gain.cols(), cfg);
  int failures = 0;

  auto fail = [&](const std::string& why) {
    if (++failures >= cfg.guard_steps) {
      throw InnerDiverged("policy_gradient: " + why + " for " +
                          std::to_string(failures) + " consecutive steps");
    }
    gain = last_good;
    step *= 0.5;
  };

  for (long it = 0; it < cfg.max_steps; ++it) {
    QueryResult g;
    try {
      g = oracle.grad(gain, gamma);
    } catch (const DivergedAll&) {
      fail("every gradient rollout diverged");
      continue;
    }
    if (g.capped) {
      fail("gradient rollouts diverged");
      continue;
    }
    failures = 0;
    last_good = gain;
    cost = g.value;
    res.cost_trace.push_back(cost);
    if (cost < best_cost) {
      best_cost = cost;
      best_gain = gain;
    }
    if (certified && cost - *res.optimal_cost <= gap_target) break;

    if (cfg.optimizer == Optimizer::kAdam) {
      gain -= step * adam.direction(g.gradient);
    } else if (oracle.exact()) {
      // Backtracking: halve until the exact cost decreases, then try a
      // doubled step next time.
      bool accepted = false;
      for (int h = 0; h < kMaxHalvings; ++h) {
        const MatrixXd trial = gain - step * g.gradient;
        const QueryResult e = oracle.eval(trial, gamma, kEvalCap);
        if (!e.capped && e.value < cost) {
          gain = trial;
          accepted = true;
          step *= 2.0;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        if (g.gradient.norm() <= 1e-12 * std::max(1.0, cost)) break;
        throw InnerDiverged(
            "policy_gradient: no descent step found along the gradient");
      }
    } else {
      gain -= step * g.gradient;
    }
    ++res.steps;
  }

  const QueryResult final_eval = oracle.eval(gain, gamma, kEvalCap);
  if (!final_eval.capped && final_eval.value <= res.initial_cost) {
    res.gain = gain;
    res.final_cost = final_eval.value;
  } else {
    res.gain = best_gain;
    res.final_cost = best_cost;
  }
  return res;
}

void SearchBracket::validate() const {
  if (!(lower < upper)) throw ConfigError("search: need lower < upper");
  if (!(tolerance > 0)) throw ConfigError("search: tolerance must be > 0");
  if (budget < 1) throw ConfigError("search: budget must be >= 1");
  if (!(cap > upper)) throw ConfigError("search: cap must exceed upper");
}

SearchBracket make_bracket(double current_cost, double tolerance,
                           const BracketRatios& ratios,
                           std::optional<long> budget) {
  if (!(ratios.low > 1.0 && ratios.high > ratios.low + 1.0)) {
    throw ConfigError("bracket ratios must satisfy 1 < c1 and c1 + 1 < c2");
  }
  if (!(current_cost > 0)) throw ConfigError("bracket: cost must be > 0");
  SearchBracket b;
  b.lower = (ratios.low + 0.25) * current_cost;
  b.upper = (ratios.high - 0.75) * current_cost;
  b.tolerance = tolerance;
  b.cap = ratios.high * current_cost + 2.0 * tolerance;
  b.budget = budget.value_or(
      3 * (static_cast<long>(std::ceil(4.0 * std::log(std::max(current_cost, std::exp(1.0))))) + 10));
  b.validate();
  return b;
}

SearchResult binary_search_gamma(const DiscountEvaluator& evaluator,
                                 double gamma_t, const SearchBracket& bracket) {
  bracket.validate();
  if (!(gamma_t >= 0.0 && gamma_t <= 1.0)) {
    throw std::invalid_argument("binary_search_gamma: gamma_t not in [0, 1]");
  }
  SearchResult res;
  auto query = [&](double g) {
    const double a = evaluator(g);
    ++res.queries;
    res.transcript.emplace_back(g, a);
    return a;
  };

  const double at_one = query(1.0);
  if (at_one <= bracket.upper + bracket.tolerance) {
    res.gamma = 1.0;
    res.value = at_one;
    res.reached_one = true;
    return res;
  }
  double lo = gamma_t, hi = 1.0;
  while (res.queries < bracket.budget) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    const double a = query(mid);
    if (a > bracket.upper + bracket.tolerance) {
      hi = mid;
    } else if (a < bracket.lower + bracket.tolerance) {
      lo = mid;
    } else {
      res.gamma = mid;
      res.value = a;
      return res;
    }
  }
  throw BudgetExceeded("binary_search_gamma: no discount found in " +
                       std::to_string(res.queries) + " queries");
}

SearchResult random_search_gamma(const DiscountEvaluator& evaluator,
                                 double gamma_t, const SearchBracket& bracket,
                                 long max_iters, std::uint64_t seed) {
  bracket.validate();
  if (!(gamma_t >= 0.0 && gamma_t <= 1.0)) {
    throw std::invalid_argument("random_search_gamma: gamma_t not in [0, 1]");
  }
  SearchResult res;
  auto query = [&](double g) {
    const double a = evaluator(g);
    ++res.queries;
    res.transcript.emplace_back(g, a);
    return a;
  };

  const double at_one = query(1.0);
  if (at_one <= bracket.upper) {
    res.gamma = 1.0;
    res.value = at_one;
    res.reached_one = true;
    return res;
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> uniform(gamma_t, 1.0);
  for (long i = 0; i < max_iters; ++i) {
    const double g = uniform(rng);
    const double a = query(g);
    if (a >= bracket.lower && a <= bracket.upper) {
      res.gamma = g;
      res.value = a;
      return res;
    }
  }
  throw BudgetExceeded("random_search_gamma: no discount found in " +
                       std::to_string(max_iters) + " samples");
}

void AnnealConfig::validate() const {
  pg.validate();
  if (tolerance_factor && !(*tolerance_factor > 0)) {
    throw ConfigError("anneal: tolerance factor must be > 0");
  }
  if (random_search_max_iters < 1) {
    throw ConfigError("anneal: random search needs at least one iteration");
  }
  if (max_outer_iterations < 1) {
    throw ConfigError("anneal: max_outer_iterations must be >= 1");
  }
}

long AnnealState::outer_iterations() const {
  return static_cast<long>(std::count_if(
      history.begin(), history.end(),
      [](const IterationRecord& r) { return r.search_queries > 0; }));
}

double default_initial_gamma(const NonlinearSystem& sys) {
  const auto [a_jac, b_jac] = jacobian_linearization(sys);
  const double norm = op_norm(a_jac);
  if (norm == 0.0) return 1.0;
  return std::min(1.0, 0.9 / (norm * norm));
}

AnnealState initial_anneal_state(Eigen::Index state_dim, Eigen::Index input_dim,
                                 double initial_gamma) {
  if (!(initial_gamma > 0.0 && initial_gamma <= 1.0)) {
    throw ConfigError("initial discount must lie in (0, 1]");
  }
  AnnealState s;
  s.gamma = initial_gamma;
  s.gain = MatrixXd::Zero(input_dim, state_dim);
  return s;
}

namespace {

template <typename F>
auto with_iteration(long t, F&& body) {
  const std::string where = "iteration " + std::to_string(t) + ": ";
  try {
    return body();
  } catch (const InnerDiverged& e) {
    throw InnerDiverged(where + e.what());
  } catch (const BudgetExceeded& e) {
    throw BudgetExceeded(where + e.what());
  } catch (const DivergedAll& e) {
    throw DivergedAll(where + e.what());
  } catch (const NotStabilizable& e) {
    throw NotStabilizable(where + e.what());
  }
}

constexpr std::uint64_t kSearchStream = 0x7365617263680000ULL;

}  // namespace

void discount_anneal(CostOracle& oracle, bool linear, const AnnealConfig& cfg,
                     AnnealState& state, const IterationCallback& on_iteration) {
  cfg.validate();
  if (state.gain.rows() != oracle.input_dim() ||
      state.gain.cols() != oracle.state_dim()) {
    throw std::invalid_argument("discount_anneal: state gain has wrong shape");
  }
  auto* sampled = dynamic_cast<SampledOracle*>(&oracle);
  if (sampled) sampled->set_next_query_index(state.next_query_index);

  const bool binary =
      cfg.search == SearchMode::kBinary ||
      (cfg.search == SearchMode::kAuto && linear);
  const double tol_factor = cfg.tolerance_factor.value_or(binary ? 0.1 : 0.01);
  const double tolerance = tol_factor * static_cast<double>(oracle.state_dim()) *
                           oracle.cost_scale();

  while (!state.finished) {
    if (state.t >= cfg.max_outer_iterations) {
      throw BudgetExceeded("discount_anneal: exceeded " +
                           std::to_string(cfg.max_outer_iterations) +
                           " outer iterations");
    }
    const long evals_before = oracle.eval_count();
    const long grads_before = oracle.grad_count();
    IterationRecord rec;
    rec.t = state.t;
    rec.gamma = state.gamma;
    const PgResult pg = with_iteration(state.t, [&] {
      return policy_gradient(oracle, state.gain, state.gamma, cfg.pg);
    });
    rec.pg_steps = pg.steps;
    rec.cost_start = pg.initial_cost;
    rec.cost_end = pg.final_cost;
    rec.optimal_cost = pg.optimal_cost;
    rec.gain = pg.gain;
    state.gain = pg.gain;

    if (state.gamma >= 1.0) {
      rec.next_gamma = 1.0;
      rec.next_cost = pg.final_cost;
      state.finished = true;
    } else {
      const SearchBracket bracket = make_bracket(
          pg.final_cost, tolerance, cfg.ratios, cfg.search_budget);
      const DiscountEvaluator evaluator = [&](double g) {
        return oracle.eval(state.gain, g, bracket.cap).value;
      };
      const SearchResult found = with_iteration(state.t, [&] {
        return binary ? binary_search_gamma(evaluator, state.gamma, bracket)
                      : random_search_gamma(
                            evaluator, state.gamma, bracket,
                            cfg.random_search_max_iters,
                            substream_seed(cfg.seed, kSearchStream,
                                           static_cast<std::uint64_t>(state.t)));
      });
      rec.next_gamma = found.gamma;
      rec.next_cost = found.value;
      rec.search_queries = found.queries;
      rec.transcript = found.transcript;
      state.gamma = found.gamma;
      ++state.t;
    }
    rec.eval_queries = oracle.eval_count() - evals_before;
    rec.grad_queries = oracle.grad_count() - grads_before;
    if (sampled) state.next_query_index = sampled->next_query_index();
    state.history.push_back(std::move(rec));
    if (on_iteration) on_iteration(state);
  }
}

AnnealState discount_anneal(const SystemPtr& sys, const CostSpec& cost,
                            const RunConfig& cfg,
                            const IterationCallback& on_iteration) {
  if (!sys) throw std::invalid_argument("discount_anneal: null system");
  const double gamma0 = cfg.initial_gamma.value_or(default_initial_gamma(*sys));
  AnnealState state =
      initial_anneal_state(sys->state_dim(), sys->input_dim(), gamma0);
  if (cfg.mode == OracleMode::kExact) {
    const auto* lin = dynamic_cast<const LinearDynamics*>(sys.get());
    if (!lin) throw ConfigError("exact oracles need a linear system");
    ExactLinearOracle oracle(lin->linear(), cost);
    discount_anneal(oracle, true, cfg.anneal, state, on_iteration);
  } else {
    SampledOracle oracle(sys, cost, cfg.oracle);
    discount_anneal(oracle, sys->is_linear(), cfg.anneal, state, on_iteration);
  }
  return state;
}

}  // namespace dastab
