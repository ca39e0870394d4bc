#include "dastab/oracles.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "dastab/errors.hpp"
#include "dastab/lqr.hpp"
#include "dastab/rng.hpp"

namespace dastab {

VectorXd sample_sphere(Eigen::Index dim, double radius, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd v(dim);
  double norm = 0.0;
  do {
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = normal(rng);
    norm = v.norm();
  } while (norm == 0.0);
  return (radius / norm) * v;
}

void OracleConfig::validate() const {
  if (samples < 1) throw ConfigError("oracle: samples must be >= 1");
  if (horizon < 1) throw ConfigError("oracle: horizon must be >= 1");
  if (!(radius > 0)) throw ConfigError("oracle: radius must be > 0");
  if (!(cap > 0)) throw ConfigError("oracle: cap must be > 0");
  if (!(smoothing_radius > 0)) {
    throw ConfigError("oracle: smoothing radius must be > 0");
  }
  if (!(blowup_factor > 1)) throw ConfigError("oracle: blowup factor <= 1");
}

namespace {

// Salt separating the initial-state stream from the direction stream of the
// zeroth-order estimator.
constexpr std::uint64_t kStateSalt = 0x5851f42d4c957f2dULL;

void check_query(const NonlinearSystem& sys, const MatrixXd& gain,
                 double gamma, const OracleConfig& cfg) {
  cfg.validate();
  if (gain.rows() != sys.input_dim() || gain.cols() != sys.state_dim()) {
    throw std::invalid_argument("oracle: gain has the wrong shape");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("oracle: discount must lie in (0, 1]");
  }
}

struct Workspace {
  explicit Workspace(const NonlinearSystem& sys)
      : x(sys.state_dim()),
        next(sys.state_dim()),
        u(sys.input_dim()),
        qx(sys.state_dim()),
        ru(sys.input_dim()) {}
  VectorXd x, next, u, qx, ru;
};

struct CostOutcome {
  double cost = 0.0;
  bool diverged = false;
  bool truncated = false;
};

// Lean version of damped_rollout: no trajectory storage.
CostOutcome rollout_cost(const NonlinearSystem& sys, const MatrixXd& gain,
                         double damping, const VectorXd& x0, long horizon,
                         const CostSpec& cost, double raw_cap,
                         double blowup_factor, Workspace& ws) {
  CostOutcome out;
  const double bound = blowup_factor * std::max(1.0, x0.norm());
  ws.x = x0;
  for (long t = 0; t < horizon; ++t) {
    ws.u.noalias() = gain * ws.x;
    ws.qx.noalias() = cost.q * ws.x;
    ws.ru.noalias() = cost.r * ws.u;
    out.cost += ws.x.dot(ws.qx) + ws.u.dot(ws.ru);
    if (out.cost > raw_cap) {
      out.truncated = true;
      return out;
    }
    sys.step(ws.x, ws.u, ws.next);
    ws.next *= damping;
    if (!ws.next.allFinite() || ws.next.norm() > bound) {
      out.diverged = true;
      return out;
    }
    ws.x.swap(ws.next);
  }
  if (!std::isfinite(out.cost)) out.diverged = true;
  return out;
}

// Running mean and variance (Welford) of matrices.
class MatrixMoments {
 public:
  MatrixMoments(Eigen::Index rows, Eigen::Index cols)
      : mean_(MatrixXd::Zero(rows, cols)), m2_(MatrixXd::Zero(rows, cols)) {}

  void add(const MatrixXd& sample) {
    ++count_;
    const MatrixXd delta = sample - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta.cwiseProduct(sample - mean_);
  }

  long count() const { return count_; }
  const MatrixXd& mean() const { return mean_; }
  MatrixXd std_error() const {
    if (count_ < 2) return MatrixXd::Zero(mean_.rows(), mean_.cols());
    const double n = static_cast<double>(count_);
    return (m2_ / (n - 1.0) / n).cwiseSqrt();
  }

 private:
  long count_ = 0;
  MatrixXd mean_;
  MatrixXd m2_;
};

class ScalarMoments {
 public:
  void add(double v) {
    ++count_;
    const double delta = v - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (v - mean_);
  }
  long count() const { return count_; }
  double mean() const { return mean_; }
  double std_error() const {
    if (count_ < 2) return 0.0;
    const double n = static_cast<double>(count_);
    return std::sqrt(m2_ / (n - 1.0) / n);
  }

 private:
  long count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// Gain matrices are flattened row-major: parameter i * d_x + j is K(i, j).
MatrixXd unflatten_gain(const Eigen::RowVectorXd& flat, Eigen::Index rows,
                        Eigen::Index cols) {
  MatrixXd g(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) g(i, j) = flat(i * cols + j);
  }
  return g;
}

}  // namespace

QueryResult eps_eval(const NonlinearSystem& sys, const MatrixXd& gain,
                     double gamma, const OracleConfig& cfg,
                     const CostSpec& cost, std::uint64_t query_index) {
  check_query(sys, gain, gamma, cfg);
  const Eigen::Index n = sys.state_dim();
  const double scale = static_cast<double>(n) / (cfg.radius * cfg.radius);
  const double damping = std::sqrt(gamma);
  // One rollout whose normalized cost exceeds cap * N already pushes the
  // sample mean past the cap.
  const double raw_cap = cfg.cap * static_cast<double>(cfg.samples) / scale;

  Workspace ws(sys);
  ScalarMoments moments;
  QueryResult result;
  for (long i = 0; i < cfg.samples; ++i) {
    Rng rng(substream_seed(cfg.seed, query_index, static_cast<std::uint64_t>(i)));
    const VectorXd x0 = sample_sphere(n, cfg.radius, rng);
    const CostOutcome r = rollout_cost(sys, gain, damping, x0, cfg.horizon,
                                       cost, raw_cap, cfg.blowup_factor, ws);
    ++result.rollouts_used;
    if (r.diverged || r.truncated) {
      if (r.diverged) ++result.rollouts_diverged;
      result.capped = true;
      result.value = cfg.cap;
      result.std_error = 0.0;
      return result;
    }
    moments.add(scale * r.cost);
  }
  result.value = moments.mean();
  result.std_error = moments.std_error();
  if (result.value >= cfg.cap) {
    result.value = cfg.cap;
    result.capped = true;
  }
  return result;
}

QueryResult eps_grad_sensitivity(const NonlinearSystem& sys,
                                 const MatrixXd& gain, double gamma,
                                 const OracleConfig& cfg, const CostSpec& cost,
                                 std::uint64_t query_index) {
  check_query(sys, gain, gamma, cfg);
  const Eigen::Index n = sys.state_dim();
  const Eigen::Index m = sys.input_dim();
  const Eigen::Index p = n * m;
  const double scale = static_cast<double>(n) / (cfg.radius * cfg.radius);
  const double damping = std::sqrt(gamma);

  VectorXd x(n), next(n), u(m), qx(n), ru(m);
  MatrixXd sens(n, p), sens_next(n, p), du_dk(m, p), gx(n, n), gu(n, m);
  Eigen::RowVectorXd flat_grad(p);

  ScalarMoments value_moments;
  MatrixMoments grad_moments(m, n);
  QueryResult result;
  for (long i = 0; i < cfg.samples; ++i) {
    Rng rng(substream_seed(cfg.seed, query_index, static_cast<std::uint64_t>(i)));
    x = sample_sphere(n, cfg.radius, rng);
    const double bound = cfg.blowup_factor * std::max(1.0, x.norm());
    sens.setZero();
    flat_grad.setZero();
    double total = 0.0;
    bool diverged = false;
    for (long t = 0; t < cfg.horizon; ++t) {
      u.noalias() = gain * x;
      // du/dK = K dx/dK + (direct term: du_i/dK_ij = x_j)
      du_dk.noalias() = gain * sens;
      for (Eigen::Index r = 0; r < m; ++r) {
        du_dk.block(r, r * n, 1, n) += x.transpose();
      }
      qx.noalias() = cost.q * x;
      ru.noalias() = cost.r * u;
      total += x.dot(qx) + u.dot(ru);
      flat_grad.noalias() += 2.0 * qx.transpose() * sens;
      flat_grad.noalias() += 2.0 * ru.transpose() * du_dk;

      sys.step_with_jacobian(x, u, next, gx, gu);
      sens_next.noalias() = gx * sens;
      sens_next.noalias() += gu * du_dk;
      sens_next *= damping;
      next *= damping;
      if (!next.allFinite() || next.norm() > bound ||
          !sens_next.allFinite()) {
        diverged = true;
        break;
      }
      x.swap(next);
      sens.swap(sens_next);
    }
    ++result.rollouts_used;
    if (diverged || !std::isfinite(total)) {
      ++result.rollouts_diverged;
      continue;
    }
    value_moments.add(scale * total);
    grad_moments.add(scale * unflatten_gain(flat_grad, m, n));
  }
  if (grad_moments.count() == 0) {
    throw DivergedAll("eps_grad_sensitivity: all " +
                      std::to_string(cfg.samples) + " rollouts diverged");
  }
  result.value = value_moments.mean();
  result.std_error = value_moments.std_error();
  result.gradient = grad_moments.mean();
  result.gradient_std_error = grad_moments.std_error();
  result.capped = result.rollouts_diverged > 0;
  return result;
}

QueryResult zeroth_order_gradient(const SampleObjective& objective,
                                  const MatrixXd& gain, long directions,
                                  double smoothing_radius, std::uint64_t seed,
                                  std::uint64_t query_index) {
  if (directions < 1) {
    throw std::invalid_argument("zeroth_order_gradient: directions < 1");
  }
  if (!(smoothing_radius > 0)) {
    throw std::invalid_argument("zeroth_order_gradient: smoothing radius <= 0");
  }
  const Eigen::Index rows = gain.rows(), cols = gain.cols();
  const double dim = static_cast<double>(rows * cols);

  MatrixMoments grad_moments(rows, cols);
  ScalarMoments value_moments;
  QueryResult result;
  for (long i = 0; i < directions; ++i) {
    Rng rng(substream_seed(seed, query_index, static_cast<std::uint64_t>(i)));
    const VectorXd flat = sample_sphere(rows * cols, 1.0, rng);
    const MatrixXd dir = unflatten_gain(flat.transpose(), rows, cols);
    const auto plus = objective(gain + smoothing_radius * dir, i, +1);
    const auto minus = objective(gain - smoothing_radius * dir, i, -1);
    ++result.rollouts_used;
    if (!plus || !minus) {
      ++result.rollouts_diverged;
      continue;
    }
    value_moments.add(0.5 * (*plus + *minus));
    grad_moments.add((dim / (2.0 * smoothing_radius)) * (*plus - *minus) * dir);
  }
  if (grad_moments.count() == 0) {
    throw DivergedAll("zeroth_order_gradient: every direction diverged");
  }
  result.value = value_moments.mean();
  result.std_error = value_moments.std_error();
  result.gradient = grad_moments.mean();
  result.gradient_std_error = grad_moments.std_error();
  result.capped = result.rollouts_diverged > 0;
  return result;
}

QueryResult eps_grad_zeroth_order(const NonlinearSystem& sys,
                                  const MatrixXd& gain, double gamma,
                                  const OracleConfig& cfg,
                                  const CostSpec& cost,
                                  std::uint64_t query_index) {
  check_query(sys, gain, gamma, cfg);
  const Eigen::Index n = sys.state_dim();
  const double scale = static_cast<double>(n) / (cfg.radius * cfg.radius);
  const double damping = std::sqrt(gamma);
  const double raw_cap = cfg.cap / scale;
  Workspace ws(sys);

  const SampleObjective objective =
      [&](const MatrixXd& k, long sample, int) -> std::optional<double> {
    Rng rng(substream_seed(cfg.seed ^ kStateSalt, query_index,
                           static_cast<std::uint64_t>(sample)));
    const VectorXd x0 = sample_sphere(n, cfg.radius, rng);
    const CostOutcome r = rollout_cost(sys, k, damping, x0, cfg.horizon, cost,
                                       raw_cap, cfg.blowup_factor, ws);
    if (r.diverged) return std::nullopt;
    if (r.truncated) return cfg.cap;
    return scale * r.cost;
  };
  return zeroth_order_gradient(objective, gain, cfg.samples,
                               cfg.smoothing_radius, cfg.seed, query_index);
}

QueryLog::QueryLog(const std::string& path) : out_(path, std::ios::app) {
  if (!out_) throw std::runtime_error("QueryLog: cannot open " + path);
}

void QueryLog::record(const std::string& kind, std::uint64_t inputs_hash,
                      const QueryResult& result) {
  nlohmann::json j;
  j["kind"] = kind;
  j["inputs_hash"] = inputs_hash;
  j["value"] = result.value;
  j["std_error"] = result.std_error;
  j["capped"] = result.capped;
  j["rollouts"] = result.rollouts_used;
  j["diverged"] = result.rollouts_diverged;
  out_ << j.dump() << '\n';
  out_.flush();
}

std::uint64_t hash_query_inputs(const MatrixXd& gain, double gamma,
                                std::uint64_t seed,
                                std::uint64_t query_index) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t word) {
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (word >> (8 * byte)) & 0xffULL;
      h *= 0x100000001b3ULL;
    }
  };
  feed(static_cast<std::uint64_t>(gain.rows()));
  feed(static_cast<std::uint64_t>(gain.cols()));
  for (Eigen::Index i = 0; i < gain.size(); ++i) {
    feed(std::bit_cast<std::uint64_t>(gain.data()[i]));
  }
  feed(std::bit_cast<std::uint64_t>(gamma));
  feed(seed);
  feed(query_index);
  return h;
}

ExactLinearOracle::ExactLinearOracle(LinearSystem sys, CostSpec cost)
    : sys_(std::move(sys)), cost_(std::move(cost)) {
  sys_.validate();
  cost_.validate(sys_.state_dim(), sys_.input_dim());
}

QueryResult ExactLinearOracle::eval(const MatrixXd& gain, double gamma,
                                    double cap) {
  ++eval_count_;
  QueryResult r;
  try {
    r.value = lqr_cost(sys_, cost_, gain, gamma);
  } catch (const Unstable&) {
    r.value = cap;
    r.capped = true;
    return r;
  }
  if (r.value >= cap) {
    r.value = cap;
    r.capped = true;
  }
  return r;
}

QueryResult ExactLinearOracle::grad(const MatrixXd& gain, double gamma) {
  ++grad_count_;
  QueryResult r;
  try {
    CostAndGradient cg = lqr_cost_and_grad(sys_, cost_, gain, gamma);
    r.value = cg.cost;
    r.gradient = std::move(cg.gradient);
  } catch (const Unstable& e) {
    throw DivergedAll(std::string("exact gradient undefined: ") + e.what());
  }
  r.gradient_std_error = MatrixXd::Zero(r.gradient.rows(), r.gradient.cols());
  return r;
}

std::optional<double> ExactLinearOracle::optimal_cost(double gamma) {
  return solve_dare(sys_, cost_, gamma).value.trace();
}

SampledOracle::SampledOracle(SystemPtr sys, CostSpec cost, OracleConfig cfg,
                             std::shared_ptr<QueryLog> log)
    : sys_(std::move(sys)),
      cost_(std::move(cost)),
      cfg_(cfg),
      log_(std::move(log)) {
  if (!sys_) throw std::invalid_argument("SampledOracle: null system");
  cfg_.validate();
  cost_.validate(sys_->state_dim(), sys_->input_dim());
}

QueryResult SampledOracle::eval(const MatrixXd& gain, double gamma,
                                double cap) {
  ++eval_count_;
  OracleConfig cfg = cfg_;
  cfg.cap = cap;
  const std::uint64_t q = next_query_++;
  QueryResult r = eps_eval(*sys_, gain, gamma, cfg, cost_, q);
  if (log_) log_->record("eval", hash_query_inputs(gain, gamma, cfg.seed, q), r);
  return r;
}

QueryResult SampledOracle::grad(const MatrixXd& gain, double gamma) {
  ++grad_count_;
  const std::uint64_t q = next_query_++;
  QueryResult r = cfg_.estimator == GradientEstimator::kSensitivity
                      ? eps_grad_sensitivity(*sys_, gain, gamma, cfg_, cost_, q)
                      : eps_grad_zeroth_order(*sys_, gain, gamma, cfg_, cost_, q);
  if (log_) log_->record("grad", hash_query_inputs(gain, gamma, cfg_.seed, q), r);
  return r;
}

}  // namespace dastab
