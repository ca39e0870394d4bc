#include "dastab/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>

#include "dastab/errors.hpp"
#include "dastab/io.hpp"
#include "dastab/lqr.hpp"
#include "dastab/matops.hpp"

namespace dastab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kRoaStream = 0x726f610000000000ULL;
constexpr std::uint64_t kSuiteStream = 0x7375697465000000ULL;
constexpr std::uint64_t kTrialStream = 0x747269616c000000ULL;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

void RoaConfig::validate() const {
  if (directions < 1) throw ConfigError("roa: directions must be >= 1");
  if (horizon < 1) throw ConfigError("roa: horizon must be >= 1");
  if (!(convergence_tol > 0)) throw ConfigError("roa: convergence_tol must be > 0");
  if (!(bisect_tol > 0)) throw ConfigError("roa: bisect_tol must be > 0");
  if (!(scan_step > 0)) throw ConfigError("roa: scan_step must be > 0");
  if (!(ceiling >= scan_step)) throw ConfigError("roa: ceiling below scan step");
}

bool converges(const NonlinearSystem& sys, const MatrixXd& gain,
               const VectorXd& x0, long horizon, double tol) {
  const double start = x0.norm();
  const double blowup = 1e6 * std::max(1.0, start);
  VectorXd x = x0, next(x0.size()), u(gain.rows());
  for (long t = 0; t < horizon; ++t) {
    u.noalias() = gain * x;
    sys.step(x, u, next);
    x.swap(next);
    const double n = x.norm();
    if (!std::isfinite(n) || n > blowup) return false;
  }
  return x.norm() <= tol * start;
}

double roa_radius(const NonlinearSystem& sys, const MatrixXd& gain,
                  const VectorXd& direction, const RoaConfig& cfg) {
  double lo = 0.0;
  double hi = kNaN;
  for (long k = 1;; ++k) {
    const double r = std::min(cfg.ceiling, static_cast<double>(k) * cfg.scan_step);
    if (!converges(sys, gain, r * direction, cfg.horizon, cfg.convergence_tol)) {
      hi = r;
      break;
    }
    lo = r;
    if (r >= cfg.ceiling) return cfg.ceiling;
  }
  while (hi - lo > cfg.bisect_tol) {
    const double mid = 0.5 * (lo + hi);
    if (converges(sys, gain, mid * direction, cfg.horizon, cfg.convergence_tol)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

RoaReport estimate_roa(const NonlinearSystem& sys, const MatrixXd& gain,
                       const RoaConfig& cfg, std::string controller) {
  cfg.validate();
  if (gain.rows() != sys.input_dim() || gain.cols() != sys.state_dim()) {
    throw std::invalid_argument("estimate_roa: gain has the wrong shape");
  }
  RoaReport report;
  report.controller = std::move(controller);
  report.directions = cfg.directions;
  report.radii.reserve(cfg.directions);
  for (long i = 0; i < cfg.directions; ++i) {
    Rng rng(substream_seed(cfg.seed, kRoaStream, static_cast<std::uint64_t>(i)));
    const VectorXd dir = sample_sphere(sys.state_dim(), 1.0, rng);
    report.radii.push_back(roa_radius(sys, gain, dir, cfg));
  }
  report.rho_roa = *std::min_element(report.radii.begin(), report.radii.end());
  return report;
}

LinearSystem random_unstable_system(Rng& rng, Eigen::Index state_dim,
                                    Eigen::Index input_dim, double rho_min,
                                    double rho_max, double max_optimal_cost) {
  if (state_dim < 1 || input_dim < 1) {
    throw std::invalid_argument("random_unstable_system: empty dimensions");
  }
  if (!(rho_min > 0 && rho_min <= rho_max)) {
    throw std::invalid_argument("random_unstable_system: bad radius range");
  }
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> target(
      rho_min, std::nextafter(rho_max, std::numeric_limits<double>::infinity()));
  const CostSpec cost = CostSpec::identity(state_dim, input_dim);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    LinearSystem sys;
    sys.a = MatrixXd::NullaryExpr(state_dim, state_dim, [&] { return normal(rng); });
    sys.b = MatrixXd::NullaryExpr(state_dim, input_dim, [&] { return normal(rng); });
    const double rho = spectral_radius(sys.a);
    if (rho < 1e-6) continue;
    sys.a *= target(rng) / rho;
    try {
      const DareSolution sol = solve_dare(sys, cost, 1.0);
      if (sol.value.trace() <= max_optimal_cost) return sys;
    } catch (const NotStabilizable&) {
    }
  }
  throw NotStabilizable("random_unstable_system: no stabilizable draw in 1000 attempts");
}

SystemPtr make_system(const SystemSpec& spec) {
  if (spec.kind == SystemSpec::Kind::kLinear) return linear_as_nonlinear(spec.linear);
  return cartpole(spec.cartpole);
}

// ---------------------------------------------------------------------------
// Config

namespace {

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> get_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return get_or<T>(j, key, T{});
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

const char* estimator_name(GradientEstimator e) {
  return e == GradientEstimator::kSensitivity ? "sensitivity" : "zeroth";
}

GradientEstimator parse_estimator(const std::string& s) {
  if (s == "sensitivity") return GradientEstimator::kSensitivity;
  if (s == "zeroth") return GradientEstimator::kZerothOrder;
  throw ConfigError("unknown estimator '" + s + "'");
}

const char* search_name(SearchMode m) {
  switch (m) {
    case SearchMode::kBinary: return "binary";
    case SearchMode::kRandom: return "random";
    default: return "auto";
  }
}

SearchMode parse_search(const std::string& s) {
  if (s == "auto") return SearchMode::kAuto;
  if (s == "binary") return SearchMode::kBinary;
  if (s == "random") return SearchMode::kRandom;
  throw ConfigError("unknown search mode '" + s + "'");
}

json system_json(const SystemSpec& s) {
  if (s.kind == SystemSpec::Kind::kLinear) {
    return {{"type", "linear"}, {"A", matrix_to_json(s.linear.a)},
            {"B", matrix_to_json(s.linear.b)}};
  }
  const auto& p = s.cartpole;
  return {{"type", "cartpole"},     {"pole_mass", p.pole_mass},
          {"cart_mass", p.cart_mass}, {"length", p.length},
          {"gravity", p.gravity},     {"time_step", p.time_step}};
}

SystemSpec parse_system(const json& j) {
  SystemSpec s;
  const std::string type = get_or<std::string>(j, "type", "cartpole");
  if (type == "linear") {
    check_keys(j, "system", {"type", "A", "B"});
    if (!j.contains("A") || !j.contains("B")) {
      throw ConfigError("linear system needs A and B");
    }
    try {
      s.kind = SystemSpec::Kind::kLinear;
      s.linear.a = matrix_from_json(j.at("A"));
      s.linear.b = matrix_from_json(j.at("B"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("system: ") + e.what());
    }
    s.linear.validate();
  } else if (type == "cartpole") {
    check_keys(j, "system", {"type", "pole_mass", "cart_mass", "length",
                             "gravity", "time_step"});
    CartPoleParams p;
    p.pole_mass = get_or(j, "pole_mass", p.pole_mass);
    p.cart_mass = get_or(j, "cart_mass", p.cart_mass);
    p.length = get_or(j, "length", p.length);
    p.gravity = get_or(j, "gravity", p.gravity);
    p.time_step = get_or(j, "time_step", p.time_step);
    p.validate();
    s.cartpole = p;
  } else {
    throw ConfigError("unknown system type '" + type + "'");
  }
  return s;
}

PgConfig sampled_pg_defaults() {
  PgConfig pg;
  pg.optimizer = Optimizer::kAdam;
  pg.stop = PgStop::kFixedSteps;
  pg.max_steps = 120;
  pg.step_size = 0.1;
  return pg;
}

}  // namespace

CostSpec ExperimentConfig::cost() const {
  const double scale = cost_scale.value_or(
      system.kind == SystemSpec::Kind::kCartPole ? system.cartpole.time_step : 1.0);
  const SystemPtr sys = make_system(system);
  return CostSpec::scaled_identity(sys->state_dim(), sys->input_dim(), scale);
}

json ExperimentConfig::to_json() const {
  const auto& o = run.oracle;
  const auto& pg = run.anneal.pg;
  const auto& an = run.anneal;
  json j;
  j["name"] = name;
  j["seed"] = seed;
  j["system"] = system_json(system);
  j["cost"] = {{"scale", cost().q(0, 0)}};
  j["mode"] = run.mode == OracleMode::kExact ? "exact" : "sampled";
  j["oracle"] = {{"samples", o.samples},
                 {"horizon", o.horizon},
                 {"radius", o.radius},
                 {"cap", o.cap},
                 {"smoothing_radius", o.smoothing_radius},
                 {"estimator", estimator_name(o.estimator)},
                 {"blowup_factor", o.blowup_factor}};
  j["pg"] = {{"optimizer", pg.optimizer == Optimizer::kAdam ? "adam" : "gd"},
             {"stop", pg.stop == PgStop::kFixedSteps ? "fixed" : "certified"},
             {"step_size", pg.step_size},
             {"lr_over_radius", opt_json(lr_over_radius)},
             {"max_steps", pg.max_steps},
             {"gap_target", opt_json(pg.gap_target)},
             {"adam_beta1", pg.adam_beta1},
             {"adam_beta2", pg.adam_beta2},
             {"adam_epsilon", pg.adam_epsilon},
             {"guard_steps", pg.guard_steps}};
  j["anneal"] = {{"ratios", {an.ratios.low, an.ratios.high}},
                 {"tolerance_factor", opt_json(an.tolerance_factor)},
                 {"search_budget", opt_json(an.search_budget)},
                 {"search", search_name(an.search)},
                 {"random_search_max_iters", an.random_search_max_iters},
                 {"max_outer_iterations", an.max_outer_iterations},
                 {"initial_gamma", opt_json(run.initial_gamma)}};
  j["roa"] = {{"directions", roa.directions},
              {"horizon", roa.horizon},
              {"convergence_tol", roa.convergence_tol},
              {"bisect_tol", roa.bisect_tol},
              {"scan_step", roa.scan_step},
              {"ceiling", roa.ceiling},
              {"seed", roa.seed}};
  j["suite"] = {{"instances", suite.instances},
                {"dims", suite.dims},
                {"rho_min", suite.rho_min},
                {"rho_max", suite.rho_max},
                {"sampled", suite.sampled}};
  j["cartpole"] = {{"radii", cartpole.radii}, {"trials", cartpole.trials}};
  j["counterexample"] = {{"gamma", counterexample_gamma}};
  return j;
}

namespace {

ExperimentConfig parse_config(const json& j) {
  check_keys(j, "config", {"name", "seed", "out_dir", "system", "cost", "mode",
                           "oracle", "pg", "anneal", "roa", "suite", "cartpole",
                           "counterexample"});
  ExperimentConfig c;
  c.name = get_or<std::string>(j, "name", c.name);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir);
  c.system = parse_system(j.value("system", json::object()));
  const bool linear = c.system.kind == SystemSpec::Kind::kLinear;

  const json cost = j.value("cost", json::object());
  check_keys(cost, "cost", {"scale"});
  c.cost_scale = get_opt<double>(cost, "scale");
  if (c.cost_scale && !(*c.cost_scale > 0)) throw ConfigError("cost scale must be > 0");

  const std::string mode = get_or<std::string>(j, "mode", linear ? "exact" : "sampled");
  if (mode == "exact") {
    c.run.mode = OracleMode::kExact;
  } else if (mode == "sampled") {
    c.run.mode = OracleMode::kSampled;
  } else {
    throw ConfigError("unknown mode '" + mode + "'");
  }
  if (c.run.mode == OracleMode::kExact && !linear) {
    throw ConfigError("exact mode needs a linear system");
  }

  const json o = j.value("oracle", json::object());
  check_keys(o, "oracle", {"samples", "horizon", "radius", "cap", "smoothing_radius",
                           "estimator", "blowup_factor"});
  auto& oc = c.run.oracle;
  oc.samples = get_or(o, "samples", oc.samples);
  oc.horizon = get_or(o, "horizon", oc.horizon);
  oc.radius = get_or(o, "radius", oc.radius);
  oc.cap = get_or(o, "cap", oc.cap);
  oc.smoothing_radius = get_or(o, "smoothing_radius", oc.smoothing_radius);
  oc.estimator = parse_estimator(get_or<std::string>(o, "estimator", "sensitivity"));
  oc.blowup_factor = get_or(o, "blowup_factor", oc.blowup_factor);
  oc.validate();

  const json p = j.value("pg", json::object());
  check_keys(p, "pg", {"optimizer", "stop", "step_size", "lr_over_radius",
                       "max_steps", "gap_target", "adam_beta1", "adam_beta2",
                       "adam_epsilon", "guard_steps"});
  PgConfig pg = c.run.mode == OracleMode::kExact ? PgConfig{} : sampled_pg_defaults();
  const std::string opt = get_or<std::string>(
      p, "optimizer", pg.optimizer == Optimizer::kAdam ? "adam" : "gd");
  if (opt == "adam") {
    pg.optimizer = Optimizer::kAdam;
  } else if (opt == "gd") {
    pg.optimizer = Optimizer::kPlainGd;
  } else {
    throw ConfigError("unknown optimizer '" + opt + "'");
  }
  const std::string stop = get_or<std::string>(
      p, "stop", pg.stop == PgStop::kFixedSteps ? "fixed" : "certified");
  if (stop == "fixed") {
    pg.stop = PgStop::kFixedSteps;
  } else if (stop == "certified") {
    pg.stop = PgStop::kCertifiedGap;
  } else {
    throw ConfigError("unknown pg stop '" + stop + "'");
  }
  if (pg.stop == PgStop::kCertifiedGap && c.run.mode != OracleMode::kExact) {
    throw ConfigError("certified pg stopping needs the exact oracle");
  }
  pg.step_size = get_or(p, "step_size", pg.step_size);
  c.lr_over_radius = get_opt<double>(p, "lr_over_radius");
  if (!p.contains("lr_over_radius") && !p.contains("step_size") &&
      pg.optimizer == Optimizer::kAdam) {
    c.lr_over_radius = 0.01;
  }
  if (c.lr_over_radius && !(*c.lr_over_radius > 0)) {
    throw ConfigError("pg: lr_over_radius must be > 0");
  }
  if (c.lr_over_radius) pg.step_size = *c.lr_over_radius / oc.radius;
  pg.max_steps = get_or(p, "max_steps", pg.max_steps);
  pg.gap_target = get_opt<double>(p, "gap_target");
  pg.adam_beta1 = get_or(p, "adam_beta1", pg.adam_beta1);
  pg.adam_beta2 = get_or(p, "adam_beta2", pg.adam_beta2);
  pg.adam_epsilon = get_or(p, "adam_epsilon", pg.adam_epsilon);
  pg.guard_steps = get_or(p, "guard_steps", pg.guard_steps);
  c.run.anneal.pg = pg;

  const json a = j.value("anneal", json::object());
  check_keys(a, "anneal", {"ratios", "tolerance_factor", "search_budget", "search",
                           "random_search_max_iters", "max_outer_iterations",
                           "initial_gamma"});
  auto& an = c.run.anneal;
  if (a.contains("ratios")) {
    const auto r = get_or<std::vector<double>>(a, "ratios", {});
    if (r.size() != 2) throw ConfigError("anneal.ratios must have two entries");
    an.ratios = {r[0], r[1]};
  }
  an.tolerance_factor = get_opt<double>(a, "tolerance_factor");
  an.search_budget = get_opt<long>(a, "search_budget");
  an.search = parse_search(get_or<std::string>(a, "search", "auto"));
  an.random_search_max_iters = get_or(a, "random_search_max_iters", an.random_search_max_iters);
  an.max_outer_iterations = get_or(a, "max_outer_iterations", an.max_outer_iterations);
  c.run.initial_gamma = get_opt<double>(a, "initial_gamma");
  an.validate();

  const json r = j.value("roa", json::object());
  check_keys(r, "roa", {"directions", "horizon", "convergence_tol", "bisect_tol",
                        "scan_step", "ceiling", "seed"});
  c.roa.directions = get_or(r, "directions", c.roa.directions);
  c.roa.horizon = get_or(r, "horizon", c.roa.horizon);
  c.roa.convergence_tol = get_or(r, "convergence_tol", c.roa.convergence_tol);
  c.roa.bisect_tol = get_or(r, "bisect_tol", c.roa.bisect_tol);
  c.roa.scan_step = get_or(r, "scan_step", c.roa.scan_step);
  c.roa.ceiling = get_or(r, "ceiling", c.roa.ceiling);
  c.roa.seed = get_or(r, "seed", c.roa.seed);
  c.roa.validate();

  const json s = j.value("suite", json::object());
  check_keys(s, "suite", {"instances", "dims", "rho_min", "rho_max", "sampled"});
  c.suite.instances = get_or(s, "instances", c.suite.instances);
  c.suite.dims = get_or(s, "dims", c.suite.dims);
  c.suite.rho_min = get_or(s, "rho_min", c.suite.rho_min);
  c.suite.rho_max = get_or(s, "rho_max", c.suite.rho_max);
  c.suite.sampled = get_or(s, "sampled", c.suite.sampled);
  if (c.suite.instances < 0 || c.suite.dims.empty() ||
      std::any_of(c.suite.dims.begin(), c.suite.dims.end(), [](long d) { return d < 1; })) {
    throw ConfigError("suite: need instances >= 0 and positive dims");
  }
  if (!(c.suite.rho_min > 0 && c.suite.rho_min <= c.suite.rho_max)) {
    throw ConfigError("suite: need 0 < rho_min <= rho_max");
  }

  const json cp = j.value("cartpole", json::object());
  check_keys(cp, "cartpole", {"radii", "trials"});
  c.cartpole.radii = get_or(cp, "radii", c.cartpole.radii);
  c.cartpole.trials = get_or(cp, "trials", c.cartpole.trials);
  if (c.cartpole.radii.empty() || c.cartpole.trials < 1 ||
      std::any_of(c.cartpole.radii.begin(), c.cartpole.radii.end(),
                  [](double v) { return !(v > 0); })) {
    throw ConfigError("cartpole: need positive radii and trials >= 1");
  }

  const json ce = j.value("counterexample", json::object());
  check_keys(ce, "counterexample", {"gamma"});
  c.counterexample_gamma = get_or(ce, "gamma", c.counterexample_gamma);
  return c;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    return parse_config(j);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::uint64_t ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("seed");
  return config_hash(j);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return ExperimentConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Runs

namespace {

RunConfig trial_run_config(const ExperimentConfig& cfg, const TrialSpec& trial) {
  RunConfig rc = cfg.run;
  rc.oracle.radius = trial.radius;
  rc.oracle.seed = trial.seed;
  rc.anneal.seed = trial.seed;
  if (cfg.lr_over_radius && rc.anneal.pg.optimizer == Optimizer::kAdam) {
    rc.anneal.pg.step_size = *cfg.lr_over_radius / trial.radius;
  }
  return rc;
}

json trial_json(const TrialSpec& t) {
  return {{"index", t.index}, {"radius", t.radius}, {"seed", t.seed}};
}

json manifest_json(const ExperimentConfig& cfg, const TrialSpec& trial,
                   const AnnealState& state, const std::string& status,
                   const std::string& message) {
  json m;
  m["config"] = cfg.to_json();
  m["config_hash"] = hex64(cfg.hash());
  m["seed"] = cfg.seed;
  m["trial"] = trial_json(trial);
  m["status"] = status;
  if (!message.empty()) m["message"] = message;
  m["state"] = to_json(state);
  return m;
}

void write_trace(const std::string& path, const ExperimentConfig& cfg,
                 const TrialOutcome& out) {
  CsvTable t;
  t.comments = {"config_hash " + hex64(cfg.hash()), "seed " + std::to_string(cfg.seed),
                "trial_seed " + std::to_string(out.trial.seed)};
  t.header = {"t", "gamma", "next_gamma", "pg_steps", "cost_start", "cost_end",
              "next_cost", "search_queries", "eval_queries", "grad_queries",
              "lin_gain_error"};
  for (std::size_t i = 0; i < out.state.history.size(); ++i) {
    const auto& r = out.state.history[i];
    const double err = i < out.lin_gain_error.size() ? out.lin_gain_error[i] : kNaN;
    t.add_row({std::to_string(r.t), format_double(r.gamma), format_double(r.next_gamma),
               std::to_string(r.pg_steps), format_double(r.cost_start),
               format_double(r.cost_end), format_double(r.next_cost),
               std::to_string(r.search_queries), std::to_string(r.eval_queries),
               std::to_string(r.grad_queries), format_double(err)});
  }
  write_csv_file(path, t);
}

}  // namespace

TrialOutcome run_trial(const ExperimentConfig& cfg, const TrialSpec& trial,
                       const std::string& dir, bool resume) {
  const SystemPtr sys = make_system(cfg.system);
  const CostSpec cost = cfg.cost();
  const RunConfig rc = trial_run_config(cfg, trial);
  const std::string manifest = (fs::path(dir) / "manifest.json").string();
  const std::string log_path = (fs::path(dir) / "queries.jsonl").string();
  fs::create_directories(dir);

  TrialOutcome out;
  out.trial = trial;
  if (resume && fs::exists(manifest)) {
    json m;
    try {
      m = json::parse(read_text_file(manifest));
    } catch (const json::exception& e) {
      throw ConfigError(manifest + ": " + e.what());
    }
    if (m.value("config_hash", "") != hex64(cfg.hash()) ||
        m.value("seed", std::uint64_t{0}) != cfg.seed ||
        m.at("trial") != trial_json(trial)) {
      throw ConfigError(manifest + ": saved run does not match this config");
    }
    out.state = anneal_state_from_json(m.at("state"));
  } else {
    const double gamma0 = rc.initial_gamma.value_or(default_initial_gamma(*sys));
    out.state = initial_anneal_state(sys->state_dim(), sys->input_dim(), gamma0);
    std::error_code ec;
    fs::remove(log_path, ec);
  }

  const auto save = [&](const AnnealState& s) {
    write_text_file(manifest, manifest_json(cfg, trial, s, s.finished ? "finished" : "running", "")
                                  .dump(2));
  };
  save(out.state);

  try {
    if (!out.state.finished) {
      if (rc.mode == OracleMode::kExact) {
        const auto* lin = dynamic_cast<const LinearDynamics*>(sys.get());
        if (!lin) throw ConfigError("exact oracles need a linear system");
        ExactLinearOracle oracle(lin->linear(), cost);
        discount_anneal(oracle, true, rc.anneal, out.state, save);
      } else {
        SampledOracle oracle(sys, cost, rc.oracle, std::make_shared<QueryLog>(log_path));
        discount_anneal(oracle, sys->is_linear(), rc.anneal, out.state, save);
      }
    }
  } catch (const Error& e) {
    out.status = e.kind();
    out.message = e.what();
    write_text_file(manifest,
                    manifest_json(cfg, trial, out.state, e.kind(), e.what()).dump(2));
    write_trace((fs::path(dir) / "trace.csv").string(), cfg, out);
    return out;
  }

  // Distance to the discounted LQR gain of the linearization at each g_t.
  const auto [a_jac, b_jac] = jacobian_linearization(*sys);
  const LinearSystem lin{a_jac, b_jac};
  for (const auto& rec : out.state.history) {
    try {
      out.lin_gain_error.push_back((rec.gain - solve_dare(lin, cost, rec.gamma).gain).norm());
    } catch (const NotStabilizable&) {
      out.lin_gain_error.push_back(kNaN);
    }
  }
  out.final_cost = out.state.history.empty() ? kNaN : out.state.history.back().cost_end;
  write_matrix_csv((fs::path(dir) / "gain.csv").string(), out.state.gain);
  write_trace((fs::path(dir) / "trace.csv").string(), cfg, out);

  Rng rng(substream_seed(trial.seed, kTrialStream, 0));
  const VectorXd x0 = sample_sphere(sys->state_dim(), trial.radius, rng);
  const Rollout roll = damped_rollout(*sys, out.state.gain, 1.0, x0, rc.oracle.horizon, cost);
  {
    std::ostringstream os;
    write_rollout_csv(os, roll);
    write_text_file((fs::path(dir) / "rollout.csv").string(), os.str());
  }

  if (!sys->is_linear()) {
    out.roa = estimate_roa(*sys, out.state.gain, cfg.roa, "pg");
  }
  json summary = {{"config_hash", hex64(cfg.hash())},
                  {"seed", cfg.seed},
                  {"trial", trial_json(trial)},
                  {"outer_iterations", out.state.outer_iterations()},
                  {"final_cost", out.final_cost},
                  {"roa", out.roa ? json(out.roa->rho_roa) : json(nullptr)},
                  {"gain", matrix_to_json(out.state.gain)}};
  write_text_file((fs::path(dir) / "summary.json").string(), summary.dump(2));
  return out;
}

RoaReport run_baseline_lqr(const ExperimentConfig& cfg) {
  const SystemPtr sys = make_system(cfg.system);
  const CostSpec cost = cfg.cost();
  const auto [a_jac, b_jac] = jacobian_linearization(*sys);
  const DareSolution sol = solve_dare(LinearSystem{a_jac, b_jac}, cost, 1.0);
  RoaReport report;
  if (sys->is_linear()) {
    report.controller = "lqr";
    report.rho_roa = std::numeric_limits<double>::infinity();
  } else {
    report = estimate_roa(*sys, sol.gain, cfg.roa, "lqr");
  }
  write_matrix_csv((fs::path(cfg.out_dir) / "lqr_gain.csv").string(), sol.gain);
  CsvTable t;
  t.comments = {"config_hash " + hex64(cfg.hash()), "seed " + std::to_string(cfg.seed)};
  t.header = {"controller", "roa", "source"};
  t.add_row({"lqr", format_double(report.rho_roa), "computed"});
  if (cfg.system.kind == SystemSpec::Kind::kCartPole) {
    t.add_row({"hinf", format_double(kHinfReferenceRoa), "external"});
  }
  write_csv_file((fs::path(cfg.out_dir) / "baselines.csv").string(), t);
  return report;
}

CartPoleSummary run_cartpole(const ExperimentConfig& cfg, bool resume) {
  if (cfg.system.kind != SystemSpec::Kind::kCartPole) {
    throw ConfigError("anneal-cartpole needs a cartpole system");
  }
  CartPoleSummary summary;
  const std::string hash = hex64(cfg.hash());

  CsvTable table, trials, traces;
  const std::vector<std::string> comments = {"config_hash " + hash,
                                             "seed " + std::to_string(cfg.seed)};
  table.comments = trials.comments = traces.comments = comments;
  table.header = {"r", "roa_min", "roa_max", "trials", "iters_max",
                  "final_cost_min", "final_cost_max"};
  trials.header = {"r", "trial", "seed", "status", "outer_iterations", "roa", "final_cost"};
  traces.header = {"r", "trial", "t", "gamma", "next_gamma", "pg_steps", "cost_end",
                   "lin_gain_error"};

  for (std::size_t ri = 0; ri < cfg.cartpole.radii.size(); ++ri) {
    const double r = cfg.cartpole.radii[ri];
    double roa_min = kNaN, roa_max = kNaN, cost_min = kNaN, cost_max = kNaN;
    long ok = 0, iters_max = 0;
    for (long k = 0; k < cfg.cartpole.trials; ++k) {
      TrialSpec spec{k, r, substream_seed(cfg.seed, kTrialStream + ri, static_cast<std::uint64_t>(k))};
      const fs::path dir = fs::path(cfg.out_dir) / ("r" + short_number(r)) / ("trial" + std::to_string(k));
      TrialOutcome out = run_trial(cfg, spec, dir.string(), resume);
      const double roa = out.roa ? out.roa->rho_roa : kNaN;
      trials.add_row({format_double(r), std::to_string(k), std::to_string(spec.seed), out.status,
                      std::to_string(out.state.outer_iterations()), format_double(roa),
                      format_double(out.status == "ok" ? out.final_cost : kNaN)});
      for (std::size_t i = 0; i < out.state.history.size(); ++i) {
        const auto& rec = out.state.history[i];
        traces.add_row({format_double(r), std::to_string(k), std::to_string(rec.t),
                        format_double(rec.gamma), format_double(rec.next_gamma),
                        std::to_string(rec.pg_steps), format_double(rec.cost_end),
                        format_double(i < out.lin_gain_error.size() ? out.lin_gain_error[i] : kNaN)});
      }
      if (out.status == "ok") {
        const auto upd_min = [](double& m, double v) { m = std::isnan(m) ? v : std::min(m, v); };
        const auto upd_max = [](double& m, double v) { m = std::isnan(m) ? v : std::max(m, v); };
        upd_min(roa_min, roa);
        upd_max(roa_max, roa);
        upd_min(cost_min, out.final_cost);
        upd_max(cost_max, out.final_cost);
        iters_max = std::max(iters_max, out.state.outer_iterations());
        ++ok;
      }
      summary.trials.push_back(std::move(out));
    }
    table.add_row({format_double(r), format_double(roa_min), format_double(roa_max),
                   std::to_string(ok), std::to_string(iters_max), format_double(cost_min),
                   format_double(cost_max)});
    summary.table.push_back({{"r", r}, {"roa_min", roa_min}, {"roa_max", roa_max},
                             {"trials", ok}, {"iters_max", iters_max},
                             {"final_cost_min", cost_min}, {"final_cost_max", cost_max}});
  }
  const fs::path root(cfg.out_dir);
  write_csv_file((root / "table1.csv").string(), table);
  write_csv_file((root / "trials.csv").string(), trials);
  write_csv_file((root / "traces.csv").string(), traces);
  summary.lqr_roa = run_baseline_lqr(cfg);
  return summary;
}

TrialOutcome run_linear(const ExperimentConfig& cfg, bool resume) {
  if (cfg.system.kind != SystemSpec::Kind::kLinear) {
    throw ConfigError("anneal-linear with a system needs a linear system");
  }
  const TrialSpec spec{0, cfg.run.oracle.radius, cfg.seed};
  return run_trial(cfg, spec, cfg.out_dir, resume);
}

std::vector<SuiteRow> run_linear_suite(const ExperimentConfig& cfg) {
  std::vector<SuiteRow> rows;
  for (long i = 0; i < cfg.suite.instances; ++i) {
    Rng rng(substream_seed(cfg.seed, kSuiteStream, static_cast<std::uint64_t>(i)));
    const long dx = cfg.suite.dims[static_cast<std::size_t>(i) % cfg.suite.dims.size()];
    const long du = std::uniform_int_distribution<long>(1, dx)(rng);
    const LinearSystem sys =
        random_unstable_system(rng, dx, du, cfg.suite.rho_min, cfg.suite.rho_max);
    const CostSpec cost = CostSpec::scaled_identity(dx, du, cfg.cost_scale.value_or(1.0));
    const double opt = solve_dare(sys, cost, 1.0).value.trace();

    std::vector<OracleMode> modes{OracleMode::kExact};
    if (cfg.suite.sampled) modes.push_back(OracleMode::kSampled);
    for (const OracleMode mode : modes) {
      SuiteRow row;
      row.instance = i;
      row.mode = mode == OracleMode::kExact ? "exact" : "sampled";
      row.state_dim = dx;
      row.input_dim = du;
      row.rho_open = spectral_radius(sys.a);
      row.optimal_cost = opt;
      row.search_budget = 3 * (static_cast<long>(std::ceil(4.0 * std::log(std::max(opt, std::exp(1.0))))) + 10);
      RunConfig rc = cfg.run;
      rc.mode = mode;
      if (mode == OracleMode::kExact) {
        rc.anneal.pg = PgConfig{};
      } else if (cfg.run.mode == OracleMode::kExact) {
        rc.anneal.pg = sampled_pg_defaults();
        rc.anneal.pg.step_size = 0.01 / rc.oracle.radius;
      }
      rc.oracle.seed = rc.anneal.seed = substream_seed(cfg.seed, kSuiteStream + 1, static_cast<std::uint64_t>(i));
      try {
        const AnnealState st = discount_anneal(linear_as_nonlinear(sys), cost, rc);
        row.final_cost = lqr_cost(sys, cost, st.gain, 1.0);
        row.gap = row.final_cost - opt;
        row.outer_iterations = st.outer_iterations();
        for (const auto& rec : st.history) {
          row.max_search_queries = std::max(row.max_search_queries, rec.search_queries);
          row.total_queries += rec.eval_queries + rec.grad_queries;
        }
        row.rho_closed = spectral_radius(sys.a + sys.b * st.gain);
      } catch (const Error& e) {
        row.status = e.kind();
        row.message = e.what();
        row.final_cost = row.gap = row.rho_closed = kNaN;
      }
      rows.push_back(row);
    }
  }

  CsvTable t;
  t.comments = {"config_hash " + hex64(cfg.hash()), "seed " + std::to_string(cfg.seed)};
  t.header = {"instance", "mode", "d_x", "d_u", "rho_open", "trace_pstar", "final_cost",
              "gap", "outer_iterations", "max_search_queries", "search_budget",
              "total_queries", "rho_closed", "status"};
  for (const auto& r : rows) {
    t.add_row({std::to_string(r.instance), r.mode, std::to_string(r.state_dim),
               std::to_string(r.input_dim), format_double(r.rho_open),
               format_double(r.optimal_cost), format_double(r.final_cost),
               format_double(r.gap), std::to_string(r.outer_iterations),
               std::to_string(r.max_search_queries), std::to_string(r.search_budget),
               std::to_string(r.total_queries), format_double(r.rho_closed), r.status});
  }
  write_csv_file((fs::path(cfg.out_dir) / "linear_suite.csv").string(), t);
  return rows;
}

CounterexampleReport run_counterexample(const ExperimentConfig& cfg) {
  CounterexampleReport rep;
  rep.gamma = cfg.counterexample_gamma;
  rep.witness = reward_shaping_counterexample(rep.gamma, CostSpec::identity(2, 1));
  const auto& w = rep.witness;
  rep.record = {{"config_hash", hex64(cfg.hash())},
                {"seed", cfg.seed},
                {"gamma", rep.gamma},
                {"beta", w.beta},
                {"A", matrix_to_json(w.system.a)},
                {"B", matrix_to_json(w.system.b)},
                {"gain", matrix_to_json(w.gain)},
                {"rho_damped", w.rho_damped},
                {"rho_undamped", w.rho_undamped}};
  write_text_file((fs::path(cfg.out_dir) / "counterexample.json").string(),
                  rep.record.dump(2) + "\n");
  return rep;
}

}  // namespace dastab
