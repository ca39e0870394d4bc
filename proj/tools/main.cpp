// dastab command-line driver. Every subcommand prints a JSON summary on
// stdout; failures print {"error": {...}} on stderr and exit nonzero.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dastab/bench.hpp"
#include "dastab/errors.hpp"
#include "dastab/io.hpp"
#include "dastab/lqr.hpp"
#include "dastab/matops.hpp"

namespace {

using nlohmann::json;
using namespace dastab;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> oracle;
  std::optional<std::string> estimator;
  bool resume = false;
  std::string gain;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "master seed");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--oracle", a.oracle, "cost oracle")->check(CLI::IsMember({"exact", "sampled"}));
  cmd->add_option("--estimator", a.estimator, "gradient estimator")
      ->check(CLI::IsMember({"sensitivity", "zeroth"}));
}

ExperimentConfig load(const CommonArgs& a, const json& defaults) {
  json j = defaults;
  if (!a.config.empty()) {
    try {
      j = json::parse(read_text_file(a.config));
    } catch (const json::exception& e) {
      throw ConfigError(a.config + ": " + e.what());
    }
  }
  if (a.oracle) j["mode"] = *a.oracle;
  if (a.estimator) j["oracle"]["estimator"] = *a.estimator;
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  if (a.seed) cfg.seed = *a.seed;
  if (a.out) cfg.out_dir = *a.out;
  return cfg;
}

json header(const ExperimentConfig& cfg) {
  return {{"config_hash", hex64(cfg.hash())}, {"seed", cfg.seed}, {"out", cfg.out_dir}};
}

json roa_json(const RoaReport& r) {
  return {{"controller", r.controller}, {"rho_roa", r.rho_roa}, {"directions", r.directions}};
}

struct RunFailed {
  std::string kind;
  std::string message;
  json detail;
};

int emit_error(const std::string& kind, const std::string& message, const json& detail = {}) {
  json e = {{"kind", kind}, {"message", message}};
  if (!detail.is_null()) e["detail"] = detail;
  std::cerr << json{{"error", e}}.dump() << std::endl;
  return kind == "ConfigError" || kind == "UsageError" ? 2 : 1;
}

json trial_json(const TrialOutcome& t) {
  json j = {{"trial", t.trial.index},
            {"radius", t.trial.radius},
            {"seed", t.trial.seed},
            {"status", t.status},
            {"outer_iterations", t.state.outer_iterations()},
            {"final_cost", t.final_cost},
            {"roa", t.roa ? json(t.roa->rho_roa) : json(nullptr)}};
  if (!t.message.empty()) j["message"] = t.message;
  return j;
}

json cmd_anneal_linear(const CommonArgs& a) {
  const ExperimentConfig cfg = load(a, json::object());
  json out = header(cfg);
  if (cfg.system.kind == SystemSpec::Kind::kLinear) {
    const TrialOutcome t = run_linear(cfg, a.resume);
    out["run"] = trial_json(t);
    out["gain"] = matrix_to_json(t.state.gain);
    if (t.status != "ok") throw RunFailed{t.status, t.message, out};
    return out;
  }
  const auto rows = run_linear_suite(cfg);
  json inst = json::array();
  long failed = 0;
  for (const auto& r : rows) {
    inst.push_back({{"instance", r.instance}, {"mode", r.mode}, {"status", r.status},
                    {"gap", r.gap}, {"outer_iterations", r.outer_iterations},
                    {"rho_closed", r.rho_closed}});
    if (r.status != "ok") ++failed;
  }
  out["instances"] = std::move(inst);
  out["failed"] = failed;
  return out;
}

json cmd_anneal_cartpole(const CommonArgs& a) {
  const ExperimentConfig cfg = load(a, {{"system", {{"type", "cartpole"}}}});
  const CartPoleSummary s = run_cartpole(cfg, a.resume);
  json out = header(cfg);
  out["table"] = s.table;
  json trials = json::array();
  long failed = 0;
  for (const auto& t : s.trials) {
    trials.push_back(trial_json(t));
    if (t.status != "ok") ++failed;
  }
  out["trials"] = std::move(trials);
  if (s.lqr_roa) out["lqr"] = roa_json(*s.lqr_roa);
  if (failed > 0) {
    throw RunFailed{"TrialsFailed", std::to_string(failed) + " trial(s) failed", out};
  }
  return out;
}

json cmd_roa(const CommonArgs& a) {
  const ExperimentConfig cfg = load(a, {{"system", {{"type", "cartpole"}}}});
  const SystemPtr sys = make_system(cfg.system);
  MatrixXd gain;
  std::string controller = "gain";
  if (a.gain.empty()) {
    const auto [a_jac, b_jac] = jacobian_linearization(*sys);
    gain = solve_dare(LinearSystem{a_jac, b_jac}, cfg.cost(), 1.0).gain;
    controller = "lqr";
  } else {
    gain = read_matrix_csv(a.gain);
    if (gain.rows() != sys->input_dim() || gain.cols() != sys->state_dim()) {
      throw ConfigError(a.gain + ": gain has the wrong shape");
    }
  }
  const RoaReport r = estimate_roa(*sys, gain, cfg.roa, controller);
  json out = header(cfg);
  out.update(roa_json(r));
  out["radii"] = r.radii;
  write_text_file((std::filesystem::path(cfg.out_dir) / "roa.json").string(),
                  out.dump(2) + "\n");
  out.erase("radii");
  return out;
}

json cmd_counterexample(const CommonArgs& a) {
  const ExperimentConfig cfg = load(a, json::object());
  return run_counterexample(cfg).record;
}

json cmd_baseline_lqr(const CommonArgs& a) {
  const ExperimentConfig cfg = load(a, {{"system", {{"type", "cartpole"}}}});
  json out = header(cfg);
  out.update(roa_json(run_baseline_lqr(cfg)));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discount-annealing stabilization of unknown systems"};
  app.require_subcommand(1);
  CommonArgs args;

  auto* linear = app.add_subcommand("anneal-linear", "anneal a linear system or the random suite");
  add_common(linear, args);
  linear->add_flag("--resume", args.resume, "continue from the manifest in --out");
  auto* cart = app.add_subcommand("anneal-cartpole", "anneal the cart-pole over radii and trials");
  add_common(cart, args);
  cart->add_flag("--resume", args.resume, "continue from the manifests in --out");
  auto* roa = app.add_subcommand("roa", "estimate the region of attraction of a gain");
  add_common(roa, args);
  roa->add_option("--gain", args.gain, "gain CSV (defaults to the LQR gain)")
      ->check(CLI::ExistingFile);
  auto* counter = app.add_subcommand("counterexample", "reward-shaping counterexample");
  add_common(counter, args);
  auto* lqr = app.add_subcommand("baseline-lqr", "LQR baseline on the linearization");
  add_common(lqr, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error("UsageError", e.what());
  }

  try {
    json out;
    if (*linear) out = cmd_anneal_linear(args);
    else if (*cart) out = cmd_anneal_cartpole(args);
    else if (*roa) out = cmd_roa(args);
    else if (*counter) out = cmd_counterexample(args);
    else out = cmd_baseline_lqr(args);
    std::cout << out.dump(2) << std::endl;
    return 0;
  } catch (const RunFailed& f) {
    return emit_error(f.kind, f.message, f.detail);
  } catch (const Error& e) {
    return emit_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    return emit_error("InternalError", e.what());
  }
}
