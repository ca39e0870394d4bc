#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dastab/anneal.hpp"
#include "dastab/bench.hpp"
#include "dastab/dynamics.hpp"
#include "dastab/errors.hpp"
#include "dastab/io.hpp"
#include "dastab/lqr.hpp"
#include "dastab/matops.hpp"
#include "dastab/oracles.hpp"

namespace py = pybind11;
using namespace dastab;

namespace {

py::dict state_dict(const AnnealState& s) {
  py::dict d;
  d["t"] = s.t;
  d["gamma"] = s.gamma;
  d["gain"] = s.gain;
  d["finished"] = s.finished;
  d["outer_iterations"] = s.outer_iterations();
  py::list history;
  for (const auto& r : s.history) {
    py::dict h;
    h["t"] = r.t;
    h["gamma"] = r.gamma;
    h["next_gamma"] = r.next_gamma;
    h["pg_steps"] = r.pg_steps;
    h["cost_start"] = r.cost_start;
    h["cost_end"] = r.cost_end;
    h["optimal_cost"] = r.optimal_cost;
    h["search_queries"] = r.search_queries;
    h["gain"] = r.gain;
    history.append(h);
  }
  d["history"] = history;
  return d;
}

// pybind11 holders cannot point to const, so systems cross the boundary as
// shared_ptr<NonlinearSystem>. Nothing mutates them.
using PySystem = std::shared_ptr<NonlinearSystem>;

PySystem to_py(SystemPtr s) { return std::const_pointer_cast<NonlinearSystem>(s); }

SystemPtr system_from(const py::object& obj) {
  if (py::isinstance<LinearSystem>(obj)) return linear_as_nonlinear(obj.cast<LinearSystem>());
  if (py::isinstance<CartPoleParams>(obj)) return cartpole(obj.cast<CartPoleParams>());
  return obj.cast<PySystem>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Discount-annealing stabilization via policy gradients";
  m.attr("__version__") = "0.1.0";

  // Library errors surface as dastab.Error with a `kind` attribute.
  static PyObject* error_type =
      py::exception<Error>(m, "Error", PyExc_RuntimeError).release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::handle type(error_type);
      py::object err = type(py::str(e.what()));
      err.attr("kind") = e.kind();
      PyErr_SetObject(type.ptr(), err.ptr());
    }
  });

  py::class_<LinearSystem>(m, "LinearSystem")
      .def(py::init([](MatrixXd a, MatrixXd b) {
             LinearSystem s{std::move(a), std::move(b)};
             s.validate();
             return s;
           }),
           py::arg("a"), py::arg("b"))
      .def_readwrite("a", &LinearSystem::a)
      .def_readwrite("b", &LinearSystem::b)
      .def_property_readonly("state_dim", &LinearSystem::state_dim)
      .def_property_readonly("input_dim", &LinearSystem::input_dim);

  py::class_<CostSpec>(m, "CostSpec")
      .def(py::init([](MatrixXd q, MatrixXd r) {
             CostSpec c{std::move(q), std::move(r)};
             c.validate(c.q.rows(), c.r.rows());
             return c;
           }),
           py::arg("q"), py::arg("r"))
      .def_static("identity", &CostSpec::identity)
      .def_static("scaled_identity", &CostSpec::scaled_identity)
      .def_readwrite("q", &CostSpec::q)
      .def_readwrite("r", &CostSpec::r);

  py::class_<CartPoleParams>(m, "CartPoleParams")
      .def(py::init<>())
      .def_readwrite("pole_mass", &CartPoleParams::pole_mass)
      .def_readwrite("cart_mass", &CartPoleParams::cart_mass)
      .def_readwrite("length", &CartPoleParams::length)
      .def_readwrite("gravity", &CartPoleParams::gravity)
      .def_readwrite("time_step", &CartPoleParams::time_step);

  py::class_<NonlinearSystem, PySystem>(m, "NonlinearSystem")
      .def_property_readonly("state_dim", &NonlinearSystem::state_dim)
      .def_property_readonly("input_dim", &NonlinearSystem::input_dim)
      .def("step", py::overload_cast<const VectorXd&, const VectorXd&>(
                       &NonlinearSystem::step, py::const_))
      .def("jacobian", py::overload_cast<const VectorXd&, const VectorXd&>(
                           &NonlinearSystem::jacobian, py::const_))
      .def("__repr__", &NonlinearSystem::descriptor);

  m.def("cartpole", [](const CartPoleParams& p) { return to_py(cartpole(p)); },
        py::arg("params") = CartPoleParams{});
  m.def("linear_system", [](const LinearSystem& s) { return to_py(linear_as_nonlinear(s)); });
  m.def("jacobian_linearization",
        [](const py::object& sys) { return jacobian_linearization(*system_from(sys)); });

  m.def("spectral_radius", [](const MatrixXd& a) { return spectral_radius(a); });
  m.def("op_norm", [](const MatrixXd& a) { return op_norm(a); });
  m.def("dlyap", [](const MatrixXd& a, const MatrixXd& sigma) { return dlyap(a, sigma); },
        py::arg("a"), py::arg("sigma"));
  m.def("solve_dare",
        [](const LinearSystem& s, const CostSpec& c, double gamma) {
          const DareSolution sol = solve_dare(s, c, gamma);
          return py::make_tuple(sol.value, sol.gain);
        },
        py::arg("system"), py::arg("cost"), py::arg("gamma") = 1.0,
        "Returns (P, K) for the discounted DARE, with u = K x.");
  m.def("lqr_cost", &lqr_cost, py::arg("system"), py::arg("cost"), py::arg("gain"),
        py::arg("gamma") = 1.0);
  m.def("lqr_grad", &lqr_grad, py::arg("system"), py::arg("cost"), py::arg("gain"),
        py::arg("gamma") = 1.0);

  m.def("eps_eval",
        [](const py::object& sys, const MatrixXd& gain, double gamma, const CostSpec& cost,
           long samples, long horizon, double radius, double cap, std::uint64_t seed) {
          OracleConfig cfg;
          cfg.samples = samples;
          cfg.horizon = horizon;
          cfg.radius = radius;
          cfg.cap = cap;
          cfg.seed = seed;
          cfg.validate();
          const QueryResult q = eps_eval(*system_from(sys), gain, gamma, cfg, cost);
          return py::make_tuple(q.value, q.std_error, q.capped);
        },
        py::arg("system"), py::arg("gain"), py::arg("gamma"), py::arg("cost"),
        py::arg("samples") = 1000, py::arg("horizon") = 400, py::arg("radius") = 0.1,
        py::arg("cap") = 1e9, py::arg("seed") = 0,
        "Returns (value, std_error, capped).");
  m.def("eps_grad",
        [](const py::object& sys, const MatrixXd& gain, double gamma, const CostSpec& cost,
           long samples, long horizon, double radius, std::uint64_t seed,
           const std::string& estimator) {
          OracleConfig cfg;
          cfg.samples = samples;
          cfg.horizon = horizon;
          cfg.radius = radius;
          cfg.seed = seed;
          cfg.validate();
          const SystemPtr s = system_from(sys);
          QueryResult q;
          if (estimator == "sensitivity") {
            q = eps_grad_sensitivity(*s, gain, gamma, cfg, cost);
          } else if (estimator == "zeroth") {
            q = eps_grad_zeroth_order(*s, gain, gamma, cfg, cost);
          } else {
            throw ConfigError("unknown estimator '" + estimator + "'");
          }
          return py::make_tuple(q.value, q.gradient);
        },
        py::arg("system"), py::arg("gain"), py::arg("gamma"), py::arg("cost"),
        py::arg("samples") = 1000, py::arg("horizon") = 400, py::arg("radius") = 0.1,
        py::arg("seed") = 0, py::arg("estimator") = "sensitivity",
        "Returns (value, gradient).");

  m.def("run_experiment",
        [](const std::string& config_json, const std::string& kind) {
          const ExperimentConfig cfg =
              ExperimentConfig::from_json(nlohmann::json::parse(config_json));
          if (kind == "anneal") {
            const TrialOutcome out = cfg.system.kind == SystemSpec::Kind::kLinear
                                         ? run_linear(cfg)
                                         : run_trial(cfg, {0, cfg.run.oracle.radius, cfg.seed},
                                                     cfg.out_dir, false);
            if (out.status != "ok") throw Error(out.status, out.message);
            py::dict d = state_dict(out.state);
            d["roa"] = out.roa ? py::cast(out.roa->rho_roa) : py::none();
            return d;
          }
          if (kind == "baseline-lqr") {
            py::dict d;
            d["rho_roa"] = run_baseline_lqr(cfg).rho_roa;
            return d;
          }
          throw ConfigError("unknown experiment kind '" + kind + "'");
        },
        py::arg("config_json"), py::arg("kind") = "anneal",
        "Runs one experiment from a JSON config and returns its summary.");

  m.def("anneal_linear",
        [](const LinearSystem& s, const CostSpec& c, std::optional<double> initial_gamma) {
          RunConfig rc;
          rc.mode = OracleMode::kExact;
          rc.initial_gamma = initial_gamma;
          return state_dict(discount_anneal(linear_as_nonlinear(s), c, rc));
        },
        py::arg("system"), py::arg("cost"), py::arg("initial_gamma") = py::none(),
        "Exact-oracle discount annealing from K = 0.");

  m.def("estimate_roa",
        [](const py::object& sys, const MatrixXd& gain, long directions, long horizon,
           std::uint64_t seed) {
          RoaConfig cfg;
          cfg.directions = directions;
          cfg.horizon = horizon;
          cfg.seed = seed;
          return estimate_roa(*system_from(sys), gain, cfg).rho_roa;
        },
        py::arg("system"), py::arg("gain"), py::arg("directions") = 64,
        py::arg("horizon") = 2000, py::arg("seed") = 0);

  m.def("reward_shaping_counterexample",
        [](double gamma) {
          const RewardShapingWitness w =
              reward_shaping_counterexample(gamma, CostSpec::identity(2, 1));
          py::dict d;
          d["beta"] = w.beta;
          d["a"] = w.system.a;
          d["b"] = w.system.b;
          d["gain"] = w.gain;
          d["rho_damped"] = w.rho_damped;
          d["rho_undamped"] = w.rho_undamped;
          return d;
        },
        py::arg("gamma") = 0.225);
}
