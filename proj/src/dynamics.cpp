#include "dastab/dynamics.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace dastab {

VectorXd NonlinearSystem::step(const VectorXd& x, const VectorXd& u) const {
  VectorXd next(state_dim());
  step(x, u, next);
  return next;
}

std::pair<MatrixXd, MatrixXd> NonlinearSystem::jacobian(
    const VectorXd& x, const VectorXd& u) const {
  MatrixXd dx(state_dim(), state_dim());
  MatrixXd du(state_dim(), input_dim());
  jacobian(x, u, dx, du);
  return {dx, du};
}

LinearDynamics::LinearDynamics(LinearSystem sys) : sys_(std::move(sys)) {
  sys_.validate();
}

std::string LinearDynamics::descriptor() const {
  std::ostringstream os;
  os << "linear(d_x=" << sys_.state_dim() << ", d_u=" << sys_.input_dim()
     << ")";
  return os.str();
}

void LinearDynamics::step(const Eigen::Ref<const VectorXd>& x,
                          const Eigen::Ref<const VectorXd>& u,
                          Eigen::Ref<VectorXd> next) const {
  next.noalias() = sys_.a * x;
  next.noalias() += sys_.b * u;
}

void LinearDynamics::jacobian(const Eigen::Ref<const VectorXd>&,
                              const Eigen::Ref<const VectorXd>&,
                              Eigen::Ref<MatrixXd> dx,
                              Eigen::Ref<MatrixXd> du) const {
  dx = sys_.a;
  du = sys_.b;
}

std::shared_ptr<const LinearDynamics> linear_as_nonlinear(LinearSystem sys) {
  return std::make_shared<const LinearDynamics>(std::move(sys));
}

void CartPoleParams::validate() const {
  if (!(pole_mass > 0 && cart_mass > 0 && length > 0 && gravity > 0 &&
        time_step > 0)) {
    throw std::invalid_argument("CartPoleParams: all parameters must be > 0");
  }
}

CartPole::CartPole(CartPoleParams params) : params_(params) {
  params_.validate();
}

std::string CartPole::descriptor() const {
  std::ostringstream os;
  os << std::setprecision(17) << "cartpole(m_p=" << params_.pole_mass
     << ", m_c=" << params_.cart_mass << ", l=" << params_.length
     << ", g=" << params_.gravity << ", ts=" << params_.time_step << ")";
  return os.str();
}

namespace {

// Accelerations of the cart-pole and their partial derivatives with respect
// to (theta, theta_dot, u). The mass matrix is inverted in closed form.
struct CartPoleAccel {
  double x_dd, th_dd;
  double dx_dd_dth, dx_dd_dw, dx_dd_du;
  double dth_dd_dth, dth_dd_dw, dth_dd_du;
};

template <bool kWithJacobian>
CartPoleAccel cartpole_accel(const CartPoleParams& p, double th, double w,
                             double u) {
  const double mp = p.pole_mass, mc = p.cart_mass, l = p.length, g = p.gravity;
  const double s = std::sin(th), c = std::cos(th);
  const double f1 = u - mp * l * s * w * w;
  const double f2 = mp * g * l * s;
  // det of [[mp + mc, -mp l c], [-mp l c, mp l^2]] = mp l^2 (mc + mp s^2)
  const double det = mp * l * l * (mc + mp * s * s);
  const double n1 = mp * l * l * f1 + mp * l * c * f2;
  const double n2 = mp * l * c * f1 + (mp + mc) * f2;

  CartPoleAccel a{};
  a.x_dd = n1 / det;
  a.th_dd = n2 / det;
  if constexpr (kWithJacobian) {
    const double df1_dth = -mp * l * c * w * w;
    const double df1_dw = -2.0 * mp * l * s * w;
    const double df2_dth = mp * g * l * c;
    const double ddet_dth = 2.0 * mp * mp * l * l * s * c;
    const double dn1_dth = mp * l * l * df1_dth - mp * l * s * f2 +
                           mp * l * c * df2_dth;
    const double dn2_dth = -mp * l * s * f1 + mp * l * c * df1_dth +
                           (mp + mc) * df2_dth;
    const double inv_det2 = 1.0 / (det * det);
    a.dx_dd_dth = (dn1_dth * det - n1 * ddet_dth) * inv_det2;
    a.dth_dd_dth = (dn2_dth * det - n2 * ddet_dth) * inv_det2;
    a.dx_dd_dw = mp * l * l * df1_dw / det;
    a.dth_dd_dw = mp * l * c * df1_dw / det;
    a.dx_dd_du = mp * l * l / det;
    a.dth_dd_du = mp * l * c / det;
  }
  return a;
}

void check_cartpole_shapes(const Eigen::Ref<const VectorXd>& x,
                           const Eigen::Ref<const VectorXd>& u) {
  if (x.size() != 4 || u.size() != 1) {
    throw std::invalid_argument("CartPole: expects a 4-state and 1-input");
  }
}

}  // namespace

void CartPole::step(const Eigen::Ref<const VectorXd>& x,
                    const Eigen::Ref<const VectorXd>& u,
                    Eigen::Ref<VectorXd> next) const {
  check_cartpole_shapes(x, u);
  const double ts = params_.time_step;
  const CartPoleAccel a = cartpole_accel<false>(params_, x(1), x(3), u(0));
  const double v = x(2), w = x(3);
  next(0) = x(0) + ts * v;
  next(1) = x(1) + ts * w;
  next(2) = v + ts * a.x_dd;
  next(3) = w + ts * a.th_dd;
}

void CartPole::jacobian(const Eigen::Ref<const VectorXd>& x,
                        const Eigen::Ref<const VectorXd>& u,
                        Eigen::Ref<MatrixXd> dx,
                        Eigen::Ref<MatrixXd> du) const {
  VectorXd scratch(4);
  step_with_jacobian(x, u, scratch, dx, du);
}

void CartPole::step_with_jacobian(const Eigen::Ref<const VectorXd>& x,
                                  const Eigen::Ref<const VectorXd>& u,
                                  Eigen::Ref<VectorXd> next,
                                  Eigen::Ref<MatrixXd> dx,
                                  Eigen::Ref<MatrixXd> du) const {
  check_cartpole_shapes(x, u);
  const double ts = params_.time_step;
  const CartPoleAccel a = cartpole_accel<true>(params_, x(1), x(3), u(0));
  const double v = x(2), w = x(3);
  next(0) = x(0) + ts * v;
  next(1) = x(1) + ts * w;
  next(2) = v + ts * a.x_dd;
  next(3) = w + ts * a.th_dd;

  dx.setIdentity();
  dx(0, 2) = ts;
  dx(1, 3) = ts;
  dx(2, 1) = ts * a.dx_dd_dth;
  dx(2, 3) += ts * a.dx_dd_dw;
  dx(3, 1) = ts * a.dth_dd_dth;
  dx(3, 3) += ts * a.dth_dd_dw;

  du.setZero();
  du(2, 0) = ts * a.dx_dd_du;
  du(3, 0) = ts * a.dth_dd_du;
}

std::shared_ptr<const CartPole> cartpole(const CartPoleParams& params) {
  return std::make_shared<const CartPole>(params);
}

std::pair<MatrixXd, MatrixXd> jacobian_linearization(
    const NonlinearSystem& sys) {
  return sys.jacobian(VectorXd::Zero(sys.state_dim()),
                      VectorXd::Zero(sys.input_dim()));
}

Rollout damped_rollout(const NonlinearSystem& sys, const MatrixXd& gain,
                       double gamma, const VectorXd& x0, long horizon,
                       const CostSpec& cost, double cap,
                       const RolloutOptions& options) {
  if (horizon < 0) throw std::invalid_argument("damped_rollout: horizon < 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("damped_rollout: discount must lie in (0, 1]");
  }
  if (!(cap > 0.0)) throw std::invalid_argument("damped_rollout: cap <= 0");
  if (x0.size() != sys.state_dim() || gain.rows() != sys.input_dim() ||
      gain.cols() != sys.state_dim()) {
    throw std::invalid_argument("damped_rollout: dimension mismatch");
  }

  const double damping = std::sqrt(gamma);
  const double bound = options.blowup_factor * std::max(1.0, x0.norm());
  Rollout out;
  out.states.reserve(static_cast<std::size_t>(horizon) + 1);
  out.states.push_back(x0);
  VectorXd next(sys.state_dim());
  for (long t = 0; t < horizon; ++t) {
    const VectorXd& x = out.states.back();
    VectorXd u = gain * x;
    const double stage = x.dot(cost.q * x) + u.dot(cost.r * u);
    sys.step(x, u, next);
    next *= damping;
    out.inputs.push_back(std::move(u));
    out.stage_costs.push_back(stage);
    out.total_cost += stage;
    out.states.push_back(next);
    if (!next.allFinite() || next.norm() > bound || !std::isfinite(stage)) {
      out.diverged = true;
      break;
    }
    if (out.total_cost > cap) {
      out.truncated = true;
      break;
    }
  }
  return out;
}

void write_rollout_csv(std::ostream& out, const Rollout& rollout) {
  if (rollout.states.empty()) return;
  const Eigen::Index n = rollout.states.front().size();
  const Eigen::Index m =
      rollout.inputs.empty() ? 0 : rollout.inputs.front().size();
  out << "t";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x" << i;
  for (Eigen::Index j = 0; j < m; ++j) out << ",u" << j;
  out << ",stage_cost\n";
  out << std::setprecision(17);
  for (std::size_t t = 0; t < rollout.states.size(); ++t) {
    out << t;
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << rollout.states[t](i);
    const bool has_input = t < rollout.inputs.size();
    for (Eigen::Index j = 0; j < m; ++j) {
      out << ',';
      if (has_input) out << rollout.inputs[t](j);
    }
    out << ',';
    if (has_input) out << rollout.stage_costs[t];
    out << '\n';
  }
}

}  // namespace dastab
