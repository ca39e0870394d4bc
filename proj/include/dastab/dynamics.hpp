#pragma once

#include <iosfwd>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dastab/linear_system.hpp"

namespace dastab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// A differentiable transition map x_{t+1} = G(x_t, u_t) with G(0, 0) = 0.
/// Implementations are immutable after construction and safe to share
/// between threads.
class NonlinearSystem {
 public:
  virtual ~NonlinearSystem() = default;

  virtual Eigen::Index state_dim() const = 0;
  virtual Eigen::Index input_dim() const = 0;
  virtual std::string descriptor() const = 0;

  /// True when G is exactly linear; the annealer may then use bisection for
  /// the discount search.
  virtual bool is_linear() const { return false; }

  virtual void step(const Eigen::Ref<const VectorXd>& x,
                    const Eigen::Ref<const VectorXd>& u,
                    Eigen::Ref<VectorXd> next) const = 0;

  /// dG/dx (d_x x d_x) and dG/du (d_x x d_u) at (x, u).
  virtual void jacobian(const Eigen::Ref<const VectorXd>& x,
                        const Eigen::Ref<const VectorXd>& u,
                        Eigen::Ref<MatrixXd> dx,
                        Eigen::Ref<MatrixXd> du) const = 0;

  /// step() and jacobian() in one call; overridden where the two share work.
  virtual void step_with_jacobian(const Eigen::Ref<const VectorXd>& x,
                                  const Eigen::Ref<const VectorXd>& u,
                                  Eigen::Ref<VectorXd> next,
                                  Eigen::Ref<MatrixXd> dx,
                                  Eigen::Ref<MatrixXd> du) const {
    step(x, u, next);
    jacobian(x, u, dx, du);
  }

  VectorXd step(const VectorXd& x, const VectorXd& u) const;
  std::pair<MatrixXd, MatrixXd> jacobian(const VectorXd& x,
                                         const VectorXd& u) const;
};

using SystemPtr = std::shared_ptr<const NonlinearSystem>;

class LinearDynamics final : public NonlinearSystem {
 public:
  using NonlinearSystem::jacobian;
  using NonlinearSystem::step;

  explicit LinearDynamics(LinearSystem sys);

  Eigen::Index state_dim() const override { return sys_.state_dim(); }
  Eigen::Index input_dim() const override { return sys_.input_dim(); }
  std::string descriptor() const override;
  bool is_linear() const override { return true; }

  void step(const Eigen::Ref<const VectorXd>& x,
            const Eigen::Ref<const VectorXd>& u,
            Eigen::Ref<VectorXd> next) const override;
  void jacobian(const Eigen::Ref<const VectorXd>& x,
                const Eigen::Ref<const VectorXd>& u, Eigen::Ref<MatrixXd> dx,
                Eigen::Ref<MatrixXd> du) const override;

  const LinearSystem& linear() const { return sys_; }

 private:
  LinearSystem sys_;
};

std::shared_ptr<const LinearDynamics> linear_as_nonlinear(LinearSystem sys);

/// Physical constants of the cart-pole. Defaults are unit masses, length and
/// gravity with a 20 Hz forward-Euler step.
struct CartPoleParams {
  double pole_mass = 1.0;
  double cart_mass = 1.0;
  double length = 1.0;
  double gravity = 1.0;
  double time_step = 0.05;

  void validate() const;
};

/// Cart-pole on a track, state (x, theta, x_dot, theta_dot) with theta = 0
/// upright and u the horizontal force on the cart. The continuous dynamics
///
///   [ m_p + m_c       -m_p l cos(th) ] [ x_dd  ]   [ u - m_p l sin(th) th_d^2 ]
///   [ -m_p l cos(th)   m_p l^2       ] [ th_dd ] = [ m_p g l sin(th)          ]
///
/// are integrated with one forward-Euler step of length time_step.
class CartPole final : public NonlinearSystem {
 public:
  using NonlinearSystem::jacobian;
  using NonlinearSystem::step;

  explicit CartPole(CartPoleParams params = {});

  Eigen::Index state_dim() const override { return 4; }
  Eigen::Index input_dim() const override { return 1; }
  std::string descriptor() const override;

  void step(const Eigen::Ref<const VectorXd>& x,
            const Eigen::Ref<const VectorXd>& u,
            Eigen::Ref<VectorXd> next) const override;
  void jacobian(const Eigen::Ref<const VectorXd>& x,
                const Eigen::Ref<const VectorXd>& u, Eigen::Ref<MatrixXd> dx,
                Eigen::Ref<MatrixXd> du) const override;
  void step_with_jacobian(const Eigen::Ref<const VectorXd>& x,
                          const Eigen::Ref<const VectorXd>& u,
                          Eigen::Ref<VectorXd> next, Eigen::Ref<MatrixXd> dx,
                          Eigen::Ref<MatrixXd> du) const override;

  const CartPoleParams& params() const { return params_; }

 private:
  CartPoleParams params_;
};

std::shared_ptr<const CartPole> cartpole(const CartPoleParams& params = {});

/// (A_jac, B_jac): the Jacobians of G at the origin.
std::pair<MatrixXd, MatrixXd> jacobian_linearization(const NonlinearSystem& sys);

struct Rollout {
  std::vector<VectorXd> states;  // x_0 .. x_T
  std::vector<VectorXd> inputs;  // u_0 .. u_{T-1}
  std::vector<double> stage_costs;
  double total_cost = 0.0;
  bool truncated = false;  // accumulated cost passed the cap
  bool diverged = false;   // state blew up or became non-finite
};

struct RolloutOptions {
  /// A rollout diverges once ||x_t|| > blowup_factor * max(1, ||x_0||).
  double blowup_factor = 1e6;
};

/// Simulates x_{t+1} = sqrt(g) G(x_t, K x_t) for `horizon` steps and sums the
/// undiscounted stage costs x^T Q x + u^T R u. Stops early when the cost
/// exceeds `cap` or the state blows up.
Rollout damped_rollout(const NonlinearSystem& sys, const MatrixXd& gain,
                       double gamma, const VectorXd& x0, long horizon,
                       const CostSpec& cost,
                       double cap = std::numeric_limits<double>::infinity(),
                       const RolloutOptions& options = {});

/// CSV with columns t, x0..x{n-1}, u0..u{m-1}, stage_cost. The final row
/// carries only the terminal state.
void write_rollout_csv(std::ostream& out, const Rollout& rollout);

}  // namespace dastab
