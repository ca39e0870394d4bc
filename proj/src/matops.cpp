#include "dastab/matops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dastab/errors.hpp"

namespace dastab {

namespace {

void require_square(const Eigen::Ref<const MatrixXd>& m, const char* who) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument(std::string(who) + ": matrix must be square, got " +
                                std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
  }
}

bool all_finite(const Eigen::Ref<const MatrixXd>& m) {
  return m.allFinite();
}

}  // namespace

double spectral_radius(const Eigen::Ref<const MatrixXd>& m) {
  require_square(m, "spectral_radius");
  if (m.size() == 0) return 0.0;
  if (!all_finite(m)) {
    throw std::invalid_argument("spectral_radius: non-finite entries");
  }
  if (m.rows() == 1) return std::abs(m(0, 0));
  if (m.rows() == 2) {
    // Closed form for the characteristic polynomial l^2 - tr l + det.
    const double tr = m(0, 0) + m(1, 1);
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    const double disc = tr * tr / 4.0 - det;
    if (disc >= 0.0) {
      const double s = std::sqrt(disc);
      return std::max(std::abs(tr / 2.0 + s), std::abs(tr / 2.0 - s));
    }
    return std::sqrt(std::max(det, 0.0));
  }
  Eigen::EigenSolver<MatrixXd> solver(m, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("spectral_radius: eigenvalue iteration failed");
  }
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

double op_norm(const Eigen::Ref<const MatrixXd>& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()(0);
}

bool is_stable(const Eigen::Ref<const MatrixXd>& m, double margin) {
  return spectral_radius(m) < 1.0 - margin;
}

MatrixXd symmetrize(const Eigen::Ref<const MatrixXd>& m) {
  require_square(m, "symmetrize");
  return 0.5 * (m + m.transpose());
}

double min_sym_eigenvalue(const Eigen::Ref<const MatrixXd>& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(symmetrize(m),
                                                 Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(0);
}

double max_sym_eigenvalue(const Eigen::Ref<const MatrixXd>& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(symmetrize(m),
                                                 Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(solver.eigenvalues().size() - 1);
}

MatrixXd dlyap(const Eigen::Ref<const MatrixXd>& a_cl,
               const Eigen::Ref<const MatrixXd>& sigma,
               const DlyapOptions& options) {
  require_square(a_cl, "dlyap");
  require_square(sigma, "dlyap");
  if (a_cl.rows() != sigma.rows()) {
    throw std::invalid_argument("dlyap: a_cl and sigma dimensions differ");
  }
  const double rho = spectral_radius(a_cl);
  if (!(rho < 1.0 - options.stability_margin)) {
    throw Unstable("dlyap: closed loop has spectral radius " +
                   std::to_string(rho));
  }

  MatrixXd x = symmetrize(sigma);
  MatrixXd power = a_cl;
  MatrixXd term(x.rows(), x.cols());
  // 2^64 terms is far beyond what any margin above 1e-15 needs.
  for (int round = 0; round < 64; ++round) {
    term.noalias() = power.transpose() * x * power;
    x += term;
    const double x_norm = x.norm();
    if (term.norm() <= 1e-18 * x_norm) break;
    power = power * power;
    if (!power.allFinite()) {
      throw Unstable("dlyap: closed-loop powers overflowed");
    }
  }
  return symmetrize(x);
}

double dlyap_residual(const Eigen::Ref<const MatrixXd>& a_cl,
                      const Eigen::Ref<const MatrixXd>& sigma,
                      const Eigen::Ref<const MatrixXd>& x) {
  return (x - sigma - a_cl.transpose() * x * a_cl).norm();
}

DareSolution solve_dare(const LinearSystem& sys, const CostSpec& cost,
                        double gamma, const DareOptions& options) {
  sys.validate();
  cost.validate(sys.state_dim(), sys.input_dim());
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("solve_dare: discount must lie in (0, 1]");
  }
  const MatrixXd& a = sys.a;
  const MatrixXd& b = sys.b;

  MatrixXd p = cost.q;
  MatrixXd next(p.rows(), p.cols());
  MatrixXd pa(p.rows(), a.cols());
  MatrixXd pb(p.rows(), b.cols());
  MatrixXd s(b.cols(), b.cols());
  MatrixXd gain(b.cols(), a.cols());
  for (long it = 1; it <= options.max_iterations; ++it) {
    pa.noalias() = p * a;
    pb.noalias() = p * b;
    s = cost.r;
    s.noalias() += gamma * b.transpose() * pb;
    gain = -(s.ldlt().solve(gamma * b.transpose() * pa));
    // Q + g A^T P A + g A^T P B K* (the minimizing quadratic form).
    next = cost.q;
    next.noalias() += gamma * a.transpose() * pa;
    next.noalias() += gamma * a.transpose() * pb * gain;
    next = symmetrize(next);
    const double change = (next - p).norm();
    const double scale = next.norm();
    if (!next.allFinite() || scale > options.divergence_bound) {
      throw NotStabilizable(
          "solve_dare: Riccati value iteration diverged (system not "
          "stabilizable at this discount)");
    }
    p.swap(next);
    if (change <= options.relative_tolerance * scale) {
      pa.noalias() = p * a;
      pb.noalias() = p * b;
      s = cost.r;
      s.noalias() += gamma * b.transpose() * pb;
      gain = -(s.ldlt().solve(gamma * b.transpose() * pa));
      return DareSolution{p, gain, it};
    }
  }
  throw NotStabilizable("solve_dare: value iteration did not settle within " +
                        std::to_string(options.max_iterations) + " iterations");
}

}  // namespace dastab
