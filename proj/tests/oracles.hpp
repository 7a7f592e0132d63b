#pragma once

// Hand-expanded reference dynamics used as independent oracles in tests.

#include "lagid/systems.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>

namespace oracle {

inline Eigen::Matrix2d furuta_mass(const lagid::FurutaParams& p, double beta) {
  const double a = 0.25 * p.m_p * p.L_p * p.L_p;
  const double k = 0.5 * p.m_p * p.L_r * p.L_p;
  Eigen::Matrix2d m;
  m << p.J1 + a * std::sin(beta) * std::sin(beta), k * std::cos(beta), k * std::cos(beta), p.J2;
  return m;
}

inline double furuta_potential(const lagid::FurutaParams& p, double beta) {
  return 0.5 * p.m_p * p.g * p.L_p * (1.0 - std::cos(beta));
}

inline double furuta_energy(const lagid::FurutaParams& p, const Eigen::Vector4d& x) {
  const Eigen::Vector2d qd = x.tail<2>();
  return 0.5 * qd.dot(furuta_mass(p, x(1)) * qd) + furuta_potential(p, x(1));
}

/// Coriolis vector, ∂L/∂q and generalized forces of the Furuta pendulum.
struct FurutaTerms {
  Eigen::Vector2d coriolis, dl_dq, tau_u, tau_nc;
};

inline FurutaTerms furuta_terms(const lagid::FurutaParams& p, const Eigen::Vector4d& x, double u) {
  const double a = 0.25 * p.m_p * p.L_p * p.L_p;
  const double k = 0.5 * p.m_p * p.L_r * p.L_p;
  const double gv = 0.5 * p.m_p * p.g * p.L_p;
  const double s = std::sin(x(1)), c = std::cos(x(1));
  const double ad = x(2), bd = x(3);
  FurutaTerms t;
  t.coriolis << (2 * a * s * c * ad - k * s * bd) * bd, -k * s * ad * bd;
  t.dl_dq << 0.0, a * s * c * ad * ad - k * s * ad * bd - gv * s;
  t.tau_u << p.k_t / p.R_m * (-u - p.k_m * ad), 0.0;
  t.tau_nc << -p.c_r * ad, -p.c_p * bd;
  return t;
}

inline Eigen::Vector4d furuta_rhs(const lagid::FurutaParams& p, const Eigen::Vector4d& x, double u) {
  const FurutaTerms t = furuta_terms(p, x, u);
  const Eigen::Vector2d qdd = furuta_mass(p, x(1)).ldlt().solve(t.tau_u + t.tau_nc - t.coriolis + t.dl_dq);
  Eigen::Vector4d d;
  d << x(2), x(3), qdd;
  return d;
}

inline Eigen::Vector2d nmsd_rhs(const lagid::NmsdParams& p, const Eigen::Vector2d& x, double u) {
  return {x(1), (u - p.k1 * x(0) - p.k2 * std::pow(x(0), 3) - p.b1 * x(1) - p.b2 * std::pow(x(1), 3)) / p.m};
}

inline double nmsd_energy(const lagid::NmsdParams& p, double x, double v) {
  return 0.5 * p.m * v * v + 0.5 * p.k1 * x * x + 0.25 * p.k2 * x * x * x * x;
}

/// Central difference of a vector function.
inline Eigen::MatrixXd jacobian_fd(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    j.col(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return j;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-12) {
  return (a - b).cwiseAbs().maxCoeff() / std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
}

}  // namespace oracle
