#include "lagid/control.hpp"

#include "lagid/benchmarks.hpp"
#include "lagid/config.hpp"
#include "lagid/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace lagid {

double default_energy_gain(ModelKind kind) {
  switch (kind) {
    case ModelKind::ground_truth: return 400.0;
    case ModelKind::dln: return 7000.0;
    case ModelKind::adln: return 4000.0;
    case ModelKind::aph: break;
  }
  throw CapabilityError("APH models have no potential to pump energy with");
}

void SwingUpConfig::validate() const {
  if (!(k_e >= 0)) throw ConfigError("k_e must be non-negative");
  if (!(zero_sign >= -1 && zero_sign <= 1)) throw ConfigError("zero_sign must lie in [-1, 1]");
  if (!(sign_smoothing >= 0)) throw ConfigError("sign_smoothing must be non-negative");
  if (!(switch_angle > 0 && switch_rate > 0 && hysteresis >= 1)) {
    throw ConfigError("switch thresholds must be positive and hysteresis at least 1");
  }
}

void LoopConfig::validate() const {
  if (!(rate > 0)) throw ConfigError("control rate must be positive");
  if (!(u_max > 0)) throw ConfigError("input saturation must be positive");
  if (!(duration > 0)) throw ConfigError("duration must be positive");
  if (substeps < 1) throw ConfigError("at least one integration substep per tick");
  if (!x0.allFinite()) throw ConfigError("initial state must be finite");
}

std::string to_string(ControlMode m) { return m == ControlMode::lqr ? "lqr" : "swingup"; }

Eigen::Vector4d upright() { return {0.0, std::numbers::pi, 0.0, 0.0}; }

// ---------------------------------------------------------------------------
// Riccati

namespace {

// Solves Fᵀ P + P F = −S for symmetric P through the Kronecker form.
Eigen::MatrixXd lyapunov(const Eigen::MatrixXd& F, const Eigen::MatrixXd& S) {
  const Eigen::Index n = F.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n * n, n * n);
  // vec(Fᵀ P) = (I ⊗ Fᵀ) vec P, vec(P F) = (Fᵀ ⊗ I) vec P (column-major vec).
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      L.block(i * n, j * n, n, n) += I(i, j) * F.transpose();
      L.block(i * n, j * n, n, n) += F(j, i) * I;
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
  const Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(S.data(), n * n);
  Eigen::VectorXd p = lu.solve(rhs);
  if (!p.allFinite() || (L * p - rhs).norm() > 1e-9 * std::max(1.0, rhs.norm())) {
    throw DesignError("Lyapunov equation is singular");
  }
  Eigen::MatrixXd P = Eigen::Map<Eigen::MatrixXd>(p.data(), n, n);
  return 0.5 * (P + P.transpose());
}

double max_real(const Eigen::MatrixXd& M) {
  return Eigen::EigenSolver<Eigen::MatrixXd>(M, false).eigenvalues().real().maxCoeff();
}

Eigen::MatrixXd riccati_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q,
                                 const Eigen::MatrixXd& Rinv, const Eigen::MatrixXd& P) {
  return A.transpose() * P + P * A - P * B * Rinv * B.transpose() * P + Q;
}

}  // namespace

LqrDesign lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q,
                   const Eigen::MatrixXd& R) {
  const Eigen::Index n = A.rows(), m = B.cols();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != m || R.cols() != m) {
    throw ContractViolation("LQR matrix dimensions do not agree");
  }
  Eigen::LLT<Eigen::MatrixXd> rllt(R);
  if (rllt.info() != Eigen::Success) throw DesignError("R must be positive definite");
  const Eigen::MatrixXd Rinv = rllt.solve(Eigen::MatrixXd::Identity(m, m));

  // Bass: with β above the spectral abscissa of −A, K0 = Bᵀ W⁻¹ stabilizes.
  const Eigen::VectorXcd open = Eigen::EigenSolver<Eigen::MatrixXd>(A, false).eigenvalues();
  const double beta = open.cwiseAbs().maxCoeff() + 1.0;
  const Eigen::MatrixXd shifted = -(A + beta * Eigen::MatrixXd::Identity(n, n)).transpose();
  Eigen::MatrixXd W = lyapunov(shifted, 2.0 * B * B.transpose());
  Eigen::LDLT<Eigen::MatrixXd> wl(W);
  if (wl.info() != Eigen::Success || wl.rcond() < 1e-14) {
    throw DesignError("(A, B) is not controllable: no stabilizing initial gain");
  }
  Eigen::MatrixXd K = B.transpose() * wl.solve(Eigen::MatrixXd::Identity(n, n));
  if (!(max_real(A - B * K) < 0)) throw DesignError("initial gain does not stabilize (A, B)");

  LqrDesign d;
  d.A = A;
  d.B = B;
  d.Q = Q;
  d.R = R;
  const double tol = 1e-10 * std::max(1.0, Q.norm());
  Eigen::MatrixXd P;
  for (d.iterations = 1; d.iterations <= 200; ++d.iterations) {
    const Eigen::MatrixXd Ak = A - B * K;
    P = lyapunov(Ak, Q + K.transpose() * R * K);
    K = Rinv * B.transpose() * P;
    d.residual = riccati_residual(A, B, Q, Rinv, P).norm();
    if (d.residual < tol) break;
  }
  if (d.iterations > 200 || !std::isfinite(d.residual)) throw DesignError("Newton–Kleinman iteration did not converge");
  d.P = P;
  d.K = K;
  d.closed_loop_eigenvalues = Eigen::EigenSolver<Eigen::MatrixXd>(A - B * K, false).eigenvalues();
  if (!(d.closed_loop_eigenvalues.real().maxCoeff() < 0)) throw DesignError("LQR design is not stabilizing");
  if (!(d.residual < 1e-8)) throw DesignError("Riccati residual above 1e-8");
  return d;
}

// ---------------------------------------------------------------------------
// Model-based laws

namespace {

struct Dynamics {
  ad::Var q, qd;
  LagrangianTerms terms;
};

Dynamics eval_terms(ad::Tape& tape, const BoundParams& bp, const Model& model, ad::Var x) {
  const int n = model.dof();
  Dynamics d;
  d.q = ad::rows(x, 0, n);
  d.qd = ad::rows(x, n, n);
  d.terms = model.lagrangian_terms(tape, bp, d.q);
  return d;
}

void require_furuta(const Model& model) {
  if (model.spec().system != SystemId::furuta) throw ConfigError("controllers are defined for the Furuta pendulum");
}

double potential_at(const Model& model, double alpha, double beta) {
  ad::Tape tape(false);
  BoundParams bp(tape, model.parameters(), false);
  return model.lagrangian_terms(tape, bp, tape.constant(Eigen::Vector2d(alpha, beta))).potential.value()(0, 0);
}

}  // namespace

Linearization linearize(const Model& model, const Eigen::VectorXd& x_d, const Eigen::VectorXd& u_d,
                        bool frictionless) {
  if (x_d.size() != model.state_dim() || u_d.size() != model.input_dim()) {
    throw ContractViolation("linearization point does not match the model");
  }
  ad::Tape tape(true);
  BoundParams bp(tape, model.parameters(), false);
  ad::Var x = tape.leaf(x_d);
  ad::Var u = tape.leaf(u_d);
  ad::Var f;
  if (frictionless) {
    Dynamics d = eval_terms(tape, bp, model, x);
    ad::Var tau = model.tau_u(tape, bp, d.q, d.qd, u);
    f = ad::vstack({d.qd, mech::accelerations(d.terms, d.qd, tau)});
  } else {
    f = model.state_derivative(tape, bp, x, u);
  }
  const Eigen::Index dim = model.state_dim();
  Linearization lin;
  lin.A.resize(dim, dim);
  lin.B.resize(dim, model.input_dim());
  for (Eigen::Index i = 0; i < dim; ++i) {
    Eigen::MatrixXd seed = Eigen::MatrixXd::Zero(dim, 1);
    seed(i, 0) = 1.0;
    tape.backward({{f, seed}});
    lin.A.row(i) = tape.grad(x).transpose();
    lin.B.row(i) = tape.grad(u).transpose();
  }
  if (!lin.A.allFinite() || !lin.B.allFinite()) throw LinearizationError("non-finite linearization");
  lin.equilibrium_residual = f.value().cwiseAbs().maxCoeff();
  if (lin.equilibrium_residual > 1e-6) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "linearization point is not an equilibrium: |xdot| = %.3g", lin.equilibrium_residual);
    lin.warnings.emplace_back(buf);
  }
  return lin;
}

double feedback_linearization(const Model& model, const Eigen::Vector4d& x, double ubar) {
  require_furuta(model);
  ad::Tape tape(false);
  BoundParams bp(tape, model.parameters(), false);
  Dynamics d = eval_terms(tape, bp, model, tape.constant(x));
  const Eigen::VectorXd M = d.terms.mass.value().col(0);  // row-major packed
  const Eigen::VectorXd c = mech::coriolis(d.terms, d.qd).value().col(0);
  const Eigen::VectorXd g = mech::lagrangian_dq(d.terms, d.qd).value().col(0);
  if (!(std::abs(M(3)) > 1e-12 * std::max(1.0, std::abs(M(0))))) {
    throw LinearizationError("singular pendulum inertia in the feedback linearization");
  }
  const double beta_dd = (-M(2) * ubar - c(1) + g(1)) / M(3);
  const double torque = M(0) * ubar + M(1) * beta_dd + c(0) - g(0);
  // τ_u is affine in u.
  const ad::Var u0 = model.tau_u(tape, bp, d.q, d.qd, tape.constant(Eigen::MatrixXd::Zero(1, 1)));
  const ad::Var u1 = model.tau_u(tape, bp, d.q, d.qd, tape.constant(Eigen::MatrixXd::Ones(1, 1)));
  const double offset = u0.value()(0, 0);
  const double gain = u1.value()(0, 0) - offset;
  if (!(std::abs(gain) > 1e-15)) throw LinearizationError("input has no effect on the rotor");
  const double v = (torque - offset) / gain;
  if (!std::isfinite(v)) throw LinearizationError("non-finite feedback linearization");
  return v;
}

double swing_up(const Model& model, const Eigen::Vector4d& x, const SwingUpConfig& cfg,
                const EnergyCalibration& cal) {
  require_furuta(model);
  if (!model.identifies_lagrangian()) throw CapabilityError("APH models have no identified potential");
  const double s = std::cos(x(1)) * x(3);
  cfg.validate();
  double sign = cfg.zero_sign;
  if (s != 0.0) sign = cfg.sign_smoothing > 0 ? std::tanh(cfg.sign_smoothing * s) : (s > 0) - (s < 0);
  if (sign == 0.0 || cfg.k_e == 0.0) return 0.0;
  const double dv = potential_at(model, 0.0, x(1)) - potential_at(model, 0.0, std::numbers::pi);
  return cfg.k_e * cal.scale * dv * sign;
}

// ---------------------------------------------------------------------------

Controller::Controller(const Model& model, const ControllerConfig& cfg, const EnergyCalibration& cal)
    : model_(model), cfg_(cfg), cal_(cal) {
  require_furuta(model);
  cfg_.swing.validate();
  if (!model.identifies_lagrangian()) throw CapabilityError("APH models cannot drive the swing-up");
  lin_ = linearize(model, upright(), Eigen::VectorXd::Zero(1), cfg.frictionless_linearization);
  lqr_ = lqr_gain(lin_.A, lin_.B, cfg.q_diag.asDiagonal().toDenseMatrix(), Eigen::MatrixXd::Constant(1, 1, cfg.r));
}

double Controller::command(const Eigen::Vector4d& x) {
  const double angle = std::abs(angle_difference(x(1), std::numbers::pi));
  const double rate = std::abs(x(3));
  const SwingUpConfig& s = cfg_.swing;
  if (mode_ == ControlMode::swingup && angle < s.switch_angle && rate < s.switch_rate) {
    mode_ = ControlMode::lqr;
  } else if (mode_ == ControlMode::lqr &&
             (angle > s.hysteresis * s.switch_angle || rate > s.hysteresis * s.switch_rate)) {
    mode_ = ControlMode::swingup;
  }
  if (mode_ == ControlMode::lqr) {
    // The rotor has a continuum of equilibria; errors are taken modulo a turn.
    Eigen::Vector4d e(angle_difference(x(0), 0.0), angle_difference(x(1), std::numbers::pi), x(2), x(3));
    return -(lqr_.K * e)(0, 0);
  }
  return feedback_linearization(model_, x, swing_up(model_, x, s, cal_));
}

// ---------------------------------------------------------------------------

double ControlRun::max_abs_u() const {
  double m = 0;
  for (double v : u) m = std::max(m, std::abs(v));
  return m;
}

double ControlRun::final_angle_error(double window) const {
  if (t.empty()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] >= t.back() - window - 1e-12) m = std::max(m, std::abs(angle_difference(x[i](1), std::numbers::pi)));
  return m;
}

double ControlRun::final_rate(double window) const {
  if (t.empty()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] >= t.back() - window - 1e-12) m = std::max(m, std::abs(x[i](3)));
  return m;
}

bool ControlRun::success(double window, double tol, double u_max) const {
  return !diverged && final_angle_error(window) < tol && max_abs_u() <= u_max;
}

ControlRun closed_loop_sim(const FurutaParams& plant, Controller& controller, const LoopConfig& cfg) {
  cfg.validate();
  plant.validate();
  controller.reset();
  const auto ticks = static_cast<std::size_t>(std::llround(cfg.duration * cfg.rate));
  const double dt = 1.0 / cfg.rate;
  const double h = dt / cfg.substeps;
  ControlRun run;
  Eigen::Vector4d x = cfg.x0;
  std::size_t saturated = 0;
  ControlMode last = controller.mode();
  const Model gt = ground_truth_model(SystemId::furuta, {}, plant);
  auto rhs = [&](const Eigen::Vector4d& y, double u) -> Eigen::Vector4d {
    Eigen::Vector4d d;
    d << y.tail<2>(), forward_dynamics(gt.mechanics(), State(y.head<2>(), y.tail<2>()), Eigen::VectorXd::Constant(1, u));
    return d;
  };
  for (std::size_t k = 0; k <= ticks; ++k) {
    const double t = static_cast<double>(k) * dt;
    double raw;
    try {
      raw = controller.command(x);
    } catch (const std::exception& e) {
      run.diverged = true;
      run.failure = std::string("controller failure at t = ") + std::to_string(t) + ": " + e.what();
      break;
    }
    if (!std::isfinite(raw)) {
      run.diverged = true;
      run.failure = "non-finite controller output at t = " + std::to_string(t);
      break;
    }
    if (controller.mode() != last) {
      run.events.push_back({t, controller.mode()});
      last = controller.mode();
    }
    const double u = std::clamp(raw, -cfg.u_max, cfg.u_max);
    if (std::abs(raw) > cfg.u_max) ++saturated;
    run.t.push_back(t);
    run.x.push_back(x);
    run.u.push_back(u);
    run.mode.push_back(controller.mode());
    if (k == ticks) break;
    try {
      for (int s = 0; s < cfg.substeps; ++s) {
        const Eigen::Vector4d k1 = rhs(x, u);
        const Eigen::Vector4d k2 = rhs(x + 0.5 * h * k1, u);
        const Eigen::Vector4d k3 = rhs(x + 0.5 * h * k2, u);
        const Eigen::Vector4d k4 = rhs(x + h * k3, u);
        x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      }
    } catch (const std::exception& e) {
      x.setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e6) {
      run.diverged = true;
      run.failure = "plant diverged at t = " + std::to_string(t + dt);
      break;
    }
  }
  run.saturation_fraction = run.u.empty() ? 0.0 : static_cast<double>(saturated) / static_cast<double>(run.u.size());
  return run;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> to_vec(const Eigen::Vector4d& v) { return {v(0), v(1), v(2), v(3)}; }

Eigen::Vector4d from_vec(const nlohmann::json& j, const char* key, const Eigen::Vector4d& fallback) {
  std::vector<double> v = to_vec(fallback);
  read_optional(j, key, v);
  if (v.size() != 4) throw ConfigError(std::string("'") + key + "' must have four entries");
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace

void to_json(nlohmann::json& j, const ControllerConfig& c) {
  j = nlohmann::json{{"k_e", c.swing.k_e},
                     {"sign_smoothing", c.swing.sign_smoothing},
                     {"switch_angle", c.swing.switch_angle},
                     {"switch_rate", c.swing.switch_rate},
                     {"hysteresis", c.swing.hysteresis},
                     {"zero_sign", c.swing.zero_sign},
                     {"q_diag", to_vec(c.q_diag)},
                     {"r", c.r},
                     {"frictionless_linearization", c.frictionless_linearization}};
}

void from_json(const nlohmann::json& j, ControllerConfig& c) {
  require_known_keys(j, {"k_e", "sign_smoothing", "switch_angle", "switch_rate", "hysteresis", "zero_sign", "q_diag", "r",
                         "frictionless_linearization"},
                     "controller");
  read_optional(j, "k_e", c.swing.k_e);
  read_optional(j, "sign_smoothing", c.swing.sign_smoothing);
  read_optional(j, "switch_angle", c.swing.switch_angle);
  read_optional(j, "switch_rate", c.swing.switch_rate);
  read_optional(j, "hysteresis", c.swing.hysteresis);
  read_optional(j, "zero_sign", c.swing.zero_sign);
  c.q_diag = from_vec(j, "q_diag", c.q_diag);
  read_optional(j, "r", c.r);
  read_optional(j, "frictionless_linearization", c.frictionless_linearization);
  c.swing.validate();
  if (!(c.r > 0) || !(c.q_diag.minCoeff() >= 0)) throw ConfigError("LQR weights must be R > 0 and Q ≥ 0");
}

void to_json(nlohmann::json& j, const LoopConfig& c) {
  j = nlohmann::json{{"rate", c.rate}, {"u_max", c.u_max}, {"duration", c.duration}, {"x0", to_vec(c.x0)},
                     {"substeps", c.substeps}};
}

void from_json(const nlohmann::json& j, LoopConfig& c) {
  require_known_keys(j, {"rate", "u_max", "duration", "x0", "substeps"}, "loop");
  read_optional(j, "rate", c.rate);
  read_optional(j, "u_max", c.u_max);
  read_optional(j, "duration", c.duration);
  c.x0 = from_vec(j, "x0", c.x0);
  read_optional(j, "substeps", c.substeps);
  c.validate();
}

void write_control_csv(const ControlRun& run, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "t,alpha,beta,alphadot,betadot,u,mode\n";
  char buf[256];
  for (std::size_t i = 0; i < run.t.size(); ++i) {
    const Eigen::Vector4d& x = run.x[i];
    std::snprintf(buf, sizeof buf, "%.6f,%.10g,%.10g,%.10g,%.10g,%.10g,", run.t[i], x(0), x(1), x(2), x(3), run.u[i]);
    out << buf << to_string(run.mode[i]) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + file.string());
}

}  // namespace lagid
