#pragma once

// Swing-up and stabilization of the Furuta pendulum from a (learned) model:
// partial feedback linearization of the rotor, energy pumping with the
// model's potential, LQR about the upright equilibrium and a sampled-data
// closed-loop simulation against the ground-truth plant.

#include "lagid/evaluation.hpp"
#include "lagid/models.hpp"
#include "lagid/systems.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace lagid {

/// Default swing-up gains per controller model: 400 ground truth, 7000 DLN,
/// 4000 ADLN.
double default_energy_gain(ModelKind kind);

struct SwingUpConfig {
  double k_e = 400.0;
  double sign_smoothing = 0.0;  // κ > 0 replaces sgn(s) by tanh(κ s)
  double switch_angle = 0.2;    // |wrap(β) − π| below which LQR takes over [rad]
  double switch_rate = 4.0;     // |β̇| bound for the takeover [rad/s]
  double hysteresis = 2.0;      // thresholds are multiplied by this to leave LQR
  /// Value taken by sgn(0). The law is at rest from x₀ = 0 when this is 0, so
  /// the closed-loop controller defaults it to +1 (see ControllerConfig).
  double zero_sign = 0.0;

  void validate() const;
};

struct LqrDesign {
  Eigen::MatrixXd A, B, Q, R;
  Eigen::MatrixXd K;  // u = −K(x − x_d)
  Eigen::MatrixXd P;
  double residual = 0.0;  // Frobenius norm of the Riccati residual
  Eigen::VectorXcd closed_loop_eigenvalues;
  std::size_t iterations = 0;
};

/// Newton–Kleinman iteration for AᵀP + PA − PBR⁻¹BᵀP + Q = 0, started from a
/// stabilizing gain of Bass's pole-shifting method. Throws DesignError when
/// no stabilizing gain is found or the iteration does not converge. The
/// returned design satisfies max Re λ(A − BK) < 0 and residual < 1e-8.
LqrDesign lqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q,
                   const Eigen::MatrixXd& R);

/// Upright equilibrium (0, π, 0, 0).
Eigen::Vector4d upright();

struct Linearization {
  Eigen::MatrixXd A, B;
  double equilibrium_residual = 0.0;  // ‖ẋ(x_d, u_d)‖∞
  std::vector<std::string> warnings;
};

/// Exact Jacobians of ẋ = F̂(x, u) at (x_d, u_d); `frictionless` drops τ̂_NC.
Linearization linearize(const Model& model, const Eigen::VectorXd& x_d, const Eigen::VectorXd& u_d,
                        bool frictionless = false);

/// Voltage giving α̈ = ū under the model with friction neglected. Throws
/// LinearizationError when the β inertia or the input gain is singular.
double feedback_linearization(const Model& model, const Eigen::Vector4d& x, double ubar);

/// ū = k_e·a·(V̂(0, β) − V̂(0, π))·sgn(cos β·β̇) with the energy scale a of
/// `cal`; sgn(0) = cfg.zero_sign. CapabilityError for APH.
double swing_up(const Model& model, const Eigen::Vector4d& x, const SwingUpConfig& cfg,
                const EnergyCalibration& cal = {});

struct ControllerConfig {
  SwingUpConfig swing = [] {
    SwingUpConfig c;
    c.zero_sign = 1.0;
    return c;
  }();
  Eigen::Vector4d q_diag{10.0, 100.0, 0.01, 0.01};
  double r = 1.0;
  bool frictionless_linearization = false;
};

enum class ControlMode { swingup, lqr };
std::string to_string(ControlMode m);

class Controller {
 public:
  /// Designs the LQR on the model's linearization at the upright position.
  Controller(const Model& model, const ControllerConfig& cfg, const EnergyCalibration& cal = {});

  /// Unsaturated voltage for state x; updates the mode with hysteresis.
  double command(const Eigen::Vector4d& x);
  ControlMode mode() const { return mode_; }
  void reset() { mode_ = ControlMode::swingup; }
  const LqrDesign& design() const { return lqr_; }
  const Linearization& linearization() const { return lin_; }

 private:
  const Model& model_;
  ControllerConfig cfg_;
  EnergyCalibration cal_;
  Linearization lin_;
  LqrDesign lqr_;
  ControlMode mode_ = ControlMode::swingup;
};

struct LoopConfig {
  double rate = 500.0;   // Hz
  double u_max = 5.0;    // V
  double duration = 15.0;
  Eigen::Vector4d x0 = Eigen::Vector4d::Zero();
  int substeps = 4;      // RK4 substeps per control tick

  void validate() const;
};

struct ControlEvent {
  double t = 0.0;
  ControlMode to = ControlMode::lqr;
};

struct ControlRun {
  std::vector<double> t;
  std::vector<Eigen::Vector4d> x;
  std::vector<double> u;
  std::vector<ControlMode> mode;
  std::vector<ControlEvent> events;
  double saturation_fraction = 0.0;
  bool diverged = false;
  std::string failure;  // controller or plant failure, if any

  double max_abs_u() const;
  /// max |wrap(β) − π| and max |β̇| over the last `window` seconds.
  double final_angle_error(double window) const;
  double final_rate(double window) const;
  /// Stabilized upright: final angle error < tol over the window, no
  /// divergence, inputs within the limit.
  bool success(double window = 2.0, double tol = 0.1, double u_max = 5.0) const;
};

/// Zero-order-hold loop at `rate`: each tick computes the controller output,
/// clamps it to ±u_max and advances the plant with fixed-step RK4. Plant or
/// controller failures end the run with `diverged` set; they do not throw.
ControlRun closed_loop_sim(const FurutaParams& plant, Controller& controller, const LoopConfig& cfg);

void to_json(nlohmann::json& j, const ControllerConfig& c);
void from_json(const nlohmann::json& j, ControllerConfig& c);
void to_json(nlohmann::json& j, const LoopConfig& c);
void from_json(const nlohmann::json& j, LoopConfig& c);

/// Columns t, alpha, beta, alphadot, betadot, u, mode.
void write_control_csv(const ControlRun& run, const std::filesystem::path& file);

}  // namespace lagid
