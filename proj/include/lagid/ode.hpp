#pragma once

// Explicit Runge-Kutta integration: adaptive Tsit5 with a PI step-size
// controller and fixed-step RK4. Batched solves integrate many independent
// columns with a shared step sequence; gradients are obtained by replaying
// each accepted step on a tape with the step sizes of the forward pass.

#include "lagid/ad.hpp"
#include "lagid/parameters.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace lagid::ode {

enum class Method { tsit5, rk4 };

struct SolverConfig {
  Method method = Method::tsit5;
  double rtol = 1e-3;
  double atol = 1e-6;
  double initial_step = 0.0;  // 0: automatic
  double min_step = 1e-10;    // below this a column is declared failed
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 100000;  // attempted steps per solve
  double safety = 0.9;
  double factor_min = 0.2;
  double factor_max = 10.0;
  // Exponents of the PI controller, h_{n+1} = h_n·safety·e_n^{-b1/k}·e_{n-1}^{-b2/k}, k = 5.
  double beta1 = 1.0 / 6.0;
  double beta2 = 1.0 / 6.0;
  double fixed_dt = 0.0;  // rk4 step; 0: one step per save interval
  double state_bound = 1e6;  // |y|∞ beyond this marks a column as diverged
  /// Step exactly onto every save time (required for gradients). When false
  /// save values come from the Tsit5 dense interpolant.
  bool step_to_save_points = true;

  void validate() const;
};

/// Uniformly sampled signal, linear between samples, held constant outside.
class InterpolatedSignal {
 public:
  InterpolatedSignal() = default;
  /// `samples` holds one column per sample time t0 + j·dt.
  InterpolatedSignal(double t0, double dt, Eigen::MatrixXd samples);

  Eigen::Index dim() const { return samples_.rows(); }
  Eigen::Index size() const { return samples_.cols(); }
  double t0() const { return t0_; }
  double dt() const { return dt_; }
  const Eigen::MatrixXd& samples() const { return samples_; }
  Eigen::VectorXd operator()(double t) const;
  void write(double t, Eigen::Ref<Eigen::VectorXd> out) const;

 private:
  double t0_ = 0.0;
  double dt_ = 1.0;
  Eigen::MatrixXd samples_;
};

/// Batched right-hand side f(t, y; θ) with the batch in columns.
class BatchRhs {
 public:
  virtual ~BatchRhs() = default;
  virtual Eigen::Index dim() const = 0;
  virtual const ParameterVector& parameters() const = 0;
  /// `y` holds the columns `cols` of the full batch.
  virtual ad::Var eval(ad::Tape& tape, const BoundParams& params, double t, ad::Var y,
                       const std::vector<Eigen::Index>& cols) const = 0;
};

/// Adapts a plain function of (t, Y) with no parameters.
class FunctionRhs : public BatchRhs {
 public:
  using Fn = std::function<Eigen::MatrixXd(double, const Eigen::MatrixXd&)>;
  FunctionRhs(Eigen::Index dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
  Eigen::Index dim() const override { return dim_; }
  const ParameterVector& parameters() const override { return empty_; }
  ad::Var eval(ad::Tape& tape, const BoundParams& params, double t, ad::Var y,
               const std::vector<Eigen::Index>& cols) const override;

 private:
  Eigen::Index dim_;
  Fn fn_;
  ParameterVector empty_;
};

struct StepRecord {
  double t = 0.0;
  double h = 0.0;
  std::vector<Eigen::Index> cols;  // columns advanced by this step
  int save_index = -1;             // save point reached at t + h, if any
};

struct ParameterGradient {
  Eigen::VectorXd params;
  Eigen::MatrixXd y0;
};

/// Solution of a batched solve. Column j is valid at save points
/// [0, valid_saves[j]); after a failure its state stays frozen at the last
/// accepted value.
class BatchSolution {
 public:
  std::vector<double> save_times;
  std::vector<Eigen::MatrixXd> values;  // one (dim x B) per save time
  std::vector<std::size_t> valid_saves;
  std::vector<double> failure_time;  // NaN for columns that completed
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;

  bool completed(Eigen::Index col) const { return std::isnan(failure_time[static_cast<std::size_t>(col)]); }
  bool all_completed() const;

  /// Discretize-then-optimize adjoint: given ∂loss/∂values[k] for each save
  /// point, returns ∂loss/∂θ and ∂loss/∂y0. Requires the rhs passed to the
  /// solve to be alive and unchanged.
  ParameterGradient pullback(const std::vector<Eigen::MatrixXd>& value_adjoints) const;

 private:
  friend BatchSolution solve_batch(const BatchRhs&, const Eigen::MatrixXd&, const std::vector<double>&,
                                   const SolverConfig&);
  const BatchRhs* rhs_ = nullptr;
  SolverConfig config_;
  std::vector<StepRecord> steps_;
  std::vector<Eigen::MatrixXd> step_states_;  // state at the start of each step (cols subset)
  std::vector<std::size_t> save_step_;        // accepted steps taken when each save slot was filled
};

/// Integrates from save_times.front() to save_times.back(). save_times must
/// be non-decreasing with at least two entries. Failures (non-finite values,
/// step underflow, state bound, step budget) are recorded per column rather
/// than thrown.
BatchSolution solve_batch(const BatchRhs& rhs, const Eigen::MatrixXd& y0, const std::vector<double>& save_times,
                          const SolverConfig& config);

using Fn = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

/// Single trajectory; returns one column per save time. Throws
/// IntegrationError carrying the failure time.
Eigen::MatrixXd solve(const Fn& rhs, const Eigen::VectorXd& y0, const std::vector<double>& save_times,
                      const SolverConfig& config = {});

/// Single-trajectory solve with gradients; throws IntegrationError on failure.
BatchSolution solve_with_gradients(const BatchRhs& rhs, const Eigen::VectorXd& y0,
                                   const std::vector<double>& save_times, const SolverConfig& config = {});

/// Classical RK4; returns n_steps + 1 states. Throws IntegrationError on non-finite states.
std::vector<Eigen::VectorXd> rk4_fixed(const Fn& rhs, const Eigen::VectorXd& y0, double t0, double dt,
                                       std::size_t n_steps);

/// Cumulative trapezoid integral of uniformly sampled values (one column per
/// node); column 0 is zero. Throws ContractViolation for fewer than 2 nodes.
Eigen::MatrixXd trapezoid(const Eigen::MatrixXd& values, double dt);
std::vector<double> trapezoid(const std::vector<double>& values, double dt);

/// One Tsit5 step from (t, y) with step h; `error` receives the embedded
/// error estimate when non-null.
Eigen::VectorXd tsit5_step(const Fn& rhs, double t, const Eigen::VectorXd& y, double h,
                           Eigen::VectorXd* error = nullptr);

/// Uniform grid t0, t0 + dt, ..., t0 + n·dt.
std::vector<double> uniform_grid(double t0, double dt, std::size_t n);

}  // namespace lagid::ode
