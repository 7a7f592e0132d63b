#pragma once

// Physical-consistency evaluation: prediction log-RMSE, energy along
// trajectories and over state grids, force decomposition errors, reports.
// All log-RMSE values are log10 of the pooled RMSE, floored at 1e-12.

#include "lagid/benchmarks.hpp"
#include "lagid/models.hpp"
#include "lagid/ode.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lagid {

constexpr double kRmseFloor = 1e-12;

struct Predictions {
  std::vector<Eigen::MatrixXd> states;  // one per test trajectory; truncated at divergence
  std::vector<bool> diverged;
};

struct RolloutOptions {
  ode::SolverConfig solver = [] {
    ode::SolverConfig c;
    c.rtol = 1e-8;
    c.atol = 1e-10;
    return c;
  }();
  std::size_t threads = 1;
};

/// Builds the dynamics for one trajectory's input signal.
using RhsFactory = std::function<std::unique_ptr<ode::BatchRhs>(const ode::InterpolatedSignal&)>;

/// Rolls every trajectory out from its x₀ under its recorded input. A
/// trajectory whose rollout fails keeps its finite prefix and is flagged.
Predictions rollout_predictions(const RhsFactory& make_rhs, const Dataset& test, const RolloutOptions& opt);
Predictions rollout_predictions(const Model& model, const Dataset& test, const RolloutOptions& opt);

/// Pooled over the selected rows of all trajectories (truncated to the
/// shorter of each pair). Rows listed in `wrapped` compare shortest-arc angle
/// differences. ContractViolation for an empty selection.
double log_rmse(const std::vector<Eigen::MatrixXd>& predicted, const std::vector<Eigen::MatrixXd>& reference,
                const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& wrapped = {});

/// Shortest-arc difference a − b in (−π, π].
double angle_difference(double a, double b);

/// a·Ê + c fitted to reference energies.
struct EnergyCalibration {
  double scale = 1.0;
  double offset = 0.0;
  double residual = 0.0;  // RMS of the fit residual

  double apply(double e) const { return scale * e + offset; }
};

/// Least-squares fit of a·Ê + c to `reference` along `states`. Throws
/// CalibrationError when Ê is nearly constant or the fitted a is not positive,
/// CapabilityError for APH.
EnergyCalibration fit_energy_scale(const Model& model, const Eigen::MatrixXd& states,
                                   const Eigen::VectorXd& reference);

/// Ê at each column of `states`, one value per column; CapabilityError for APH.
Eigen::VectorXd model_energy(const Model& model, const Eigen::MatrixXd& states);

/// Calibrated Ê along the states, divided by its first value when
/// `normalize` (or by max |Ê| when |Ê(x₀)| ≤ 1e-9).
Eigen::VectorXd energy_along_trajectory(const Model& model, const Eigen::MatrixXd& states, bool normalize,
                                        const EnergyCalibration& cal = {});

/// Sum of increases over sum of decreases of a sequence; 0 for a
/// non-increasing sequence, +inf when nothing decreases but something rises.
double increase_to_decrease_ratio(const Eigen::VectorXd& sequence);

struct GridAxis {
  std::string name;
  Eigen::Index state_index = 0;
  double lo = -1.0;
  double hi = 1.0;
  std::size_t points = 41;
};

struct EnergyGrid {
  GridAxis x, y;
  Eigen::MatrixXd values;  // points(x) x points(y), calibrated Ê
  double normalization = 1.0;  // max |values|
};

/// Ê over the grid spanned by two state variables, the others held at
/// `fixed` (zero when empty).
EnergyGrid energy_grid(const Model& model, const GridAxis& x, const GridAxis& y, const Eigen::VectorXd& fixed = {},
                       const EnergyCalibration& cal = {});
/// (p, ṗ) for N-MSD, (β, β̇) for the Furuta pendulum.
std::pair<GridAxis, GridAxis> default_grid_axes(SystemId system);

struct ForceErrors {
  double inertial = 0.0;
  double coriolis = 0.0;
  double potential_derived = 0.0;
};

/// Learned and true Euler-Lagrange terms on the reference samples of one
/// trajectory (n rows each).
struct ForceTerms {
  Eigen::MatrixXd inertial, coriolis, potential_derived;
};
ForceTerms euler_lagrange_terms(const Model& model, const Eigen::MatrixXd& states,
                                const Eigen::MatrixXd& accelerations);

/// Per-component log-RMSE of the model's terms against the reference model
/// on the test states with the reference accelerations. CapabilityError for APH.
ForceErrors force_decomposition_errors(const Model& model, const Model& reference, const Dataset& test);

struct EvalReport {
  std::string model_id;
  std::string loss;
  std::string test_set;
  SystemId system = SystemId::nmsd;
  std::vector<std::string> state_names;
  std::vector<double> state_log_rmse;
  std::optional<ForceErrors> forces;       // empty: not applicable
  std::optional<double> energy_log_rmse;   // empty: not applicable or calibration failed
  std::optional<EnergyCalibration> calibration;
  std::string energy_note;                 // why energy is missing, if it is
  std::vector<bool> diverged;
  nlohmann::json metadata = nlohmann::json::object();

  bool any_diverged() const;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

struct EvalConfig {
  RolloutOptions rollout;
  std::string model_id = "model";
  std::string loss = "";
  /// Calibration trajectory for the energy scale; the first test trajectory
  /// when empty.
  std::optional<Trajectory> calibration;
  std::size_t grid_points = 41;
};

struct TrajectoryEnergy {
  Eigen::VectorXd time, truth, model;  // both normalized
};

struct EvalResult {
  EvalReport report;
  Predictions predictions;
  std::vector<TrajectoryEnergy> energy;               // empty for APH
  std::vector<ForceTerms> learned_terms, true_terms;  // empty for APH
  std::vector<EnergyGrid> grids;                      // model, then ground truth
};

/// Runs the four evaluations of a model on a simulated test set.
EvalResult evaluate(const Model& model, const Dataset& test, const EvalConfig& cfg);

/// State names (p, ṗ) or (α, β, α̇, β̇).
std::vector<std::string> state_names(SystemId system);

/// The report as rows "model,loss,test_set,channel,log_rmse" (no header).
std::vector<std::string> metrics_rows(const EvalReport& r);
void write_metrics_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& file);

/// report.json, metrics.csv, energy_grid_<axes>.csv, energy_traj_<id>.csv and
/// force_decomp_<id>.csv in `dir`.
void emit_report(const EvalResult& result, const Dataset& test, const std::filesystem::path& dir);

}  // namespace lagid
