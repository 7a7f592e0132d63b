#pragma once

// Losses (trajectory, APHYNITY penalty, torque, integral inverse model), the
// λ balancing rule, Adam with decoupled weight decay and the two-stage
// curriculum. Reported losses are means, not sums.

#include "lagid/benchmarks.hpp"
#include "lagid/models.hpp"
#include "lagid/ode.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace lagid {

enum class LossKind { traj, aph, torque, prop };
std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

/// A window of a recorded trajectory. Times are local: the window starts at 0.
struct Segment {
  double dt = 0.01;
  Eigen::MatrixXd states;         // 2n x (K + 1)
  Eigen::MatrixXd inputs;         // p x (K + 1)
  Eigen::MatrixXd accelerations;  // n x (K + 1); empty unless attached
  std::size_t source = 0;         // trajectory index in the dataset
  Eigen::Index offset = 0;        // first sample inside the trajectory

  Eigen::Index steps() const { return states.cols() - 1; }
};

/// Consecutive windows of `steps` intervals (adjacent windows share an
/// endpoint). Samples left over at the end of a trajectory are dropped.
std::vector<Segment> make_segments(const Dataset& d, std::size_t steps);

/// Fills Segment::accelerations from a reference model (simulation only).
void attach_accelerations(std::vector<Segment>& segments, const Model& reference);

struct LossValue {
  double value = 0.0;
  Eigen::VectorXd gradient;  // empty when not requested
  std::size_t count = 0;     // number of averaged terms
  std::vector<std::size_t> failed;  // batch indices whose rollout failed
};

struct EvalOptions {
  ode::SolverConfig solver;
  std::size_t chunk_columns = 256;  // fixed chunking; results do not depend on `threads`
  std::size_t threads = 1;
  bool gradient = true;
};

/// Mean of ‖x̂_j − x_j‖² over segments, steps j = 1..K and state dims. A
/// failed rollout contributes its finite prefix.
LossValue traj_loss(const Model& model, const std::vector<Segment>& batch, const EvalOptions& opt);

/// RMS over batch states of ‖F_a(x)‖₂ / s, with s the augmentation output
/// scale (acceleration scale for APH, force scale for ADLN).
LossValue aph_penalty(const Model& model, const std::vector<Segment>& batch, const EvalOptions& opt);

/// Mean over samples of ‖τ_u − τ̂_u‖² / s_τ². Needs attached accelerations.
LossValue torque_loss(const Model& model, const std::vector<Segment>& batch, const EvalOptions& opt);

/// (Z̄_j − Ā_j) for j = 1..K from measured states only, one column per
/// window. With `per_unit_time` each column is divided by ΔT, i.e. it is the
/// window-averaged force residual.
Eigen::MatrixXd integral_residuals(const Model& model, const Segment& segment, bool per_unit_time = true);

/// Mean over windows and dims of ((Z̄ − Ā)/(ΔT s_τ))².
LossValue itau_loss(const Model& model, const std::vector<Segment>& batch, const EvalOptions& opt);

/// L_Iτ + λ L_traj.
LossValue prop_loss(const Model& model, const std::vector<Segment>& batch, double lambda, const EvalOptions& opt);
/// ‖F_a‖ + λ L_traj.
LossValue aph_loss(const Model& model, const std::vector<Segment>& batch, double lambda, const EvalOptions& opt);

struct LossConfig {
  LossKind kind = LossKind::traj;
  double lambda0 = 1.0;
  double lambda_rate = 1.0;  // η_λ
  double lambda_min = 0.0;
  double lambda_max = 1e6;
};

/// λ + η_λ·L_traj clamped to [λ_min, λ_max].
double update_lambda(double lambda, double traj_loss, const LossConfig& cfg);

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  /// Segments per update; 0 takes the whole set. One update per epoch, on a
  /// fresh random subset when smaller than the set.
  std::size_t batch_size = 0;
};

struct AdamState {
  Eigen::VectorXd m, v;
  std::size_t step = 0;
};

/// Bias-corrected Adam plus decoupled decay θ ← θ − lr·wd·θ, the decay
/// optionally weighted per entry. Returns false and leaves everything
/// untouched when the gradient is not finite.
bool adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, const OptimizerConfig& cfg,
               const Eigen::VectorXd* decay_mask = nullptr);

struct StageConfig {
  double horizon = 0.02;  // seconds; a multiple of the dataset Δt
  std::size_t epochs = 0;
  ode::Method method = ode::Method::tsit5;
  std::size_t batch_size = 0;  // overrides OptimizerConfig::batch_size when > 0
};

struct Curriculum {
  StageConfig stage1;
  StageConfig stage2;
  /// "smoke" or "paper-scale" epoch counts for the system's horizons.
  static Curriculum defaults(SystemId system, const std::string& profile, double dt = 0.01);
};

struct TrainConfig {
  LossConfig loss;
  OptimizerConfig optimizer;
  Curriculum curriculum;
  ode::SolverConfig solver;
  std::size_t chunk_columns = 256;
  std::size_t threads = 1;
  std::uint64_t seed = 0;        // batch sampling
  double abort_fraction = 0.5;   // failing share of a batch that aborts training
  bool track_itau = true;        // record L_Iτ even when it is not optimized

  static TrainConfig defaults(SystemId system, LossKind kind, const std::string& profile);
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct HistoryRow {
  std::size_t epoch = 0;
  int stage = 1;
  double loss_total = 0.0;
  double loss_traj = 0.0;
  double loss_itau = 0.0;
  double lambda = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<HistoryRow> history;
  std::size_t skipped_updates = 0;  // non-finite gradients
};

/// Throws TrainingAbort with the failing segment indices, ConfigError for
/// inconsistent configs and CapabilityError for losses the model cannot use.
TrainResult train(const Model& initial, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const HistoryRow&)>& progress = {});

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& file);
std::vector<HistoryRow> read_history_csv(const std::filesystem::path& file);

}  // namespace lagid
