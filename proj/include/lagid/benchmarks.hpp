#pragma once

// Ground-truth simulators, excitation signals, dataset generation and I/O for
// the nonlinear mass-spring-damper (N-MSD) and the Furuta pendulum.

#include "lagid/mechanics.hpp"
#include "lagid/ode.hpp"
#include "lagid/systems.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lagid {

/// Hand-expanded N-MSD dynamics (ṗ, (u − k1 p − k2 p³ − b1 ṗ − b2 ṗ³)/m).
Eigen::VectorXd nmsd_rhs(const NmsdParams& p, const State& s, double u);
/// Furuta dynamics through the Euler-Lagrange equations of the ground-truth model.
Eigen::VectorXd furuta_rhs(const FurutaParams& p, const State& s, double u);

/// A·sin(2π(f0 t + (f1 − f0) t²/(2T))).
double chirp(double amplitude, double f0, double f1, double T, double t);
/// A on [start, start + width), 0 elsewhere.
double square_impulse(double amplitude, double start, double width, double t);

struct Trajectory {
  double t0 = 0.0;
  double dt = 0.01;
  Eigen::MatrixXd states;  // 2n_d x N, rows (q, q̇)
  Eigen::MatrixXd inputs;  // p x N

  Eigen::Index samples() const { return states.cols(); }
  int dof() const { return static_cast<int>(states.rows() / 2); }
  double time(Eigen::Index j) const { return t0 + static_cast<double>(j) * dt; }
  ode::InterpolatedSignal input_signal() const { return {t0, dt, inputs}; }
  void validate() const;
};

struct Dataset {
  SystemId system = SystemId::nmsd;
  std::string split;  // train, test_free, test_forced, test_chirp, test_square
  double dt = 0.01;
  std::uint64_t seed = 0;
  nlohmann::json params;  // physical parameters used for generation
  std::string velocity_source = "exact";
  std::vector<Trajectory> trajectories;

  void validate() const;
};

struct DerivativeFilter {
  double omega0 = 100.0;
  double xi = 0.8;
  double dt = 0.01;  // sampling interval the discretization is built for
};

/// Causal estimate of ṗ from uniformly sampled p through the bilinear
/// discretization of F(s) = ω0² s / (s² + 2ξω0 s + ω0²), started in steady
/// state at the first sample. Throws ConfigError when dt differs from the
/// filter's design interval.
std::vector<double> filter_velocity(const DerivativeFilter& filter, const std::vector<double>& positions, double dt);

struct GenerationConfig {
  double dt = 0.01;
  double nmsd_chirp_amplitude = 1.0;
  double nmsd_square_amplitude = 1.0;
  std::size_t nmsd_test_trajectories = 3;
  double furuta_chirp_amplitude = 3.0;  // V
  std::size_t furuta_forced_trajectories = 3;
  std::string velocity_source = "exact";  // or "filtered"
  DerivativeFilter filter;
  double rtol = 1e-10;
  double atol = 1e-12;
};

void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);

struct NmsdDatasets {
  Dataset train;
  Dataset test_chirp;
  Dataset test_square;
};

/// One 60 s chirp trajectory cut into 30 segments of 2 s; 25 s chirp and 15 s
/// square-impulse test sets. p0 ~ U(−1, 1), ṗ0 ~ U(−5, 5).
NmsdDatasets generate_nmsd_dataset(const NmsdParams& params, std::uint64_t seed, const GenerationConfig& cfg = {});

enum class FurutaMode { train_free, test_free, test_forced };
std::string to_string(FurutaMode m);
FurutaMode parse_furuta_mode(const std::string& s);

/// train_free: 64 × 1 s free rollouts, α, β ~ U(−π, π), α̇, β̇ ~ U(−5, 5);
/// test_free: 6 × 6 s with rates ~ U(−20, 20); test_forced: 20 s chirp 0.5→6 Hz.
Dataset generate_furuta_dataset(const FurutaParams& params, std::uint64_t seed, FurutaMode mode,
                                const GenerationConfig& cfg = {});

/// Simulates the ground truth from x0 with sampled inputs (linear between
/// samples). Throws IntegrationError.
Trajectory simulate(SystemId system, const nlohmann::json& params, const Eigen::VectorXd& x0,
                    const Eigen::MatrixXd& inputs, double dt, double rtol = 1e-10, double atol = 1e-12);

/// Writes `<dir>/dataset.json` and `<dir>/traj_###.csv`.
void write_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

void write_trajectory_csv(const Trajectory& t, const std::filesystem::path& file);
Trajectory read_trajectory_csv(const std::filesystem::path& file, int dof, int input_dim);

}  // namespace lagid
