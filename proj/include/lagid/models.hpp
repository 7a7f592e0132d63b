#pragma once

// Model families for the two benchmark systems. A Model owns its component
// objects (shared, immutable after construction) and a flat ParameterVector;
// copying a Model copies the parameters and shares the components.

#include "lagid/mechanics.hpp"
#include "lagid/mlp.hpp"
#include "lagid/systems.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace lagid {

enum class ModelKind { ground_truth, dln, aph, adln };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelSpec {
  SystemId system = SystemId::nmsd;
  ModelKind kind = ModelKind::dln;
  std::vector<int> hidden;  // empty: (64, 64) for N-MSD, (16, 16) for Furuta
  double diag_floor = 1e-4;
  // Output scales of the networks; learned quantities are O(1) times these.
  double mass_scale = 1.0;
  double potential_scale = 1.0;
  double force_scale = 1.0;
  double accel_scale = 1.0;
  bool angle_embedding = false;  // (sin, cos) features for revolute coordinates
  NmsdParams nmsd;
  FurutaParams furuta;

  /// Kind-independent defaults for the given system (layer widths, scales).
  static ModelSpec defaults(SystemId system, ModelKind kind);
  std::vector<int> effective_hidden() const;
  int dof() const { return system == SystemId::nmsd ? 1 : 2; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

// ---------------------------------------------------------------------------
// Components

/// M = m, V = ½k1 p² + ¼k2 p⁴. With `learnable`, (m, k1, k2) live in a
/// "physical" block as logarithms.
class NmsdLagrangian : public LagrangianModel {
 public:
  NmsdLagrangian(NmsdParams p, bool learnable) : p_(p), learnable_(learnable) {}
  int dof() const override { return 1; }
  void register_parameters(ParameterVector& params) override;
  void initialize(ParameterVector& params) const;
  LagrangianTerms terms(ad::Tape& tape, const BoundParams& params, ad::Var q) const override;

 private:
  NmsdParams p_;
  bool learnable_;
  std::size_t block_ = 0;
};

/// M = [[J1 + ¼m_p L_p² sin²β, ½m_p L_r L_p cos β], [·, J2]],
/// V = ½ m_p g L_p (1 − cos β). With `learnable`, (J1, J2, m_p, L_p, L_r) live
/// in a "physical" block as logarithms.
class FurutaLagrangian : public LagrangianModel {
 public:
  FurutaLagrangian(FurutaParams p, bool learnable) : p_(p), learnable_(learnable) {}
  int dof() const override { return 2; }
  void register_parameters(ParameterVector& params) override;
  void initialize(ParameterVector& params) const;
  LagrangianTerms terms(ad::Tape& tape, const BoundParams& params, ad::Var q) const override;

 private:
  FurutaParams p_;
  bool learnable_;
  std::size_t block_ = 0;
};

/// M̂ = s_M·L Lᵀ with diag(L) = softplus(raw) + ε, V̂ = s_V·net(q).
class DelanLagrangian : public LagrangianModel {
 public:
  DelanLagrangian(int dof, const std::vector<int>& hidden, double diag_floor, double mass_scale,
                  double potential_scale, std::vector<bool> embed);
  int dof() const override { return dof_; }
  void register_parameters(ParameterVector& params) override;
  void initialize(ParameterVector& params, Rng& rng) const;
  LagrangianTerms terms(ad::Tape& tape, const BoundParams& params, ad::Var q) const override;

  const Mlp& mass_net() const { return mass_net_; }
  const Mlp& potential_net() const { return potential_net_; }
  double diag_floor() const { return floor_; }
  /// Raw outputs of the mass network: n diagonal entries then the strictly
  /// lower entries row by row.
  ad::Var raw_mass(const BoundParams& params, ad::Var q) const;

 private:
  struct Features {
    ad::Var value;
    std::vector<ad::Var> tangents;  // ∂φ/∂q_k
  };
  Features features(ad::Tape& tape, ad::Var q) const;

  int dof_;
  double floor_, mass_scale_, potential_scale_;
  std::vector<bool> embed_;
  int feature_dim_;
  Mlp mass_net_;
  Mlp potential_net_;
};

/// τ_u = u for a directly actuated system (p = n_d).
class DirectInput : public InputForce {
 public:
  explicit DirectInput(int dof) : dof_(dof) {}
  int dof() const override { return dof_; }
  int input_dim() const override { return dof_; }
  ad::Var tau_u(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot, ad::Var u) const override;

 private:
  int dof_;
};

/// DC motor on the rotor: τ_u = (k_t/R_m (−u − k_m α̇), 0).
class FurutaMotor : public InputForce {
 public:
  explicit FurutaMotor(const FurutaParams& p) : gain_(p.k_t / p.R_m), k_m_(p.k_m) {}
  int dof() const override { return 2; }
  int input_dim() const override { return 1; }
  ad::Var tau_u(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot, ad::Var u) const override;
  double gain() const { return gain_; }
  double back_emf() const { return k_m_; }

 private:
  double gain_, k_m_;
};

/// Known non-conservative forces: nmsd_cubic τ = −b1 q̇ − b2 q̇³ (scalar
/// coordinate), linear_friction τ_k = −c_k q̇_k.
class ParametricNcForce : public NonConservativeForce {
 public:
  enum class Form { nmsd_cubic, linear_friction };
  ParametricNcForce(Form form, std::vector<double> coefficients);
  ad::Var tau_nc(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot) const override;
  Form form() const { return form_; }

 private:
  Form form_;
  std::vector<double> c_;
};

class ZeroNcForce : public NonConservativeForce {
 public:
  ad::Var tau_nc(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot) const override;
};

/// scale·net(q, q̇) with n_d outputs. Used for the learned non-conservative
/// force and for the APH acceleration residual.
class NetworkField : public NonConservativeForce {
 public:
  NetworkField(const std::string& name, int dof, const std::vector<int>& hidden, double scale);
  void register_parameters(ParameterVector& params) override;
  void initialize(ParameterVector& params, Rng& rng) const;
  ad::Var tau_nc(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot) const override;
  ad::Var eval(const BoundParams& params, ad::Var x) const;
  const Mlp& net() const { return net_; }

 private:
  double scale_;
  Mlp net_;
};

// ---------------------------------------------------------------------------

class Model {
 public:
  /// Deterministic in (spec, seed). Throws ConfigError for invalid specs.
  static Model create(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  ModelKind kind() const { return spec_.kind; }
  int dof() const { return spec_.dof(); }
  int input_dim() const { return input_->input_dim(); }
  int state_dim() const { return 2 * dof(); }
  /// False for APH, whose energy and force terms are not identified.
  bool identifies_lagrangian() const { return spec_.kind != ModelKind::aph; }
  bool has_augmentation() const { return augment_ != nullptr; }

  const ParameterVector& parameters() const { return params_; }
  ParameterVector& parameters() { return params_; }
  void set_parameters(const Eigen::VectorXd& values) { params_.set_values(values); }

  /// Lagrangian view for dynamics-core; CapabilityError for APH.
  MechanicalSystem mechanics() const;
  /// Lagrangian used inside the model: the physics prior for APH.
  MechanicalSystem internal_mechanics() const;

  // Tape-level evaluation on batches (columns are samples).
  LagrangianTerms lagrangian_terms(ad::Tape& tape, const BoundParams& params, ad::Var q) const;
  ad::Var tau_u(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot, ad::Var u) const;
  /// Learned or known τ̂_NC. For APH this is M_p(q)·F_a(x), the force
  /// equivalent of the acceleration residual; `terms` may be passed to avoid
  /// recomputing M_p.
  ad::Var tau_nc(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot,
                 const LagrangianTerms* terms = nullptr) const;
  /// F_a(x): acceleration residual (APH) or learned force (ADLN).
  ad::Var augmentation(const BoundParams& params, ad::Var x) const;
  /// ẋ = (q̇, q̈). Columns with singular M̂ are NaN and listed in `singular`.
  ad::Var state_derivative(ad::Tape& tape, const BoundParams& params, ad::Var x, ad::Var u,
                           std::vector<Eigen::Index>* singular = nullptr) const;

  /// Single-sample state derivative; throws SingularMassError.
  Eigen::VectorXd derivative(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;

  const std::shared_ptr<const LagrangianModel>& lagrangian_component() const { return lagrangian_; }
  const std::shared_ptr<const DelanLagrangian>& delan() const { return delan_; }

 private:
  Model() = default;

  ModelSpec spec_;
  std::uint64_t seed_ = 0;
  ParameterVector params_;
  std::shared_ptr<const LagrangianModel> lagrangian_;
  std::shared_ptr<const DelanLagrangian> delan_;
  std::shared_ptr<const InputForce> input_;
  std::shared_ptr<const NonConservativeForce> nc_;
  std::shared_ptr<const NetworkField> augment_;
};

/// Ground-truth model of a benchmark with the given physical parameters.
Model ground_truth_model(SystemId system, const NmsdParams& nmsd = {}, const FurutaParams& furuta = {});

// Checkpoint layout (all integers little-endian):
//   8 bytes  magic "LAGIDCK1"
//   u64      header length H
//   H bytes  UTF-8 JSON {"spec", "seed", "layout": [{name, offset, rows, cols}], "metadata"}
//   u64      parameter count P
//   P × f64  parameter values (IEEE 754 binary64, little-endian)
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& metadata = nlohmann::json::object());
struct Checkpoint {
  Model model;
  nlohmann::json metadata;
};
/// Throws ConfigError on malformed files or a layout that disagrees with the spec.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lagid
