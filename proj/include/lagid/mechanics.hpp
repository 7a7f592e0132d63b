#pragma once

// Lagrangian mechanics for L = ½ q̇ᵀM(q)q̇ − V(q) with generalized input and
// non-conservative forces. Batched functions operate on tape nodes whose
// columns are independent samples; the State overloads wrap them for a
// single configuration.

#include "lagid/ad.hpp"
#include "lagid/parameters.hpp"

#include <Eigen/Dense>

#include <memory>
#include <vector>

namespace lagid {

struct State {
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;

  State() = default;
  State(Eigen::VectorXd q_, Eigen::VectorXd qdot_) : q(std::move(q_)), qdot(std::move(qdot_)) {}

  int dof() const { return static_cast<int>(q.size()); }
  /// Stacked (q, q̇).
  Eigen::VectorXd stacked() const;
  static State from_stacked(const Eigen::VectorXd& x);
  /// Throws ContractViolation unless sizes agree, n_d ≥ 1 and entries are finite.
  void validate() const;
};

/// Mass matrix, potential and their first partials in q, one column per sample.
struct LagrangianTerms {
  int dof = 0;
  ad::Var mass;                // n*n x B, row-major packed
  std::vector<ad::Var> dmass;  // dmass[k] = ∂M/∂q_k, packed
  ad::Var potential;           // 1 x B
  ad::Var dpotential;          // n x B, ∂V/∂q
};

class LagrangianModel {
 public:
  virtual ~LagrangianModel() = default;
  virtual int dof() const = 0;
  /// Adds this model's trainable blocks to `params` and remembers their indices.
  virtual void register_parameters(ParameterVector& params) = 0;
  virtual LagrangianTerms terms(ad::Tape& tape, const BoundParams& params, ad::Var q) const = 0;
};

/// Generalized input force τ_u(q, q̇, u).
class InputForce {
 public:
  virtual ~InputForce() = default;
  virtual int dof() const = 0;
  virtual int input_dim() const = 0;
  virtual void register_parameters(ParameterVector&) {}
  virtual ad::Var tau_u(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot,
                        ad::Var u) const = 0;
};

/// Non-conservative generalized force τ_NC(q, q̇).
class NonConservativeForce {
 public:
  virtual ~NonConservativeForce() = default;
  virtual void register_parameters(ParameterVector&) {}
  virtual ad::Var tau_nc(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot) const = 0;
};

struct ForceModel {
  std::shared_ptr<const InputForce> input;
  std::shared_ptr<const NonConservativeForce> nc;
};

namespace mech {

/// M(q)q̇.
ad::Var momentum(const LagrangianTerms& terms, ad::Var qdot);
/// ∂L/∂q = ½ q̇ᵀ(∂M/∂q_k)q̇ − ∂V/∂q_k, stacked over k.
ad::Var lagrangian_dq(const LagrangianTerms& terms, ad::Var qdot);
/// (∂²L/∂q∂q̇)q̇ = Σ_k (∂M/∂q_k) q̇ q̇_k.
ad::Var coriolis(const LagrangianTerms& terms, ad::Var qdot);
/// (∂²L/∂q̇²)q̈ = M q̈.
ad::Var inertial(const LagrangianTerms& terms, ad::Var qddot);
ad::Var kinetic_energy(const LagrangianTerms& terms, ad::Var qdot);
ad::Var lagrangian(const LagrangianTerms& terms, ad::Var qdot);
ad::Var energy(const LagrangianTerms& terms, ad::Var qdot);

/// Solves M q̈ = τ − (∂²L/∂q∂q̇)q̇ + ∂L/∂q. Columns with a singular mass
/// matrix come back as NaN and are listed in `singular` when non-null.
ad::Var accelerations(const LagrangianTerms& terms, ad::Var qdot, ad::Var tau,
                      std::vector<Eigen::Index>* singular = nullptr);
/// τ̂_u = M q̈ + (∂²L/∂q∂q̇)q̇ − ∂L/∂q − τ_NC.
ad::Var input_force_residual(const LagrangianTerms& terms, ad::Var qdot, ad::Var qddot, ad::Var tau_nc);

}  // namespace mech

/// Lagrangian plus forces together with the parameters they read.
struct MechanicalSystem {
  std::shared_ptr<const LagrangianModel> lagrangian;
  ForceModel forces;
  const ParameterVector* params = nullptr;

  int dof() const { return lagrangian->dof(); }
  int input_dim() const { return forces.input->input_dim(); }
};

struct EulerLagrangeTerms {
  Eigen::VectorXd inertial;
  Eigen::VectorXd coriolis;
  Eigen::VectorXd potential_derived;
};

// Single-state evaluation. All throw ContractViolation on dimension
// mismatches; forward/inverse dynamics throw SingularMassError when M(q) is
// numerically singular (condition number above 1e12).
double lagrangian_value(const MechanicalSystem& sys, const State& s);
double total_energy(const MechanicalSystem& sys, const State& s);
Eigen::MatrixXd mass_matrix(const MechanicalSystem& sys, const Eigen::VectorXd& q);
double potential_energy(const MechanicalSystem& sys, const Eigen::VectorXd& q);
EulerLagrangeTerms euler_lagrange_terms(const MechanicalSystem& sys, const State& s,
                                        const Eigen::VectorXd& qddot);
Eigen::VectorXd forward_dynamics(const MechanicalSystem& sys, const State& s, const Eigen::VectorXd& u);
Eigen::VectorXd inverse_dynamics(const MechanicalSystem& sys, const State& s, const Eigen::VectorXd& qddot);
Eigen::VectorXd generalized_momentum(const MechanicalSystem& sys, const State& s);
Eigen::VectorXd input_force(const MechanicalSystem& sys, const State& s, const Eigen::VectorXd& u);
Eigen::VectorXd nonconservative_force(const MechanicalSystem& sys, const State& s);

}  // namespace lagid
