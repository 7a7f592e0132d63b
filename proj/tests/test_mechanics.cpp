#include "oracles.hpp"

#include "lagid/errors.hpp"
#include "lagid/mechanics.hpp"
#include "lagid/models.hpp"
#include "lagid/ode.hpp"
#include "lagid/rng.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace lagid;

namespace {

State st(std::initializer_list<double> q, std::initializer_list<double> qd) {
  Eigen::VectorXd a(static_cast<Eigen::Index>(q.size())), b(static_cast<Eigen::Index>(qd.size()));
  Eigen::Index i = 0;
  for (double v : q) a(i++) = v;
  i = 0;
  for (double v : qd) b(i++) = v;
  return State(a, b);
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd a(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) a(i++) = x;
  return a;
}

const Model& nmsd_gt() {
  static const Model m = ground_truth_model(SystemId::nmsd);
  return m;
}

const Model& furuta_gt() {
  static const Model m = ground_truth_model(SystemId::furuta);
  return m;
}

State random_furuta_state(Rng& rng) {
  const double pi = std::numbers::pi;
  return st({rng.uniform(-pi, pi), rng.uniform(-pi, pi)}, {rng.uniform(-10, 10), rng.uniform(-10, 10)});
}

std::vector<Model> shipped_models() {
  std::vector<Model> out;
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    for (ModelKind k : {ModelKind::ground_truth, ModelKind::dln, ModelKind::adln, ModelKind::aph}) {
      out.push_back(Model::create(ModelSpec::defaults(s, k), 11));
    }
  }
  return out;
}

}  // namespace

TEST(LagrangianValue, NmsdExamples) {
  auto sys = nmsd_gt().mechanics();
  EXPECT_EQ(lagrangian_value(sys, st({0}, {0})), 0.0);
  EXPECT_NEAR(lagrangian_value(sys, st({1}, {1})), -0.125, 1e-15);
  EXPECT_NEAR(lagrangian_value(sys, st({0.7}, {0})), -potential_energy(sys, vec({0.7})), 1e-15);
}

TEST(LagrangianValue, DimensionMismatchIsContractViolation) {
  EXPECT_THROW(lagrangian_value(nmsd_gt().mechanics(), st({0, 1}, {0, 1})), ContractViolation);
  EXPECT_THROW(lagrangian_value(nmsd_gt().mechanics(), st({0}, {0, 1})), ContractViolation);
}

TEST(TotalEnergy, NmsdExamples) {
  auto sys = nmsd_gt().mechanics();
  EXPECT_EQ(total_energy(sys, st({0}, {0})), 0.0);
  EXPECT_NEAR(total_energy(sys, st({1}, {1})), 1.125, 1e-15);
  // E − 2T = −L
  Rng rng(3);
  auto fs = furuta_gt().mechanics();
  for (int i = 0; i < 20; ++i) {
    State s = random_furuta_state(rng);
    const double t = 0.5 * s.qdot.dot(mass_matrix(fs, s.q) * s.qdot);
    EXPECT_NEAR(total_energy(fs, s) - 2 * t, -lagrangian_value(fs, s), 1e-14);
  }
}

TEST(EulerLagrangeTerms, NmsdExamples) {
  auto sys = nmsd_gt().mechanics();
  auto rest = euler_lagrange_terms(sys, st({0.4}, {0}), vec({0}));
  EXPECT_EQ(rest.inertial(0), 0.0);
  EXPECT_EQ(rest.coriolis(0), 0.0);
  EXPECT_NEAR(rest.potential_derived(0), -(0.4 + 0.5 * std::pow(0.4, 3)), 1e-15);
  auto t = euler_lagrange_terms(sys, st({1}, {2}), vec({3}));
  EXPECT_NEAR(t.inertial(0), 3.0, 1e-15);
  EXPECT_NEAR(t.coriolis(0), 0.0, 1e-15);
  EXPECT_NEAR(t.potential_derived(0), -1.5, 1e-15);
}

TEST(EulerLagrangeTerms, FurutaHangingAtRest) {
  auto t = euler_lagrange_terms(furuta_gt().mechanics(), st({0.3, 0}, {0, 0}), vec({1.0, -2.0}));
  EXPECT_EQ(t.coriolis.norm(), 0.0);
  EXPECT_NEAR(t.potential_derived.norm(), 0.0, 1e-18);
}

TEST(EulerLagrangeTerms, FurutaMatchesHandDerivation) {
  Rng rng(5);
  FurutaParams p;
  auto sys = furuta_gt().mechanics();
  for (int i = 0; i < 50; ++i) {
    State s = random_furuta_state(rng);
    Eigen::Vector4d x;
    x << s.q, s.qdot;
    auto ref = oracle::furuta_terms(p, x, 0.0);
    auto t = euler_lagrange_terms(sys, s, vec({0.3, -0.2}));
    EXPECT_LT(oracle::rel_err(t.coriolis, ref.coriolis), 1e-12);
    EXPECT_LT(oracle::rel_err(t.potential_derived, ref.dl_dq), 1e-12);
    EXPECT_LT(oracle::rel_err(t.inertial, oracle::furuta_mass(p, s.q(1)) * vec({0.3, -0.2})), 1e-12);
  }
}

TEST(ForwardDynamics, NmsdExamples) {
  auto sys = nmsd_gt().mechanics();
  EXPECT_NEAR(forward_dynamics(sys, st({0}, {0}), vec({1}))(0), 1.0, 1e-15);
  EXPECT_NEAR(forward_dynamics(sys, st({0}, {1}), vec({0}))(0), -0.3, 1e-15);
  EXPECT_EQ(forward_dynamics(sys, st({0}, {0}), vec({0}))(0), 0.0);
}

TEST(ForwardDynamics, FurutaEquilibria) {
  auto sys = furuta_gt().mechanics();
  EXPECT_NEAR(forward_dynamics(sys, st({0.0, 0.0}, {0, 0}), vec({0})).norm(), 0.0, 1e-15);
  EXPECT_NEAR(forward_dynamics(sys, st({1.0, std::numbers::pi}, {0, 0}), vec({0})).norm(), 0.0, 1e-12);
}

TEST(ForwardDynamics, FurutaQuarterTurn) {
  FurutaParams p;
  auto qdd = forward_dynamics(furuta_gt().mechanics(), st({0, std::numbers::pi / 2}, {0, 0}), vec({0}));
  // cos β = 0 decouples M; only gravity acts on β.
  EXPECT_NEAR(qdd(0), 0.0, 1e-12);
  EXPECT_NEAR(qdd(1), -0.5 * p.m_p * p.g * p.L_p / p.J2, 1e-9);
}

TEST(ForwardDynamics, FurutaMatchesHandDerivation) {
  Rng rng(8);
  FurutaParams p;
  auto sys = furuta_gt().mechanics();
  for (int i = 0; i < 100; ++i) {
    State s = random_furuta_state(rng);
    const double u = rng.uniform(-5, 5);
    Eigen::Vector4d x;
    x << s.q, s.qdot;
    EXPECT_LT(oracle::rel_err(forward_dynamics(sys, s, vec({u})), oracle::furuta_rhs(p, x, u).tail<2>()), 1e-12);
  }
}

TEST(ForwardDynamics, SingularFurutaParametersRejected) {
  ModelSpec spec = ModelSpec::defaults(SystemId::furuta, ModelKind::ground_truth);
  // Coupling equal to sqrt(J1 J2) makes M singular at β = 0.
  spec.furuta.J1 = 1e-4;
  spec.furuta.J2 = 1e-4;
  spec.furuta.L_p = 2e-4 / (spec.furuta.m_p * spec.furuta.L_r);
  EXPECT_THROW(spec.validate(), ConfigError);
}

namespace {

// M(q) = q², V = 0: singular at the origin.
class DegenerateLagrangian : public LagrangianModel {
 public:
  int dof() const override { return 1; }
  void register_parameters(ParameterVector&) override {}
  LagrangianTerms terms(ad::Tape& tape, const BoundParams&, ad::Var q) const override {
    LagrangianTerms t;
    t.dof = 1;
    t.mass = ad::square(q);
    t.dmass = {ad::scale(q, 2.0)};
    t.potential = tape.constant(Eigen::MatrixXd::Zero(1, q.cols()));
    t.dpotential = tape.constant(Eigen::MatrixXd::Zero(1, q.cols()));
    return t;
  }
};

}  // namespace

TEST(ForwardDynamics, SingularMassRaises) {
  MechanicalSystem sys = nmsd_gt().mechanics();
  sys.lagrangian = std::make_shared<DegenerateLagrangian>();
  EXPECT_THROW(forward_dynamics(sys, st({0}, {1}), vec({1})), SingularMassError);
  EXPECT_NO_THROW(forward_dynamics(sys, st({0.5}, {1}), vec({1})));
}

TEST(InverseDynamics, NmsdExamples) {
  auto sys = nmsd_gt().mechanics();
  EXPECT_NEAR(inverse_dynamics(sys, st({1}, {0}), vec({0}))(0), 1.5, 1e-15);
  EXPECT_EQ(inverse_dynamics(sys, st({0}, {0}), vec({0}))(0), 0.0);
}

TEST(InverseDynamics, RoundTripRandomStates) {
  Rng rng(21);
  for (const Model* m : {&nmsd_gt(), &furuta_gt()}) {
    auto sys = m->mechanics();
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      State s = m->dof() == 1 ? st({rng.uniform(-2, 2)}, {rng.uniform(-5, 5)}) : random_furuta_state(rng);
      Eigen::VectorXd u = vec({rng.uniform(-5, 5)});
      Eigen::VectorXd tau = input_force(sys, s, u);
      Eigen::VectorXd back = inverse_dynamics(sys, s, forward_dynamics(sys, s, u));
      worst = std::max(worst, oracle::rel_err(back, tau, 1e-300));
      EXPECT_LT((back - tau).cwiseAbs().maxCoeff(), 1e-10);
    }
    EXPECT_LT(worst, 1e-9);
  }
}

TEST(InverseDynamics, RoundTripLearnedModels) {
  Rng rng(22);
  for (const Model& m : shipped_models()) {
    if (!m.identifies_lagrangian()) continue;
    auto sys = m.mechanics();
    for (int i = 0; i < 20; ++i) {
      State s = m.dof() == 1 ? st({rng.uniform(-2, 2)}, {rng.uniform(-5, 5)}) : random_furuta_state(rng);
      Eigen::VectorXd u = vec({rng.uniform(-5, 5)});
      Eigen::VectorXd tau = input_force(sys, s, u);
      EXPECT_LT(oracle::rel_err(inverse_dynamics(sys, s, forward_dynamics(sys, s, u)), tau), 1e-9);
    }
  }
}

TEST(GeneralizedMomentum, Examples) {
  auto sys = nmsd_gt().mechanics();
  EXPECT_EQ(generalized_momentum(sys, st({0.3}, {0}))(0), 0.0);
  EXPECT_NEAR(generalized_momentum(sys, st({0.3}, {2}))(0), 2.0, 1e-15);
  FurutaParams p;
  auto pm = generalized_momentum(furuta_gt().mechanics(), st({0, std::numbers::pi / 2}, {1.5, -0.5}));
  EXPECT_NEAR(pm(0), (p.J1 + 0.25 * p.m_p * p.L_p * p.L_p) * 1.5, 1e-15);
  EXPECT_NEAR(pm(1), p.J2 * -0.5, 1e-15);
}

TEST(MassMatrix, SymmetricAndPositiveDefinite) {
  Rng rng(31);
  for (const Model& m : shipped_models()) {
    auto sys = m.internal_mechanics();
    double min_eig = 1e300;
    for (int i = 0; i < 1000; ++i) {
      Eigen::VectorXd q(m.dof());
      for (Eigen::Index k = 0; k < q.size(); ++k) q(k) = rng.uniform(-std::numbers::pi, std::numbers::pi);
      Eigen::MatrixXd mm = mass_matrix(sys, q);
      EXPECT_EQ((mm - mm.transpose()).cwiseAbs().maxCoeff(), 0.0);
      min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(mm).eigenvalues().minCoeff());
    }
    EXPECT_GT(min_eig, 0.0) << to_string(m.spec().system) << " " << to_string(m.kind());
  }
}

TEST(Derivatives, MatchFiniteDifferences) {
  Rng rng(41);
  for (const Model& m : shipped_models()) {
    auto sys = m.internal_mechanics();
    for (int i = 0; i < 10; ++i) {
      const int n = m.dof();
      State s = n == 1 ? st({rng.uniform(-2, 2)}, {rng.uniform(-3, 3)}) : random_furuta_state(rng);
      // ∂V/∂q
      auto v_of_q = [&](const Eigen::VectorXd& q) { return vec({potential_energy(sys, q)}); };
      Eigen::VectorXd dv = oracle::jacobian_fd(v_of_q, s.q).transpose();
      auto terms = euler_lagrange_terms(sys, State(s.q, Eigen::VectorXd::Zero(n)), Eigen::VectorXd::Zero(n));
      EXPECT_LT(oracle::rel_err(-terms.potential_derived, dv, 1e-8), 1e-5);
      // ∂(M q̇)/∂q · q̇ equals the Coriolis term (∂²L/∂q∂q̇) q̇.
      auto p_of_q = [&](const Eigen::VectorXd& q) { return generalized_momentum(sys, State(q, s.qdot)); };
      Eigen::MatrixXd jp = oracle::jacobian_fd(p_of_q, s.q);
      auto full = euler_lagrange_terms(sys, s, Eigen::VectorXd::Zero(n));
      EXPECT_LT(oracle::rel_err(full.coriolis, jp * s.qdot, 1e-8), 1e-5);
      // ∂L/∂q
      auto l_of_q = [&](const Eigen::VectorXd& q) { return vec({lagrangian_value(sys, State(q, s.qdot))}); };
      Eigen::VectorXd dl = oracle::jacobian_fd(l_of_q, s.q).transpose();
      EXPECT_LT(oracle::rel_err(full.potential_derived, dl, 1e-8), 1e-5);
      // ∂L/∂q̇ = M q̇
      auto l_of_qd = [&](const Eigen::VectorXd& qd) { return vec({lagrangian_value(sys, State(s.q, qd))}); };
      Eigen::VectorXd dlqd = oracle::jacobian_fd(l_of_qd, s.qdot).transpose();
      EXPECT_LT(oracle::rel_err(generalized_momentum(sys, s), dlqd, 1e-8), 1e-5);
    }
  }
}

TEST(PowerBalance, FurutaForcedTrajectory) {
  FurutaParams p;
  auto sys = furuta_gt().mechanics();
  auto u_of_t = [](double t) { return 2.0 * std::sin(3.0 * t); };
  ode::Fn rhs = [&](double t, const Eigen::VectorXd& x) {
    Eigen::VectorXd d(4);
    d << x.tail(2), forward_dynamics(sys, State::from_stacked(x), vec({u_of_t(t)}));
    return d;
  };
  ode::SolverConfig cfg;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-12;
  const double dt = 1e-3;
  auto grid = ode::uniform_grid(0, dt, 5000);
  Eigen::VectorXd x0 = vec({0.1, 0.5, 1.0, -2.0});
  Eigen::MatrixXd xs = ode::solve(rhs, x0, grid, cfg);
  std::vector<double> power(grid.size()), energy(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    State s = State::from_stacked(xs.col(static_cast<Eigen::Index>(k)));
    power[k] = s.qdot.dot(input_force(sys, s, vec({u_of_t(grid[k])})) + nonconservative_force(sys, s));
    energy[k] = total_energy(sys, s);
  }
  const std::vector<double> work = ode::trapezoid(power, dt);
  double worst = 0, scale = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    worst = std::max(worst, std::abs(energy[k] - energy[0] - work[k]));
    scale = std::max(scale, std::abs(energy[k] - energy[0]));
  }
  EXPECT_LT(worst / scale, 1e-4);
}
