#include "lagid/control.hpp"
#include "lagid/errors.hpp"
#include "lagid/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace lagid;

namespace {

constexpr double kPi = std::numbers::pi;

Model furuta_gt(const FurutaParams& p = {}) { return ground_truth_model(SystemId::furuta, {}, p); }

FurutaParams frictionless() {
  FurutaParams p;
  p.c_r = 0.0;
  p.c_p = 0.0;
  return p;
}

Eigen::Vector4d plant_xdot(const FurutaParams& p, const Eigen::Vector4d& x, double u) {
  return furuta_rhs(p, State(x.head<2>(), x.tail<2>()), u);
}

Eigen::Matrix2d analytic_mass(const FurutaParams& p, double beta) {
  Eigen::Matrix2d M;
  M(0, 0) = p.J1 + 0.25 * p.m_p * p.L_p * p.L_p * std::sin(beta) * std::sin(beta);
  M(0, 1) = M(1, 0) = 0.5 * p.m_p * p.L_r * p.L_p * std::cos(beta);
  M(1, 1) = p.J2;
  return M;
}

Eigen::Vector4d random_state(Rng& rng) {
  return {rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-5, 5), rng.uniform(-5, 5)};
}

}  // namespace

TEST(Lqr, DoubleIntegrator) {
  Eigen::MatrixXd A(2, 2), B(2, 1);
  A << 0, 1, 0, 0;
  B << 0, 1;
  LqrDesign d = lqr_gain(A, B, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(1, 1));
  EXPECT_NEAR(d.K(0, 0), 1.0, 1e-8);
  EXPECT_NEAR(d.K(0, 1), std::sqrt(3.0), 1e-8);
  EXPECT_LT(d.residual, 1e-8);
  EXPECT_LT(d.closed_loop_eigenvalues.real().maxCoeff(), 0.0);
}

TEST(Lqr, ScalarPlant) {
  Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  LqrDesign d = lqr_gain(one, one, one, one);
  EXPECT_NEAR(d.K(0, 0), 1.0 + std::sqrt(2.0), 1e-8);
  EXPECT_NEAR(d.P(0, 0), 1.0 + std::sqrt(2.0), 1e-8);
}

TEST(Lqr, UncontrollableUnstableModeIsRejected) {
  Eigen::MatrixXd A(2, 2), B(2, 1);
  A << 1, 0, 0, 2;
  B << 1, 0;
  EXPECT_THROW(lqr_gain(A, B, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(1, 1)), DesignError);
}

TEST(Lqr, DimensionMismatch) {
  EXPECT_THROW(lqr_gain(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Ones(3, 1), Eigen::MatrixXd::Identity(2, 2),
                        Eigen::MatrixXd::Identity(1, 1)),
               ContractViolation);
}

TEST(Linearize, KinematicRowsAndUnstablePole) {
  Model gt = furuta_gt();
  Linearization lin = linearize(gt, upright(), Eigen::VectorXd::Zero(1));
  Eigen::Matrix<double, 2, 4> kin;
  kin << 0, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_EQ(lin.A.topRows(2), Eigen::MatrixXd(kin));
  EXPECT_EQ(lin.B.topRows(2), Eigen::MatrixXd::Zero(2, 1));
  EXPECT_LT(lin.equilibrium_residual, 1e-12);
  EXPECT_TRUE(lin.warnings.empty());
  Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(lin.A, false).eigenvalues();
  bool unstable = false;
  for (const auto& z : ev) unstable |= std::abs(z.imag()) < 1e-9 && z.real() > 0;
  EXPECT_TRUE(unstable);
}

TEST(Linearize, MatchesFiniteDifferences) {
  const FurutaParams p;
  Model gt = furuta_gt(p);
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const Eigen::Vector4d x = trial == 0 ? upright() : random_state(rng);
    const double u = trial == 0 ? 0.0 : rng.uniform(-2, 2);
    Linearization lin = linearize(gt, x, Eigen::VectorXd::Constant(1, u));
    if (trial > 0) EXPECT_FALSE(lin.warnings.empty());
    Eigen::MatrixXd A(4, 4), B(4, 1);
    const double h = 1e-6;
    for (int j = 0; j < 4; ++j) {
      Eigen::Vector4d e = Eigen::Vector4d::Zero();
      e(j) = h;
      A.col(j) = (plant_xdot(p, x + e, u) - plant_xdot(p, x - e, u)) / (2 * h);
    }
    B.col(0) = (plant_xdot(p, x, u + h) - plant_xdot(p, x, u - h)) / (2 * h);
    EXPECT_LT((lin.A - A).norm() / A.norm(), 1e-6) << trial;
    EXPECT_LT((lin.B - B).norm() / B.norm(), 1e-6) << trial;
  }
}

TEST(Linearize, FrictionlessOptionDropsDamping) {
  Model gt = furuta_gt();
  Linearization full = linearize(gt, upright(), Eigen::VectorXd::Zero(1), false);
  Linearization bare = linearize(gt, upright(), Eigen::VectorXd::Zero(1), true);
  Linearization ref = linearize(furuta_gt(frictionless()), upright(), Eigen::VectorXd::Zero(1), false);
  EXPECT_LT((bare.A - ref.A).norm(), 1e-12);
  EXPECT_GT((full.A - ref.A).norm(), 1e-6);
}

TEST(Lqr, TableGainsStabilizeTheGroundTruthLinearization) {
  Model gt = furuta_gt();
  Controller c(gt, ControllerConfig{});
  const LqrDesign& d = c.design();
  EXPECT_LT(d.closed_loop_eigenvalues.real().maxCoeff(), 0.0);
  EXPECT_LT(d.residual, 1e-8);
  EXPECT_EQ(d.K.rows(), 1);
  EXPECT_EQ(d.K.cols(), 4);
}

TEST(FeedbackLinearization, RestGivesZeroVoltage) {
  Model gt = furuta_gt();
  EXPECT_NEAR(feedback_linearization(gt, Eigen::Vector4d::Zero(), 0.0), 0.0, 1e-14);
  EXPECT_NEAR(feedback_linearization(gt, upright(), 0.0), 0.0, 1e-14);
}

TEST(FeedbackLinearization, RendersRotorAccelerationOnFrictionlessPlant) {
  const FurutaParams p = frictionless();
  Model gt = furuta_gt(p);
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector4d x = random_state(rng);
    const double ubar = rng.uniform(-30, 30);
    const double u = feedback_linearization(gt, x, ubar);
    const double alpha_dd = plant_xdot(p, x, u)(2);
    EXPECT_NEAR(alpha_dd, ubar, 1e-6 * std::max(1.0, std::abs(ubar))) << i;
  }
}

TEST(FeedbackLinearization, FrictionErrorIsTheMappedFrictionTorque) {
  const FurutaParams p;
  Model gt = furuta_gt(p);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector4d x = random_state(rng);
    const double ubar = rng.uniform(-30, 30);
    const double u = feedback_linearization(gt, x, ubar);
    const double err = std::abs(plant_xdot(p, x, u)(2) - ubar);
    const Eigen::Vector2d friction(p.c_r * x(2), p.c_p * x(3));
    const double bound = std::abs((analytic_mass(p, x(1)).inverse() * friction)(0));
    EXPECT_LE(err, bound * (1 + 1e-6) + 1e-9) << i;
  }
}

TEST(FeedbackLinearization, RequiresFuruta) {
  ModelSpec spec = ModelSpec::defaults(SystemId::nmsd, ModelKind::dln);
  Model m = Model::create(spec, 1);
  EXPECT_THROW(feedback_linearization(m, Eigen::Vector4d::Zero(), 0.0), ConfigError);
}

TEST(SwingUp, ZeroAtUprightAndWithoutRate) {
  Model gt = furuta_gt();
  SwingUpConfig cfg;
  EXPECT_EQ(swing_up(gt, Eigen::Vector4d(0.3, kPi, 0.1, 2.0), cfg), 0.0);
  EXPECT_EQ(swing_up(gt, Eigen::Vector4d(0.3, 1.0, 0.1, 0.0), cfg), 0.0);
}

TEST(SwingUp, BottomValue) {
  const FurutaParams p;
  Model gt = furuta_gt(p);
  SwingUpConfig cfg;
  const double expected = -cfg.k_e * p.m_p * p.g * p.L_p;
  EXPECT_NEAR(swing_up(gt, Eigen::Vector4d(0, 0, 0, 1), cfg), expected, 1e-12 * std::abs(expected));
  EXPECT_NEAR(swing_up(gt, Eigen::Vector4d(0, 0, 0, -1), cfg), -expected, 1e-12 * std::abs(expected));
  // The calibration scale multiplies the model potential.
  EnergyCalibration cal;
  cal.scale = 2.0;
  EXPECT_NEAR(swing_up(gt, Eigen::Vector4d(0, 0, 0, 1), cfg, cal), 2 * expected, 1e-12 * std::abs(expected));
  cfg.zero_sign = 1.0;
  EXPECT_NEAR(swing_up(gt, Eigen::Vector4d::Zero(), cfg), expected, 1e-12 * std::abs(expected));
}

TEST(SwingUp, SmoothSign) {
  Model gt = furuta_gt();
  SwingUpConfig cfg;
  cfg.sign_smoothing = 2.0;
  const double hard = swing_up(gt, Eigen::Vector4d(0, 0.5, 0, 0.25), SwingUpConfig{});
  EXPECT_NEAR(swing_up(gt, Eigen::Vector4d(0, 0.5, 0, 0.25), cfg), hard * std::tanh(2.0 * std::cos(0.5) * 0.25),
              1e-12 * std::abs(hard));
}

TEST(SwingUp, AphIsRejected) {
  Model aph = Model::create(ModelSpec::defaults(SystemId::furuta, ModelKind::aph), 1);
  EXPECT_THROW(swing_up(aph, Eigen::Vector4d::Zero(), SwingUpConfig{}), CapabilityError);
  EXPECT_THROW(Controller(aph, ControllerConfig{}), CapabilityError);
  EXPECT_THROW(default_energy_gain(ModelKind::aph), CapabilityError);
}

TEST(SwingUp, ConfigValidation) {
  SwingUpConfig c;
  c.k_e = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.hysteresis = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  LoopConfig l;
  l.rate = 0;
  EXPECT_THROW(l.validate(), ConfigError);
  l = {};
  l.u_max = -1;
  EXPECT_THROW(l.validate(), ConfigError);
}

TEST(ClosedLoop, GroundTruthSwingsUpFromRest) {
  // With the 5 V clamp the low table gain stalls below the upright (exact
  // feedback linearization near the top needs about 9 V); a gain in the bang-bang
  // range pumps through the saturation.
  const FurutaParams p;
  Model gt = furuta_gt(p);
  ControllerConfig cfg;
  cfg.swing.k_e = 7000.0;
  Controller c(gt, cfg);
  ControlRun run = closed_loop_sim(p, c, LoopConfig{});
  ASSERT_FALSE(run.diverged) << run.failure;
  EXPECT_EQ(run.t.size(), 7501u);
  EXPECT_LT(run.final_angle_error(2.0), 0.1);
  EXPECT_LT(run.final_rate(2.0), 0.5);
  EXPECT_LE(run.max_abs_u(), 5.0);
  EXPECT_TRUE(run.success());
  EXPECT_GE(run.events.size(), 1u);
  EXPECT_LE(run.events.size(), 3u);
  EXPECT_EQ(run.mode.back(), ControlMode::lqr);
}

TEST(ClosedLoop, NoEnergyGainStaysDown) {
  const FurutaParams p;
  Model gt = furuta_gt(p);
  ControllerConfig cfg;
  cfg.swing.k_e = 0.0;
  Controller c(gt, cfg);
  LoopConfig loop;
  loop.x0 = Eigen::Vector4d(0, 0.05, 0, 0);
  ControlRun run = closed_loop_sim(p, c, loop);
  ASSERT_FALSE(run.diverged);
  for (const auto& x : run.x) EXPECT_LT(std::abs(angle_difference(x(1), 0.0)), 0.051);
  EXPECT_FALSE(run.success());
}

TEST(ClosedLoop, SaturationIsExact) {
  const FurutaParams p;
  Model gt = furuta_gt(p);
  ControllerConfig cfg;
  cfg.swing.k_e = 5000.0;
  Controller c(gt, cfg);
  LoopConfig loop;
  loop.duration = 3.0;
  loop.u_max = 1.5;
  ControlRun run = closed_loop_sim(p, c, loop);
  EXPECT_LE(run.max_abs_u(), 1.5);
  EXPECT_GT(run.saturation_fraction, 0.0);
}

TEST(ClosedLoop, FeedbackLinearizationTracksPerTick) {
  // Frictionless plant, model and plant identical: α̈ follows ū at every tick.
  const FurutaParams p = frictionless();
  Model gt = furuta_gt(p);
  SwingUpConfig s;
  s.zero_sign = 1.0;
  Eigen::Vector4d x = Eigen::Vector4d::Zero();
  for (int k = 0; k < 500; ++k) {
    const double ubar = swing_up(gt, x, s);
    const double u = feedback_linearization(gt, x, ubar);
    const Eigen::Vector4d xd = plant_xdot(p, x, u);
    EXPECT_LE(std::abs(xd(2) - ubar), 1e-4 * std::max(1e-3, std::abs(ubar))) << k;
    x += 0.002 * xd;
  }
}

TEST(ClosedLoop, SwingUpPumpsPotentialTowardUpright) {
  const FurutaParams p;
  Model gt = furuta_gt(p);
  ControllerConfig cfg;
  cfg.swing.switch_angle = 1e-12;
  cfg.swing.switch_rate = 1e-12;
  Controller c(gt, cfg);
  LoopConfig loop;
  loop.duration = 6.0;
  loop.u_max = 1e6;
  ControlRun run = closed_loop_sim(p, c, loop);
  ASSERT_FALSE(run.diverged) << run.failure;
  // Half period of the hanging pendulum: π·sqrt(J2/(½ m g L)).
  const double half = kPi * std::sqrt(p.J2 / (0.5 * p.m_p * p.g * p.L_p));
  const double vpi = p.m_p * p.g * p.L_p;
  std::vector<double> peak;
  for (double t0 = 0; t0 + half <= loop.duration; t0 += half) {
    double m = 0;
    for (std::size_t i = 0; i < run.t.size(); ++i)
      if (run.t[i] >= t0 && run.t[i] < t0 + half) {
        const double v = 0.5 * p.m_p * p.g * p.L_p * (1 - std::cos(run.x[i](1)));
        m = std::max(m, std::abs(v - vpi));
      }
    peak.push_back(m);
  }
  // Windowed max of |V − V(π)| is non-increasing within 5%.
  ASSERT_GE(peak.size(), 4u);
  std::size_t violations = 0;
  for (std::size_t k = 1; k < peak.size(); ++k) violations += peak[k] > 1.05 * peak[k - 1] + 1e-9 * vpi;
  EXPECT_LE(violations, peak.size() / 20);
}

TEST(ClosedLoop, CsvColumnsAndRate) {
  const FurutaParams p;
  Model gt = furuta_gt(p);
  Controller c(gt, ControllerConfig{});
  LoopConfig loop;
  loop.duration = 0.1;
  ControlRun run = closed_loop_sim(p, c, loop);
  const auto file = std::filesystem::temp_directory_path() / "lagid_control_run.csv";
  write_control_csv(run, file);
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,alpha,beta,alphadot,betadot,u,mode");
  std::vector<double> ts;
  while (std::getline(in, line)) {
    ts.push_back(std::stod(line.substr(0, line.find(','))));
    EXPECT_NE(line.find(",swingup"), std::string::npos);
  }
  ASSERT_EQ(ts.size(), 51u);
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_NEAR(ts[i] - ts[i - 1], 0.002, 1e-9);
  std::filesystem::remove(file);
}

TEST(ClosedLoop, ControllerFailureIsReportedNotThrown) {
  const FurutaParams p;
  Model gt = furuta_gt(p);
  Controller c(gt, ControllerConfig{});
  LoopConfig loop;
  loop.duration = 1.0;
  loop.x0 = Eigen::Vector4d(0, 0, 0, 1e7);
  ControlRun run;
  EXPECT_NO_THROW(run = closed_loop_sim(p, c, loop));
  EXPECT_TRUE(run.diverged);
  EXPECT_FALSE(run.failure.empty());
}
