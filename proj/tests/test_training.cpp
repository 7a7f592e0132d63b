#include "oracles.hpp"

#include "lagid/benchmarks.hpp"
#include "lagid/errors.hpp"
#include "lagid/rng.hpp"
#include "lagid/training.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

using namespace lagid;

namespace {

ModelSpec small_spec(SystemId s, ModelKind k) {
  ModelSpec spec = ModelSpec::defaults(s, k);
  spec.hidden = {8, 8};
  return spec;
}

Model perturbed(SystemId s, ModelKind k, std::uint64_t seed, double amount = 0.05) {
  Model m = Model::create(small_spec(s, k), seed);
  Rng rng(seed + 100);
  Eigen::VectorXd v = m.parameters().values();
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += rng.uniform(-amount, amount);
  m.set_parameters(v);
  return m;
}

// Short windows cut from simulated ground-truth data.
std::vector<Segment> sample_segments(SystemId s, std::size_t steps, std::size_t count) {
  std::vector<Segment> segs;
  if (s == SystemId::nmsd) {
    GenerationConfig g;
    auto d = generate_nmsd_dataset(NmsdParams{}, 5, g);
    segs = make_segments(d.train, steps);
  } else {
    Dataset d = generate_furuta_dataset(FurutaParams{}, 5, FurutaMode::train_free);
    segs = make_segments(d, steps);
  }
  std::vector<Segment> out;
  const std::size_t stride = std::max<std::size_t>(1, segs.size() / count);
  for (std::size_t i = 0; i < segs.size() && out.size() < count; i += stride) out.push_back(segs[i]);
  return out;
}

std::size_t block_of(const Model& m, const std::string& name) {
  const auto& blocks = m.parameters().blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].name == name) return i;
  throw std::runtime_error("no block " + name);
}

void zero_block(Model& m, const std::string& name) {
  const auto b = block_of(m, name);
  const auto& blk = m.parameters().block(b);
  m.parameters().set_block_matrix(b, Eigen::MatrixXd::Zero(blk.rows, blk.cols));
}

using LossFn = std::function<LossValue(const Model&, const EvalOptions&)>;

void check_gradient(const Model& m, const LossFn& f, const std::string& label, int trials = 10) {
  EvalOptions opt;
  opt.solver.rtol = 1e-10;
  opt.solver.atol = 1e-12;
  LossValue lv = f(m, opt);
  ASSERT_EQ(lv.gradient.size(), m.parameters().size());
  EvalOptions vo = opt;
  vo.gradient = false;
  Rng rng(17);
  int checked = 0;
  for (int t = 0; t < 4 * trials && checked < trials; ++t) {
    const auto i = static_cast<Eigen::Index>(rng.uniform(0, static_cast<double>(m.parameters().size())));
    // Near the cube root of machine epsilon, where truncation and round-off balance.
    const double h = 1e-5 * std::max(1.0, std::abs(m.parameters().values()(i)));
    Model mp = m, mm = m;
    mp.parameters().values()(i) += h;
    mm.parameters().values()(i) -= h;
    const double fd = (f(mp, vo).value - f(mm, vo).value) / (2 * h);
    const double tol = 1e-4;
    if (std::abs(fd) < 1e-7 * std::max(1.0, std::abs(lv.value))) continue;
    ++checked;
    EXPECT_LT(oracle::rel_err(lv.gradient(i), fd), tol) << label << " parameter " << i;
  }
  EXPECT_GE(checked, trials / 2) << label;
}

}  // namespace

TEST(TrajLoss, GroundTruthOnExactDataIsAtSolverFloor) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    auto batch = sample_segments(s, s == SystemId::nmsd ? 200 : 100, 4);
    Model gt = ground_truth_model(s);
    EvalOptions opt;
    opt.gradient = false;
    opt.solver.rtol = 1e-10;
    opt.solver.atol = 1e-12;
    LossValue lv = traj_loss(gt, batch, opt);
    EXPECT_LT(lv.value, 1e-8) << to_string(s);
    EXPECT_TRUE(lv.failed.empty());
  }
}

TEST(TrajLoss, ConstantPredictionGivesDistanceFromStart) {
  // The ground truth at rest in the equilibrium with zero input never moves,
  // whatever the (unrelated, moving) targets are.
  Model gt = ground_truth_model(SystemId::nmsd);
  std::vector<Segment> batch(2);
  Rng rng(4);
  double expected = 0;
  for (Segment& s : batch) {
    s.dt = 0.01;
    s.states = Eigen::MatrixXd::Zero(2, 11);
    s.inputs = Eigen::MatrixXd::Zero(1, 11);
    for (Eigen::Index j = 1; j < 11; ++j) {
      s.states(0, j) = std::sin(0.2 * static_cast<double>(j)) + rng.uniform(-0.1, 0.1);
      s.states(1, j) = rng.uniform(-1, 1);
      expected += s.states.col(j).squaredNorm();
    }
  }
  expected /= 2.0 * 10 * 2;
  EvalOptions opt;
  LossValue lv = traj_loss(gt, batch, opt);
  EXPECT_NEAR(lv.value, expected, 1e-14);
  EXPECT_EQ(lv.count, 40u);
}

TEST(TrajLoss, GradientMatchesFiniteDifferences) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    auto batch = sample_segments(s, 20, 3);
    for (ModelKind k : {ModelKind::dln, ModelKind::aph, ModelKind::adln}) {
      Model m = perturbed(s, k, 8);
      check_gradient(m, [&](const Model& mm, const EvalOptions& o) { return traj_loss(mm, batch, o); },
                     "traj " + to_string(s) + " " + to_string(k));
    }
  }
}

TEST(TrajLoss, FailedRolloutKeepsFinitePrefix) {
  Model m = Model::create(small_spec(SystemId::nmsd, ModelKind::dln), 2);
  auto batch = sample_segments(SystemId::nmsd, 20, 2);
  EvalOptions opt;
  opt.gradient = false;
  opt.solver.state_bound = 1e-6;  // every rollout leaves the admissible box at once
  batch[1].states.col(0).setConstant(1.0);
  LossValue lv = traj_loss(m, batch, opt);
  EXPECT_FALSE(lv.failed.empty());
  EXPECT_TRUE(std::find(lv.failed.begin(), lv.failed.end(), 1u) != lv.failed.end());
}

TEST(AphPenalty, ZeroAugmentationGivesZero) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    for (ModelKind k : {ModelKind::aph, ModelKind::adln}) {
      Model m = Model::create(small_spec(s, k), 1);
      const std::string net = k == ModelKind::aph ? "aug_net" : "nc_net";
      zero_block(m, net + ".W2");
      zero_block(m, net + ".b2");
      auto batch = sample_segments(s, 20, 3);
      LossValue lv = aph_penalty(m, batch, EvalOptions{});
      EXPECT_EQ(lv.value, 0.0);
      EXPECT_TRUE(lv.gradient.allFinite());
    }
  }
}

TEST(AphPenalty, ConstantFieldGivesItsNorm) {
  ModelSpec spec = small_spec(SystemId::furuta, ModelKind::aph);
  spec.accel_scale = 1.0;
  Model m = Model::create(spec, 1);
  zero_block(m, "aug_net.W2");
  const auto b = block_of(m, "aug_net.b2");
  m.parameters().set_block_matrix(b, Eigen::Vector2d(0.3, -0.4));
  auto batch = sample_segments(SystemId::furuta, 20, 3);
  EXPECT_NEAR(aph_penalty(m, batch, EvalOptions{}).value, 0.5, 1e-12);

  // With an output scale s the penalty is measured in units of s.
  ModelSpec scaled = spec;
  scaled.accel_scale = 10.0;
  Model ms = Model::create(scaled, 1);
  ms.set_parameters(m.parameters().values());
  EXPECT_NEAR(aph_penalty(ms, batch, EvalOptions{}).value, 0.5, 1e-12);
}

TEST(AphPenalty, InvariantToBatchOrder) {
  Model m = perturbed(SystemId::nmsd, ModelKind::aph, 3);
  auto batch = sample_segments(SystemId::nmsd, 20, 5);
  const double a = aph_penalty(m, batch, EvalOptions{}).value;
  std::reverse(batch.begin(), batch.end());
  std::swap(batch[0], batch[3]);
  EXPECT_NEAR(aph_penalty(m, batch, EvalOptions{}).value, a, 1e-14 * a);
}

TEST(AphPenalty, NeedsAugmentation) {
  Model m = Model::create(small_spec(SystemId::nmsd, ModelKind::dln), 1);
  auto batch = sample_segments(SystemId::nmsd, 20, 2);
  EXPECT_THROW(aph_penalty(m, batch, EvalOptions{}), CapabilityError);
}

TEST(AphPenalty, GradientMatchesFiniteDifferences) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    auto batch = sample_segments(s, 20, 3);
    for (ModelKind k : {ModelKind::aph, ModelKind::adln}) {
      Model m = perturbed(s, k, 9);
      check_gradient(m, [&](const Model& mm, const EvalOptions& o) { return aph_penalty(mm, batch, o); },
                     "penalty " + to_string(s) + " " + to_string(k));
    }
  }
}

TEST(TorqueLoss, GroundTruthIsZero) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    Model gt = ground_truth_model(s);
    auto batch = sample_segments(s, 20, 4);
    attach_accelerations(batch, gt);
    LossValue lv = torque_loss(gt, batch, EvalOptions{});
    EXPECT_LT(lv.value, 1e-24) << to_string(s);
  }
}

TEST(TorqueLoss, NeedsAccelerations) {
  Model gt = ground_truth_model(SystemId::nmsd);
  auto batch = sample_segments(SystemId::nmsd, 20, 2);
  EXPECT_THROW(torque_loss(gt, batch, EvalOptions{}), CapabilityError);
}

TEST(Losses, InvariantToPotentialOffset) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    Model m = perturbed(s, ModelKind::dln, 4);
    auto batch = sample_segments(s, 20, 3);
    attach_accelerations(batch, ground_truth_model(s));
    Model shifted = m;
    const auto b = block_of(m, "potential_net.b2");
    shifted.parameters().set_block_matrix(b, m.parameters().block_matrix(b).array() + 3.7);
    EvalOptions opt;
    opt.gradient = false;
    const double t0 = torque_loss(m, batch, opt).value, t1 = torque_loss(shifted, batch, opt).value;
    const double i0 = itau_loss(m, batch, opt).value, i1 = itau_loss(shifted, batch, opt).value;
    EXPECT_NEAR(t1, t0, 1e-12 * t0) << to_string(s);
    EXPECT_NEAR(i1, i0, 1e-12 * i0) << to_string(s);
  }
}

TEST(Losses, QuadraticAlongAffineMassAndPotentialPaths) {
  // APH on N-MSD carries (m, k1, k2) of its prior as logarithms; setting them
  // to log(m + t·Δm) moves M̂ (or V̂) along an affine path in t.
  auto batch = sample_segments(SystemId::nmsd, 20, 4);
  attach_accelerations(batch, ground_truth_model(SystemId::nmsd));
  Model m = perturbed(SystemId::nmsd, ModelKind::aph, 6);
  const auto phys = block_of(m, "physical");
  const Eigen::MatrixXd base = m.parameters().block_matrix(phys).array().exp().matrix();
  EvalOptions opt;
  opt.gradient = false;
  for (int entry : {0, 1}) {  // mass, quadratic stiffness
    auto at = [&](double t, bool torque) {
      Model mt = m;
      Eigen::MatrixXd p = base;
      p(entry, 0) += t * 0.3;
      mt.parameters().set_block_matrix(phys, p.array().log().matrix());
      return torque ? torque_loss(mt, batch, opt).value : itau_loss(mt, batch, opt).value;
    };
    for (bool torque : {true, false}) {
      std::vector<double> v;
      for (int i = -2; i <= 2; ++i) v.push_back(at(0.5 * i, torque));
      std::vector<double> d2;
      for (std::size_t i = 1; i + 1 < v.size(); ++i) d2.push_back(v[i + 1] - 2 * v[i] + v[i - 1]);
      for (double d : d2) EXPECT_NEAR(d, d2[0], 1e-8 * std::max(1.0, std::abs(d2[0]))) << entry << torque;
      EXPECT_GT(d2[0], 0.0);
    }
  }
}

TEST(TorqueLoss, GradientMatchesFiniteDifferences) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    auto batch = sample_segments(s, 20, 3);
    attach_accelerations(batch, ground_truth_model(s));
    for (ModelKind k : {ModelKind::dln, ModelKind::aph, ModelKind::adln}) {
      Model m = perturbed(s, k, 10);
      check_gradient(m, [&](const Model& mm, const EvalOptions& o) { return torque_loss(mm, batch, o); },
                     "torque " + to_string(s) + " " + to_string(k));
    }
  }
}

namespace {

// Ground-truth N-MSD trajectory under a smooth input, sampled at dt.
Segment fine_nmsd_segment(double dt, double duration) {
  const auto n = static_cast<Eigen::Index>(std::llround(duration / dt)) + 1;
  Eigen::MatrixXd u(1, n);
  for (Eigen::Index j = 0; j < n; ++j) u(0, j) = 0.8 * std::sin(3.0 * dt * static_cast<double>(j));
  nlohmann::json params = NmsdParams{};
  Trajectory t = simulate(SystemId::nmsd, params, Eigen::Vector2d(0.6, -0.4), u, dt, 1e-12, 1e-14);
  Segment s;
  s.dt = dt;
  s.states = t.states;
  s.inputs = t.inputs;
  return s;
}

}  // namespace

TEST(IntegralResiduals, SecondOrderInStep) {
  // Input samples are interpolated linearly, which the trapezoid rule
  // integrates without error, so what remains is the quadrature error.
  Model gt = ground_truth_model(SystemId::nmsd);
  std::vector<double> peak;
  for (double dt : {0.01, 0.005}) {
    Segment s = fine_nmsd_segment(dt, 2.0);
    Eigen::MatrixXd r = integral_residuals(gt, s);
    ASSERT_EQ(r.cols(), s.steps());
    peak.push_back(r.cwiseAbs().maxCoeff());
  }
  const double ratio = peak[0] / peak[1];
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.5);
}

TEST(IntegralResiduals, RawAreaIsThirdOrder) {
  Model gt = ground_truth_model(SystemId::nmsd);
  std::vector<double> peak;
  for (double dt : {0.01, 0.005}) {
    Segment s = fine_nmsd_segment(dt, 2.0);
    peak.push_back(integral_residuals(gt, s, false).cwiseAbs().maxCoeff());
  }
  const double ratio = peak[0] / peak[1];
  EXPECT_GT(ratio, 7.0);
  EXPECT_LT(ratio, 9.0);
}

TEST(IntegralResiduals, ZeroInputLeavesOnlyMomentumTerms) {
  // N-MSD has τ_u = u, so with u ≡ 0 the residual is −Ā alone. M is the
  // constant m, hence ∂L/∂q + τ_NC = m·q̈ of the unforced system.
  const NmsdParams p;
  Model gt = ground_truth_model(SystemId::nmsd);
  Segment s = fine_nmsd_segment(0.01, 0.5);
  s.inputs.setZero();
  Eigen::MatrixXd r = integral_residuals(gt, s);
  for (Eigen::Index j = 0; j < s.steps(); ++j) {
    const Eigen::Vector2d xa = s.states.col(j), xb = s.states.col(j + 1);
    const double fa = p.m * oracle::nmsd_rhs(p, xa, 0)(1), fb = p.m * oracle::nmsd_rhs(p, xb, 0)(1);
    const double abar = (p.m * xb(1) - p.m * xa(1)) / s.dt - 0.5 * (fa + fb);
    EXPECT_NEAR(r(0, j), -abar, 1e-12);
  }
}

TEST(IntegralResiduals, EquilibriumGivesZero) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    Model gt = ground_truth_model(s);
    Segment seg;
    seg.dt = 0.01;
    seg.states = Eigen::MatrixXd::Zero(gt.state_dim(), 6);
    seg.inputs = Eigen::MatrixXd::Zero(gt.input_dim(), 6);
    EXPECT_EQ(integral_residuals(gt, seg).cwiseAbs().maxCoeff(), 0.0) << to_string(s);
  }
  // Hanging pendulum at rest off the rotor origin.
  Model gt = ground_truth_model(SystemId::furuta);
  Segment seg;
  seg.dt = 0.01;
  seg.states = Eigen::MatrixXd::Zero(4, 6);
  seg.states.row(0).setConstant(1.3);
  seg.inputs = Eigen::MatrixXd::Zero(1, 6);
  EXPECT_LT(integral_residuals(gt, seg).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(IntegralResiduals, NeedTwoSamples) {
  Model gt = ground_truth_model(SystemId::nmsd);
  Segment seg;
  seg.states = Eigen::MatrixXd::Zero(2, 1);
  seg.inputs = Eigen::MatrixXd::Zero(1, 1);
  EXPECT_THROW(integral_residuals(gt, seg), ContractViolation);
}

TEST(ItauLoss, GroundTruthFloorIsFourthOrder) {
  Model gt = ground_truth_model(SystemId::nmsd);
  std::vector<double> loss;
  for (double dt : {0.01, 0.005, 0.0025}) {
    std::vector<Segment> batch{fine_nmsd_segment(dt, 2.0)};
    loss.push_back(itau_loss(gt, batch, EvalOptions{}).value);
  }
  EXPECT_LT(loss[0], 1e-6);
  for (int i = 0; i < 2; ++i) {
    const double ratio = loss[static_cast<std::size_t>(i)] / loss[static_cast<std::size_t>(i) + 1];
    EXPECT_GT(ratio, 12.0);
    EXPECT_LT(ratio, 20.0);
  }
}

TEST(ItauLoss, GradientMatchesFiniteDifferences) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    auto batch = sample_segments(s, 20, 3);
    for (ModelKind k : {ModelKind::dln, ModelKind::aph, ModelKind::adln}) {
      Model m = perturbed(s, k, 11);
      check_gradient(m, [&](const Model& mm, const EvalOptions& o) { return itau_loss(mm, batch, o); },
                     "itau " + to_string(s) + " " + to_string(k));
    }
  }
}

TEST(PropLoss, ZeroLambdaIsItau) {
  Model m = perturbed(SystemId::nmsd, ModelKind::dln, 12);
  auto batch = sample_segments(SystemId::nmsd, 20, 3);
  LossValue a = prop_loss(m, batch, 0.0, EvalOptions{});
  LossValue b = itau_loss(m, batch, EvalOptions{});
  EXPECT_EQ(a.value, b.value);
  EXPECT_TRUE(a.gradient.isApprox(b.gradient, 1e-15));
}

TEST(PropLoss, GroundTruthBelowDiscretizationFloor) {
  Model gt = ground_truth_model(SystemId::nmsd);
  auto batch = sample_segments(SystemId::nmsd, 200, 5);
  EvalOptions opt;
  opt.gradient = false;
  opt.solver.rtol = 1e-10;
  opt.solver.atol = 1e-12;
  const double dt = 0.01;
  // Squared residuals are O(Δt⁴); the constant is bounded by the third
  // derivatives of the data, O(1) for N-MSD.
  EXPECT_LT(prop_loss(gt, batch, 1.0, opt).value, std::pow(dt, 4) * 10);
}

TEST(PropLoss, GradientIsLinearCombination) {
  for (SystemId s : {SystemId::nmsd, SystemId::furuta}) {
    Model m = perturbed(s, ModelKind::dln, 13);
    auto batch = sample_segments(s, 20, 3);
    const double lambda = 2.5;
    LossValue p = prop_loss(m, batch, lambda, EvalOptions{});
    LossValue i = itau_loss(m, batch, EvalOptions{});
    LossValue t = traj_loss(m, batch, EvalOptions{});
    EXPECT_NEAR(p.value, i.value + lambda * t.value, 1e-14 * p.value);
    EXPECT_TRUE(p.gradient.isApprox(i.gradient + lambda * t.gradient, 1e-13));
    check_gradient(m, [&](const Model& mm, const EvalOptions& o) { return prop_loss(mm, batch, lambda, o); },
                   "prop " + to_string(s));
    if (s == SystemId::nmsd) continue;
    Model a = perturbed(s, ModelKind::aph, 13);
    check_gradient(a, [&](const Model& mm, const EvalOptions& o) { return aph_loss(mm, batch, lambda, o); },
                   "aph combined");
  }
}

TEST(Lambda, UpdateRule) {
  LossConfig cfg;
  cfg.lambda_rate = 0.1;
  EXPECT_DOUBLE_EQ(update_lambda(1.0, 2.0, cfg), 1.2);
  EXPECT_EQ(update_lambda(1.0, 0.0, cfg), 1.0);
  cfg.lambda_max = 5.0;
  EXPECT_EQ(update_lambda(4.9, 100.0, cfg), 5.0);
  double l = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double next = update_lambda(l, 0.3 * i, cfg);
    EXPECT_GE(next, l);
    EXPECT_GE(next, 0.0);
    EXPECT_LE(next, cfg.lambda_max);
    l = next;
  }
}

TEST(Adam, ZeroGradientNoDecayLeavesParameters) {
  OptimizerConfig cfg;
  cfg.weight_decay = 0;
  Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(5, -1, 1), q = p;
  AdamState st;
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(adam_step(p, Eigen::VectorXd::Zero(5), st, cfg));
  EXPECT_EQ(p, q);
}

TEST(Adam, FirstStepIsLearningRate) {
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0;
  Eigen::VectorXd p(1);
  p << 2.0;
  AdamState st;
  ASSERT_TRUE(adam_step(p, Eigen::VectorXd::Ones(1), st, cfg));
  EXPECT_NEAR(p(0) - 2.0, -0.1 / (1 + 1e-8), 1e-15);
}

TEST(Adam, DecoupledDecay) {
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  Eigen::VectorXd p(2);
  p << 3.0, -2.0;
  AdamState st;
  ASSERT_TRUE(adam_step(p, Eigen::VectorXd::Zero(2), st, cfg));
  EXPECT_NEAR(p(0), 3.0 * (1 - 0.001), 1e-15);
  EXPECT_NEAR(p(1), -2.0 * (1 - 0.001), 1e-15);
  Eigen::VectorXd mask(2);
  mask << 0.0, 1.0;
  ASSERT_TRUE(adam_step(p, Eigen::VectorXd::Zero(2), st, cfg, &mask));
  EXPECT_NEAR(p(0), 3.0 * (1 - 0.001), 1e-15);
}

TEST(Adam, NonFiniteGradientRejected) {
  OptimizerConfig cfg;
  Eigen::VectorXd p = Eigen::VectorXd::Ones(3), q = p;
  AdamState st;
  Eigen::VectorXd g = Eigen::VectorXd::Ones(3);
  g(1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(adam_step(p, g, st, cfg));
  EXPECT_EQ(p, q);
  EXPECT_EQ(st.step, 0u);
}

TEST(Segments, WindowsShareEndpoints) {
  auto d = generate_nmsd_dataset(NmsdParams{}, 1);
  auto segs = make_segments(d.train, 2);
  ASSERT_EQ(segs.size(), 30u * 100u);
  EXPECT_EQ(segs[1].states.col(0), segs[0].states.col(2));
  EXPECT_EQ(segs[0].steps(), 2);
  EXPECT_EQ(make_segments(d.train, 200).size(), 30u);
  EXPECT_THROW(make_segments(d.train, 0), ContractViolation);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = TrainConfig::defaults(SystemId::furuta, LossKind::prop, "smoke");
  c.seed = 42;
  c.optimizer.lr = 3e-4;
  nlohmann::json j = c;
  TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  j["optimizer"]["betaa"] = 0.5;
  EXPECT_THROW(j.get<TrainConfig>(), ConfigError);
  TrainConfig bad = c;
  bad.optimizer.beta1 = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(TrainConfig::defaults(SystemId::nmsd, LossKind::traj, "huge"), ConfigError);
  EXPECT_EQ(parse_loss_kind("torque"), LossKind::torque);
  EXPECT_THROW(parse_loss_kind("l2"), ConfigError);
}

namespace {

TrainConfig tiny_config(LossKind kind) {
  TrainConfig c = TrainConfig::defaults(SystemId::nmsd, kind, "smoke");
  c.curriculum.stage1.epochs = 4;
  c.curriculum.stage1.batch_size = 64;
  c.curriculum.stage2.epochs = 2;
  c.curriculum.stage2.horizon = 0.2;
  c.seed = 7;
  return c;
}

}  // namespace

TEST(Train, HistoryCoversEveryEpochAndIsDeterministic) {
  auto d = generate_nmsd_dataset(NmsdParams{}, 3);
  Model m = Model::create(small_spec(SystemId::nmsd, ModelKind::dln), 4);
  for (LossKind k : {LossKind::traj, LossKind::prop, LossKind::torque}) {
    TrainConfig c = tiny_config(k);
    TrainResult a = train(m, d.train, c);
    TrainResult b = train(m, d.train, c);
    ASSERT_EQ(a.history.size(), 6u) << to_string(k);
    EXPECT_EQ(a.history.front().stage, 1);
    EXPECT_EQ(a.history.back().stage, 2);
    EXPECT_EQ(a.model.parameters().values(), b.model.parameters().values());
    EXPECT_NE(a.model.parameters().values(), m.parameters().values());
    for (const HistoryRow& r : a.history) EXPECT_TRUE(std::isfinite(r.loss_itau));
    if (k == LossKind::prop) EXPECT_GT(a.history.back().lambda, a.history.front().lambda);
    else EXPECT_EQ(a.history.back().lambda, c.loss.lambda0);
  }
}

TEST(Train, ThreadCountDoesNotChangeResult) {
  auto d = generate_nmsd_dataset(NmsdParams{}, 3);
  Model m = Model::create(small_spec(SystemId::nmsd, ModelKind::dln), 4);
  TrainConfig c = tiny_config(LossKind::prop);
  c.chunk_columns = 16;
  TrainResult a = train(m, d.train, c);
  c.threads = 3;
  TrainResult b = train(m, d.train, c);
  EXPECT_EQ(a.model.parameters().values(), b.model.parameters().values());
}

TEST(Train, AphPhysicalParametersAreNotDecayed) {
  auto d = generate_nmsd_dataset(NmsdParams{}, 3);
  Model m = Model::create(small_spec(SystemId::nmsd, ModelKind::aph), 4);
  TrainConfig c = tiny_config(LossKind::aph);
  // Adam moves each entry by at most lr per step; the decay dominates.
  c.optimizer.lr = 1e-9;
  c.optimizer.weight_decay = 1e5;
  TrainResult r = train(m, d.train, c);
  const auto b = block_of(m, "physical");
  EXPECT_LT((r.model.parameters().block_matrix(b) - m.parameters().block_matrix(b)).cwiseAbs().maxCoeff(), 1e-8);
  const auto w = block_of(m, "aug_net.W0");
  EXPECT_LT(r.model.parameters().block_matrix(w).norm(), m.parameters().block_matrix(w).norm());
}

TEST(Train, CapabilityAndConfigErrors) {
  auto d = generate_nmsd_dataset(NmsdParams{}, 3);
  Model dln = Model::create(small_spec(SystemId::nmsd, ModelKind::dln), 4);
  EXPECT_THROW(train(dln, d.train, tiny_config(LossKind::aph)), CapabilityError);
  TrainConfig c = tiny_config(LossKind::traj);
  c.curriculum.stage2.horizon = 0.015;
  EXPECT_THROW(train(dln, d.train, c), ConfigError);
  Model furuta = Model::create(small_spec(SystemId::furuta, ModelKind::dln), 4);
  EXPECT_THROW(train(furuta, d.train, tiny_config(LossKind::traj)), ConfigError);
}

TEST(Train, AbortsWhenMostRolloutsFail) {
  auto d = generate_nmsd_dataset(NmsdParams{}, 3);
  Model m = Model::create(small_spec(SystemId::nmsd, ModelKind::dln), 4);
  TrainConfig c = tiny_config(LossKind::traj);
  c.solver.state_bound = 1e-3;
  try {
    train(m, d.train, c);
    FAIL() << "expected an abort";
  } catch (const TrainingAbort& e) {
    EXPECT_FALSE(e.failing_segments().empty());
    EXPECT_NE(std::string(e.what()).find("segments"), std::string::npos);
  }
}

TEST(Train, HistoryCsvRoundTrip) {
  std::vector<HistoryRow> h{{0, 1, 1.5, 0.25, 0.125, 1.0}, {1, 2, 0.1, 1e-9, std::nan(""), 1.5}};
  const auto file = std::filesystem::temp_directory_path() / "lagid_history_test.csv";
  write_history_csv(h, file);
  auto back = read_history_csv(file);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].stage, 2);
  EXPECT_EQ(back[0].loss_traj, 0.25);
  EXPECT_TRUE(std::isnan(back[1].loss_itau));
  std::filesystem::remove(file);
}

TEST(Train, SmokeRunReducesTrajectoryLoss) {
  auto d = generate_nmsd_dataset(NmsdParams{}, 1);
  Model m = Model::create(ModelSpec::defaults(SystemId::nmsd, ModelKind::dln), 1);
  TrainConfig c = TrainConfig::defaults(SystemId::nmsd, LossKind::traj, "smoke");
  c.seed = 1;
  TrainResult r = train(m, d.train, c);
  ASSERT_EQ(r.history.size(), 600u);
  // Both ends measured on the full long-horizon segment set.
  auto segs = make_segments(d.train, 200);
  EvalOptions opt;
  opt.gradient = false;
  const double before = traj_loss(m, segs, opt).value;
  const double after = traj_loss(r.model, segs, opt).value;
  EXPECT_LT(after, before / 10) << before << " -> " << after;
}
