#include "lagid/training.hpp"

#include "lagid/config.hpp"
#include "lagid/errors.hpp"
#include "lagid/parallel.hpp"
#include "lagid/rng.hpp"
#include "lagid/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

namespace lagid {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::traj: return "traj";
    case LossKind::aph: return "aph";
    case LossKind::torque: return "torque";
    case LossKind::prop: return "prop";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "traj") return LossKind::traj;
  if (s == "aph") return LossKind::aph;
  if (s == "torque") return LossKind::torque;
  if (s == "prop") return LossKind::prop;
  throw ConfigError("unknown loss '" + s + "' (valid: traj, aph, torque, prop)");
}

std::vector<Segment> make_segments(const Dataset& d, std::size_t steps) {
  if (steps == 0) throw ContractViolation("segments need at least one step");
  const auto k = static_cast<Eigen::Index>(steps);
  std::vector<Segment> out;
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    const Trajectory& t = d.trajectories[i];
    for (Eigen::Index start = 0; start + k < t.samples(); start += k) {
      Segment s;
      s.dt = t.dt;
      s.states = t.states.middleCols(start, k + 1);
      s.inputs = t.inputs.middleCols(start, k + 1);
      s.source = i;
      s.offset = start;
      out.push_back(std::move(s));
    }
  }
  return out;
}

void attach_accelerations(std::vector<Segment>& segments, const Model& reference) {
  const int n = reference.dof();
  for (Segment& s : segments) {
    ad::Tape tape(false);
    BoundParams bp(tape, reference.parameters(), false);
    std::vector<Eigen::Index> singular;
    ad::Var f = reference.state_derivative(tape, bp, tape.constant(s.states), tape.constant(s.inputs), &singular);
    if (!singular.empty()) throw SingularMassError("reference mass matrix singular on a data sample");
    s.accelerations = f.value().bottomRows(n);
  }
}

namespace {

struct Partial {
  double sum = 0.0;
  std::size_t count = 0;
  Eigen::VectorXd grad;
  std::vector<std::size_t> failed;
};

void check_batch(const Model& model, const std::vector<Segment>& batch) {
  if (batch.empty()) throw ContractViolation("empty batch");
  for (const Segment& s : batch) {
    if (s.states.rows() != model.state_dim() || s.inputs.rows() != model.input_dim() ||
        s.inputs.cols() != s.states.cols()) {
      throw ContractViolation("segment shape does not match the model");
    }
    if (s.states.cols() < 2) throw ContractViolation("segments need at least two samples");
    if (s.dt != batch.front().dt) throw ContractViolation("segments of one batch must share Δt");
  }
}

// Groups of at most `width` indices, consecutive within runs of equal length.
std::vector<std::vector<std::size_t>> rollout_chunks(const std::vector<Segment>& batch, std::size_t width) {
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return batch[a].steps() < batch[b].steps(); });
  std::vector<std::vector<std::size_t>> chunks;
  for (std::size_t i : order) {
    if (chunks.empty() || chunks.back().size() >= width || batch[chunks.back().front()].steps() != batch[i].steps()) {
      chunks.emplace_back();
    }
    chunks.back().push_back(i);
  }
  return chunks;
}

// Consecutive segments whose samples total at most `width` (at least one each).
std::vector<std::vector<std::size_t>> sample_chunks(const std::vector<Segment>& batch, std::size_t width) {
  std::vector<std::vector<std::size_t>> chunks;
  std::size_t used = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto cols = static_cast<std::size_t>(batch[i].states.cols());
    if (chunks.empty() || used + cols > width) {
      chunks.emplace_back();
      used = 0;
    }
    chunks.back().push_back(i);
    used += cols;
  }
  return chunks;
}

LossValue reduce(std::vector<Partial>& parts, bool gradient, Eigen::Index nparams) {
  LossValue out;
  double sum = 0.0;
  if (gradient) out.gradient = Eigen::VectorXd::Zero(nparams);
  for (Partial& p : parts) {
    sum += p.sum;
    out.count += p.count;
    if (gradient) out.gradient += p.grad;
    out.failed.insert(out.failed.end(), p.failed.begin(), p.failed.end());
  }
  std::sort(out.failed.begin(), out.failed.end());
  if (out.count > 0) {
    out.value = sum / static_cast<double>(out.count);
    if (gradient) out.gradient /= static_cast<double>(out.count);
  } else {
    out.value = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// Measured samples of several segments side by side.
struct Stacked {
  Eigen::MatrixXd states, inputs, accelerations;
  std::vector<Eigen::Index> first, second;  // consecutive pairs within segments
};

Stacked stack(const std::vector<Segment>& batch, const std::vector<std::size_t>& idx, bool with_acc) {
  Eigen::Index total = 0;
  for (std::size_t i : idx) total += batch[i].states.cols();
  const Segment& f = batch[idx.front()];
  Stacked s;
  s.states.resize(f.states.rows(), total);
  s.inputs.resize(f.inputs.rows(), total);
  if (with_acc) s.accelerations.resize(f.states.rows() / 2, total);
  Eigen::Index c = 0;
  for (std::size_t i : idx) {
    const Segment& seg = batch[i];
    const Eigen::Index w = seg.states.cols();
    s.states.middleCols(c, w) = seg.states;
    s.inputs.middleCols(c, w) = seg.inputs;
    if (with_acc) {
      if (seg.accelerations.cols() != w) throw CapabilityError("torque loss needs ground-truth accelerations");
      s.accelerations.middleCols(c, w) = seg.accelerations;
    }
    for (Eigen::Index j = 0; j + 1 < w; ++j) {
      s.first.push_back(c + j);
      s.second.push_back(c + j + 1);
    }
    c += w;
  }
  return s;
}

// (Z̄ − Ā)/ΔT for every consecutive pair of the stacked samples.
ad::Var integral_residual_var(ad::Tape& tape, const BoundParams& bp, const Model& model, const Stacked& s,
                              double dt) {
  const int n = model.dof();
  ad::Var q = tape.constant(s.states.topRows(n));
  ad::Var qd = tape.constant(s.states.bottomRows(n));
  ad::Var u = tape.constant(s.inputs);
  LagrangianTerms terms = model.lagrangian_terms(tape, bp, q);
  ad::Var p = mech::momentum(terms, qd);
  ad::Var f = ad::add(mech::lagrangian_dq(terms, qd), model.tau_nc(tape, bp, q, qd, &terms));
  ad::Var tau = model.tau_u(tape, bp, q, qd, u);
  auto a = [&](ad::Var v) { return ad::gather_cols(v, s.first); };
  auto b = [&](ad::Var v) { return ad::gather_cols(v, s.second); };
  return ad::lincomb({0.5, 0.5, -1.0 / dt, 1.0 / dt, 0.5, 0.5}, {a(tau), b(tau), b(p), a(p), a(f), b(f)});
}

template <typename ChunkFn>
LossValue pointwise_loss(const Model& model, const std::vector<Segment>& batch, const EvalOptions& opt,
                         ChunkFn&& chunk_fn) {
  check_batch(model, batch);
  const auto chunks = sample_chunks(batch, std::max<std::size_t>(opt.chunk_columns, 1) * 16);
  std::vector<Partial> parts(chunks.size());
  parallel_for(chunks.size(), opt.threads, [&](std::size_t c) {
    ad::Tape tape(opt.gradient);
    BoundParams bp(tape, model.parameters(), opt.gradient);
    std::size_t count = 0;
    ad::Var loss = chunk_fn(tape, bp, chunks[c], count);
    parts[c].sum = loss.value()(0, 0);
    parts[c].count = count;
    if (opt.gradient) {
      tape.backward(loss);
      parts[c].grad = bp.gradient(tape);
    }
  });
  return reduce(parts, opt.gradient, model.parameters().size());
}

}  // namespace

LossValue traj_loss(const Model& model, const std::vector<Segment>& batch, const EvalOptions& opt) {
  check_batch(model, batch);
  const auto chunks = rollout_chunks(batch, std::max<std::size_t>(opt.chunk_columns, 1));
  std::vector<Partial> parts(chunks.size());
  parallel_for(chunks.size(), opt.threads, [&](std::size_t c) {
    const auto& idx = chunks[c];
    const auto width = static_cast<Eigen::Index>(idx.size());
    const Eigen::Index steps = batch[idx.front()].steps();
    const double dt = batch[idx.front()].dt;
    const Eigen::Index dim = model.state_dim();
    Eigen::MatrixXd y0(dim, width);
    std::vector<ode::InterpolatedSignal> signals;
    signals.reserve(idx.size());
    for (Eigen::Index b = 0; b < width; ++b) {
      const Segment& s = batch[idx[static_cast<std::size_t>(b)]];
      y0.col(b) = s.states.col(0);
      signals.emplace_back(0.0, dt, s.inputs);
    }
    std::vector<const ode::InterpolatedSignal*> ptrs;
    for (const auto& s : signals) ptrs.push_back(&s);
    ModelRhs rhs(model, ptrs);
    const auto grid = ode::uniform_grid(0.0, dt, static_cast<std::size_t>(steps));
    ode::BatchSolution sol = ode::solve_batch(rhs, y0, grid, opt.solver);

    Partial& part = parts[c];
    std::vector<Eigen::MatrixXd> adj(grid.size(), Eigen::MatrixXd::Zero(dim, width));
    for (Eigen::Index b = 0; b < width; ++b) {
      const Segment& s = batch[idx[static_cast<std::size_t>(b)]];
      const auto valid = std::min<std::size_t>(sol.valid_saves[static_cast<std::size_t>(b)], grid.size());
      for (std::size_t k = 1; k < valid; ++k) {
        const Eigen::VectorXd d = sol.values[k].col(b) - s.states.col(static_cast<Eigen::Index>(k));
        part.sum += d.squaredNorm();
        part.count += static_cast<std::size_t>(dim);
        adj[k].col(b) = 2.0 * d;
      }
      if (!sol.completed(b)) part.failed.push_back(idx[static_cast<std::size_t>(b)]);
    }
    if (opt.gradient) part.grad = sol.pullback(adj).params;
  });
  return reduce(parts, opt.gradient, model.parameters().size());
}

LossValue aph_penalty(const Model& model, const std::vector<Segment>& batch, const EvalOptions& opt) {
  if (!model.has_augmentation()) throw CapabilityError("model has no augmentation term to penalize");
  const double scale = model.kind() == ModelKind::aph ? model.spec().accel_scale : model.spec().force_scale;
  LossValue ms = pointwise_loss(model, batch, opt, [&](ad::Tape& tape, const BoundParams& bp,
                                                       const std::vector<std::size_t>& idx, std::size_t& count) {
    Stacked s = stack(batch, idx, false);
    count = static_cast<std::size_t>(s.states.cols());
    return ad::squared_norm(ad::scale(model.augmentation(bp, tape.constant(s.states)), 1.0 / scale));
  });
  // RMS = sqrt(mean ‖F_a‖²); the zero penalty has zero subgradient.
  LossValue out = ms;
  out.value = std::sqrt(ms.value);
  if (opt.gradient) {
    out.gradient = out.value > 0 ? Eigen::VectorXd(ms.gradient / (2.0 * out.value))
                                 : Eigen::VectorXd::Zero(ms.gradient.size());
  }
  return out;
}

LossValue torque_loss(const Model& model, const std::vector<Segment>& batch, const EvalOptions& opt) {
  const int n = model.dof();
  const double scale = model.spec().force_scale;
  return pointwise_loss(model, batch, opt, [&](ad::Tape& tape, const BoundParams& bp,
                                               const std::vector<std::size_t>& idx, std::size_t& count) {
    Stacked s = stack(batch, idx, true);
    count = static_cast<std::size_t>(s.states.size() / 2);
    ad::Var q = tape.constant(s.states.topRows(n));
    ad::Var qd = tape.constant(s.states.bottomRows(n));
    LagrangianTerms terms = model.lagrangian_terms(tape, bp, q);
    ad::Var nc = model.tau_nc(tape, bp, q, qd, &terms);
    ad::Var predicted = mech::input_force_residual(terms, qd, tape.constant(s.accelerations), nc);
    ad::Var actual = model.tau_u(tape, bp, q, qd, tape.constant(s.inputs));
    return ad::squared_norm(ad::scale(ad::sub(actual, predicted), 1.0 / scale));
  });
}

Eigen::MatrixXd integral_residuals(const Model& model, const Segment& segment, bool per_unit_time) {
  std::vector<Segment> one{segment};
  check_batch(model, one);
  ad::Tape tape(false);
  BoundParams bp(tape, model.parameters(), false);
  Stacked s = stack(one, {0}, false);
  Eigen::MatrixXd r = integral_residual_var(tape, bp, model, s, segment.dt).value();
  return per_unit_time ? r : Eigen::MatrixXd(r * segment.dt);
}

LossValue itau_loss(const Model& model, const std::vector<Segment>& batch, const EvalOptions& opt) {
  const double scale = model.spec().force_scale;
  const double dt = batch.empty() ? 0.0 : batch.front().dt;
  return pointwise_loss(model, batch, opt, [&](ad::Tape& tape, const BoundParams& bp,
                                               const std::vector<std::size_t>& idx, std::size_t& count) {
    Stacked s = stack(batch, idx, false);
    ad::Var r = integral_residual_var(tape, bp, model, s, dt);
    count = static_cast<std::size_t>(r.value().size());
    return ad::squared_norm(ad::scale(r, 1.0 / scale));
  });
}

namespace {

LossValue combine(const LossValue& a, const LossValue& traj, double lambda) {
  LossValue out;
  out.value = a.value + lambda * traj.value;
  if (a.gradient.size() > 0 && traj.gradient.size() > 0) out.gradient = a.gradient + lambda * traj.gradient;
  out.count = traj.count;
  out.failed = traj.failed;
  return out;
}

}  // namespace

LossValue prop_loss(const Model& model, const std::vector<Segment>& batch, double lambda, const EvalOptions& opt) {
  return combine(itau_loss(model, batch, opt), traj_loss(model, batch, opt), lambda);
}

LossValue aph_loss(const Model& model, const std::vector<Segment>& batch, double lambda, const EvalOptions& opt) {
  return combine(aph_penalty(model, batch, opt), traj_loss(model, batch, opt), lambda);
}

double update_lambda(double lambda, double traj_loss, const LossConfig& cfg) {
  if (!std::isfinite(traj_loss)) return lambda;
  return std::clamp(lambda + cfg.lambda_rate * traj_loss, cfg.lambda_min, cfg.lambda_max);
}

bool adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, const OptimizerConfig& cfg,
               const Eigen::VectorXd* decay_mask) {
  if (grad.size() != params.size()) throw ContractViolation("gradient and parameters differ in size");
  if (!grad.allFinite()) return false;
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const Eigen::ArrayXd step = (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
  Eigen::ArrayXd decay = cfg.weight_decay * params.array();
  if (decay_mask != nullptr) decay *= decay_mask->array();
  params.array() -= cfg.lr * (step + decay);
  return true;
}

Curriculum Curriculum::defaults(SystemId system, const std::string& profile, double dt) {
  Curriculum c;
  c.stage1.horizon = 2 * dt;
  c.stage1.method = ode::Method::rk4;
  c.stage2.horizon = system == SystemId::nmsd ? 2.0 : 1.0;
  c.stage2.method = ode::Method::tsit5;
  if (profile == "paper-scale") {
    c.stage1.epochs = system == SystemId::nmsd ? 5000 : 50000;
    c.stage2.epochs = system == SystemId::nmsd ? 1000 : 10000;
  } else if (profile == "smoke") {
    c.stage1.epochs = system == SystemId::nmsd ? 500 : 2000;
    c.stage2.epochs = system == SystemId::nmsd ? 100 : 200;
    c.stage1.batch_size = 512;
  } else {
    throw ConfigError("unknown profile '" + profile + "' (valid: smoke, paper-scale)");
  }
  return c;
}

TrainConfig TrainConfig::defaults(SystemId system, LossKind kind, const std::string& profile) {
  TrainConfig c;
  c.loss.kind = kind;
  c.curriculum = Curriculum::defaults(system, profile);
  return c;
}

void TrainConfig::validate() const {
  if (!(loss.lambda0 >= 0 && loss.lambda_min >= 0 && loss.lambda_min <= loss.lambda_max)) {
    throw ConfigError("λ settings must satisfy 0 ≤ λ_min ≤ λ_max and λ0 ≥ 0");
  }
  if (!(optimizer.beta1 > 0 && optimizer.beta1 < 1 && optimizer.beta2 > 0 && optimizer.beta2 < 1)) {
    throw ConfigError("Adam β₁, β₂ must lie in (0, 1)");
  }
  if (!(optimizer.lr > 0 && optimizer.eps > 0 && optimizer.weight_decay >= 0)) {
    throw ConfigError("learning rate and ε must be positive, weight decay non-negative");
  }
  for (const StageConfig* s : {&curriculum.stage1, &curriculum.stage2}) {
    if (!(s->horizon > 0)) throw ConfigError("stage horizons must be positive");
  }
  if (chunk_columns == 0) throw ConfigError("chunk_columns must be positive");
  if (!(abort_fraction > 0 && abort_fraction <= 1)) throw ConfigError("abort_fraction must be in (0, 1]");
  solver.validate();
}

namespace {

void stage_to_json(nlohmann::json& j, const StageConfig& s) {
  j = nlohmann::json{{"horizon", s.horizon}, {"epochs", s.epochs}, {"method", to_string(s.method)},
                     {"batch_size", s.batch_size}};
}

void stage_from_json(const nlohmann::json& j, StageConfig& s, const std::string& where) {
  require_known_keys(j, {"horizon", "epochs", "method", "batch_size"}, where);
  read_optional(j, "horizon", s.horizon);
  read_optional(j, "epochs", s.epochs);
  read_optional(j, "batch_size", s.batch_size);
  std::string m = to_string(s.method);
  read_optional(j, "method", m);
  s.method = parse_method(m);
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  nlohmann::json s1, s2;
  stage_to_json(s1, c.curriculum.stage1);
  stage_to_json(s2, c.curriculum.stage2);
  j = nlohmann::json{
      {"loss",
       {{"kind", to_string(c.loss.kind)},
        {"lambda0", c.loss.lambda0},
        {"lambda_rate", c.loss.lambda_rate},
        {"lambda_min", c.loss.lambda_min},
        {"lambda_max", c.loss.lambda_max}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay},
        {"batch_size", c.optimizer.batch_size}}},
      {"curriculum", {{"stage1", s1}, {"stage2", s2}}},
      {"solver", c.solver},
      {"chunk_columns", c.chunk_columns},
      {"threads", c.threads},
      {"seed", c.seed},
      {"abort_fraction", c.abort_fraction},
      {"track_itau", c.track_itau}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  require_known_keys(j, {"loss", "optimizer", "curriculum", "solver", "chunk_columns", "threads", "seed",
                         "abort_fraction", "track_itau"},
                     "training config");
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    require_known_keys(l, {"kind", "lambda0", "lambda_rate", "lambda_min", "lambda_max"}, "loss config");
    std::string kind = to_string(c.loss.kind);
    read_optional(l, "kind", kind);
    c.loss.kind = parse_loss_kind(kind);
    read_optional(l, "lambda0", c.loss.lambda0);
    read_optional(l, "lambda_rate", c.loss.lambda_rate);
    read_optional(l, "lambda_min", c.loss.lambda_min);
    read_optional(l, "lambda_max", c.loss.lambda_max);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    require_known_keys(o, {"lr", "beta1", "beta2", "eps", "weight_decay", "batch_size"}, "optimizer config");
    read_optional(o, "lr", c.optimizer.lr);
    read_optional(o, "beta1", c.optimizer.beta1);
    read_optional(o, "beta2", c.optimizer.beta2);
    read_optional(o, "eps", c.optimizer.eps);
    read_optional(o, "weight_decay", c.optimizer.weight_decay);
    read_optional(o, "batch_size", c.optimizer.batch_size);
  }
  if (j.contains("curriculum")) {
    const auto& cu = j.at("curriculum");
    require_known_keys(cu, {"stage1", "stage2"}, "curriculum config");
    if (cu.contains("stage1")) stage_from_json(cu.at("stage1"), c.curriculum.stage1, "curriculum.stage1");
    if (cu.contains("stage2")) stage_from_json(cu.at("stage2"), c.curriculum.stage2, "curriculum.stage2");
  }
  if (j.contains("solver")) ode::from_json(j.at("solver"), c.solver);
  read_optional(j, "chunk_columns", c.chunk_columns);
  read_optional(j, "threads", c.threads);
  read_optional(j, "seed", c.seed);
  read_optional(j, "abort_fraction", c.abort_fraction);
  read_optional(j, "track_itau", c.track_itau);
}

namespace {

std::size_t horizon_steps(double horizon, double dt) {
  const double k = horizon / dt;
  const double r = std::round(k);
  if (r < 1 || std::abs(k - r) > 1e-6 * std::max(1.0, r)) {
    throw ConfigError("stage horizon must be a positive multiple of the dataset Δt");
  }
  return static_cast<std::size_t>(r);
}

std::vector<std::size_t> pick_batch(std::size_t n, std::size_t size, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (size == 0 || size >= n) return idx;
  Rng rng(Rng::derive(seed, epoch));
  for (std::size_t i = 0; i < size; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(n - i)));
    std::swap(idx[i], idx[std::min(j, n - 1)]);
  }
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Model reference_model(const Dataset& data) {
  if (data.system == SystemId::nmsd) return ground_truth_model(SystemId::nmsd, data.params.get<NmsdParams>());
  return ground_truth_model(SystemId::furuta, {}, data.params.get<FurutaParams>());
}

}  // namespace

TrainResult train(const Model& initial, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const HistoryRow&)>& progress) {
  cfg.validate();
  data.validate();
  if (initial.spec().system != data.system) throw ConfigError("model and dataset describe different systems");
  const LossKind kind = cfg.loss.kind;
  if (kind == LossKind::aph && !initial.has_augmentation()) {
    throw CapabilityError("the aph loss needs a model with an augmentation term (aph or adln)");
  }
  if (initial.parameters().size() == 0) throw CapabilityError("model has no trainable parameters");

  TrainResult result{initial, {}, 0};
  Model& model = result.model;
  Eigen::VectorXd theta = model.parameters().values();
  Eigen::VectorXd decay_mask = Eigen::VectorXd::Ones(theta.size());
  for (std::size_t b : model.parameters().blocks_with_prefix("physical")) {
    const ParameterBlock& blk = model.parameters().block(b);
    decay_mask.segment(blk.offset, blk.size()).setZero();
  }
  std::optional<Model> reference;
  if (kind == LossKind::torque) reference = reference_model(data);

  AdamState adam;
  double lambda = cfg.loss.lambda0;
  std::size_t epoch = 0;
  const StageConfig* stages[2] = {&cfg.curriculum.stage1, &cfg.curriculum.stage2};
  for (int si = 0; si < 2; ++si) {
    const StageConfig& stage = *stages[si];
    if (stage.epochs == 0) continue;
    std::vector<Segment> segments = make_segments(data, horizon_steps(stage.horizon, data.dt));
    if (segments.empty()) throw ConfigError("stage horizon exceeds every trajectory");
    if (reference) attach_accelerations(segments, *reference);
    EvalOptions opt;
    opt.solver = cfg.solver;
    opt.solver.method = stage.method;
    opt.chunk_columns = cfg.chunk_columns;
    opt.threads = cfg.threads;
    const std::size_t batch_size = stage.batch_size > 0 ? stage.batch_size : cfg.optimizer.batch_size;

    for (std::size_t e = 0; e < stage.epochs; ++e, ++epoch) {
      const auto picked = pick_batch(segments.size(), batch_size, cfg.seed, epoch);
      std::vector<Segment> batch;
      batch.reserve(picked.size());
      for (std::size_t i : picked) batch.push_back(segments[i]);

      LossValue traj, main, itau;
      bool have_itau = false;
      switch (kind) {
        case LossKind::traj:
          traj = traj_loss(model, batch, opt);
          main = traj;
          break;
        case LossKind::aph:
          traj = traj_loss(model, batch, opt);
          main = combine(aph_penalty(model, batch, opt), traj, lambda);
          break;
        case LossKind::prop:
          traj = traj_loss(model, batch, opt);
          itau = itau_loss(model, batch, opt);
          have_itau = true;
          main = combine(itau, traj, lambda);
          break;
        case LossKind::torque: {
          main = torque_loss(model, batch, opt);
          EvalOptions value_only = opt;
          value_only.gradient = false;
          traj = traj_loss(model, batch, value_only);
          break;
        }
      }
      if (!have_itau && cfg.track_itau) {
        EvalOptions value_only = opt;
        value_only.gradient = false;
        itau = itau_loss(model, batch, value_only);
        have_itau = true;
      }

      if (static_cast<double>(traj.failed.size()) > cfg.abort_fraction * static_cast<double>(batch.size())) {
        std::vector<std::size_t> ids;
        std::ostringstream msg;
        msg << "training aborted in epoch " << epoch << ": " << traj.failed.size() << " of " << batch.size()
            << " rollouts failed (segments";
        for (std::size_t f : traj.failed) {
          ids.push_back(picked[f]);
          msg << ' ' << picked[f] << " [traj " << batch[f].source << " @ " << batch[f].offset << ']';
        }
        msg << ')';
        throw TrainingAbort(msg.str(), ids);
      }

      HistoryRow row;
      row.epoch = epoch;
      row.stage = si + 1;
      row.loss_total = main.value;
      row.loss_traj = traj.value;
      row.loss_itau = have_itau ? itau.value : std::numeric_limits<double>::quiet_NaN();
      row.lambda = lambda;
      result.history.push_back(row);
      if (progress) progress(row);

      if (adam_step(theta, main.gradient, adam, cfg.optimizer, &decay_mask)) {
        model.set_parameters(theta);
      } else {
        ++result.skipped_updates;
      }
      if (kind == LossKind::aph || kind == LossKind::prop) lambda = update_lambda(lambda, traj.value, cfg.loss);
    }
  }
  return result;
}

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "epoch,stage,loss_total,loss_traj,loss_itau,lambda\n";
  char buf[256];
  for (const HistoryRow& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.stage, r.loss_total, r.loss_traj,
                  r.loss_itau, r.lambda);
    out << buf;
  }
}

std::vector<HistoryRow> read_history_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open " + file.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,stage,loss_total,loss_traj,loss_itau,lambda") throw ConfigError("unexpected history header");
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ConfigError("malformed history row: " + line);
    HistoryRow r;
    r.epoch = std::stoull(cells[0]);
    r.stage = std::stoi(cells[1]);
    r.loss_total = std::strtod(cells[2].c_str(), nullptr);
    r.loss_traj = std::strtod(cells[3].c_str(), nullptr);
    r.loss_itau = std::strtod(cells[4].c_str(), nullptr);
    r.lambda = std::strtod(cells[5].c_str(), nullptr);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace lagid
