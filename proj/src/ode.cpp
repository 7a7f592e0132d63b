#include "lagid/ode.hpp"

#include "lagid/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lagid::ode {

namespace {

struct Tableau {
  int stages = 0;
  std::vector<double> c;
  std::vector<std::vector<double>> a;
  std::vector<double> b;
  std::vector<double> btilde;  // error weights; the last entry multiplies f(t + h, y_new)
};

const Tableau& tsit5_tableau() {
  static const Tableau tb = [] {
    Tableau t;
    t.stages = 6;
    t.c = {0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0};
    t.a = {{},
           {0.161},
           {-0.008480655492356989, 0.335480655492357},
           {2.897153057105493, -6.359448489975075, 4.3622954328695815},
           {5.325864828439257, -11.748883564062828, 7.4955393428898365, -0.09249506636175525},
           {5.86145544294642, -12.92096931784711, 8.159367898576159, -0.071584973281401, -0.028269050394068383}};
    t.b = {0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742, -3.290069515436081, 2.324710524099774};
    t.btilde = {0.001780011052226, 0.000816434459657, -0.007880878010262, 0.144711007173263,
                -0.582357165452555, 0.458082105929187, -1.0 / 66.0};
    return t;
  }();
  return tb;
}

const Tableau& rk4_tableau() {
  static const Tableau tb = [] {
    Tableau t;
    t.stages = 4;
    t.c = {0.0, 0.5, 0.5, 1.0};
    t.a = {{}, {0.5}, {0.0, 0.5}, {0.0, 0.0, 1.0}};
    t.b = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};
    return t;
  }();
  return tb;
}

// Dense-output weights b_i(θ) of the Tsit5 interpolant.
std::array<double, 7> tsit5_dense_weights(double th) {
  const double t2 = th * th;
  std::array<double, 7> w{};
  w[0] = -1.0530884977290216 * th * (th - 1.3299890189751412) * (t2 - 1.4364028541716351 * th + 0.7139816917074209);
  w[1] = 0.1017 * t2 * (t2 - 2.1966568338249754 * th + 1.2949852507374631);
  w[2] = 2.490627285651252793 * t2 * (t2 - 2.38535645472061657 * th + 1.57803468208092486);
  w[3] = -16.54810288924490272 * (th - 1.21712927295533244) * (th - 0.61620406037800089) * t2;
  w[4] = 47.37952196281928122 * (th - 1.203071208372362603) * (th - 0.658047292653547382) * t2;
  w[5] = -34.87065786149660974 * (th - 1.2) * (th - 0.666666666666666667) * t2;
  w[6] = 2.5 * (th - 1.0) * (th - 0.6) * t2;
  return w;
}

// Builds y_{n+1} on the tape; `ks` receives the stage derivatives.
ad::Var step_on_tape(const Tableau& tb, const BatchRhs& rhs, ad::Tape& tape, const BoundParams& bp, double t,
                     double h, ad::Var y, const std::vector<Eigen::Index>& cols, std::vector<ad::Var>& ks) {
  ks.clear();
  for (int i = 0; i < tb.stages; ++i) {
    ad::Var yi = y;
    if (i > 0) {
      std::vector<double> coeff{1.0};
      std::vector<ad::Var> terms{y};
      for (int j = 0; j < i; ++j) {
        const double aij = tb.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (aij == 0.0) continue;
        coeff.push_back(h * aij);
        terms.push_back(ks[static_cast<std::size_t>(j)]);
      }
      yi = ad::lincomb(coeff, terms);
    }
    ks.push_back(rhs.eval(tape, bp, t + tb.c[static_cast<std::size_t>(i)] * h, yi, cols));
  }
  std::vector<double> coeff{1.0};
  std::vector<ad::Var> terms{y};
  for (int i = 0; i < tb.stages; ++i) {
    coeff.push_back(h * tb.b[static_cast<std::size_t>(i)]);
    terms.push_back(ks[static_cast<std::size_t>(i)]);
  }
  return ad::lincomb(coeff, terms);
}

// Value-only evaluation of the rhs on a column subset.
class ValueEvaluator {
 public:
  explicit ValueEvaluator(const BatchRhs& rhs) : rhs_(rhs) {}

  Eigen::MatrixXd operator()(double t, const Eigen::MatrixXd& y, const std::vector<Eigen::Index>& cols) {
    tape_.clear();
    BoundParams bp(tape_, rhs_.parameters(), false);
    return rhs_.eval(tape_, bp, t, tape_.constant(y), cols).value();
  }

 private:
  const BatchRhs& rhs_;
  ad::Tape tape_{false};
};

double column_error(const Eigen::MatrixXd& err, const Eigen::MatrixXd& y, const Eigen::MatrixXd& ynew,
                    Eigen::Index j, double atol, double rtol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.rows(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y(i, j)), std::abs(ynew(i, j)));
    const double r = err(i, j) / sc;
    acc += r * r;
  }
  const double e = std::sqrt(acc / static_cast<double>(err.rows()));
  return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

Eigen::MatrixXd take_cols(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

std::vector<Eigen::Index> iota_cols(Eigen::Index n) {
  std::vector<Eigen::Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Eigen::Index{0});
  return v;
}

double initial_step_guess(ValueEvaluator& f, double t, const Eigen::MatrixXd& y, const std::vector<Eigen::Index>& cols,
                          const SolverConfig& cfg, double span) {
  const Eigen::MatrixXd f0 = f(t, y, cols);
  auto norm = [&](const Eigen::MatrixXd& v) {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double r = v(i, j) / (cfg.atol + cfg.rtol * std::abs(y(i, j)));
        acc += r * r;
      }
      worst = std::max(worst, std::sqrt(acc / static_cast<double>(v.rows())));
    }
    return worst;
  };
  const double d0 = norm(y);
  const double d1 = norm(f0);
  double h0 = (d0 < 1e-5 || d1 < 1e-5 || !std::isfinite(d1)) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  const Eigen::MatrixXd y1 = y + h0 * f0;
  const Eigen::MatrixXd f1 = f(t + h0, y1, cols);
  const double d2 = norm(f1 - f0) / h0;
  const double dm = std::max(d1, d2);
  double h1 = (!std::isfinite(dm)) ? h0 : (dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0));
  return std::min({100.0 * h0, h1, span});
}

bool column_finite(const Eigen::MatrixXd& m, Eigen::Index j) { return m.col(j).allFinite(); }

}  // namespace

void SolverConfig::validate() const {
  if (!(rtol > 0 && atol > 0)) throw ConfigError("solver tolerances must be positive");
  if (!(safety > 0 && safety <= 1)) throw ConfigError("solver safety factor must be in (0, 1]");
  if (!(factor_min > 0 && factor_min < 1 && factor_max > 1)) throw ConfigError("invalid step growth clamp");
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (!(min_step > 0)) throw ConfigError("min_step must be positive");
  if (fixed_dt < 0) throw ConfigError("fixed_dt must be non-negative");
  if (method == Method::rk4 && !step_to_save_points) throw ConfigError("rk4 integration always lands on save points");
}

InterpolatedSignal::InterpolatedSignal(double t0, double dt, Eigen::MatrixXd samples)
    : t0_(t0), dt_(dt), samples_(std::move(samples)) {
  if (!(dt_ > 0)) throw ContractViolation("signal sample interval must be positive");
  if (samples_.cols() < 1) throw ContractViolation("signal needs at least one sample");
}

void InterpolatedSignal::write(double t, Eigen::Ref<Eigen::VectorXd> out) const {
  const Eigen::Index n = samples_.cols();
  const double s = (t - t0_) / dt_;
  if (!(s > 0) || n == 1) {
    out = samples_.col(0);
    return;
  }
  if (s >= static_cast<double>(n - 1)) {
    out = samples_.col(n - 1);
    return;
  }
  // Sample times are matched to round-off so evaluation there is exact.
  double fl = std::floor(s);
  const double nearest = std::round(s);
  if (std::abs(s - nearest) <= 1e-9 * std::max(1.0, nearest)) {
    out = samples_.col(static_cast<Eigen::Index>(nearest));
    return;
  }
  const auto i = static_cast<Eigen::Index>(fl);
  const double w = s - fl;
  out = (1.0 - w) * samples_.col(i) + w * samples_.col(i + 1);
}

Eigen::VectorXd InterpolatedSignal::operator()(double t) const {
  Eigen::VectorXd out(samples_.rows());
  write(t, out);
  return out;
}

ad::Var FunctionRhs::eval(ad::Tape& tape, const BoundParams&, double t, ad::Var y,
                          const std::vector<Eigen::Index>&) const {
  if (tape.recording()) throw ContractViolation("FunctionRhs has no parameters to differentiate; use a taped rhs");
  return tape.constant(fn_(t, y.value()));
}

bool BatchSolution::all_completed() const {
  return std::all_of(failure_time.begin(), failure_time.end(), [](double t) { return std::isnan(t); });
}

BatchSolution solve_batch(const BatchRhs& rhs, const Eigen::MatrixXd& y0, const std::vector<double>& save_times,
                          const SolverConfig& cfg) {
  cfg.validate();
  if (y0.rows() != rhs.dim()) throw ContractViolation("initial state has wrong dimension");
  if (y0.cols() < 1) throw ContractViolation("empty batch");
  if (save_times.size() < 2) throw ContractViolation("need at least two save times");
  for (std::size_t k = 1; k < save_times.size(); ++k) {
    if (!(save_times[k] >= save_times[k - 1])) throw ContractViolation("save times must be non-decreasing");
  }
  if (!y0.allFinite()) throw ContractViolation("non-finite initial state");

  const Tableau& tb = cfg.method == Method::tsit5 ? tsit5_tableau() : rk4_tableau();
  const bool adaptive = cfg.method == Method::tsit5;
  const Eigen::Index B = y0.cols();
  const double t_end = save_times.back();
  const double span = t_end - save_times.front();

  BatchSolution sol;
  sol.rhs_ = &rhs;
  sol.config_ = cfg;
  sol.save_times = save_times;
  sol.values.assign(save_times.size(), Eigen::MatrixXd());
  sol.values[0] = y0;
  sol.save_step_.assign(save_times.size(), 0);
  sol.valid_saves.assign(static_cast<std::size_t>(B), 1);
  sol.failure_time.assign(static_cast<std::size_t>(B), std::numeric_limits<double>::quiet_NaN());

  Eigen::MatrixXd y = y0;
  std::vector<Eigen::Index> alive = iota_cols(B);
  double t = save_times.front();
  std::size_t next_save = 1;
  ValueEvaluator f(rhs);

  auto kill = [&](Eigen::Index col, double when) {
    sol.failure_time[static_cast<std::size_t>(col)] = when;
  };
  auto prune = [&]() {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index c : alive)
      if (sol.completed(c)) keep.push_back(c);
    alive.swap(keep);
  };
  auto fill_saves = [&](std::size_t upto) {
    // Save slots up to `upto` (exclusive) not yet written get the current state.
    while (next_save < upto) {
      sol.values[next_save] = y;
      sol.save_step_[next_save] = sol.accepted_steps;
      for (Eigen::Index c : alive) sol.valid_saves[static_cast<std::size_t>(c)] = next_save + 1;
      ++next_save;
    }
  };
  // Save points coinciding with the start.
  while (next_save < save_times.size() && save_times[next_save] <= t) fill_saves(next_save + 1);

  double h = 0.0;
  if (adaptive) {
    h = cfg.initial_step > 0 ? cfg.initial_step : (span > 0 ? initial_step_guess(f, t, y, alive, cfg, span) : 0.0);
  } else if (cfg.fixed_dt > 0) {
    h = cfg.fixed_dt;
  }
  h = std::min(h, cfg.max_step);

  double e_prev = 1.0;
  bool last_rejected = false;
  std::vector<ad::Var> ks;
  Eigen::MatrixXd fsal;  // f(t, y) on `alive`, when known
  std::vector<Eigen::Index> fsal_cols;
  std::size_t attempts = 0;

  while (next_save < save_times.size() && !alive.empty()) {
    if (attempts >= cfg.max_steps) {
      for (Eigen::Index c : alive) kill(c, t);
      alive.clear();
      break;
    }
    ++attempts;
    const double target = (cfg.step_to_save_points || !adaptive) ? save_times[next_save] : t_end;
    double h_step;
    bool clipped = false;
    if (adaptive) {
      h_step = h;
      if (t + h_step >= target - 1e-12 * std::max(1.0, std::abs(target))) {
        clipped = t + h_step > target;
        h_step = target - t;
      }
    } else {
      const double interval = target - t;
      h_step = cfg.fixed_dt > 0 ? std::min(cfg.fixed_dt, interval) : interval;
      if (cfg.fixed_dt > 0 && interval - h_step < 1e-12 * std::max(1.0, std::abs(target))) h_step = interval;
    }
    if (!(h_step > 0)) {
      fill_saves(next_save + 1);
      continue;
    }

    const Eigen::MatrixXd ya = take_cols(y, alive);
    const Eigen::Index na = ya.cols();
    std::vector<Eigen::MatrixXd> k(static_cast<std::size_t>(tb.stages) + 1);
    if (adaptive && fsal_cols == alive && fsal.cols() == na) k[0] = fsal;
    else k[0] = f(t, ya, alive);
    for (int i = 1; i < tb.stages; ++i) {
      Eigen::MatrixXd yi = ya;
      for (int j = 0; j < i; ++j) {
        const double aij = tb.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (aij != 0.0) yi.noalias() += (h_step * aij) * k[static_cast<std::size_t>(j)];
      }
      k[static_cast<std::size_t>(i)] = f(t + tb.c[static_cast<std::size_t>(i)] * h_step, yi, alive);
    }
    Eigen::MatrixXd ynew = ya;
    for (int i = 0; i < tb.stages; ++i) ynew.noalias() += (h_step * tb.b[static_cast<std::size_t>(i)]) * k[static_cast<std::size_t>(i)];

    std::vector<double> col_err(static_cast<std::size_t>(na), 0.0);
    double err = 0.0;
    if (adaptive) {
      const bool finite_new = ynew.allFinite();
      k[6] = finite_new ? f(t + h_step, ynew, alive) : Eigen::MatrixXd::Constant(ya.rows(), na, std::nan(""));
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(ya.rows(), na);
      for (int i = 0; i < 7; ++i) e.noalias() += (h_step * tb.btilde[static_cast<std::size_t>(i)]) * k[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < na; ++j) {
        col_err[static_cast<std::size_t>(j)] = column_error(e, ya, ynew, j, cfg.atol, cfg.rtol);
        err = std::max(err, col_err[static_cast<std::size_t>(j)]);
      }
    } else {
      for (Eigen::Index j = 0; j < na; ++j) {
        const bool ok = column_finite(ynew, j);
        col_err[static_cast<std::size_t>(j)] = ok ? 0.0 : std::numeric_limits<double>::infinity();
        err = std::max(err, col_err[static_cast<std::size_t>(j)]);
      }
    }

    if (err <= 1.0) {
      const double t_new = (std::abs(t + h_step - target) <= 1e-12 * std::max(1.0, std::abs(target))) ? target : t + h_step;
      StepRecord rec;
      rec.t = t;
      rec.h = h_step;
      rec.cols = alive;
      const bool reaches_save = (cfg.step_to_save_points || !adaptive) && t_new == save_times[next_save];
      if (reaches_save) rec.save_index = static_cast<int>(next_save);
      sol.steps_.push_back(std::move(rec));
      sol.step_states_.push_back(ya);
      ++sol.accepted_steps;

      // Dense output for save points strictly inside this step.
      if (!cfg.step_to_save_points && adaptive) {
        while (next_save < save_times.size() && save_times[next_save] <= t_new) {
          const double th = (save_times[next_save] - t) / h_step;
          const auto w = tsit5_dense_weights(th);
          Eigen::MatrixXd yi = ya;
          for (int i = 0; i < 7; ++i) yi.noalias() += (h_step * w[static_cast<std::size_t>(i)]) * k[static_cast<std::size_t>(i)];
          Eigen::MatrixXd full = y;
          for (Eigen::Index j = 0; j < na; ++j) full.col(alive[static_cast<std::size_t>(j)]) = yi.col(j);
          sol.values[next_save] = full;
          sol.save_step_[next_save] = sol.accepted_steps;
          for (Eigen::Index c : alive) sol.valid_saves[static_cast<std::size_t>(c)] = next_save + 1;
          ++next_save;
        }
      }

      for (Eigen::Index j = 0; j < na; ++j) y.col(alive[static_cast<std::size_t>(j)]) = ynew.col(j);
      t = t_new;
      bool pruned = false;
      for (Eigen::Index j = 0; j < na; ++j) {
        if (ynew.col(j).cwiseAbs().maxCoeff() > cfg.state_bound) {
          kill(alive[static_cast<std::size_t>(j)], t);
          pruned = true;
        }
      }
      if (pruned) prune();
      if (reaches_save) fill_saves(next_save + 1);
      while (next_save < save_times.size() && save_times[next_save] <= t &&
             (cfg.step_to_save_points || !adaptive)) {
        fill_saves(next_save + 1);
      }

      if (adaptive) {
        if (!pruned) {
          fsal = k[6];
          fsal_cols = alive;
        } else {
          fsal_cols.clear();
        }
        const double e = std::max(err, 1e-10);
        double factor = cfg.safety * std::pow(e, -cfg.beta1 / 5.0) * std::pow(e_prev, -cfg.beta2 / 5.0);
        factor = std::clamp(factor, cfg.factor_min, cfg.factor_max);
        if (last_rejected) factor = std::min(factor, 1.0);
        const double proposal = h_step * factor;
        h = clipped ? std::max(h, proposal) : proposal;
        h = std::min(h, cfg.max_step);
        e_prev = e;
        last_rejected = false;
      }
    } else {
      ++sol.rejected_steps;
      fsal_cols.clear();
      if (!adaptive || h_step <= cfg.min_step) {
        for (Eigen::Index j = 0; j < na; ++j) {
          if (col_err[static_cast<std::size_t>(j)] > 1.0) kill(alive[static_cast<std::size_t>(j)], t);
        }
        prune();
        continue;
      }
      double factor = std::isfinite(err) ? cfg.safety * std::pow(err, -1.0 / 5.0) : cfg.factor_min;
      factor = std::clamp(factor, cfg.factor_min, 1.0);
      h = std::max(h_step * factor, cfg.min_step);
      if (h_step * factor < cfg.min_step) h = cfg.min_step;
      last_rejected = true;
    }
  }
  // Slots never reached keep the frozen state.
  while (next_save < save_times.size()) {
    sol.values[next_save] = y;
    sol.save_step_[next_save] = sol.accepted_steps;
    ++next_save;
  }
  return sol;
}

ParameterGradient BatchSolution::pullback(const std::vector<Eigen::MatrixXd>& adj) const {
  if (rhs_ == nullptr) throw ContractViolation("solution has no recorded steps");
  if (!config_.step_to_save_points && config_.method == Method::tsit5) {
    throw ContractViolation("gradients require step_to_save_points");
  }
  if (adj.size() != values.size()) throw ContractViolation("one adjoint per save point required");
  const Eigen::Index d = values[0].rows();
  const Eigen::Index B = values[0].cols();
  for (const auto& a : adj) {
    if (a.size() != 0 && (a.rows() != d || a.cols() != B)) throw ContractViolation("adjoint has wrong shape");
  }
  const Tableau& tb = config_.method == Method::tsit5 ? tsit5_tableau() : rk4_tableau();
  const ParameterVector& params = rhs_->parameters();

  ParameterGradient g;
  g.params = Eigen::VectorXd::Zero(params.size());
  Eigen::MatrixXd ybar = Eigen::MatrixXd::Zero(d, B);
  // Slot k holds the state after save_step_[k] accepted steps.
  auto add_adjoints_after = [&](std::size_t steps_done) {
    for (std::size_t k = 0; k < adj.size(); ++k) {
      if (save_step_[k] == steps_done && adj[k].size() != 0) ybar += adj[k];
    }
  };

  std::vector<ad::Var> ks;
  for (std::size_t n = steps_.size(); n-- > 0;) {
    add_adjoints_after(n + 1);
    const StepRecord& s = steps_[n];
    Eigen::MatrixXd seed = take_cols(ybar, s.cols);
    if (seed.isZero(0.0)) continue;
    ad::Tape tape(true);
    BoundParams bp(tape, params, true);
    ad::Var y = tape.leaf(step_states_[n], true);
    ad::Var ynew = step_on_tape(tb, *rhs_, tape, bp, s.t, s.h, y, s.cols, ks);
    tape.backward({{ynew, seed}});
    if (params.size() > 0) g.params += bp.gradient(tape);
    const Eigen::MatrixXd gy = tape.grad(y);
    for (std::size_t j = 0; j < s.cols.size(); ++j) ybar.col(s.cols[j]) = gy.col(static_cast<Eigen::Index>(j));
  }
  add_adjoints_after(0);
  g.y0 = ybar;
  return g;
}

namespace {

void throw_if_failed(const BatchSolution& sol) {
  if (!sol.all_completed()) {
    std::ostringstream os;
    os << "integration failed at t = " << sol.failure_time[0];
    throw IntegrationError(os.str(), sol.failure_time[0]);
  }
}

}  // namespace

Eigen::MatrixXd solve(const Fn& rhs, const Eigen::VectorXd& y0, const std::vector<double>& save_times,
                      const SolverConfig& config) {
  FunctionRhs wrapped(y0.size(), [&](double t, const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
    Eigen::MatrixXd out(y.rows(), y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) out.col(j) = rhs(t, y.col(j));
    return out;
  });
  BatchSolution sol = solve_batch(wrapped, y0, save_times, config);
  throw_if_failed(sol);
  Eigen::MatrixXd out(y0.size(), static_cast<Eigen::Index>(save_times.size()));
  for (std::size_t k = 0; k < save_times.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = sol.values[k].col(0);
  return out;
}

BatchSolution solve_with_gradients(const BatchRhs& rhs, const Eigen::VectorXd& y0,
                                   const std::vector<double>& save_times, const SolverConfig& config) {
  SolverConfig cfg = config;
  cfg.step_to_save_points = true;
  BatchSolution sol = solve_batch(rhs, y0, save_times, cfg);
  throw_if_failed(sol);
  return sol;
}

std::vector<Eigen::VectorXd> rk4_fixed(const Fn& rhs, const Eigen::VectorXd& y0, double t0, double dt,
                                       std::size_t n_steps) {
  if (!(dt > 0)) throw ContractViolation("rk4 step must be positive");
  std::vector<Eigen::VectorXd> out;
  out.reserve(n_steps + 1);
  out.push_back(y0);
  Eigen::VectorXd y = y0;
  for (std::size_t n = 0; n < n_steps; ++n) {
    const double t = t0 + static_cast<double>(n) * dt;
    const Eigen::VectorXd k1 = rhs(t, y);
    const Eigen::VectorXd k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = rhs(t + dt, y + dt * k3);
    y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y.allFinite()) {
      std::ostringstream os;
      os << "non-finite state at t = " << t + dt;
      throw IntegrationError(os.str(), t + dt);
    }
    out.push_back(y);
  }
  return out;
}

Eigen::MatrixXd trapezoid(const Eigen::MatrixXd& values, double dt) {
  if (values.cols() < 2) throw ContractViolation("trapezoid rule needs at least two samples");
  Eigen::MatrixXd out(values.rows(), values.cols());
  out.col(0).setZero();
  for (Eigen::Index k = 1; k < values.cols(); ++k) {
    out.col(k) = out.col(k - 1) + 0.5 * dt * (values.col(k - 1) + values.col(k));
  }
  return out;
}

std::vector<double> trapezoid(const std::vector<double>& values, double dt) {
  Eigen::Map<const Eigen::RowVectorXd> v(values.data(), static_cast<Eigen::Index>(values.size()));
  const Eigen::MatrixXd r = trapezoid(Eigen::MatrixXd(v), dt);
  return std::vector<double>(r.data(), r.data() + r.size());
}

Eigen::VectorXd tsit5_step(const Fn& rhs, double t, const Eigen::VectorXd& y, double h, Eigen::VectorXd* error) {
  const Tableau& tb = tsit5_tableau();
  std::vector<Eigen::VectorXd> k(7);
  k[0] = rhs(t, y);
  for (int i = 1; i < 6; ++i) {
    Eigen::VectorXd yi = y;
    for (int j = 0; j < i; ++j) yi += h * tb.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * k[static_cast<std::size_t>(j)];
    k[static_cast<std::size_t>(i)] = rhs(t + tb.c[static_cast<std::size_t>(i)] * h, yi);
  }
  Eigen::VectorXd ynew = y;
  for (int i = 0; i < 6; ++i) ynew += h * tb.b[static_cast<std::size_t>(i)] * k[static_cast<std::size_t>(i)];
  if (error != nullptr) {
    k[6] = rhs(t + h, ynew);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(y.size());
    for (int i = 0; i < 7; ++i) e += h * tb.btilde[static_cast<std::size_t>(i)] * k[static_cast<std::size_t>(i)];
    *error = e;
  }
  return ynew;
}

std::vector<double> uniform_grid(double t0, double dt, std::size_t n) {
  std::vector<double> g(n + 1);
  for (std::size_t j = 0; j <= n; ++j) g[j] = t0 + static_cast<double>(j) * dt;
  return g;
}

}  // namespace lagid::ode
