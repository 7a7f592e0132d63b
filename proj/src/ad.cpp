#include "lagid/ad.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lagid::ad {

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("ad: operands live on different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("ad::") + op + ": shape mismatch");
  }
}

template <typename F>
Mat map(const Mat& m, F f) {
  Mat out(m.rows(), m.cols());
  const double* src = m.data();
  double* dst = out.data();
  const Eigen::Index n = m.size();
  for (Eigen::Index i = 0; i < n; ++i) dst[i] = f(src[i]);
  return out;
}

// n x n block of packed column `c`.
Mat unpack(const Mat& packed, Eigen::Index c, int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = packed(i * n + j, c);
  return m;
}

void pack_into(Mat& packed, Eigen::Index c, const Mat& m, int n) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) packed(i * n + j, c) = m(i, j);
}

}  // namespace

Var Tape::leaf(Mat value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Mat value) { return leaf(std::move(value), false); }

Var Tape::push(Mat value, std::initializer_list<Var> parents, BackwardFn fn) {
  bool needs = false;
  if (record_) {
    for (const Var& p : parents) needs = needs || requires_grad(p.id);
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(Mat value, const std::vector<Var>& parents, BackwardFn fn) {
  bool needs = false;
  if (record_) {
    for (const Var& p : parents) needs = needs || requires_grad(p.id);
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("ad::Tape::backward: root must be 1x1");
  }
  backward({{root, Mat::Ones(1, 1)}});
}

void Tape::backward(const std::vector<std::pair<Var, Mat>>& seeds) {
  if (!record_) throw std::logic_error("ad::Tape::backward on a value-only tape");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  for (const auto& [v, seed] : seeds) {
    if (seed.rows() != v.rows() || seed.cols() != v.cols()) {
      throw std::invalid_argument("ad::Tape::backward: seed shape mismatch");
    }
    accumulate(v.id, seed);
  }
  run_backward();
}

void Tape::run_backward() {
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.has_grad && n.backward) n.backward(*this, i);
  }
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool Tape::has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].has_grad; }

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self));
    t.accumulate(ib, t.adjoint(self));
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self));
    t.accumulate(ib, -t.adjoint(self));
  });
}

Var neg(Var a) {
  const int ia = a.id;
  return a.tape->push(-a.value(), {a},
                      [ia](Tape& t, int self) { t.accumulate(ia, -t.adjoint(self)); });
}

Var scale(Var a, double c) {
  const int ia = a.id;
  return a.tape->push(c * a.value(), {a},
                      [ia, c](Tape& t, int self) { t.accumulate(ia, c * t.adjoint(self)); });
}

Var add_scalar(Var a, double c) {
  const int ia = a.id;
  return a.tape->push((a.value().array() + c).matrix(), {a},
                      [ia](Tape& t, int self) { t.accumulate(ia, t.adjoint(self)); });
}

Var cmul(Var a, Var b) {
  require_same_shape(a, b, "cmul");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var mul_const(Var a, const Mat& m) {
  if (a.rows() != m.rows() || a.cols() != m.cols()) {
    throw std::invalid_argument("ad::mul_const: shape mismatch");
  }
  const int ia = a.id;
  return a.tape->push(a.value().cwiseProduct(m), {a}, [ia, m](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self).cwiseProduct(m));
  });
}

Var square(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().cwiseAbs2(), {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, 2.0 * t.adjoint(self).cwiseProduct(t.value(ia)));
  });
}

Var cube(Var a) {
  const int ia = a.id;
  Mat v = a.value().array().cube().matrix();
  return a.tape->push(std::move(v), {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, (3.0 * t.adjoint(self).array() * t.value(ia).array().square()).matrix());
  });
}

Var sin(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().array().sin().matrix(), {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, (t.adjoint(self).array() * t.value(ia).array().cos()).matrix());
  });
}

Var cos(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().array().cos().matrix(), {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, (-t.adjoint(self).array() * t.value(ia).array().sin()).matrix());
  });
}

Var exp(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().array().exp().matrix(), {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self).cwiseProduct(t.value(self)));
  });
}

Var sqrt(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().array().sqrt().matrix(), {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, (0.5 * t.adjoint(self).array() / t.value(self).array()).matrix());
  });
}

namespace {

// Elementwise softplus and logistic sharing e = exp(−|x|).
void softplus_parts(const Mat& x, Mat* sp, Mat* sig) {
  const auto a = x.array();
  const Eigen::ArrayXXd e = (-a.abs()).exp();
  if (sp != nullptr) *sp = (a.max(0.0) + e.log1p()).matrix();
  if (sig != nullptr) *sig = (a >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e)).matrix();
}

}  // namespace

Var softplus(Var a) {
  const int ia = a.id;
  Mat sp;
  softplus_parts(a.value(), &sp, nullptr);
  return a.tape->push(std::move(sp), {a}, [ia](Tape& t, int self) {
    Mat sig;
    softplus_parts(t.value(ia), nullptr, &sig);
    t.accumulate(ia, t.adjoint(self).cwiseProduct(sig));
  });
}

Var sigmoid(Var a) {
  const int ia = a.id;
  Mat sig;
  softplus_parts(a.value(), nullptr, &sig);
  return a.tape->push(std::move(sig), {a}, [ia](Tape& t, int self) {
    const auto s = t.value(self).array();
    t.accumulate(ia, (t.adjoint(self).array() * s * (1.0 - s)).matrix());
  });
}

std::pair<Var, Var> softplus_with_slope(Var a) {
  const int ia = a.id;
  Mat sp, sig;
  softplus_parts(a.value(), &sp, &sig);
  Var slope = a.tape->push(std::move(sig), {a}, [ia](Tape& t, int self) {
    const auto s = t.value(self).array();
    t.accumulate(ia, (t.adjoint(self).array() * s * (1.0 - s)).matrix());
  });
  const int is = slope.id;
  Var value = a.tape->push(std::move(sp), {a}, [ia, is](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self).cwiseProduct(t.value(is)));
  });
  return {value, slope};
}

Var tanh(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().array().tanh().matrix(), {a}, [ia](Tape& t, int self) {
    const auto y = t.value(self).array();
    t.accumulate(ia, (t.adjoint(self).array() * (1.0 - y.square())).matrix());
  });
}

Var mul_rows(Var x, Var s) {
  require_same_tape(x, s);
  if (s.rows() != 1 || s.cols() != x.cols()) {
    throw std::invalid_argument("ad::mul_rows: expected 1 x B scale row");
  }
  const int ix = x.id, is = s.id;
  Mat v = x.value().array().rowwise() * s.value().row(0).array();
  return x.tape->push(std::move(v), {x, s}, [ix, is](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    if (t.requires_grad(ix)) {
      t.accumulate(ix, (g.array().rowwise() * t.value(is).row(0).array()).matrix());
    }
    if (t.requires_grad(is)) {
      t.accumulate(is, g.cwiseProduct(t.value(ix)).colwise().sum());
    }
  });
}

Var scale_by(Var s, Var x) {
  require_same_tape(s, x);
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("ad::scale_by: s must be 1x1");
  const int is = s.id, ix = x.id;
  return x.tape->push(s.value()(0, 0) * x.value(), {s, x}, [is, ix](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    if (t.requires_grad(ix)) t.accumulate(ix, t.value(is)(0, 0) * g);
    if (t.requires_grad(is)) t.accumulate(is, Mat::Constant(1, 1, g.cwiseProduct(t.value(ix)).sum()));
  });
}

Var mul_cols_const(Var x, const Eigen::RowVectorXd& h) {
  if (h.size() != x.cols()) throw std::invalid_argument("ad::mul_cols_const: size mismatch");
  const int ix = x.id;
  Mat v = x.value().array().rowwise() * h.array();
  return x.tape->push(std::move(v), {x}, [ix, h](Tape& t, int self) {
    t.accumulate(ix, (t.adjoint(self).array().rowwise() * h.array()).matrix());
  });
}

Var matmul(Var w, Var x) {
  require_same_tape(w, x);
  if (w.cols() != x.rows()) throw std::invalid_argument("ad::matmul: inner dimension mismatch");
  const int iw = w.id, ix = x.id;
  Mat v = w.value() * x.value();
  return w.tape->push(std::move(v), {w, x}, [iw, ix](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    if (t.requires_grad(iw)) t.accumulate(iw, g * t.value(ix).transpose());
    if (t.requires_grad(ix)) t.accumulate(ix, t.value(iw).transpose() * g);
  });
}

Var add_bias(Var x, Var b) {
  require_same_tape(x, b);
  if (b.cols() != 1 || b.rows() != x.rows()) throw std::invalid_argument("ad::add_bias: shape mismatch");
  const int ix = x.id, ib = b.id;
  Mat v = x.value().colwise() + b.value().col(0);
  return x.tape->push(std::move(v), {x, b}, [ix, ib](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.rowwise().sum());
  });
}

Var broadcast_cols(Var v, Eigen::Index cols) {
  if (v.cols() != 1) throw std::invalid_argument("ad::broadcast_cols: expected a column");
  const int iv = v.id;
  Mat out = v.value().replicate(1, cols);
  return v.tape->push(std::move(out), {v}, [iv](Tape& t, int self) {
    t.accumulate(iv, t.adjoint(self).rowwise().sum());
  });
}

Var row(Var a, Eigen::Index i) { return rows(a, i, 1); }

Var rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::invalid_argument("ad::rows: range out of bounds");
  }
  const int ia = a.id;
  const Eigen::Index total = a.rows();
  Mat v = a.value().middleRows(start, count);
  return a.tape->push(std::move(v), {a}, [ia, start, count, total](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    Mat full = Mat::Zero(total, g.cols());
    full.middleRows(start, count) = g;
    t.accumulate(ia, full);
  });
}

Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("ad::vstack: no parts");
  Tape* tape = parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index total = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (const Var& p : parts) {
    if (p.tape != tape || p.cols() != cols) throw std::invalid_argument("ad::vstack: mismatch");
    total += p.rows();
    ids.push_back(p.id);
    heights.push_back(p.rows());
  }
  Mat v(total, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return tape->push(std::move(v), parts, [ids, heights](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    Eigen::Index o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleRows(o, heights[k]));
      o += heights[k];
    }
  });
}

Var gather_cols(Var a, const std::vector<Eigen::Index>& cols) {
  const Eigen::Index n = a.cols();
  Mat v(a.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] < 0 || cols[k] >= n) throw std::invalid_argument("ad::gather_cols: index out of range");
    v.col(static_cast<Eigen::Index>(k)) = a.value().col(cols[k]);
  }
  const int ia = a.id;
  return a.tape->push(std::move(v), {a}, [ia, cols, n](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    Mat full = Mat::Zero(g.rows(), n);
    for (std::size_t k = 0; k < cols.size(); ++k) full.col(cols[k]) += g.col(static_cast<Eigen::Index>(k));
    t.accumulate(ia, full);
  });
}

Var sum_all(Var a) {
  const int ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push(Mat::Constant(1, 1, a.value().sum()), {a}, [ia, r, c](Tape& t, int self) {
    t.accumulate(ia, Mat::Constant(r, c, t.adjoint(self)(0, 0)));
  });
}

Var sum_rows(Var a) {
  const int ia = a.id;
  const Eigen::Index r = a.rows();
  return a.tape->push(a.value().colwise().sum(), {a}, [ia, r](Tape& t, int self) {
    t.accumulate(ia, t.adjoint(self).replicate(r, 1));
  });
}

Var mean_all(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("ad::mean_all: empty input");
  return scale(sum_all(a), 1.0 / n);
}

Var squared_norm(Var a) {
  const int ia = a.id;
  return a.tape->push(Mat::Constant(1, 1, a.value().squaredNorm()), {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, 2.0 * t.adjoint(self)(0, 0) * t.value(ia));
  });
}

Var lincomb(const std::vector<double>& coeffs, const std::vector<Var>& vars) {
  if (coeffs.size() != vars.size() || vars.empty()) {
    throw std::invalid_argument("ad::lincomb: size mismatch");
  }
  Mat v = Mat::Zero(vars.front().rows(), vars.front().cols());
  std::vector<int> ids;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    require_same_shape(vars.front(), vars[k], "lincomb");
    if (coeffs[k] != 0.0) v += coeffs[k] * vars[k].value();
    ids.push_back(vars[k].id);
  }
  return vars.front().tape->push(std::move(v), vars, [ids, coeffs](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (coeffs[k] != 0.0 && t.requires_grad(ids[k])) t.accumulate(ids[k], coeffs[k] * g);
    }
  });
}

Var packed_llt(Var l_packed, int n) {
  if (l_packed.rows() != n * n) throw std::invalid_argument("ad::packed_llt: expected n*n rows");
  const Eigen::Index b = l_packed.cols();
  const Mat& lp = l_packed.value();
  Mat out(n * n, b);
  for (Eigen::Index c = 0; c < b; ++c) {
    const Mat l = unpack(lp, c, n);
    pack_into(out, c, l * l.transpose(), n);
  }
  const int il = l_packed.id;
  return l_packed.tape->push(std::move(out), {l_packed}, [il, n](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    const Mat& lp2 = t.value(il);
    Mat gl(n * n, g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const Mat gm = unpack(g, c, n);
      pack_into(gl, c, (gm + gm.transpose()) * unpack(lp2, c, n), n);
    }
    t.accumulate(il, gl);
  });
}

Var packed_sym_outer(Var a_packed, Var b_packed, int n) {
  require_same_shape(a_packed, b_packed, "packed_sym_outer");
  if (a_packed.rows() != n * n) throw std::invalid_argument("ad::packed_sym_outer: expected n*n rows");
  const Eigen::Index cols = a_packed.cols();
  Mat out(n * n, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const Mat a = unpack(a_packed.value(), c, n);
    const Mat bm = unpack(b_packed.value(), c, n);
    pack_into(out, c, a * bm.transpose() + bm * a.transpose(), n);
  }
  const int ia = a_packed.id, ib = b_packed.id;
  return a_packed.tape->push(std::move(out), {a_packed, b_packed}, [ia, ib, n](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    Mat ga(n * n, g.cols()), gb(n * n, g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const Mat gm = unpack(g, c, n);
      const Mat gs = gm + gm.transpose();
      pack_into(ga, c, gs * unpack(t.value(ib), c, n), n);
      pack_into(gb, c, gs * unpack(t.value(ia), c, n), n);
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Var packed_matvec(Var m_packed, Var v, int n) {
  require_same_tape(m_packed, v);
  if (m_packed.rows() != n * n || v.rows() != n || v.cols() != m_packed.cols()) {
    throw std::invalid_argument("ad::packed_matvec: shape mismatch");
  }
  const Eigen::Index cols = v.cols();
  const Mat& mp = m_packed.value();
  const Mat& vv = v.value();
  Mat out = Mat::Zero(n, cols);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.row(i).array() += mp.row(i * n + j).array() * vv.row(j).array();
  const int im = m_packed.id, iv = v.id;
  return v.tape->push(std::move(out), {m_packed, v}, [im, iv, n](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    if (t.requires_grad(im)) {
      const Mat& vv2 = t.value(iv);
      Mat gm(n * n, g.cols());
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) gm.row(i * n + j) = g.row(i).cwiseProduct(vv2.row(j));
      t.accumulate(im, gm);
    }
    if (t.requires_grad(iv)) {
      const Mat& mp2 = t.value(im);
      Mat gv = Mat::Zero(n, g.cols());
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) gv.row(j).array() += mp2.row(i * n + j).array() * g.row(i).array();
      t.accumulate(iv, gv);
    }
  });
}

Var packed_quad(Var m_packed, Var v, int n) {
  require_same_tape(m_packed, v);
  if (m_packed.rows() != n * n || v.rows() != n || v.cols() != m_packed.cols()) {
    throw std::invalid_argument("ad::packed_quad: shape mismatch");
  }
  const Mat& mp = m_packed.value();
  const Mat& vv = v.value();
  Mat out = Mat::Zero(1, v.cols());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out.row(0).array() += vv.row(i).array() * mp.row(i * n + j).array() * vv.row(j).array();
  const int im = m_packed.id, iv = v.id;
  return v.tape->push(std::move(out), {m_packed, v}, [im, iv, n](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    const Mat& vv2 = t.value(iv);
    const Mat& mp2 = t.value(im);
    if (t.requires_grad(im)) {
      Mat gm(n * n, g.cols());
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          gm.row(i * n + j) = g.row(0).cwiseProduct(vv2.row(i)).cwiseProduct(vv2.row(j));
      t.accumulate(im, gm);
    }
    if (t.requires_grad(iv)) {
      Mat gv = Mat::Zero(n, g.cols());
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const auto mij = mp2.row(i * n + j).array();
          gv.row(i).array() += g.row(0).array() * mij * vv2.row(j).array();
          gv.row(j).array() += g.row(0).array() * mij * vv2.row(i).array();
        }
      t.accumulate(iv, gv);
    }
  });
}

Var packed_spd_solve(Var m_packed, Var b, int n, double max_condition,
                     std::vector<Eigen::Index>* singular_columns) {
  require_same_tape(m_packed, b);
  if (m_packed.rows() != n * n || b.rows() != n || b.cols() != m_packed.cols()) {
    throw std::invalid_argument("ad::packed_spd_solve: shape mismatch");
  }
  const Eigen::Index cols = b.cols();
  const Mat& mp = m_packed.value();
  const Mat& bv = b.value();
  Mat inv(n * n, cols);
  Mat out(n, cols);
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index c = 0; c < cols; ++c) {
    bool ok = true;
    Mat minv(n, n);
    if (n == 1) {
      const double m = mp(0, c);
      ok = std::isfinite(m) && m > 0.0;
      minv(0, 0) = 1.0 / m;
    } else if (n == 2) {
      const double a = mp(0, c), off = 0.5 * (mp(1, c) + mp(2, c)), d = mp(3, c);
      const double det = a * d - off * off;
      const double tr = a + d;
      const double disc = std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
      const double lmax = 0.5 * tr + disc, lmin = 0.5 * tr - disc;
      ok = std::isfinite(det) && a > 0.0 && det > 0.0 && lmin > 0.0 && lmax / lmin <= max_condition;
      minv << d / det, -off / det, -off / det, a / det;
    } else {
      Mat m = unpack(mp, c, n);
      m = 0.5 * (m + m.transpose());
      Eigen::SelfAdjointEigenSolver<Mat> es(m);
      const double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
      ok = es.info() == Eigen::Success && lmin > 0.0 && lmax / lmin <= max_condition;
      if (ok) minv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    }
    if (!ok) {
      if (singular_columns) singular_columns->push_back(c);
      out.col(c).setConstant(nan);
      inv.col(c).setZero();
      continue;
    }
    pack_into(inv, c, minv, n);
    out.col(c) = minv * bv.col(c);
  }
  const int im = m_packed.id, ib = b.id;
  return b.tape->push(out, {m_packed, b}, [im, ib, n, inv](Tape& t, int self) {
    const Mat& g = t.adjoint(self);
    const Mat& y = t.value(self);
    Mat gb(n, g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) gb.col(c) = unpack(inv, c, n) * g.col(c);
    if (t.requires_grad(im)) {
      Mat gm(n * n, g.cols());
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        const bool finite = y.col(c).allFinite();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            gm(i * n + j, c) = finite ? -0.5 * (gb(i, c) * y(j, c) + gb(j, c) * y(i, c)) : 0.0;
      }
      t.accumulate(im, gm);
    }
    t.accumulate(ib, gb);
  });
}

}  // namespace lagid::ad
