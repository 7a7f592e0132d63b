#pragma once

// Reverse-mode automatic differentiation over a tape of matrix-valued nodes.
//
// Every node holds an Eigen matrix. Batched quantities put the batch index in
// the columns, so a state of an n-DOF system evaluated on B samples is a
// (2n x B) node. Ops record a closure that pulls the node's adjoint back to
// its parents; derivatives of derivatives are obtained by writing the first
// derivative explicitly with tape ops (tangent propagation) and reversing
// through those ops.

#include <Eigen/Dense>

#include <functional>
#include <utility>
#include <vector>

namespace lagid::ad {

using Mat = Eigen::MatrixXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  /// A tape with `record == false` only computes values; no closures are kept
  /// and `backward` is unavailable.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat value, bool requires_grad = true);
  Var constant(Mat value);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Backpropagates from a 1x1 node with seed 1.
  void backward(Var root);
  /// Backpropagates from several nodes with explicit adjoint seeds.
  void backward(const std::vector<std::pair<Var, Mat>>& seeds);

  /// Adjoint of a node after `backward`; zeros when the node was not reached.
  Mat grad(Var v) const;
  bool has_grad(Var v) const;

  /// Adjoint of node `id` as seen from inside a backward closure.
  const Mat& adjoint(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Appends a node. `fn` is dropped when no parent requires a gradient.
  Var push(Mat value, std::initializer_list<Var> parents, BackwardFn fn);
  Var push(Mat value, const std::vector<Var>& parents, BackwardFn fn);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void run_backward();

  std::vector<Node> nodes_;
  bool record_;
};

inline const Mat& Var::value() const { return tape->value(id); }

// Elementwise and structural ops. Shapes follow Eigen conventions; binary
// elementwise ops require equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var cmul(Var a, Var b);
Var square(Var a);
Var cube(Var a);
Var sin(Var a);
Var cos(Var a);
Var exp(Var a);
Var sqrt(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
/// softplus(a) and its slope sigmoid(a) from one exponential.
std::pair<Var, Var> softplus_with_slope(Var a);
Var tanh(Var a);
Var mul_const(Var a, const Mat& m);  // a ⊙ m with constant m

/// Multiplies every row of `x` (r x B) elementwise by the row vector `s` (1 x B).
Var mul_rows(Var x, Var s);
/// Multiplies `x` by the 1x1 node `s`.
Var scale_by(Var s, Var x);
/// Multiplies column j of `x` by the constant h(j).
Var mul_cols_const(Var x, const Eigen::RowVectorXd& h);
Var matmul(Var w, Var x);
/// x (m x B) plus the column vector b (m x 1) on every column.
Var add_bias(Var x, Var b);
/// Repeats the column vector v (r x 1) into r x cols.
Var broadcast_cols(Var v, Eigen::Index cols);

Var row(Var a, Eigen::Index i);
Var rows(Var a, Eigen::Index start, Eigen::Index count);
Var vstack(const std::vector<Var>& parts);
Var gather_cols(Var a, const std::vector<Eigen::Index>& cols);

Var sum_all(Var a);
Var sum_rows(Var a);  // r x B -> 1 x B
Var mean_all(Var a);
Var squared_norm(Var a);
/// Σ coeffs[i]·vars[i]; all vars share one shape.
Var lincomb(const std::vector<double>& coeffs, const std::vector<Var>& vars);

// Batched small-matrix ops. A "packed" matrix node has n*n rows holding the
// row-major entries of one n x n matrix per column.
Var packed_llt(Var l_packed, int n);                 // L Lᵀ
Var packed_sym_outer(Var a_packed, Var b_packed, int n);  // A Bᵀ + B Aᵀ
Var packed_matvec(Var m_packed, Var v, int n);       // M v
Var packed_quad(Var m_packed, Var v, int n);         // vᵀ M v  (1 x B)
/// Solves M y = b per column for symmetric positive-definite M. Columns whose
/// matrix is not SPD or whose condition number exceeds `max_condition` yield
/// NaN and are reported through `singular_columns` when non-null.
Var packed_spd_solve(Var m_packed, Var b, int n, double max_condition = 1e12,
                     std::vector<Eigen::Index>* singular_columns = nullptr);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }

}  // namespace lagid::ad
