#include "lagid/parameters.hpp"

#include <stdexcept>

namespace lagid {

std::size_t ParameterVector::add_block(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("parameter block '" + name + "' has zero size");
  if (contains(name)) throw std::invalid_argument("duplicate parameter block '" + name + "'");
  ParameterBlock b{name, values_.size(), rows, cols};
  blocks_.push_back(b);
  Eigen::VectorXd grown = Eigen::VectorXd::Zero(values_.size() + b.size());
  grown.head(values_.size()) = values_;
  values_ = std::move(grown);
  return blocks_.size() - 1;
}

std::size_t ParameterVector::find(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return i;
  }
  throw std::out_of_range("no parameter block named '" + name + "'");
}

bool ParameterVector::contains(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return true;
  }
  return false;
}

void ParameterVector::set_values(const Eigen::VectorXd& v) {
  if (v.size() != values_.size()) throw std::invalid_argument("parameter vector size mismatch");
  values_ = v;
}

Eigen::MatrixXd ParameterVector::block_matrix(std::size_t i) const {
  const ParameterBlock& b = blocks_.at(i);
  return Eigen::Map<const Eigen::MatrixXd>(values_.data() + b.offset, b.rows, b.cols);
}

void ParameterVector::set_block_matrix(std::size_t i, const Eigen::MatrixXd& m) {
  const ParameterBlock& b = blocks_.at(i);
  if (m.rows() != b.rows || m.cols() != b.cols) throw std::invalid_argument("block shape mismatch");
  Eigen::Map<Eigen::MatrixXd>(values_.data() + b.offset, b.rows, b.cols) = m;
}

std::vector<std::size_t> ParameterVector::blocks_with_prefix(const std::string& prefix) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name.rfind(prefix, 0) == 0) out.push_back(i);
  }
  return out;
}

BoundParams::BoundParams(ad::Tape& tape, const ParameterVector& params, bool requires_grad)
    : params_(&params) {
  leaves_.reserve(params.blocks().size());
  for (std::size_t i = 0; i < params.blocks().size(); ++i) {
    leaves_.push_back(tape.leaf(params.block_matrix(i), requires_grad));
  }
}

Eigen::VectorXd BoundParams::gradient(const ad::Tape& tape) const {
  if (!params_) return {};
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params_->size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const ParameterBlock& b = params_->block(i);
    const Eigen::MatrixXd gi = tape.grad(leaves_[i]);
    g.segment(b.offset, b.size()) = Eigen::Map<const Eigen::VectorXd>(gi.data(), gi.size());
  }
  return g;
}

}  // namespace lagid
