#pragma once

#include "lagid/ad.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace lagid {

/// One named, contiguous block of a flat parameter vector, viewed as a
/// column-major rows x cols matrix.
struct ParameterBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
};

/// Flat trainable parameters with named sub-ranges. Blocks partition
/// [0, size()) in declaration order.
class ParameterVector {
 public:
  ParameterVector() = default;

  /// Appends a zero-initialised block and returns its index.
  std::size_t add_block(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  const std::vector<ParameterBlock>& blocks() const { return blocks_; }
  const ParameterBlock& block(std::size_t i) const { return blocks_.at(i); }
  /// Index of the block called `name`; throws when absent.
  std::size_t find(const std::string& name) const;
  bool contains(const std::string& name) const;

  Eigen::Index size() const { return values_.size(); }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }
  void set_values(const Eigen::VectorXd& v);

  Eigen::MatrixXd block_matrix(std::size_t i) const;
  void set_block_matrix(std::size_t i, const Eigen::MatrixXd& m);

  /// Index ranges covering every block whose name starts with `prefix`.
  std::vector<std::size_t> blocks_with_prefix(const std::string& prefix) const;

 private:
  std::vector<ParameterBlock> blocks_;
  Eigen::VectorXd values_;
};

/// Parameter blocks bound as leaves of a tape.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(ad::Tape& tape, const ParameterVector& params, bool requires_grad);

  ad::Var operator[](std::size_t block) const { return leaves_.at(block); }
  std::size_t size() const { return leaves_.size(); }

  /// Flat gradient assembled from the leaf adjoints after `Tape::backward`.
  Eigen::VectorXd gradient(const ad::Tape& tape) const;

 private:
  const ParameterVector* params_ = nullptr;
  std::vector<ad::Var> leaves_;
};

}  // namespace lagid
