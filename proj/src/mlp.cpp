#include "lagid/mlp.hpp"

#include "lagid/errors.hpp"

#include <cmath>
#include <tuple>

namespace lagid {

Mlp::Mlp(std::string name, int inputs, std::vector<int> hidden, int outputs)
    : name_(std::move(name)), inputs_(inputs), outputs_(outputs), hidden_(std::move(hidden)) {
  if (inputs_ <= 0 || outputs_ <= 0) throw ConfigError("network '" + name_ + "' needs positive input and output widths");
  for (int w : hidden_) {
    if (w <= 0) throw ConfigError("network '" + name_ + "' has a zero-width hidden layer");
  }
}

void Mlp::register_parameters(ParameterVector& params) {
  weight_blocks_.clear();
  bias_blocks_.clear();
  int fan_in = inputs_;
  for (std::size_t l = 0; l <= hidden_.size(); ++l) {
    const int width = l < hidden_.size() ? hidden_[l] : outputs_;
    weight_blocks_.push_back(params.add_block(name_ + ".W" + std::to_string(l), width, fan_in));
    bias_blocks_.push_back(params.add_block(name_ + ".b" + std::to_string(l), width, 1));
    fan_in = width;
  }
}

void Mlp::initialize(ParameterVector& params, Rng& rng, bool zero_output) const {
  for (std::size_t l = 0; l < weight_blocks_.size(); ++l) {
    const ParameterBlock& wb = params.block(weight_blocks_[l]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(wb.cols));
    Eigen::MatrixXd w(wb.rows, wb.cols);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
    Eigen::MatrixXd b(wb.rows, 1);
    for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, 0) = rng.uniform(-bound, bound);
    params.set_block_matrix(weight_blocks_[l], w);
    params.set_block_matrix(bias_blocks_[l], b);
  }
  if (zero_output) zero_output_layer(params);
}

void Mlp::zero_output_layer(ParameterVector& params) const {
  const std::size_t w = weight_blocks_.back();
  const std::size_t b = bias_blocks_.back();
  params.set_block_matrix(w, Eigen::MatrixXd::Zero(params.block(w).rows, params.block(w).cols));
  params.set_block_matrix(b, Eigen::MatrixXd::Zero(params.block(b).rows, 1));
}

ad::Var Mlp::forward(const BoundParams& params, ad::Var x) const {
  if (x.rows() != inputs_) throw ContractViolation("network '" + name_ + "' received input of wrong height");
  ad::Var h = x;
  for (std::size_t l = 0; l < weight_blocks_.size(); ++l) {
    ad::Var z = ad::add_bias(ad::matmul(params[weight_blocks_[l]], h), params[bias_blocks_[l]]);
    h = l + 1 < weight_blocks_.size() ? ad::softplus(z) : z;
  }
  return h;
}

Mlp::Jet Mlp::forward_jet(const BoundParams& params, ad::Var x, const std::vector<ad::Var>& dx) const {
  if (x.rows() != inputs_) throw ContractViolation("network '" + name_ + "' received input of wrong height");
  Jet jet;
  jet.value = x;
  jet.tangents = dx;
  for (std::size_t l = 0; l < weight_blocks_.size(); ++l) {
    ad::Var w = params[weight_blocks_[l]];
    ad::Var z = ad::add_bias(ad::matmul(w, jet.value), params[bias_blocks_[l]]);
    const bool last = l + 1 == weight_blocks_.size();
    ad::Var slope;
    if (last) {
      jet.value = z;
    } else {
      std::tie(jet.value, slope) = ad::softplus_with_slope(z);
    }
    for (ad::Var& t : jet.tangents) {
      t = ad::matmul(w, t);
      if (!last) t = ad::cmul(slope, t);
    }
  }
  return jet;
}

}  // namespace lagid
