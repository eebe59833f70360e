#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "monde/params.hpp"

namespace monde {

/// Elementwise non-linearities understood by the graph. `log_clamped` is only
/// used for loss construction.
enum class Activation : std::uint8_t {
  identity,
  tanh,
  sigmoid,
  scaled_tanh01,
  softplus,
  log_clamped,
};

std::string activation_name(Activation act);
Activation activation_from_name(const std::string& name);

/// Highest derivative order any activation can supply.
inline constexpr int kMaxDerivativeOrder = 5;

/// Lower clamp applied to densities before taking logs.
inline constexpr double kDensityFloor = 1e-12;

double sigmoid(double x);
double scaled_tanh01(double z);
/// log(1 + exp(x)) evaluated as log1p(exp(-|x|)) + max(x, 0).
double softplus_stable(double x);

/// Writes f, f', ..., f^(max_order) of `act` evaluated at every entry of `x`
/// into `out` (resized to max_order + 1).
void activation_derivatives(Activation act, const Eigen::ArrayXXd& x, int max_order,
                            std::vector<Eigen::ArrayXXd>& out);

/// Dense layer `activation(input * W + b)` whose weight entries carry
/// free/nonneg/zero constraints. Parameters live in a ParamStore; the layer
/// only records where.
struct ConstrainedLinear {
  std::string name;
  Eigen::Index in_dim = 0;
  Eigen::Index out_dim = 0;
  std::size_t weight_block = 0;  // in_dim x out_dim
  std::size_t bias_block = 0;    // out_dim x 1, always free
  Activation activation = Activation::identity;

  /// Registers weight and bias blocks in `store` and returns the layer.
  static ConstrainedLinear create(ParamStore& store, std::string name, Eigen::Index in_dim,
                                  Eigen::Index out_dim, std::vector<WeightTag> tags,
                                  Activation activation);
};

/// Uniform tag vector for an in_dim x out_dim weight.
std::vector<WeightTag> uniform_tags(Eigen::Index in_dim, Eigen::Index out_dim, WeightTag tag);

/// Tags for a layer whose input is the row-wise concatenation of groups, each
/// group carrying one tag for all its rows.
std::vector<WeightTag> stacked_tags(const std::vector<std::pair<Eigen::Index, WeightTag>>& groups,
                                    Eigen::Index out_dim);

/// Applies the layer to a batch (one observation per row).
Eigen::MatrixXd linear_apply(const ParamStore& store, const ConstrainedLinear& layer,
                             const Eigen::MatrixXd& input);

/// Glorot-uniform initialization of every block referenced by `layers`;
/// nonneg entries are halved, biases and masked entries set to zero.
void init_layers(ParamStore& store, const std::vector<ConstrainedLinear>& layers,
                 std::mt19937_64& rng);

/// MADE-style masks for the autoregressive estimator. Rows index inputs,
/// columns index outputs (the layer computes input * W).
struct MadeMaskSet {
  int covariates = 0;  // D
  int responses = 0;   // K
  int blocks = 0;      // M
  std::vector<WeightTag> input;   // (D+K) x KM, column-major
  std::vector<WeightTag> hidden;  // KM x KM
  std::vector<WeightTag> output;  // KM x K

  WeightTag input_at(int row, int col) const;
  WeightTag hidden_at(int row, int col) const;
  WeightTag output_at(int row, int col) const;
};

MadeMaskSet build_made_masks(int covariates, int responses, int blocks);

}  // namespace monde
