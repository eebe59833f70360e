#include "monde/layers.hpp"

#include <array>
#include <cmath>

#include "monde/errors.hpp"

namespace monde {

namespace {

// Coefficients (ascending powers) of the polynomial P_n with
// d^n/dx^n g(x) = P_n(g(x)), built from P_{n+1}(u) = P_n'(u) * q(u).
using Poly = std::vector<double>;

Poly derive_times(const Poly& p, const Poly& q) {
  Poly dp;
  for (std::size_t i = 1; i < p.size(); ++i) dp.push_back(static_cast<double>(i) * p[i]);
  if (dp.empty()) return {0.0};
  Poly out(dp.size() + q.size() - 1, 0.0);
  for (std::size_t i = 0; i < dp.size(); ++i) {
    for (std::size_t j = 0; j < q.size(); ++j) out[i + j] += dp[i] * q[j];
  }
  return out;
}

std::array<Poly, kMaxDerivativeOrder + 2> derivative_polys(const Poly& chain) {
  std::array<Poly, kMaxDerivativeOrder + 2> polys;
  polys[0] = {0.0, 1.0};
  for (int n = 1; n <= kMaxDerivativeOrder + 1; ++n) polys[n] = derive_times(polys[n - 1], chain);
  return polys;
}

// sigma' = sigma - sigma^2, tanh' = 1 - tanh^2
const auto& sigmoid_polys() {
  static const auto polys = derivative_polys({0.0, 1.0, -1.0});
  return polys;
}

const auto& tanh_polys() {
  static const auto polys = derivative_polys({1.0, 0.0, -1.0});
  return polys;
}

Eigen::ArrayXXd horner(const Poly& p, const Eigen::ArrayXXd& u) {
  Eigen::ArrayXXd acc = Eigen::ArrayXXd::Constant(u.rows(), u.cols(), p.back());
  for (std::size_t i = p.size() - 1; i-- > 0;) acc = acc * u + p[i];
  return acc;
}

Eigen::ArrayXXd sigmoid_array(const Eigen::ArrayXXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

}  // namespace

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::identity:
      return "identity";
    case Activation::tanh:
      return "tanh";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::scaled_tanh01:
      return "scaled-tanh01";
    case Activation::softplus:
      return "softplus";
    case Activation::log_clamped:
      return "log";
  }
  return "unknown";
}

Activation activation_from_name(const std::string& name) {
  for (auto act : {Activation::identity, Activation::tanh, Activation::sigmoid,
                   Activation::scaled_tanh01, Activation::softplus, Activation::log_clamped}) {
    if (activation_name(act) == name) return act;
  }
  throw FormatError("unknown activation " + name);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double scaled_tanh01(double z) { return 0.5 * (std::tanh(z) + 1.0); }

double softplus_stable(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

void activation_derivatives(Activation act, const Eigen::ArrayXXd& x, int max_order,
                            std::vector<Eigen::ArrayXXd>& out) {
  if (max_order < 0 || max_order > kMaxDerivativeOrder + 1) {
    throw UnsupportedOp("derivative order " + std::to_string(max_order) + " not available");
  }
  out.resize(static_cast<std::size_t>(max_order) + 1);
  switch (act) {
    case Activation::identity:
      out[0] = x;
      for (int n = 1; n <= max_order; ++n) {
        out[n] = Eigen::ArrayXXd::Constant(x.rows(), x.cols(), n == 1 ? 1.0 : 0.0);
      }
      return;
    case Activation::sigmoid: {
      const Eigen::ArrayXXd s = sigmoid_array(x);
      out[0] = s;
      for (int n = 1; n <= max_order; ++n) out[n] = horner(sigmoid_polys()[n], s);
      return;
    }
    case Activation::tanh:
    case Activation::scaled_tanh01: {
      const Eigen::ArrayXXd t = x.tanh();
      const double scale = act == Activation::tanh ? 1.0 : 0.5;
      out[0] = act == Activation::tanh ? t : Eigen::ArrayXXd(0.5 * (t + 1.0));
      for (int n = 1; n <= max_order; ++n) out[n] = scale * horner(tanh_polys()[n], t);
      return;
    }
    case Activation::softplus: {
      out[0] = x.unaryExpr([](double v) { return softplus_stable(v); });
      if (max_order == 0) return;
      const Eigen::ArrayXXd s = sigmoid_array(x);
      out[1] = s;
      for (int n = 2; n <= max_order; ++n) out[n] = horner(sigmoid_polys()[n - 1], s);
      return;
    }
    case Activation::log_clamped: {
      const Eigen::ArrayXXd clamped = x.max(kDensityFloor);
      const Eigen::ArrayXXd active = (x >= kDensityFloor).cast<double>();
      out[0] = clamped.log();
      Eigen::ArrayXXd inv_pow = active;
      double factorial = 1.0;
      for (int n = 1; n <= max_order; ++n) {
        inv_pow = inv_pow / clamped;
        if (n > 1) factorial *= static_cast<double>(n - 1);
        out[n] = ((n % 2 == 1) ? factorial : -factorial) * inv_pow;
      }
      return;
    }
  }
}

ConstrainedLinear ConstrainedLinear::create(ParamStore& store, std::string name,
                                            Eigen::Index in_dim, Eigen::Index out_dim,
                                            std::vector<WeightTag> tags, Activation activation) {
  if (in_dim <= 0 || out_dim <= 0) throw InvalidDim("layer " + name + " has an empty shape");
  ConstrainedLinear layer;
  layer.name = name;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.activation = activation;
  layer.weight_block = store.add_block(name + ".weight", in_dim, out_dim, std::move(tags));
  layer.bias_block = store.add_block(name + ".bias", out_dim, 1);
  return layer;
}

std::vector<WeightTag> uniform_tags(Eigen::Index in_dim, Eigen::Index out_dim, WeightTag tag) {
  return std::vector<WeightTag>(static_cast<std::size_t>(in_dim * out_dim), tag);
}

std::vector<WeightTag> stacked_tags(const std::vector<std::pair<Eigen::Index, WeightTag>>& groups,
                                    Eigen::Index out_dim) {
  Eigen::Index in_dim = 0;
  for (const auto& g : groups) in_dim += g.first;
  std::vector<WeightTag> tags(static_cast<std::size_t>(in_dim * out_dim));
  for (Eigen::Index c = 0; c < out_dim; ++c) {
    Eigen::Index r = 0;
    for (const auto& [rows, tag] : groups) {
      for (Eigen::Index i = 0; i < rows; ++i, ++r) tags[static_cast<std::size_t>(c * in_dim + r)] = tag;
    }
  }
  return tags;
}

Eigen::MatrixXd linear_apply(const ParamStore& store, const ConstrainedLinear& layer,
                             const Eigen::MatrixXd& input) {
  if (input.cols() != layer.in_dim) {
    throw ShapeMismatch("layer " + layer.name + " expects " + std::to_string(layer.in_dim) +
                        " inputs, got " + std::to_string(input.cols()));
  }
  Eigen::MatrixXd z = input * store.effective(layer.weight_block);
  z.rowwise() += store.free_matrix(layer.bias_block).col(0).transpose();
  std::vector<Eigen::ArrayXXd> d;
  activation_derivatives(layer.activation, z.array(), 0, d);
  return d[0].matrix();
}

void init_layers(ParamStore& store, const std::vector<ConstrainedLinear>& layers,
                 std::mt19937_64& rng) {
  for (const auto& layer : layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in_dim + layer.out_dim));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const auto& block = store.block(layer.weight_block);
    auto w = store.free_matrix(layer.weight_block);
    double* data = w.data();
    for (std::size_t i = 0; i < block.size(); ++i) {
      const double v = dist(rng);
      switch (block.tags[i]) {
        case WeightTag::free:
          data[i] = v;
          break;
        case WeightTag::nonneg:
          data[i] = 0.5 * v;
          break;
        case WeightTag::zero:
          data[i] = 0.0;
          break;
      }
    }
    store.free_matrix(layer.bias_block).setZero();
  }
}

namespace {

WeightTag autoregressive_tag(int k_in, int k_out) {
  if (k_in == k_out) return WeightTag::nonneg;
  return k_in < k_out ? WeightTag::free : WeightTag::zero;
}

}  // namespace

WeightTag MadeMaskSet::input_at(int row, int col) const {
  const int rows = covariates + responses;
  return input[static_cast<std::size_t>(col * rows + row)];
}

WeightTag MadeMaskSet::hidden_at(int row, int col) const {
  const int rows = responses * blocks;
  return hidden[static_cast<std::size_t>(col * rows + row)];
}

WeightTag MadeMaskSet::output_at(int row, int col) const {
  const int rows = responses * blocks;
  return output[static_cast<std::size_t>(col * rows + row)];
}

MadeMaskSet build_made_masks(int covariates, int responses, int blocks) {
  if (covariates < 0) throw InvalidDim("covariate dimension must be >= 0");
  if (responses < 1) throw InvalidDim("response dimension must be >= 1");
  if (blocks < 1) throw InvalidDim("vectors per hidden layer must be >= 1");
  MadeMaskSet masks;
  masks.covariates = covariates;
  masks.responses = responses;
  masks.blocks = blocks;
  const int K = responses;
  const int width = K * blocks;
  const int in_rows = covariates + K;

  // Column c of a hidden layer belongs to response index c % K.
  masks.input.resize(static_cast<std::size_t>(in_rows * width));
  for (int c = 0; c < width; ++c) {
    for (int r = 0; r < in_rows; ++r) {
      masks.input[static_cast<std::size_t>(c * in_rows + r)] =
          r < covariates ? WeightTag::free : autoregressive_tag(r - covariates, c % K);
    }
  }
  masks.hidden.resize(static_cast<std::size_t>(width * width));
  for (int c = 0; c < width; ++c) {
    for (int r = 0; r < width; ++r) {
      masks.hidden[static_cast<std::size_t>(c * width + r)] = autoregressive_tag(r % K, c % K);
    }
  }
  masks.output.resize(static_cast<std::size_t>(width * K));
  for (int c = 0; c < K; ++c) {
    for (int r = 0; r < width; ++r) {
      masks.output[static_cast<std::size_t>(c * width + r)] = autoregressive_tag(r % K, c);
    }
  }
  return masks;
}

}  // namespace monde
