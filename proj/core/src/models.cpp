#include "monde/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "monde/errors.hpp"
#include "monde/gaussian.hpp"

namespace monde {

namespace {

constexpr Eigen::Index kChunkRows = 2048;

using Seeds = std::vector<std::pair<int, Eigen::RowVectorXd>>;

Seeds seed_direction(int direction) { return {{direction, Eigen::RowVectorXd::Ones(1)}}; }

// Evaluates `f` on consecutive row blocks and stacks the results.
template <class F>
LogLikelihood chunked(Eigen::Index n, F&& f) {
  LogLikelihood out;
  out.rows.resize(n);
  for (Eigen::Index begin = 0; begin < n; begin += kChunkRows) {
    const Eigen::Index len = std::min(kChunkRows, n - begin);
    LogLikelihood part = f(begin, len);
    out.rows.segment(begin, len) = part.rows;
    out.clamped += part.clamped;
  }
  return out;
}

template <class F>
Eigen::VectorXd chunked_values(Eigen::Index n, F&& f) {
  Eigen::VectorXd out(n);
  for (Eigen::Index begin = 0; begin < n; begin += kChunkRows) {
    const Eigen::Index len = std::min(kChunkRows, n - begin);
    out.segment(begin, len) = f(begin, len);
  }
  return out;
}

void check_response(int i, int K) {
  if (i < 0 || i >= K) throw InvalidDim("response index " + std::to_string(i) + " out of range");
}

void check_pair(int i, int j, int K) {
  check_response(i, K);
  check_response(j, K);
  if (i == j) throw InvalidDim("pair indices must differ");
}

void check_widths(const std::vector<int>& widths, const char* what) {
  for (int w : widths) {
    if (w < 1) throw InvalidDim(std::string(what) + " widths must be positive");
  }
}

double clamp_cdf(double F) { return std::clamp(F, kCdfClamp, 1.0 - kCdfClamp); }

}  // namespace

// ------------------------------------------------------------------ families

std::string family_name(Family family) {
  switch (family) {
    case Family::umonde:
      return "umonde";
    case Family::monde_made:
      return "monde-made";
    case Family::copula_const:
      return "copula-const";
    case Family::copula_param:
      return "copula-param";
    case Family::pumonde:
      return "pumonde";
  }
  return "unknown";
}

Family family_from_name(const std::string& name, const std::string& field) {
  for (auto f : {Family::umonde, Family::monde_made, Family::copula_const, Family::copula_param,
                 Family::pumonde}) {
    if (family_name(f) == name) return f;
  }
  throw UnknownFamily(field, "unknown model family '" + name + "'");
}

void ModelSpec::validate() const {
  if (covariates < 0) throw InvalidDim("covariate dimension must be >= 0");
  if (responses < 1) throw InvalidDim("response dimension must be >= 1");
  check_widths(x_widths, "covariate tower");
  check_widths(y_widths, "monotone tower");
  check_widths(corr_widths, "correlation network");
  check_widths(hx_widths, "covariate unit");
  check_widths(hxy_widths, "response unit");
  check_widths(t_widths, "output tower");
  switch (family) {
    case Family::umonde:
      if (responses != 1) throw InvalidDim("univariate MONDE needs exactly one response");
      if (y_widths.empty()) throw InvalidDim("monotone tower needs at least one layer");
      break;
    case Family::monde_made:
      if (made_blocks < 1) throw InvalidDim("vectors per hidden layer must be >= 1");
      if (made_layers < 1) throw InvalidDim("MONDE-MADE needs at least one hidden layer");
      break;
    case Family::copula_const:
    case Family::copula_param:
      if (responses < 2) throw InvalidDim("copula models need at least two responses");
      if (y_widths.empty()) throw InvalidDim("monotone tower needs at least one layer");
      break;
    case Family::pumonde:
      if (responses < 2) throw InvalidDim("PUMONDE needs at least two responses");
      if (hxy_widths.empty()) throw InvalidDim("response units need at least one layer");
      break;
  }
}

double Standardization::log_sd_sum() const { return empty() ? 0.0 : y_sd.array().log().sum(); }

double Standardization::log_sd(int k) const { return empty() ? 0.0 : std::log(y_sd(k)); }

// -------------------------------------------------------------- DensityModel

DensityModel::DensityModel(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

void DensityModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  init_layers(params_, layers_, rng);
}

void DensityModel::prepare_epoch(const Eigen::MatrixXd&, const Eigen::MatrixXd&) {}
void DensityModel::finalize_training(const Eigen::MatrixXd&, const Eigen::MatrixXd&) {}

Eigen::VectorXd DensityModel::joint_cdf(const Eigen::MatrixXd&, const Eigen::MatrixXd&) const {
  throw UnsupportedOp(family_name(family()) + " does not provide a joint CDF");
}

Eigen::VectorXd DensityModel::marginal_cdf(const Eigen::MatrixXd&, const Eigen::VectorXd&, int) const {
  throw UnsupportedOp(family_name(family()) + " does not provide marginal CDFs");
}

Eigen::VectorXd DensityModel::marginal_logpdf(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                                              int) const {
  throw UnsupportedOp(family_name(family()) + " does not provide marginal densities");
}

Eigen::VectorXd DensityModel::pair_cdf(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                                       const Eigen::VectorXd&, int, int) const {
  throw UnsupportedOp(family_name(family()) + " does not provide bivariate marginals");
}

Eigen::VectorXd DensityModel::pair_logpdf(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                                          const Eigen::VectorXd&, int, int) const {
  throw UnsupportedOp(family_name(family()) + " does not provide bivariate marginals");
}

void DensityModel::set_extra_state(const Eigen::MatrixXd& state) {
  if (state.size() != 0) throw FormatError(family_name(family()) + " carries no extra state");
}

Eigen::MatrixXd DensityModel::covariate_input(const Eigen::MatrixXd& X) const {
  if (X.cols() != spec_.covariates) {
    throw ShapeMismatch("expected " + std::to_string(spec_.covariates) + " covariate columns, got " +
                        std::to_string(X.cols()));
  }
  if (spec_.covariates == 0) return Eigen::MatrixXd::Zero(X.rows(), 1);
  return X;
}

void DensityModel::check_shapes(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  if (Y.cols() != spec_.responses) {
    throw ShapeMismatch("expected " + std::to_string(spec_.responses) + " response columns, got " +
                        std::to_string(Y.cols()));
  }
  if (X.cols() != spec_.covariates) {
    throw ShapeMismatch("expected " + std::to_string(spec_.covariates) + " covariate columns, got " +
                        std::to_string(X.cols()));
  }
  if (X.rows() != Y.rows()) throw ShapeMismatch("X and Y differ in row count");
}

std::size_t DensityModel::add_layer(const std::string& name, Eigen::Index in, Eigen::Index out,
                                    std::vector<WeightTag> tags, Activation act) {
  layers_.push_back(ConstrainedLinear::create(params_, name, in, out, std::move(tags), act));
  return layers_.size() - 1;
}

std::vector<std::size_t> DensityModel::add_tower(const std::string& name, Eigen::Index in,
                                                 const std::vector<int>& widths, WeightTag tag,
                                                 Activation act) {
  std::vector<std::size_t> ids;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    ids.push_back(add_layer(name + "." + std::to_string(l), in, widths[l],
                            uniform_tags(in, widths[l], tag), act));
    in = widths[l];
  }
  return ids;
}

NodeId DensityModel::apply_tower(Graph& g, const std::vector<std::size_t>& tower, NodeId in) const {
  for (auto id : tower) in = g.dense(layers_[id], in);
  return in;
}

// ----------------------------------------------------------- UnivariateMonde

UnivariateMonde::UnivariateMonde(ModelSpec spec) : DensityModel(std::move(spec)) {
  if (spec_.family != Family::umonde) throw FamilyMismatch("spec is not a univariate MONDE");
  x_tower_ = add_tower("x", covariate_width(), spec_.x_widths, WeightTag::free, Activation::tanh);
  const Eigen::Index hx = spec_.x_widths.empty() ? covariate_width() : spec_.x_widths.back();
  Eigen::Index in = spec_.y_widths[0];
  y_tower_.push_back(add_layer("fuse", hx + 1, in,
                               stacked_tags({{hx, WeightTag::free}, {1, WeightTag::nonneg}}, in),
                               Activation::tanh));
  for (std::size_t l = 1; l < spec_.y_widths.size(); ++l) {
    const Eigen::Index out = spec_.y_widths[l];
    y_tower_.push_back(add_layer("mono." + std::to_string(l), in, out,
                                 uniform_tags(in, out, WeightTag::nonneg), Activation::tanh));
    in = out;
  }
  output_ = add_layer("out", in, 1, uniform_tags(in, 1, WeightTag::nonneg), Activation::sigmoid);
}

std::unique_ptr<DensityModel> UnivariateMonde::clone() const {
  return std::make_unique<UnivariateMonde>(*this);
}

NodeId UnivariateMonde::build(Graph& g, NodeId x, NodeId y) const {
  NodeId h = g.concat({apply_tower(g, x_tower_, x), y});
  h = apply_tower(g, y_tower_, h);
  return g.dense(layers_[output_], h);
}

Eigen::VectorXd UnivariateMonde::cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const {
  if (X.rows() != y.size()) throw ShapeMismatch("X and y differ in row count");
  const Eigen::MatrixXd Xc = covariate_input(X);
  return chunked_values(y.size(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_);
    const NodeId x_in = g.input(Xc.middleRows(b, n));
    const NodeId y_in = g.input(y.segment(b, n));
    auto out = build(g, x_in, y_in);
    return Eigen::VectorXd(g.value(out).col(0));
  });
}

LogLikelihood UnivariateMonde::logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const {
  if (X.rows() != y.size()) throw ShapeMismatch("X and y differ in row count");
  const Eigen::MatrixXd Xc = covariate_input(X);
  return chunked(y.size(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_, ChannelSet::first_order(1));
    const NodeId x_in = g.input(Xc.middleRows(b, n), {});
    const NodeId y_in = g.input(y.segment(b, n), seed_direction(0));
    auto out = build(g, x_in, y_in);
    auto lp = g.log(g.extract(out, 1));
    return LogLikelihood{g.value(lp).col(0), g.clamped_count()};
  });
}

LogLikelihood UnivariateMonde::log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  return logpdf(X, Y.col(0));
}

double UnivariateMonde::objective_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                           std::vector<double>& grad) const {
  check_shapes(X, Y);
  Graph g(params_, ChannelSet::first_order(1));
  const NodeId x_in = g.input(covariate_input(X), {});
  const NodeId y_in = g.input(Y, seed_direction(0));
  auto out = build(g, x_in, y_in);
  auto total = g.scale(g.sum(g.log(g.extract(out, 1))), 1.0 / static_cast<double>(Y.rows()));
  grad = g.backward_params(total, 1.0);
  return g.value(total)(0, 0);
}

Eigen::VectorXd UnivariateMonde::joint_cdf(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  return cdf(X, Y.col(0));
}

Eigen::VectorXd UnivariateMonde::marginal_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                              int i) const {
  check_response(i, 1);
  return cdf(X, y);
}

Eigen::VectorXd UnivariateMonde::marginal_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                                 int i) const {
  check_response(i, 1);
  return logpdf(X, y).rows;
}

// ----------------------------------------------------------------- MondeMade

MondeMade::MondeMade(ModelSpec spec) : DensityModel(std::move(spec)) {
  if (spec_.family != Family::monde_made) throw FamilyMismatch("spec is not a MONDE-MADE model");
  const int K = spec_.responses;
  masks_ = build_made_masks(covariate_width(), K, spec_.made_blocks);
  const Eigen::Index width = static_cast<Eigen::Index>(K) * spec_.made_blocks;
  stack_.push_back(add_layer("made.0", covariate_width() + K, width, masks_.input,
                             Activation::scaled_tanh01));
  for (int l = 1; l < spec_.made_layers; ++l) {
    stack_.push_back(
        add_layer("made." + std::to_string(l), width, width, masks_.hidden, Activation::scaled_tanh01));
  }
  stack_.push_back(add_layer("made.out", width, K, masks_.output, Activation::scaled_tanh01));
}

std::unique_ptr<DensityModel> MondeMade::clone() const { return std::make_unique<MondeMade>(*this); }

NodeId MondeMade::build(Graph& g, NodeId x, NodeId y) const {
  return apply_tower(g, stack_, g.concat({x, y}));
}

Eigen::MatrixXd MondeMade::cdfs(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  Graph g(params_);
  const NodeId x_in = g.input(covariate_input(X));
  const NodeId y_in = g.input(Y);
  return g.value(build(g, x_in, y_in));
}

namespace {

TangentRequest made_request(int K) {
  TangentRequest req;
  for (int k = 0; k < K; ++k) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(K);
    e(k) = 1.0;
    req.directions.push_back({1, e});
  }
  return req;
}

// Diagonal of the Jacobian: derivative of output k along e_{y_k}, one column per k.
NodeId made_densities(Graph& g, NodeId out, int K) {
  std::vector<NodeId> cols;
  for (int k = 0; k < K; ++k) cols.push_back(g.slice(g.extract(out, k + 1), k, 1));
  return g.concat(cols);
}

}  // namespace

TangentResult MondeMade::cdfs_with_tangents(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  GraphProgram prog = [this](Graph& g, std::span<const NodeId> in) { return build(g, in[0], in[1]); };
  return eval_with_tangents(params_, prog, std::vector<Eigen::MatrixXd>{covariate_input(X), Y},
                            made_request(spec_.responses));
}

LogLikelihood MondeMade::log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  const Eigen::MatrixXd Xc = covariate_input(X);
  const int K = spec_.responses;
  return chunked(Y.rows(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_, made_request(K));
    const NodeId x_in = g.input(Xc.middleRows(b, n));
    const NodeId y_in = g.input(Y.middleRows(b, n));
    auto out = build(g, x_in, y_in);
    auto lp = g.log(made_densities(g, out, K));
    return LogLikelihood{g.value(lp).rowwise().sum(), g.clamped_count()};
  });
}

double MondeMade::objective_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                     std::vector<double>& grad) const {
  check_shapes(X, Y);
  const int K = spec_.responses;
  Graph g(params_, made_request(K));
  const NodeId x_in = g.input(covariate_input(X));
  const NodeId y_in = g.input(Y);
  auto out = build(g, x_in, y_in);
  auto total = g.scale(g.sum(g.log(made_densities(g, out, K))), 1.0 / static_cast<double>(Y.rows()));
  grad = g.backward_params(total, 1.0);
  return g.value(total)(0, 0);
}

// --------------------------------------------------------------- CopulaMonde

CopulaMonde::CopulaMonde(ModelSpec spec) : DensityModel(std::move(spec)) {
  if (spec_.family != Family::copula_const && spec_.family != Family::copula_param) {
    throw FamilyMismatch("spec is not a copula model");
  }
  const int K = spec_.responses;
  x_tower_ = add_tower("x", covariate_width(), spec_.x_widths, WeightTag::free, Activation::tanh);
  const Eigen::Index hx = spec_.x_widths.empty() ? covariate_width() : spec_.x_widths.back();
  for (int k = 0; k < K; ++k) {
    const std::string name = "m" + std::to_string(k);
    Marginal m;
    m.x_part = add_tower(name + ".x", hx, spec_.y_widths, WeightTag::free, Activation::tanh);
    Eigen::Index in = 1;
    for (std::size_t l = 0; l < spec_.y_widths.size(); ++l) {
      const Eigen::Index out = spec_.y_widths[l];
      m.y_part.push_back(add_layer(
          name + ".y." + std::to_string(l), in + out, out,
          stacked_tags({{in, WeightTag::nonneg}, {out, WeightTag::free}}, out), Activation::tanh));
      in = out;
    }
    m.output = add_layer(name + ".out", 2 * in, 1,
                         stacked_tags({{in, WeightTag::nonneg}, {in, WeightTag::free}}, 1),
                         Activation::sigmoid);
    marginals_.push_back(std::move(m));
  }
  if (spec_.family == Family::copula_param) {
    corr_tower_ = add_tower("corr", covariate_width(), spec_.corr_widths, WeightTag::free, Activation::tanh);
    const Eigen::Index in = spec_.corr_widths.empty() ? covariate_width() : spec_.corr_widths.back();
    corr_head_ = add_layer("corr.head", in, 2 * K, {}, Activation::identity);
  }
  rho_ = Eigen::MatrixXd::Identity(K, K);
}

std::unique_ptr<DensityModel> CopulaMonde::clone() const { return std::make_unique<CopulaMonde>(*this); }

void CopulaMonde::set_correlation(const Eigen::MatrixXd& rho) {
  const int K = spec_.responses;
  if (rho.rows() != K || rho.cols() != K) throw ShapeMismatch("correlation matrix has the wrong size");
  rho_ = rho;
}

NodeId CopulaMonde::build_marginal(Graph& g, int k, NodeId hx, NodeId y) const {
  const auto& m = marginals_[static_cast<std::size_t>(k)];
  NodeId xp = hx;
  NodeId yp = y;
  for (std::size_t l = 0; l < m.y_part.size(); ++l) {
    xp = g.dense(layers_[m.x_part[l]], xp);
    yp = g.dense(layers_[m.y_part[l]], g.concat({yp, xp}));
  }
  return g.dense(layers_[m.output], g.concat({yp, xp}));
}

std::vector<NodeId> CopulaMonde::build_marginals(Graph& g, NodeId x, const Eigen::MatrixXd& Y,
                                                 const std::vector<int>& which, bool tangents) const {
  const NodeId hx = apply_tower(g, x_tower_, x);
  std::vector<NodeId> outs;
  for (int k : which) {
    auto y = g.input(Y.col(k), tangents ? seed_direction(k) : Seeds{});
    outs.push_back(build_marginal(g, k, hx, y));
  }
  return outs;
}

namespace {

std::vector<int> all_responses(int K) {
  std::vector<int> v(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) v[static_cast<std::size_t>(k)] = k;
  return v;
}

}  // namespace

Eigen::MatrixXd CopulaMonde::marginal_cdfs(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  const int K = spec_.responses;
  const Eigen::MatrixXd Xc = covariate_input(X);
  Eigen::MatrixXd F(Y.rows(), K);
  for (Eigen::Index b = 0; b < Y.rows(); b += kChunkRows) {
    const Eigen::Index n = std::min(kChunkRows, Y.rows() - b);
    Graph g(params_);
    auto outs = build_marginals(g, g.input(Xc.middleRows(b, n)), Y.middleRows(b, n), all_responses(K), false);
    for (int k = 0; k < K; ++k) F.block(b, k, n, 1) = g.value(outs[static_cast<std::size_t>(k)]);
  }
  return F;
}

Eigen::MatrixXd CopulaMonde::marginal_logpdfs(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                              long* clamped) const {
  check_shapes(X, Y);
  const int K = spec_.responses;
  const Eigen::MatrixXd Xc = covariate_input(X);
  Eigen::MatrixXd L(Y.rows(), K);
  long floored = 0;
  for (Eigen::Index b = 0; b < Y.rows(); b += kChunkRows) {
    const Eigen::Index n = std::min(kChunkRows, Y.rows() - b);
    Graph g(params_, ChannelSet::first_order(K));
    auto outs = build_marginals(g, g.input(Xc.middleRows(b, n)), Y.middleRows(b, n), all_responses(K), true);
    for (int k = 0; k < K; ++k) {
      L.block(b, k, n, 1) = g.value(g.log(g.extract(outs[static_cast<std::size_t>(k)], k + 1)));
    }
    floored += g.clamped_count();
  }
  if (clamped != nullptr) *clamped = floored;
  return L;
}

Eigen::MatrixXd CopulaMonde::correlation(const Eigen::RowVectorXd& x) const {
  if (constant_correlation()) return rho_;
  const int K = spec_.responses;
  Graph g(params_);
  const Eigen::MatrixXd xin = covariate_input(Eigen::MatrixXd(x));
  auto head = g.dense(layers_[corr_head_], apply_tower(g, corr_tower_, g.input(xin)));
  const Eigen::RowVectorXd h = g.value(head).row(0);
  Eigen::VectorXd u = h.head(K).transpose();
  Eigen::VectorXd d = h.tail(K).transpose().unaryExpr([](double v) { return softplus_stable(v); });
  return corr_from_lowrank(u, d);
}

Eigen::MatrixXd CopulaMonde::normal_scores(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  return marginal_cdfs(X, Y).unaryExpr([](double F) { return norm_ppf(clamp_cdf(F)); });
}

Eigen::MatrixXd CopulaMonde::fit_constant_correlation(const Eigen::MatrixXd& X,
                                                      const Eigen::MatrixXd& Y) const {
  return floor_correlation_eigenvalues(pearson_correlation(normal_scores(X, Y)));
}

LogLikelihood CopulaMonde::log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  LogLikelihood out;
  const Eigen::MatrixXd L = marginal_logpdfs(X, Y, &out.clamped);
  const Eigen::MatrixXd Z = normal_scores(X, Y);
  out.rows = L.rowwise().sum();
  for (Eigen::Index r = 0; r < Y.rows(); ++r) {
    const Eigen::MatrixXd rho = constant_correlation() ? rho_ : correlation(X.row(r));
    out.rows(r) += gauss_copula_logdensity(Z.row(r).transpose(), rho);
  }
  return out;
}

double CopulaMonde::objective_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                       std::vector<double>& grad) const {
  check_shapes(X, Y);
  const int K = spec_.responses;
  const Eigen::Index n = Y.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Graph g(params_, ChannelSet::first_order(K));
  auto x = g.input(covariate_input(X), {});
  auto outs = build_marginals(g, x, Y, all_responses(K), true);
  NodeId logf;
  for (int k = 0; k < K; ++k) {
    auto lp = g.log(g.extract(outs[static_cast<std::size_t>(k)], k + 1));
    logf = k == 0 ? lp : g.add(logf, lp);
  }
  const NodeId logf_total = g.sum(logf);

  NodeId u_node, d_node;
  if (!constant_correlation()) {
    auto head = g.dense(layers_[corr_head_], apply_tower(g, corr_tower_, x));
    u_node = g.slice(head, 0, K);
    d_node = g.activate(Activation::softplus, g.slice(head, K, K));
  }

  Eigen::MatrixXd dF = Eigen::MatrixXd::Zero(n, K);
  Eigen::MatrixXd du, dd;
  if (!constant_correlation()) {
    du.resize(n, K);
    dd.resize(n, K);
  }
  double logc_total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::VectorXd z(K), dzdF(K);
    for (int k = 0; k < K; ++k) {
      const double F = g.value(outs[static_cast<std::size_t>(k)])(r, 0);
      const double Fc = clamp_cdf(F);
      z(k) = norm_ppf(Fc);
      dzdF(k) = Fc == F ? 1.0 / norm_pdf(z(k)) : 0.0;
    }
    Eigen::MatrixXd rho;
    Eigen::VectorXd u, d;
    if (constant_correlation()) {
      rho = rho_;
    } else {
      u = g.value(u_node).row(r).transpose();
      d = g.value(d_node).row(r).transpose();
      rho = corr_from_lowrank(u, d);
    }
    const auto cg = gauss_copula_gradient(z, rho);
    logc_total += cg.log_density;
    dF.row(r) = (cg.dz.array() * dzdF.array()).matrix().transpose() * inv_n;
    if (!constant_correlation()) {
      Eigen::VectorXd gu, gd;
      corr_from_lowrank_backward(u, d, cg.drho, gu, gd);
      du.row(r) = gu.transpose() * inv_n;
      dd.row(r) = gd.transpose() * inv_n;
    }
  }

  std::vector<Seed> seeds;
  seeds.push_back({logf_total, 0, Eigen::MatrixXd::Constant(1, 1, inv_n)});
  for (int k = 0; k < K; ++k) seeds.push_back({outs[static_cast<std::size_t>(k)], 0, dF.col(k)});
  if (!constant_correlation()) {
    seeds.push_back({u_node, 0, du});
    seeds.push_back({d_node, 0, dd});
  }
  grad.assign(params_.size(), 0.0);
  g.backward(seeds, grad);
  return (g.value(logf_total)(0, 0) + logc_total) * inv_n;
}

void CopulaMonde::prepare_epoch(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (constant_correlation()) rho_ = fit_constant_correlation(X, Y);
}

void CopulaMonde::finalize_training(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (constant_correlation()) rho_ = fit_constant_correlation(X, Y);
}

Eigen::VectorXd CopulaMonde::joint_cdf(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  const Eigen::MatrixXd Z = normal_scores(X, Y);
  Eigen::VectorXd out(Y.rows());
  for (Eigen::Index r = 0; r < Y.rows(); ++r) {
    out(r) = mvn_cdf(Z.row(r).transpose(), constant_correlation() ? rho_ : correlation(X.row(r)));
  }
  return out;
}

Eigen::VectorXd CopulaMonde::marginal_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int i) const {
  check_response(i, spec_.responses);
  if (X.rows() != y.size()) throw ShapeMismatch("X and y differ in row count");
  const Eigen::MatrixXd Xc = covariate_input(X);
  return chunked_values(y.size(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_);
    auto hx = apply_tower(g, x_tower_, g.input(Xc.middleRows(b, n)));
    return Eigen::VectorXd(g.value(build_marginal(g, i, hx, g.input(y.segment(b, n)))).col(0));
  });
}

Eigen::VectorXd CopulaMonde::marginal_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                             int i) const {
  check_response(i, spec_.responses);
  if (X.rows() != y.size()) throw ShapeMismatch("X and y differ in row count");
  const Eigen::MatrixXd Xc = covariate_input(X);
  return chunked_values(y.size(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_, ChannelSet::first_order(1));
    auto hx = apply_tower(g, x_tower_, g.input(Xc.middleRows(b, n), {}));
    auto out = build_marginal(g, i, hx, g.input(y.segment(b, n), seed_direction(0)));
    return Eigen::VectorXd(g.value(g.log(g.extract(out, 1))).col(0));
  });
}

Eigen::VectorXd CopulaMonde::pair_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                                      const Eigen::VectorXd& yj, int i, int j) const {
  check_pair(i, j, spec_.responses);
  const Eigen::VectorXd Fi = marginal_cdf(X, yi, i);
  const Eigen::VectorXd Fj = marginal_cdf(X, yj, j);
  Eigen::VectorXd out(yi.size());
  for (Eigen::Index r = 0; r < yi.size(); ++r) {
    const Eigen::MatrixXd rho = constant_correlation() ? rho_ : correlation(X.row(r));
    out(r) = bvn_cdf(norm_ppf(clamp_cdf(Fi(r))), norm_ppf(clamp_cdf(Fj(r))), rho(i, j));
  }
  return out;
}

Eigen::VectorXd CopulaMonde::pair_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                                         const Eigen::VectorXd& yj, int i, int j) const {
  check_pair(i, j, spec_.responses);
  const Eigen::VectorXd Fi = marginal_cdf(X, yi, i);
  const Eigen::VectorXd Fj = marginal_cdf(X, yj, j);
  Eigen::VectorXd out = marginal_logpdf(X, yi, i) + marginal_logpdf(X, yj, j);
  for (Eigen::Index r = 0; r < yi.size(); ++r) {
    const Eigen::MatrixXd rho = constant_correlation() ? rho_ : correlation(X.row(r));
    Eigen::Matrix2d sub;
    sub << 1.0, rho(i, j), rho(j, i), 1.0;
    const Eigen::Vector2d z(norm_ppf(clamp_cdf(Fi(r))), norm_ppf(clamp_cdf(Fj(r))));
    out(r) += gauss_copula_logdensity(z, sub);
  }
  return out;
}

Eigen::MatrixXd CopulaMonde::extra_state() const {
  return constant_correlation() ? rho_ : Eigen::MatrixXd();
}

void CopulaMonde::set_extra_state(const Eigen::MatrixXd& state) {
  if (constant_correlation()) {
    set_correlation(state);
  } else {
    DensityModel::set_extra_state(state);
  }
}

// ------------------------------------------------------------------- Pumonde

Pumonde::Pumonde(ModelSpec spec) : DensityModel(std::move(spec)) {
  if (spec_.family != Family::pumonde) throw FamilyMismatch("spec is not a PUMONDE model");
  const int K = spec_.responses;
  hx_tower_ = add_tower("hx", covariate_width(), spec_.hx_widths, WeightTag::free, Activation::sigmoid);
  const Eigen::Index hx = spec_.hx_widths.empty() ? covariate_width() : spec_.hx_widths.back();
  for (int k = 0; k < K; ++k) {
    const std::string name = "h" + std::to_string(k);
    std::vector<std::size_t> unit;
    Eigen::Index in = spec_.hxy_widths[0];
    unit.push_back(add_layer(name + ".0", 1 + hx, in,
                             stacked_tags({{1, WeightTag::nonneg}, {hx, WeightTag::free}}, in),
                             Activation::sigmoid));
    for (std::size_t l = 1; l < spec_.hxy_widths.size(); ++l) {
      const Eigen::Index out = spec_.hxy_widths[l];
      unit.push_back(add_layer(name + "." + std::to_string(l), in, out,
                               uniform_tags(in, out, WeightTag::nonneg), Activation::sigmoid));
      in = out;
    }
    units_.push_back(std::move(unit));
  }
  t_tower_ = add_tower("t", unit_width(), spec_.t_widths, WeightTag::nonneg, Activation::softplus);
  const Eigen::Index in = spec_.t_widths.empty() ? unit_width() : spec_.t_widths.back();
  t_tower_.push_back(add_layer("t.out", in, 1, uniform_tags(in, 1, WeightTag::nonneg), Activation::softplus));
}

std::unique_ptr<DensityModel> Pumonde::clone() const { return std::make_unique<Pumonde>(*this); }

NodeId Pumonde::build_hx(Graph& g, NodeId x) const { return apply_tower(g, hx_tower_, x); }

NodeId Pumonde::build_unit(Graph& g, int k, NodeId hx, NodeId y) const {
  return apply_tower(g, units_[static_cast<std::size_t>(k)], g.concat({y, hx}));
}

NodeId Pumonde::build_t(Graph& g, NodeId m) const { return apply_tower(g, t_tower_, m); }

NodeId Pumonde::unit_product(Graph& g, const std::vector<NodeId>& units) const {
  NodeId m = units.front();
  for (std::size_t k = 1; k < units.size(); ++k) m = g.product(m, units[k]);
  return m;
}

double Pumonde::normalizer() const {
  Graph g(params_);
  return g.value(build_t(g, g.constant(Eigen::MatrixXd::Ones(1, unit_width()))))(0, 0);
}

// Same ops as the training tape so pair and full log-likelihoods agree bit for bit.
double Pumonde::log_normalizer() const {
  Graph g(params_);
  return g.value(g.log(build_t(g, g.constant(Eigen::MatrixXd::Ones(1, unit_width())))))(0, 0);
}

Eigen::VectorXd Pumonde::marginal_cdf_subset(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                             const std::vector<int>& subset) const {
  check_shapes(X, Y);
  if (subset.empty()) throw InvalidDim("marginal CDF needs a non-empty response subset");
  for (int k : subset) check_response(k, spec_.responses);
  const Eigen::MatrixXd Xc = covariate_input(X);
  const double t1 = normalizer();
  return chunked_values(Y.rows(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_);
    auto hx = build_hx(g, g.input(Xc.middleRows(b, n)));
    std::vector<NodeId> units;
    for (int k : subset) units.push_back(build_unit(g, k, hx, g.input(Y.block(b, k, n, 1))));
    return Eigen::VectorXd(g.value(build_t(g, unit_product(g, units))).col(0) / t1);
  });
}

Eigen::VectorXd Pumonde::cdf(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  return marginal_cdf_subset(X, Y, all_responses(spec_.responses));
}

Eigen::VectorXd Pumonde::pair_density(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int i,
                                      int j) const {
  check_shapes(X, Y);
  check_pair(i, j, spec_.responses);
  const Eigen::MatrixXd Xc = covariate_input(X);
  const double t1 = normalizer();
  return chunked_values(Y.rows(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_, ChannelSet::mixed(2));
    auto hx = build_hx(g, g.input(Xc.middleRows(b, n), {}));
    auto hi = build_unit(g, i, hx, g.input(Y.block(b, i, n, 1), seed_direction(0)));
    auto hj = build_unit(g, j, hx, g.input(Y.block(b, j, n, 1), seed_direction(1)));
    auto out = build_t(g, g.product(hi, hj));
    return Eigen::VectorXd(g.value(out, 3).col(0) / t1);
  });
}

LogLikelihood Pumonde::pair_loglik(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int i,
                                   int j) const {
  check_shapes(X, Y);
  check_pair(i, j, spec_.responses);
  const Eigen::MatrixXd Xc = covariate_input(X);
  const double log_t1 = log_normalizer();
  return chunked(Y.rows(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_, ChannelSet::mixed(2));
    auto hx = build_hx(g, g.input(Xc.middleRows(b, n), {}));
    auto hi = build_unit(g, i, hx, g.input(Y.block(b, i, n, 1), seed_direction(0)));
    auto hj = build_unit(g, j, hx, g.input(Y.block(b, j, n, 1), seed_direction(1)));
    auto lp = g.log(g.extract(build_t(g, g.product(hi, hj)), 3));
    return LogLikelihood{g.value(lp).col(0).array() - log_t1, g.clamped_count()};
  });
}

LogLikelihood Pumonde::composite_loglik(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  LogLikelihood out{Eigen::VectorXd::Zero(Y.rows()), 0};
  const int K = spec_.responses;
  for (int i = 0; i < K; ++i) {
    for (int j = i + 1; j < K; ++j) {
      const auto p = pair_loglik(X, Y, i, j);
      out.rows += p.rows;
      out.clamped += p.clamped;
    }
  }
  return out;
}

namespace {

}  // namespace

Eigen::VectorXd Pumonde::full_density(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  const int K = spec_.responses;
  if (K > 4) throw DimTooLarge("full likelihood is limited to 4 responses, model has " + std::to_string(K));
  const Eigen::MatrixXd Xc = covariate_input(X);
  const double t1 = normalizer();
  const auto channels = ChannelSet::mixed(K);
  const int top = channels.index_of((ChannelSet::Mask{1} << K) - 1);
  return chunked_values(Y.rows(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_, channels);
    auto hx = build_hx(g, g.input(Xc.middleRows(b, n), {}));
    std::vector<NodeId> units;
    for (int k = 0; k < K; ++k) {
      units.push_back(build_unit(g, k, hx, g.input(Y.block(b, k, n, 1), seed_direction(k))));
    }
    return Eigen::VectorXd(g.value(build_t(g, unit_product(g, units)), top).col(0) / t1);
  });
}

LogLikelihood Pumonde::full_loglik(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  check_shapes(X, Y);
  const int K = spec_.responses;
  if (K > 4) throw DimTooLarge("full likelihood is limited to 4 responses, model has " + std::to_string(K));
  const Eigen::MatrixXd Xc = covariate_input(X);
  const double log_t1 = log_normalizer();
  const auto channels = ChannelSet::mixed(K);
  const int top = channels.index_of((ChannelSet::Mask{1} << K) - 1);
  return chunked(Y.rows(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_, channels);
    auto hx = build_hx(g, g.input(Xc.middleRows(b, n), {}));
    std::vector<NodeId> units;
    for (int k = 0; k < K; ++k) {
      units.push_back(build_unit(g, k, hx, g.input(Y.block(b, k, n, 1), seed_direction(k))));
    }
    auto lp = g.log(g.extract(build_t(g, unit_product(g, units)), top));
    return LogLikelihood{g.value(lp).col(0).array() - log_t1, g.clamped_count()};
  });
}

LogLikelihood Pumonde::log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  return composite_loglik(X, Y);
}

double Pumonde::objective_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                   std::vector<double>& grad) const {
  check_shapes(X, Y);
  const int K = spec_.responses;
  Graph g(params_, ChannelSet::up_to_order(K, 2));
  auto hx = build_hx(g, g.input(covariate_input(X), {}));
  std::vector<NodeId> units;
  for (int k = 0; k < K; ++k) units.push_back(build_unit(g, k, hx, g.input(Y.col(k), seed_direction(k))));
  NodeId acc;
  int pairs = 0;
  for (int i = 0; i < K; ++i) {
    for (int j = i + 1; j < K; ++j) {
      const int channel = g.channels().index_of((ChannelSet::Mask{1} << i) | (ChannelSet::Mask{1} << j));
      auto lp = g.log(g.extract(build_t(g, g.product(units[static_cast<std::size_t>(i)],
                                                     units[static_cast<std::size_t>(j)])),
                                channel));
      acc = pairs == 0 ? lp : g.add(acc, lp);
      ++pairs;
    }
  }
  auto log_t1 = g.log(build_t(g, g.constant(Eigen::MatrixXd::Ones(1, unit_width()))));
  auto total = g.add(g.scale(g.sum(acc), 1.0 / static_cast<double>(Y.rows())),
                     g.scale(log_t1, -static_cast<double>(pairs)));
  grad = g.backward_params(total, 1.0);
  return g.value(total)(0, 0);
}

Eigen::VectorXd Pumonde::joint_cdf(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  return cdf(X, Y);
}

namespace {

Eigen::MatrixXd place_columns(Eigen::Index n, int K, const std::vector<std::pair<int, const Eigen::VectorXd*>>& cols) {
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, K);
  for (const auto& [k, v] : cols) {
    if (v->size() != n) throw ShapeMismatch("response vector length differs from X rows");
    Y.col(k) = *v;
  }
  return Y;
}

}  // namespace

Eigen::VectorXd Pumonde::marginal_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int i) const {
  check_response(i, spec_.responses);
  return marginal_cdf_subset(X, place_columns(X.rows(), spec_.responses, {{i, &y}}), {i});
}

Eigen::VectorXd Pumonde::marginal_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int i) const {
  check_response(i, spec_.responses);
  if (X.rows() != y.size()) throw ShapeMismatch("X and y differ in row count");
  const Eigen::MatrixXd Xc = covariate_input(X);
  const double log_t1 = log_normalizer();
  return chunked_values(y.size(), [&](Eigen::Index b, Eigen::Index n) {
    Graph g(params_, ChannelSet::first_order(1));
    auto hx = build_hx(g, g.input(Xc.middleRows(b, n), {}));
    auto h = build_unit(g, i, hx, g.input(y.segment(b, n), seed_direction(0)));
    return Eigen::VectorXd(g.value(g.log(g.extract(build_t(g, h), 1))).col(0).array() - log_t1);
  });
}

Eigen::VectorXd Pumonde::pair_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                                  const Eigen::VectorXd& yj, int i, int j) const {
  check_pair(i, j, spec_.responses);
  return marginal_cdf_subset(X, place_columns(X.rows(), spec_.responses, {{i, &yi}, {j, &yj}}), {i, j});
}

Eigen::VectorXd Pumonde::pair_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                                     const Eigen::VectorXd& yj, int i, int j) const {
  check_pair(i, j, spec_.responses);
  return pair_loglik(X, place_columns(X.rows(), spec_.responses, {{i, &yi}, {j, &yj}}), i, j).rows;
}

// ---------------------------------------------------------- DiagonalGaussian

void DiagonalGaussian::fit(const Eigen::MatrixXd& Y) {
  if (Y.rows() < 1) throw EmptyInput("cannot fit a Gaussian to zero rows");
  mean_ = Y.colwise().mean();
  sd_ = ((Y.rowwise() - mean_).array().square().colwise().sum() / static_cast<double>(Y.rows())).sqrt();
  if ((sd_.array() <= 0.0).any()) throw DegenerateColumn("response column with zero variance");
}

Eigen::VectorXd DiagonalGaussian::log_likelihood(const Eigen::MatrixXd& Y) const {
  if (Y.cols() != mean_.size()) throw ShapeMismatch("response width differs from the fitted baseline");
  const Eigen::ArrayXXd z = (Y.rowwise() - mean_).array().rowwise() / sd_.array();
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi) * static_cast<double>(Y.cols()) - sd_.array().log().sum();
  return (-0.5 * z.square().rowwise().sum() + norm).matrix();
}

// ------------------------------------------------------------------- factory

std::unique_ptr<DensityModel> make_model(const ModelSpec& spec) {
  switch (spec.family) {
    case Family::umonde:
      return std::make_unique<UnivariateMonde>(spec);
    case Family::monde_made:
      return std::make_unique<MondeMade>(spec);
    case Family::copula_const:
    case Family::copula_param:
      return std::make_unique<CopulaMonde>(spec);
    case Family::pumonde:
      return std::make_unique<Pumonde>(spec);
  }
  throw UnknownFamily("model.family", "unknown model family");
}

std::unique_ptr<DensityModel> make_model(const ModelSpec& spec, std::uint64_t seed) {
  auto model = make_model(spec);
  model->initialize(seed);
  return model;
}

}  // namespace monde
