#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "monde/graph.hpp"
#include "monde/layers.hpp"
#include "monde/params.hpp"

namespace monde {

enum class Family : std::uint8_t {
  umonde,
  monde_made,
  copula_const,
  copula_param,
  pumonde,
};

std::string family_name(Family family);
/// Throws UnknownFamily naming `field` when `name` is not a known family.
Family family_from_name(const std::string& name, const std::string& field = "model.family");

/// Architecture of a model. Unused fields are ignored by families that do not need them.
struct ModelSpec {
  Family family = Family::umonde;
  int covariates = 0;  // D
  int responses = 1;   // K

  // univariate MONDE and the copula marginals
  std::vector<int> x_widths{64, 64};  // covariate tower (shared across copula marginals)
  std::vector<int> y_widths{64, 64};  // monotone tower; first layer fuses the covariate features

  // MONDE-MADE
  int made_blocks = 8;  // M, units per response in each hidden layer
  int made_layers = 2;

  // copula with covariate-dependent correlation
  std::vector<int> corr_widths{32};

  // PUMONDE
  std::vector<int> hx_widths{32, 32};
  std::vector<int> hxy_widths{32, 32};
  std::vector<int> t_widths{32, 32};

  /// Throws InvalidDim when the dimensions do not fit the family.
  void validate() const;
};

/// Per-column location/scale used to standardize covariates and responses.
struct Standardization {
  Eigen::RowVectorXd x_mean, x_sd, y_mean, y_sd;

  bool empty() const { return y_sd.size() == 0; }
  /// Sum of log response SDs (0 when empty).
  double log_sd_sum() const;
  double log_sd(int k) const;
};

struct LogLikelihood {
  Eigen::VectorXd rows;
  long clamped = 0;  // densities that fell below the log floor
};

/// Common interface of every estimator. All inputs are in standardized units;
/// X has one row per observation and `covariates()` columns (possibly zero).
class DensityModel {
 public:
  explicit DensityModel(ModelSpec spec);
  virtual ~DensityModel() = default;
  virtual std::unique_ptr<DensityModel> clone() const = 0;

  Family family() const { return spec_.family; }
  const ModelSpec& spec() const { return spec_; }
  int covariates() const { return spec_.covariates; }
  int responses() const { return spec_.responses; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const std::vector<ConstrainedLinear>& layers() const { return layers_; }

  /// Glorot initialization of every layer.
  void initialize(std::uint64_t seed);

  /// Per-row training objective: the log-likelihood, or for PUMONDE the
  /// composite (sum of bivariate) log-likelihood.
  virtual LogLikelihood log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const = 0;
  /// Mean objective over the rows; writes its gradient with respect to the
  /// free parameters into `grad` (resized to params().size()).
  virtual double objective_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                    std::vector<double>& grad) const = 0;
  /// Number of times each response's log-scale enters one row's objective:
  /// 1 for a joint density, K-1 for the composite likelihood.
  virtual double log_sd_multiplicity() const { return 1.0; }

  /// Hooks for state that is refitted outside gradient descent.
  virtual void prepare_epoch(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);
  virtual void finalize_training(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);

  /// Joint CDF F(y | x). Not every family can provide it (UnsupportedOp).
  virtual Eigen::VectorXd joint_cdf(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  /// Univariate marginal CDF and log-pdf of response i.
  virtual Eigen::VectorXd marginal_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int i) const;
  virtual Eigen::VectorXd marginal_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          int i) const;
  /// Bivariate marginal CDF and log-pdf of responses (i, j).
  virtual Eigen::VectorXd pair_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                                   const Eigen::VectorXd& yj, int i, int j) const;
  virtual Eigen::VectorXd pair_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                                      const Eigen::VectorXd& yj, int i, int j) const;

  /// Non-parameter state persisted with the model (the fitted correlation).
  virtual Eigen::MatrixXd extra_state() const { return {}; }
  virtual void set_extra_state(const Eigen::MatrixXd& state);

  Standardization standardization;

 protected:
  /// X with the zero-covariate case mapped onto a single constant zero column.
  Eigen::MatrixXd covariate_input(const Eigen::MatrixXd& X) const;
  int covariate_width() const { return spec_.covariates == 0 ? 1 : spec_.covariates; }
  void check_shapes(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  std::size_t add_layer(const std::string& name, Eigen::Index in, Eigen::Index out,
                        std::vector<WeightTag> tags, Activation act);
  /// Stack of layers with a single tag and activation; returns their indices in layers_.
  std::vector<std::size_t> add_tower(const std::string& name, Eigen::Index in,
                                     const std::vector<int>& widths, WeightTag tag, Activation act);
  NodeId apply_tower(Graph& g, const std::vector<std::size_t>& tower, NodeId in) const;

  ModelSpec spec_;
  ParamStore params_;
  std::vector<ConstrainedLinear> layers_;
};

/// F(y | x) from a covariate tower fused into a monotone tower with a sigmoid output.
class UnivariateMonde : public DensityModel {
 public:
  explicit UnivariateMonde(ModelSpec spec);
  std::unique_ptr<DensityModel> clone() const override;

  Eigen::VectorXd cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const;
  LogLikelihood logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const;

  LogLikelihood log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const override;
  double objective_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                            std::vector<double>& grad) const override;
  Eigen::VectorXd joint_cdf(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const override;
  Eigen::VectorXd marginal_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int i) const override;
  Eigen::VectorXd marginal_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  int i) const override;

  /// Graph of the CDF; `y` carries the response tangent.
  NodeId build(Graph& g, NodeId x, NodeId y) const;

 private:
  std::vector<std::size_t> x_tower_;
  std::vector<std::size_t> y_tower_;
  std::size_t output_ = 0;
};

/// Autoregressive estimator: masked layers output F_k(y_k | x, y_<k) for every k.
class MondeMade : public DensityModel {
 public:
  explicit MondeMade(ModelSpec spec);
  std::unique_ptr<DensityModel> clone() const override;

  const MadeMaskSet& masks() const { return masks_; }
  /// n x K matrix of conditional CDFs.
  Eigen::MatrixXd cdfs(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  /// Channel k holds the derivative of every output along e_{y_k}.
  TangentResult cdfs_with_tangents(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;

  LogLikelihood log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const override;
  double objective_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                            std::vector<double>& grad) const override;

  NodeId build(Graph& g, NodeId x, NodeId y) const;

 private:
  MadeMaskSet masks_;
  std::vector<std::size_t> stack_;
};

/// Marginal MONDE networks joined by a Gaussian copula whose correlation is
/// either fitted once per epoch (constant) or produced by a covariate network.
class CopulaMonde : public DensityModel {
 public:
  explicit CopulaMonde(ModelSpec spec);
  std::unique_ptr<DensityModel> clone() const override;

  bool constant_correlation() const { return spec_.family == Family::copula_const; }
  const Eigen::MatrixXd& fitted_correlation() const { return rho_; }
  void set_correlation(const Eigen::MatrixXd& rho);

  /// n x K marginal CDFs F_k(y_k | x).
  Eigen::MatrixXd marginal_cdfs(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  /// n x K marginal log-pdfs.
  Eigen::MatrixXd marginal_logpdfs(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                   long* clamped = nullptr) const;
  /// Correlation for one covariate row (the fitted matrix for the constant variant).
  Eigen::MatrixXd correlation(const Eigen::RowVectorXd& x) const;
  /// Normal scores z = Phi^{-1}(clamped F).
  Eigen::MatrixXd normal_scores(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  /// Pearson correlation of the normal scores, eigenvalues floored at 1e-6.
  Eigen::MatrixXd fit_constant_correlation(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;

  LogLikelihood log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const override;
  double objective_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                            std::vector<double>& grad) const override;
  void prepare_epoch(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) override;
  void finalize_training(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) override;

  Eigen::VectorXd joint_cdf(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const override;
  Eigen::VectorXd marginal_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int i) const override;
  Eigen::VectorXd marginal_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  int i) const override;
  Eigen::VectorXd pair_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                           const Eigen::VectorXd& yj, int i, int j) const override;
  Eigen::VectorXd pair_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                              const Eigen::VectorXd& yj, int i, int j) const override;

  Eigen::MatrixXd extra_state() const override;
  void set_extra_state(const Eigen::MatrixXd& state) override;

 private:
  struct Marginal {
    std::vector<std::size_t> x_part;  // covariate-only partition
    std::vector<std::size_t> y_part;  // monotone partition, fed by x_part layer by layer
    std::size_t output = 0;
  };
  NodeId build_marginal(Graph& g, int k, NodeId hx, NodeId y) const;
  /// Builds the marginal CDF nodes (one per requested response) on a tape.
  std::vector<NodeId> build_marginals(Graph& g, NodeId x, const Eigen::MatrixXd& Y,
                                      const std::vector<int>& which, bool tangents) const;

  std::vector<std::size_t> x_tower_;
  std::vector<Marginal> marginals_;
  std::vector<std::size_t> corr_tower_;
  std::size_t corr_head_ = 0;
  Eigen::MatrixXd rho_;
};

/// Product-of-units estimator: F = t(prod_k h_k(y_k, x)) / t(1).
class Pumonde : public DensityModel {
 public:
  explicit Pumonde(ModelSpec spec);
  std::unique_ptr<DensityModel> clone() const override;

  Eigen::VectorXd cdf(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  /// CDF of the responses in `subset`; the others are marginalized by
  /// substituting the all-ones vector for their units. Y keeps all K columns.
  Eigen::VectorXd marginal_cdf_subset(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                      const std::vector<int>& subset) const;
  /// log d^2 F_ij / dy_i dy_j.
  LogLikelihood pair_loglik(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int i, int j) const;
  /// Pre-log mixed partial of the bivariate marginal (already divided by t(1)).
  Eigen::VectorXd pair_density(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int i, int j) const;
  /// Sum over i < j of pair_loglik.
  LogLikelihood composite_loglik(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  /// Log of the order-K mixed partial; K <= 4 (DimTooLarge otherwise).
  LogLikelihood full_loglik(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  /// Pre-log order-K mixed partial divided by t(1).
  Eigen::VectorXd full_density(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  double normalizer() const;

  LogLikelihood log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const override;
  double objective_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                            std::vector<double>& grad) const override;
  double log_sd_multiplicity() const override { return spec_.responses - 1.0; }

  Eigen::VectorXd joint_cdf(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const override;
  Eigen::VectorXd marginal_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int i) const override;
  Eigen::VectorXd marginal_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  int i) const override;
  Eigen::VectorXd pair_cdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                           const Eigen::VectorXd& yj, int i, int j) const override;
  Eigen::VectorXd pair_logpdf(const Eigen::MatrixXd& X, const Eigen::VectorXd& yi,
                              const Eigen::VectorXd& yj, int i, int j) const override;

  /// Units h_k for response k on a tape; `y` is the n x 1 response node.
  NodeId build_unit(Graph& g, int k, NodeId hx, NodeId y) const;
  NodeId build_hx(Graph& g, NodeId x) const;
  NodeId build_t(Graph& g, NodeId m) const;

 private:
  NodeId unit_product(Graph& g, const std::vector<NodeId>& units) const;
  double log_normalizer() const;
  Eigen::Index unit_width() const { return spec_.hxy_widths.back(); }

  std::vector<std::size_t> hx_tower_;
  std::vector<std::vector<std::size_t>> units_;
  std::vector<std::size_t> t_tower_;
};

/// Independent Gaussian per response with mean/variance from the train split.
class DiagonalGaussian {
 public:
  void fit(const Eigen::MatrixXd& Y);
  Eigen::VectorXd log_likelihood(const Eigen::MatrixXd& Y) const;
  const Eigen::RowVectorXd& mean() const { return mean_; }
  const Eigen::RowVectorXd& sd() const { return sd_; }

 private:
  Eigen::RowVectorXd mean_, sd_;
};

std::unique_ptr<DensityModel> make_model(const ModelSpec& spec);
/// make_model followed by initialize(seed).
std::unique_ptr<DensityModel> make_model(const ModelSpec& spec, std::uint64_t seed);

}  // namespace monde
