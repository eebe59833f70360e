#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "monde/data.hpp"
#include "monde/models.hpp"

namespace monde {

struct Curve {
  std::vector<double> x, y;
  double summary = 0.0;  // AUC or average precision
  std::string x_label = "x", y_label = "y", summary_label = "summary";

  /// CSV with header "x_label,y_label,summary_label"; the summary repeats on every row.
  void write_csv(const std::string& path) const;
};

struct TailLabels {
  Eigen::VectorXi labels;
  Eigen::VectorXd scores;
  Eigen::RowVectorXd thresholds;  // per-response q-thresholds from the train split
};

/// Per-response nearest-rank q-thresholds of the train split.
Eigen::RowVectorXd tail_thresholds(const Dataset& data, double q);
/// Label 1 iff any response exceeds its threshold; score 1 - F(thresholds | x).
TailLabels tail_labels_scores(const DensityModel& model, const Dataset& data, Split split, double q);

/// ROC curve with tied scores grouped; summary is the trapezoidal AUC. Throws OneClassOnly.
Curve roc_auc(const Eigen::VectorXi& labels, const Eigen::VectorXd& scores);
/// Precision-recall curve; summary is sum_k (R_k - R_{k-1}) P_k. Throws NoPositives.
Curve pr_ap(const Eigen::VectorXi& labels, const Eigen::VectorXd& scores);
/// Standard deviation of the AUC over random label permutations.
double auc_permutation_se(const Eigen::VectorXi& labels, const Eigen::VectorXd& scores, int permutations,
                          std::uint64_t seed);

struct TailDepGrid {
  std::vector<double> u;
  std::vector<double> lambda;      // lambda_L for u <= 0.5, lambda_R above
  std::vector<bool> empty_bucket;  // denominator was zero (lambda set to 0)
  std::string source;              // "empirical" or "model"

  /// Value at the grid point closest to `u`.
  double at(double u) const;
  void write_csv(const std::string& path) const;
};

/// 99 equispaced points from 0.005 to 0.995.
std::vector<double> default_u_grid();

/// Rank-based plug-in estimators. Throws EmptyInput for fewer than 100 rows.
TailDepGrid empirical_tail_dep(const Eigen::VectorXd& yi, const Eigen::VectorXd& yj, const std::vector<double>& u);

struct Bracket {
  double lo = -10.0;
  double hi = 10.0;
};

/// Bisection for F(y) = p with geometric bracket expansion (at most 2^10 times
/// the initial half-width) and at most 200 iterations. Throws BracketFailure.
double quantile_invert(const std::function<double(double)>& cdf, double p, Bracket bracket = {});
/// Vectorized bisection: `cdf` maps a vector of points to CDF values elementwise.
Eigen::VectorXd quantile_invert_batch(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& cdf,
                                      const Eigen::VectorXd& p, Bracket bracket = {});

/// Model-based tail dependence for responses (i, j) at covariate row `x`.
TailDepGrid model_tail_dep(const DensityModel& model, int i, int j, const Eigen::RowVectorXd& x,
                           const std::vector<double>& u);
/// Same ratios for arbitrary marginal quantile functions and bivariate CDF.
TailDepGrid tail_dep_from_cdf(const std::function<double(double, double)>& pair_cdf,
                              const std::function<double(double)>& quantile_i,
                              const std::function<double(double)>& quantile_j, const std::vector<double>& u);

struct Box {
  double lo0 = -5.0, hi0 = 5.0, lo1 = -5.0, hi1 = 5.0;
};

struct MutualInformation {
  double mi = 0.0;
  double mass = 0.0;
};

/// MI of a bivariate density by a tensor-product trapezoid rule on an n x n
/// grid; marginals come from 1-D quadrature of the joint. `logpdf` maps two
/// equal-length coordinate vectors to log-densities. Throws NegativeMass when
/// the joint mass is outside [0.9, 1.05].
MutualInformation mutual_information_quadrature(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>& logpdf, const Box& box,
    int grid_n = 256);
/// MI of responses (i, j) of a model at covariate row `x`.
MutualInformation model_mutual_information(const DensityModel& model, int i, int j, const Eigen::RowVectorXd& x,
                                           const Box& box, int grid_n = 256);

/// Every unordered pair (i, j), i < j, of K responses.
std::vector<std::pair<int, int>> all_pairs(int K);
/// Mean bivariate log-likelihood of each pair on a split (rows: pairs).
Eigen::VectorXd pairwise_mean_ll(const DensityModel& model, const Dataset& data, Split split,
                                 const std::vector<std::pair<int, int>>& pairs);
/// Entry (r, c): number of pairs where model r's mean LL strictly exceeds model c's.
/// `mean_ll` has one column per model and one row per pair. Diagonal is 0.
Eigen::MatrixXi pairwise_ll_wins(const Eigen::MatrixXd& mean_ll);
Eigen::MatrixXi pairwise_ll_wins(const std::vector<const DensityModel*>& models, const Dataset& data, Split split,
                                 const std::vector<std::pair<int, int>>& pairs);

}  // namespace monde
