#pragma once

#include <Eigen/Dense>

namespace monde {

/// Marginal CDF values are clamped to [kCdfClamp, 1 - kCdfClamp] before the
/// normal quantile is taken.
inline constexpr double kCdfClamp = 1e-7;

double norm_pdf(double z);
double norm_cdf(double z);
/// Standard normal quantile; p must lie in (0, 1).
double norm_ppf(double p);

/// Sigma = u u^T + diag(d) rescaled to unit diagonal. Throws NonPositiveD.
Eigen::MatrixXd corr_from_lowrank(const Eigen::VectorXd& u, const Eigen::VectorXd& d);

/// Chain rule through corr_from_lowrank: given dL/drho (symmetric), returns
/// dL/du and dL/dd.
void corr_from_lowrank_backward(const Eigen::VectorXd& u, const Eigen::VectorXd& d,
                                const Eigen::MatrixXd& drho, Eigen::VectorXd& du,
                                Eigen::VectorXd& dd);

/// Log density of the Gaussian copula at normal scores z:
/// -1/2 log det rho - 1/2 z^T (rho^{-1} - I) z. Throws SingularCorrelation
/// when rho is not positive definite even after a 1e-9 diagonal jitter.
double gauss_copula_logdensity(const Eigen::VectorXd& z, const Eigen::MatrixXd& rho);

struct CopulaGradient {
  double log_density = 0.0;
  Eigen::VectorXd dz;    // d log c / dz
  Eigen::MatrixXd drho;  // d log c / drho, symmetric
};

CopulaGradient gauss_copula_gradient(const Eigen::VectorXd& z, const Eigen::MatrixXd& rho);

/// P(Z <= a) for a standard normal vector with correlation matrix R, by nested
/// Gauss-Legendre quadrature over the conditional decomposition. Dimension <= 4.
double mvn_cdf(const Eigen::VectorXd& a, const Eigen::MatrixXd& R);
double bvn_cdf(double a, double b, double rho);

/// Pearson correlation of the columns. Throws DegenerateColumn for a
/// zero-variance column.
Eigen::MatrixXd pearson_correlation(const Eigen::MatrixXd& Z);

/// Symmetric, unit-diagonal projection with every eigenvalue at least `floor`.
Eigen::MatrixXd floor_correlation_eigenvalues(const Eigen::MatrixXd& C, double floor = 1e-6);

}  // namespace monde
