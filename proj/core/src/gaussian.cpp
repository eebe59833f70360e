#include "monde/gaussian.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <limits>
#include <numbers>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "monde/errors.hpp"

namespace monde {

namespace {

constexpr double kJitter = 1e-9;

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& rho) {
  if (!rho.allFinite()) throw SingularCorrelation("correlation matrix has non-finite entries");
  Eigen::LLT<Eigen::MatrixXd> llt(rho);
  if (llt.info() == Eigen::Success) return llt;
  llt.compute(rho + kJitter * Eigen::MatrixXd::Identity(rho.rows(), rho.cols()));
  if (llt.info() != Eigen::Success) throw SingularCorrelation("correlation matrix is not positive definite");
  return llt;
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// Upper orthant P(X > h, Y > k) of a standard bivariate normal with
// correlation r. Drezner-Wesolowsky with Genz's refinements (Gauss-Legendre
// rules of 6/12/20 points depending on |r|), accurate to about 1e-15.
double bvn_upper(double h, double k, double r) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (h == inf || k == inf) return 0.0;
  if (h == -inf) return k == -inf ? 1.0 : norm_cdf(-k);
  if (k == -inf) return norm_cdf(-h);
  if (r == 0.0) return norm_cdf(-h) * norm_cdf(-k);

  static constexpr std::array<double, 3> w6{0.1713244923791705, 0.3607615730481384, 0.4679139345726904};
  static constexpr std::array<double, 3> x6{0.9324695142031522, 0.6612093864662647, 0.2386191860831970};
  static constexpr std::array<double, 6> w12{0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                                             0.2031674267230659,  0.2334925365383547, 0.2491470458134029};
  static constexpr std::array<double, 6> x12{0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                                             0.5873179542866171, 0.3678314989981802, 0.1252334085114692};
  static constexpr std::array<double, 10> w20{
      0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
      0.1019301198172404,  0.1181945319615184,  0.1316886384491766,  0.1420961093183821,
      0.1491729864726037,  0.1527533871307259};
  static constexpr std::array<double, 10> x20{
      0.9931285991850949, 0.9639719272779138, 0.9122344282513259, 0.8391169718222188,
      0.7463319064601508, 0.6360536807265150, 0.5108670019508271, 0.3737060887154196,
      0.2277858511416451, 0.07652652113349733};
  std::span<const double> w, x;
  if (std::abs(r) < 0.3) {
    w = w6;
    x = x6;
  } else if (std::abs(r) < 0.75) {
    w = w12;
    x = x12;
  } else {
    w = w20;
    x = x20;
  }
  const double tp = 2.0 * std::numbers::pi;
  double hk = h * k;
  double bvn = 0.0;
  if (std::abs(r) < 0.925) {
    const double hs = 0.5 * (h * h + k * k);
    const double asr = 0.5 * std::asin(r);
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (double sign : {-1.0, 1.0}) {
        const double sn = std::sin(asr * (1.0 + sign * x[i]));
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    bvn = bvn * asr / tp + norm_cdf(-h) * norm_cdf(-k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (std::abs(r) < 1.0) {
      const double as = 1.0 - r * r;
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 80.0;
      double asr = -0.5 * (bs / as + hk);
      if (asr > -100.0) bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
      if (hk > -100.0) {
        const double b = std::sqrt(bs);
        const double sp = std::sqrt(tp) * norm_cdf(-b / a);
        bvn -= std::exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
      }
      a *= 0.5;
      double sum = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        for (double sign : {-1.0, 1.0}) {
          const double xs = std::pow(a * (1.0 + sign * x[i]), 2);
          asr = -0.5 * (bs / xs + hk);
          if (asr <= -100.0) continue;
          const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
          const double rs = std::sqrt(1.0 - xs);
          const double ep = std::exp(-0.5 * hk * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
          sum += w[i] * std::exp(asr) * (sp - ep);
        }
      }
      bvn = (a * sum - bvn) / tp;
    }
    if (r > 0.0) {
      bvn += norm_cdf(-std::max(h, k));
    } else if (h >= k) {
      bvn = -bvn;
    } else {
      const double L = h < 0.0 ? norm_cdf(k) - norm_cdf(h) : norm_cdf(-h) - norm_cdf(-k);
      bvn = L - bvn;
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

}  // namespace

double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double norm_ppf(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

Eigen::MatrixXd corr_from_lowrank(const Eigen::VectorXd& u, const Eigen::VectorXd& d) {
  if (u.size() != d.size()) throw ShapeMismatch("u and d differ in length");
  if ((d.array() <= 0.0).any()) throw NonPositiveD("every diagonal term d_k must be positive");
  Eigen::MatrixXd sigma = u * u.transpose();
  sigma.diagonal() += d;
  const Eigen::VectorXd inv_sd = sigma.diagonal().array().rsqrt();
  Eigen::MatrixXd rho = inv_sd.asDiagonal() * sigma * inv_sd.asDiagonal();
  rho.diagonal().setOnes();
  return rho;
}

void corr_from_lowrank_backward(const Eigen::VectorXd& u, const Eigen::VectorXd& d,
                                const Eigen::MatrixXd& drho, Eigen::VectorXd& du,
                                Eigen::VectorXd& dd) {
  Eigen::MatrixXd sigma = u * u.transpose();
  sigma.diagonal() += d;
  const Eigen::VectorXd sd = sigma.diagonal().array().sqrt();
  const Eigen::VectorXd inv_sd = sd.cwiseInverse();
  const Eigen::MatrixXd rho = inv_sd.asDiagonal() * sigma * inv_sd.asDiagonal();
  // rho_ab = Sigma_ab / (s_a s_b) with s_a^2 = Sigma_aa.
  Eigen::MatrixXd dsigma = inv_sd.asDiagonal() * drho * inv_sd.asDiagonal();
  const Eigen::VectorXd row = (drho.array() * rho.array()).rowwise().sum();
  dsigma.diagonal().array() -= row.array() * inv_sd.array().square();
  du = (dsigma + dsigma.transpose()) * u;
  dd = dsigma.diagonal();
}

double gauss_copula_logdensity(const Eigen::VectorXd& z, const Eigen::MatrixXd& rho) {
  const auto llt = factor(rho);
  const Eigen::VectorXd w = llt.solve(z);
  return -0.5 * log_det(llt) - 0.5 * (z.dot(w) - z.squaredNorm());
}

CopulaGradient gauss_copula_gradient(const Eigen::VectorXd& z, const Eigen::MatrixXd& rho) {
  const auto llt = factor(rho);
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(rho.rows(), rho.cols()));
  const Eigen::VectorXd w = inv * z;
  CopulaGradient g;
  g.log_density = -0.5 * log_det(llt) - 0.5 * (z.dot(w) - z.squaredNorm());
  g.dz = z - w;
  g.drho = -0.5 * inv + 0.5 * w * w.transpose();
  return g;
}

double bvn_cdf(double a, double b, double rho) { return bvn_upper(-a, -b, rho); }

double mvn_cdf(const Eigen::VectorXd& a, const Eigen::MatrixXd& R) {
  const Eigen::Index K = a.size();
  if (K == 0) return 1.0;
  if (K > 4) throw DimTooLarge("normal CDF quadrature supports at most 4 dimensions");
  for (Eigen::Index k = 0; k < K; ++k) {
    if (a(k) == -std::numeric_limits<double>::infinity()) return 0.0;
  }
  // Dimensions at +infinity integrate out.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < K; ++k) {
    if (a(k) != std::numeric_limits<double>::infinity()) keep.push_back(k);
  }
  if (static_cast<Eigen::Index>(keep.size()) < K) {
    Eigen::VectorXd a2(keep.size());
    Eigen::MatrixXd R2(keep.size(), keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      a2(i) = a(keep[i]);
      for (std::size_t j = 0; j < keep.size(); ++j) R2(i, j) = R(keep[i], keep[j]);
    }
    return mvn_cdf(a2, R2);
  }
  if (K == 1) return norm_cdf(a(0));
  if (K == 2) return bvn_cdf(a(0), a(1), R(0, 1));

  // Condition on the first coordinate Z_0 = t and integrate over t <= a_0.
  const Eigen::VectorXd r = R.col(0).tail(K - 1);
  Eigen::MatrixXd C = R.bottomRightCorner(K - 1, K - 1) - r * r.transpose();
  const Eigen::VectorXd sd = C.diagonal().array().max(1e-14).sqrt();
  Eigen::MatrixXd Rc = sd.cwiseInverse().asDiagonal() * C * sd.cwiseInverse().asDiagonal();
  Rc.diagonal().setOnes();
  const Eigen::VectorXd rest = a.tail(K - 1);
  const double lower = std::min(-9.0, a(0) - 10.0);
  auto integrand = [&](double t) {
    const Eigen::VectorXd shifted = ((rest - r * t).array() / sd.array()).matrix();
    return norm_pdf(t) * mvn_cdf(shifted, Rc);
  };
  const double p = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, lower, a(0), 12, 1e-11);
  return std::clamp(p, 0.0, 1.0);
}

Eigen::MatrixXd pearson_correlation(const Eigen::MatrixXd& Z) {
  if (Z.rows() < 2) throw DegenerateColumn("need at least two rows to estimate a correlation");
  const Eigen::MatrixXd centered = Z.rowwise() - Z.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered;
  const Eigen::VectorXd var = cov.diagonal();
  for (Eigen::Index k = 0; k < var.size(); ++k) {
    if (!(var(k) > 0.0)) throw DegenerateColumn("column " + std::to_string(k) + " has zero variance");
  }
  const Eigen::VectorXd inv_sd = var.array().rsqrt();
  Eigen::MatrixXd C = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
  C = 0.5 * (C + C.transpose());
  C.diagonal().setOnes();
  return C;
}

Eigen::MatrixXd floor_correlation_eigenvalues(const Eigen::MatrixXd& C, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (C + C.transpose()));
  const Eigen::VectorXd vals = eig.eigenvalues().array().max(floor);
  Eigen::MatrixXd P = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
  const Eigen::VectorXd inv_sd = P.diagonal().array().rsqrt();
  P = inv_sd.asDiagonal() * P * inv_sd.asDiagonal();
  P = 0.5 * (P + P.transpose());
  P.diagonal().setOnes();
  return P;
}

}  // namespace monde
