#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "monde/data.hpp"
#include "monde/errors.hpp"
#include "monde/training.hpp"

namespace monde {
namespace {

double sample_mean(const Eigen::VectorXd& v) { return v.mean(); }
double sample_sd(const Eigen::VectorXd& v) {
  return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}
double sample_corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd da = a.array() - a.mean(), db = b.array() - b.mean();
  return (da * db).sum() / std::sqrt(da.square().sum() * db.square().sum());
}

Eigen::MatrixXd rows_where(const Eigen::MatrixXd& m, const Eigen::VectorXi& comp, int c) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < comp.size(); ++i) {
    if (comp[i] == c) idx.push_back(i);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

TEST(Generators, NamesRoundTrip) {
  for (auto k : {GeneratorKind::sin_normal, GeneratorKind::sin_t, GeneratorKind::inv_sin_normal,
                 GeneratorKind::inv_sin_t, GeneratorKind::mv_nonlinear, GeneratorKind::mixture_process,
                 GeneratorKind::bivariate_gaussian, GeneratorKind::six_dim}) {
    EXPECT_EQ(generator_from_name(generator_name(k)), k);
  }
  try {
    generator_from_name("sin-cauchy");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "dataset.generator");
  }
}

TEST(Generators, DeterministicUnderSeed) {
  GeneratorSpec s{GeneratorKind::mixture_process, 500, 11};
  const auto a = gen_synthetic(s), b = gen_synthetic(s);
  EXPECT_TRUE(a.X == b.X);
  EXPECT_TRUE(a.Y == b.Y);
  s.seed = 12;
  EXPECT_FALSE(gen_synthetic(s).Y == a.Y);
}

TEST(Generators, SinNormalMoments) {
  const auto raw = gen_synthetic({GeneratorKind::sin_normal, 100000, 3});
  const Eigen::VectorXd x = raw.X.col(0);
  // U(-1.5, 1.5): mean 0, variance 0.75.
  EXPECT_NEAR(sample_mean(x), 0.0, 4.0 * std::sqrt(0.75 / 1e5));
  EXPECT_NEAR(sample_sd(x), std::sqrt(0.75), 0.01);
  const Eigen::VectorXd resid = raw.Y.col(0).array() - ((4.0 * x.array()).sin() + 0.5 * x.array());
  EXPECT_NEAR(sample_mean(resid), 0.0, 4.0 * 0.2 / std::sqrt(1e5));
  EXPECT_NEAR(sample_sd(resid), 0.2, 4.0 * 0.2 / std::sqrt(2e5));

  // Rows near X = 0 have mean sin(0) + 0 = 0.
  double sum = 0.0;
  long m = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) < 0.05) {
      sum += raw.Y(i, 0);
      ++m;
    }
  }
  // Mean of 4x+sin over |x|<0.05 is zero by symmetry; only noise plus the slope spread remain.
  EXPECT_NEAR(sum / static_cast<double>(m), 0.0, 3.0 * 0.2 / std::sqrt(static_cast<double>(m)) + 0.01);
}

TEST(Generators, SinTResidualScale) {
  const auto raw = gen_synthetic({GeneratorKind::sin_t, 200000, 4});
  const Eigen::ArrayXd x = raw.X.col(0).array();
  const Eigen::VectorXd resid = raw.Y.col(0).array() - ((4.0 * x).sin() + 0.5 * x);
  // 0.2 * T_3: variance 0.04 * 3 / (3 - 2) = 0.12; the median absolute value of T_3 is 0.764892.
  std::vector<double> a(static_cast<std::size_t>(resid.size()));
  for (Eigen::Index i = 0; i < resid.size(); ++i) a[static_cast<std::size_t>(i)] = std::abs(resid[i]);
  std::nth_element(a.begin(), a.begin() + static_cast<long>(a.size() / 2), a.end());
  EXPECT_NEAR(a[a.size() / 2], 0.2 * 0.764892, 0.005);
}

TEST(Generators, InvertedSwapsRoles) {
  const auto a = gen_synthetic({GeneratorKind::sin_normal, 100, 5});
  const auto b = gen_synthetic({GeneratorKind::inv_sin_normal, 100, 5});
  EXPECT_TRUE(a.X == b.Y);
  EXPECT_TRUE(a.Y == b.X);
}

TEST(Generators, MvNonlinearMoments) {
  const auto raw = gen_synthetic({GeneratorKind::mv_nonlinear, 100000, 6});
  const Eigen::ArrayXd x = raw.X.col(0).array();
  const Eigen::VectorXd r0 = raw.Y.col(0).array() - (0.1 * x.abs().sqrt() + x - 5.0);
  const Eigen::VectorXd r1 = raw.Y.col(1).array() - 10.0 * (3.0 * x).sin();
  EXPECT_NEAR(sample_sd(r0), 4.0, 0.04);
  EXPECT_NEAR(sample_sd(r1), 3.0, 0.03);
  EXPECT_NEAR(sample_corr(r0, r1), 0.7, 0.01);
}

TEST(Generators, MixtureComponents) {
  const auto raw = gen_synthetic({GeneratorKind::mixture_process, 100000, 7});
  ASSERT_EQ(raw.X.cols(), 2);
  ASSERT_EQ(raw.Y.cols(), 3);
  const double frac = raw.component.cast<double>().mean();
  EXPECT_NEAR(frac, 0.5, 4.0 * 0.5 / std::sqrt(1e5));

  const Eigen::MatrixXd X0 = rows_where(raw.X, raw.component, 0);
  const Eigen::MatrixXd X1 = rows_where(raw.X, raw.component, 1);
  EXPECT_NEAR(X0.col(0).mean(), -2.0, 0.03);
  EXPECT_NEAR(X0.col(1).mean(), -3.0, 0.03);
  EXPECT_NEAR(X1.col(0).mean(), 2.0, 0.03);
  EXPECT_NEAR(X1.col(1).mean(), 5.0, 0.03);

  const Eigen::MatrixXd Y0 = rows_where(raw.Y, raw.component, 0);
  const double c01 = sample_corr(Y0.col(0), Y0.col(1));
  EXPECT_GE(c01, 0.75);
  EXPECT_LE(c01, 0.85);
  const double cov01 = ((Y0.col(0).array() - Y0.col(0).mean()) * (Y0.col(1).array() - Y0.col(1).mean())).mean();
  EXPECT_NEAR(cov01, 0.4 * 0.5 * 0.8, 0.006);
  EXPECT_NEAR(sample_corr(Y0.col(0), Y0.col(2)), 0.1, 0.02);
  EXPECT_NEAR(sample_corr(Y0.col(1), Y0.col(2)), -0.5, 0.02);
  EXPECT_NEAR(sample_sd(Y0.col(2)), 0.8, 0.01);

  // t_2 has no variance; its scale shows through the median absolute value (0.816497 for T_2).
  const Eigen::MatrixXd Y1 = rows_where(raw.Y, raw.component, 1);
  std::vector<double> a(static_cast<std::size_t>(Y1.rows()));
  for (Eigen::Index i = 0; i < Y1.rows(); ++i) a[static_cast<std::size_t>(i)] = std::abs(Y1(i, 0));
  std::nth_element(a.begin(), a.begin() + static_cast<long>(a.size() / 2), a.end());
  EXPECT_NEAR(a[a.size() / 2], 0.4 * 0.816497, 0.01);
}

TEST(Generators, BivariateGaussianCorrelation) {
  GeneratorSpec s{GeneratorKind::bivariate_gaussian, 100000, 8};
  s.rho = -0.3;
  const auto raw = gen_synthetic(s);
  EXPECT_EQ(raw.X.cols(), 0);
  EXPECT_NEAR(sample_corr(raw.Y.col(0), raw.Y.col(1)), -0.3, 0.015);
  s.rho = 1.0;
  EXPECT_THROW(gen_synthetic(s), ConfigError);
}

TEST(Generators, RejectsEmptySample) { EXPECT_THROW(gen_synthetic({GeneratorKind::sin_normal, 0, 1}), ConfigError); }

TEST(LogLosses, Examples) {
  Eigen::MatrixXd p(3, 2);
  p << 5.0, 1.0, 5.0, 2.0, 5.0, 1.0;
  const Eigen::MatrixXd r = log_losses(p);
  ASSERT_EQ(r.rows(), 2);
  EXPECT_EQ(r(0, 0), 0.0);
  EXPECT_EQ(r(1, 0), 0.0);
  EXPECT_NEAR(r(0, 1), -0.693147, 1e-6);
  EXPECT_NEAR(r(1, 1), 0.693147, 1e-6);
  p(1, 0) = 0.0;
  EXPECT_THROW(log_losses(p), NonPositivePrice);
}

TEST(Percentile, NearestRank) {
  Eigen::VectorXd v(100);
  for (int i = 0; i < 100; ++i) v[i] = 100 - i;  // unsorted on purpose
  EXPECT_EQ(percentile_threshold(v, 0.95), 95.0);
  EXPECT_EQ(percentile_threshold(Eigen::VectorXd::Constant(7, 2.5), 0.3), 2.5);
  EXPECT_EQ(percentile_threshold(Eigen::Vector3d(3.0, 1.0, 2.0), 0.5), 2.0);
  EXPECT_THROW(percentile_threshold(Eigen::VectorXd(), 0.5), EmptyInput);
}

TEST(Assemble, InstrumentDimensions) {
  const Eigen::MatrixXd r12 = Eigen::MatrixXd::Random(50, 12);
  const auto a = assemble_classification_dataset(r12, {9, 10, 11}, 1);
  EXPECT_EQ(a.X.cols(), 21);
  EXPECT_EQ(a.Y.cols(), 3);
  EXPECT_EQ(a.Y.rows(), 49);
  // Row i holds time i+1: responses and other columns at t, then every column at t-1.
  EXPECT_EQ(a.Y(0, 0), r12(1, 9));
  EXPECT_EQ(a.X(0, 0), r12(1, 0));
  EXPECT_EQ(a.X(0, 9), r12(0, 0));
  EXPECT_EQ(a.X(0, 20), r12(0, 11));

  const Eigen::MatrixXd r21 = Eigen::MatrixXd::Random(30, 21);
  std::vector<int> all(21);
  std::iota(all.begin(), all.end(), 0);
  const auto b = assemble_classification_dataset(r21, all, 1);
  EXPECT_EQ(b.X.cols(), 21);
  EXPECT_EQ(b.Y.cols(), 21);
  EXPECT_THROW(assemble_classification_dataset(r12, {12}, 1), InvalidDim);
}

TEST(Split, SizesAndPartition) {
  RawData raw;
  raw.X = Eigen::MatrixXd::Random(10, 2);
  raw.Y = Eigen::MatrixXd::Random(10, 1);
  const auto ds = split_standardize(raw, {0.6, 0.2, 0.2}, 1);
  EXPECT_EQ(ds.train.size(), 6u);
  EXPECT_EQ(ds.validation.size(), 2u);
  EXPECT_EQ(ds.test.size(), 2u);
  std::set<Eigen::Index> all(ds.train.begin(), ds.train.end());
  all.insert(ds.validation.begin(), ds.validation.end());
  all.insert(ds.test.begin(), ds.test.end());
  EXPECT_EQ(all.size(), 10u);

  const auto again = split_standardize(raw, {0.6, 0.2, 0.2}, 1);
  EXPECT_EQ(again.train, ds.train);
  EXPECT_THROW(split_standardize(raw, {0.6, 0.3, 0.2}, 1), ConfigError);
}

TEST(Split, TrainStatisticsOnly) {
  const auto raw = gen_synthetic({GeneratorKind::mv_nonlinear, 2000, 9});
  const auto ds = split_standardize(raw, {0.6, 0.2, 0.2}, 2);
  const Eigen::MatrixXd Xt = ds.split_X(Split::train), Yt = ds.split_Y(Split::train);
  for (const Eigen::MatrixXd* m : {&Xt, &Yt}) {
    for (Eigen::Index c = 0; c < m->cols(); ++c) {
      const double mu = m->col(c).mean();
      EXPECT_NEAR(mu, 0.0, 1e-10);
      EXPECT_NEAR(std::sqrt((m->col(c).array() - mu).square().mean()), 1.0, 1e-10);
    }
  }
  // Held-out rows reuse the train statistics.
  const Eigen::Index r = ds.test.front();
  EXPECT_DOUBLE_EQ(ds.Y(r, 1), (raw.Y(r, 1) - ds.stats.y_mean[1]) / ds.stats.y_sd[1]);
}

TEST(Split, DropsConstantColumns) {
  RawData raw;
  raw.X = Eigen::MatrixXd::Random(20, 3);
  raw.X.col(1).setConstant(4.0);
  raw.Y = Eigen::MatrixXd::Random(20, 2);
  const auto ds = split_standardize(raw, {0.6, 0.2, 0.2}, 3);
  EXPECT_EQ(ds.X.cols(), 2);
  ASSERT_EQ(ds.dropped_columns.size(), 1u);
  EXPECT_EQ(ds.dropped_columns[0], "x1");
  raw.Y.setConstant(1.0);
  EXPECT_THROW(split_standardize(raw, {0.6, 0.2, 0.2}, 3), DegenerateColumn);
}

TEST(Split, JacobianCorrection) {
  // A standard normal fitted in standardized units maps to N(mu, sd^2) in raw units.
  const auto raw = gen_synthetic({GeneratorKind::sin_normal, 1000, 10});
  const auto ds = split_standardize(raw, {0.6, 0.2, 0.2}, 4);
  const double mu = ds.stats.y_mean[0], sd = ds.stats.y_sd[0];
  const double log2pi = std::log(2.0 * M_PI);
  for (Eigen::Index r : ds.test) {
    const double z = ds.Y(r, 0);
    const double standardized = -0.5 * (log2pi + z * z);
    const double y = raw.Y(r, 0);
    const double direct = -0.5 * (log2pi + std::pow((y - mu) / sd, 2)) - std::log(sd);
    EXPECT_NEAR(standardized - ds.stats.log_sd_sum(), direct, 1e-12);
  }
}

TEST(Csv, ParsesAndReportsPositions) {
  std::istringstream ok("1,2\n3,4");
  const Eigen::MatrixXd m = parse_csv(ok);
  Eigen::MatrixXd want(2, 2);
  want << 1, 2, 3, 4;
  EXPECT_TRUE(m == want);

  std::istringstream header("a,b\n1.5,-2e3\n");
  const Eigen::MatrixXd h = parse_csv(header, true);
  EXPECT_EQ(h.rows(), 1);
  EXPECT_EQ(h(0, 1), -2000.0);

  std::istringstream empty("");
  EXPECT_THROW(parse_csv(empty), EmptyInput);

  std::istringstream bad("1,2\nx,4\n");
  try {
    parse_csv(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 2u);
    EXPECT_EQ(e.col(), 1u);
  }

  std::istringstream ragged("1,2\n3\n");
  EXPECT_THROW(parse_csv(ragged), ParseError);
}

TEST(Csv, FileRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "monde_data_test.csv").string();
  Eigen::MatrixXd m(2, 3);
  m << 0.1, 1.0 / 3.0, -7.0, 1e-300, 2.0, 3.5;
  write_csv(path, m, {"a", "b", "c"});
  EXPECT_TRUE(load_csv(path, true) == m);
  std::filesystem::remove(path);
  EXPECT_THROW(load_csv(path), IoError);
}

}  // namespace
}  // namespace monde
