#include "monde/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "monde/errors.hpp"

namespace monde {

namespace {

constexpr double kSinNoise = 0.2;

struct NamedGenerator {
  GeneratorKind kind;
  const char* name;
};

constexpr NamedGenerator kGenerators[] = {
    {GeneratorKind::sin_normal, "sin-normal"},
    {GeneratorKind::sin_t, "sin-t"},
    {GeneratorKind::inv_sin_normal, "inv-sin-normal"},
    {GeneratorKind::inv_sin_t, "inv-sin-t"},
    {GeneratorKind::mv_nonlinear, "mv-nonlinear"},
    {GeneratorKind::mixture_process, "mixture-process"},
    {GeneratorKind::bivariate_gaussian, "bivariate-gaussian"},
    {GeneratorKind::six_dim, "six-dim"},
};

RawData sin_family(const GeneratorSpec& spec, bool student, bool inverted) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(-1.5, 1.5);
  std::normal_distribution<double> normal;
  std::student_t_distribution<double> t3(3.0);
  RawData raw;
  raw.X.resize(spec.n, 1);
  raw.Y.resize(spec.n, 1);
  for (long i = 0; i < spec.n; ++i) {
    const double x = unif(rng);
    const double noise = student ? t3(rng) : normal(rng);
    const double y = std::sin(4.0 * x) + 0.5 * x + kSinNoise * noise;
    raw.X(i, 0) = inverted ? y : x;
    raw.Y(i, 0) = inverted ? x : y;
  }
  return raw;
}

RawData mv_nonlinear(const GeneratorSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(-10.0, 10.0);
  std::normal_distribution<double> normal;
  const double s0 = 4.0, s1 = 3.0, r = 0.7;
  RawData raw;
  raw.X.resize(spec.n, 1);
  raw.Y.resize(spec.n, 2);
  for (long i = 0; i < spec.n; ++i) {
    const double x = unif(rng);
    const double z0 = normal(rng), z1 = normal(rng);
    raw.X(i, 0) = x;
    raw.Y(i, 0) = 0.1 * std::sqrt(std::abs(x)) + x - 5.0 + s0 * z0;
    raw.Y(i, 1) = 10.0 * std::sin(3.0 * x) + s1 * (r * z0 + std::sqrt(1.0 - r * r) * z1);
  }
  return raw;
}

RawData mixture_process(const GeneratorSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal;
  std::chi_squared_distribution<double> chi2(2.0);
  const Eigen::Vector3d sigma(0.4, 0.5, 0.8);
  Eigen::Matrix3d P;
  P << 1.0, 0.8, 0.1, 0.8, 1.0, -0.5, 0.1, -0.5, 1.0;
  const Eigen::Matrix3d cov = sigma.asDiagonal() * P * sigma.asDiagonal();
  const Eigen::Matrix3d L = cov.llt().matrixL();
  RawData raw;
  raw.X.resize(spec.n, 2);
  raw.Y.resize(spec.n, 3);
  raw.component.resize(spec.n);
  for (long i = 0; i < spec.n; ++i) {
    const int c = coin(rng) ? 1 : 0;
    raw.component(i) = c;
    const Eigen::Vector2d mean = c == 0 ? Eigen::Vector2d(-2.0, -3.0) : Eigen::Vector2d(2.0, 5.0);
    for (int j = 0; j < 2; ++j) raw.X(i, j) = mean(j) + normal(rng);
    Eigen::Vector3d z(normal(rng), normal(rng), normal(rng));
    Eigen::Vector3d y = L * z;
    if (c == 1) y /= std::sqrt(chi2(rng) / 2.0);
    raw.Y.row(i) = y.transpose();
  }
  return raw;
}

RawData bivariate_gaussian(const GeneratorSpec& spec) {
  if (!(std::abs(spec.rho) < 1.0)) throw ConfigError("dataset.rho", "correlation must lie in (-1, 1)");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;
  RawData raw;
  raw.X.resize(spec.n, 0);
  raw.Y.resize(spec.n, 2);
  for (long i = 0; i < spec.n; ++i) {
    const double z0 = normal(rng), z1 = normal(rng);
    raw.Y(i, 0) = z0;
    raw.Y(i, 1) = spec.rho * z0 + std::sqrt(1.0 - spec.rho * spec.rho) * z1;
  }
  return raw;
}

// Unconditional six-dimensional data with linear, periodic, multiplicative,
// skewed and quadratic dependence between the coordinates.
RawData six_dim(const GeneratorSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;
  RawData raw;
  raw.X.resize(spec.n, 0);
  raw.Y.resize(spec.n, 6);
  for (long i = 0; i < spec.n; ++i) {
    double z[6];
    for (double& v : z) v = normal(rng);
    const double y0 = z[0];
    const double y1 = 0.8 * y0 + 0.6 * z[1];
    const double y2 = std::sin(2.0 * y0) + 0.3 * z[2];
    const double y3 = 0.5 * y1 * y2 + 0.5 * z[3];
    const double y4 = std::abs(z[4]) + 0.2 * y2;
    const double y5 = 0.5 * y0 * y0 + 0.4 * z[5];
    raw.Y.row(i) << y0, y1, y2, y3, y4, y5;
  }
  return raw;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

Eigen::Index fraction_count(double fraction, Eigen::Index n) {
  return static_cast<Eigen::Index>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

// Standardizes the kept columns of `m` in place using statistics of `rows`.
void standardize_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows, char prefix,
                         Eigen::MatrixXd& out, Eigen::RowVectorXd& mean, Eigen::RowVectorXd& sd,
                         std::vector<std::string>& dropped) {
  std::vector<Eigen::Index> keep;
  std::vector<double> means, sds;
  const Eigen::MatrixXd train = gather_rows(m, rows);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mu = train.col(c).mean();
    const double s = std::sqrt((train.col(c).array() - mu).square().mean());
    if (!(s > 1e-12 * std::max(1.0, std::abs(mu)))) {
      dropped.push_back(prefix + std::to_string(c));
      continue;
    }
    keep.push_back(c);
    means.push_back(mu);
    sds.push_back(s);
  }
  const auto kept = static_cast<Eigen::Index>(keep.size());
  out.resize(m.rows(), kept);
  mean.resize(kept);
  sd.resize(kept);
  for (Eigen::Index j = 0; j < kept; ++j) {
    mean(j) = means[static_cast<std::size_t>(j)];
    sd(j) = sds[static_cast<std::size_t>(j)];
    out.col(j) = (m.col(keep[static_cast<std::size_t>(j)]).array() - mean(j)) / sd(j);
  }
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string generator_name(GeneratorKind kind) {
  for (const auto& g : kGenerators) {
    if (g.kind == kind) return g.name;
  }
  return "unknown";
}

GeneratorKind generator_from_name(const std::string& name, const std::string& field) {
  for (const auto& g : kGenerators) {
    if (name == g.name) return g.kind;
  }
  throw ConfigError(field, "unknown generator '" + name + "'");
}

std::string split_name(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::validation:
      return "validation";
    case Split::test:
      return "test";
  }
  return "unknown";
}

const std::vector<Eigen::Index>& Dataset::indices(Split split) const {
  switch (split) {
    case Split::train:
      return train;
    case Split::validation:
      return validation;
    case Split::test:
      return test;
  }
  return train;
}

Eigen::MatrixXd Dataset::split_X(Split split) const { return gather_rows(X, indices(split)); }
Eigen::MatrixXd Dataset::split_Y(Split split) const { return gather_rows(Y, indices(split)); }

RawData gen_synthetic(const GeneratorSpec& spec) {
  if (spec.n < 1) throw ConfigError("dataset.n", "sample size must be >= 1");
  RawData raw;
  switch (spec.kind) {
    case GeneratorKind::sin_normal:
      raw = sin_family(spec, false, false);
      break;
    case GeneratorKind::sin_t:
      raw = sin_family(spec, true, false);
      break;
    case GeneratorKind::inv_sin_normal:
      raw = sin_family(spec, false, true);
      break;
    case GeneratorKind::inv_sin_t:
      raw = sin_family(spec, true, true);
      break;
    case GeneratorKind::mv_nonlinear:
      raw = mv_nonlinear(spec);
      break;
    case GeneratorKind::mixture_process:
      raw = mixture_process(spec);
      break;
    case GeneratorKind::bivariate_gaussian:
      raw = bivariate_gaussian(spec);
      break;
    case GeneratorKind::six_dim:
      raw = six_dim(spec);
      break;
  }
  raw.provenance = generator_name(spec.kind) + " n=" + std::to_string(spec.n) + " seed=" + std::to_string(spec.seed);
  return raw;
}

Eigen::MatrixXd log_losses(const Eigen::MatrixXd& prices) {
  if (prices.rows() < 2) throw EmptyInput("need at least two price rows");
  if ((prices.array() <= 0.0).any() || !prices.allFinite()) {
    throw NonPositivePrice("prices must be finite and positive");
  }
  const Eigen::ArrayXXd logp = prices.array().log();
  return logp.topRows(prices.rows() - 1) - logp.bottomRows(prices.rows() - 1);
}

double percentile_threshold(const Eigen::VectorXd& column, double q) {
  if (column.size() == 0) throw EmptyInput("percentile of an empty column");
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("eval.q", "quantile level must lie in (0, 1)");
  std::vector<double> sorted(column.data(), column.data() + column.size());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

RawData assemble_classification_dataset(const Eigen::MatrixXd& returns, const std::vector<int>& response_cols,
                                        int lag) {
  const auto cols = static_cast<int>(returns.cols());
  if (response_cols.empty()) throw InvalidDim("at least one response column is required");
  for (int c : response_cols) {
    if (c < 0 || c >= cols) throw InvalidDim("response column " + std::to_string(c) + " is out of range");
  }
  if (lag < 0) throw InvalidDim("lag must be >= 0");
  if (returns.rows() <= lag) throw EmptyInput("not enough rows for the requested lag");
  std::vector<int> others;
  for (int c = 0; c < cols; ++c) {
    if (std::find(response_cols.begin(), response_cols.end(), c) == response_cols.end()) others.push_back(c);
  }
  const Eigen::Index n = returns.rows() - lag;
  RawData raw;
  raw.Y.resize(n, static_cast<Eigen::Index>(response_cols.size()));
  raw.X.resize(n, static_cast<Eigen::Index>(others.size()) + static_cast<Eigen::Index>(lag) * cols);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index t = i + lag;
    for (std::size_t k = 0; k < response_cols.size(); ++k) {
      raw.Y(i, static_cast<Eigen::Index>(k)) = returns(t, response_cols[k]);
    }
    Eigen::Index j = 0;
    for (int c : others) raw.X(i, j++) = returns(t, c);
    for (int l = 1; l <= lag; ++l) {
      for (int c = 0; c < cols; ++c) raw.X(i, j++) = returns(t - l, c);
    }
  }
  raw.provenance = "returns lag=" + std::to_string(lag);
  return raw;
}

Dataset split_standardize(const RawData& raw, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const Eigen::Index n = raw.Y.rows();
  if (n == 0) throw EmptyInput("dataset has no rows");
  if (raw.X.rows() != n) throw ShapeMismatch("X and Y differ in row count");
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (fractions[0] <= 0.0 || fractions[1] <= 0.0 || fractions[2] <= 0.0 || total > 1.0 + 1e-12) {
    throw ConfigError("dataset.split", "fractions must be positive and sum to at most 1");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const Eigen::Index n_train = fraction_count(fractions[0], n);
  const Eigen::Index n_val = fraction_count(fractions[1], n);
  const Eigen::Index n_test =
      std::abs(total - 1.0) < 1e-12 ? n - n_train - n_val : fraction_count(fractions[2], n);
  if (n_train < 1 || n_val < 1 || n_test < 1) throw EmptyInput("a split would be empty");

  Dataset ds;
  auto first = order.begin();
  ds.train.assign(first, first + n_train);
  ds.validation.assign(first + n_train, first + n_train + n_val);
  ds.test.assign(first + n_train + n_val, first + n_train + n_val + n_test);
  standardize_columns(raw.X, ds.train, 'x', ds.X, ds.stats.x_mean, ds.stats.x_sd, ds.dropped_columns);
  standardize_columns(raw.Y, ds.train, 'y', ds.Y, ds.stats.y_mean, ds.stats.y_sd, ds.dropped_columns);
  if (ds.Y.cols() == 0) throw DegenerateColumn("every response column is constant on the train split");
  ds.component = raw.component;
  ds.provenance = raw.provenance;
  ds.fractions = fractions;
  ds.seed = seed;
  return ds;
}

Eigen::MatrixXd parse_csv(std::istream& in, bool header) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool skipped_header = !header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    std::vector<double> row;
    std::string_view rest = line;
    std::size_t col = 0;
    while (true) {
      ++col;
      const auto comma = rest.find(',');
      const std::string_view cell = trim(rest.substr(0, comma));
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw ParseError(line_no, col, "'" + std::string(cell) + "' is not a number");
      }
      row.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (width == 0) {
      width = row.size();
    } else if (row.size() != width) {
      throw ParseError(line_no, std::min(row.size(), width) + 1,
                       "expected " + std::to_string(width) + " fields, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw EmptyInput("no data rows");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < width; ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return out;
}

Eigen::MatrixXd load_csv(const std::string& path, bool header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_csv(in, header);
}

void write_csv(const std::string& path, const Eigen::MatrixXd& values, const std::vector<std::string>& header) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  if (!header.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
  }
  out.precision(17);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << values(i, j);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace monde
