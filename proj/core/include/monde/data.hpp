#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "monde/models.hpp"

namespace monde {

enum class GeneratorKind : std::uint8_t {
  sin_normal,
  sin_t,
  inv_sin_normal,
  inv_sin_t,
  mv_nonlinear,
  mixture_process,
  bivariate_gaussian,
  six_dim,
};

std::string generator_name(GeneratorKind kind);
/// Throws ConfigError naming `field` for an unknown generator.
GeneratorKind generator_from_name(const std::string& name, const std::string& field = "dataset.generator");

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::sin_normal;
  long n = 10000;
  std::uint64_t seed = 0;
  double rho = 0.8;  // bivariate-gaussian only
};

/// Unsplit, unstandardized observations.
struct RawData {
  Eigen::MatrixXd X;  // n x D (D may be 0)
  Eigen::MatrixXd Y;  // n x K
  Eigen::VectorXi component;  // mixture component per row, empty for other sources
  std::string provenance;
};

enum class Split : std::uint8_t { train, validation, test };
std::string split_name(Split split);

/// Standardized data with split indices. Statistics come from the train rows only.
struct Dataset {
  Eigen::MatrixXd X, Y;
  Eigen::VectorXi component;
  std::vector<Eigen::Index> train, validation, test;
  Standardization stats;
  std::string provenance;
  std::array<double, 3> fractions{0.6, 0.2, 0.2};
  std::uint64_t seed = 0;
  std::vector<std::string> dropped_columns;  // "x<j>" or "y<k>" in raw numbering

  int covariates() const { return static_cast<int>(X.cols()); }
  int responses() const { return static_cast<int>(Y.cols()); }
  const std::vector<Eigen::Index>& indices(Split split) const;
  Eigen::MatrixXd split_X(Split split) const;
  Eigen::MatrixXd split_Y(Split split) const;
};

RawData gen_synthetic(const GeneratorSpec& spec);

/// Row t = log p(t-1) - log p(t). Throws NonPositivePrice.
Eigen::MatrixXd log_losses(const Eigen::MatrixXd& prices);

/// Nearest-rank percentile: sorted value at 1-based index ceil(q n). Throws EmptyInput.
double percentile_threshold(const Eigen::VectorXd& column, double q);

/// Responses are the selected contemporaneous columns (0-based); covariates are
/// the remaining contemporaneous columns followed by every column at each lag 1..lag.
RawData assemble_classification_dataset(const Eigen::MatrixXd& returns, const std::vector<int>& response_cols,
                                        int lag = 1);

/// Deterministic shuffled split and z-scoring by train statistics. Columns with
/// zero train SD are dropped and listed in `dropped_columns`.
Dataset split_standardize(const RawData& raw, const std::array<double, 3>& fractions, std::uint64_t seed);

/// Comma-separated numeric table. Throws IoError, EmptyInput, ParseError (1-based row/col).
Eigen::MatrixXd load_csv(const std::string& path, bool header = false);
Eigen::MatrixXd parse_csv(std::istream& in, bool header = false);
void write_csv(const std::string& path, const Eigen::MatrixXd& values, const std::vector<std::string>& header = {});

}  // namespace monde
