#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "monde/data.hpp"
#include "monde/models.hpp"

namespace monde {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 128;
  int max_epochs = 200;
  int early_stop_patience = 30;
  int plateau_patience = 10;  // epochs without improvement before the batch doubles
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::uint64_t seed = 0;
  long batch_cap = 0;  // 0 means the train-split size

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct OptimState {
  std::vector<double> m, v;
  long step = 0;

  OptimState() = default;
  explicit OptimState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One Adam update (descent direction: params -= lr * mhat / (sqrt(vhat) + eps)).
/// Throws NonFiniteGradient without touching params or state.
void adam_step(std::span<double> params, std::span<const double> grads, OptimState& state,
               const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean negative objective over the epoch's batches
  double val_ll = 0.0;      // mean validation objective after the epoch
  long batch_size = 0;      // batch size in effect after the epoch's policy decisions
  std::string event;        // "", "restart", "plateau-double", "early-stop"
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 when no epoch improved on the initial parameters
  double best_val_ll = 0.0;

  void write_csv(std::ostream& out) const;
  std::string to_csv() const;
  long restarts() const;
};

/// Test hooks. `inject_nan(epoch, batch)` returning true replaces that batch's loss with NaN.
struct TrainHooks {
  std::function<bool(int epoch, long batch)> inject_nan;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Maximizes the mean training objective with Adam, batch doubling on
/// non-finite losses and validation plateaus, and early stopping. Leaves the
/// model at the best validation epoch. Throws TrainingDiverged.
TrainHistory train(DensityModel& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

struct SplitScore {
  double mean = 0.0;
  double std_error = 0.0;  // sample SD / sqrt(n); 0 for a single row
  long rows = 0;
  long clamped = 0;
};

SplitScore summarize(const Eigen::VectorXd& values);

/// Per-row objective on a split. With `original_units`, the log-likelihood is
/// mapped back through the response standardization.
Eigen::VectorXd split_log_likelihood(const DensityModel& model, const Dataset& data, Split split,
                                     bool original_units = false, long* clamped = nullptr);
SplitScore evaluate_split(const DensityModel& model, const Dataset& data, Split split, bool original_units = false);

}  // namespace monde
