#include "monde/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "monde/errors.hpp"

namespace monde {

namespace {

struct Snapshot {
  std::vector<double> params;
  OptimState optim;
  Eigen::MatrixXd extra;
};

Snapshot take_snapshot(const DensityModel& model, const OptimState& optim) {
  const auto v = model.params().values();
  return {std::vector<double>(v.begin(), v.end()), optim, model.extra_state()};
}

void restore(DensityModel& model, const Snapshot& s) {
  model.params().assign(s.params);
  if (s.extra.size() > 0) model.set_extra_state(s.extra);
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("training.learning_rate", "must be finite and >= 0");
  }
  if (batch_size < 1) throw ConfigError("training.batch_size", "must be >= 1");
  if (max_epochs < 0) throw ConfigError("training.max_epochs", "must be >= 0");
  if (early_stop_patience < 1) throw ConfigError("training.early_stop_patience", "must be >= 1");
  if (plateau_patience < 1) throw ConfigError("training.plateau_patience", "must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("training.beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("training.beta2", "must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("training.epsilon", "must be > 0");
  if (batch_cap < 0) throw ConfigError("training.batch_cap", "must be >= 0");
}

void adam_step(std::span<double> params, std::span<const double> grads, OptimState& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeMismatch("parameter, gradient and optimizer sizes differ");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw NonFiniteGradient("gradient has a non-finite entry");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

void TrainHistory::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,val_ll,batch_size,event\n";
  const auto old = out.precision(17);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_ll << ',' << e.batch_size << ',' << e.event << '\n';
  }
  out.precision(old);
}

std::string TrainHistory::to_csv() const {
  std::ostringstream s;
  write_csv(s);
  return s.str();
}

long TrainHistory::restarts() const {
  return std::count_if(epochs.begin(), epochs.end(), [](const EpochRecord& e) { return e.event == "restart"; });
}

SplitScore summarize(const Eigen::VectorXd& values) {
  SplitScore s;
  s.rows = values.size();
  if (s.rows == 0) return s;
  s.mean = values.mean();
  if (s.rows > 1) {
    const double var = (values.array() - s.mean).square().sum() / static_cast<double>(s.rows - 1);
    s.std_error = std::sqrt(var / static_cast<double>(s.rows));
  }
  return s;
}

Eigen::VectorXd split_log_likelihood(const DensityModel& model, const Dataset& data, Split split,
                                     bool original_units, long* clamped) {
  const auto ll = model.log_likelihood(data.split_X(split), data.split_Y(split));
  if (clamped) *clamped = ll.clamped;
  if (!original_units) return ll.rows;
  return ll.rows.array() - model.log_sd_multiplicity() * data.stats.log_sd_sum();
}

SplitScore evaluate_split(const DensityModel& model, const Dataset& data, Split split, bool original_units) {
  if (data.indices(split).empty()) throw EmptyInput(split_name(split) + " split is empty");
  long clamped = 0;
  auto s = summarize(split_log_likelihood(model, data, split, original_units, &clamped));
  s.clamped = clamped;
  return s;
}

TrainHistory train(DensityModel& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (data.train.empty() || data.validation.empty()) throw EmptyInput("training needs train and validation rows");
  const Eigen::MatrixXd Xtr = data.split_X(Split::train);
  const Eigen::MatrixXd Ytr = data.split_Y(Split::train);
  const Eigen::MatrixXd Xva = data.split_X(Split::validation);
  const Eigen::MatrixXd Yva = data.split_Y(Split::validation);
  const auto n = static_cast<long>(Ytr.rows());
  const long cap = cfg.batch_cap > 0 ? std::min(cfg.batch_cap, n) : n;
  long batch = std::min<long>(cfg.batch_size, cap);

  std::mt19937_64 rng(cfg.seed);
  OptimState optim(model.params().size());
  auto validation_ll = [&] { return model.log_likelihood(Xva, Yva).rows.mean(); };

  model.prepare_epoch(Xtr, Ytr);
  TrainHistory history;
  history.best_val_ll = validation_ll();
  if (!std::isfinite(history.best_val_ll)) history.best_val_ll = -std::numeric_limits<double>::infinity();
  Snapshot best = take_snapshot(model, optim);
  Snapshot last_good = best;

  int since_improve = 0;
  int since_plateau = 0;
  int failures_at_cap = 0;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::vector<double> grad;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    const long batch_used = batch;
    double loss_sum = 0.0;
    bool failed = false;
    long b = 0;
    for (long begin = 0; begin < n; begin += batch, ++b) {
      const long len = std::min(batch, n - begin);
      Eigen::MatrixXd Xb(len, Xtr.cols()), Yb(len, Ytr.cols());
      for (long i = 0; i < len; ++i) {
        const Eigen::Index r = order[static_cast<std::size_t>(begin + i)];
        Xb.row(i) = Xtr.row(r);
        Yb.row(i) = Ytr.row(r);
      }
      double objective = std::numeric_limits<double>::quiet_NaN();
      try {
        objective = model.objective_gradient(Xb, Yb, grad);
      } catch (const NumericalFailure&) {
        failed = true;
        break;
      }
      if (hooks.inject_nan && hooks.inject_nan(epoch, b)) objective = std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(objective) || !all_finite(grad)) {
        failed = true;
        break;
      }
      for (double& g : grad) g = -g;  // maximize the objective
      adam_step(model.params().values(), grad, optim, cfg);
      loss_sum -= objective * static_cast<double>(len);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    double val = std::numeric_limits<double>::quiet_NaN();
    if (!failed) {
      model.prepare_epoch(Xtr, Ytr);
      try {
        val = validation_ll();
      } catch (const NumericalFailure&) {
        val = std::numeric_limits<double>::quiet_NaN();
      }
      failed = !std::isfinite(val);
    }

    if (failed) {
      restore(model, last_good);
      optim = last_good.optim;
      if (batch_used >= cap) {
        if (++failures_at_cap >= 2) {
          throw TrainingDiverged("non-finite loss twice at the maximum batch size " + std::to_string(cap));
        }
      } else {
        failures_at_cap = 0;
      }
      batch = std::min(2 * batch, cap);
      rec.train_loss = std::numeric_limits<double>::quiet_NaN();
      rec.val_ll = std::numeric_limits<double>::quiet_NaN();
      rec.batch_size = batch;
      rec.event = "restart";
      history.epochs.push_back(rec);
      if (hooks.on_epoch) hooks.on_epoch(rec);
      continue;
    }

    failures_at_cap = 0;
    last_good = take_snapshot(model, optim);
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val_ll = val;
    if (val > history.best_val_ll) {
      history.best_val_ll = val;
      history.best_epoch = epoch;
      best = last_good;
      since_improve = 0;
      since_plateau = 0;
    } else {
      ++since_improve;
      ++since_plateau;
    }
    if (since_plateau >= cfg.plateau_patience && batch < cap) {
      batch = std::min(2 * batch, cap);
      since_plateau = 0;
      rec.event = "plateau-double";
    }
    const bool stop = since_improve >= cfg.early_stop_patience;
    if (stop) rec.event = "early-stop";
    rec.batch_size = batch;
    history.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (stop) break;
  }

  restore(model, best);
  return history;
}

}  // namespace monde
