#include "monde/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <limits>
#include <random>

#include "monde/errors.hpp"

namespace monde {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.precision(17);
  return out;
}

struct Counts {
  long pos = 0;
  long neg = 0;
};

Counts class_counts(const Eigen::VectorXi& labels) {
  Counts c;
  for (Eigen::Index i = 0; i < labels.size(); ++i) (labels[i] != 0 ? c.pos : c.neg) += 1;
  return c;
}

/// Row indices ordered by descending score; ties keep index order.
std::vector<Eigen::Index> descending(const Eigen::VectorXd& scores) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores[a] > scores[b]; });
  return order;
}

/// Cumulative (true positives, false positives) after each group of tied scores.
std::vector<std::pair<long, long>> tie_groups(const Eigen::VectorXi& labels, const Eigen::VectorXd& scores) {
  if (labels.size() != scores.size()) throw ShapeMismatch("labels and scores differ in length");
  const auto order = descending(scores);
  std::vector<std::pair<long, long>> out;
  long tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (labels[order[k]] != 0 ? tp : fp) += 1;
    if (k + 1 == order.size() || scores[order[k + 1]] != scores[order[k]]) out.emplace_back(tp, fp);
  }
  return out;
}

double auc_value(const Eigen::VectorXi& labels, const Eigen::VectorXd& scores, Curve* curve) {
  const Counts c = class_counts(labels);
  if (c.pos == 0 || c.neg == 0) throw OneClassOnly("ROC needs both classes");
  const auto groups = tie_groups(labels, scores);
  double auc = 0.0, px = 0.0, py = 0.0;
  if (curve) {
    curve->x.assign(1, 0.0);
    curve->y.assign(1, 0.0);
  }
  for (const auto& [tp, fp] : groups) {
    const double x = static_cast<double>(fp) / static_cast<double>(c.neg);
    const double y = static_cast<double>(tp) / static_cast<double>(c.pos);
    auc += (x - px) * (y + py) * 0.5;
    px = x;
    py = y;
    if (curve) {
      curve->x.push_back(x);
      curve->y.push_back(y);
    }
  }
  return auc;
}

Eigen::MatrixXd repeat_row(const Eigen::RowVectorXd& x, Eigen::Index n) { return x.replicate(n, 1); }

}  // namespace

void Curve::write_csv(const std::string& path) const {
  auto out = open_out(path);
  out << x_label << ',' << y_label << ',' << summary_label << '\n';
  for (std::size_t k = 0; k < x.size(); ++k) out << x[k] << ',' << y[k] << ',' << summary << '\n';
  if (!out) throw IoError("failed writing " + path);
}

Eigen::RowVectorXd tail_thresholds(const Dataset& data, double q) {
  const Eigen::MatrixXd Y = data.split_Y(Split::train);
  Eigen::RowVectorXd t(Y.cols());
  for (Eigen::Index k = 0; k < Y.cols(); ++k) t[k] = percentile_threshold(Y.col(k), q);
  return t;
}

TailLabels tail_labels_scores(const DensityModel& model, const Dataset& data, Split split, double q) {
  TailLabels out;
  out.thresholds = tail_thresholds(data, q);
  const Eigen::MatrixXd X = data.split_X(split);
  const Eigen::MatrixXd Y = data.split_Y(split);
  out.labels.resize(Y.rows());
  for (Eigen::Index r = 0; r < Y.rows(); ++r) {
    out.labels[r] = (Y.row(r).array() > out.thresholds.array()).any() ? 1 : 0;
  }
  const Eigen::VectorXd F = model.joint_cdf(X, repeat_row(out.thresholds, Y.rows()));
  out.scores = 1.0 - F.array();
  return out;
}

Curve roc_auc(const Eigen::VectorXi& labels, const Eigen::VectorXd& scores) {
  Curve c;
  c.x_label = "fpr";
  c.y_label = "tpr";
  c.summary_label = "auc";
  c.summary = auc_value(labels, scores, &c);
  return c;
}

Curve pr_ap(const Eigen::VectorXi& labels, const Eigen::VectorXd& scores) {
  const Counts n = class_counts(labels);
  if (n.pos == 0) throw NoPositives("average precision needs a positive label");
  Curve c;
  c.x_label = "recall";
  c.y_label = "precision";
  c.summary_label = "average_precision";
  double prev_recall = 0.0;
  for (const auto& [tp, fp] : tie_groups(labels, scores)) {
    const double recall = static_cast<double>(tp) / static_cast<double>(n.pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    c.summary += (recall - prev_recall) * precision;
    prev_recall = recall;
    c.x.push_back(recall);
    c.y.push_back(precision);
  }
  return c;
}

double auc_permutation_se(const Eigen::VectorXi& labels, const Eigen::VectorXd& scores, int permutations,
                          std::uint64_t seed) {
  if (permutations < 2) throw ConfigError("eval.permutations", "must be >= 2");
  std::mt19937_64 rng(seed);
  Eigen::VectorXi shuffled = labels;
  Eigen::VectorXd aucs(permutations);
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(shuffled.data(), shuffled.data() + shuffled.size(), rng);
    aucs[p] = auc_value(shuffled, scores, nullptr);
  }
  const double mean = aucs.mean();
  return std::sqrt((aucs.array() - mean).square().sum() / (permutations - 1));
}

double TailDepGrid::at(double target) const {
  if (u.empty()) throw EmptyInput("tail-dependence grid is empty");
  std::size_t best = 0;
  for (std::size_t k = 1; k < u.size(); ++k) {
    if (std::abs(u[k] - target) < std::abs(u[best] - target)) best = k;
  }
  return lambda[best];
}

void TailDepGrid::write_csv(const std::string& path) const {
  auto out = open_out(path);
  out << "u,lambda,empty_bucket\n";
  for (std::size_t k = 0; k < u.size(); ++k) out << u[k] << ',' << lambda[k] << ',' << (empty_bucket[k] ? 1 : 0) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

std::vector<double> default_u_grid() {
  std::vector<double> u(99);
  for (int k = 0; k < 99; ++k) u[static_cast<std::size_t>(k)] = 0.005 + 0.01 * k;
  return u;
}

TailDepGrid empirical_tail_dep(const Eigen::VectorXd& yi, const Eigen::VectorXd& yj, const std::vector<double>& u) {
  if (yi.size() != yj.size()) throw ShapeMismatch("tail-dependence samples differ in length");
  const Eigen::Index n = yi.size();
  if (n < 100) throw EmptyInput("empirical tail dependence needs at least 100 rows");
  std::vector<double> si(yi.data(), yi.data() + n), sj(yj.data(), yj.data() + n);
  std::sort(si.begin(), si.end());
  std::sort(sj.begin(), sj.end());
  // Empirical quantile: smallest sample value whose ECDF reaches u.
  auto quantile = [n](const std::vector<double>& s, double p) {
    auto rank = static_cast<Eigen::Index>(std::ceil(p * static_cast<double>(n) - 1e-9));
    rank = std::clamp<Eigen::Index>(rank, 1, n);
    return s[static_cast<std::size_t>(rank - 1)];
  };

  TailDepGrid g;
  g.source = "empirical";
  g.u = u;
  for (double p : u) {
    const double qi = quantile(si, p), qj = quantile(sj, p);
    const bool lower = p <= 0.5;
    long num = 0, den = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const bool in_i = lower ? yi[r] <= qi : yi[r] > qi;
      if (!in_i) continue;
      ++den;
      if (lower ? yj[r] <= qj : yj[r] > qj) ++num;
    }
    g.empty_bucket.push_back(den == 0);
    g.lambda.push_back(den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den));
  }
  return g;
}

double quantile_invert(const std::function<double(double)>& cdf, double p, Bracket bracket) {
  Eigen::VectorXd pv(1);
  pv[0] = p;
  const auto batch = [&](const Eigen::VectorXd& y) {
    Eigen::VectorXd f(y.size());
    for (Eigen::Index k = 0; k < y.size(); ++k) f[k] = cdf(y[k]);
    return f;
  };
  return quantile_invert_batch(batch, pv, bracket)[0];
}

Eigen::VectorXd quantile_invert_batch(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& cdf,
                                      const Eigen::VectorXd& p, Bracket bracket) {
  // Bisect to a narrow bracket rather than |F - p| < tol so deep-tail levels are located accurately too.
  constexpr double kWidthTol = 1e-12;
  constexpr int kMaxDoublings = 10;
  constexpr int kMaxIter = 200;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (!(p[k] > 0.0 && p[k] < 1.0)) throw BracketFailure("quantile level must lie in (0, 1)");
  }
  if (!(bracket.lo < bracket.hi)) throw BracketFailure("empty initial bracket");
  const Eigen::Index n = p.size();
  const double center = 0.5 * (bracket.lo + bracket.hi);
  const double half = 0.5 * (bracket.hi - bracket.lo);

  Eigen::VectorXd lo = Eigen::VectorXd::Constant(n, bracket.lo);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(n, bracket.hi);
  for (int d = 0;; ++d) {
    const Eigen::VectorXd flo = cdf(lo), fhi = cdf(hi);
    bool ok = true;
    const double width = half * std::ldexp(1.0, d + 1);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (flo[k] > p[k]) {
        ok = false;
        lo[k] = center - width;
      }
      if (fhi[k] < p[k]) {
        ok = false;
        hi[k] = center + width;
      }
    }
    if (ok) break;
    if (d == kMaxDoublings) {
      throw BracketFailure("CDF does not bracket the requested level within 2^10 times the initial bracket");
    }
  }

  Eigen::VectorXd mid = 0.5 * (lo + hi);
  std::vector<bool> done(static_cast<std::size_t>(n), false);
  for (int it = 0; it < kMaxIter; ++it) {
    mid = 0.5 * (lo + hi);
    const Eigen::VectorXd f = cdf(mid);
    bool all_done = true;
    for (Eigen::Index k = 0; k < n; ++k) {
      auto&& dk = done[static_cast<std::size_t>(k)];
      if (dk) continue;
      if (f[k] == p[k] || hi[k] - lo[k] <= kWidthTol * std::max(1.0, std::abs(mid[k]))) {
        dk = true;
        lo[k] = hi[k] = mid[k];
        continue;
      }
      all_done = false;
      (f[k] < p[k] ? lo[k] : hi[k]) = mid[k];
    }
    if (all_done) break;
  }
  return mid;
}

TailDepGrid tail_dep_from_cdf(const std::function<double(double, double)>& pair_cdf,
                              const std::function<double(double)>& quantile_i,
                              const std::function<double(double)>& quantile_j, const std::vector<double>& u) {
  TailDepGrid g;
  g.source = "model";
  g.u = u;
  for (double p : u) {
    const double f = pair_cdf(quantile_i(p), quantile_j(p));
    const double lambda = p <= 0.5 ? f / p : (1.0 - 2.0 * p + f) / (1.0 - p);
    g.lambda.push_back(std::clamp(lambda, 0.0, 1.0));
    g.empty_bucket.push_back(false);
  }
  return g;
}

TailDepGrid model_tail_dep(const DensityModel& model, int i, int j, const Eigen::RowVectorXd& x,
                           const std::vector<double>& u) {
  const auto n = static_cast<Eigen::Index>(u.size());
  const Eigen::MatrixXd X = repeat_row(x, n);
  const Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(u.data(), n);
  auto marginal = [&](int k) {
    return quantile_invert_batch([&](const Eigen::VectorXd& y) { return model.marginal_cdf(X, y, k); }, p);
  };
  const Eigen::VectorXd qi = marginal(i), qj = marginal(j);
  const Eigen::VectorXd F = model.pair_cdf(X, qi, qj, i, j);

  TailDepGrid g;
  g.source = "model";
  g.u = u;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double lambda = p[k] <= 0.5 ? F[k] / p[k] : (1.0 - 2.0 * p[k] + F[k]) / (1.0 - p[k]);
    g.lambda.push_back(std::clamp(lambda, 0.0, 1.0));
    g.empty_bucket.push_back(false);
  }
  return g;
}

MutualInformation mutual_information_quadrature(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>& logpdf, const Box& box,
    int grid_n) {
  if (grid_n < 2) throw ConfigError("eval.mi.grid", "must be >= 2");
  if (!(box.lo0 < box.hi0 && box.lo1 < box.hi1)) throw ConfigError("eval.mi.box", "bounds must be increasing");
  const Eigen::Index n = grid_n;
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(n, box.lo0, box.hi0);
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(n, box.lo1, box.hi1);
  auto weights = [n](double h) {
    Eigen::VectorXd w = Eigen::VectorXd::Constant(n, h);
    w[0] = w[n - 1] = 0.5 * h;
    return w;
  };
  const Eigen::VectorXd wa = weights((box.hi0 - box.lo0) / static_cast<double>(n - 1));
  const Eigen::VectorXd wb = weights((box.hi1 - box.lo1) / static_cast<double>(n - 1));

  // Column-major grid: entry (r, c) sits at (a[r], b[c]).
  Eigen::VectorXd ya(n * n), yb(n * n);
  for (Eigen::Index c = 0; c < n; ++c) {
    ya.segment(c * n, n) = a;
    yb.segment(c * n, n).setConstant(b[c]);
  }
  const Eigen::VectorXd lf = logpdf(ya, yb);
  if (lf.size() != n * n) throw ShapeMismatch("log-density returned the wrong number of values");
  Eigen::MatrixXd f(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const double v = std::exp(lf[c * n + r]);
      f(r, c) = (std::isfinite(v) && v >= 1e-300) ? v : 0.0;
    }
  }

  MutualInformation out;
  out.mass = wa.dot(f * wb);
  if (!(out.mass >= 0.9 && out.mass <= 1.05)) {
    throw NegativeMass("density mass " + std::to_string(out.mass) + " on the quadrature box is outside [0.9, 1.05]");
  }
  const Eigen::VectorXd fa = f * wb;                // marginal of the first coordinate
  const Eigen::VectorXd fb = f.transpose() * wa;    // marginal of the second coordinate
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const double v = f(r, c);
      if (v == 0.0) continue;
      out.mi += wa[r] * wb[c] * v * (std::log(v) - std::log(fa[r]) - std::log(fb[c]));
    }
  }
  return out;
}

MutualInformation model_mutual_information(const DensityModel& model, int i, int j, const Eigen::RowVectorXd& x,
                                           const Box& box, int grid_n) {
  constexpr Eigen::Index kChunk = 8192;
  auto logpdf = [&](const Eigen::VectorXd& yi, const Eigen::VectorXd& yj) {
    Eigen::VectorXd out(yi.size());
    for (Eigen::Index s = 0; s < yi.size(); s += kChunk) {
      const Eigen::Index len = std::min(kChunk, yi.size() - s);
      out.segment(s, len) = model.pair_logpdf(repeat_row(x, len), yi.segment(s, len), yj.segment(s, len), i, j);
    }
    return out;
  };
  return mutual_information_quadrature(logpdf, box, grid_n);
}

std::vector<std::pair<int, int>> all_pairs(int K) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < K; ++i) {
    for (int j = i + 1; j < K; ++j) pairs.emplace_back(i, j);
  }
  return pairs;
}

Eigen::VectorXd pairwise_mean_ll(const DensityModel& model, const Dataset& data, Split split,
                                 const std::vector<std::pair<int, int>>& pairs) {
  const Eigen::MatrixXd X = data.split_X(split);
  const Eigen::MatrixXd Y = data.split_Y(split);
  if (Y.rows() == 0) throw EmptyInput(split_name(split) + " split is empty");
  Eigen::VectorXd out(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    out[static_cast<Eigen::Index>(p)] = model.pair_logpdf(X, Y.col(i), Y.col(j), i, j).mean();
  }
  return out;
}

Eigen::MatrixXi pairwise_ll_wins(const Eigen::MatrixXd& mean_ll) {
  const Eigen::Index m = mean_ll.cols();
  Eigen::MatrixXi wins = Eigen::MatrixXi::Zero(m, m);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < m; ++c) {
      if (r == c) continue;
      wins(r, c) = static_cast<int>((mean_ll.col(r).array() > mean_ll.col(c).array()).count());
    }
  }
  return wins;
}

Eigen::MatrixXi pairwise_ll_wins(const std::vector<const DensityModel*>& models, const Dataset& data, Split split,
                                 const std::vector<std::pair<int, int>>& pairs) {
  Eigen::MatrixXd ll(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(models.size()));
  for (std::size_t m = 0; m < models.size(); ++m) {
    ll.col(static_cast<Eigen::Index>(m)) = pairwise_mean_ll(*models[m], data, split, pairs);
  }
  return pairwise_ll_wins(ll);
}

}  // namespace monde
