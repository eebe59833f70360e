#include "experiment.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "monde/errors.hpp"
#include "monde/io.hpp"

namespace monde::tools {

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "0.1.0";

/// Typed, path-aware access to one JSON object. Every key read is recorded so
/// leftovers can be reported as unknown fields.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }
  ~Section() = default;

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key), "has the wrong type");
    }
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) && !j_.at(key).is_null() ? j_.at(key) : empty, field(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<int> widths(Section& s, const std::string& key, std::vector<int> fallback) {
  auto w = s.get<std::vector<int>>(key, std::move(fallback));
  for (int v : w) {
    if (v < 1) throw ConfigError(s.field(key), "layer widths must be >= 1");
  }
  return w;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.output_dir) / name).string();
}

std::string pair_tag(int i, int j) { return std::to_string(i) + "_" + std::to_string(j); }

std::string q_tag(double q) {
  std::ostringstream s;
  s << "q" << static_cast<int>(std::lround(q * 100.0));
  return s.str();
}

std::vector<std::pair<int, int>> pairs_for(const ExperimentConfig& cfg, int K) {
  if (cfg.eval.pairs.empty()) return all_pairs(K);
  for (const auto& [i, j] : cfg.eval.pairs) {
    if (i < 0 || j < 0 || i >= K || j >= K || i == j) {
      throw ConfigError("eval.pairs", "pair (" + std::to_string(i) + ", " + std::to_string(j) + ") is invalid for " +
                                          std::to_string(K) + " responses");
    }
  }
  return cfg.eval.pairs;
}

RawData build_raw(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.generator) {
    GeneratorSpec g = *d.generator;
    g.seed = cfg.seed;
    return gen_synthetic(g);
  }
  Eigen::MatrixXd table = load_csv(d.csv_path, d.csv_header);
  if (d.csv_prices) table = log_losses(table);
  std::vector<int> responses = d.response_cols;
  if (responses.empty()) responses.push_back(static_cast<int>(table.cols()) - 1);
  try {
    RawData raw = assemble_classification_dataset(table, responses, d.lag);
    raw.provenance = "csv " + d.csv_path + (d.csv_prices ? " prices" : "") + " lag=" + std::to_string(d.lag);
    return raw;
  } catch (const InvalidDim& e) {
    throw ConfigError("dataset.response_cols", e.what());
  }
}

/// Standardized box spanning the 0.05% to 99.95% sample quantiles of the
/// conditioning rows, widened by a quarter on each side.
Box auto_box(const Dataset& data, const std::vector<Eigen::Index>& rows, int i, int j) {
  auto range = [&](int k) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) v[static_cast<Eigen::Index>(r)] = data.Y(rows[r], k);
    const double lo = percentile_threshold(v, 5e-4), hi = percentile_threshold(v, 1.0 - 5e-4);
    const double pad = 0.25 * (hi - lo);
    return std::make_pair(lo - pad, hi + pad);
  };
  const auto [lo0, hi0] = range(i);
  const auto [lo1, hi1] = range(j);
  return Box{lo0, hi0, lo1, hi1};
}

/// Rows of the conditioning mixture component, or every row.
std::vector<Eigen::Index> condition_rows(const ExperimentConfig& cfg, const Dataset& data) {
  std::vector<Eigen::Index> rows;
  const std::string prefix = "component-mean:";
  if (data.component.size() > 0 && cfg.eval.x_condition.rfind(prefix, 0) == 0) {
    const int c = std::stoi(cfg.eval.x_condition.substr(prefix.size()));
    for (Eigen::Index r = 0; r < data.component.size(); ++r) {
      if (data.component[r] == c) rows.push_back(r);
    }
  } else {
    for (Eigen::Index r = 0; r < data.Y.rows(); ++r) rows.push_back(r);
  }
  return rows;
}

json score_json(const SplitScore& s) {
  return {{"mean", s.mean}, {"std_error", s.std_error}, {"rows", s.rows}, {"clamped", s.clamped}};
}

json metric_test_ll(const ExperimentConfig&, const DensityModel& model, const Dataset& data) {
  json out;
  out["objective"] = model.family() == Family::pumonde && model.responses() > 2 ? "composite" : "log_likelihood";
  out["test"] = score_json(evaluate_split(model, data, Split::test));
  out["test_original_units"] = score_json(evaluate_split(model, data, Split::test, true));
  out["validation"] = score_json(evaluate_split(model, data, Split::validation));
  DiagonalGaussian baseline;
  baseline.fit(data.split_Y(Split::train));
  out["diagonal_gaussian_test"] = score_json(summarize(baseline.log_likelihood(data.split_Y(Split::test))));
  return out;
}

json metric_tail_classify(const ExperimentConfig& cfg, const DensityModel& model, const Dataset& data) {
  json out = json::object();
  for (double q : cfg.eval.q) {
    const auto t = tail_labels_scores(model, data, Split::test, q);
    json entry{{"q", q}, {"rows", t.labels.size()}, {"positives", t.labels.sum()}};
    try {
      const Curve roc = roc_auc(t.labels, t.scores);
      const Curve pr = pr_ap(t.labels, t.scores);
      roc.write_csv(out_path(cfg, "roc_" + q_tag(q) + ".csv"));
      pr.write_csv(out_path(cfg, "pr_" + q_tag(q) + ".csv"));
      entry["auc"] = roc.summary;
      entry["average_precision"] = pr.summary;
      entry["auc_permutation_se"] = auc_permutation_se(t.labels, t.scores, cfg.eval.permutations, cfg.seed);
    } catch (const OneClassOnly& e) {
      entry["error"] = e.what();
    }
    out[q_tag(q)] = entry;
  }
  return out;
}

json metric_tail_dep(const ExperimentConfig& cfg, const DensityModel& model, const Dataset& data) {
  json out = json::object();
  const auto u = cfg.eval.u_grid();
  const Eigen::RowVectorXd x = condition_row(cfg, data);

  // Empirical curves use the rows of the conditioning component when there is one.
  const auto rows = condition_rows(cfg, data);

  for (const auto& [i, j] : pairs_for(cfg, model.responses())) {
    json entry;
    try {
      const auto g = model_tail_dep(model, i, j, x, u);
      g.write_csv(out_path(cfg, "tail_dep_model_" + pair_tag(i, j) + ".csv"));
      entry["model_lower_first"] = g.lambda.front();
      entry["model_upper_last"] = g.lambda.back();
    } catch (const UnsupportedOp& e) {
      entry["model_error"] = e.what();
    } catch (const BracketFailure& e) {
      entry["model_error"] = e.what();
    }
    if (rows.size() >= 100) {
      Eigen::VectorXd yi(static_cast<Eigen::Index>(rows.size())), yj(yi.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        yi[static_cast<Eigen::Index>(r)] = data.Y(rows[r], i);
        yj[static_cast<Eigen::Index>(r)] = data.Y(rows[r], j);
      }
      const auto e = empirical_tail_dep(yi, yj, u);
      e.write_csv(out_path(cfg, "tail_dep_empirical_" + pair_tag(i, j) + ".csv"));
      entry["empirical_lower_first"] = e.lambda.front();
      entry["empirical_upper_last"] = e.lambda.back();
    }
    out[pair_tag(i, j)] = entry;
  }
  return out;
}

json metric_mi(const ExperimentConfig& cfg, const DensityModel& model, const Dataset& data) {
  json out = json::object();
  const Eigen::RowVectorXd x = condition_row(cfg, data);
  const auto rows = condition_rows(cfg, data);
  for (const auto& [i, j] : pairs_for(cfg, model.responses())) {
    json entry;
    try {
      const Box box = cfg.eval.mi_box ? *cfg.eval.mi_box : auto_box(data, rows, i, j);
      const auto mi = model_mutual_information(model, i, j, x, box, cfg.eval.mi_grid);
      entry = {{"mi", mi.mi}, {"mass", mi.mass}, {"box", {box.lo0, box.hi0, box.lo1, box.hi1}}};
    } catch (const UnsupportedOp& e) {
      entry["error"] = e.what();
    } catch (const NegativeMass& e) {
      entry["error"] = e.what();
    }
    out[pair_tag(i, j)] = entry;
  }
  return out;
}

json metric_pairwise_ll(const ExperimentConfig& cfg, const DensityModel& model, const Dataset& data) {
  const auto pairs = pairs_for(cfg, model.responses());
  const Eigen::VectorXd ll = pairwise_mean_ll(model, data, Split::test, pairs);
  std::ofstream csv(out_path(cfg, "pairwise_ll.csv"));
  if (!csv) throw IoError("cannot write pairwise_ll.csv");
  csv.precision(17);
  csv << "i,j,mean_ll\n";
  json out = json::object();
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    csv << pairs[p].first << ',' << pairs[p].second << ',' << ll[static_cast<Eigen::Index>(p)] << '\n';
    out[pair_tag(pairs[p].first, pairs[p].second)] = ll[static_cast<Eigen::Index>(p)];
  }
  return out;
}

using MetricFn = json (*)(const ExperimentConfig&, const DensityModel&, const Dataset&);

MetricFn metric_fn(const std::string& name) {
  if (name == "test_ll") return metric_test_ll;
  if (name == "tail_classify") return metric_tail_classify;
  if (name == "tail_dep") return metric_tail_dep;
  if (name == "mi") return metric_mi;
  if (name == "pairwise_ll") return metric_pairwise_ll;
  throw ConfigError("eval.metrics", "unknown metric '" + name + "'");
}

}  // namespace

std::vector<double> EvalConfig::u_grid() const {
  std::vector<double> u(static_cast<std::size_t>(u_n));
  for (int k = 0; k < u_n; ++k) {
    u[static_cast<std::size_t>(k)] = u_n == 1 ? u_lo : u_lo + (u_hi - u_lo) * k / (u_n - 1);
  }
  return u;
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "");
  cfg.seed = root.get<std::uint64_t>("seed", 0);
  cfg.output_dir = root.get<std::string>("output_dir", cfg.output_dir);

  {
    Section d = root.sub("dataset");
    const bool gen = d.has("generator");
    const bool csv = d.has("csv");
    if (gen == csv) throw ConfigError("dataset", "exactly one of 'generator' and 'csv' must be given");
    if (gen) {
      GeneratorSpec g;
      g.kind = generator_from_name(d.get<std::string>("generator", ""), "dataset.generator");
      g.n = d.get<long>("n", g.n);
      g.rho = d.get<double>("rho", g.rho);
      if (g.n < 1) throw ConfigError("dataset.n", "must be >= 1");
      if (!(std::abs(g.rho) < 1.0)) throw ConfigError("dataset.rho", "must lie in (-1, 1)");
      cfg.dataset.generator = g;
    } else {
      cfg.dataset.csv_path = d.get<std::string>("csv", "");
      cfg.dataset.csv_header = d.get<bool>("header", false);
      cfg.dataset.csv_prices = d.get<bool>("prices", false);
      cfg.dataset.response_cols = d.get<std::vector<int>>("response_cols", {});
      cfg.dataset.lag = d.get<int>("lag", 0);
      if (cfg.dataset.lag < 0) throw ConfigError("dataset.lag", "must be >= 0");
    }
    const auto split = d.get<std::vector<double>>("split", {0.6, 0.2, 0.2});
    if (split.size() != 3) throw ConfigError("dataset.split", "must hold three fractions");
    cfg.dataset.split = {split[0], split[1], split[2]};
    const double total = split[0] + split[1] + split[2];
    if (split[0] <= 0 || split[1] <= 0 || split[2] <= 0 || total > 1.0 + 1e-12) {
      throw ConfigError("dataset.split", "fractions must be positive and sum to at most 1");
    }
    d.finish();
  }

  {
    Section m = root.sub("model");
    auto& s = cfg.model;
    s.family = family_from_name(m.get<std::string>("family", "umonde"), "model.family");
    s.x_widths = widths(m, "x_widths", s.x_widths);
    s.y_widths = widths(m, "y_widths", s.y_widths);
    s.made_blocks = m.get<int>("made_blocks", s.made_blocks);
    s.made_layers = m.get<int>("made_layers", s.made_layers);
    s.corr_widths = widths(m, "corr_widths", s.corr_widths);
    s.hx_widths = widths(m, "hx_widths", s.hx_widths);
    s.hxy_widths = widths(m, "hxy_widths", s.hxy_widths);
    s.t_widths = widths(m, "t_widths", s.t_widths);
    if (s.made_blocks < 1) throw ConfigError("model.made_blocks", "must be >= 1");
    if (s.made_layers < 1) throw ConfigError("model.made_layers", "must be >= 1");
    if (s.y_widths.empty()) throw ConfigError("model.y_widths", "needs at least one layer");
    if (s.hxy_widths.empty()) throw ConfigError("model.hxy_widths", "needs at least one layer");
    m.finish();
  }

  {
    Section t = root.sub("training");
    auto& c = cfg.training;
    c.learning_rate = t.get<double>("learning_rate", c.learning_rate);
    c.batch_size = t.get<int>("batch_size", c.batch_size);
    c.max_epochs = t.get<int>("max_epochs", c.max_epochs);
    c.early_stop_patience = t.get<int>("early_stop_patience", c.early_stop_patience);
    c.plateau_patience = t.get<int>("plateau_patience", c.plateau_patience);
    c.beta1 = t.get<double>("beta1", c.beta1);
    c.beta2 = t.get<double>("beta2", c.beta2);
    c.epsilon = t.get<double>("epsilon", c.epsilon);
    c.batch_cap = t.get<long>("batch_cap", c.batch_cap);
    t.finish();
    c.validate();
  }

  {
    Section e = root.sub("eval");
    auto& c = cfg.eval;
    c.metrics = e.get<std::vector<std::string>>("metrics", c.metrics);
    for (const auto& name : c.metrics) metric_fn(name);
    c.q = e.get<std::vector<double>>("q", c.q);
    for (double q : c.q) {
      if (!(q > 0.0 && q < 1.0)) throw ConfigError("eval.q", "levels must lie in (0, 1)");
    }
    {
      Section u = e.sub("u_grid");
      c.u_lo = u.get<double>("lo", c.u_lo);
      c.u_hi = u.get<double>("hi", c.u_hi);
      c.u_n = u.get<int>("n", c.u_n);
      u.finish();
      if (!(c.u_lo > 0.0 && c.u_hi < 1.0 && c.u_lo <= c.u_hi) || c.u_n < 1) {
        throw ConfigError("eval.u_grid", "needs 0 < lo <= hi < 1 and n >= 1");
      }
    }
    for (const auto& p : e.get<std::vector<std::vector<int>>>("pairs", {})) {
      if (p.size() != 2) throw ConfigError("eval.pairs", "each pair needs two indices");
      c.pairs.emplace_back(p[0], p[1]);
    }
    if (e.has("x_condition")) {
      const json& xc = e.raw("x_condition");
      if (xc.is_string()) {
        c.x_condition = xc.get<std::string>();
        if (c.x_condition != "mean" && c.x_condition.rfind("component-mean:", 0) != 0) {
          throw ConfigError("eval.x_condition", "must be \"mean\", \"component-mean:<c>\" or a number array");
        }
        if (c.x_condition != "mean") {
          const std::string digits = c.x_condition.substr(std::string("component-mean:").size());
          if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) {
            throw ConfigError("eval.x_condition", "component index must be a non-negative integer");
          }
        }
      } else if (xc.is_array()) {
        try {
          c.x_values = xc.get<std::vector<double>>();
        } catch (const json::exception&) {
          throw ConfigError("eval.x_condition", "array entries must be numbers");
        }
        c.x_condition = "values";
      } else {
        throw ConfigError("eval.x_condition", "has the wrong type");
      }
    }
    {
      Section mi = e.sub("mi");
      if (mi.has("box")) {
        const auto b = mi.get<std::vector<double>>("box", {});
        if (b.size() != 4 || !(b[0] < b[1] && b[2] < b[3])) {
          throw ConfigError("eval.mi.box", "must be [lo0, hi0, lo1, hi1] with increasing bounds");
        }
        c.mi_box = Box{b[0], b[1], b[2], b[3]};
      }
      c.mi_grid = mi.get<int>("grid", c.mi_grid);
      if (c.mi_grid < 2) throw ConfigError("eval.mi.grid", "must be >= 2");
      mi.finish();
    }
    c.permutations = e.get<int>("permutations", c.permutations);
    if (c.permutations < 2) throw ConfigError("eval.permutations", "must be >= 2");
    e.finish();
  }
  root.finish();
  cfg.source = config_json(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

json config_json(const ExperimentConfig& cfg) {
  json d;
  if (cfg.dataset.generator) {
    d["generator"] = generator_name(cfg.dataset.generator->kind);
    d["n"] = cfg.dataset.generator->n;
    d["rho"] = cfg.dataset.generator->rho;
  } else {
    d["csv"] = cfg.dataset.csv_path;
    d["header"] = cfg.dataset.csv_header;
    d["prices"] = cfg.dataset.csv_prices;
    d["response_cols"] = cfg.dataset.response_cols;
    d["lag"] = cfg.dataset.lag;
  }
  d["split"] = cfg.dataset.split;
  const auto& s = cfg.model;
  json m{{"family", family_name(s.family)}, {"x_widths", s.x_widths},       {"y_widths", s.y_widths},
         {"made_blocks", s.made_blocks},    {"made_layers", s.made_layers}, {"corr_widths", s.corr_widths},
         {"hx_widths", s.hx_widths},        {"hxy_widths", s.hxy_widths},   {"t_widths", s.t_widths}};
  const auto& t = cfg.training;
  json tr{{"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"early_stop_patience", t.early_stop_patience},
          {"plateau_patience", t.plateau_patience},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.epsilon},
          {"batch_cap", t.batch_cap}};
  const auto& e = cfg.eval;
  json pairs = json::array();
  for (const auto& [i, j] : e.pairs) pairs.push_back({i, j});
  json ev{{"metrics", e.metrics},
          {"q", e.q},
          {"u_grid", {{"lo", e.u_lo}, {"hi", e.u_hi}, {"n", e.u_n}}},
          {"pairs", pairs},
          {"permutations", e.permutations}};
  ev["x_condition"] = e.x_condition == "values" ? json(e.x_values) : json(e.x_condition);
  ev["mi"] = {{"grid", e.mi_grid}};
  if (e.mi_box) ev["mi"]["box"] = {e.mi_box->lo0, e.mi_box->hi0, e.mi_box->lo1, e.mi_box->hi1};
  return {{"seed", cfg.seed}, {"output_dir", cfg.output_dir}, {"dataset", d}, {"model", m}, {"training", tr}, {"eval", ev}};
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = config_json(cfg);
  j.erase("output_dir");
  return hex64(fnv1a64(j.dump()));
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  return split_standardize(build_raw(cfg), cfg.dataset.split, cfg.seed);
}

std::unique_ptr<DensityModel> build_model(const ExperimentConfig& cfg, const Dataset& data) {
  ModelSpec spec = cfg.model;
  spec.covariates = data.covariates();
  spec.responses = data.responses();
  try {
    auto model = make_model(spec, cfg.seed);
    model->standardization = data.stats;
    return model;
  } catch (const InvalidDim& e) {
    throw ConfigError("model.family", e.what());
  }
}

Eigen::RowVectorXd condition_row(const ExperimentConfig& cfg, const Dataset& data) {
  const int D = data.covariates();
  const auto& e = cfg.eval;
  if (e.x_condition == "values") {
    if (static_cast<int>(e.x_values.size()) != D) {
      throw ConfigError("eval.x_condition", "needs " + std::to_string(D) + " values");
    }
    Eigen::RowVectorXd x(D);
    for (int j = 0; j < D; ++j) x[j] = (e.x_values[static_cast<std::size_t>(j)] - data.stats.x_mean[j]) / data.stats.x_sd[j];
    return x;
  }
  const std::string prefix = "component-mean:";
  if (e.x_condition.rfind(prefix, 0) == 0 && data.component.size() > 0) {
    const int c = std::stoi(e.x_condition.substr(prefix.size()));
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(D);
    long count = 0;
    for (Eigen::Index r : data.train) {
      if (data.component[r] != c) continue;
      sum += data.X.row(r);
      ++count;
    }
    if (count == 0) throw ConfigError("eval.x_condition", "component " + std::to_string(c) + " has no train rows");
    return sum / static_cast<double>(count);
  }
  // Train means are zero after standardization.
  return Eigen::RowVectorXd::Zero(D);
}

void write_manifest(const ExperimentConfig& cfg, const Dataset& data, const std::string& command) {
  ensure_dir(cfg.output_dir);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json m{{"command", command},
         {"tool_version", kToolVersion},
         {"model_format_version", kModelFormatVersion},
         {"config_hash", config_hash(cfg)},
         {"config", cfg.source},
         {"seed", cfg.seed},
         {"dataset",
          {{"provenance", data.provenance},
           {"rows", data.Y.rows()},
           {"covariates", data.covariates()},
           {"responses", data.responses()},
           {"split", data.fractions},
           {"split_rows", {data.train.size(), data.validation.size(), data.test.size()}},
           {"dropped_columns", data.dropped_columns}}},
         {"timestamp", stamp}};
  write_json(out_path(cfg, "manifest.json"), m);
}

void write_dataset(const ExperimentConfig& cfg, const Dataset& data) {
  ensure_dir(cfg.output_dir);
  const int D = data.covariates(), K = data.responses();
  Eigen::MatrixXd table(data.Y.rows(), D + K + 1);
  std::vector<std::string> header;
  for (int j = 0; j < D; ++j) {
    table.col(j) = data.X.col(j).array() * data.stats.x_sd[j] + data.stats.x_mean[j];
    header.push_back("x" + std::to_string(j));
  }
  for (int k = 0; k < K; ++k) {
    table.col(D + k) = data.Y.col(k).array() * data.stats.y_sd[k] + data.stats.y_mean[k];
    header.push_back("y" + std::to_string(k));
  }
  table.col(D + K).setConstant(-1.0);
  for (Eigen::Index r : data.train) table(r, D + K) = 0;
  for (Eigen::Index r : data.validation) table(r, D + K) = 1;
  for (Eigen::Index r : data.test) table(r, D + K) = 2;
  header.push_back("split");
  write_csv(out_path(cfg, "dataset.csv"), table, header);
  write_manifest(cfg, data, "generate");
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::vector<std::string>& metrics,
                         const std::string& model_path, const std::string& command) {
  RunResult r;
  r.data = build_dataset(cfg);
  ensure_dir(cfg.output_dir);
  if (model_path.empty()) {
    r.model = build_model(cfg, r.data);
    TrainConfig tc = cfg.training;
    tc.seed = cfg.seed;
    r.history = train(*r.model, r.data, tc);
    r.model->finalize_training(r.data.split_X(Split::train), r.data.split_Y(Split::train));
    save_model(*r.model, out_path(cfg, "model.json"));
    std::ofstream h(out_path(cfg, "history.csv"));
    if (!h) throw IoError("cannot write history.csv");
    r.history.write_csv(h);
  } else {
    r.model = load_model(model_path, cfg.model.family);
    if (r.model->covariates() != r.data.covariates() || r.model->responses() != r.data.responses()) {
      throw ConfigError("model", "saved model dimensions do not match the dataset");
    }
  }
  write_manifest(cfg, r.data, command);

  r.metrics = json::object();
  if (model_path.empty()) {
    r.metrics["training"] = {{"epochs", r.history.epochs.size()},
                             {"best_epoch", r.history.best_epoch},
                             {"best_val_ll", r.history.best_val_ll},
                             {"restarts", r.history.restarts()}};
  }
  for (const auto& name : metrics) {
    const json m = metric_fn(name)(cfg, *r.model, r.data);
    write_json(out_path(cfg, "metrics_" + name + ".json"), m);
    r.metrics[name] = m;
  }
  write_json(out_path(cfg, "metrics.json"), r.metrics);
  return r;
}

json run_pairwise(const ExperimentConfig& cfg, const std::vector<std::string>& model_paths) {
  const Dataset data = build_dataset(cfg);
  ensure_dir(cfg.output_dir);
  std::vector<std::unique_ptr<DensityModel>> models;
  for (const auto& p : model_paths) models.push_back(load_model(p));
  const auto pairs = pairs_for(cfg, data.responses());
  Eigen::MatrixXd ll(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(models.size()));
  for (std::size_t m = 0; m < models.size(); ++m) {
    ll.col(static_cast<Eigen::Index>(m)) = pairwise_mean_ll(*models[m], data, Split::test, pairs);
  }
  const Eigen::MatrixXi wins = pairwise_ll_wins(ll);

  std::vector<std::string> header{"i", "j"};
  Eigen::MatrixXd table(ll.rows(), ll.cols() + 2);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    table(static_cast<Eigen::Index>(p), 0) = pairs[p].first;
    table(static_cast<Eigen::Index>(p), 1) = pairs[p].second;
  }
  table.rightCols(ll.cols()) = ll;
  for (std::size_t m = 0; m < models.size(); ++m) header.push_back("model" + std::to_string(m));
  write_csv(out_path(cfg, "pairwise_ll.csv"), table, header);
  write_csv(out_path(cfg, "pairwise_wins.csv"), wins.cast<double>(), {});
  write_manifest(cfg, data, "pairwise-ll");

  json out{{"models", model_paths}, {"pairs", pairs.size()}};
  out["wins"] = json::array();
  for (Eigen::Index r = 0; r < wins.rows(); ++r) {
    json jr = json::array();
    for (Eigen::Index c = 0; c < wins.cols(); ++c) jr.push_back(wins(r, c));
    out["wins"].push_back(jr);
  }
  write_json(out_path(cfg, "metrics_pairwise_wins.json"), out);
  return out;
}

}  // namespace monde::tools
