#include "monde/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "monde/errors.hpp"

namespace monde {

namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "MONDE-MODEL";

json matrix_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.size(); ++i) data.push_back(m.data()[i]);
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};  // column-major
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw FormatError("matrix size does not match its data");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
  return m;
}

json row_json(const Eigen::RowVectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::RowVectorXd row_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json spec_json(const ModelSpec& s) {
  return {{"family", family_name(s.family)},
          {"covariates", s.covariates},
          {"responses", s.responses},
          {"x_widths", s.x_widths},
          {"y_widths", s.y_widths},
          {"made_blocks", s.made_blocks},
          {"made_layers", s.made_layers},
          {"corr_widths", s.corr_widths},
          {"hx_widths", s.hx_widths},
          {"hxy_widths", s.hxy_widths},
          {"t_widths", s.t_widths}};
}

ModelSpec spec_from(const json& j) {
  ModelSpec s;
  s.family = family_from_name(j.at("family").get<std::string>(), "spec.family");
  s.covariates = j.at("covariates").get<int>();
  s.responses = j.at("responses").get<int>();
  s.x_widths = j.at("x_widths").get<std::vector<int>>();
  s.y_widths = j.at("y_widths").get<std::vector<int>>();
  s.made_blocks = j.at("made_blocks").get<int>();
  s.made_layers = j.at("made_layers").get<int>();
  s.corr_widths = j.at("corr_widths").get<std::vector<int>>();
  s.hx_widths = j.at("hx_widths").get<std::vector<int>>();
  s.hxy_widths = j.at("hxy_widths").get<std::vector<int>>();
  s.t_widths = j.at("t_widths").get<std::vector<int>>();
  return s;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string serialize_model(const DensityModel& model) {
  const auto& p = model.params();
  json layout = json::array();
  for (const auto& b : p.blocks()) layout.push_back({b.name, b.rows, b.cols});
  const auto& st = model.standardization;
  json payload = {
      {"spec", spec_json(model.spec())},
      {"layout", layout},
      {"params", std::vector<double>(p.values().begin(), p.values().end())},
      {"standardization",
       {{"x_mean", row_json(st.x_mean)},
        {"x_sd", row_json(st.x_sd)},
        {"y_mean", row_json(st.y_mean)},
        {"y_sd", row_json(st.y_sd)}}},
      {"extra_state", matrix_json(model.extra_state())},
  };
  const std::string body = payload.dump(1) + "\n";
  std::ostringstream out;
  out << kMagic << ' ' << kModelFormatVersion << ' ' << hex64(fnv1a64(body)) << ' ' << body.size() << '\n' << body;
  return out.str();
}

std::unique_ptr<DensityModel> deserialize_model(const std::string& text, std::optional<Family> expected) {
  const auto eol = text.find('\n');
  if (eol == std::string::npos) throw FormatError("model file has no header line");
  std::istringstream header(text.substr(0, eol));
  std::string magic, checksum;
  int version = 0;
  std::size_t bytes = 0;
  if (!(header >> magic >> version >> checksum >> bytes) || magic != kMagic) {
    throw FormatError("not a model file");
  }
  if (version != kModelFormatVersion) {
    throw FormatError("model format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kModelFormatVersion) + ")");
  }
  const std::string_view body = std::string_view(text).substr(eol + 1);
  if (body.size() != bytes || hex64(fnv1a64(body)) != checksum) {
    throw ChecksumFailure("model payload does not match its checksum");
  }

  try {
    const json payload = json::parse(body);
    const ModelSpec spec = spec_from(payload.at("spec"));
    if (expected && *expected != spec.family) {
      throw FamilyMismatch("model file holds a " + family_name(spec.family) + " model, expected " +
                           family_name(*expected));
    }
    auto model = make_model(spec);
    const auto& layout = payload.at("layout");
    const auto& blocks = model->params().blocks();
    if (layout.size() != blocks.size()) throw FormatError("parameter layout does not match the model spec");
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if (layout[b].at(0).get<std::string>() != blocks[b].name || layout[b].at(1).get<Eigen::Index>() != blocks[b].rows ||
          layout[b].at(2).get<Eigen::Index>() != blocks[b].cols) {
        throw FormatError("parameter block " + std::to_string(b) + " does not match the model spec");
      }
    }
    const auto values = payload.at("params").get<std::vector<double>>();
    if (values.size() != model->params().size()) throw FormatError("parameter count does not match the model spec");
    model->params().assign(values);
    const auto& st = payload.at("standardization");
    model->standardization.x_mean = row_from(st.at("x_mean"));
    model->standardization.x_sd = row_from(st.at("x_sd"));
    model->standardization.y_mean = row_from(st.at("y_mean"));
    model->standardization.y_sd = row_from(st.at("y_sd"));
    const Eigen::MatrixXd extra = matrix_from(payload.at("extra_state"));
    if (extra.size() > 0) model->set_extra_state(extra);
    return model;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model payload: ") + e.what());
  } catch (const InvalidDim& e) {
    throw FormatError(std::string("invalid model spec: ") + e.what());
  } catch (const UnknownFamily& e) {
    throw FormatError(e.what());
  }
}

void save_model(const DensityModel& model, const std::string& path) {
  const std::string text = serialize_model(model);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out << text;
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

std::unique_ptr<DensityModel> load_model(const std::string& path, std::optional<Family> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return deserialize_model(s.str(), expected);
}

}  // namespace monde
