#include "monde/params.hpp"

#include <algorithm>

#include "monde/errors.hpp"

namespace monde {

char tag_char(WeightTag tag) {
  switch (tag) {
    case WeightTag::free:
      return 'f';
    case WeightTag::nonneg:
      return 'n';
    case WeightTag::zero:
      return 'z';
  }
  return '?';
}

WeightTag tag_from_char(char c) {
  switch (c) {
    case 'f':
      return WeightTag::free;
    case 'n':
      return WeightTag::nonneg;
    case 'z':
      return WeightTag::zero;
    default:
      throw FormatError(std::string("unknown weight tag '") + c + "'");
  }
}

std::size_t ParamStore::add_block(std::string name, Eigen::Index rows, Eigen::Index cols,
                                  std::vector<WeightTag> tags) {
  if (rows < 0 || cols < 0) throw InvalidDim("negative block shape for " + name);
  const auto n = static_cast<std::size_t>(rows * cols);
  if (tags.empty()) tags.assign(n, WeightTag::free);
  if (tags.size() != n) throw ShapeMismatch("tag count does not match block shape for " + name);
  ParamBlock block{std::move(name), values_.size(), rows, cols, std::move(tags)};
  values_.resize(values_.size() + n, 0.0);
  blocks_.push_back(std::move(block));
  return blocks_.size() - 1;
}

std::size_t ParamStore::block_index(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return i;
  }
  throw InvalidDim("no parameter block named " + std::string(name));
}

void ParamStore::assign(std::span<const double> values) {
  if (values.size() != values_.size()) throw ShapeMismatch("parameter vector size mismatch");
  std::copy(values.begin(), values.end(), values_.begin());
}

Eigen::Map<const Eigen::MatrixXd> ParamStore::free_matrix(std::size_t block) const {
  const auto& b = blocks_.at(block);
  return {values_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<Eigen::MatrixXd> ParamStore::free_matrix(std::size_t block) {
  const auto& b = blocks_.at(block);
  return {values_.data() + b.offset, b.rows, b.cols};
}

Eigen::MatrixXd ParamStore::effective(std::size_t block) const {
  const auto& b = blocks_.at(block);
  Eigen::MatrixXd out(b.rows, b.cols);
  double* dst = out.data();
  const double* src = values_.data() + b.offset;
  for (std::size_t i = 0; i < b.size(); ++i) {
    switch (b.tags[i]) {
      case WeightTag::free:
        dst[i] = src[i];
        break;
      case WeightTag::nonneg:
        dst[i] = nonneg_reparam(src[i]);
        break;
      case WeightTag::zero:
        dst[i] = 0.0;
        break;
    }
  }
  return out;
}

void ParamStore::accumulate_block_gradient(std::size_t block, const Eigen::MatrixXd& effective_grad,
                                           std::span<double> grad) const {
  const auto& b = blocks_.at(block);
  const double* g = effective_grad.data();
  const double* src = values_.data() + b.offset;
  double* dst = grad.data() + b.offset;
  for (std::size_t i = 0; i < b.size(); ++i) {
    switch (b.tags[i]) {
      case WeightTag::free:
        dst[i] += g[i];
        break;
      case WeightTag::nonneg:
        dst[i] += 2.0 * src[i] * g[i];
        break;
      case WeightTag::zero:
        break;
    }
  }
}

void ParamStore::clear_masked() {
  for (const auto& b : blocks_) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b.tags[i] == WeightTag::zero) values_[b.offset + i] = 0.0;
    }
  }
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (blocks_.size() != other.blocks_.size() || values_.size() != other.values_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& a = blocks_[i];
    const auto& b = other.blocks_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.tags != b.tags) return false;
  }
  return true;
}

}  // namespace monde
