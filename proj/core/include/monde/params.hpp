#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace monde {

/// Per-entry constraint of a weight matrix.
enum class WeightTag : std::uint8_t {
  free,    ///< effective = stored value
  nonneg,  ///< effective = stored value squared
  zero,    ///< effective = 0, gradient = 0
};

char tag_char(WeightTag tag);
WeightTag tag_from_char(char c);

/// Non-negative reparameterization used for monotone weights.
inline double nonneg_reparam(double free) { return free * free; }

/// A named matrix of free parameters inside a ParamStore. Entries are stored
/// column-major so that a block maps directly onto an Eigen matrix.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<WeightTag> tags;  // column-major, rows*cols entries

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

/// Flat array of free parameters plus the layout that gives it meaning.
class ParamStore {
 public:
  /// Appends a block; an empty tag vector means every entry is free.
  std::size_t add_block(std::string name, Eigen::Index rows, Eigen::Index cols,
                        std::vector<WeightTag> tags = {});

  std::size_t size() const { return values_.size(); }
  std::size_t block_count() const { return blocks_.size(); }
  const ParamBlock& block(std::size_t index) const { return blocks_.at(index); }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t block_index(std::string_view name) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  void assign(std::span<const double> values);

  Eigen::Map<const Eigen::MatrixXd> free_matrix(std::size_t block) const;
  Eigen::Map<Eigen::MatrixXd> free_matrix(std::size_t block);

  /// Weight matrix after applying the per-entry constraints.
  Eigen::MatrixXd effective(std::size_t block) const;

  /// Chain rule through the reparameterization: maps a gradient with respect
  /// to the effective matrix onto the free entries and adds it to `grad`.
  void accumulate_block_gradient(std::size_t block, const Eigen::MatrixXd& effective_grad,
                                 std::span<double> grad) const;

  /// Zeroes every masked entry so stored values match the effective weights.
  void clear_masked();

  bool same_layout(const ParamStore& other) const;

 private:
  std::vector<double> values_;
  std::vector<ParamBlock> blocks_;
};

}  // namespace monde
