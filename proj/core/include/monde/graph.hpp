#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "monde/layers.hpp"
#include "monde/params.hpp"

namespace monde {

/// Tangent channels carried by every node. Each channel is a subset S of the
/// tangent directions and holds the mixed directional derivative along the
/// directions in S (the coefficient of prod_{i in S} eps_i in an algebra with
/// eps_i^2 = 0). Channel 0 is the primal value. The set is closed under
/// taking subsets.
class ChannelSet {
 public:
  using Mask = std::uint32_t;

  static ChannelSet primal();
  /// {}, {0}, ..., {n-1}: independent first-order tangents, no cross terms.
  static ChannelSet first_order(int directions);
  /// Every subset of n directions (n <= 4): all mixed partials up to order n.
  static ChannelSet mixed(int directions);
  /// Every subset of at most `order` of the n directions (order <= 4).
  static ChannelSet up_to_order(int directions, int order);

  int size() const { return static_cast<int>(masks_.size()); }
  int directions() const { return directions_; }
  int max_order() const { return max_order_; }
  Mask mask(int channel) const { return masks_[static_cast<std::size_t>(channel)]; }
  /// -1 when the subset is not tracked.
  int index_of(Mask mask) const;
  int order(int channel) const;

  /// Pairs (a, b) of channels with disjoint masks whose union is `channel`.
  const std::vector<std::pair<int, int>>& splits(int channel) const {
    return splits_[static_cast<std::size_t>(channel)];
  }
  /// Set partitions of `channel` into tracked blocks, each block a channel index.
  const std::vector<std::vector<int>>& partitions(int channel) const {
    return partitions_[static_cast<std::size_t>(channel)];
  }

 private:
  explicit ChannelSet(int directions, std::vector<Mask> masks);

  int directions_ = 0;
  int max_order_ = 0;
  std::vector<Mask> masks_;
  std::vector<std::vector<std::pair<int, int>>> splits_;
  std::vector<std::vector<std::vector<int>>> partitions_;
};

/// One tangent direction: seeds `direction` (broadcast over rows) into the
/// `input`-th input of the graph.
struct TangentDirection {
  int input = 0;
  Eigen::RowVectorXd direction;
};

enum class TangentOrder : std::uint8_t {
  first,  ///< first-order channel per direction
  mixed,  ///< every mixed partial over the listed directions (2..4 of them)
};

struct TangentRequest {
  std::vector<TangentDirection> directions;
  TangentOrder order = TangentOrder::first;

  ChannelSet channels() const;
};

struct NodeId {
  int index = -1;
  bool valid() const { return index >= 0; }
};

enum class OpKind : std::uint8_t {
  input,
  constant,
  affine,
  activation,
  product,
  concat,
  slice,
  sum,
  scale,
  add,
  extract,
};

/// Adjoint seed for backward: d loss / d (channel of node).
struct Seed {
  NodeId node;
  int channel = 0;
  Eigen::MatrixXd adjoint;
};

/// Define-by-run tape. Every op is evaluated as soon as it is added; values of
/// all tracked tangent channels are propagated alongside the primal. A single
/// backward pass then yields exact parameter gradients of any function of the
/// primal and tangent channels (reverse over forward).
///
/// A tape holds a reference to the ParamStore and must not outlive it.
class Graph {
 public:
  explicit Graph(const ParamStore& params, ChannelSet channels = ChannelSet::primal());
  Graph(const ParamStore& params, const TangentRequest& request);

  const ChannelSet& channels() const { return channels_; }
  const ParamStore& params() const { return params_; }

  /// Adds the next graph input; tangent seeds come from the request entries
  /// whose `input` equals the running input count.
  NodeId input(const Eigen::MatrixXd& value);
  /// Adds an input with explicit seeds: one (direction index, row vector) pair per seeded channel.
  NodeId input(const Eigen::MatrixXd& value,
               const std::vector<std::pair<int, Eigen::RowVectorXd>>& seeds);
  NodeId constant(const Eigen::MatrixXd& value);

  NodeId affine(const ConstrainedLinear& layer, NodeId in);
  NodeId activate(Activation act, NodeId in);
  /// affine followed by the layer's activation
  NodeId dense(const ConstrainedLinear& layer, NodeId in);
  NodeId product(NodeId a, NodeId b);
  NodeId concat(const std::vector<NodeId>& parts);
  NodeId slice(NodeId in, Eigen::Index col_begin, Eigen::Index col_count);
  /// Sum of every entry, 1x1 result.
  NodeId sum(NodeId in);
  NodeId scale(NodeId in, double factor);
  NodeId add(NodeId a, NodeId b);
  /// Promotes tangent channel `channel` of `in` to the primal of a new node.
  /// The new node carries no tangent channels of its own.
  NodeId extract(NodeId in, int channel);
  NodeId log(NodeId in) { return activate(Activation::log_clamped, in); }

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const Eigen::MatrixXd& value(NodeId node) const { return value(node, 0); }
  /// Value of a channel; structurally zero channels return a zero matrix.
  const Eigen::MatrixXd& value(NodeId node, int channel) const;
  bool is_zero(NodeId node, int channel) const;
  OpKind op(NodeId node) const { return nodes_.at(static_cast<std::size_t>(node.index)).op; }
  /// Entries clamped by log ops so far (pre-clamp density below the floor).
  int clamped_count() const { return clamped_; }

  /// Reverse pass; accumulates d loss / d free-parameters into `grad`
  /// (size = params().size()). Can run once per tape.
  void backward(std::span<const Seed> seeds, std::span<double> grad);
  /// Gradient of adjoint * sum(primal output).
  std::vector<double> backward_params(NodeId output, double adjoint);

 private:
  struct Node {
    OpKind op = OpKind::input;
    std::vector<int> parents;
    std::vector<Eigen::MatrixXd> value;    // per channel, empty => zero
    std::vector<Eigen::MatrixXd> adjoint;  // per channel, empty => zero
    // op payload
    std::size_t weight_block = 0;
    std::size_t bias_block = 0;
    Eigen::MatrixXd weight;
    Activation act = Activation::identity;
    std::vector<Eigen::ArrayXXd> derivs;
    Eigen::Index col_begin = 0;
    Eigen::Index col_count = 0;
    double factor = 1.0;
    int channel = 0;
  };

  Node& node(NodeId id);
  const Node& node(NodeId id) const;
  NodeId push(Node n);
  void check_finite(int index) const;
  Eigen::Index rows_of(const Node& n) const { return n.value[0].rows(); }
  Eigen::Index cols_of(const Node& n) const { return n.value[0].cols(); }
  static void accumulate(Eigen::MatrixXd& dst, const Eigen::MatrixXd& src);

  void backward_node(int index, std::span<double> grad);

  const ParamStore& params_;
  ChannelSet channels_;
  TangentRequest request_;
  std::vector<Node> nodes_;
  int inputs_ = 0;
  int clamped_ = 0;
  bool consumed_ = false;
  Eigen::MatrixXd zero_;
};

/// A graph-building function: receives the tape and its input nodes, returns the output node.
using GraphProgram = std::function<NodeId(Graph&, std::span<const NodeId>)>;

Eigen::MatrixXd eval_forward(const ParamStore& params, const GraphProgram& program,
                             std::span<const Eigen::MatrixXd> inputs);

struct TangentResult {
  Eigen::MatrixXd output;
  Eigen::MatrixXd d1;   // along direction 0
  Eigen::MatrixXd d2;   // along direction 1 (if requested)
  Eigen::MatrixXd d12;  // mixed second (if order == mixed)
  std::vector<Eigen::MatrixXd> channels;  // every tracked channel in ChannelSet order
};

TangentResult eval_with_tangents(const ParamStore& params, const GraphProgram& program,
                                 std::span<const Eigen::MatrixXd> inputs,
                                 const TangentRequest& request);

/// Parameter gradient of sum(primal output).
std::vector<double> program_gradient(const ParamStore& params, const GraphProgram& program,
                                     std::span<const Eigen::MatrixXd> inputs,
                                     const TangentRequest& request = {}, int loss_channel = 0);

/// Worst relative error between analytic and central-difference values of
/// (a) parameter gradients of sum(output) and (b) first-order input tangents
/// along every coordinate of every input. Denominator max(|a|, |n|, 1e-8).
/// Returns +inf if any probe fails numerically.
double finite_diff_check(const ParamStore& params, const GraphProgram& program,
                         std::span<const Eigen::MatrixXd> inputs, double h);

}  // namespace monde
