#include "monde/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "monde/errors.hpp"

namespace monde {

namespace {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::input:
      return "input";
    case OpKind::constant:
      return "constant";
    case OpKind::affine:
      return "affine";
    case OpKind::activation:
      return "activation";
    case OpKind::product:
      return "product";
    case OpKind::concat:
      return "concat";
    case OpKind::slice:
      return "slice";
    case OpKind::sum:
      return "sum";
    case OpKind::scale:
      return "scale";
    case OpKind::add:
      return "add";
    case OpKind::extract:
      return "extract";
  }
  return "?";
}

bool empty(const Eigen::MatrixXd& m) { return m.size() == 0; }

}  // namespace

// ---------------------------------------------------------------- ChannelSet

ChannelSet::ChannelSet(int directions, std::vector<Mask> masks)
    : directions_(directions), masks_(std::move(masks)) {
  const auto n = masks_.size();
  splits_.resize(n);
  partitions_.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    const Mask m = masks_[c];
    max_order_ = std::max(max_order_, std::popcount(m));
    // Enumerate every submask t of m, including 0 and m itself.
    for (Mask t = m;; t = (t - 1) & m) {
      const int a = index_of(t);
      const int b = index_of(m & ~t);
      if (a >= 0 && b >= 0) splits_[c].emplace_back(a, b);
      if (t == 0) break;
    }
    if (m == 0) continue;
    // Set partitions: the block holding the lowest remaining bit is chosen first.
    std::vector<int> current;
    std::function<void(Mask)> recurse = [&](Mask rest) {
      if (rest == 0) {
        partitions_[c].push_back(current);
        return;
      }
      const Mask low = rest & (~rest + 1);
      const Mask others = rest & ~low;
      for (Mask sub = others;; sub = (sub - 1) & others) {
        const Mask block = sub | low;
        const int idx = index_of(block);
        if (idx >= 0) {
          current.push_back(idx);
          recurse(rest & ~block);
          current.pop_back();
        }
        if (sub == 0) break;
      }
    };
    recurse(m);
  }
}

ChannelSet ChannelSet::primal() { return ChannelSet(0, {0u}); }

ChannelSet ChannelSet::first_order(int directions) {
  if (directions < 0 || directions > 31) throw InvalidDim("unsupported number of tangent directions");
  std::vector<Mask> masks{0u};
  for (int d = 0; d < directions; ++d) masks.push_back(Mask{1} << d);
  return ChannelSet(directions, std::move(masks));
}

ChannelSet ChannelSet::mixed(int directions) {
  if (directions < 0 || directions > 4) {
    throw UnsupportedOp("mixed tangents support at most 4 directions, got " +
                        std::to_string(directions));
  }
  std::vector<Mask> masks;
  for (Mask m = 0; m < (Mask{1} << directions); ++m) masks.push_back(m);
  return ChannelSet(directions, std::move(masks));
}

ChannelSet ChannelSet::up_to_order(int directions, int order) {
  if (directions < 0 || directions > 31) throw InvalidDim("unsupported number of tangent directions");
  if (order < 0 || order > 4) throw UnsupportedOp("tangent order above 4 is not supported");
  std::vector<Mask> masks;
  const std::uint64_t end = std::uint64_t{1} << directions;
  for (std::uint64_t m = 0; m < end; ++m) {
    if (std::popcount(m) <= order) masks.push_back(static_cast<Mask>(m));
  }
  return ChannelSet(directions, std::move(masks));
}

int ChannelSet::index_of(Mask mask) const {
  for (std::size_t i = 0; i < masks_.size(); ++i) {
    if (masks_[i] == mask) return static_cast<int>(i);
  }
  return -1;
}

int ChannelSet::order(int channel) const { return std::popcount(mask(channel)); }

ChannelSet TangentRequest::channels() const {
  const int n = static_cast<int>(directions.size());
  if (order == TangentOrder::mixed) {
    if (n < 2) throw InvalidDim("mixed tangents need at least two direction entries");
    return ChannelSet::mixed(n);
  }
  return ChannelSet::first_order(n);
}

// --------------------------------------------------------------------- Graph

Graph::Graph(const ParamStore& params, ChannelSet channels)
    : params_(params), channels_(std::move(channels)) {}

Graph::Graph(const ParamStore& params, const TangentRequest& request)
    : params_(params), channels_(request.channels()), request_(request) {}

Graph::Node& Graph::node(NodeId id) {
  if (id.index < 0 || id.index >= node_count()) throw ShapeMismatch("invalid node id");
  return nodes_[static_cast<std::size_t>(id.index)];
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id.index < 0 || id.index >= node_count()) throw ShapeMismatch("invalid node id");
  return nodes_[static_cast<std::size_t>(id.index)];
}

NodeId Graph::push(Node n) {
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  nodes_.push_back(std::move(n));
  const int index = node_count() - 1;
  check_finite(index);
  return NodeId{index};
}

void Graph::check_finite(int index) const {
  const auto& n = nodes_[static_cast<std::size_t>(index)];
  for (const auto& v : n.value) {
    if (!empty(v) && !v.allFinite()) throw NumericalFailure(index, op_name(n.op));
  }
}

void Graph::accumulate(Eigen::MatrixXd& dst, const Eigen::MatrixXd& src) {
  if (empty(dst)) {
    dst = src;
  } else {
    dst += src;
  }
}

const Eigen::MatrixXd& Graph::value(NodeId id, int channel) const {
  const auto& n = node(id);
  const auto& v = n.value.at(static_cast<std::size_t>(channel));
  if (!empty(v)) return v;
  auto& zero = const_cast<Eigen::MatrixXd&>(zero_);
  zero = Eigen::MatrixXd::Zero(n.value[0].rows(), n.value[0].cols());
  return zero_;
}

bool Graph::is_zero(NodeId id, int channel) const {
  return empty(node(id).value.at(static_cast<std::size_t>(channel)));
}

NodeId Graph::input(const Eigen::MatrixXd& value) {
  std::vector<std::pair<int, Eigen::RowVectorXd>> seeds;
  for (std::size_t d = 0; d < request_.directions.size(); ++d) {
    if (request_.directions[d].input == inputs_) {
      seeds.emplace_back(static_cast<int>(d), request_.directions[d].direction);
    }
  }
  return input(value, seeds);
}

NodeId Graph::input(const Eigen::MatrixXd& value,
                    const std::vector<std::pair<int, Eigen::RowVectorXd>>& seeds) {
  ++inputs_;
  Node n;
  n.op = OpKind::input;
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  n.value[0] = value;
  for (const auto& [direction, vec] : seeds) {
    if (vec.size() != value.cols()) {
      throw ShapeMismatch("tangent direction has " + std::to_string(vec.size()) +
                          " entries, input has " + std::to_string(value.cols()) + " columns");
    }
    const int c = channels_.index_of(ChannelSet::Mask{1} << direction);
    if (c < 0) throw InvalidDim("direction not tracked by the channel set");
    Eigen::MatrixXd seeded = Eigen::VectorXd::Ones(value.rows()) * vec;
    accumulate(n.value[static_cast<std::size_t>(c)], seeded);
  }
  return push(std::move(n));
}

NodeId Graph::constant(const Eigen::MatrixXd& value) {
  Node n;
  n.op = OpKind::constant;
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  n.value[0] = value;
  return push(std::move(n));
}

NodeId Graph::affine(const ConstrainedLinear& layer, NodeId in) {
  const auto& src = node(in);
  if (cols_of(src) != layer.in_dim) {
    throw ShapeMismatch("layer " + layer.name + " expects " + std::to_string(layer.in_dim) +
                        " inputs, got " + std::to_string(cols_of(src)));
  }
  Node n;
  n.op = OpKind::affine;
  n.parents = {in.index};
  n.weight_block = layer.weight_block;
  n.bias_block = layer.bias_block;
  n.weight = params_.effective(layer.weight_block);
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  n.value[0] = src.value[0] * n.weight;
  n.value[0].rowwise() += params_.free_matrix(layer.bias_block).col(0).transpose();
  for (int c = 1; c < channels_.size(); ++c) {
    const auto& v = src.value[static_cast<std::size_t>(c)];
    if (!empty(v)) n.value[static_cast<std::size_t>(c)] = v * n.weight;
  }
  return push(std::move(n));
}

NodeId Graph::activate(Activation act, NodeId in) {
  const auto& src = node(in);
  Node n;
  n.op = OpKind::activation;
  n.parents = {in.index};
  n.act = act;
  const int order = channels_.max_order();
  activation_derivatives(act, src.value[0].array(), order + 1, n.derivs);
  if (act == Activation::log_clamped) {
    clamped_ += static_cast<int>((src.value[0].array() < kDensityFloor).count());
  }
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  n.value[0] = n.derivs[0].matrix();
  for (int c = 1; c < channels_.size(); ++c) {
    Eigen::ArrayXXd acc;
    for (const auto& blocks : channels_.partitions(c)) {
      bool zero = false;
      for (int b : blocks) zero = zero || empty(src.value[static_cast<std::size_t>(b)]);
      if (zero) continue;
      Eigen::ArrayXXd term = n.derivs[blocks.size()];
      for (int b : blocks) term *= src.value[static_cast<std::size_t>(b)].array();
      if (acc.size() == 0) {
        acc = std::move(term);
      } else {
        acc += term;
      }
    }
    if (acc.size() != 0) n.value[static_cast<std::size_t>(c)] = acc.matrix();
  }
  return push(std::move(n));
}

NodeId Graph::dense(const ConstrainedLinear& layer, NodeId in) {
  return activate(layer.activation, affine(layer, in));
}

NodeId Graph::product(NodeId a, NodeId b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  if (rows_of(na) != rows_of(nb) || cols_of(na) != cols_of(nb)) {
    throw ShapeMismatch("product operands differ in shape");
  }
  Node n;
  n.op = OpKind::product;
  n.parents = {a.index, b.index};
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  for (int c = 0; c < channels_.size(); ++c) {
    Eigen::MatrixXd acc;
    for (const auto& [p, q] : channels_.splits(c)) {
      const auto& va = na.value[static_cast<std::size_t>(p)];
      const auto& vb = nb.value[static_cast<std::size_t>(q)];
      if (empty(va) || empty(vb)) continue;
      accumulate(acc, (va.array() * vb.array()).matrix());
    }
    n.value[static_cast<std::size_t>(c)] = std::move(acc);
  }
  if (empty(n.value[0])) n.value[0] = Eigen::MatrixXd::Zero(rows_of(na), cols_of(na));
  return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  Node n;
  n.op = OpKind::concat;
  const Eigen::Index rows = rows_of(node(parts[0]));
  Eigen::Index cols = 0;
  for (auto p : parts) {
    const auto& src = node(p);
    if (rows_of(src) != rows) throw ShapeMismatch("concat operands differ in row count");
    n.parents.push_back(p.index);
    cols += cols_of(src);
  }
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  for (int c = 0; c < channels_.size(); ++c) {
    bool any = false;
    for (auto p : parts) any = any || !empty(node(p).value[static_cast<std::size_t>(c)]);
    if (!any) continue;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
    Eigen::Index offset = 0;
    for (auto p : parts) {
      const auto& src = node(p);
      const auto& v = src.value[static_cast<std::size_t>(c)];
      if (!empty(v)) out.middleCols(offset, v.cols()) = v;
      offset += cols_of(src);
    }
    n.value[static_cast<std::size_t>(c)] = std::move(out);
  }
  return push(std::move(n));
}

NodeId Graph::slice(NodeId in, Eigen::Index col_begin, Eigen::Index col_count) {
  const auto& src = node(in);
  if (col_begin < 0 || col_count < 0 || col_begin + col_count > cols_of(src)) {
    throw ShapeMismatch("slice out of range");
  }
  Node n;
  n.op = OpKind::slice;
  n.parents = {in.index};
  n.col_begin = col_begin;
  n.col_count = col_count;
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  for (int c = 0; c < channels_.size(); ++c) {
    const auto& v = src.value[static_cast<std::size_t>(c)];
    if (!empty(v)) n.value[static_cast<std::size_t>(c)] = v.middleCols(col_begin, col_count);
  }
  return push(std::move(n));
}

NodeId Graph::sum(NodeId in) {
  const auto& src = node(in);
  Node n;
  n.op = OpKind::sum;
  n.parents = {in.index};
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  for (int c = 0; c < channels_.size(); ++c) {
    const auto& v = src.value[static_cast<std::size_t>(c)];
    if (!empty(v)) n.value[static_cast<std::size_t>(c)] = Eigen::MatrixXd::Constant(1, 1, v.sum());
  }
  if (empty(n.value[0])) n.value[0] = Eigen::MatrixXd::Zero(1, 1);
  return push(std::move(n));
}

NodeId Graph::scale(NodeId in, double factor) {
  const auto& src = node(in);
  Node n;
  n.op = OpKind::scale;
  n.parents = {in.index};
  n.factor = factor;
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  for (int c = 0; c < channels_.size(); ++c) {
    const auto& v = src.value[static_cast<std::size_t>(c)];
    if (!empty(v)) n.value[static_cast<std::size_t>(c)] = factor * v;
  }
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  if (rows_of(na) != rows_of(nb) || cols_of(na) != cols_of(nb)) {
    throw ShapeMismatch("add operands differ in shape");
  }
  Node n;
  n.op = OpKind::add;
  n.parents = {a.index, b.index};
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  for (int c = 0; c < channels_.size(); ++c) {
    Eigen::MatrixXd acc;
    const auto& va = na.value[static_cast<std::size_t>(c)];
    const auto& vb = nb.value[static_cast<std::size_t>(c)];
    if (!empty(va)) accumulate(acc, va);
    if (!empty(vb)) accumulate(acc, vb);
    n.value[static_cast<std::size_t>(c)] = std::move(acc);
  }
  return push(std::move(n));
}

NodeId Graph::extract(NodeId in, int channel) {
  if (channel < 0 || channel >= channels_.size()) throw InvalidDim("channel out of range");
  const auto& src = node(in);
  Node n;
  n.op = OpKind::extract;
  n.parents = {in.index};
  n.channel = channel;
  n.value.resize(static_cast<std::size_t>(channels_.size()));
  const auto& v = src.value[static_cast<std::size_t>(channel)];
  n.value[0] = empty(v) ? Eigen::MatrixXd::Zero(rows_of(src), cols_of(src)) : v;
  return push(std::move(n));
}

// ------------------------------------------------------------------ backward

std::vector<double> Graph::backward_params(NodeId output, double adjoint) {
  std::vector<double> grad(params_.size(), 0.0);
  const auto& out = node(output);
  Seed seed{output, 0, Eigen::MatrixXd::Constant(rows_of(out), cols_of(out), adjoint)};
  backward(std::span<const Seed>(&seed, 1), grad);
  return grad;
}

void Graph::backward(std::span<const Seed> seeds, std::span<double> grad) {
  if (consumed_) throw TapeConsumed();
  if (grad.size() != params_.size()) throw ShapeMismatch("gradient buffer size mismatch");
  consumed_ = true;
  for (auto& n : nodes_) n.adjoint.assign(static_cast<std::size_t>(channels_.size()), {});
  for (const auto& s : seeds) {
    auto& n = node(s.node);
    if (s.adjoint.rows() != rows_of(n) || s.adjoint.cols() != cols_of(n)) {
      throw ShapeMismatch("seed shape does not match node");
    }
    accumulate(n.adjoint.at(static_cast<std::size_t>(s.channel)), s.adjoint);
  }
  for (int i = node_count() - 1; i >= 0; --i) backward_node(i, grad);
  for (auto& n : nodes_) n.adjoint.clear();
}

void Graph::backward_node(int index, std::span<double> grad) {
  auto& n = nodes_[static_cast<std::size_t>(index)];
  bool any = false;
  for (const auto& a : n.adjoint) any = any || !empty(a);
  if (!any) return;
  const int C = channels_.size();
  auto parent = [&](std::size_t k) -> Node& { return nodes_[static_cast<std::size_t>(n.parents[k])]; };
  auto wants = [&](const Node& p) { return p.op != OpKind::input && p.op != OpKind::constant; };

  switch (n.op) {
    case OpKind::input:
    case OpKind::constant:
      return;
    case OpKind::affine: {
      auto& p = parent(0);
      Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(n.weight.rows(), n.weight.cols());
      for (int c = 0; c < C; ++c) {
        const auto& adj = n.adjoint[static_cast<std::size_t>(c)];
        if (empty(adj)) continue;
        const auto& in = p.value[static_cast<std::size_t>(c)];
        if (!empty(in)) gw.noalias() += in.transpose() * adj;
        if (wants(p)) accumulate(p.adjoint[static_cast<std::size_t>(c)], adj * n.weight.transpose());
      }
      params_.accumulate_block_gradient(n.weight_block, gw, grad);
      if (!empty(n.adjoint[0])) {
        const auto& bias = params_.block(n.bias_block);
        const Eigen::RowVectorXd gb = n.adjoint[0].colwise().sum();
        for (Eigen::Index j = 0; j < gb.size(); ++j) grad[bias.offset + static_cast<std::size_t>(j)] += gb(j);
      }
      return;
    }
    case OpKind::activation: {
      auto& p = parent(0);
      if (!wants(p)) return;
      auto& g = p.adjoint;
      for (int c = 0; c < C; ++c) {
        const auto& adj = n.adjoint[static_cast<std::size_t>(c)];
        if (empty(adj)) continue;
        if (c == 0) {
          accumulate(g[0], (adj.array() * n.derivs[1]).matrix());
          continue;
        }
        for (const auto& blocks : channels_.partitions(c)) {
          bool zero = false;
          for (int b : blocks) zero = zero || empty(p.value[static_cast<std::size_t>(b)]);
          if (zero) continue;
          const std::size_t k = blocks.size();
          Eigen::ArrayXXd prod = adj.array();
          for (int b : blocks) prod *= p.value[static_cast<std::size_t>(b)].array();
          accumulate(g[0], (prod * n.derivs[k + 1]).matrix());
          for (std::size_t i = 0; i < k; ++i) {
            Eigen::ArrayXXd part = adj.array() * n.derivs[k];
            for (std::size_t j = 0; j < k; ++j) {
              if (j != i) part *= p.value[static_cast<std::size_t>(blocks[j])].array();
            }
            accumulate(g[static_cast<std::size_t>(blocks[i])], part.matrix());
          }
        }
      }
      return;
    }
    case OpKind::product: {
      auto& a = parent(0);
      auto& b = parent(1);
      const bool wa = wants(a);
      const bool wb = wants(b);
      // Snapshot operand values; a and b may be the same node.
      for (int c = 0; c < C; ++c) {
        const auto& adj = n.adjoint[static_cast<std::size_t>(c)];
        if (empty(adj)) continue;
        for (const auto& [pa, pb] : channels_.splits(c)) {
          const auto& va = a.value[static_cast<std::size_t>(pa)];
          const auto& vb = b.value[static_cast<std::size_t>(pb)];
          if (wa && !empty(vb)) {
            accumulate(a.adjoint[static_cast<std::size_t>(pa)], (adj.array() * vb.array()).matrix());
          }
          if (wb && !empty(va)) {
            accumulate(b.adjoint[static_cast<std::size_t>(pb)], (adj.array() * va.array()).matrix());
          }
        }
      }
      return;
    }
    case OpKind::concat: {
      Eigen::Index offset = 0;
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        auto& p = parent(k);
        const Eigen::Index w = cols_of(p);
        if (wants(p)) {
          for (int c = 0; c < C; ++c) {
            const auto& adj = n.adjoint[static_cast<std::size_t>(c)];
            if (!empty(adj)) accumulate(p.adjoint[static_cast<std::size_t>(c)], adj.middleCols(offset, w));
          }
        }
        offset += w;
      }
      return;
    }
    case OpKind::slice: {
      auto& p = parent(0);
      if (!wants(p)) return;
      for (int c = 0; c < C; ++c) {
        const auto& adj = n.adjoint[static_cast<std::size_t>(c)];
        if (empty(adj)) continue;
        auto& dst = p.adjoint[static_cast<std::size_t>(c)];
        if (empty(dst)) dst = Eigen::MatrixXd::Zero(rows_of(p), cols_of(p));
        dst.middleCols(n.col_begin, n.col_count) += adj;
      }
      return;
    }
    case OpKind::sum: {
      auto& p = parent(0);
      if (!wants(p)) return;
      for (int c = 0; c < C; ++c) {
        const auto& adj = n.adjoint[static_cast<std::size_t>(c)];
        if (empty(adj)) continue;
        accumulate(p.adjoint[static_cast<std::size_t>(c)],
                   Eigen::MatrixXd::Constant(rows_of(p), cols_of(p), adj(0, 0)));
      }
      return;
    }
    case OpKind::scale: {
      auto& p = parent(0);
      if (!wants(p)) return;
      for (int c = 0; c < C; ++c) {
        const auto& adj = n.adjoint[static_cast<std::size_t>(c)];
        if (!empty(adj)) accumulate(p.adjoint[static_cast<std::size_t>(c)], n.factor * adj);
      }
      return;
    }
    case OpKind::add: {
      for (std::size_t k = 0; k < 2; ++k) {
        auto& p = parent(k);
        if (!wants(p)) continue;
        for (int c = 0; c < C; ++c) {
          const auto& adj = n.adjoint[static_cast<std::size_t>(c)];
          if (!empty(adj)) accumulate(p.adjoint[static_cast<std::size_t>(c)], adj);
        }
      }
      return;
    }
    case OpKind::extract: {
      auto& p = parent(0);
      if (!wants(p) || empty(n.adjoint[0])) return;
      accumulate(p.adjoint[static_cast<std::size_t>(n.channel)], n.adjoint[0]);
      return;
    }
  }
}

// ------------------------------------------------------------ free functions

Eigen::MatrixXd eval_forward(const ParamStore& params, const GraphProgram& program,
                             std::span<const Eigen::MatrixXd> inputs) {
  Graph g(params);
  std::vector<NodeId> ids;
  for (const auto& in : inputs) ids.push_back(g.input(in));
  return g.value(program(g, ids));
}

TangentResult eval_with_tangents(const ParamStore& params, const GraphProgram& program,
                                 std::span<const Eigen::MatrixXd> inputs,
                                 const TangentRequest& request) {
  for (const auto& d : request.directions) {
    if (d.input < 0 || d.input >= static_cast<int>(inputs.size())) {
      throw ShapeMismatch("tangent direction refers to a missing input");
    }
  }
  Graph g(params, request);
  std::vector<NodeId> ids;
  for (const auto& in : inputs) ids.push_back(g.input(in));
  const NodeId out = program(g, ids);
  TangentResult r;
  const auto& ch = g.channels();
  for (int c = 0; c < ch.size(); ++c) r.channels.push_back(g.value(out, c));
  r.output = r.channels[0];
  if (ch.directions() >= 1) r.d1 = r.channels[static_cast<std::size_t>(ch.index_of(1u))];
  if (ch.directions() >= 2) r.d2 = r.channels[static_cast<std::size_t>(ch.index_of(2u))];
  if (request.order == TangentOrder::mixed) {
    r.d12 = r.channels[static_cast<std::size_t>(ch.index_of(3u))];
  }
  return r;
}

std::vector<double> program_gradient(const ParamStore& params, const GraphProgram& program,
                                     std::span<const Eigen::MatrixXd> inputs,
                                     const TangentRequest& request, int loss_channel) {
  Graph g(params, request);
  std::vector<NodeId> ids;
  for (const auto& in : inputs) ids.push_back(g.input(in));
  const NodeId out = program(g, ids);
  const auto& v = g.value(out);
  Seed seed{out, loss_channel, Eigen::MatrixXd::Ones(v.rows(), v.cols())};
  std::vector<double> grad(params.size(), 0.0);
  g.backward(std::span<const Seed>(&seed, 1), grad);
  return grad;
}

namespace {

double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double finite_diff_check(const ParamStore& params, const GraphProgram& program,
                         std::span<const Eigen::MatrixXd> inputs, double h) {
  if (!(h > 0)) throw InvalidDim("finite-difference step must be positive");
  double worst = 0.0;
  try {
    const auto analytic = program_gradient(params, program, inputs);
    ParamStore probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double base = params.values()[i];
      probe.values()[i] = base + h;
      const double up = eval_forward(probe, program, inputs).sum();
      probe.values()[i] = base - h;
      const double down = eval_forward(probe, program, inputs).sum();
      probe.values()[i] = base;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * h)));
    }
    std::vector<Eigen::MatrixXd> shifted(inputs.begin(), inputs.end());
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
        TangentRequest req;
        Eigen::RowVectorXd dir = Eigen::RowVectorXd::Zero(inputs[k].cols());
        dir(j) = 1.0;
        req.directions.push_back({static_cast<int>(k), dir});
        const auto tangent = eval_with_tangents(params, program, inputs, req).d1;
        shifted[k].col(j).array() += h;
        const Eigen::MatrixXd up = eval_forward(params, program, shifted);
        shifted[k].col(j).array() -= 2 * h;
        const Eigen::MatrixXd down = eval_forward(params, program, shifted);
        shifted[k].col(j) = inputs[k].col(j);
        const Eigen::MatrixXd numeric = (up - down) / (2 * h);
        for (Eigen::Index e = 0; e < numeric.size(); ++e) {
          worst = std::max(worst, rel_err(tangent.data()[e], numeric.data()[e]));
        }
      }
    }
  } catch (const NumericalFailure&) {
    return std::numeric_limits<double>::infinity();
  }
  return worst;
}

}  // namespace monde
