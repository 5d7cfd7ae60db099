#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "cdrnp/tensor.hpp"

namespace cdrnp::ad {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
  kConstant,
  kParam,
  kRow,          // one row of a 2-D parameter table
  kLinear,       // W (2-D node) times x (1-D node)
  kAffine,       // linear plus bias node
  kRelu,
  kTanh,
  kExp,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,        // alpha * x
  kAddScalar,    // x + alpha
  kClamp,
  kConcat,
  kMean,         // elementwise mean of same-shape nodes
  kSoftmax,
  kDot,
  kSum,
  kWeightedSum,  // sum_k w[k] * v_k
  kReshape,
};

// Accumulates parameter gradients somewhere other than Parameter::grad.
// Used by multi-worker training; single-worker backward writes straight
// into the parameters.
using ParamGrads = std::unordered_map<Parameter*, Tensor>;

// Records a computation as it runs, then propagates gradients in reverse.
// One tape per task; a tape is consumed by exactly one backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves -----------------------------------------------------------
  NodeId constant(Tensor v);
  NodeId param(Parameter& p);                      // memoized per tape
  NodeId row(Parameter& table, std::int64_t r);    // memoized per (table, row)

  // Operations -------------------------------------------------------
  NodeId linear(NodeId w, NodeId x);
  NodeId affine(NodeId w, NodeId x, NodeId b);
  NodeId relu(NodeId x);
  NodeId tanh_(NodeId x);
  NodeId exp_(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId x, double alpha);
  NodeId add_scalar(NodeId x, double alpha);
  NodeId clamp(NodeId x, double lo, double hi);
  NodeId concat(std::span<const NodeId> parts);
  NodeId mean(std::span<const NodeId> parts);
  NodeId softmax(NodeId x);
  NodeId dot(NodeId a, NodeId b);
  NodeId sum(NodeId x);
  NodeId weighted_sum(std::span<const NodeId> vectors, NodeId weights);
  NodeId reshape(NodeId x, std::vector<std::int64_t> new_shape);

  // Inspection -------------------------------------------------------
  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::size_t node_count() const { return nodes_.size(); }
  bool relu_kink() const { return relu_kink_; }
  bool consumed() const { return consumed_; }
  void set_finite_checks(bool on) { finite_checks_ = on; }

  // Reverse pass from a scalar node. Parameter gradients accumulate
  // into Parameter::grad, or into `sink` when given. Returns the
  // per-node gradient map (indexed by node id).
  std::vector<Tensor> backward(NodeId loss, ParamGrads* sink = nullptr);

 private:
  struct Node {
    Op op;
    NodeId a = -1, b = -1, c = -1;
    std::vector<NodeId> list;  // concat / mean / weighted_sum operands
    Tensor value;
    Parameter* param = nullptr;
    std::int64_t row = -1;
    double c0 = 0.0, c1 = 0.0;
  };

  NodeId push(Node n);
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  void check_vector(NodeId id, const char* who) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> param_memo_;
  std::unordered_map<const Parameter*, std::unordered_map<std::int64_t, NodeId>> row_memo_;
  bool relu_kink_ = false;
  bool consumed_ = false;
  bool finite_checks_ = true;
};

// Spec-surface helpers expressed over the tape primitives.
NodeId record_linear(Tape& tape, Parameter& w, NodeId x, Parameter* b = nullptr);

enum class Unary { kRelu, kTanh, kExp };
NodeId record_unary(Tape& tape, Unary kind, NodeId x);

}  // namespace cdrnp::ad
