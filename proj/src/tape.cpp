#include "cdrnp/tape.hpp"

#include <algorithm>
#include <cmath>

#include "cdrnp/errors.hpp"

namespace cdrnp::ad {

namespace {

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParam: return "param";
    case Op::kRow: return "row";
    case Op::kLinear: return "linear";
    case Op::kAffine: return "affine";
    case Op::kRelu: return "relu";
    case Op::kTanh: return "tanh";
    case Op::kExp: return "exp";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kClamp: return "clamp";
    case Op::kConcat: return "concat";
    case Op::kMean: return "mean";
    case Op::kSoftmax: return "softmax";
    case Op::kDot: return "dot";
    case Op::kSum: return "sum";
    case Op::kWeightedSum: return "weighted_sum";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

}  // namespace

NodeId Tape::push(Node n) {
  if (finite_checks_ && !n.value.finite()) {
    throw NumericError(std::string("non-finite value produced by op '") + op_name(n.op) + "'");
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_vector(NodeId id, const char* who) const {
  const auto& v = node(id).value;
  if (v.shape.size() != 1) {
    throw ShapeError(std::string(who) + ": expected a vector, got " + v.shape_str());
  }
}

NodeId Tape::constant(Tensor v) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(v);
  return push(std::move(n));
}

NodeId Tape::param(Parameter& p) {
  auto it = param_memo_.find(&p);
  if (it != param_memo_.end()) return it->second;
  Node n;
  n.op = Op::kParam;
  n.value = p.value;
  n.param = &p;
  NodeId id = push(std::move(n));
  param_memo_.emplace(&p, id);
  return id;
}

NodeId Tape::row(Parameter& table, std::int64_t r) {
  if (table.value.shape.size() != 2) {
    throw ShapeError("row: parameter '" + table.name + "' is not 2-D");
  }
  const std::int64_t rows = table.value.shape[0];
  const std::int64_t cols = table.value.shape[1];
  if (r < 0 || r >= rows) {
    throw LookupError("row " + std::to_string(r) + " out of range for parameter '" +
                      table.name + "' with " + std::to_string(rows) + " rows");
  }
  auto& memo = row_memo_[&table];
  auto it = memo.find(r);
  if (it != memo.end()) return it->second;

  Node n;
  n.op = Op::kRow;
  n.param = &table;
  n.row = r;
  const double* src = table.value.data.data() + r * cols;
  n.value = Tensor({cols}, std::vector<double>(src, src + cols));
  NodeId id = push(std::move(n));
  memo.emplace(r, id);
  return id;
}

NodeId Tape::linear(NodeId w, NodeId x) {
  const auto& wm = node(w).value;
  const auto& xv = node(x).value;
  if (wm.shape.size() != 2 || xv.shape.size() != 1 || wm.shape[1] != xv.shape[0]) {
    throw ShapeError(std::string("linear: shapes ") + wm.shape_str() + " and " +
                     xv.shape_str() + " do not compose");
  }
  const std::int64_t m = wm.shape[0], k = wm.shape[1];
  Tensor out = Tensor::zeros({m});
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = wm.data.data() + i * k;
    double acc = 0.0;
    for (std::int64_t j = 0; j < k; ++j) acc += row[j] * xv.data[static_cast<std::size_t>(j)];
    out.data[static_cast<std::size_t>(i)] = acc;
  }
  Node n;
  n.op = Op::kLinear;
  n.a = w;
  n.b = x;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::affine(NodeId w, NodeId x, NodeId b) {
  NodeId lin = linear(w, x);
  const auto& bv = node(b).value;
  if (!node(lin).value.same_shape(bv)) {
    throw ShapeError("affine: bias shape " + bv.shape_str() + " does not match output " +
                     node(lin).value.shape_str());
  }
  Tensor out = node(lin).value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  Node n;
  n.op = Op::kAffine;
  n.a = lin;  // reuse the linear node; backward treats it as a plain add
  n.b = b;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
  const auto& xv = node(x).value;
  Tensor out = xv;
  for (double& v : out.data) {
    if (v == 0.0) relu_kink_ = true;
    v = v > 0.0 ? v : 0.0;
  }
  Node n;
  n.op = Op::kRelu;
  n.a = x;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::tanh_(NodeId x) {
  Tensor out = node(x).value;
  for (double& v : out.data) v = std::tanh(v);
  Node n;
  n.op = Op::kTanh;
  n.a = x;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::exp_(NodeId x) {
  Tensor out = node(x).value;
  for (double& v : out.data) v = std::exp(v);
  Node n;
  n.op = Op::kExp;
  n.a = x;
  n.value = std::move(out);
  return push(std::move(n));
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(who) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                     " differ");
  }
}
}  // namespace

NodeId Tape::add(NodeId a, NodeId b) {
  const auto& av = node(a).value;
  const auto& bv = node(b).value;
  require_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const auto& av = node(a).value;
  const auto& bv = node(b).value;
  require_same_shape(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const auto& av = node(a).value;
  const auto& bv = node(b).value;
  require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::div(NodeId a, NodeId b) {
  const auto& av = node(a).value;
  const auto& bv = node(b).value;
  require_same_shape(av, bv, "div");
  Tensor out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= bv.data[i];
  Node n;
  n.op = Op::kDiv;
  n.a = a;
  n.b = b;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double alpha) {
  Tensor out = node(x).value;
  for (double& v : out.data) v *= alpha;
  Node n;
  n.op = Op::kScale;
  n.a = x;
  n.c0 = alpha;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::add_scalar(NodeId x, double alpha) {
  Tensor out = node(x).value;
  for (double& v : out.data) v += alpha;
  Node n;
  n.op = Op::kAddScalar;
  n.a = x;
  n.c0 = alpha;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::clamp(NodeId x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  Tensor out = node(x).value;
  for (double& v : out.data) v = std::min(hi, std::max(lo, v));
  Node n;
  n.op = Op::kClamp;
  n.a = x;
  n.c0 = lo;
  n.c1 = hi;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::concat(std::span<const NodeId> parts) {
  if (parts.empty()) throw ContractError("concat: no operands");
  std::int64_t total = 0;
  for (NodeId id : parts) {
    check_vector(id, "concat");
    total += node(id).value.size();
  }
  Tensor out = Tensor::zeros({total});
  std::int64_t off = 0;
  for (NodeId id : parts) {
    const auto& v = node(id).value;
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
    off += v.size();
  }
  Node n;
  n.op = Op::kConcat;
  n.list.assign(parts.begin(), parts.end());
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::mean(std::span<const NodeId> parts) {
  if (parts.empty()) throw ContractError("mean: no operands");
  const Tensor& first = node(parts.front()).value;
  Tensor out = Tensor::zeros(first.shape);
  for (NodeId id : parts) {
    const auto& v = node(id).value;
    require_same_shape(first, v, "mean");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += v.data[i];
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (double& v : out.data) v *= inv;
  Node n;
  n.op = Op::kMean;
  n.list.assign(parts.begin(), parts.end());
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::softmax(NodeId x) {
  check_vector(x, "softmax");
  const auto& xv = node(x).value;
  if (xv.size() == 0) throw ContractError("softmax: empty input");
  Tensor out = xv;
  const double mx = *std::max_element(out.data.begin(), out.data.end());
  double total = 0.0;
  for (double& v : out.data) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : out.data) v /= total;
  Node n;
  n.op = Op::kSoftmax;
  n.a = x;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::dot(NodeId a, NodeId b) {
  check_vector(a, "dot");
  check_vector(b, "dot");
  const auto& av = node(a).value;
  const auto& bv = node(b).value;
  require_same_shape(av, bv, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < av.data.size(); ++i) acc += av.data[i] * bv.data[i];
  Node n;
  n.op = Op::kDot;
  n.a = a;
  n.b = b;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
  const auto& xv = node(x).value;
  double acc = 0.0;
  for (double v : xv.data) acc += v;
  Node n;
  n.op = Op::kSum;
  n.a = x;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

NodeId Tape::weighted_sum(std::span<const NodeId> vectors, NodeId weights) {
  if (vectors.empty()) throw ContractError("weighted_sum: no vectors");
  check_vector(weights, "weighted_sum");
  const auto& wv = node(weights).value;
  if (wv.size() != static_cast<std::int64_t>(vectors.size())) {
    throw ShapeError("weighted_sum: " + std::to_string(vectors.size()) + " vectors vs " +
                     std::to_string(wv.size()) + " weights");
  }
  const Tensor& first = node(vectors.front()).value;
  Tensor out = Tensor::zeros(first.shape);
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    const auto& v = node(vectors[k]).value;
    require_same_shape(first, v, "weighted_sum");
    const double w = wv.data[k];
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += w * v.data[i];
  }
  Node n;
  n.op = Op::kWeightedSum;
  n.b = weights;
  n.list.assign(vectors.begin(), vectors.end());
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::reshape(NodeId x, std::vector<std::int64_t> new_shape) {
  const auto& xv = node(x).value;
  if (Tensor::numel(new_shape) != xv.size()) {
    throw ShapeError("reshape: " + xv.shape_str() + " to " + Tensor::shape_str(new_shape) +
                     " changes element count");
  }
  Node n;
  n.op = Op::kReshape;
  n.a = x;
  n.value = Tensor(std::move(new_shape), xv.data);
  return push(std::move(n));
}

std::vector<Tensor> Tape::backward(NodeId loss, ParamGrads* sink) {
  if (consumed_) throw ContractError("backward: tape already consumed");
  if (loss < 0 || static_cast<std::size_t>(loss) >= nodes_.size()) {
    throw ContractError("backward: loss node out of range");
  }
  if (node(loss).value.size() != 1) {
    throw ContractError("backward: loss must be a scalar node, got shape " +
                        node(loss).value.shape_str());
  }
  consumed_ = true;

  std::vector<Tensor> grads(nodes_.size());
  auto grad_of = [&](NodeId id) -> Tensor& {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.data.empty()) g = Tensor::zeros(node(id).value.shape);
    return g;
  };
  grad_of(loss).data[0] = 1.0;

  auto sink_param = [&](Parameter& p, std::int64_t row, const Tensor& g) {
    Tensor* dst = nullptr;
    if (sink) {
      auto [it, inserted] = sink->try_emplace(&p);
      if (inserted) it->second = Tensor::zeros(p.value.shape);
      dst = &it->second;
    } else {
      dst = &p.grad;
    }
    if (row < 0) {
      for (std::size_t i = 0; i < g.data.size(); ++i) dst->data[i] += g.data[i];
    } else {
      const std::int64_t cols = p.value.shape[1];
      double* out = dst->data.data() + row * cols;
      for (std::int64_t i = 0; i < cols; ++i) out[i] += g.data[static_cast<std::size_t>(i)];
    }
  };

  for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
    const Tensor& gy = grads[static_cast<std::size_t>(id)];
    if (gy.data.empty()) continue;  // node not on any path to the loss
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kParam:
        sink_param(*n.param, -1, gy);
        break;
      case Op::kRow:
        sink_param(*n.param, n.row, gy);
        break;
      case Op::kLinear: {
        const Tensor& wm = node(n.a).value;
        const Tensor& xv = node(n.b).value;
        Tensor& gw = grad_of(n.a);
        Tensor& gx = grad_of(n.b);
        const std::int64_t m = wm.shape[0], k = wm.shape[1];
        for (std::int64_t i = 0; i < m; ++i) {
          const double gi = gy.data[static_cast<std::size_t>(i)];
          if (gi == 0.0) continue;
          double* gw_row = gw.data.data() + i * k;
          const double* w_row = wm.data.data() + i * k;
          for (std::int64_t j = 0; j < k; ++j) {
            gw_row[j] += gi * xv.data[static_cast<std::size_t>(j)];
            gx.data[static_cast<std::size_t>(j)] += gi * w_row[j];
          }
        }
        break;
      }
      case Op::kAffine: {
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          ga.data[i] += gy.data[i];
          gb.data[i] += gy.data[i];
        }
        break;
      }
      case Op::kRelu: {
        const Tensor& xv = node(n.a).value;
        Tensor& gx = grad_of(n.a);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          if (xv.data[i] > 0.0) gx.data[i] += gy.data[i];
        }
        break;
      }
      case Op::kTanh: {
        Tensor& gx = grad_of(n.a);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          const double y = n.value.data[i];
          gx.data[i] += gy.data[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::kExp: {
        Tensor& gx = grad_of(n.a);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          gx.data[i] += gy.data[i] * n.value.data[i];
        }
        break;
      }
      case Op::kAdd: {
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          ga.data[i] += gy.data[i];
          gb.data[i] += gy.data[i];
        }
        break;
      }
      case Op::kSub: {
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          ga.data[i] += gy.data[i];
          gb.data[i] -= gy.data[i];
        }
        break;
      }
      case Op::kMul: {
        const Tensor& av = node(n.a).value;
        const Tensor& bv = node(n.b).value;
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          ga.data[i] += gy.data[i] * bv.data[i];
          gb.data[i] += gy.data[i] * av.data[i];
        }
        break;
      }
      case Op::kDiv: {
        const Tensor& bv = node(n.b).value;
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          const double inv_b = 1.0 / bv.data[i];
          ga.data[i] += gy.data[i] * inv_b;
          gb.data[i] -= gy.data[i] * n.value.data[i] * inv_b;
        }
        break;
      }
      case Op::kScale: {
        Tensor& gx = grad_of(n.a);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += n.c0 * gy.data[i];
        break;
      }
      case Op::kAddScalar: {
        Tensor& gx = grad_of(n.a);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
        break;
      }
      case Op::kClamp: {
        const Tensor& xv = node(n.a).value;
        Tensor& gx = grad_of(n.a);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          if (xv.data[i] >= n.c0 && xv.data[i] <= n.c1) gx.data[i] += gy.data[i];
        }
        break;
      }
      case Op::kConcat: {
        std::int64_t off = 0;
        for (NodeId part : n.list) {
          Tensor& gp = grad_of(part);
          const std::int64_t len = gp.size();
          for (std::int64_t i = 0; i < len; ++i) {
            gp.data[static_cast<std::size_t>(i)] += gy.data[static_cast<std::size_t>(off + i)];
          }
          off += len;
        }
        break;
      }
      case Op::kMean: {
        const double inv = 1.0 / static_cast<double>(n.list.size());
        for (NodeId part : n.list) {
          Tensor& gp = grad_of(part);
          for (std::size_t i = 0; i < gy.data.size(); ++i) gp.data[i] += inv * gy.data[i];
        }
        break;
      }
      case Op::kSoftmax: {
        Tensor& gx = grad_of(n.a);
        double s = 0.0;
        for (std::size_t i = 0; i < gy.data.size(); ++i) s += gy.data[i] * n.value.data[i];
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
          gx.data[i] += n.value.data[i] * (gy.data[i] - s);
        }
        break;
      }
      case Op::kDot: {
        const Tensor& av = node(n.a).value;
        const Tensor& bv = node(n.b).value;
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        const double g = gy.data[0];
        for (std::size_t i = 0; i < av.data.size(); ++i) {
          ga.data[i] += g * bv.data[i];
          gb.data[i] += g * av.data[i];
        }
        break;
      }
      case Op::kSum: {
        Tensor& gx = grad_of(n.a);
        const double g = gy.data[0];
        for (double& v : gx.data) v += g;
        break;
      }
      case Op::kWeightedSum: {
        const Tensor& wv = node(n.b).value;
        Tensor& gw = grad_of(n.b);
        for (std::size_t k = 0; k < n.list.size(); ++k) {
          const Tensor& vk = node(n.list[k]).value;
          Tensor& gv = grad_of(n.list[k]);
          double acc = 0.0;
          for (std::size_t i = 0; i < gy.data.size(); ++i) {
            gv.data[i] += wv.data[k] * gy.data[i];
            acc += vk.data[i] * gy.data[i];
          }
          gw.data[k] += acc;
        }
        break;
      }
      case Op::kReshape: {
        Tensor& gx = grad_of(n.a);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
        break;
      }
    }
  }
  return grads;
}

NodeId record_linear(Tape& tape, Parameter& w, NodeId x, Parameter* b) {
  NodeId wn = tape.param(w);
  if (b == nullptr) return tape.linear(wn, x);
  return tape.affine(wn, x, tape.param(*b));
}

NodeId record_unary(Tape& tape, Unary kind, NodeId x) {
  switch (kind) {
    case Unary::kRelu: return tape.relu(x);
    case Unary::kTanh: return tape.tanh_(x);
    case Unary::kExp: return tape.exp_(x);
  }
  throw ContractError("record_unary: unknown kind");
}

}  // namespace cdrnp::ad
