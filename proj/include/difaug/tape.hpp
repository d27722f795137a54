#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "difaug/error.hpp"
#include "difaug/tensor.hpp"

namespace difaug {

enum class OpId : std::uint8_t {
  kParam,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSampleAffine,
  kLeakyRelu,
  kSigmoid,
  kExp,
  kLog,
  kMean,
  kSum,
  kL1Distance,
  kMatMul,
  kConv2d,
  kBiasAdd,
  kUpsampleNearest2x,
  kPixelShuffle,
  kGlobalAvgPool,
  kReshape,
  kBceWithLogits,
};

std::string_view op_name(OpId op);

// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is always topologically sorted.
///
/// Parameter leaves reference caller-owned tensors; those must outlive the
/// tape and stay unmodified until backward() returns. Gradients are added
/// into Tensor::grad of every parameter that requires grad, never
/// overwritten.
template <typename T>
class Tape {
 public:
  using Inputs = std::span<const Tensor<T>* const>;
  using GradInputs = std::span<Tensor<T>* const>;
  using ForwardFn = std::function<Tensor<T>(Inputs)>;
  // grad_in[i] is null when input i does not need a gradient.
  using BackwardFn = std::function<void(Inputs inputs, const Tensor<T>& output,
                                        const Tensor<T>& grad_out, GradInputs grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Enables a finiteness check on every recorded value and every gradient.
  void set_check_finite(bool on) { check_finite_ = on; }

  Var param(Tensor<T>& t) {
    Node node;
    node.op = OpId::kParam;
    node.external = &t;
    node.sink = t.requires_grad() ? &t : nullptr;
    node.tracks_grad = t.requires_grad();
    return push(std::move(node));
  }

  // Caller-owned leaf that never receives a gradient (frozen weights).
  Var frozen(const Tensor<T>& t) {
    Node node;
    node.op = OpId::kParam;
    node.external = &t;
    return push(std::move(node));
  }

  Var constant(Tensor<T> t) {
    Node node;
    node.op = OpId::kConstant;
    node.owned = std::move(t);
    return push(std::move(node));
  }

  Var record(OpId op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
    std::vector<const Tensor<T>*> in;
    in.reserve(inputs.size());
    bool tracks = false;
    for (Var v : inputs) {
      const Node& n = node_at(v);
      in.push_back(&value_of(n));
      tracks = tracks || n.tracks_grad;
    }
    Node node;
    node.op = op;
    node.owned = forward(in);
    node.inputs = std::move(inputs);
    node.tracks_grad = tracks;
    if (check_finite_ && !node.owned.all_finite()) {
      throw NumericError("non-finite output from op '" + std::string(op_name(op)) +
                         "' (node " + std::to_string(nodes_.size()) + ")");
    }
    node.forward = std::move(forward);
    if (tracks) node.backward = std::move(backward);
    return push(std::move(node));
  }

  const Tensor<T>& value(Var v) const { return value_of(node_at(v)); }
  bool tracks_grad(Var v) const { return node_at(v).tracks_grad; }
  OpId op(Var v) const { return node_at(v).op; }
  std::size_t size() const { return nodes_.size(); }

  std::vector<Var> inputs(Var v) const { return node_at(v).inputs; }

  void backward(Var loss) {
    const Node& root = node_at(loss);
    if (value_of(root).numel() != 1) {
      throw ShapeError("backward() requires a scalar loss, got shape " +
                       shape_str(value_of(root).shape()));
    }
    if (!root.tracks_grad) return;

    std::vector<std::optional<Tensor<T>>> grads(loss.id + 1);
    grads[loss.id].emplace(value_of(root).shape(), T{1});

    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!grads[i] || !node.tracks_grad) continue;
      if (check_finite_ && !grads[i]->all_finite()) {
        throw NumericError("non-finite gradient at op '" +
                           std::string(op_name(node.op)) + "' (node " +
                           std::to_string(i) + ")");
      }
      if (node.op == OpId::kParam) {
        auto g = node.sink->ensure_grad();
        const auto& src = grads[i]->data();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
        continue;
      }
      if (!node.backward) continue;

      std::vector<const Tensor<T>*> in;
      std::vector<Tensor<T>*> grad_in;
      in.reserve(node.inputs.size());
      grad_in.reserve(node.inputs.size());
      for (Var v : node.inputs) {
        const Node& src = nodes_[v.id];
        in.push_back(&value_of(src));
        if (src.tracks_grad) {
          if (!grads[v.id]) grads[v.id].emplace(value_of(src).shape(), T{0});
          grad_in.push_back(&*grads[v.id]);
        } else {
          grad_in.push_back(nullptr);
        }
      }
      node.backward(in, node.owned, *grads[i], grad_in);
      grads[i].reset();
    }
  }

  // Re-evaluates every recorded op from its recorded inputs and reports
  // whether all outputs are reproduced bit for bit.
  bool replay_matches() const {
    for (const Node& node : nodes_) {
      if (!node.forward) continue;
      std::vector<const Tensor<T>*> in;
      for (Var v : node.inputs) in.push_back(&value_of(nodes_[v.id]));
      if (!(node.forward(in) == node.owned)) return false;
    }
    return true;
  }

 private:
  struct Node {
    OpId op = OpId::kConstant;
    std::vector<Var> inputs;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T>* sink = nullptr;
    bool tracks_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  const Node& node_at(Var v) const {
    if (v.id >= nodes_.size()) {
      throw Error("Var " + std::to_string(v.id) + " is not on this tape");
    }
    return nodes_[v.id];
  }
  static const Tensor<T>& value_of(const Node& n) {
    return n.external ? *n.external : n.owned;
  }
  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  // deque keeps references returned by value() valid while recording.
  std::deque<Node> nodes_;
  bool check_finite_ = false;
};

}  // namespace difaug
