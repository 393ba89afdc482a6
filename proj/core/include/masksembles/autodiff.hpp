#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "masksembles/tensor.hpp"

namespace masksembles {

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t index = 0;
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so
/// the tape is topologically sorted by construction and backward() is a
/// single reverse sweep.
///
/// Every op checks its output for NaN/Inf and throws NumericError.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var parameter(Tensor value);
  /// Leaf that does not.
  Var constant(Tensor value);

  Var matmul(Var a, Var b);
  /// x[B x O] + bias[O] broadcast over rows.
  Var add_bias(Var x, Var bias);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  Var relu(Var x);
  /// out[b, j] = x[b, j] * mask[j].
  Var mask(Var x, std::span<const std::uint8_t> mask);
  Var sum(Var x);
  Var mean(Var x);

  struct CrossEntropy {
    Var loss;           // mean negative log-likelihood, shape {1}
    Tensor probabilities;
  };
  /// Numerically stable softmax + mean NLL over the rows of `logits`.
  CrossEntropy softmax_cross_entropy(Var logits, std::span<const int> labels);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node. `loss` must
  /// have exactly one element. Nodes not upstream of `loss` keep a zero
  /// gradient.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_.at(v.index).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.index).grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(Tensor value, bool requires_grad,
           std::function<void(Tape&, std::size_t)> backward, const char* op);
  Node& node(Var v) { return nodes_.at(v.index); }
  bool needs_grad(Var v) const { return nodes_[v.index].requires_grad; }

  std::vector<Node> nodes_;
};

/// Standalone numerically stable softmax of each row.
Tensor softmax_rows(const Tensor& logits);

}  // namespace masksembles
