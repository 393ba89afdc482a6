#pragma once

// Random small computation graphs for gradient checks.

#include <cstdint>
#include <vector>

#include "masksembles/autodiff.hpp"
#include "masksembles/rng.hpp"

namespace masksembles::testing {

/// A random MLP-shaped graph: masked ReLU layers, softmax cross-entropy,
/// and (on some draws) an extra weight-decay term built from mul/sum/scale.
struct RandomGraph {
  std::vector<Tensor> params;  // weight, bias per layer
  Tensor input;
  std::vector<int> labels;
  std::vector<std::vector<std::uint8_t>> masks;  // one per hidden layer
  bool weight_decay = false;

  static RandomGraph draw(Rng& rng) {
    RandomGraph g;
    const std::size_t depth = 1 + rng.below(3);
    const std::size_t batch = 1 + rng.below(4);
    std::vector<std::size_t> widths{1 + rng.below(4)};
    for (std::size_t l = 0; l < depth; ++l) widths.push_back(1 + rng.below(5));
    widths.push_back(2 + rng.below(3));
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Tensor w(Shape{widths[l], widths[l + 1]});
      for (double& v : w.data()) v = rng.normal();
      Tensor b(Shape{widths[l + 1]});
      for (double& v : b.data()) v = rng.normal(0.0, 0.5);
      g.params.push_back(std::move(w));
      g.params.push_back(std::move(b));
      if (l + 2 < widths.size()) {
        std::vector<std::uint8_t> mask(widths[l + 1]);
        for (auto& bit : mask) bit = rng.below(4) != 0 ? 1 : 0;
        g.masks.push_back(std::move(mask));
      }
    }
    g.input = Tensor(Shape{batch, widths.front()});
    for (double& v : g.input.data()) v = rng.normal();
    for (std::size_t i = 0; i < batch; ++i) g.labels.push_back(static_cast<int>(rng.below(widths.back())));
    g.weight_decay = rng.below(2) == 1;
    return g;
  }

  /// Builds the loss on `tape` with `values` as parameters (all trainable).
  Var build(Tape& tape, const std::vector<Tensor>& values, std::vector<Var>* vars = nullptr) const {
    std::vector<Var> p;
    for (const Tensor& v : values) p.push_back(tape.parameter(v));
    Var h = tape.constant(input);
    const std::size_t layers = values.size() / 2;
    for (std::size_t l = 0; l < layers; ++l) {
      h = tape.add_bias(tape.matmul(h, p[2 * l]), p[2 * l + 1]);
      if (l + 1 < layers) h = tape.mask(tape.relu(h), masks[l]);
    }
    Var loss = tape.softmax_cross_entropy(h, labels).loss;
    if (weight_decay) {
      loss = tape.add(loss, tape.scale(tape.sum(tape.mul(p[0], p[0])), 0.01));
      loss = tape.add(loss, tape.mean(p[1]));
    }
    if (vars) *vars = p;
    return loss;
  }

  double loss(const std::vector<Tensor>& values) const {
    Tape tape;
    return tape.value(build(tape, values))[0];
  }
};

}  // namespace masksembles::testing
