#include "masksembles/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "masksembles/error.hpp"

namespace masksembles {
namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

// out += a * b (transpose flags select a^T / b^T).
void gemm_accumulate(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out) {
  const std::size_t rows = out.rows();
  const std::size_t cols = out.cols();
  const std::size_t inner = ta ? a.rows() : a.cols();
  const auto A = a.data();
  const auto B = b.data();
  auto C = out.data();
  const std::size_t lda = a.cols();
  const std::size_t ldb = b.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    double* c_row = C.data() + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = ta ? A[k * lda + i] : A[i * lda + k];
      if (aik == 0.0) continue;
      if (!tb) {
        const double* b_row = B.data() + k * ldb;
        for (std::size_t j = 0; j < cols; ++j) c_row[j] += aik * b_row[j];
      } else {
        for (std::size_t j = 0; j < cols; ++j) c_row[j] += aik * B[j * ldb + k];
      }
    }
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  const auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Var Tape::push(Tensor value, bool requires_grad,
               std::function<void(Tape&, std::size_t)> backward, const char* op) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backward)});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) { return push(std::move(value), true, nullptr, "parameter"); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr, "constant"); }

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_to_string(av.shape()) +
                     " and " + shape_to_string(bv.shape()));
  }
  Tensor out(Shape{av.rows(), bv.cols()});
  gemm_accumulate(av, false, bv, false, out);
  const bool rg = needs_grad(a) || needs_grad(b);
  return push(std::move(out), rg,
              [a, b](Tape& t, std::size_t self) {
                const Tensor& g = t.nodes_[self].grad;
                if (t.needs_grad(a)) gemm_accumulate(g, false, t.value(b), true, t.node(a).grad);
                if (t.needs_grad(b)) gemm_accumulate(t.value(a), true, g, false, t.node(b).grad);
              },
              "matmul");
}

Var Tape::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  require_rank2(xv, "add_bias");
  if (bv.size() != xv.cols() || bv.cols() != xv.cols()) {
    throw ShapeError("add_bias: bias " + shape_to_string(bv.shape()) + " does not fit " +
                     shape_to_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  }
  const bool rg = needs_grad(x) || needs_grad(bias);
  return push(std::move(out), rg,
              [x, bias](Tape& t, std::size_t self) {
                const Tensor& g = t.nodes_[self].grad;
                if (t.needs_grad(x)) accumulate(t.node(x).grad, g);
                if (t.needs_grad(bias)) {
                  Tensor& gb = t.node(bias).grad;
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
                  }
                }
              },
              "add_bias");
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("add: shapes " + shape_to_string(av.shape()) + " and " +
                     shape_to_string(bv.shape()) + " differ");
  }
  Tensor out = av;
  accumulate(out, bv);
  const bool rg = needs_grad(a) || needs_grad(b);
  return push(std::move(out), rg,
              [a, b](Tape& t, std::size_t self) {
                const Tensor& g = t.nodes_[self].grad;
                if (t.needs_grad(a)) accumulate(t.node(a).grad, g);
                if (t.needs_grad(b)) accumulate(t.node(b).grad, g);
              },
              "add");
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("mul: shapes " + shape_to_string(av.shape()) + " and " +
                     shape_to_string(bv.shape()) + " differ");
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool rg = needs_grad(a) || needs_grad(b);
  return push(std::move(out), rg,
              [a, b](Tape& t, std::size_t self) {
                const Tensor& g = t.nodes_[self].grad;
                if (t.needs_grad(a)) {
                  Tensor& ga = t.node(a).grad;
                  const Tensor& bv = t.value(b);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                }
                if (t.needs_grad(b)) {
                  Tensor& gb = t.node(b).grad;
                  const Tensor& av = t.value(a);
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                }
              },
              "mul");
}

Var Tape::scale(Var x, double factor) {
  Tensor out = value(x);
  for (double& v : out.data()) v *= factor;
  return push(std::move(out), needs_grad(x),
              [x, factor](Tape& t, std::size_t self) {
                if (!t.needs_grad(x)) return;
                const Tensor& g = t.nodes_[self].grad;
                Tensor& gx = t.node(x).grad;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
              },
              "scale");
}

Var Tape::relu(Var x) {
  Tensor out = value(x);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), needs_grad(x),
              [x](Tape& t, std::size_t self) {
                if (!t.needs_grad(x)) return;
                const Tensor& g = t.nodes_[self].grad;
                const Tensor& in = t.value(x);
                Tensor& gx = t.node(x).grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                  if (in[i] > 0.0) gx[i] += g[i];
                }
              },
              "relu");
}

Var Tape::mask(Var x, std::span<const std::uint8_t> mask) {
  const Tensor& xv = value(x);
  require_rank2(xv, "mask");
  if (mask.size() != xv.cols()) {
    throw ShapeError("mask: width " + std::to_string(mask.size()) + " does not match " +
                     shape_to_string(xv.shape()));
  }
  std::vector<std::uint8_t> bits(mask.begin(), mask.end());
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      if (!bits[c]) out(r, c) = 0.0;
    }
  }
  return push(std::move(out), needs_grad(x),
              [x, bits = std::move(bits)](Tape& t, std::size_t self) {
                if (!t.needs_grad(x)) return;
                const Tensor& g = t.nodes_[self].grad;
                Tensor& gx = t.node(x).grad;
                for (std::size_t r = 0; r < g.rows(); ++r) {
                  for (std::size_t c = 0; c < g.cols(); ++c) {
                    if (bits[c]) gx(r, c) += g(r, c);
                  }
                }
              },
              "mask");
}

Var Tape::sum(Var x) {
  const Tensor& xv = value(x);
  double total = 0.0;
  for (double v : xv.data()) total += v;
  return push(Tensor::scalar(total), needs_grad(x),
              [x](Tape& t, std::size_t self) {
                if (!t.needs_grad(x)) return;
                const double g = t.nodes_[self].grad[0];
                for (double& v : t.node(x).grad.data()) v += g;
              },
              "sum");
}

Var Tape::mean(Var x) {
  const double count = static_cast<double>(value(x).size());
  return scale(sum(x), 1.0 / count);
}

Tape::CrossEntropy Tape::softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = value(logits);
  require_rank2(z, "softmax_cross_entropy");
  const std::size_t batch = z.rows();
  const std::size_t classes = z.cols();
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(batch) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
  }

  Tensor probs(z.shape());
  double nll = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    double peak = z(r, 0);
    for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, z(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs(r, c) = std::exp(z(r, c) - peak);
      denom += probs(r, c);
    }
    for (std::size_t c = 0; c < classes; ++c) probs(r, c) /= denom;
    const auto y = static_cast<std::size_t>(labels[r]);
    nll -= z(r, y) - peak - std::log(denom);
  }
  nll /= static_cast<double>(batch);

  std::vector<int> targets(labels.begin(), labels.end());
  Var loss = push(Tensor::scalar(nll), needs_grad(logits),
                  [logits, probs, targets = std::move(targets)](Tape& t, std::size_t self) {
                    if (!t.needs_grad(logits)) return;
                    const double g = t.nodes_[self].grad[0] / static_cast<double>(probs.rows());
                    Tensor& gz = t.node(logits).grad;
                    for (std::size_t r = 0; r < probs.rows(); ++r) {
                      for (std::size_t c = 0; c < probs.cols(); ++c) {
                        const double onehot = static_cast<std::size_t>(targets[r]) == c ? 1.0 : 0.0;
                        gz(r, c) += g * (probs(r, c) - onehot);
                      }
                    }
                  },
                  "softmax_cross_entropy");
  return {loss, std::move(probs)};
}

void Tape::backward(Var loss) {
  if (loss.index >= nodes_.size()) throw ValidationError("backward: unknown node");
  if (nodes_[loss.index].value.size() != 1) {
    throw ValidationError("backward: loss must be a scalar, got shape " +
                          shape_to_string(nodes_[loss.index].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor(n.value.shape(), 0.0);
  nodes_[loss.index].grad[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.requires_grad) n.backward(*this, i);
  }
}

Tensor softmax_rows(const Tensor& logits) {
  require_rank2(logits, "softmax_rows");
  Tensor probs(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double peak = logits(r, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) peak = std::max(peak, logits(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      probs(r, c) = std::exp(logits(r, c) - peak);
      denom += probs(r, c);
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) probs(r, c) /= denom;
  }
  return probs;
}

}  // namespace masksembles
