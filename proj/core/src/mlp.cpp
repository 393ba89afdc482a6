#include "masksembles/mlp.hpp"

#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "masksembles/autodiff.hpp"
#include "masksembles/error.hpp"
#include "masksembles/io.hpp"
#include "masksembles/rng.hpp"

namespace masksembles {
namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kMaskStream = 2;

void validate_widths(const std::vector<std::size_t>& widths) {
  if (widths.size() < 3) throw ValidationError("model needs at least one hidden layer");
  for (std::size_t w : widths) {
    if (w < 1) throw ValidationError("layer widths must be ≥ 1");
  }
}

std::vector<DenseLayer> init_layers(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng rng(derive_seed(seed, l));
    DenseLayer layer{Tensor(Shape{fan_in, widths[l + 1]}), Tensor(Shape{widths[l + 1]})};
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias.data()) b = rng.uniform(-bound, bound);
    layers.push_back(std::move(layer));
  }
  return layers;
}

struct TapeParams {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

TapeParams bind(Tape& tape, const std::vector<DenseLayer>& layers, bool trainable) {
  TapeParams p;
  for (const auto& layer : layers) {
    p.weights.push_back(trainable ? tape.parameter(layer.weight) : tape.constant(layer.weight));
    p.biases.push_back(trainable ? tape.parameter(layer.bias) : tape.constant(layer.bias));
  }
  return p;
}

Var forward_on_tape(Tape& tape, const TapeParams& p, const std::optional<MaskSet>& masks, Var x,
                    std::size_t mask_index) {
  Var h = x;
  const std::size_t depth = p.weights.size();
  for (std::size_t l = 0; l < depth; ++l) {
    h = tape.add_bias(tape.matmul(h, p.weights[l]), p.biases[l]);
    if (l + 1 < depth) {
      h = tape.relu(h);
      if (masks) h = tape.mask(h, masks->row(mask_index));
    }
  }
  return h;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t f = x.cols();
  std::vector<double> data;
  data.reserve(rows.size() * f);
  for (std::size_t r : rows) {
    const auto row = x.row(r);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{rows.size(), f}, std::move(data));
}

}  // namespace

MasksemblesMlp::MasksemblesMlp(std::vector<std::size_t> widths, std::optional<MaskSet> masks,
                               std::uint64_t seed)
    : MasksemblesMlp(widths, std::move(masks), seed, init_layers(widths, seed)) {}

MasksemblesMlp::MasksemblesMlp(std::vector<std::size_t> widths, std::optional<MaskSet> masks,
                               std::uint64_t seed, std::vector<DenseLayer> layers)
    : widths_(std::move(widths)), masks_(std::move(masks)), seed_(seed), layers_(std::move(layers)) {
  validate_widths(widths_);
  if (masks_) {
    for (std::size_t l = 1; l + 1 < widths_.size(); ++l) {
      if (widths_[l] != masks_->width()) {
        throw ValidationError("hidden width " + std::to_string(widths_[l]) +
                              " does not match mask width " + std::to_string(masks_->width()));
      }
    }
  }
  if (layers_.size() + 1 != widths_.size()) throw ValidationError("layer count does not match widths");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight.shape() != Shape{widths_[l], widths_[l + 1]} ||
        layers_[l].bias.shape() != Shape{widths_[l + 1]}) {
      throw ShapeError("layer " + std::to_string(l) + " parameters do not match widths");
    }
  }
}

void MasksemblesMlp::check_mask_index(std::size_t mask_index) const {
  if (mask_index >= num_masks()) {
    throw ValidationError("mask index " + std::to_string(mask_index) + " outside [0, " +
                          std::to_string(num_masks()) + ")");
  }
}

Tensor MasksemblesMlp::logits(const Tensor& x, std::size_t mask_index) const {
  check_mask_index(mask_index);
  if (x.rank() != 2 || x.cols() != input_width()) {
    throw ShapeError("input " + shape_to_string(x.shape()) + " does not match input width " +
                     std::to_string(input_width()));
  }
  Tape tape;
  const TapeParams p = bind(tape, layers_, false);
  return tape.value(forward_on_tape(tape, p, masks_, tape.constant(x), mask_index));
}

Tensor MasksemblesMlp::forward(const Tensor& x, std::size_t mask_index) const {
  return softmax_rows(logits(x, mask_index));
}

MasksemblesMlp::LossAndGradients MasksemblesMlp::loss_and_gradients(
    const Tensor& x, std::span<const int> labels, std::span<const std::size_t> mask_indices,
    bool per_sample) const {
  const std::size_t batch = x.rows();
  if (labels.size() != batch || mask_indices.size() != batch) {
    throw ShapeError("batch of " + std::to_string(batch) + " rows needs as many labels and masks");
  }
  for (std::size_t k : mask_indices) check_mask_index(k);

  // Group sample positions by mask, keeping their batch order.
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> group_mask;
  if (per_sample) {
    for (std::size_t i = 0; i < batch; ++i) {
      groups.push_back({i});
      group_mask.push_back(mask_indices[i]);
    }
  } else {
    std::vector<std::vector<std::size_t>> by_mask(num_masks());
    for (std::size_t i = 0; i < batch; ++i) by_mask[mask_indices[i]].push_back(i);
    for (std::size_t k = 0; k < by_mask.size(); ++k) {
      if (by_mask[k].empty()) continue;
      groups.push_back(std::move(by_mask[k]));
      group_mask.push_back(k);
    }
  }

  Tape tape;
  const TapeParams p = bind(tape, layers_, true);
  std::optional<Var> total;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<int> group_labels;
    for (std::size_t i : groups[g]) group_labels.push_back(labels[i]);
    Var xg = tape.constant(gather_rows(x, groups[g]));
    Var out = forward_on_tape(tape, p, masks_, xg, group_mask[g]);
    Var loss = tape.softmax_cross_entropy(out, group_labels).loss;
    Var weighted = tape.scale(loss, static_cast<double>(groups[g].size()) / static_cast<double>(batch));
    total = total ? tape.add(*total, weighted) : weighted;
  }
  tape.backward(*total);

  LossAndGradients result;
  result.loss = tape.value(*total)[0];
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    result.gradients.push_back({tape.grad(p.weights[l]), tape.grad(p.biases[l])});
  }
  return result;
}

MasksemblesMlp build_model(std::vector<std::size_t> layer_widths, const MaskSpec& spec,
                           bool fixed_width, std::uint64_t seed) {
  validate_widths(layer_widths);
  if (fixed_width) {
    const std::size_t hidden = layer_widths[1];
    for (std::size_t l = 1; l + 1 < layer_widths.size(); ++l) {
      if (layer_widths[l] != hidden) {
        throw ValidationError("fixed-width mode needs equal hidden widths (one shared mask pool)");
      }
    }
    MaskSet masks = generate_masks(solve_m_for_fixed_width(hidden, spec.n, spec.s, spec.seed), false);
    return MasksemblesMlp(std::move(layer_widths), std::move(masks), seed);
  }
  MaskSet masks = generate_masks(spec, true);
  for (std::size_t l = 1; l + 1 < layer_widths.size(); ++l) layer_widths[l] = masks.width();
  return MasksemblesMlp(std::move(layer_widths), std::move(masks), seed);
}

MasksemblesMlp build_unmasked(std::vector<std::size_t> layer_widths, std::uint64_t seed) {
  return MasksemblesMlp(std::move(layer_widths), std::nullopt, seed);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be ≥ 1");
  if (batch_size < 1) throw ValidationError("batch_size must be ≥ 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate must be finite and ≥ 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
}

TrainHistory train(MasksemblesMlp& model, const Dataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  if (!data.labeled() || data.size() == 0) throw ValidationError("training needs a labeled dataset");
  if (data.feature_count() != model.input_width()) {
    throw ValidationError("dataset has " + std::to_string(data.feature_count()) +
                          " features, model expects " + std::to_string(model.input_width()));
  }
  if (data.num_classes > model.num_classes()) {
    throw ValidationError("dataset has more classes than model outputs");
  }

  auto& layers = model.layers();
  std::vector<DenseLayer> velocity;
  for (const auto& layer : layers) {
    velocity.push_back({Tensor(layer.weight.shape()), Tensor(layer.bias.shape())});
  }

  const std::size_t count = data.size();
  TrainHistory history;
  std::vector<std::size_t> order(count);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, {kShuffleStream, epoch}));
    Rng mask_rng(derive_seed(config.seed, {kMaskStream, epoch}));
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = count; i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }

    double epoch_total = 0.0;
    for (std::size_t start = 0; start < count; start += config.batch_size) {
      const std::size_t stop = std::min(count, start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      std::vector<int> labels;
      std::vector<std::size_t> mask_indices;
      for (std::size_t r : rows) {
        labels.push_back(data.labels[r]);
        mask_indices.push_back(static_cast<std::size_t>(mask_rng.below(model.num_masks())));
      }

      MasksemblesMlp::LossAndGradients step;
      try {
        step = model.loss_and_gradients(gather_rows(data.features, rows), labels, mask_indices,
                                        config.per_sample_masking);
      } catch (const NumericError& e) {
        throw TrainingError(epoch, e.what());
      }
      if (!std::isfinite(step.loss)) throw TrainingError(epoch, "loss is not finite");

      for (std::size_t l = 0; l < layers.size(); ++l) {
        auto update = [&](Tensor& param, Tensor& vel, const Tensor& grad) {
          for (std::size_t i = 0; i < param.size(); ++i) {
            vel[i] = config.momentum * vel[i] + grad[i];
            param[i] -= config.learning_rate * vel[i];
          }
        };
        update(layers[l].weight, velocity[l].weight, step.gradients[l].weight);
        update(layers[l].bias, velocity[l].bias, step.gradients[l].bias);
        if (!layers[l].weight.all_finite() || !layers[l].bias.all_finite()) {
          throw TrainingError(epoch, "weights are not finite");
        }
      }
      history.step_loss.push_back(step.loss);
      epoch_total += step.loss * static_cast<double>(rows.size());
    }
    history.epoch_loss.push_back(epoch_total / static_cast<double>(count));
  }
  return history;
}

PredictionSet predict_ensemble(const MasksemblesMlp& model, const Tensor& x) {
  PredictionSet out;
  for (std::size_t k = 0; k < model.num_masks(); ++k) out.per_mask.push_back(model.forward(x, k));
  out.mixture = Tensor(out.per_mask.front().shape());
  for (const Tensor& p : out.per_mask) {
    for (std::size_t i = 0; i < p.size(); ++i) out.mixture[i] += p[i];
  }
  const double count = static_cast<double>(out.per_mask.size());
  for (double& v : out.mixture.data()) v /= count;
  return out;
}

PredictionSet predict_members(std::span<const MasksemblesMlp> members, const Tensor& x) {
  if (members.empty()) throw ValidationError("ensemble needs at least one member");
  PredictionSet out;
  for (const auto& member : members) out.per_mask.push_back(member.forward(x, 0));
  out.mixture = Tensor(out.per_mask.front().shape());
  for (const Tensor& p : out.per_mask) {
    if (p.shape() != out.mixture.shape()) throw ShapeError("ensemble members disagree on output shape");
    for (std::size_t i = 0; i < p.size(); ++i) out.mixture[i] += p[i];
  }
  const double count = static_cast<double>(out.per_mask.size());
  for (double& v : out.mixture.data()) v /= count;
  return out;
}

std::size_t model_size(const MasksemblesMlp& model) {
  std::size_t total = 0;
  for (const auto& layer : model.layers()) total += layer.weight.size() + layer.bias.size();
  return total;
}

// Checkpoint layout (text):
//   masksembles-checkpoint 1
//   widths <w0> <w1> ... <wL>
//   seed <init seed>
//   masks 0                       | masks 1 followed by a mask file block
//   parameters <count>
//   <count> 16-digit hex doubles, 8 per line: each layer's weight
//   (row-major) then its bias, layers in order.
void write_checkpoint(std::ostream& out, const MasksemblesMlp& model) {
  out << "masksembles-checkpoint 1\nwidths";
  for (std::size_t w : model.widths()) out << ' ' << w;
  out << "\nseed " << model.seed() << '\n';
  if (model.masks()) {
    out << "masks 1\n";
    write_masks(out, *model.masks());
  } else {
    out << "masks 0\n";
  }
  out << "parameters " << model_size(model) << '\n';
  std::size_t column = 0;
  auto emit = [&](const Tensor& t) {
    for (double v : t.data()) {
      out << (column ? " " : "") << double_to_hex(v);
      if (++column == 8) {
        out << '\n';
        column = 0;
      }
    }
  };
  for (const auto& layer : model.layers()) {
    emit(layer.weight);
    emit(layer.bias);
  }
  if (column) out << '\n';
}

MasksemblesMlp read_checkpoint(std::istream& in) {
  std::string line;
  auto expect_line = [&](const char* key) {
    if (!std::getline(in, line)) throw IoError(std::string("checkpoint: missing '") + key + "'");
    auto tokens = split_whitespace(line);
    if (tokens.empty() || tokens.front() != key) {
      throw IoError(std::string("checkpoint: expected '") + key + "', got '" + line + "'");
    }
    tokens.erase(tokens.begin());
    return tokens;
  };
  const auto magic = expect_line("masksembles-checkpoint");
  if (magic.size() != 1 || magic[0] != "1") throw IoError("checkpoint: unsupported version");
  std::vector<std::size_t> widths;
  for (const auto& t : expect_line("widths")) widths.push_back(parse_uint(t));
  const auto seed_tokens = expect_line("seed");
  if (seed_tokens.size() != 1) throw IoError("checkpoint: malformed seed line");
  const std::uint64_t seed = parse_uint(seed_tokens[0]);
  const auto mask_tokens = expect_line("masks");
  std::optional<MaskSet> masks;
  if (mask_tokens.size() == 1 && mask_tokens[0] == "1") {
    masks = read_masks(in);
  } else if (mask_tokens.size() != 1 || mask_tokens[0] != "0") {
    throw IoError("checkpoint: malformed masks line");
  }
  const auto count_tokens = expect_line("parameters");
  if (count_tokens.size() != 1) throw IoError("checkpoint: malformed parameters line");
  const std::size_t count = parse_uint(count_tokens[0]);

  std::vector<double> values;
  values.reserve(count);
  while (values.size() < count && std::getline(in, line)) {
    for (const auto& token : split_whitespace(line)) values.push_back(hex_to_double(token));
  }
  if (values.size() != count) throw IoError("checkpoint: parameter block is truncated");

  if (widths.size() < 3) throw IoError("checkpoint: model needs at least one hidden layer");
  std::vector<DenseLayer> layers;
  std::size_t cursor = 0;
  auto take = [&](Shape shape) {
    Tensor t(shape);
    if (cursor + t.size() > values.size()) throw IoError("checkpoint: parameter count mismatch");
    for (double& v : t.data()) v = values[cursor++];
    return t;
  };
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Tensor w = take(Shape{widths[l], widths[l + 1]});
    Tensor b = take(Shape{widths[l + 1]});
    layers.push_back({std::move(w), std::move(b)});
  }
  if (cursor != values.size()) throw IoError("checkpoint: parameter count mismatch");
  try {
    return MasksemblesMlp(std::move(widths), std::move(masks), seed, std::move(layers));
  } catch (const Error& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const MasksemblesMlp& model) {
  std::ostringstream out;
  write_checkpoint(out, model);
  write_file_atomic(path, out.str());
}

MasksemblesMlp load_checkpoint(const std::string& path) {
  std::istringstream in(read_file(path));
  return read_checkpoint(in);
}

}  // namespace masksembles
