#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "masksembles/data.hpp"
#include "masksembles/masks.hpp"
#include "masksembles/tensor.hpp"

namespace masksembles {

/// Fully connected layer: out = in * weight + bias, weight is [in x out].
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// ReLU MLP whose hidden activations are multiplied by one row of a shared
/// mask pool. The same mask index k selects the submodel at every hidden
/// layer. Without a pool the model is a plain MLP with a single "mask".
class MasksemblesMlp {
 public:
  /// Fresh model; weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  /// from substreams of `seed`. Every hidden width must equal the pool width.
  MasksemblesMlp(std::vector<std::size_t> widths, std::optional<MaskSet> masks,
                 std::uint64_t seed);
  MasksemblesMlp(std::vector<std::size_t> widths, std::optional<MaskSet> masks,
                 std::uint64_t seed, std::vector<DenseLayer> layers);

  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  const std::optional<MaskSet>& masks() const noexcept { return masks_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t num_masks() const noexcept { return masks_ ? masks_->count() : 1; }
  std::size_t input_width() const noexcept { return widths_.front(); }
  std::size_t num_classes() const noexcept { return widths_.back(); }

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  Tensor logits(const Tensor& x, std::size_t mask_index) const;
  /// Class probabilities of submodel `mask_index`.
  Tensor forward(const Tensor& x, std::size_t mask_index) const;

  struct LossAndGradients {
    double loss = 0.0;
    std::vector<DenseLayer> gradients;
  };

  /// Mean cross-entropy of each sample under its own submodel
  /// `mask_indices[i]`, and its gradient. Samples are grouped into one
  /// sub-batch per mask; with `per_sample` every sample is its own group.
  LossAndGradients loss_and_gradients(const Tensor& x, std::span<const int> labels,
                                      std::span<const std::size_t> mask_indices,
                                      bool per_sample = false) const;

  friend bool operator==(const MasksemblesMlp&, const MasksemblesMlp&) = default;

 private:
  void check_mask_index(std::size_t mask_index) const;

  std::vector<std::size_t> widths_;
  std::optional<MaskSet> masks_;
  std::uint64_t seed_ = 0;
  std::vector<DenseLayer> layers_;
};

/// Builds a Masksembles MLP from `layer_widths` (input, hidden..., output).
///
/// Default mode draws a trimmed pool from `spec` and widens every hidden
/// layer to the retained width K. In fixed-width mode the (equal) hidden
/// widths are kept and m is solved from them and spec.s; the pool is not
/// trimmed, so never-selected units stay as dead columns.
MasksemblesMlp build_model(std::vector<std::size_t> layer_widths, const MaskSpec& spec,
                           bool fixed_width, std::uint64_t seed);

MasksemblesMlp build_unmasked(std::vector<std::size_t> layer_widths, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  // Reference path: one group per sample instead of one per mask.
  bool per_sample_masking = false;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
};

/// SGD with momentum. Each epoch reshuffles the data and draws a uniform
/// mask index for every sample, both from substreams of `config.seed`.
/// Throws TrainingError when the loss stops being finite.
TrainHistory train(MasksemblesMlp& model, const Dataset& data, const TrainConfig& config);

/// Per-submodel probabilities and their unweighted mean.
struct PredictionSet {
  std::vector<Tensor> per_mask;
  Tensor mixture;
};

PredictionSet predict_ensemble(const MasksemblesMlp& model, const Tensor& x);

/// Mixture over independently trained members (each evaluated with mask 0).
PredictionSet predict_members(std::span<const MasksemblesMlp> members, const Tensor& x);

/// Number of weights and biases, dead units included.
std::size_t model_size(const MasksemblesMlp& model);

void write_checkpoint(std::ostream& out, const MasksemblesMlp& model);
MasksemblesMlp read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const MasksemblesMlp& model);
MasksemblesMlp load_checkpoint(const std::string& path);

}  // namespace masksembles
