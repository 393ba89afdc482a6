#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "masksembles/data.hpp"
#include "masksembles/metrics.hpp"
#include "masksembles/mlp.hpp"

namespace masksembles {

/// Runs fn(0) .. fn(count - 1) on up to `jobs` threads. Each index must
/// write only to its own output slot; completion acts as the barrier.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  MetricsReport report;
  ReliabilityDiagram diagram;
  // OOD detection inputs: in-distribution test samples first, then OOD.
  std::vector<double> scores;
  std::vector<std::uint8_t> is_ood;
};

/// Mixture predictions on a labeled in-distribution set and an OOD set.
/// Fills accuracy, ECE, mean entropies and OOD AUCs; `report.tag`, n, m, s,
/// iou and model_size are left to the caller.
Evaluation evaluate_predictions(const Tensor& in_mixture, std::span<const int> labels,
                                const Tensor& ood_mixture, std::size_t num_bins, OodScore score);

/// Evaluates every mask of `model` and records its pool parameters.
Evaluation evaluate_model(const MasksemblesMlp& model, const Dataset& test, const Dataset& ood,
                          std::size_t num_bins, OodScore score, const std::string& tag);

/// Mean pairwise IoU of the model's pool; 1 for models with fewer than two
/// masks.
double pool_iou(const MasksemblesMlp& model);

/// `hidden_layers` hidden layers of width `hidden` between input and output.
std::vector<std::size_t> mlp_widths(std::size_t inputs, std::size_t hidden,
                                    std::size_t hidden_layers, std::size_t outputs);

// ---------------------------------------------------------------------------
// Single-model -> ensemble transition on the two-sinusoid task.

struct TransitionConfig {
  SinusoidParams data;
  std::size_t test_count_per_class = 500;
  GridParams grid;
  std::size_t n = 4;
  std::size_t m = 100;
  std::vector<double> s_values{1.1, 2.0, 3.0, 10.0};
  std::size_t hidden_layers = 1;
  std::size_t ensemble_members = 4;
  TrainConfig train;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const;
};

struct TransitionCell {
  std::size_t repeat = 0;
  std::string config;  // "single", "ensemble" or "masksembles"
  double s = 1.0;
  std::size_t n = 1;
  std::size_t m = 0;
  double iou = 1.0;
  double accuracy = 0.0;
  double mean_entropy_in = 0.0;   // grid points inside the training band
  double mean_entropy_ood = 0.0;  // grid points outside it
  std::size_t model_size = 0;
  std::vector<double> grid_entropy;

  /// "single", "ensemble" or the S value.
  std::string s_label() const;
};

struct TransitionResult {
  Dataset grid;
  std::vector<TransitionCell> cells;  // repeat-major, configs in a fixed order
};

/// Per repeat: a single unmasked model of width m, one Masksembles model per
/// S (fixed m, trimmed pool), and an ensemble of `ensemble_members`
/// independently seeded unmasked models of width m.
TransitionResult run_transition_sweep(const TransitionConfig& config);

/// repeat,config,s,n,m,iou,accuracy,entropy_in,entropy_ood,model_size
std::string transition_summary_csv(const TransitionResult& result);
/// x0,x1,in_distribution,entropy
std::string grid_entropy_csv(const Dataset& grid, const TransitionCell& cell);

// ---------------------------------------------------------------------------
// Diversity vs accuracy.

struct DiversityConfig {
  SinusoidParams data{.count_per_class = 50, .noise_sigma = 0.3, .nuisance_dims = 50};
  std::size_t test_count_per_class = 1000;
  std::size_t n = 4;
  std::size_t m = 100;
  std::vector<double> s_values{2.0, 3.0, 4.0, 5.0};
  std::size_t hidden_layers = 1;
  std::size_t ensemble_members = 4;
  TrainConfig train{.epochs = 200};
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const;
};

struct DiversityRow {
  std::size_t repeat = 0;
  std::string config;  // "single", "ensemble" or "masksembles"
  double s = 1.0;
  std::string pair_id;  // "i-j" member or mask indices
  double accuracy = 0.0;  // mean test accuracy of the two members
  double diversity = 0.0;
  // Reference curves: diversity can be no lower than 0 and, because two
  // models with error e disagree on at most min(1, 2e) of the samples, no
  // higher than min(1, 2e) / e.
  double diversity_lower = 0.0;
  double diversity_upper = 0.0;

  std::string s_label() const;
};

std::vector<DiversityRow> run_diversity_sweep(const DiversityConfig& config);

/// repeat,config,s,pair_id,accuracy,diversity,diversity_lower,diversity_upper
std::string diversity_csv(const std::vector<DiversityRow>& rows);
std::vector<DiversityRow> parse_diversity_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Size / IoU surface.

struct SurfaceConfig {
  std::vector<std::size_t> n_values{1, 2, 4, 8};
  std::size_t m = 64;
  std::vector<double> s_values{1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
  std::size_t draws = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SurfaceRow {
  std::size_t n = 1;
  double s = 1.0;
  double relative_size = 1.0;    // mean retained width / m over the draws
  double analytical_size = 1.0;  // expected_size / m
  double empirical_iou = 1.0;    // NaN when n < 2 (no pairs)
  double analytical_iou = 1.0;
};

std::vector<SurfaceRow> run_surface_sweep(const SurfaceConfig& config);

/// n,s,relative_size,analytical_size,empirical_iou,analytical_iou
std::string surface_csv(const std::vector<SurfaceRow>& rows);
std::vector<SurfaceRow> parse_surface_csv(const std::string& text);

}  // namespace masksembles
