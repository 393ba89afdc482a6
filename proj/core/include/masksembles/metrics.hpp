#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "masksembles/tensor.hpp"

namespace masksembles {

/// -sum p log p in nats; 0 log 0 = 0. Throws ValidationError unless `probs`
/// is nonnegative and sums to 1 within 1e-6.
double entropy(std::span<const double> probs);

/// Fraction of positions where `predictions` equals `labels`.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Row-wise argmax (lowest index wins ties).
std::vector<int> argmax_rows(const Tensor& probs);

struct ReliabilityDiagram {
  std::vector<double> bin_edges;  // num_bins + 1 values, 0 .. 1
  std::vector<double> bin_confidence;
  std::vector<double> bin_accuracy;
  std::vector<std::size_t> bin_count;
};

struct Calibration {
  double ece = 0.0;
  ReliabilityDiagram diagram;
};

/// Equal-width binning of the max-probability confidence on [0, 1]; bin b
/// holds confidences in (edge_b, edge_{b+1}] (the first bin also takes 0).
/// ECE = sum_b (count_b / B) |acc_b - conf_b|.
Calibration expected_calibration_error(const Tensor& probs, std::span<const int> labels,
                                       std::size_t num_bins = 15);

/// P(score of a random OOD sample > score of a random in-distribution
/// sample), ties credited 1/2. Needs both classes.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> is_ood);

/// Average precision for the OOD-positive class: sum over descending unique
/// thresholds of (recall_t - recall_{t-1}) * precision_t.
double pr_auc(std::span<const double> scores, std::span<const std::uint8_t> is_ood);

/// Fraction of positions where two label vectors differ.
double disagreement(std::span<const int> a, std::span<const int> b);

/// disagreement(a, b) / (1 - accuracy). Throws ValidationError when
/// accuracy is 1 (the ratio is undefined).
double diversity(std::span<const int> a, std::span<const int> b, double accuracy);

enum class OodScore { kEntropy, kMaxProbability };

std::string to_string(OodScore score);
OodScore parse_ood_score(const std::string& name);

/// Per-row uncertainty: entropy, or 1 - max probability. Larger means
/// "more likely out-of-distribution".
std::vector<double> uncertainty_scores(const Tensor& probs, OodScore score);

/// One evaluated configuration.
struct MetricsReport {
  std::string tag;
  std::size_t n = 1;
  std::size_t m = 0;
  double s = 1.0;
  double iou = 1.0;
  double accuracy = 0.0;
  double ece = 0.0;
  double mean_entropy_in = 0.0;
  double mean_entropy_out = 0.0;
  double ood_roc_auc = 0.0;
  double ood_pr_auc = 0.0;
  std::size_t model_size = 0;
  double wall_time_seconds = 0.0;

  /// Finite fields, bounded fields within [0, 1].
  void validate() const;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& report);
MetricsReport parse_metrics_csv_row(const std::string& line);

/// bin_lo,bin_hi,confidence,accuracy,count
std::string reliability_csv(const ReliabilityDiagram& diagram);
ReliabilityDiagram parse_reliability_csv(const std::string& text);

}  // namespace masksembles
