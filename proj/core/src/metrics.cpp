#include "masksembles/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "masksembles/error.hpp"
#include "masksembles/io.hpp"

namespace masksembles {

double entropy(std::span<const double> probs) {
  if (probs.empty()) throw ValidationError("entropy of an empty distribution");
  double total = 0.0;
  double h = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("probabilities must be finite and ≥ 0");
    total += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(total - 1.0) > 1e-6) throw ValidationError("probabilities must sum to 1");
  return std::max(h, 0.0);
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw ValidationError("accuracy of an empty prediction set");
  if (predictions.size() != labels.size()) throw ValidationError("predictions and labels differ in length");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<int> argmax_rows(const Tensor& probs) {
  std::vector<int> out;
  out.reserve(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

Calibration expected_calibration_error(const Tensor& probs, std::span<const int> labels,
                                       std::size_t num_bins) {
  if (num_bins < 1) throw ValidationError("num_bins must be ≥ 1");
  if (probs.rank() != 2 || labels.empty()) throw ValidationError("ECE needs a nonempty batch");
  if (labels.size() != probs.rows()) throw ValidationError("ECE: labels and rows differ in count");

  Calibration out;
  auto& d = out.diagram;
  d.bin_edges.resize(num_bins + 1);
  for (std::size_t b = 0; b <= num_bins; ++b) {
    d.bin_edges[b] = static_cast<double>(b) / static_cast<double>(num_bins);
  }
  d.bin_confidence.assign(num_bins, 0.0);
  d.bin_accuracy.assign(num_bins, 0.0);
  d.bin_count.assign(num_bins, 0);

  const auto predicted = argmax_rows(probs);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double confidence = probs(i, static_cast<std::size_t>(predicted[i]));
    // First edge >= confidence closes the bin (edge_{b}, edge_{b+1}].
    const auto it = std::lower_bound(d.bin_edges.begin() + 1, d.bin_edges.end(), confidence);
    const std::size_t bin = std::min<std::size_t>(
        static_cast<std::size_t>(it - (d.bin_edges.begin() + 1)), num_bins - 1);
    d.bin_confidence[bin] += confidence;
    d.bin_accuracy[bin] += predicted[i] == labels[i] ? 1.0 : 0.0;
    ++d.bin_count[bin];
  }

  const double total = static_cast<double>(labels.size());
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (d.bin_count[b] == 0) continue;
    const double count = static_cast<double>(d.bin_count[b]);
    d.bin_confidence[b] /= count;
    d.bin_accuracy[b] /= count;
    out.ece += count / total * std::abs(d.bin_accuracy[b] - d.bin_confidence[b]);
  }
  return out;
}

namespace {

void check_scores(std::span<const double> scores, std::span<const std::uint8_t> is_ood) {
  if (scores.size() != is_ood.size()) throw ValidationError("scores and OOD flags differ in length");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("scores must be finite");
  }
}

// Indices sorted by descending score.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> is_ood) {
  check_scores(scores, is_ood);
  const auto positives = static_cast<std::size_t>(std::count_if(
      is_ood.begin(), is_ood.end(), [](std::uint8_t f) { return f != 0; }));
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw ValidationError("ROC AUC needs both OOD and in-distribution samples");
  }
  // Mann-Whitney U: walk tie groups in ascending score order.
  auto order = descending_order(scores);
  std::reverse(order.begin(), order.end());
  double u = 0.0;
  std::size_t negatives_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_tied = 0;
    std::size_t neg_tied = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (is_ood[order[j]] ? pos_tied : neg_tied) += 1;
      ++j;
    }
    u += static_cast<double>(pos_tied) *
         (static_cast<double>(negatives_below) + 0.5 * static_cast<double>(neg_tied));
    negatives_below += neg_tied;
    i = j;
  }
  return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

double pr_auc(std::span<const double> scores, std::span<const std::uint8_t> is_ood) {
  check_scores(scores, is_ood);
  const auto positives = static_cast<std::size_t>(std::count_if(
      is_ood.begin(), is_ood.end(), [](std::uint8_t f) { return f != 0; }));
  if (positives == 0) throw ValidationError("PR AUC needs at least one OOD sample");
  const auto order = descending_order(scores);
  double area = 0.0;
  double previous_recall = 0.0;
  std::size_t true_pos = 0;
  std::size_t predicted = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      true_pos += is_ood[order[j]] ? 1 : 0;
      ++predicted;
      ++j;
    }
    const double recall = static_cast<double>(true_pos) / static_cast<double>(positives);
    const double precision = static_cast<double>(true_pos) / static_cast<double>(predicted);
    area += (recall - previous_recall) * precision;
    previous_recall = recall;
    i = j;
  }
  return area;
}

double disagreement(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ValidationError("prediction vectors differ in length");
  if (a.empty()) throw ValidationError("disagreement of empty prediction vectors");
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) differ += a[i] != b[i];
  return static_cast<double>(differ) / static_cast<double>(a.size());
}

double diversity(std::span<const int> a, std::span<const int> b, double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw ValidationError("accuracy must be in [0, 1]");
  if (accuracy >= 1.0) throw ValidationError("diversity is undefined at accuracy 1 (zero error rate)");
  return disagreement(a, b) / (1.0 - accuracy);
}

std::string to_string(OodScore score) {
  return score == OodScore::kEntropy ? "entropy" : "maxprob";
}

OodScore parse_ood_score(const std::string& name) {
  if (name == "entropy") return OodScore::kEntropy;
  if (name == "maxprob") return OodScore::kMaxProbability;
  throw ValidationError("unknown OOD score '" + name + "' (expected entropy or maxprob)");
}

std::vector<double> uncertainty_scores(const Tensor& probs, OodScore score) {
  std::vector<double> out;
  out.reserve(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    if (score == OodScore::kEntropy) {
      out.push_back(entropy(row));
    } else {
      out.push_back(1.0 - *std::max_element(row.begin(), row.end()));
    }
  }
  return out;
}

void MetricsReport::validate() const {
  for (double v : {s, iou, accuracy, ece, mean_entropy_in, mean_entropy_out, ood_roc_auc,
                   ood_pr_auc, wall_time_seconds}) {
    if (!std::isfinite(v)) throw ValidationError("metrics report has a non-finite field");
  }
  for (double v : {iou, accuracy, ece, ood_roc_auc, ood_pr_auc}) {
    if (v < 0.0 || v > 1.0) throw ValidationError("metrics report field outside [0, 1]");
  }
}

std::string metrics_csv_header() {
  return "tag,n,m,s,iou,accuracy,ece,entropy_in,entropy_out,roc_auc,pr_auc,model_size,wall_time_s";
}

std::string metrics_csv_row(const MetricsReport& r) {
  std::ostringstream out;
  out << r.tag << ',' << r.n << ',' << r.m << ',' << format_double(r.s) << ','
      << format_double(r.iou) << ',' << format_double(r.accuracy) << ',' << format_double(r.ece)
      << ',' << format_double(r.mean_entropy_in) << ',' << format_double(r.mean_entropy_out) << ','
      << format_double(r.ood_roc_auc) << ',' << format_double(r.ood_pr_auc) << ',' << r.model_size
      << ',' << format_double(r.wall_time_seconds);
  return out.str();
}

MetricsReport parse_metrics_csv_row(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 13) throw IoError("metrics csv: expected 13 fields, got " + std::to_string(f.size()));
  MetricsReport r;
  r.tag = f[0];
  r.n = parse_uint(f[1]);
  r.m = parse_uint(f[2]);
  r.s = parse_double(f[3]);
  r.iou = parse_double(f[4]);
  r.accuracy = parse_double(f[5]);
  r.ece = parse_double(f[6]);
  r.mean_entropy_in = parse_double(f[7]);
  r.mean_entropy_out = parse_double(f[8]);
  r.ood_roc_auc = parse_double(f[9]);
  r.ood_pr_auc = parse_double(f[10]);
  r.model_size = parse_uint(f[11]);
  r.wall_time_seconds = parse_double(f[12]);
  return r;
}

std::string reliability_csv(const ReliabilityDiagram& d) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,confidence,accuracy,count\n";
  for (std::size_t b = 0; b < d.bin_count.size(); ++b) {
    out << format_double(d.bin_edges[b]) << ',' << format_double(d.bin_edges[b + 1]) << ','
        << format_double(d.bin_confidence[b]) << ',' << format_double(d.bin_accuracy[b]) << ','
        << d.bin_count[b] << '\n';
  }
  return out.str();
}

ReliabilityDiagram parse_reliability_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "bin_lo,bin_hi,confidence,accuracy,count") {
    throw IoError("reliability csv: bad header");
  }
  ReliabilityDiagram d;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw IoError("reliability csv: expected 5 fields");
    const double lo = parse_double(f[0]);
    if (d.bin_edges.empty()) {
      d.bin_edges.push_back(lo);
    } else if (d.bin_edges.back() != lo) {
      throw IoError("reliability csv: bins are not contiguous");
    }
    d.bin_edges.push_back(parse_double(f[1]));
    d.bin_confidence.push_back(parse_double(f[2]));
    d.bin_accuracy.push_back(parse_double(f[3]));
    d.bin_count.push_back(parse_uint(f[4]));
  }
  if (d.bin_count.empty()) throw IoError("reliability csv: no bins");
  return d;
}

}  // namespace masksembles
