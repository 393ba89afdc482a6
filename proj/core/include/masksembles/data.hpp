#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "masksembles/tensor.hpp"

namespace masksembles {

/// Feature matrix plus integer labels. Unlabeled sets (evaluation grids)
/// have an empty `labels` vector; grids also carry a per-point
/// in-distribution flag.
struct Dataset {
  Tensor features;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::vector<std::uint8_t> in_distribution;
  std::string generator;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t feature_count() const noexcept { return features.cols(); }
  bool labeled() const noexcept { return !labels.empty(); }

  /// Labels within [0, num_classes), finite features, consistent sizes.
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;
};

struct SinusoidParams {
  std::size_t count_per_class = 500;
  double noise_sigma = 0.3;
  double x_lo = -5.0;
  double x_hi = 5.0;
  double offset0 = 1.0;
  double offset1 = -1.0;
  // Extra uninformative N(0, 1) feature columns appended after (x, y).
  std::size_t nuisance_dims = 0;
};

/// Class c points lie on y = sin(x) + offset_c + eps, eps ~ N(0, sigma^2),
/// x ~ U[x_lo, x_hi]. Samples alternate between the two classes.
Dataset gen_two_sinusoids(const SinusoidParams& params, std::uint64_t seed);

/// Two isotropic Gaussian blobs centred at (-separation/2, 0) and
/// (+separation/2, 0).
Dataset gen_blobs(std::size_t count_per_class, double separation, double sigma,
                  std::uint64_t seed);

struct GridParams {
  double x_lo = -10.0;
  double x_hi = 10.0;
  double y_lo = -4.0;
  double y_hi = 4.0;
  std::size_t resolution_x = 81;
  std::size_t resolution_y = 33;
  // Points with x inside [in_x_lo, in_x_hi] are flagged in-distribution.
  double in_x_lo = -5.0;
  double in_x_hi = 5.0;
};

/// Regular unlabeled grid, row-major with x varying fastest.
Dataset gen_ood_grid(const GridParams& params);

/// Points of a grid whose in-distribution flag is clear.
Dataset out_of_distribution_points(const Dataset& grid);

/// Adds N(0, (severity * base_fraction * std_f)^2) noise to feature f, where
/// std_f is the feature's standard deviation in `dataset`. Severity 0 returns
/// an exact copy.
Dataset corrupt_gaussian(const Dataset& dataset, int severity, std::uint64_t seed,
                         double base_fraction = 0.2);

/// CSV with header x0,...,x{F-1},label. Unlabeled rows carry label -1.
std::string dataset_to_csv(const Dataset& dataset);
Dataset dataset_from_csv(const std::string& text);
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

}  // namespace masksembles
