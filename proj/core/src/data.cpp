#include "masksembles/data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "masksembles/error.hpp"
#include "masksembles/io.hpp"
#include "masksembles/rng.hpp"

namespace masksembles {

void Dataset::validate() const {
  if (!features.all_finite()) throw ValidationError("dataset features must be finite");
  if (labeled()) {
    if (labels.size() != size()) throw ValidationError("dataset has mismatched label count");
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw ValidationError("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(num_classes) + ")");
      }
    }
  }
  if (!in_distribution.empty() && in_distribution.size() != size()) {
    throw ValidationError("dataset has mismatched in-distribution flags");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ValidationError("subset must select at least one sample");
  const std::size_t f = feature_count();
  std::vector<double> data;
  data.reserve(indices.size() * f);
  Dataset out;
  for (std::size_t idx : indices) {
    if (idx >= size()) throw ValidationError("subset index out of range");
    const auto row = features.row(idx);
    data.insert(data.end(), row.begin(), row.end());
    if (labeled()) out.labels.push_back(labels[idx]);
    if (!in_distribution.empty()) out.in_distribution.push_back(in_distribution[idx]);
  }
  out.features = Tensor(Shape{indices.size(), f}, std::move(data));
  out.num_classes = num_classes;
  out.generator = generator;
  out.seed = seed;
  return out;
}

Dataset gen_two_sinusoids(const SinusoidParams& params, std::uint64_t seed) {
  if (params.count_per_class < 1) throw ValidationError("count_per_class must be ≥ 1");
  if (!(params.noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be ≥ 0");
  if (!(params.x_hi > params.x_lo)) throw ValidationError("x range must be non-empty");

  Rng rng(seed);
  const std::size_t total = 2 * params.count_per_class;
  const std::size_t dims = 2 + params.nuisance_dims;
  std::vector<double> data;
  data.reserve(dims * total);
  Dataset out;
  out.labels.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const int label = static_cast<int>(i % 2);
    const double x = rng.uniform(params.x_lo, params.x_hi);
    const double offset = label == 0 ? params.offset0 : params.offset1;
    const double noise = params.noise_sigma > 0.0 ? rng.normal(0.0, params.noise_sigma) : 0.0;
    data.push_back(x);
    data.push_back(std::sin(x) + offset + noise);
    for (std::size_t d = 0; d < params.nuisance_dims; ++d) data.push_back(rng.normal());
    out.labels.push_back(label);
  }
  out.features = Tensor(Shape{total, dims}, std::move(data));
  out.num_classes = 2;
  out.generator = "two_sinusoids";
  out.seed = seed;
  return out;
}

Dataset gen_blobs(std::size_t count_per_class, double separation, double sigma,
                  std::uint64_t seed) {
  if (count_per_class < 1) throw ValidationError("count_per_class must be ≥ 1");
  if (!(sigma >= 0.0)) throw ValidationError("sigma must be ≥ 0");
  Rng rng(seed);
  const std::size_t total = 2 * count_per_class;
  std::vector<double> data;
  data.reserve(2 * total);
  Dataset out;
  for (std::size_t i = 0; i < total; ++i) {
    const int label = static_cast<int>(i % 2);
    const double cx = label == 0 ? -separation / 2 : separation / 2;
    data.push_back(rng.normal(cx, sigma));
    data.push_back(rng.normal(0.0, sigma));
    out.labels.push_back(label);
  }
  out.features = Tensor(Shape{total, 2}, std::move(data));
  out.num_classes = 2;
  out.generator = "blobs";
  out.seed = seed;
  return out;
}

Dataset gen_ood_grid(const GridParams& p) {
  if (p.resolution_x < 2 || p.resolution_y < 2) {
    throw ValidationError("grid resolution must be ≥ 2 per axis");
  }
  if (!(p.x_hi > p.x_lo) || !(p.y_hi > p.y_lo)) {
    throw ValidationError("grid range must be non-degenerate");
  }
  const std::size_t total = p.resolution_x * p.resolution_y;
  std::vector<double> data;
  data.reserve(2 * total);
  Dataset out;
  out.in_distribution.reserve(total);
  const double dx = (p.x_hi - p.x_lo) / static_cast<double>(p.resolution_x - 1);
  const double dy = (p.y_hi - p.y_lo) / static_cast<double>(p.resolution_y - 1);
  for (std::size_t iy = 0; iy < p.resolution_y; ++iy) {
    const double y = p.y_lo + dy * static_cast<double>(iy);
    for (std::size_t ix = 0; ix < p.resolution_x; ++ix) {
      const double x = p.x_lo + dx * static_cast<double>(ix);
      data.push_back(x);
      data.push_back(y);
      out.in_distribution.push_back(x >= p.in_x_lo && x <= p.in_x_hi ? 1 : 0);
    }
  }
  out.features = Tensor(Shape{total, 2}, std::move(data));
  out.num_classes = 2;
  out.generator = "ood_grid";
  return out;
}

Dataset out_of_distribution_points(const Dataset& grid) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < grid.in_distribution.size(); ++i) {
    if (!grid.in_distribution[i]) idx.push_back(i);
  }
  if (idx.empty()) throw ValidationError("grid has no out-of-distribution points");
  return grid.subset(idx);
}

Dataset corrupt_gaussian(const Dataset& dataset, int severity, std::uint64_t seed,
                         double base_fraction) {
  if (severity < 0 || severity > 5) throw ValidationError("severity must be in [0, 5]");
  Dataset out = dataset;
  if (severity == 0) return out;

  const std::size_t rows = dataset.size();
  const std::size_t cols = dataset.feature_count();
  std::vector<double> sigma(cols, 0.0);
  for (std::size_t c = 0; c < cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += dataset.features(r, c);
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = dataset.features(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(rows);
    sigma[c] = static_cast<double>(severity) * base_fraction * std::sqrt(var);
  }
  Rng rng(seed);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.features(r, c) += rng.normal(0.0, sigma[c]);
  }
  return out;
}

std::string dataset_to_csv(const Dataset& dataset) {
  std::ostringstream out;
  for (std::size_t c = 0; c < dataset.feature_count(); ++c) out << 'x' << c << ',';
  out << "label\n";
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    for (std::size_t c = 0; c < dataset.feature_count(); ++c) {
      out << format_double(dataset.features(r, c)) << ',';
    }
    out << (dataset.labeled() ? dataset.labels[r] : -1) << '\n';
  }
  return out.str();
}

Dataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset csv: missing header");
  const auto header = split(line, ',');
  if (header.size() < 2 || header.back() != "label") {
    throw IoError("dataset csv: header must be x0,...,x{F-1},label");
  }
  const std::size_t f = header.size() - 1;
  for (std::size_t c = 0; c < f; ++c) {
    if (header[c] != "x" + std::to_string(c)) throw IoError("dataset csv: bad column '" + header[c] + "'");
  }
  std::vector<double> data;
  std::vector<int> labels;
  std::size_t unlabeled = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != f + 1) throw IoError("dataset csv: wrong field count in '" + line + "'");
    for (std::size_t c = 0; c < f; ++c) data.push_back(parse_double(fields[c]));
    const auto label = parse_int(fields[f]);
    if (label == -1) ++unlabeled;
    labels.push_back(static_cast<int>(label));
  }
  if (labels.empty()) throw IoError("dataset csv: no rows");
  Dataset out;
  out.features = Tensor(Shape{labels.size(), f}, std::move(data));
  if (unlabeled == labels.size()) {
    out.num_classes = 0;
  } else if (unlabeled == 0) {
    int top = 0;
    for (int y : labels) {
      if (y < 0) throw IoError("dataset csv: negative label");
      top = std::max(top, y);
    }
    out.num_classes = static_cast<std::size_t>(top) + 1;
    out.labels = std::move(labels);
  } else {
    throw IoError("dataset csv: mixes labeled and unlabeled rows");
  }
  out.generator = "csv";
  try {
    out.validate();
  } catch (const ValidationError& e) {
    throw IoError(std::string("dataset csv: ") + e.what());
  }
  return out;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  write_file_atomic(path, dataset_to_csv(dataset));
}

Dataset load_dataset(const std::string& path) { return dataset_from_csv(read_file(path)); }

}  // namespace masksembles
