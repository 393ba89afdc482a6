#include "masksembles/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "masksembles/error.hpp"
#include "masksembles/io.hpp"
#include "masksembles/rng.hpp"

namespace masksembles {

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

Evaluation evaluate_predictions(const Tensor& in_mixture, std::span<const int> labels,
                                const Tensor& ood_mixture, std::size_t num_bins, OodScore score) {
  Evaluation out;
  const auto predicted = argmax_rows(in_mixture);
  out.report.accuracy = accuracy(predicted, labels);
  auto calibration = expected_calibration_error(in_mixture, labels, num_bins);
  out.report.ece = calibration.ece;
  out.diagram = std::move(calibration.diagram);

  const auto entropy_in = uncertainty_scores(in_mixture, OodScore::kEntropy);
  const auto entropy_out = uncertainty_scores(ood_mixture, OodScore::kEntropy);
  auto mean = [](const std::vector<double>& v) {
    double total = 0.0;
    for (double x : v) total += x;
    return total / static_cast<double>(v.size());
  };
  out.report.mean_entropy_in = mean(entropy_in);
  out.report.mean_entropy_out = mean(entropy_out);

  out.scores = uncertainty_scores(in_mixture, score);
  const auto ood_scores = uncertainty_scores(ood_mixture, score);
  out.is_ood.assign(out.scores.size(), 0);
  out.scores.insert(out.scores.end(), ood_scores.begin(), ood_scores.end());
  out.is_ood.resize(out.scores.size(), 1);
  out.report.ood_roc_auc = roc_auc(out.scores, out.is_ood);
  out.report.ood_pr_auc = pr_auc(out.scores, out.is_ood);
  return out;
}

double pool_iou(const MasksemblesMlp& model) {
  if (!model.masks() || model.masks()->count() < 2) return 1.0;
  return empirical_mean_iou(*model.masks());
}

Evaluation evaluate_model(const MasksemblesMlp& model, const Dataset& test, const Dataset& ood,
                          std::size_t num_bins, OodScore score, const std::string& tag) {
  if (!test.labeled()) throw ValidationError("evaluation needs a labeled test set");
  const auto in_preds = predict_ensemble(model, test.features);
  const auto ood_preds = predict_ensemble(model, ood.features);
  Evaluation out = evaluate_predictions(in_preds.mixture, test.labels, ood_preds.mixture, num_bins, score);
  out.report.tag = tag;
  if (model.masks()) {
    const MaskSpec& spec = model.masks()->spec();
    out.report.n = spec.n;
    out.report.m = spec.m;
    out.report.s = spec.s;
  } else {
    out.report.n = 1;
    out.report.m = model.widths()[1];
    out.report.s = 1.0;
  }
  out.report.iou = pool_iou(model);
  out.report.model_size = model_size(model);
  return out;
}

std::vector<std::size_t> mlp_widths(std::size_t inputs, std::size_t hidden,
                                    std::size_t hidden_layers, std::size_t outputs) {
  std::vector<std::size_t> widths{inputs};
  widths.insert(widths.end(), hidden_layers, hidden);
  widths.push_back(outputs);
  return widths;
}

namespace {

std::string label_for(const std::string& config, double s) {
  if (config == "masksembles") return format_double(s);
  return config;
}

void validate_common(std::size_t n, std::size_t m, const std::vector<double>& s_values,
                     std::size_t hidden_layers, std::size_t members, const TrainConfig& train,
                     std::size_t repeats) {
  if (n < 1) throw ValidationError("n must be ≥ 1");
  if (m < 1) throw ValidationError("m must be ≥ 1");
  if (s_values.empty()) throw ValidationError("S grid must be nonempty");
  for (double s : s_values) {
    if (!std::isfinite(s) || s < 1.0) throw ValidationError("s must be ≥ 1");
  }
  if (hidden_layers < 1) throw ValidationError("hidden_layers must be ≥ 1");
  if (members < 1) throw ValidationError("ensemble needs at least one member");
  if (repeats < 1) throw ValidationError("repeats must be ≥ 1");
  train.validate();
}

// Seed layout for sweep cells: derive_seed(master, {repeat, stream, ...}).
constexpr std::uint64_t kTrainDataStream = 0;
constexpr std::uint64_t kTestDataStream = 1;
constexpr std::uint64_t kCellStream = 2;

struct TrainedConfig {
  std::string config;
  double s = 1.0;
  std::vector<MasksemblesMlp> models;  // one model, or the ensemble members
};

TrainedConfig train_config_cell(const std::string& config, double s, std::size_t n, std::size_t m,
                                std::size_t hidden_layers, std::size_t members,
                                const TrainConfig& train_config, const Dataset& train_data,
                                std::uint64_t cell_seed) {
  TrainedConfig out{config, s, {}};
  const auto widths = mlp_widths(train_data.feature_count(), m, hidden_layers, train_data.num_classes);
  TrainConfig tc = train_config;
  if (config == "single") {
    out.models.push_back(build_unmasked(widths, derive_seed(cell_seed, 0)));
    tc.seed = derive_seed(cell_seed, 2);
    train(out.models.back(), train_data, tc);
  } else if (config == "masksembles") {
    const MaskSpec spec{.n = n, .m = m, .s = s, .seed = derive_seed(cell_seed, 1)};
    out.models.push_back(build_model(widths, spec, false, derive_seed(cell_seed, 0)));
    tc.seed = derive_seed(cell_seed, 2);
    train(out.models.back(), train_data, tc);
  } else {
    for (std::size_t j = 0; j < members; ++j) {
      out.models.push_back(build_unmasked(widths, derive_seed(cell_seed, {3, j})));
      tc.seed = derive_seed(cell_seed, {4, j});
      train(out.models.back(), train_data, tc);
    }
  }
  return out;
}

struct CellPlan {
  std::size_t repeat;
  std::size_t index;  // position within the repeat
  std::string config;
  double s;
};

std::vector<CellPlan> plan_cells(std::size_t repeats, const std::vector<double>& s_values) {
  std::vector<CellPlan> plan;
  for (std::size_t r = 0; r < repeats; ++r) {
    std::size_t index = 0;
    plan.push_back({r, index++, "single", 1.0});
    for (double s : s_values) plan.push_back({r, index++, "masksembles", s});
    plan.push_back({r, index++, "ensemble", 1.0});
  }
  return plan;
}

PredictionSet predict(const TrainedConfig& trained, const Tensor& x) {
  if (trained.config == "ensemble") return predict_members(trained.models, x);
  return predict_ensemble(trained.models.front(), x);
}

}  // namespace

std::string TransitionCell::s_label() const { return label_for(config, s); }
std::string DiversityRow::s_label() const { return label_for(config, s); }

void TransitionConfig::validate() const {
  validate_common(n, m, s_values, hidden_layers, ensemble_members, train, repeats);
  if (test_count_per_class < 1) throw ValidationError("test_count_per_class must be ≥ 1");
}

TransitionResult run_transition_sweep(const TransitionConfig& config) {
  config.validate();
  TransitionResult result;
  result.grid = gen_ood_grid(config.grid);

  std::vector<Dataset> train_sets;
  std::vector<Dataset> test_sets;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    train_sets.push_back(gen_two_sinusoids(config.data, derive_seed(config.seed, {r, kTrainDataStream})));
    SinusoidParams test_params = config.data;
    test_params.count_per_class = config.test_count_per_class;
    test_sets.push_back(gen_two_sinusoids(test_params, derive_seed(config.seed, {r, kTestDataStream})));
  }

  const auto plan = plan_cells(config.repeats, config.s_values);
  result.cells.resize(plan.size());
  parallel_for(plan.size(), config.jobs, [&](std::size_t i) {
    const CellPlan& p = plan[i];
    const auto trained = train_config_cell(
        p.config, p.s, config.n, config.m, config.hidden_layers, config.ensemble_members,
        config.train, train_sets[p.repeat], derive_seed(config.seed, {p.repeat, kCellStream, p.index}));

    TransitionCell cell;
    cell.repeat = p.repeat;
    cell.config = p.config;
    cell.s = p.s;
    cell.m = config.m;
    cell.n = trained.config == "masksembles" ? config.n : trained.models.size();
    cell.iou = trained.config == "ensemble" ? 0.0 : pool_iou(trained.models.front());
    for (const auto& model : trained.models) cell.model_size += model_size(model);

    const Dataset& test = test_sets[p.repeat];
    const auto test_preds = predict(trained, test.features);
    cell.accuracy = accuracy(argmax_rows(test_preds.mixture), test.labels);

    const auto grid_preds = predict(trained, result.grid.features);
    cell.grid_entropy = uncertainty_scores(grid_preds.mixture, OodScore::kEntropy);
    double in_total = 0.0;
    double out_total = 0.0;
    std::size_t in_count = 0;
    for (std::size_t g = 0; g < cell.grid_entropy.size(); ++g) {
      if (result.grid.in_distribution[g]) {
        in_total += cell.grid_entropy[g];
        ++in_count;
      } else {
        out_total += cell.grid_entropy[g];
      }
    }
    const std::size_t out_count = cell.grid_entropy.size() - in_count;
    cell.mean_entropy_in = in_count ? in_total / static_cast<double>(in_count) : 0.0;
    cell.mean_entropy_ood = out_count ? out_total / static_cast<double>(out_count) : 0.0;
    result.cells[i] = std::move(cell);
  });
  return result;
}

std::string transition_summary_csv(const TransitionResult& result) {
  std::ostringstream out;
  out << "repeat,config,s,n,m,iou,accuracy,entropy_in,entropy_ood,model_size\n";
  for (const auto& c : result.cells) {
    out << c.repeat << ',' << c.config << ',' << c.s_label() << ',' << c.n << ',' << c.m << ','
        << format_double(c.iou) << ',' << format_double(c.accuracy) << ','
        << format_double(c.mean_entropy_in) << ',' << format_double(c.mean_entropy_ood) << ','
        << c.model_size << '\n';
  }
  return out.str();
}

std::string grid_entropy_csv(const Dataset& grid, const TransitionCell& cell) {
  std::ostringstream out;
  out << "x0,x1,in_distribution,entropy\n";
  for (std::size_t g = 0; g < grid.size(); ++g) {
    out << format_double(grid.features(g, 0)) << ',' << format_double(grid.features(g, 1)) << ','
        << static_cast<int>(grid.in_distribution[g]) << ',' << format_double(cell.grid_entropy[g])
        << '\n';
  }
  return out.str();
}

void DiversityConfig::validate() const {
  validate_common(n, m, s_values, hidden_layers, ensemble_members, train, repeats);
  if (n < 2) throw ValidationError("diversity sweep needs n ≥ 2 masks");
  if (ensemble_members < 2) throw ValidationError("diversity sweep needs at least 2 ensemble members");
  if (test_count_per_class < 1) throw ValidationError("test_count_per_class must be ≥ 1");
}

std::vector<DiversityRow> run_diversity_sweep(const DiversityConfig& config) {
  config.validate();
  std::vector<Dataset> train_sets;
  std::vector<Dataset> test_sets;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    train_sets.push_back(gen_two_sinusoids(config.data, derive_seed(config.seed, {r, kTrainDataStream})));
    SinusoidParams test_params = config.data;
    test_params.count_per_class = config.test_count_per_class;
    test_sets.push_back(gen_two_sinusoids(test_params, derive_seed(config.seed, {r, kTestDataStream})));
  }

  const auto plan = plan_cells(config.repeats, config.s_values);
  std::vector<std::vector<DiversityRow>> per_cell(plan.size());
  parallel_for(plan.size(), config.jobs, [&](std::size_t i) {
    const CellPlan& p = plan[i];
    const auto trained = train_config_cell(
        p.config, p.s, config.n, config.m, config.hidden_layers, config.ensemble_members,
        config.train, train_sets[p.repeat], derive_seed(config.seed, {p.repeat, kCellStream, p.index}));
    const Dataset& test = test_sets[p.repeat];
    const auto preds = predict(trained, test.features);

    std::vector<std::vector<int>> labels;
    std::vector<double> accuracies;
    for (const Tensor& probs : preds.per_mask) {
      labels.push_back(argmax_rows(probs));
      accuracies.push_back(accuracy(labels.back(), test.labels));
    }

    auto emit = [&](std::size_t a, std::size_t b) {
      DiversityRow row;
      row.repeat = p.repeat;
      row.config = p.config;
      row.s = p.s;
      row.pair_id = std::to_string(a) + "-" + std::to_string(b);
      row.accuracy = 0.5 * (accuracies[a] + accuracies[b]);
      if (row.accuracy < 1.0) {
        const double error = 1.0 - row.accuracy;
        row.diversity = diversity(labels[a], labels[b], row.accuracy);
        row.diversity_upper = std::min(1.0, 2.0 * error) / error;
      } else {
        row.diversity = std::numeric_limits<double>::quiet_NaN();
        row.diversity_upper = std::numeric_limits<double>::quiet_NaN();
      }
      per_cell[i].push_back(row);
    };
    if (labels.size() == 1) {
      emit(0, 0);
    } else {
      for (std::size_t a = 0; a < labels.size(); ++a) {
        for (std::size_t b = a + 1; b < labels.size(); ++b) emit(a, b);
      }
    }
  });

  std::vector<DiversityRow> rows;
  for (auto& cell : per_cell) rows.insert(rows.end(), cell.begin(), cell.end());
  return rows;
}

std::string diversity_csv(const std::vector<DiversityRow>& rows) {
  std::ostringstream out;
  out << "repeat,config,s,pair_id,accuracy,diversity,diversity_lower,diversity_upper\n";
  for (const auto& r : rows) {
    out << r.repeat << ',' << r.config << ',' << r.s_label() << ',' << r.pair_id << ','
        << format_double(r.accuracy) << ',' << format_double(r.diversity) << ','
        << format_double(r.diversity_lower) << ',' << format_double(r.diversity_upper) << '\n';
  }
  return out.str();
}

std::vector<DiversityRow> parse_diversity_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "repeat,config,s,pair_id,accuracy,diversity,diversity_lower,diversity_upper") {
    throw IoError("diversity csv: bad header");
  }
  std::vector<DiversityRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) throw IoError("diversity csv: expected 8 fields");
    DiversityRow r;
    r.repeat = parse_uint(f[0]);
    r.config = f[1];
    r.s = r.config == "masksembles" ? parse_double(f[2]) : 1.0;
    r.pair_id = f[3];
    r.accuracy = parse_double(f[4]);
    r.diversity = parse_double(f[5]);
    r.diversity_lower = parse_double(f[6]);
    r.diversity_upper = parse_double(f[7]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void SurfaceConfig::validate() const {
  if (n_values.empty() || s_values.empty()) throw ValidationError("surface grids must be nonempty");
  for (std::size_t n : n_values) {
    if (n < 1) throw ValidationError("n must be ≥ 1");
  }
  for (double s : s_values) {
    if (!std::isfinite(s) || s < 1.0) throw ValidationError("s must be ≥ 1");
  }
  if (m < 1) throw ValidationError("m must be ≥ 1");
  if (draws < 1) throw ValidationError("draws must be ≥ 1");
}

std::vector<SurfaceRow> run_surface_sweep(const SurfaceConfig& config) {
  config.validate();
  std::vector<SurfaceRow> rows;
  for (std::size_t in = 0; in < config.n_values.size(); ++in) {
    for (std::size_t is = 0; is < config.s_values.size(); ++is) {
      SurfaceRow row;
      row.n = config.n_values[in];
      row.s = config.s_values[is];
      const MaskSpec base{.n = row.n, .m = config.m, .s = row.s};
      double width_total = 0.0;
      double iou_total = 0.0;
      for (std::size_t d = 0; d < config.draws; ++d) {
        MaskSpec spec = base;
        spec.seed = derive_seed(config.seed, {in, is, d});
        const MaskSet masks = generate_masks(spec, true);
        width_total += static_cast<double>(masks.width());
        if (row.n >= 2) iou_total += empirical_mean_iou(masks);
      }
      const double m = static_cast<double>(config.m);
      const double draws = static_cast<double>(config.draws);
      row.relative_size = width_total / draws / m;
      row.analytical_size = expected_size(base) / m;
      row.empirical_iou = row.n >= 2 ? iou_total / draws : std::numeric_limits<double>::quiet_NaN();
      row.analytical_iou = expected_iou(row.s);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string surface_csv(const std::vector<SurfaceRow>& rows) {
  std::ostringstream out;
  out << "n,s,relative_size,analytical_size,empirical_iou,analytical_iou\n";
  for (const auto& r : rows) {
    out << r.n << ',' << format_double(r.s) << ',' << format_double(r.relative_size) << ','
        << format_double(r.analytical_size) << ',' << format_double(r.empirical_iou) << ','
        << format_double(r.analytical_iou) << '\n';
  }
  return out.str();
}

std::vector<SurfaceRow> parse_surface_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "n,s,relative_size,analytical_size,empirical_iou,analytical_iou") {
    throw IoError("surface csv: bad header");
  }
  std::vector<SurfaceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) throw IoError("surface csv: expected 6 fields");
    rows.push_back({parse_uint(f[0]), parse_double(f[1]), parse_double(f[2]), parse_double(f[3]),
                    parse_double(f[4]), parse_double(f[5])});
  }
  return rows;
}

}  // namespace masksembles
