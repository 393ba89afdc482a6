#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "config_file.hpp"
#include "masksembles/data.hpp"
#include "masksembles/error.hpp"
#include "masksembles/experiment.hpp"
#include "masksembles/io.hpp"
#include "masksembles/masks.hpp"
#include "masksembles/metrics.hpp"
#include "masksembles/mlp.hpp"
#include "masksembles/rng.hpp"

namespace masksembles::cli {
namespace {

const std::vector<std::string> kSubcommands{"masks", "train", "eval", "sweep-transition", "sweep-surface",
                                            "sweep-diversity"};

struct Globals {
  std::uint64_t seed = 0;
  std::string out = ".";
};

std::string out_path(const Globals& g, const std::string& name) {
  return (std::filesystem::path(g.out) / name).string();
}

void add_train_options(CLI::App& app, TrainConfig& t) {
  app.add_option("--epochs", t.epochs, "Training epochs");
  app.add_option("--batch-size", t.batch_size, "Mini-batch size");
  app.add_option("--lr", t.learning_rate, "SGD learning rate");
  app.add_option("--momentum", t.momentum, "SGD momentum in [0, 1)");
}

// masks ----------------------------------------------------------------------

struct MasksOptions {
  MaskSpec spec{.n = 4, .m = 100, .s = 2.0};
  std::size_t width = 0;
  bool no_trim = false;
  std::string file = "masks.txt";
};

void add_masks(CLI::App& app, MasksOptions& o) {
  app.add_option("--n", o.spec.n, "Number of masks");
  app.add_option("--m", o.spec.m, "Ones per mask");
  app.add_option("--s", o.spec.s, "Scale (>= 1)");
  app.add_option("--width", o.width, "Fixed layer width; solves m from width and s and disables trimming");
  app.add_flag("--no-trim", o.no_trim, "Keep all-zero columns");
  app.add_option("--file", o.file, "Mask file name inside --out");
}

int cmd_masks(const Globals& g, MasksOptions o, std::ostream& out) {
  o.spec.seed = g.seed;
  MaskSet masks = o.width > 0 ? generate_masks(solve_m_for_fixed_width(o.width, o.spec.n, o.spec.s, g.seed), false)
                              : generate_masks(o.spec, !o.no_trim);
  const MaskSpec& spec = masks.spec();
  const std::string path = out_path(g, o.file);
  save_masks(path, masks);
  out << "file " << path << '\n'
      << "N " << spec.n << '\n'
      << "M " << spec.m << '\n'
      << "S " << format_double(spec.s) << '\n'
      << "W " << masks.pre_trim_width() << '\n'
      << "K " << masks.width() << '\n'
      << "D " << masks.dropped_count() << '\n'
      << "empirical_iou "
      << format_double(masks.count() > 1 ? empirical_mean_iou(masks) : std::numeric_limits<double>::quiet_NaN())
      << '\n'
      << "expected_iou " << format_double(expected_iou(spec.s)) << '\n'
      << "expected_size " << format_double(expected_size(spec)) << '\n'
      << "dropout_rate " << format_double(dropout_rate_equivalent(spec)) << '\n';
  return kExitOk;
}

// train ----------------------------------------------------------------------

struct TrainOptions {
  std::string dataset = "sinusoids";
  SinusoidParams data;
  double separation = 4.0;
  double blob_sigma = 1.0;
  std::size_t test_count = 500;
  GridParams grid;
  MaskSpec spec{.n = 4, .m = 100, .s = 2.0};
  std::size_t width = 0;
  std::size_t hidden_layers = 1;
  bool unmasked = false;
  TrainConfig train;
};

void add_train(CLI::App& app, TrainOptions& o) {
  app.add_option("--dataset", o.dataset, "sinusoids or blobs")->check(CLI::IsMember({"sinusoids", "blobs"}));
  app.add_option("--count", o.data.count_per_class, "Training samples per class");
  app.add_option("--test-count", o.test_count, "Test samples per class");
  app.add_option("--noise", o.data.noise_sigma, "Sinusoid noise sigma");
  app.add_option("--nuisance-dims", o.data.nuisance_dims, "Extra N(0,1) sinusoid features");
  app.add_option("--separation", o.separation, "Blob centre distance");
  app.add_option("--blob-sigma", o.blob_sigma, "Blob standard deviation");
  app.add_option("--grid-x", o.grid.resolution_x, "OOD grid points along x");
  app.add_option("--grid-y", o.grid.resolution_y, "OOD grid points along y");
  app.add_option("--n", o.spec.n, "Number of masks");
  app.add_option("--m", o.spec.m, "Ones per mask (hidden capacity)");
  app.add_option("--s", o.spec.s, "Scale (>= 1)");
  app.add_option("--width", o.width, "Fixed hidden width (fixed-width mode)");
  app.add_option("--hidden-layers", o.hidden_layers, "Number of hidden layers");
  app.add_flag("--unmasked", o.unmasked, "Train a plain MLP of width m");
  add_train_options(app, o.train);
}

Dataset make_dataset(const TrainOptions& o, std::size_t count, std::uint64_t seed) {
  if (o.dataset == "blobs") return gen_blobs(count, o.separation, o.blob_sigma, seed);
  SinusoidParams p = o.data;
  p.count_per_class = count;
  return gen_two_sinusoids(p, seed);
}

int cmd_train(const Globals& g, TrainOptions o, std::ostream& out) {
  const Dataset train_set = make_dataset(o, o.data.count_per_class, derive_seed(g.seed, 0));
  const Dataset test_set = make_dataset(o, o.test_count, derive_seed(g.seed, 1));
  const Dataset ood_set = out_of_distribution_points(gen_ood_grid(o.grid));

  const std::size_t features = train_set.feature_count();
  const std::size_t classes = train_set.num_classes;
  o.spec.seed = derive_seed(g.seed, 2);
  const std::uint64_t init_seed = derive_seed(g.seed, 3);
  MasksemblesMlp model = [&] {
    if (o.unmasked) return build_unmasked(mlp_widths(features, o.spec.m, o.hidden_layers, classes), init_seed);
    if (o.width > 0) return build_model(mlp_widths(features, o.width, o.hidden_layers, classes), o.spec, true, init_seed);
    return build_model(mlp_widths(features, o.spec.m, o.hidden_layers, classes), o.spec, false, init_seed);
  }();
  o.train.seed = derive_seed(g.seed, 4);
  const TrainHistory history = train(model, train_set, o.train);

  std::ostringstream loss;
  loss << "epoch,loss\n";
  for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) {
    loss << e << ',' << format_double(history.epoch_loss[e]) << '\n';
  }
  save_checkpoint(out_path(g, "model.ckpt"), model);
  write_file_atomic(out_path(g, "loss.csv"), loss.str());
  save_dataset(out_path(g, "train.csv"), train_set);
  save_dataset(out_path(g, "test.csv"), test_set);
  save_dataset(out_path(g, "ood.csv"), ood_set);

  const auto train_preds = argmax_rows(predict_ensemble(model, train_set.features).mixture);
  const auto test_preds = argmax_rows(predict_ensemble(model, test_set.features).mixture);
  out << "checkpoint " << out_path(g, "model.ckpt") << '\n'
      << "masks " << model.num_masks() << '\n'
      << "model_size " << model_size(model) << '\n'
      << "final_loss " << format_double(history.epoch_loss.back()) << '\n'
      << "train_accuracy " << format_double(accuracy(train_preds, train_set.labels)) << '\n'
      << "test_accuracy " << format_double(accuracy(test_preds, test_set.labels)) << '\n';
  return kExitOk;
}

// eval -----------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::string ood;
  std::size_t bins = 15;
  std::string score = "entropy";
  std::string tag = "eval";
  bool record_time = false;
};

void add_eval(CLI::App& app, EvalOptions& o) {
  app.add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  app.add_option("--data", o.data, "Labeled in-distribution test CSV")->required();
  app.add_option("--ood", o.ood, "Out-of-distribution CSV")->required();
  app.add_option("--bins", o.bins, "ECE bins");
  app.add_option("--score", o.score, "OOD score: entropy or maxprob")->check(CLI::IsMember({"entropy", "maxprob"}));
  app.add_option("--tag", o.tag, "Report tag prefix");
  app.add_flag("--record-time", o.record_time, "Record evaluation wall time (otherwise 0)");
}

int cmd_eval(const Globals& g, const EvalOptions& o, std::ostream& out) {
  const MasksemblesMlp model = load_checkpoint(o.checkpoint);
  const Dataset test = load_dataset(o.data);
  const Dataset ood = load_dataset(o.ood);
  if (!test.labeled()) throw ValidationError("--data must be labeled");
  const OodScore score = parse_ood_score(o.score);

  const auto start = std::chrono::steady_clock::now();
  Evaluation eval = evaluate_model(model, test, ood, o.bins, score, o.tag + "/" + to_string(score));
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  if (o.record_time) eval.report.wall_time_seconds = elapsed.count();

  const std::string row = metrics_csv_row(eval.report);
  std::ostringstream scores;
  scores << "score,is_ood\n";
  for (std::size_t i = 0; i < eval.scores.size(); ++i) {
    scores << format_double(eval.scores[i]) << ',' << int(eval.is_ood[i]) << '\n';
  }
  write_file_atomic(out_path(g, "metrics.csv"), metrics_csv_header() + "\n" + row + "\n");
  write_file_atomic(out_path(g, "reliability.csv"), reliability_csv(eval.diagram));
  write_file_atomic(out_path(g, "scores.csv"), scores.str());
  out << metrics_csv_header() << '\n' << row << '\n';
  return kExitOk;
}

// sweeps ---------------------------------------------------------------------

void add_transition(CLI::App& app, TransitionConfig& c) {
  app.add_option("--count", c.data.count_per_class, "Training samples per class");
  app.add_option("--noise", c.data.noise_sigma, "Sinusoid noise sigma");
  app.add_option("--test-count", c.test_count_per_class, "Test samples per class");
  app.add_option("--grid-x", c.grid.resolution_x, "Grid points along x");
  app.add_option("--grid-y", c.grid.resolution_y, "Grid points along y");
  app.add_option("--n", c.n, "Number of masks");
  app.add_option("--m", c.m, "Ones per mask (hidden capacity)");
  app.add_option("--s", c.s_values, "Scales, comma separated")->delimiter(',');
  app.add_option("--hidden-layers", c.hidden_layers, "Number of hidden layers");
  app.add_option("--members", c.ensemble_members, "Ensemble baseline members");
  app.add_option("--repeats", c.repeats, "Independent repeats (seeds)");
  app.add_option("--jobs", c.jobs, "Worker threads");
  add_train_options(app, c.train);
}

int cmd_sweep_transition(const Globals& g, TransitionConfig c, std::ostream& out) {
  c.seed = g.seed;
  const TransitionResult result = run_transition_sweep(c);
  for (const auto& cell : result.cells) {
    const std::string name = "entropy/r" + std::to_string(cell.repeat) + "_" + cell.s_label() + ".csv";
    write_file_atomic(out_path(g, name), grid_entropy_csv(result.grid, cell));
  }
  write_file_atomic(out_path(g, "transition_summary.csv"), transition_summary_csv(result));

  std::vector<std::string> order;
  std::map<std::string, std::pair<double, double>> totals;
  for (const auto& cell : result.cells) {
    const std::string label = cell.s_label();
    if (!totals.count(label)) order.push_back(label);
    totals[label].first += cell.accuracy;
    totals[label].second += cell.mean_entropy_ood;
  }
  const double repeats = double(c.repeats);
  out << "config,accuracy,entropy_ood\n";
  for (const auto& label : order) {
    out << label << ',' << format_double(totals[label].first / repeats) << ','
        << format_double(totals[label].second / repeats) << '\n';
  }
  return kExitOk;
}

void add_surface(CLI::App& app, SurfaceConfig& c) {
  app.add_option("--n", c.n_values, "Mask counts, comma separated")->delimiter(',');
  app.add_option("--m", c.m, "Ones per mask");
  app.add_option("--s", c.s_values, "Scales, comma separated")->delimiter(',');
  app.add_option("--draws", c.draws, "Mask sets drawn per grid point");
}

int cmd_sweep_surface(const Globals& g, SurfaceConfig c, std::ostream& out) {
  c.seed = g.seed;
  const auto rows = run_surface_sweep(c);
  const std::string csv = surface_csv(rows);
  write_file_atomic(out_path(g, "surface.csv"), csv);
  out << csv;
  return kExitOk;
}

void add_diversity(CLI::App& app, DiversityConfig& c) {
  app.add_option("--count", c.data.count_per_class, "Training samples per class");
  app.add_option("--noise", c.data.noise_sigma, "Sinusoid noise sigma");
  app.add_option("--nuisance-dims", c.data.nuisance_dims, "Extra N(0,1) features");
  app.add_option("--test-count", c.test_count_per_class, "Test samples per class");
  app.add_option("--n", c.n, "Number of masks");
  app.add_option("--m", c.m, "Ones per mask (hidden capacity)");
  app.add_option("--s", c.s_values, "Scales, comma separated")->delimiter(',');
  app.add_option("--hidden-layers", c.hidden_layers, "Number of hidden layers");
  app.add_option("--members", c.ensemble_members, "Ensemble baseline members");
  app.add_option("--repeats", c.repeats, "Independent repeats (seeds)");
  app.add_option("--jobs", c.jobs, "Worker threads");
  add_train_options(app, c.train);
}

int cmd_sweep_diversity(const Globals& g, DiversityConfig c, std::ostream& out) {
  c.seed = g.seed;
  const auto rows = run_diversity_sweep(c);
  write_file_atomic(out_path(g, "diversity.csv"), diversity_csv(rows));

  std::vector<std::string> order;
  std::map<std::string, std::pair<double, std::size_t>> totals;
  for (const auto& r : rows) {
    const std::string label = r.s_label();
    if (!totals.count(label)) order.push_back(label);
    if (std::isfinite(r.diversity)) {
      totals[label].first += r.diversity;
      ++totals[label].second;
    }
  }
  out << "config,mean_diversity\n";
  for (const auto& label : order) {
    const auto& [sum, count] = totals[label];
    out << label << ',' << format_double(count > 0 ? sum / double(count) : 0.0) << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masksembles experiments: masks, training, evaluation and sweeps", "masksembles"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();

  Globals globals;
  std::string config_path;
  app.add_option("--seed", globals.seed, "Master seed");
  app.add_option("--out", globals.out, "Output directory");
  app.add_option("--config", config_path, "Flat key=value config file; command-line flags take precedence");

  MasksOptions masks;
  TrainOptions train_options;
  EvalOptions eval;
  TransitionConfig transition;
  SurfaceConfig surface;
  DiversityConfig diversity;
  auto* masks_cmd = app.add_subcommand("masks", "Generate a mask pool and print its properties");
  add_masks(*masks_cmd, masks);
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint and datasets");
  add_train(*train_cmd, train_options);
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint: accuracy, ECE, entropy, OOD AUCs");
  add_eval(*eval_cmd, eval);
  auto* transition_cmd = app.add_subcommand("sweep-transition", "Single model to ensemble transition sweep");
  add_transition(*transition_cmd, transition);
  auto* surface_cmd = app.add_subcommand("sweep-surface", "Model size and mask IoU over N and S");
  add_surface(*surface_cmd, surface);
  auto* diversity_cmd = app.add_subcommand("sweep-diversity", "Pairwise diversity of submodels and ensembles");
  add_diversity(*diversity_cmd, diversity);

  try {
    std::vector<std::string> expanded = expand_config(args, kSubcommands);
    std::reverse(expanded.begin(), expanded.end());
    app.parse(expanded);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  }

  try {
    if (masks_cmd->parsed()) return cmd_masks(globals, masks, out);
    if (train_cmd->parsed()) return cmd_train(globals, train_options, out);
    if (eval_cmd->parsed()) return cmd_eval(globals, eval, out);
    if (transition_cmd->parsed()) return cmd_sweep_transition(globals, transition, out);
    if (surface_cmd->parsed()) return cmd_sweep_surface(globals, surface, out);
    return cmd_sweep_diversity(globals, diversity, out);
  } catch (const TrainingError& e) {
    err << "training failed at epoch " << e.epoch() << ": " << e.what() << '\n';
    return kExitTrainingFailed;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitTrainingFailed;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitTrainingFailed;
  }
}

}  // namespace masksembles::cli
