// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "finite_difference.hpp"
#include "masksembles/experiment.hpp"
#include "masksembles/io.hpp"
#include "masksembles/masks.hpp"
#include "masksembles/metrics.hpp"
#include "masksembles/mlp.hpp"
#include "masksembles/rng.hpp"
#include "metric_oracles.hpp"
#include "random_graphs.hpp"

namespace masksembles {
namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Appends a failure note; keeps `pass` false once any check fails.
void check(Outcome& o, bool ok, const std::string& what) {
  if (!ok) {
    o.pass = false;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += what;
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Outcome size_formula() {
  Outcome o;
  std::size_t cells = 0;
  double worst_z = 0.0;
  for (std::size_t n : {1, 2, 4, 8}) {
    for (std::size_t m : {8, 32, 128}) {
      for (double s : {1.0, 1.5, 2.0, 3.0, 6.0}) {
        const int draws = 10000;
        double sum = 0.0;
        double sum_sq = 0.0;
        for (int d = 0; d < draws; ++d) {
          const MaskSpec spec{.n = n, .m = m, .s = s, .seed = derive_seed(0xa1, {n, m, std::uint64_t(s * 10), std::uint64_t(d)})};
          const double k = double(generate_masks(spec, true).width());
          sum += k;
          sum_sq += k * k;
        }
        const double mean = sum / draws;
        const double var = std::max(0.0, sum_sq / draws - mean * mean) * draws / (draws - 1);
        const double se = std::sqrt(var / draws);
        const double expected = expected_size(MaskSpec{.n = n, .m = m, .s = s, .seed = 0});
        const double gap = std::abs(mean - expected);
        ++cells;
        if (se == 0.0) {
          check(o, gap <= 1e-9, "N=" + std::to_string(n) + " M=" + std::to_string(m) + " S=" + fmt(s));
        } else {
          worst_z = std::max(worst_z, gap / se);
          check(o, gap <= 3.0 * se,
                "N=" + std::to_string(n) + " M=" + std::to_string(m) + " S=" + fmt(s) + " z=" + fmt(gap / se));
        }
      }
    }
  }
  if (o.pass) o.detail = std::to_string(cells) + " grid points, max |z| = " + fmt(worst_z);
  return o;
}

Outcome iou_match() {
  Outcome o;
  double worst = 0.0;
  for (double s : {1.0, 1.5, 2.0, 3.0, 4.0, 6.0}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      total += empirical_mean_iou(generate_masks(MaskSpec{.n = 4, .m = 256, .s = s, .seed = seed}, true));
    }
    const double gap = std::abs(total / 100.0 - expected_iou(s));
    worst = std::max(worst, gap);
    check(o, gap <= 0.02, "S=" + fmt(s) + " gap " + fmt(gap));
  }
  if (o.pass) o.detail = "max |IoU - 1/(2S-1)| = " + fmt(worst);
  return o;
}

Outcome mask_invariants() {
  Outcome o;
  Rng rng(0xc3);
  for (int t = 0; t < 1000 && o.pass; ++t) {
    const MaskSpec spec{.n = 1 + rng.below(12), .m = 1 + rng.below(64), .s = rng.uniform(1.0, 6.0), .seed = rng.next()};
    const bool trim = rng.below(2) == 1;
    const MaskSet masks = generate_masks(spec, trim);
    for (std::size_t i = 0; i < masks.count(); ++i) {
      check(o, masks.ones_in_row(i) == spec.m, "row sum != M in trial " + std::to_string(t));
    }
    if (trim) {
      for (std::size_t j = 0; j < masks.width(); ++j) {
        bool used = false;
        for (std::size_t i = 0; i < masks.count(); ++i) used = used || masks.at(i, j) == 1;
        check(o, used, "all-zero column after trim in trial " + std::to_string(t));
      }
    }
    check(o, generate_masks(spec, trim) == masks, "non-deterministic masks in trial " + std::to_string(t));
  }
  if (o.pass) o.detail = "1000 random specs";
  return o;
}

Outcome autodiff_gradients() {
  Outcome o;
  Rng rng(0xd4);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto graph = testing::RandomGraph::draw(rng);
    Tape tape;
    std::vector<Var> vars;
    tape.backward(graph.build(tape, graph.params, &vars));
    for (std::size_t p = 0; p < graph.params.size(); ++p) {
      const Tensor numeric = testing::numeric_gradient(
          [&](const Tensor& x) {
            auto values = graph.params;
            values[p] = x;
            return graph.loss(values);
          },
          graph.params[p]);
      worst = std::max(worst, testing::max_relative_error(tape.grad(vars[p]), numeric));
    }
  }
  check(o, worst <= 1e-4, "max relative error " + fmt(worst));
  o.detail = "100 graphs, max relative error " + fmt(worst);
  return o;
}

Outcome degeneracy() {
  Outcome o;
  // (a) one all-ones mask versus a plain MLP.
  const Dataset data = gen_two_sinusoids({.count_per_class = 100}, 3);
  auto masked = build_model({2, 32, 32, 2}, MaskSpec{.n = 1, .m = 32, .s = 1.0, .seed = 1}, false, 2);
  auto plain = build_unmasked({2, 32, 32, 2}, 2);
  const TrainConfig config{.epochs = 20, .seed = 4};
  const auto h1 = train(masked, data, config);
  const auto h2 = train(plain, data, config);
  double worst = 0.0;
  check(o, h1.step_loss.size() == h2.step_loss.size(), "step counts differ");
  for (std::size_t i = 0; i < std::min(h1.step_loss.size(), h2.step_loss.size()); ++i) {
    worst = std::max(worst, std::abs(h1.step_loss[i] - h2.step_loss[i]));
  }
  check(o, worst <= 1e-9, "trajectory gap " + fmt(worst));

  // (b) a generated high-S pool with pairwise-disjoint masks.
  std::uint64_t seed = 0;
  MaskSpec spec{.n = 4, .m = 8, .s = 50.0, .seed = 0};
  auto disjoint = [](const MaskSet& masks) {
    for (std::size_t j = 0; j < masks.width(); ++j) {
      std::size_t users = 0;
      for (std::size_t i = 0; i < masks.count(); ++i) users += masks.at(i, j);
      if (users > 1) return false;
    }
    return true;
  };
  while (!disjoint(generate_masks(spec, true))) spec.seed = ++seed;
  const auto model = build_model({3, 1, 1, 2}, spec, false, 9);
  Rng rng(5);
  Tensor x(Shape{64, 3});
  for (double& v : x.data()) v = rng.normal();
  std::vector<int> labels;
  for (int i = 0; i < 64; ++i) labels.push_back(i % 2);
  std::vector<std::vector<std::vector<bool>>> support(spec.n);  // [mask][layer][unit]
  for (std::size_t k = 0; k < spec.n; ++k) {
    const std::vector<std::size_t> idx(64, k);
    const auto lg = model.loss_and_gradients(x, labels, idx);
    for (std::size_t l = 0; l + 1 < lg.gradients.size(); ++l) {
      const Tensor& g = lg.gradients[l].weight;
      std::vector<bool> units(g.cols(), false);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) units[c] = units[c] || g(r, c) != 0.0;
      }
      support[k].push_back(units);
    }
  }
  for (std::size_t a = 0; a < spec.n; ++a) {
    for (std::size_t b = a + 1; b < spec.n; ++b) {
      for (std::size_t l = 0; l < support[a].size(); ++l) {
        for (std::size_t u = 0; u < support[a][l].size(); ++u) {
          check(o, !(support[a][l][u] && support[b][l][u]),
                "masks " + std::to_string(a) + "," + std::to_string(b) + " share unit " + std::to_string(u));
        }
      }
    }
  }
  if (o.pass) o.detail = "trajectory gap " + fmt(worst) + ", disjoint supports for S=50 pool (seed " + std::to_string(seed) + ")";
  return o;
}

Outcome width_accounting() {
  Outcome o;
  const std::vector<double> scales{1.0, 1.7, 2.3};
  const std::vector<std::size_t> expected{3, 5, 7};
  std::string got;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto model = build_model({2, 3, 2}, MaskSpec{.n = 64, .m = 3, .s = scales[i], .seed = 1}, false, 0);
    check(o, model.masks()->dropped_count() == 0, "D != 0 at S=" + fmt(scales[i]));
    check(o, model.widths()[1] == expected[i], "S=" + fmt(scales[i]) + " gives " + std::to_string(model.widths()[1]));
    got += (i ? "," : "") + std::to_string(model.widths()[1]);
  }
  if (o.pass) o.detail = "hidden widths {" + got + "}";
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  Rng rng(0xe7);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> scores;
    std::vector<std::uint8_t> flags;
    testing::random_scores(rng, 200, scores, flags);
    worst = std::max(worst, std::abs(roc_auc(scores, flags) - testing::brute_roc(scores, flags)));
    worst = std::max(worst, std::abs(pr_auc(scores, flags) - testing::brute_pr(scores, flags)));

    const std::size_t rows = 1 + rng.below(200);
    const std::size_t classes = 2 + rng.below(4);
    const std::size_t bins = 1 + rng.below(20);
    const Tensor p = testing::random_probs(rng, rows, classes);
    std::vector<int> labels;
    for (std::size_t i = 0; i < rows; ++i) labels.push_back(int(rng.below(classes)));
    worst = std::max(worst, std::abs(expected_calibration_error(p, labels, bins).ece - testing::brute_ece(p, labels, bins)));
  }
  check(o, worst <= 1e-12, "oracle gap " + fmt(worst));
  for (std::size_t c = 2; c <= 10; ++c) {
    std::vector<double> uniform(c, 1.0 / double(c));
    std::vector<double> onehot(c, 0.0);
    onehot[c - 1] = 1.0;
    check(o, entropy(onehot) == 0.0, "one-hot entropy nonzero");
    check(o, std::abs(entropy(uniform) - std::log(double(c))) <= 1e-12, "uniform entropy != ln C for C=" + std::to_string(c));
  }
  if (o.pass) o.detail = "max oracle gap " + fmt(worst);
  return o;
}

Outcome transition() {
  Outcome o;
  TransitionConfig config;
  config.repeats = 5;
  const TransitionResult result = run_transition_sweep(config);
  std::map<std::string, std::vector<double>> entropy;
  double min_acc = 1.0;
  for (const auto& cell : result.cells) {
    min_acc = std::min(min_acc, cell.accuracy);
    entropy[cell.s_label()].push_back(cell.mean_entropy_ood);
  }
  check(o, min_acc >= 0.95, "min accuracy " + fmt(min_acc));
  int s_wins = 0;
  int ens_wins = 0;
  int above_single = 0;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    s_wins += entropy["10"][r] > entropy["1.1"][r];
    ens_wins += entropy["ensemble"][r] >= entropy["single"][r];
    above_single += entropy["10"][r] >= entropy["single"][r];
  }
  check(o, s_wins >= 4, "S=10 > S=1.1 on " + std::to_string(s_wins) + "/5");
  check(o, ens_wins >= 4, "ensemble >= single on " + std::to_string(ens_wins) + "/5");
  check(o, above_single == 5, "S=10 >= single on " + std::to_string(above_single) + "/5");
  if (o.pass) {
    o.detail = "min acc " + fmt(min_acc) + ", S10>S1.1 " + std::to_string(s_wins) + "/5, ens>=single " +
               std::to_string(ens_wins) + "/5, S10>=single " + std::to_string(above_single) + "/5";
  }
  return o;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
      for (std::size_t k = i; k < j; ++k) r[order[k]] = 0.5 * double(i + j - 1);
      i = j;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / double(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / double(ry.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

Outcome diversity_ordering() {
  Outcome o;
  const DiversityConfig config;
  const auto rows = run_diversity_sweep(config);
  std::map<std::string, std::pair<double, int>> totals;
  bool single_zero = true;
  for (const auto& r : rows) {
    if (r.config == "single") single_zero = single_zero && r.diversity == 0.0;
    if (!std::isfinite(r.diversity)) continue;
    totals[r.s_label()].first += r.diversity;
    ++totals[r.s_label()].second;
  }
  auto mean = [&](const std::string& label) { return totals[label].first / totals[label].second; };
  check(o, single_zero, "single-model diversity is not 0");
  std::vector<double> s_values;
  std::vector<double> means;
  double best_masksembles = 0.0;
  std::string summary;
  for (double s : config.s_values) {
    const std::string label = format_double(s);
    s_values.push_back(s);
    means.push_back(mean(label));
    best_masksembles = std::max(best_masksembles, means.back());
    summary += " S" + label + "=" + fmt(means.back());
  }
  const double ensemble = mean("ensemble");
  check(o, ensemble > best_masksembles, "ensemble " + fmt(ensemble) + " not above Masksembles " + fmt(best_masksembles));
  const double rho = spearman(s_values, means);
  check(o, rho > 0.0, "Spearman rho " + fmt(rho));
  if (o.pass) o.detail = "single=0" + summary + " ensemble=" + fmt(ensemble) + " rho=" + fmt(rho);
  return o;
}

Outcome reproducibility() {
  Outcome o;
  const auto root = testing::scratch_dir("acceptance_repro");
  {
    std::ofstream cfg(root / "surface.cfg");
    cfg << "n=1,2,4\ns=1,2,3\ndraws=25\n";
  }
  const std::string ckpt_dir = (root / "train_ref").string();
  const std::vector<std::vector<std::string>> commands{
      {"masks", "--n", "4", "--m", "16", "--s", "2.5"},
      {"masks", "--n", "3", "--width", "30", "--s", "2"},
      {"train", "--count", "50", "--epochs", "5", "--m", "16"},
      {"train", "--dataset", "blobs", "--count", "40", "--epochs", "5", "--m", "8", "--hidden-layers", "2"},
      {"eval", "--checkpoint", ckpt_dir + "/model.ckpt", "--data", ckpt_dir + "/test.csv", "--ood",
       ckpt_dir + "/ood.csv"},
      {"eval", "--checkpoint", ckpt_dir + "/model.ckpt", "--data", ckpt_dir + "/test.csv", "--ood",
       ckpt_dir + "/ood.csv", "--score", "maxprob"},
      {"sweep-transition", "--count", "40", "--test-count", "20", "--epochs", "3", "--m", "12", "--grid-x", "9",
       "--grid-y", "5", "--repeats", "2", "--jobs", "2"},
      {"sweep-surface", "--config", (root / "surface.cfg").string()},
      {"sweep-diversity", "--count", "20", "--test-count", "40", "--epochs", "3", "--m", "12", "--repeats", "2"},
  };
  if (testing::run_cli({"--seed", "11", "--out", ckpt_dir, "train", "--count", "40", "--epochs", "3", "--m", "8"}).code != 0) {
    check(o, false, "reference training failed");
    return o;
  }
  for (std::size_t c = 0; c < commands.size(); ++c) {
    std::vector<std::map<std::string, std::string>> snaps;
    std::vector<std::string> outs;
    for (int run = 0; run < 2; ++run) {
      const auto dir = root / ("c" + std::to_string(c) + "_" + std::to_string(run));
      std::vector<std::string> args{"--seed", "42", "--out", dir.string()};
      args.insert(args.end(), commands[c].begin(), commands[c].end());
      const auto result = testing::run_cli(args);
      check(o, result.code == 0, commands[c][0] + " exited " + std::to_string(result.code) + ": " + result.err);
      outs.push_back(result.out);
      snaps.push_back(testing::snapshot(dir));
    }
    // stdout mentions the output directory; compare it with paths removed.
    for (auto& text : outs) {
      for (int run = 0; run < 2; ++run) {
        const std::string dir = (root / ("c" + std::to_string(c) + "_" + std::to_string(run))).string();
        for (auto pos = text.find(dir); pos != std::string::npos; pos = text.find(dir)) text.replace(pos, dir.size(), "DIR");
      }
    }
    check(o, !snaps[0].empty() && snaps[0] == snaps[1], commands[c][0] + " outputs differ");
    check(o, outs[0] == outs[1], commands[c][0] + " stdout differs");
  }
  std::filesystem::remove_all(root);
  if (o.pass) o.detail = std::to_string(commands.size()) + " commands byte-identical across two runs";
  return o;
}

}  // namespace
}  // namespace masksembles

int main() {
  using namespace masksembles;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"size formula Monte Carlo", size_formula},
      {"mask IoU vs 1/(2S-1)", iou_match},
      {"mask invariants", mask_invariants},
      {"autodiff vs finite differences", autodiff_gradients},
      {"degeneracy endpoints", degeneracy},
      {"width accounting", width_accounting},
      {"metric oracles", metric_oracles},
      {"single-to-ensemble transition", transition},
      {"diversity ordering", diversity_ordering},
      {"CLI reproducibility", reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const std::chrono::duration<double> seconds = std::chrono::steady_clock::now() - start;
    failures += outcome.pass ? 0 : 1;
    std::printf("%s %2zu %-34s %7.1fs  %s\n", outcome.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                seconds.count(), outcome.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
