// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Criteria 1-3 and 10 read the results of two CLI runs with seed 7;
// the rest run in process against independent oracles.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "tlrisk/experiment.hpp"
#include "tlrisk/glm.hpp"
#include "tlrisk/log.hpp"
#include "tlrisk/numeric.hpp"
#include "tlrisk/serialization.hpp"
#include "tlrisk/transfer.hpp"

using namespace tlrisk;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back(what);
    }
  }
};

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed << v;
  return out.str();
}

// scenario -> method -> per-replicate values, ordered by replicate
using MetricTable = std::map<std::string, std::map<std::string, std::vector<double>>>;

MetricTable by_metric(const ResultTable& t, const std::string& metric) {
  std::map<std::string, std::map<std::string, std::map<int, double>>> raw;
  for (const auto& r : t) {
    if (r.metric == metric && r.threshold.empty() && r.value) {
      raw[r.scenario_or_group][r.method][r.replicate_or_fold] = *r.value;
    }
  }
  MetricTable out;
  for (const auto& [s, methods] : raw) {
    for (const auto& [m, reps] : methods) {
      for (const auto& [rep, v] : reps) out[s][m].push_back(v);
    }
  }
  return out;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? NAN : s / static_cast<double>(v.size());
}

int wins(const std::vector<double>& a, const std::vector<double>& b) {
  int w = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) w += a[i] > b[i];
  return w;
}

const std::vector<double>& cell(const MetricTable& t, const std::string& scenario,
                                const std::string& method) {
  static const std::vector<double> empty;
  const auto s = t.find(scenario);
  if (s == t.end()) return empty;
  const auto m = s->second.find(method);
  return m == s->second.end() ? empty : m->second;
}

Outcome transfer_gains_at_low_signal(const ResultTable& results) {
  Outcome o;
  const MetricTable auroc = by_metric(results, "auroc");
  const MetricTable auprc = by_metric(results, "auprc");
  auto compare = [&](const MetricTable& t, const std::string& metric, const std::string& scenario,
                     const std::string& family) {
    const auto& tl = cell(t, scenario, "Tl" + family);
    const auto& src = cell(t, scenario, "Source" + family);
    const int w = wins(tl, src);
    const std::string tag = scenario + " " + metric + " " + family + ": TL " + fmt(mean(tl)) +
                            " vs source " + fmt(mean(src)) + ", wins " + std::to_string(w) + "/" +
                            std::to_string(tl.size());
    o.require(tl.size() == 20 && src.size() == 20, tag + " (expected 20 replicates)");
    o.require(mean(tl) > mean(src), tag + " (mean not higher)");
    o.require(w >= 15, tag + " (fewer than 15 wins)");
  };
  for (const std::string family : {"Glm", "Gbt"}) {
    compare(auroc, "auroc", "pi0.5_b0.2", family);
    compare(auroc, "auroc", "pi0.1_b0.2", family);
    compare(auprc, "auprc", "pi0.5_b0.2", family);
  }
  return o;
}

Outcome ceiling_at_high_signal(const ResultTable& results) {
  Outcome o;
  const MetricTable auroc = by_metric(results, "auroc");
  for (const std::string scenario : {"pi0.5_b0.7", "pi0.1_b0.7"}) {
    const double oracle_mean = mean(cell(auroc, scenario, "BayesOracle"));
    for (const std::string family : {"Glm", "Gbt"}) {
      const double tl = mean(cell(auroc, scenario, "Tl" + family));
      const double src = mean(cell(auroc, scenario, "Source" + family));
      const std::string tag = scenario + " " + family + ": TL " + fmt(tl) + ", source " +
                              fmt(src) + ", oracle " + fmt(oracle_mean);
      o.require(std::abs(tl - src) <= 0.02, tag + " (TL and source differ by more than 0.02)");
      o.require(oracle_mean - tl <= 0.03, tag + " (TL more than 0.03 below the oracle)");
      o.require(oracle_mean - src <= 0.03, tag + " (source more than 0.03 below the oracle)");
    }
  }
  return o;
}

Outcome auprc_falls_with_prevalence(const ResultTable& results) {
  Outcome o;
  const MetricTable auprc = by_metric(results, "auprc");
  for (const std::string b : {"0.2", "0.7"}) {
    for (const std::string method :
         {"BayesOracle", "SourceGlm", "SourceGbt", "TlGlm", "TlGbt"}) {
      const double high = mean(cell(auprc, "pi0.5_b" + b, method));
      const double low = mean(cell(auprc, "pi0.1_b" + b, method));
      o.require(low < high, "b=" + b + " " + method + ": pi0.1 " + fmt(low) + " vs pi0.5 " +
                                fmt(high));
    }
  }
  return o;
}

struct Scored {
  Eigen::VectorXd s;
  Eigen::VectorXd y;
};

Scored random_scored(std::mt19937_64& rng, int max_n) {
  std::uniform_int_distribution<int> size(2, max_n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int n = size(rng);
  const bool coarse = unif(rng) < 0.5;
  Scored out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    out.s(i) = coarse ? std::floor(unif(rng) * 5.0) / 5.0 : unif(rng);
    out.y(i) = unif(rng) < 0.4;
  }
  out.y(0) = 1;
  out.y(1) = 0;
  return out;
}

Outcome metric_oracles() {
  Outcome o;
  std::mt19937_64 rng(101);
  int auroc_bad = 0, youden_bad = 0, auprc_bad = 0;
  for (int k = 0; k < 200; ++k) {
    const Scored t = random_scored(rng, 50);
    auroc_bad += std::abs(auroc(t.s, t.y) - oracle::brute_auroc(t.s, t.y)) > 1e-12;
    youden_bad += youden_threshold(t.s, t.y) != oracle::youden_scan(t.s, t.y);
  }
  for (int k = 0; k < 200; ++k) {
    const Scored t = random_scored(rng, 8);
    auprc_bad += auprc(t.s, t.y) != oracle::auprc_cuts(t.s, t.y);
  }
  o.require(auroc_bad == 0, std::to_string(auroc_bad) + " auroc mismatches");
  o.require(youden_bad == 0, std::to_string(youden_bad) + " youden mismatches");
  o.require(auprc_bad == 0, std::to_string(auprc_bad) + " auprc mismatches");
  return o;
}

Outcome solver_certificates() {
  Outcome o;
  int fits = 0, kkt_bad = 0, zero_bad = 0, grad_bad = 0;
  double worst_kkt = 0.0, worst_grad = 0.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(200 + seed);
    const Eigen::Index n = 80 + 10 * static_cast<Eigen::Index>(seed % 5);
    const Eigen::Index p = 3 + static_cast<Eigen::Index>(seed % 6);
    const Eigen::MatrixXd x = standardize(oracle::random_matrix(rng, n, p)).matrix;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
    w(0) = 1.2;
    w(1) = -0.6;
    const Eigen::VectorXd y = oracle::logistic_labels(rng, x, w, -0.3);
    Eigen::VectorXd offset;
    if (seed % 2) {
      std::normal_distribution<double> normal(0.0, 0.5);
      offset.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) offset(i) = normal(rng);
    }
    const double top = lambda_max(x, y, offset);
    for (double frac : {0.5, 0.2, 0.05, 0.01}) {
      const L1Solution s = solve_l1_logistic(x, y, offset, frac * top);
      if (!s.converged) continue;
      ++fits;
      const double v = oracle::kkt_violation(x, y, offset, s.intercept, s.beta, frac * top);
      worst_kkt = std::max(worst_kkt, v);
      kkt_bad += v >= 1e-6;
    }
    for (double frac : {1.0, 1.5, 10.0}) {
      const L1Solution s = solve_l1_logistic(x, y, offset, frac * top);
      zero_bad += s.beta.cwiseAbs().maxCoeff() != 0.0;
    }
    std::normal_distribution<double> normal(0.0, 0.4);
    Eigen::VectorXd beta(p);
    for (Eigen::Index j = 0; j < p; ++j) beta(j) = normal(rng);
    const double b0 = normal(rng);
    const LossGradient g = logistic_loss_gradient(x, y, offset, b0, beta);
    const Eigen::VectorXd fd = oracle::fd_gradient(x, y, offset, b0, beta);
    Eigen::VectorXd analytic(p + 1);
    analytic << g.intercept, g.beta;
    const double rel = (analytic - fd).norm() / std::max(1e-12, fd.norm());
    worst_grad = std::max(worst_grad, rel);
    grad_bad += rel >= 1e-6;
  }
  o.notes.push_back(std::to_string(fits) + " converged fits, worst KKT " + sci(worst_kkt) +
                    ", worst gradient relative error " + sci(worst_grad));
  o.require(fits >= 100, "too few converged fits");
  o.require(kkt_bad == 0, std::to_string(kkt_bad) + " KKT failures");
  o.require(zero_bad == 0, std::to_string(zero_bad) + " nonzero solutions at or above lambda_max");
  o.require(grad_bad == 0, std::to_string(grad_bad) + " gradient mismatches");
  return o;
}

Outcome recalibration_fixed_point() {
  Outcome o;
  std::mt19937_64 rng(300);
  std::normal_distribution<double> normal(-0.5, 1.2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Eigen::Index n = 100000;
  Eigen::VectorXd p(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p(i) = oracle::sig(normal(rng));
    y(i) = unif(rng) < p(i);
  }
  const RecalibrationParams first = fit_recalibration(p, y);
  const RecalibrationParams second = fit_recalibration(apply_recalibration(first, p), y);
  o.notes.push_back("first (a, b) = (" + fmt(first.a) + ", " + fmt(first.b) + "), refit |a| " +
                    sci(std::abs(second.a)) + ", |b - 1| " + sci(std::abs(second.b - 1.0)));
  o.require(std::abs(first.a) <= 0.03 && std::abs(first.b - 1.0) <= 0.03,
            "calibrated sample not recovered");
  o.require(std::abs(second.a) < 1e-6 && std::abs(second.b - 1.0) < 1e-6,
            "refit is not a fixed point");
  return o;
}

Outcome recalibration_rank_invariance() {
  Outcome o;
  int runs = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(400 + seed);
    std::normal_distribution<double> normal(0.0, 1.0 + 0.1 * static_cast<double>(seed % 5));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const Eigen::Index n = 300 + 50 * static_cast<Eigen::Index>(seed % 4);
    Eigen::VectorXd p(n), y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = normal(rng);
      y(i) = unif(rng) < oracle::sig(0.3 + 0.8 * z);
      p(i) = oracle::sig(z);
    }
    const RecalibrationParams r = fit_recalibration(p, y);
    if (!(r.b > 0.0)) continue;
    ++runs;
    worst = std::max(worst, std::abs(auroc(apply_recalibration(r, p), y) - auroc(p, y)));
  }
  o.notes.push_back(std::to_string(runs) + " runs, worst difference " + sci(worst));
  o.require(runs > 0, "no run with a positive slope");
  o.require(worst <= 1e-12, "auroc changed after recalibration");
  return o;
}

struct Instance {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Instance gbt_instance(std::uint64_t seed, Eigen::Index n, Eigen::Index p, bool rounded) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.x = oracle::random_matrix(rng, n, p);
  if (rounded) in.x = (in.x.array() * 2.0).round() / 2.0;
  in.y = oracle::logistic_labels(rng, in.x, Eigen::VectorXd::LinSpaced(p, 1.0, -0.5));
  if (in.y.sum() == 0) in.y(0) = 1;
  if (in.y.sum() == static_cast<double>(n)) in.y(0) = 0;
  return in;
}

/// Number of internal nodes whose split differs from the exhaustive scan.
int split_mismatches(const RegressionTree& tree, const Instance& in, const Eigen::VectorXd& eta,
                     const GbtConfig& cfg, int& internal) {
  Eigen::VectorXd g(in.y.size()), h(in.y.size());
  for (Eigen::Index i = 0; i < in.y.size(); ++i) {
    const double p = oracle::sig(eta(i));
    g(i) = p - in.y(i);
    h(i) = p * (1.0 - p);
  }
  int bad = 0;
  std::function<void(int, const std::vector<int>&, int)> visit =
      [&](int id, const std::vector<int>& rows, int depth) {
        const TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
        const oracle::BestSplit best =
            depth < cfg.max_depth ? oracle::exhaustive_split(in.x, rows, g, h, cfg.l2_leaf_penalty,
                                                             cfg.min_child_weight)
                                  : oracle::BestSplit{};
        if (node.feature < 0) {
          bad += best.feature != -1;
          return;
        }
        ++internal;
        bad += node.feature != best.feature || node.threshold != best.threshold;
        std::vector<int> left, right;
        for (int i : rows) (in.x(i, node.feature) <= node.threshold ? left : right).push_back(i);
        visit(node.left, left, depth + 1);
        visit(node.right, right, depth + 1);
      };
  std::vector<int> all(static_cast<std::size_t>(in.y.size()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  visit(0, all, 0);
  return bad;
}

Outcome gbt_properties() {
  Outcome o;
  int trace_bad = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Instance in = gbt_instance(500 + seed, 60 + 5 * static_cast<Eigen::Index>(seed), 4,
                                     seed % 3 == 0);
    GbtConfig cfg;
    cfg.n_trees = 40;
    cfg.subsample_rows = 1.0;
    const auto& trace = fit_gbt(in.x, in.y, cfg).train_loss_trace;
    for (std::size_t k = 1; k < trace.size(); ++k) trace_bad += trace[k] > trace[k - 1];
  }
  int internal = 0, split_bad = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Eigen::Index n = 6 + static_cast<Eigen::Index>(seed % 7);
    const Eigen::Index p = 1 + static_cast<Eigen::Index>(seed % 3);
    const Instance in = gbt_instance(seed, n, p, seed % 2 == 0);
    GbtConfig cfg;
    cfg.n_trees = 3;
    cfg.max_depth = 3;
    cfg.subsample_rows = 1.0;
    cfg.min_child_weight = seed % 4 == 0 ? 0.0 : 0.2;
    const GbtModel m = fit_gbt(in.x, in.y, cfg);
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, m.base_score);
    for (const auto& tree : m.trees) {
      split_bad += split_mismatches(tree, in, eta, cfg, internal);
      for (Eigen::Index i = 0; i < n; ++i) eta(i) += tree.predict(in.x.row(i));
    }
  }
  const Instance big = gbt_instance(900, 400, 6, false);
  const GbtModel model = fit_gbt(big.x, big.y, GbtConfig{});
  const bool exact =
      predict_log_odds(deserialize_gbt(serialize(model)), big.x) == predict_log_odds(model, big.x);
  o.notes.push_back(std::to_string(internal) + " internal nodes scanned");
  o.require(trace_bad == 0, std::to_string(trace_bad) + " loss increases");
  o.require(internal > 0 && split_bad == 0, std::to_string(split_bad) + " split mismatches");
  o.require(exact, "serialized model predicts differently");
  return o;
}

Outcome youden_balanced_accuracy() {
  Outcome o;
  ExperimentConfig c = ExperimentConfig::cohort_defaults();
  c.seed = 7;
  c.thresholds = parse_threshold_list("0.5,youden");
  c.single_feature = "x3";
  c.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  for (SimConfig s : scenario_grid()) {
    if (s.prevalence != 0.1) continue;
    s.seed = 7;
    const ResultTable t = run_cohort_study(c, generate_study(s, 0).grouped());
    // group -> method -> threshold -> balanced accuracy values
    std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> ba;
    for (const auto& r : t) {
      if (r.metric == "balanced_accuracy" && r.value) {
        ba[r.scenario_or_group][r.method][r.threshold].push_back(*r.value);
      }
    }
    o.require(!ba.empty(), s.label() + ": no balanced accuracy rows");
    for (const auto& [group, methods] : ba) {
      for (const auto& [method, by_threshold] : methods) {
        const double at_youden = mean(by_threshold.at("youden"));
        const double at_half = mean(by_threshold.at("0.5"));
        o.require(at_youden >= at_half, s.label() + " " + group + " " + method + ": youden " +
                                            fmt(at_youden) + " vs 0.5 " + fmt(at_half));
      }
    }
  }
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + TLRISK_CLI + "\" " + args;
  return std::system(cmd.c_str());
}

Outcome attempt(const std::function<Outcome()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    Outcome o;
    o.require(false, std::string("threw: ") + e.what());
    return o;
  }
}

void report(int number, const std::string& name, const Outcome& o, int& failures) {
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << number << ": " << name << "\n";
  for (const auto& note : o.notes) std::cout << "    " << note << "\n";
  std::cout.flush();
  failures += !o.pass;
}

}  // namespace

int main() {
  log::set_level(log::Level::Quiet);
  const fs::path work = fs::temp_directory_path() / "tlrisk_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string jobs = std::to_string(std::max(1u, std::thread::hardware_concurrency()));

  const int rc_a = run_cli("-q simulate --seed 7 --jobs " + jobs + " --out \"" +
                           (work / "a").string() + "\"");
  const int rc_b = run_cli("-q simulate --seed 7 --jobs " + jobs + " --out \"" +
                           (work / "b").string() + "\"");

  int failures = 0;
  ResultTable results;
  Outcome cli;
  cli.require(rc_a == 0 && rc_b == 0, "simulate exited with a nonzero status");
  if (cli.pass) {
    try {
      results = read_results_csv(work / "a" / "results.csv");
    } catch (const std::exception& e) {
      cli.require(false, std::string("results unreadable: ") + e.what());
    }
  }

  auto guarded = [&](const std::function<Outcome()>& body) {
    if (!cli.pass) return cli;
    return attempt(body);
  };
  report(1, "transfer beats source at low signal (b=0.2)",
         guarded([&] { return transfer_gains_at_low_signal(results); }), failures);
  report(2, "ceiling at high signal (b=0.7)",
         guarded([&] { return ceiling_at_high_signal(results); }), failures);
  report(3, "auprc declines at lower prevalence",
         guarded([&] { return auprc_falls_with_prevalence(results); }), failures);
  report(4, "metric oracles", attempt(metric_oracles), failures);
  report(5, "L1 solver certificates", attempt(solver_certificates), failures);
  report(6, "recalibration fixed point", attempt(recalibration_fixed_point), failures);
  report(7, "recalibration rank invariance", attempt(recalibration_rank_invariance), failures);
  report(8, "boosted tree properties", attempt(gbt_properties), failures);
  report(9, "youden balanced accuracy at least that of 0.5 (pi=0.1)", attempt(youden_balanced_accuracy),
         failures);
  const Outcome same = attempt([&] {
    Outcome o = cli;
    if (o.pass) {
      o.require(read_text(work / "a" / "results.csv") == read_text(work / "b" / "results.csv"),
                "results CSVs differ");
    }
    return o;
  });
  report(10, "simulate --seed 7 is byte-identical across runs", same, failures);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << "\n";
  return failures == 0 ? 0 : 1;
}
