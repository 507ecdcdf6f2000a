#include <doctest.h>

#include <functional>
#include <random>

#include "oracles.hpp"
#include "tlrisk/error.hpp"
#include "tlrisk/gbt.hpp"
#include "tlrisk/numeric.hpp"
#include "tlrisk/serialization.hpp"

using namespace tlrisk;

namespace {

struct Instance {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Instance random_instance(std::uint64_t seed, Eigen::Index n, Eigen::Index p, bool rounded) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.x = oracle::random_matrix(rng, n, p);
  if (rounded) in.x = (in.x.array() * 2.0).round() / 2.0;  // forces ties in feature values
  Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(p, 1.0, -0.5);
  in.y = oracle::logistic_labels(rng, in.x, w);
  if (in.y.sum() == 0) in.y(0) = 1;
  if (in.y.sum() == n) in.y(0) = 0;
  return in;
}

/// Checks every internal node of `tree` against an exhaustive scan over the
/// rows that reach it, with gradients taken at `eta`.
void check_tree_splits(const RegressionTree& tree, const Eigen::MatrixXd& x,
                       const Eigen::VectorXd& y, const Eigen::VectorXd& eta, const GbtConfig& cfg,
                       int& internal_nodes) {
  Eigen::VectorXd g(y.size()), h(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double p = oracle::sig(eta(i));
    g(i) = p - y(i);
    h(i) = p * (1.0 - p);
  }
  std::function<void(int, std::vector<int>, int)> visit = [&](int id, std::vector<int> rows,
                                                              int depth) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
    const oracle::BestSplit best =
        depth < cfg.max_depth
            ? oracle::exhaustive_split(x, rows, g, h, cfg.l2_leaf_penalty, cfg.min_child_weight)
            : oracle::BestSplit{};
    INFO("node ", id, " depth ", depth, " rows ", rows.size(), " gain ", node.gain,
         " scan gain ", best.gain);
    if (node.feature < 0) {
      CHECK(best.feature == -1);
      double gs = 0.0, hs = 0.0;
      for (int i : rows) {
        gs += g(i);
        hs += h(i);
      }
      CHECK(node.value ==
            doctest::Approx(cfg.learning_rate * -gs / (hs + cfg.l2_leaf_penalty)).epsilon(1e-12));
      return;
    }
    ++internal_nodes;
    CHECK(node.feature == best.feature);
    CHECK(node.threshold == best.threshold);
    CHECK(node.gain == doctest::Approx(best.gain).epsilon(1e-9));
    std::vector<int> left, right;
    for (int i : rows) (x(i, node.feature) <= node.threshold ? left : right).push_back(i);
    visit(node.left, left, depth + 1);
    visit(node.right, right, depth + 1);
  };
  std::vector<int> all(static_cast<std::size_t>(y.size()));
  for (int i = 0; i < static_cast<int>(all.size()); ++i) all[static_cast<std::size_t>(i)] = i;
  visit(0, all, 0);
}

}  // namespace

TEST_CASE("split gain and leaf weight formulas") {
  CHECK(split_gain(-2.0, 1.0, -1.0, 3.0, 1.0) ==
        doctest::Approx(0.5 * (4.0 / 2.0 + 1.0 / 3.0 - 1.0 / 4.0)));
  CHECK(leaf_weight(-3.0, 2.0, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("stump splits on the separating feature") {
  Eigen::MatrixXd x(10, 2);
  Eigen::VectorXd y(10);
  for (int i = 0; i < 10; ++i) {
    x(i, 0) = (i * 7) % 10;  // noise
    x(i, 1) = i;
    y(i) = i >= 5;
  }
  GbtConfig cfg;
  cfg.n_trees = 1;
  cfg.max_depth = 1;
  cfg.subsample_rows = 1.0;
  cfg.min_child_weight = 0.0;
  const GbtModel m = fit_gbt(x, y, cfg);
  REQUIRE(m.trees.size() == 1);
  const TreeNode& root = m.trees[0].nodes[0];
  CHECK(root.feature == 1);
  CHECK(root.threshold == 4.5);
  CHECK(m.base_score == doctest::Approx(0.0));
  CHECK(m.train_loss_trace.size() == 1);
}

TEST_CASE("chosen splits match an exhaustive gain scan on small instances") {
  int internal_nodes = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Eigen::Index n = 6 + static_cast<Eigen::Index>(seed % 7);  // 6..12 rows
    const Eigen::Index p = 1 + static_cast<Eigen::Index>(seed % 3);  // 1..3 features
    const Instance in = random_instance(seed, n, p, seed % 2 == 0);
    GbtConfig cfg;
    cfg.n_trees = 3;
    cfg.max_depth = 3;
    cfg.subsample_rows = 1.0;
    cfg.min_child_weight = seed % 4 == 0 ? 0.0 : 0.2;
    cfg.l2_leaf_penalty = seed % 3 == 0 ? 0.0 : 1.0;
    const GbtModel m = fit_gbt(in.x, in.y, cfg);
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, m.base_score);
    for (const auto& tree : m.trees) {
      check_tree_splits(tree, in.x, in.y, eta, cfg, internal_nodes);
      for (Eigen::Index i = 0; i < n; ++i) eta(i) += tree.predict(in.x.row(i));
    }
  }
  CHECK(internal_nodes > 40);
}

TEST_CASE("full-sample training loss never increases") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Instance in = random_instance(500 + seed, 60 + 5 * seed, 4, seed % 3 == 0);
    GbtConfig cfg;
    cfg.n_trees = 40;
    cfg.subsample_rows = 1.0;
    cfg.seed = seed;
    const GbtModel m = fit_gbt(in.x, in.y, cfg);
    const auto& trace = training_loss_trace(m);
    REQUIRE(trace.size() == 40);
    CHECK(trace.front() <= mean_bernoulli_nll(in.y, Eigen::VectorXd::Constant(in.y.size(),
                                                                               m.base_score)));
    for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1]);
  }
}

TEST_CASE("trace equals the recomputed training loss") {
  const Instance in = random_instance(77, 80, 3, false);
  GbtConfig cfg;
  cfg.n_trees = 10;
  const GbtModel m = fit_gbt(in.x, in.y, cfg);
  CHECK(m.train_loss_trace.back() ==
        doctest::Approx(mean_bernoulli_nll(in.y, predict_log_odds(m, in.x))).epsilon(1e-12));
}

TEST_CASE("structure invariants and determinism") {
  const Instance in = random_instance(9, 200, 5, false);
  GbtConfig cfg;
  cfg.n_trees = 25;
  cfg.max_depth = 3;
  cfg.seed = 4;
  const GbtModel a = fit_gbt(in.x, in.y, cfg);
  const GbtModel b = fit_gbt(in.x, in.y, cfg);
  CHECK(a.base_score == doctest::Approx(logit(in.y.mean())));
  for (const auto& t : a.trees) {
    CHECK(t.depth() <= 3);
    for (const auto& node : t.nodes) {
      CHECK(std::isfinite(node.value));
      if (node.feature >= 0) CHECK(node.gain > 0.0);
    }
  }
  CHECK(predict_log_odds(a, in.x) == predict_log_odds(b, in.x));
  cfg.seed = 5;
  const GbtModel c = fit_gbt(in.x, in.y, cfg);
  CHECK(predict_log_odds(a, in.x) != predict_log_odds(c, in.x));
}

TEST_CASE("prediction is base score plus the tree outputs") {
  const Instance in = random_instance(10, 50, 2, false);
  GbtConfig cfg;
  cfg.n_trees = 5;
  const GbtModel m = fit_gbt(in.x, in.y, cfg);
  const Eigen::VectorXd eta = predict_log_odds(m, in.x);
  for (Eigen::Index i = 0; i < 50; ++i) {
    double sum = m.base_score;
    for (const auto& t : m.trees) sum += t.predict(in.x.row(i));
    CHECK(eta(i) == doctest::Approx(sum).epsilon(1e-14));
  }
}

TEST_CASE("serialization round trip is bit exact") {
  const Instance in = random_instance(11, 300, 6, false);
  GbtConfig cfg;
  cfg.n_trees = 30;
  const GbtModel m = fit_gbt(in.x, in.y, cfg);
  const GbtModel back = deserialize_gbt(serialize(m));
  const Eigen::VectorXd a = predict_log_odds(m, in.x);
  const Eigen::VectorXd b = predict_log_odds(back, in.x);
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a(i) == b(i));
  CHECK(serialize(back) == serialize(m));
}

TEST_CASE("config and input validation") {
  GbtConfig cfg;
  cfg.n_trees = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = GbtConfig{};
  cfg.learning_rate = 1.5;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = GbtConfig{};
  cfg.subsample_rows = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 1);
  CHECK_THROWS_AS(fit_gbt(x, Eigen::VectorXd::Ones(4), GbtConfig{}), DataError);
  const Instance in = random_instance(3, 20, 2, false);
  const GbtModel m = fit_gbt(in.x, in.y, GbtConfig{});
  CHECK_THROWS_AS(predict_log_odds(m, Eigen::MatrixXd::Zero(2, 3)), DataError);
}
