#include "tlrisk/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tlrisk/error.hpp"
#include "tlrisk/numeric.hpp"

namespace tlrisk {
namespace {

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

struct ScanState {
  double g_left = 0.0;
  double h_left = 0.0;
  double last = 0.0;
  bool has_last = false;
};

struct NodeStats {
  double g = 0.0;
  double h = 0.0;
  int depth = 0;
};

RegressionTree grow_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& grad,
                         const Eigen::VectorXd& hess, const std::vector<char>& in_sample,
                         const std::vector<std::vector<Eigen::Index>>& sorted,
                         const GbtConfig& config) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  RegressionTree tree;
  std::vector<NodeStats> stats;
  std::vector<int> node_of(static_cast<std::size_t>(n), -1);

  tree.nodes.emplace_back();
  stats.push_back({});
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!in_sample[i]) continue;
    node_of[i] = 0;
    stats[0].g += grad(i);
    stats[0].h += hess(i);
  }

  std::vector<int> frontier{0};
  for (int depth = 0; depth < config.max_depth && !frontier.empty(); ++depth) {
    std::vector<char> is_frontier(tree.nodes.size(), 0);
    for (int nd : frontier) is_frontier[nd] = 1;
    std::vector<SplitCandidate> best(tree.nodes.size());

    for (Eigen::Index f = 0; f < p; ++f) {
      std::vector<ScanState> scan(tree.nodes.size());
      for (Eigen::Index i : sorted[f]) {
        const int nd = node_of[i];
        if (nd < 0 || !is_frontier[nd]) continue;
        const double v = x(i, f);
        ScanState& st = scan[nd];
        if (st.has_last && v > st.last) {
          const double h_right = stats[nd].h - st.h_left;
          if (st.h_left >= config.min_child_weight && h_right >= config.min_child_weight) {
            const double gain =
                split_gain(st.g_left, st.h_left, stats[nd].g, stats[nd].h, config.l2_leaf_penalty);
            if (gain_exceeds(gain, best[nd].gain)) {
              double threshold = 0.5 * (st.last + v);
              if (!(threshold < v)) threshold = st.last;
              best[nd] = {gain, static_cast<int>(f), threshold};
            }
          }
        }
        st.g_left += grad(i);
        st.h_left += hess(i);
        st.last = v;
        st.has_last = true;
      }
    }

    std::vector<int> next_frontier;
    for (int nd : frontier) {
      if (best[nd].feature < 0) continue;
      const int left = static_cast<int>(tree.nodes.size());
      const int right = left + 1;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      stats.push_back({0.0, 0.0, depth + 1});
      stats.push_back({0.0, 0.0, depth + 1});
      TreeNode& node = tree.nodes[nd];
      node.feature = best[nd].feature;
      node.threshold = best[nd].threshold;
      node.gain = best[nd].gain;
      node.left = left;
      node.right = right;
      next_frontier.push_back(left);
      next_frontier.push_back(right);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const int nd = node_of[i];
      if (nd < 0 || tree.nodes[nd].feature < 0) continue;
      const TreeNode& node = tree.nodes[nd];
      const int child = x(i, node.feature) <= node.threshold ? node.left : node.right;
      node_of[i] = child;
      stats[child].g += grad(i);
      stats[child].h += hess(i);
    }
    frontier = std::move(next_frontier);
  }

  for (std::size_t nd = 0; nd < tree.nodes.size(); ++nd) {
    TreeNode& node = tree.nodes[nd];
    if (node.feature < 0) {
      node.value =
          config.learning_rate * leaf_weight(stats[nd].g, stats[nd].h, config.l2_leaf_penalty);
    }
  }
  return tree;
}

}  // namespace

void GbtConfig::validate() const {
  if (n_trees < 1) throw DataError("n_trees must be at least 1");
  if (max_depth < 1) throw DataError("max_depth must be at least 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw DataError("learning_rate must lie in (0, 1]");
  }
  if (!(min_child_weight >= 0.0)) throw DataError("min_child_weight must be nonnegative");
  if (!(l2_leaf_penalty >= 0.0)) throw DataError("l2_leaf_penalty must be nonnegative");
  if (!(subsample_rows > 0.0 && subsample_rows <= 1.0)) {
    throw DataError("subsample_rows must lie in (0, 1]");
  }
}

double RegressionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  int nd = 0;
  while (nodes[nd].feature >= 0) {
    nd = row(nodes[nd].feature) <= nodes[nd].threshold ? nodes[nd].left : nodes[nd].right;
  }
  return nodes[nd].value;
}

int RegressionTree::depth() const {
  std::vector<int> level(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t nd = 0; nd < nodes.size(); ++nd) {
    if (nodes[nd].feature >= 0) {
      level[nodes[nd].left] = level[nd] + 1;
      level[nodes[nd].right] = level[nd] + 1;
    }
    deepest = std::max(deepest, level[nd]);
  }
  return deepest;
}

GbtModel fit_gbt(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GbtConfig& config) {
  config.validate();
  if (x.rows() != y.size()) throw DataError("feature rows and label count differ");
  if (x.rows() < 2) throw DataError("boosting needs at least 2 rows");
  if (!x.allFinite()) throw DataError("boosting input has non-finite features");
  const double positives = y.sum();
  if (positives <= 0.0 || positives >= static_cast<double>(y.size())) {
    throw DataError("boosting needs both classes in the labels");
  }

  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  GbtModel model;
  model.config = config;
  model.n_features = p;
  const double ybar = positives / static_cast<double>(n);
  model.base_score = std::log(ybar) - std::log1p(-ybar);

  std::vector<std::vector<Eigen::Index>> sorted(static_cast<std::size_t>(p));
  for (Eigen::Index f = 0; f < p; ++f) {
    auto& order = sorted[f];
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return x(a, f) < x(b, f); });
  }

  std::mt19937_64 rng(config.seed);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  const auto sample_size = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(config.subsample_rows * static_cast<double>(n))));

  Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, model.base_score);
  Eigen::VectorXd grad(n);
  Eigen::VectorXd hess(n);
  std::vector<char> in_sample(static_cast<std::size_t>(n), 1);
  model.trees.reserve(static_cast<std::size_t>(config.n_trees));
  for (int t = 0; t < config.n_trees; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double prob = sigmoid(eta(i));
      grad(i) = prob - y(i);
      hess(i) = prob * (1.0 - prob);
    }
    if (sample_size < n) {
      std::shuffle(perm.begin(), perm.end(), rng);
      std::fill(in_sample.begin(), in_sample.end(), 0);
      for (Eigen::Index k = 0; k < sample_size; ++k) in_sample[perm[k]] = 1;
    }
    RegressionTree tree = grow_tree(x, grad, hess, in_sample, sorted, config);
    for (Eigen::Index i = 0; i < n; ++i) eta(i) += tree.predict(x.row(i));
    model.trees.push_back(std::move(tree));
    model.train_loss_trace.push_back(mean_bernoulli_nll(y, eta));
  }
  return model;
}

Eigen::VectorXd predict_log_odds(const GbtModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.n_features) {
    throw DataError("model expects " + std::to_string(model.n_features) +
                    " feature columns, got " + std::to_string(x.cols()));
  }
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(x.rows(), model.base_score);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (const auto& tree : model.trees) eta(i) += tree.predict(x.row(i));
  }
  return eta;
}

const std::vector<double>& training_loss_trace(const GbtModel& model) {
  return model.train_loss_trace;
}

}  // namespace tlrisk
