#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace tlrisk {

struct GbtConfig {
  int n_trees = 200;
  int max_depth = 4;
  double learning_rate = 0.1;
  double min_child_weight = 1.0;  // minimum hessian sum per child
  double l2_leaf_penalty = 1.0;
  double subsample_rows = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // rows with x[feature] <= threshold go left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output in log-odds, learning rate included
  double gain = 0.0;   // split gain, 0 for leaves
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  int depth() const;
};

struct GbtModel {
  double base_score = 0.0;
  std::vector<RegressionTree> trees;
  GbtConfig config;
  Eigen::Index n_features = 0;
  std::vector<double> train_loss_trace;
};

/// Exact greedy second-order boosting under logistic loss.
GbtModel fit_gbt(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GbtConfig& config);

Eigen::VectorXd predict_log_odds(const GbtModel& model, const Eigen::MatrixXd& x);

/// Mean training nll after each boosting round.
const std::vector<double>& training_loss_trace(const GbtModel& model);

/// Gain of splitting a node with gradient/hessian sums (G, H) into (GL, HL)
/// and (G - GL, H - HL).
inline double split_gain(double g_left, double h_left, double g_total, double h_total,
                         double l2) {
  const double g_right = g_total - g_left;
  const double h_right = h_total - h_left;
  return 0.5 * (g_left * g_left / (h_left + l2) + g_right * g_right / (h_right + l2) -
                g_total * g_total / (h_total + l2));
}

/// Gains this close are treated as equal, so the scan order (lower feature,
/// then lower threshold) decides rather than rounding. A split must also beat
/// zero by this margin.
inline bool gain_exceeds(double candidate, double incumbent) {
  return candidate > incumbent + 1e-12 * (1.0 + std::abs(incumbent));
}

inline double leaf_weight(double g, double h, double l2) { return -g / (h + l2); }

}  // namespace tlrisk
