#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tlrisk/dataset.hpp"

namespace tlrisk {

// Class-conditional Gaussian benchmark with a sign flip between domains.
// Labels Y in {-1, +1} with P(Y = +1) = prevalence; X | Y ~ N(beta * Y, Sigma(Y))
// with Sigma(+1) = I and Sigma(-1) = blockdiag(sigma_neg_block, I).
// beta = (a, a, b, b, b, 0, ...) for the target and (-a, -a, b, b, b, 0, ...)
// for the source. Y = +1 is stored as label 1.

struct SimConfig {
  int n_total = 2000;
  int m_target = 200;
  int p = 10;
  double prevalence = 0.5;
  double a = 0.3;
  double b = 0.2;
  Eigen::Matrix2d sigma_neg_block = (Eigen::Matrix2d() << 3.0, 0.4, 0.4, 3.0).finished();
  std::uint64_t seed = 0;
  int replicates = 20;
  int n_test = 2000;         // independent target-distribution evaluation rows
  bool source_only = false;  // train the source learner on the n - m source rows only

  void validate() const;
  /// Scenario label such as "pi0.5_b0.2".
  std::string label() const;
};

enum class Domain { Source, Target };

Eigen::VectorXd domain_mean(const SimConfig& config, Domain domain);

struct SimStudy {
  Cohort source;  // n_total - m_target rows, group "source"
  Cohort target;  // m_target rows, group "target"
  Cohort test;    // n_test target-distribution rows, group "target"
  SimConfig config;
  int replicate = 0;

  /// Source and target as a two-group dataset ("source", "target").
  GroupedDataset grouped() const;
};

/// Each replicate draws from streams derived from (seed, replicate), so any
/// replicate can be regenerated on its own.
SimStudy generate_study(const SimConfig& config, int replicate);

/// Exact posterior log-odds under the generating model.
double bayes_log_odds(const Eigen::VectorXd& x, const SimConfig& config, Domain domain);
Eigen::VectorXd bayes_log_odds(const Eigen::MatrixXd& x, const SimConfig& config, Domain domain);

/// prevalence in {0.1, 0.5} x b in {0.2, 0.7}, a = 0.3, other fields default.
std::vector<SimConfig> scenario_grid();

}  // namespace tlrisk
