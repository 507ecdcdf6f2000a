#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tlrisk/dataset.hpp"

namespace tlrisk {

// L1-penalized logistic regression with an unpenalized intercept and an
// optional fixed offset. The objective is on the per-observation scale:
//
//   (1/n) sum_i nll(y_i, b0 + offset_i + x_i' beta) + lambda * |beta|_1
//
// An empty offset vector means "no offset" throughout this header.

struct SolverOptions {
  double tolerance = 1e-7;  // max absolute coefficient change per outer cycle
  int max_outer = 10000;
  int max_inner_sweeps = 100000;
  double min_weight = 1e-5;  // IRLS weight floor
};

struct L1Solution {
  double intercept = 0.0;
  Eigen::VectorXd beta;
  bool converged = false;
  int iterations = 0;
  Eigen::VectorXd eta;                  // final linear predictor, offset included
  std::vector<double> objective_trace;  // penalized objective after each outer cycle
};

/// Intercept solving the offset-only problem (beta = 0).
double offset_only_intercept(const Eigen::VectorXd& y, const Eigen::VectorXd& offset);

/// Smallest lambda whose penalized solution is all zero.
double lambda_max(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                  const Eigen::VectorXd& offset);

/// Cyclic coordinate descent on the IRLS quadratic approximation, with a
/// backtracking step on the outer update so the objective never increases.
L1Solution solve_l1_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& offset, double lambda,
                             const SolverOptions& options = {},
                             const L1Solution* warm_start = nullptr);

double penalized_objective(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& offset, double intercept,
                           const Eigen::VectorXd& beta, double lambda);

struct LossGradient {
  double intercept = 0.0;
  Eigen::VectorXd beta;
};

/// Gradient of the mean negative log-likelihood (penalty excluded).
LossGradient logistic_loss_gradient(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& offset, double intercept,
                                    const Eigen::VectorXd& beta);

/// A fitted penalized GLM. Coefficients live on the standardized design scale;
/// `design` maps raw feature rows onto that scale.
struct GlmFit {
  DesignMap design;
  std::vector<std::string> column_names;
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  double lambda = 0.0;
  bool converged = false;
  int n_iterations = 0;

  Eigen::Index active_count() const;
};

/// Fit on an already standardized design. The returned fit carries an
/// identity design map, so prediction takes the same design columns.
GlmFit fit_l1_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& offset, double lambda,
                       const SolverOptions& options = {});

/// Log-odds: intercept + offset + design(x) * coefficients.
Eigen::VectorXd predict_log_odds(const GlmFit& fit, const Eigen::MatrixXd& x,
                                 const Eigen::VectorXd& offset = {});
Eigen::VectorXd predict_probability(const GlmFit& fit, const Eigen::MatrixXd& x,
                                    const Eigen::VectorXd& offset = {});

struct LambdaGrid {
  std::vector<double> values;  // strictly decreasing

  /// Log-uniform from `max_value` down to `ratio * max_value`.
  static LambdaGrid log_spaced(double max_value, int n_points = 50, double ratio = 1e-3);

  std::size_t size() const { return values.size(); }
  double ratio() const { return values.back() / values.front(); }
};

struct LambdaSelection {
  double lambda_star = 0.0;
  std::size_t index = 0;
  std::vector<double> lambdas;
  std::vector<double> cv_deviance;  // mean held-out nll per grid point
};

/// Stratified k-fold CV over the grid with warm starts along the path.
/// Minimizes mean held-out nll; ties go to the larger lambda.
LambdaSelection select_lambda_cv(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& offset, const LambdaGrid& grid,
                                 int k_folds, std::uint64_t seed,
                                 const SolverOptions& options = {});
LambdaSelection select_lambda_cv(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& offset, const LambdaGrid& grid,
                                 const FoldAssignment& folds, const SolverOptions& options = {});

struct PenalizedGlmConfig {
  TransformSpec spec;
  int grid_points = 50;
  double grid_ratio = 1e-3;
  int cv_folds = 5;
  std::uint64_t seed = 0;
  std::optional<double> fixed_lambda;  // skip CV when set
  SolverOptions solver;
};

/// Builds the design map on `x_raw`, selects lambda by CV unless fixed, and
/// refits on all rows. When either class has fewer rows than `cv_folds`,
/// lambda falls back to lambda_max / 10 with a logged warning.
GlmFit fit_penalized_glm(const Eigen::MatrixXd& x_raw, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& offset,
                         const std::vector<std::string>& feature_names,
                         const PenalizedGlmConfig& config);

}  // namespace tlrisk
