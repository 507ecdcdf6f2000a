#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include <Eigen/Dense>

#include "tlrisk/dataset.hpp"
#include "tlrisk/gbt.hpp"
#include "tlrisk/glm.hpp"

namespace tlrisk {

enum class SourceKind { PenalizedGlm, Gbt };

struct SourceConfig {
  PenalizedGlmConfig glm;  // design is always main effects plus interactions
  GbtConfig gbt;
};

/// Learner fitted on pooled data whose log-odds become the fixed offset of
/// every per-group adjustment.
struct SourceLearner {
  SourceKind kind = SourceKind::PenalizedGlm;
  std::variant<GlmFit, GbtModel> model;
  Eigen::Index n_train = 0;
  double prevalence = 0.0;

  Eigen::VectorXd log_odds(const Eigen::MatrixXd& x) const;
  Eigen::Index input_width() const;
};

SourceLearner fit_source(const Cohort& pooled, SourceKind kind, const SourceConfig& config);
SourceLearner fit_source(const GroupedDataset& pooled, SourceKind kind,
                         const SourceConfig& config);

struct AdjustmentConfig {
  TransformSpec spec{TransformMode::MainOnly};
  int grid_points = 50;
  double grid_ratio = 1e-3;
  int cv_folds = 5;
  std::uint64_t seed = 0;
  std::optional<double> fixed_lambda;
  SolverOptions solver;
};

/// Penalized logistic fit of the target labels on phi(x) with the source
/// log-odds held fixed as offset. Falls back to lambda_max / 10 when the
/// target is too small for stratified inner CV.
GlmFit fit_target_adjustment(const SourceLearner& source, const Cohort& target,
                             const AdjustmentConfig& config);

struct RecalibrationParams {
  double a = 0.0;  // intercept
  double b = 1.0;  // slope on logit(p)
};

/// Two-parameter logistic regression of y on logit(p_hat), solved by Newton.
RecalibrationParams fit_recalibration(const Eigen::VectorXd& p_hat, const Eigen::VectorXd& y);

Eigen::VectorXd apply_recalibration(const RecalibrationParams& params,
                                    const Eigen::VectorXd& p_hat);

struct GroupAdjustment {
  GlmFit delta;
  std::optional<RecalibrationParams> recalibration;
};

struct TransferModel {
  SourceLearner source;
  std::map<std::string, GroupAdjustment> groups;
  bool fallback_to_source = false;
  std::optional<RecalibrationParams> source_recalibration;  // used on fallback only
};

Eigen::VectorXd predict_log_odds(const TransferModel& model, const Eigen::MatrixXd& x,
                                 std::string_view group_id);
Eigen::VectorXd predict(const TransferModel& model, const Eigen::MatrixXd& x,
                        std::string_view group_id);
double predict(const TransferModel& model, const Eigen::RowVectorXd& x, std::string_view group_id);

struct TransferConfig {
  AdjustmentConfig adjustment;
  bool recalibrate = true;
  int holdout_folds = 5;  // one stratified fold out of this many is the holdout
  std::uint64_t seed = 0;
  bool fallback_to_source = false;
};

/// Recalibration fitted on held-out predictions: fit on (holdout_folds - 1)
/// stratified parts, predict the remaining part, fit (a, b) there. Returns
/// nothing (with a warning) when the data cannot support the split or the
/// fit is degenerate.
template <typename FitPredict>
std::optional<RecalibrationParams> holdout_recalibration(const Cohort& data, int holdout_folds,
                                                         std::uint64_t seed,
                                                         FitPredict&& fit_predict);

/// Per-group adjustments, each recalibrated on held-out predictions when
/// requested, with the final delta refit on the whole group.
TransferModel fit_transfer_model(SourceLearner source, const std::vector<Cohort>& targets,
                                 const TransferConfig& config);

namespace detail {
void warn_recalibration_skipped(const std::string& name, const std::string& reason);
}

template <typename FitPredict>
std::optional<RecalibrationParams> holdout_recalibration(const Cohort& data, int holdout_folds,
                                                         std::uint64_t seed,
                                                         FitPredict&& fit_predict) {
  try {
    const FoldAssignment split = stratified_kfold(data, holdout_folds, seed);
    const Cohort fit_part = data.subset(split.train_rows(0));
    const Cohort held_out = data.subset(split.test_rows(0));
    const Eigen::VectorXd probs = fit_predict(fit_part, held_out);
    return fit_recalibration(probs, held_out.labels);
  } catch (const std::runtime_error& e) {
    detail::warn_recalibration_skipped(data.group_id, e.what());
    return std::nullopt;
  }
}

}  // namespace tlrisk
