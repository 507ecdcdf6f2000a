#include "tlrisk/transfer.hpp"

#include <algorithm>
#include <cmath>

#include "tlrisk/error.hpp"
#include "tlrisk/log.hpp"
#include "tlrisk/numeric.hpp"

namespace tlrisk {

Eigen::VectorXd SourceLearner::log_odds(const Eigen::MatrixXd& x) const {
  if (const auto* glm = std::get_if<GlmFit>(&model)) return predict_log_odds(*glm, x);
  return predict_log_odds(std::get<GbtModel>(model), x);
}

Eigen::Index SourceLearner::input_width() const {
  if (const auto* glm = std::get_if<GlmFit>(&model)) return glm->design.input_width();
  return std::get<GbtModel>(model).n_features;
}

SourceLearner fit_source(const Cohort& pooled, SourceKind kind, const SourceConfig& config) {
  pooled.validate();
  SourceLearner s;
  s.kind = kind;
  s.n_train = pooled.rows();
  s.prevalence = pooled.labels.mean();
  if (kind == SourceKind::PenalizedGlm) {
    PenalizedGlmConfig glm = config.glm;
    glm.spec = TransformSpec{TransformMode::MainPlusInteractions};
    s.model = fit_penalized_glm(pooled.features, pooled.labels, Eigen::VectorXd(),
                                pooled.feature_names, glm);
  } else {
    s.model = fit_gbt(pooled.features, pooled.labels, config.gbt);
  }
  return s;
}

SourceLearner fit_source(const GroupedDataset& pooled, SourceKind kind,
                         const SourceConfig& config) {
  pooled.validate();
  return fit_source(pooled.pooled("source"), kind, config);
}

GlmFit fit_target_adjustment(const SourceLearner& source, const Cohort& target,
                             const AdjustmentConfig& config) {
  target.validate();
  const Eigen::VectorXd offset = source.log_odds(target.features);

  PenalizedGlmConfig glm;
  glm.spec = config.spec;
  glm.grid_points = config.grid_points;
  glm.grid_ratio = config.grid_ratio;
  glm.cv_folds = config.cv_folds;
  glm.seed = config.seed;
  glm.fixed_lambda = config.fixed_lambda;
  glm.solver = config.solver;

  return fit_penalized_glm(target.features, target.labels, offset, target.feature_names, glm);
}

RecalibrationParams fit_recalibration(const Eigen::VectorXd& p_hat, const Eigen::VectorXd& y) {
  if (p_hat.size() != y.size() || y.size() == 0) {
    throw DataError("recalibration needs paired, non-empty predictions and labels");
  }
  const double pos = y.sum();
  if (pos <= 0.0 || pos >= static_cast<double>(y.size())) {
    throw DataError("recalibration needs both classes");
  }
  const Eigen::Index n = y.size();
  const Eigen::VectorXd z = p_hat.unaryExpr([](double p) { return logit(p); });
  if (z.maxCoeff() == z.minCoeff()) {
    throw NumericalError("degenerate predictions: calibration slope is unidentifiable");
  }
  // Classes split by the score (ties at the boundary included) push the slope
  // to infinity, so there is no finite maximum-likelihood fit.
  double pos_min = INFINITY, pos_max = -INFINITY, neg_min = INFINITY, neg_max = -INFINITY;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) == 1.0) {
      pos_min = std::min(pos_min, z(i));
      pos_max = std::max(pos_max, z(i));
    } else {
      neg_min = std::min(neg_min, z(i));
      neg_max = std::max(neg_max, z(i));
    }
  }
  if (neg_max <= pos_min || pos_max <= neg_min) {
    throw NumericalError("recalibration data are separated by the score");
  }

  auto loss = [&](double a, double b) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += bernoulli_nll(y(i), a + b * z(i));
    return total / static_cast<double>(n);
  };

  RecalibrationParams theta;
  double current = loss(theta.a, theta.b);
  constexpr int kMaxIter = 100;
  for (int it = 0; it < kMaxIter; ++it) {
    Eigen::Vector2d grad = Eigen::Vector2d::Zero();
    Eigen::Matrix2d hess = Eigen::Matrix2d::Zero();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double prob = sigmoid(theta.a + theta.b * z(i));
      const double r = prob - y(i);
      const double w = prob * (1.0 - prob);
      grad(0) += r;
      grad(1) += r * z(i);
      hess(0, 0) += w;
      hess(0, 1) += w * z(i);
      hess(1, 1) += w * z(i) * z(i);
    }
    grad /= static_cast<double>(n);
    hess /= static_cast<double>(n);
    hess(1, 0) = hess(0, 1);
    if (grad.norm() < 1e-10) return theta;

    const Eigen::Vector2d step = hess.ldlt().solve(grad);
    if (!step.allFinite()) break;
    // Newton decrement: the remaining loss reduction is below rounding noise.
    if (grad.dot(step) < 1e-12) {
      theta = {theta.a - step(0), theta.b - step(1)};
      return theta;
    }
    double t = 1.0;
    bool moved = false;
    for (int halving = 0; halving < 50; ++halving) {
      const double a = theta.a - t * step(0);
      const double b = theta.b - t * step(1);
      const double trial = loss(a, b);
      if (trial <= current) {
        theta = {a, b};
        current = trial;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) {
      // Stalled at machine precision; accept when the gradient is tiny.
      if (grad.norm() < 1e-8) return theta;
      break;
    }
    if (!std::isfinite(theta.a) || !std::isfinite(theta.b) || std::abs(theta.b) > 1e6) break;
  }
  throw NumericalError("recalibration did not converge (possible separation)");
}

Eigen::VectorXd apply_recalibration(const RecalibrationParams& params,
                                    const Eigen::VectorXd& p_hat) {
  if (!std::isfinite(params.a) || !std::isfinite(params.b)) {
    throw DataError("recalibration parameters must be finite");
  }
  return p_hat.unaryExpr(
      [&](double p) { return sigmoid(params.a + params.b * logit(p)); });
}

Eigen::VectorXd predict_log_odds(const TransferModel& model, const Eigen::MatrixXd& x,
                                 std::string_view group_id) {
  Eigen::VectorXd eta = model.source.log_odds(x);
  const std::optional<RecalibrationParams>* recal = nullptr;
  auto it = model.groups.find(std::string(group_id));
  if (it != model.groups.end()) {
    eta = predict_log_odds(it->second.delta, x, eta);
    recal = &it->second.recalibration;
  } else if (model.fallback_to_source) {
    recal = &model.source_recalibration;
  } else {
    throw DataError("no adjustment for group '" + std::string(group_id) + "'");
  }
  if (recal->has_value()) {
    const RecalibrationParams& r = **recal;
    eta = eta.unaryExpr([&](double e) { return r.a + r.b * logit(sigmoid(e)); });
  }
  return eta;
}

Eigen::VectorXd predict(const TransferModel& model, const Eigen::MatrixXd& x,
                        std::string_view group_id) {
  return sigmoid(predict_log_odds(model, x, group_id));
}

double predict(const TransferModel& model, const Eigen::RowVectorXd& x,
               std::string_view group_id) {
  return predict(model, Eigen::MatrixXd(x), group_id)(0);
}

namespace detail {
void warn_recalibration_skipped(const std::string& name, const std::string& reason) {
  log::warn("recalibration skipped for '" + name + "': " + reason);
}
}  // namespace detail

TransferModel fit_transfer_model(SourceLearner source, const std::vector<Cohort>& targets,
                                 const TransferConfig& config) {
  TransferModel model;
  model.source = std::move(source);
  model.fallback_to_source = config.fallback_to_source;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Cohort& target = targets[k];
    if (model.groups.count(target.group_id) != 0) {
      throw DataError("duplicate target group '" + target.group_id + "'");
    }
    AdjustmentConfig adjust = config.adjustment;
    adjust.seed = derive_seed(config.seed, k, 1);
    GroupAdjustment g;
    if (config.recalibrate) {
      g.recalibration = holdout_recalibration(
          target, config.holdout_folds, derive_seed(config.seed, k, 2),
          [&](const Cohort& fit_part, const Cohort& held_out) {
            const GlmFit partial = fit_target_adjustment(model.source, fit_part, adjust);
            return predict_probability(partial, held_out.features,
                                       model.source.log_odds(held_out.features));
          });
    }
    g.delta = fit_target_adjustment(model.source, target, adjust);
    model.groups.emplace(target.group_id, std::move(g));
  }
  return model;
}

}  // namespace tlrisk
