#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace tlrisk {

// Scores and labels are paired vectors; labels are 0/1. Classification
// convention everywhere: a row is predicted positive when score >= threshold.

using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

/// Mann-Whitney statistic via average ranks (ties count one half).
double auroc(const VectorRef& scores, const VectorRef& labels);

/// Average precision; tied scores enter as one block.
double auprc(const VectorRef& scores, const VectorRef& labels);

double brier(const VectorRef& probs, const VectorRef& labels);

/// Integrated calibration index: mean |c(p_i) - p_i| where c is a tricube
/// local linear smoother of labels on probabilities with nearest-neighbour
/// span `span`.
double ici(const VectorRef& probs, const VectorRef& labels, double span = 0.75);

/// Smoothed observed event rate at each input probability, clamped to [0, 1].
Eigen::VectorXd loess_calibration_curve(const VectorRef& probs, const VectorRef& labels,
                                        double span = 0.75);

struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;

  long total() const { return tp + fp + tn + fn; }
};

struct ThresholdMetrics {
  ConfusionCounts counts;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double balanced_accuracy = 0.0;
  std::optional<double> precision;  // absent when nothing is predicted positive
  std::optional<double> f1;
};

ThresholdMetrics confusion_at(const VectorRef& scores, const VectorRef& labels, double threshold);

/// Observed score maximizing sensitivity + specificity - 1; ties go to the
/// smallest such score.
double youden_threshold(const VectorRef& scores, const VectorRef& labels);

enum class ThresholdKind { Fixed, Prevalence, Youden };

struct ThresholdSpec {
  ThresholdKind kind = ThresholdKind::Fixed;
  double fixed_value = 0.5;

  /// "0.5" (any number in (0, 1)), "prevalence" or "youden".
  static ThresholdSpec parse(std::string_view text);
  std::string label() const;

  /// Resolve on training scores and labels.
  double resolve(const VectorRef& train_scores, const VectorRef& train_labels) const;
};

struct MetricReport {
  long n = 0;
  double prevalence = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  double brier = 0.0;
  std::optional<double> ici;  // absent when the smoother preconditions fail
};

MetricReport evaluate_probabilities(const VectorRef& probs, const VectorRef& labels,
                                    double ici_span = 0.75);

}  // namespace tlrisk
