#include "tlrisk/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <vector>

#include "tlrisk/error.hpp"

namespace tlrisk {
namespace {

void check_pair(const VectorRef& scores, const VectorRef& labels) {
  if (scores.size() != labels.size()) {
    throw DataError("scores and labels differ in length");
  }
  if (scores.size() == 0) throw DataError("no observations");
}

struct ClassCounts {
  long positives = 0;
  long negatives = 0;
};

ClassCounts count_classes(const VectorRef& labels) {
  ClassCounts c;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) == 1.0) {
      ++c.positives;
    } else if (labels(i) == 0.0) {
      ++c.negatives;
    } else {
      throw DataError("labels must be 0/1");
    }
  }
  return c;
}

void require_both_classes(const ClassCounts& c) {
  if (c.positives == 0) throw DataError("labels contain no positive (1) cases");
  if (c.negatives == 0) throw DataError("labels contain no negative (0) cases");
}

std::vector<Eigen::Index> order_by(const VectorRef& scores, bool descending) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  if (descending) {
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });
  } else {
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return scores(a) < scores(b); });
  }
  return order;
}

}  // namespace

double auroc(const VectorRef& scores, const VectorRef& labels) {
  check_pair(scores, labels);
  const ClassCounts c = count_classes(labels);
  require_both_classes(c);
  const auto order = order_by(scores, false);
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores(order[j + 1]) == scores(order[i])) ++j;
    // ranks i+1 .. j+1 share their average
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels(order[k]) == 1.0) positive_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(c.positives);
  const double nn = static_cast<double>(c.negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double auprc(const VectorRef& scores, const VectorRef& labels) {
  check_pair(scores, labels);
  const ClassCounts c = count_classes(labels);
  if (c.positives == 0) throw DataError("average precision needs at least one positive");
  const auto order = order_by(scores, true);
  const double np = static_cast<double>(c.positives);
  long tp = 0;
  long fp = 0;
  double ap = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    long block_tp = 0;
    long block_fp = 0;
    std::size_t j = i;
    while (j < order.size() && scores(order[j]) == scores(order[i])) {
      (labels(order[j]) == 1.0 ? block_tp : block_fp) += 1;
      ++j;
    }
    tp += block_tp;
    fp += block_fp;
    if (block_tp > 0) {
      ap += (static_cast<double>(block_tp) / np) *
            (static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    i = j;
  }
  return ap;
}

double brier(const VectorRef& probs, const VectorRef& labels) {
  check_pair(probs, labels);
  return (probs - labels).squaredNorm() / static_cast<double>(probs.size());
}

Eigen::VectorXd loess_calibration_curve(const VectorRef& probs, const VectorRef& labels,
                                        double span) {
  check_pair(probs, labels);
  const Eigen::Index n = probs.size();
  if (n < 20) throw DataError("calibration smoother is unstable below 20 observations");
  if (!(span > 0.0 && span <= 1.0)) throw DataError("smoother span must lie in (0, 1]");
  if (probs.maxCoeff() == probs.minCoeff()) {
    throw DataError("calibration smoother needs non-constant predictions");
  }
  const auto order = order_by(probs, false);
  std::vector<double> xs(static_cast<std::size_t>(n));
  std::vector<double> ys(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    xs[k] = probs(order[k]);
    ys[k] = labels(order[k]);
  }
  const auto q = std::max<Eigen::Index>(
      2, static_cast<Eigen::Index>(std::floor(span * static_cast<double>(n))));

  Eigen::VectorXd curve(n);
  Eigen::Index left = 0;
  double last_x = 0.0;
  double last_value = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double x0 = xs[k];
    if (k > 0 && x0 == last_x) {
      curve(order[k]) = last_value;
      continue;
    }
    // q nearest neighbours form a contiguous window in sorted order.
    while (left + q < n && x0 - xs[left] > xs[left + q] - x0) ++left;
    const Eigen::Index right = left + q - 1;
    const double dmax = std::max(x0 - xs[left], xs[right] - x0);

    double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
    for (Eigen::Index j = left; j <= right; ++j) {
      const double d = xs[j] - x0;
      double w;
      if (dmax > 0.0) {
        const double u = std::abs(d) / dmax;
        if (u >= 1.0) continue;
        const double t = 1.0 - u * u * u;
        w = t * t * t;
      } else {
        w = 1.0;
      }
      s0 += w;
      s1 += w * d;
      s2 += w * d * d;
      t0 += w * ys[j];
      t1 += w * d * ys[j];
    }
    const double det = s0 * s2 - s1 * s1;
    double fitted = (det > 1e-12 * s0 * s2 && det > 0.0) ? (s2 * t0 - s1 * t1) / det : t0 / s0;
    fitted = std::clamp(fitted, 0.0, 1.0);
    curve(order[k]) = fitted;
    last_x = x0;
    last_value = fitted;
  }
  return curve;
}

double ici(const VectorRef& probs, const VectorRef& labels, double span) {
  const Eigen::VectorXd curve = loess_calibration_curve(probs, labels, span);
  return (curve - probs).cwiseAbs().mean();
}

ThresholdMetrics confusion_at(const VectorRef& scores, const VectorRef& labels, double threshold) {
  check_pair(scores, labels);
  if (!std::isfinite(threshold)) throw DataError("threshold must be finite");
  const ClassCounts c = count_classes(labels);
  require_both_classes(c);
  ThresholdMetrics m;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const bool predicted = scores(i) >= threshold;
    if (labels(i) == 1.0) {
      (predicted ? m.counts.tp : m.counts.fn) += 1;
    } else {
      (predicted ? m.counts.fp : m.counts.tn) += 1;
    }
  }
  m.sensitivity = static_cast<double>(m.counts.tp) / static_cast<double>(c.positives);
  m.specificity = static_cast<double>(m.counts.tn) / static_cast<double>(c.negatives);
  m.balanced_accuracy = 0.5 * (m.sensitivity + m.specificity);
  if (m.counts.tp + m.counts.fp > 0) {
    const double precision =
        static_cast<double>(m.counts.tp) / static_cast<double>(m.counts.tp + m.counts.fp);
    m.precision = precision;
    const double recall = m.sensitivity;
    m.f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return m;
}

double youden_threshold(const VectorRef& scores, const VectorRef& labels) {
  check_pair(scores, labels);
  const ClassCounts c = count_classes(labels);
  require_both_classes(c);
  const auto order = order_by(scores, false);

  // Sweep candidates upward. At candidate u, rows scoring below u are
  // predicted negative. J * P * N = tp * N + tn * P - P * N, compared in integers.
  long tp = c.positives;
  long tn = 0;
  long best_score = -1;
  double best = scores(order.front());
  std::size_t i = 0;
  while (i < order.size()) {
    const double candidate = scores(order[i]);
    const long scaled = tp * c.negatives + tn * c.positives;
    if (scaled > best_score) {
      best_score = scaled;
      best = candidate;
    }
    while (i < order.size() && scores(order[i]) == candidate) {
      if (labels(order[i]) == 1.0) {
        --tp;
      } else {
        ++tn;
      }
      ++i;
    }
  }
  return best;
}

ThresholdSpec ThresholdSpec::parse(std::string_view text) {
  if (text == "prevalence") return {ThresholdKind::Prevalence, 0.0};
  if (text == "youden") return {ThresholdKind::Youden, 0.0};
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !(v > 0.0 && v < 1.0)) {
    throw DataError("threshold '" + std::string(text) +
                    "' is not 'prevalence', 'youden' or a number in (0, 1)");
  }
  return {ThresholdKind::Fixed, v};
}

std::string ThresholdSpec::label() const {
  switch (kind) {
    case ThresholdKind::Prevalence:
      return "prevalence";
    case ThresholdKind::Youden:
      return "youden";
    case ThresholdKind::Fixed:
      break;
  }
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), fixed_value);
  return std::string(buf, ptr);
}

double ThresholdSpec::resolve(const VectorRef& train_scores, const VectorRef& train_labels) const {
  switch (kind) {
    case ThresholdKind::Prevalence: {
      check_pair(train_scores, train_labels);
      return train_labels.mean();
    }
    case ThresholdKind::Youden:
      return youden_threshold(train_scores, train_labels);
    case ThresholdKind::Fixed:
      break;
  }
  return fixed_value;
}

MetricReport evaluate_probabilities(const VectorRef& probs, const VectorRef& labels,
                                    double ici_span) {
  MetricReport r;
  r.n = static_cast<long>(labels.size());
  r.prevalence = labels.mean();
  r.auroc = auroc(probs, labels);
  r.auprc = auprc(probs, labels);
  r.brier = brier(probs, labels);
  try {
    r.ici = ici(probs, labels, ici_span);
  } catch (const DataError&) {
    r.ici.reset();
  }
  return r;
}

}  // namespace tlrisk
