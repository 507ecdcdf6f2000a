#include "tlrisk/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tlrisk/error.hpp"
#include "tlrisk/log.hpp"
#include "tlrisk/numeric.hpp"

namespace tlrisk {
namespace {

double offset_at(const Eigen::VectorXd& offset, Eigen::Index i) {
  return offset.size() == 0 ? 0.0 : offset(i);
}

void check_shapes(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                  const Eigen::VectorXd& offset) {
  if (design.rows() != y.size()) {
    throw DataError("design has " + std::to_string(design.rows()) + " rows but " +
                    std::to_string(y.size()) + " labels");
  }
  if (offset.size() != 0 && offset.size() != y.size()) {
    throw DataError("offset length does not match label count");
  }
  if (y.size() == 0) throw DataError("no observations");
}

void check_both_classes(const Eigen::VectorXd& y) {
  const double s = y.sum();
  if (s <= 0.0 || s >= static_cast<double>(y.size())) {
    throw DataError("labels contain a single class; intercept is unidentifiable");
  }
}

double mean_nll_of(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  return mean_bernoulli_nll(y, eta);
}

// Gradient magnitudes of the loss at beta = 0 and the offset-only intercept.
struct ZeroPoint {
  double intercept = 0.0;
  Eigen::VectorXd score;  // X'(y - p) / n
};

ZeroPoint zero_point(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& offset) {
  ZeroPoint z;
  z.intercept = offset_only_intercept(y, offset);
  Eigen::VectorXd resid(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    resid(i) = y(i) - sigmoid(z.intercept + offset_at(offset, i));
  }
  z.score = design.transpose() * resid / static_cast<double>(y.size());
  return z;
}

L1Solution zero_solution(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& offset, double intercept, double lambda) {
  L1Solution s;
  s.intercept = intercept;
  s.beta = Eigen::VectorXd::Zero(design.cols());
  s.converged = true;
  s.iterations = 0;
  s.eta = Eigen::VectorXd::Constant(y.size(), intercept);
  if (offset.size() != 0) s.eta += offset;
  s.objective_trace.push_back(mean_nll_of(y, s.eta) + lambda * 0.0);
  return s;
}

double soft_threshold(double u, double lambda) {
  if (u > lambda) return u - lambda;
  if (u < -lambda) return u + lambda;
  return 0.0;
}

}  // namespace

double offset_only_intercept(const Eigen::VectorXd& y, const Eigen::VectorXd& offset) {
  check_both_classes(y);
  const double n = static_cast<double>(y.size());
  const double ybar = y.sum() / n;
  const double start = std::log(ybar) - std::log1p(-ybar);
  if (offset.size() == 0) return start;

  // Safeguarded Newton on the score equation mean(y) = mean(sigmoid(b + offset)).
  auto score = [&](double b) {
    double s = 0.0;
    double h = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double p = sigmoid(b + offset(i));
      s += y(i) - p;
      h += p * (1.0 - p);
    }
    return std::pair{s / n, h / n};
  };
  double b = start - offset.mean();
  // Bracket the root: the score is decreasing in b.
  double lo = b - 1.0;
  double hi = b + 1.0;
  while (score(lo).first < 0.0) lo -= 2.0 * (hi - lo);
  while (score(hi).first > 0.0) hi += 2.0 * (hi - lo);
  b = std::clamp(b, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const auto [s, h] = score(b);
    if (s == 0.0) break;
    if (s > 0.0) lo = b; else hi = b;
    double next = h > 0.0 ? b + s / h : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - b) <= 1e-15 * std::max(1.0, std::abs(b))) {
      b = next;
      break;
    }
    b = next;
  }
  return b;
}

double lambda_max(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                  const Eigen::VectorXd& offset) {
  check_shapes(design, y, offset);
  const ZeroPoint z = zero_point(design, y, offset);
  return design.cols() == 0 ? 0.0 : z.score.cwiseAbs().maxCoeff();
}

double penalized_objective(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& offset, double intercept,
                           const Eigen::VectorXd& beta, double lambda) {
  Eigen::VectorXd eta = (design * beta).array() + intercept;
  if (offset.size() != 0) eta += offset;
  return mean_nll_of(y, eta) + lambda * beta.lpNorm<1>();
}

LossGradient logistic_loss_gradient(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& offset, double intercept,
                                    const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = (design * beta).array() + intercept;
  if (offset.size() != 0) eta += offset;
  const Eigen::VectorXd resid = sigmoid(eta) - y;
  const double n = static_cast<double>(y.size());
  LossGradient g;
  g.intercept = resid.sum() / n;
  g.beta = design.transpose() * resid / n;
  return g;
}

L1Solution solve_l1_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& offset, double lambda,
                             const SolverOptions& options, const L1Solution* warm_start) {
  check_shapes(design, y, offset);
  if (!(lambda >= 0.0)) throw DataError("lambda must be nonnegative");
  const Eigen::Index n = design.rows();
  const Eigen::Index d = design.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  // KKT holds at beta = 0: that is the exact solution.
  const ZeroPoint z0 = zero_point(design, y, offset);
  if (d == 0 || z0.score.cwiseAbs().maxCoeff() <= lambda) {
    return zero_solution(design, y, offset, z0.intercept, lambda);
  }

  L1Solution s;
  if (warm_start != nullptr && warm_start->beta.size() == d) {
    s.intercept = warm_start->intercept;
    s.beta = warm_start->beta;
  } else {
    s.intercept = z0.intercept;
    s.beta = Eigen::VectorXd::Zero(d);
  }
  Eigen::VectorXd eta = (design * s.beta).array() + s.intercept;
  if (offset.size() != 0) eta += offset;
  double objective = mean_nll_of(y, eta) + lambda * s.beta.lpNorm<1>();
  s.objective_trace.push_back(objective);

  Eigen::VectorXd w(n);
  Eigen::VectorXd resid(n);
  Eigen::VectorXd xv(d);
  std::vector<char> active(static_cast<std::size_t>(d), 0);
  const double inner_tol = 0.1 * options.tolerance;

  for (int outer = 1; outer <= options.max_outer; ++outer) {
    s.iterations = outer;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = sigmoid(eta(i));
      w(i) = std::max(p * (1.0 - p), options.min_weight);
      resid(i) = (y(i) - p) / w(i);
    }
    const double w_sum = w.sum();
    for (Eigen::Index j = 0; j < d; ++j) {
      xv(j) = design.col(j).cwiseAbs2().dot(w) * inv_n;
    }

    double b0 = s.intercept;
    Eigen::VectorXd beta = s.beta;
    for (Eigen::Index j = 0; j < d; ++j) active[j] = beta(j) != 0.0;

    auto update = [&](Eigen::Index j) {
      if (xv(j) <= 0.0) return 0.0;
      const double grad = design.col(j).cwiseProduct(w).dot(resid) * inv_n;
      const double next = soft_threshold(grad + xv(j) * beta(j), lambda) / xv(j);
      const double delta = next - beta(j);
      if (delta != 0.0) {
        resid.noalias() -= delta * design.col(j);
        beta(j) = next;
      }
      return std::abs(delta);
    };
    auto update_intercept = [&]() {
      const double delta = w.dot(resid) / w_sum;
      resid.array() -= delta;
      b0 += delta;
      return std::abs(delta);
    };

    int sweeps = 0;
    while (sweeps < options.max_inner_sweeps) {
      // Full sweep, which may grow the active set.
      double change = update_intercept();
      bool grew = false;
      for (Eigen::Index j = 0; j < d; ++j) {
        change = std::max(change, update(j));
        if (beta(j) != 0.0 && !active[j]) {
          active[j] = 1;
          grew = true;
        }
      }
      ++sweeps;
      if (change < inner_tol && !grew) break;
      // Iterate on the active set until it settles.
      while (sweeps < options.max_inner_sweeps) {
        double inner_change = update_intercept();
        for (Eigen::Index j = 0; j < d; ++j) {
          if (active[j]) inner_change = std::max(inner_change, update(j));
        }
        ++sweeps;
        if (inner_change < inner_tol) break;
      }
    }

    // Backtrack along the proximal Newton direction.
    const double d_b0 = b0 - s.intercept;
    const Eigen::VectorXd d_beta = beta - s.beta;
    const Eigen::VectorXd d_eta = (design * d_beta).array() + d_b0;
    double step = 1.0;
    double accepted_objective = objective;
    bool accepted = false;
    Eigen::VectorXd trial_eta;
    for (int halving = 0; halving < 40; ++halving) {
      trial_eta = eta + step * d_eta;
      const Eigen::VectorXd trial_beta = s.beta + step * d_beta;
      const double trial = mean_nll_of(y, trial_eta) + lambda * trial_beta.lpNorm<1>();
      if (trial <= objective) {
        accepted_objective = trial;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    double max_change = 0.0;
    if (accepted) {
      max_change = std::max(std::abs(step * d_b0), (step * d_beta).cwiseAbs().maxCoeff());
      s.intercept += step * d_b0;
      if (step == 1.0) {
        s.beta = beta;
      } else {
        s.beta += step * d_beta;
      }
      eta = trial_eta;
      objective = accepted_objective;
    }
    s.objective_trace.push_back(objective);
    // No descent step left means the current point is already optimal.
    if (!accepted || max_change < options.tolerance) {
      s.converged = true;
      break;
    }
  }
  // Refresh eta from the final coefficients so it matches prediction exactly.
  s.eta = (design * s.beta).array() + s.intercept;
  if (offset.size() != 0) s.eta += offset;
  return s;
}

Eigen::Index GlmFit::active_count() const {
  return static_cast<Eigen::Index>((coefficients.array() != 0.0).count());
}

GlmFit fit_l1_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& offset, double lambda,
                       const SolverOptions& options) {
  const L1Solution sol = solve_l1_logistic(design, y, offset, lambda, options);
  GlmFit fit;
  fit.design.spec = TransformSpec{TransformMode::MainOnly};
  fit.design.raw = Standardizer::identity(design.cols());
  fit.design.expanded = Standardizer::identity(design.cols());
  for (Eigen::Index j = 0; j < design.cols(); ++j) {
    fit.column_names.push_back("x" + std::to_string(j + 1));
  }
  fit.intercept = sol.intercept;
  fit.coefficients = sol.beta;
  fit.lambda = lambda;
  fit.converged = sol.converged;
  fit.n_iterations = sol.iterations;
  return fit;
}

Eigen::VectorXd predict_log_odds(const GlmFit& fit, const Eigen::MatrixXd& x,
                                 const Eigen::VectorXd& offset) {
  if (x.cols() != fit.design.input_width()) {
    throw DataError("model expects " + std::to_string(fit.design.input_width()) +
                    " feature columns, got " + std::to_string(x.cols()));
  }
  if (offset.size() != 0 && offset.size() != x.rows()) {
    throw DataError("offset length does not match row count");
  }
  Eigen::VectorXd eta = (fit.design.apply(x) * fit.coefficients).array() + fit.intercept;
  if (offset.size() != 0) eta += offset;
  return eta;
}

Eigen::VectorXd predict_probability(const GlmFit& fit, const Eigen::MatrixXd& x,
                                    const Eigen::VectorXd& offset) {
  return sigmoid(predict_log_odds(fit, x, offset));
}

LambdaGrid LambdaGrid::log_spaced(double max_value, int n_points, double ratio) {
  if (!(max_value > 0.0)) throw DataError("lambda grid needs a positive maximum");
  if (n_points < 1) throw DataError("lambda grid needs at least one point");
  if (!(ratio > 0.0 && ratio < 1.0) && n_points > 1) {
    throw DataError("lambda grid ratio must lie in (0, 1)");
  }
  LambdaGrid g;
  g.values.reserve(static_cast<std::size_t>(n_points));
  g.values.push_back(max_value);
  const double log_step = n_points > 1 ? std::log(ratio) / (n_points - 1) : 0.0;
  for (int k = 1; k < n_points; ++k) g.values.push_back(max_value * std::exp(log_step * k));
  return g;
}

LambdaSelection select_lambda_cv(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& offset, const LambdaGrid& grid,
                                 int k_folds, std::uint64_t seed, const SolverOptions& options) {
  return select_lambda_cv(design, y, offset, grid, stratified_kfold(y, k_folds, seed, "lambda CV"),
                          options);
}

LambdaSelection select_lambda_cv(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& offset, const LambdaGrid& grid,
                                 const FoldAssignment& folds, const SolverOptions& options) {
  check_shapes(design, y, offset);
  if (grid.size() == 0) throw DataError("empty lambda grid");
  if (folds.fold.size() != static_cast<std::size_t>(y.size())) {
    throw DataError("fold assignment does not match row count");
  }
  LambdaSelection out;
  out.lambdas = grid.values;
  if (grid.size() == 1) {
    out.lambda_star = grid.values.front();
    out.cv_deviance.assign(1, std::numeric_limits<double>::quiet_NaN());
    return out;
  }

  std::vector<double> total(grid.size(), 0.0);
  for (int f = 0; f < folds.k_folds; ++f) {
    const auto train = folds.train_rows(f);
    const auto test = folds.test_rows(f);
    const Eigen::MatrixXd x_train = design(train, Eigen::all);
    const Eigen::VectorXd y_train = y(train);
    const Eigen::MatrixXd x_test = design(test, Eigen::all);
    const Eigen::VectorXd y_test = y(test);
    Eigen::VectorXd off_train;
    Eigen::VectorXd off_test;
    if (offset.size() != 0) {
      off_train = offset(train);
      off_test = offset(test);
    }
    L1Solution previous;
    bool have_previous = false;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      L1Solution sol = solve_l1_logistic(x_train, y_train, off_train, grid.values[k], options,
                                         have_previous ? &previous : nullptr);
      Eigen::VectorXd eta = (x_test * sol.beta).array() + sol.intercept;
      if (off_test.size() != 0) eta += off_test;
      for (Eigen::Index i = 0; i < eta.size(); ++i) total[k] += bernoulli_nll(y_test(i), eta(i));
      previous = std::move(sol);
      have_previous = true;
    }
  }
  out.cv_deviance.resize(grid.size());
  std::size_t best = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    out.cv_deviance[k] = total[k] / static_cast<double>(y.size());
    if (out.cv_deviance[k] < out.cv_deviance[best]) best = k;
  }
  out.index = best;
  out.lambda_star = grid.values[best];
  return out;
}

GlmFit fit_penalized_glm(const Eigen::MatrixXd& x_raw, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& offset,
                         const std::vector<std::string>& feature_names,
                         const PenalizedGlmConfig& config) {
  if (static_cast<Eigen::Index>(feature_names.size()) != x_raw.cols()) {
    throw DataError("feature name count does not match width");
  }
  GlmFit fit;
  fit.design = DesignMap::fit(x_raw, config.spec);
  fit.column_names = expand_feature_names(feature_names, config.spec);
  const Eigen::MatrixXd design = fit.design.apply(x_raw);

  const double top = lambda_max(design, y, offset);
  std::optional<double> fixed = config.fixed_lambda;
  if (!fixed) {
    const auto pos = static_cast<long>(y.sum());
    const long neg = static_cast<long>(y.size()) - pos;
    if (pos < config.cv_folds || neg < config.cv_folds) {
      fixed = top / 10.0;
      log::warn(std::to_string(pos) + " positives and " + std::to_string(neg) +
                " negatives are too few for " + std::to_string(config.cv_folds) +
                "-fold lambda CV; using lambda_max / 10");
    }
  }
  std::vector<double> path;
  if (fixed) {
    path.push_back(*fixed);
  } else if (top <= 0.0) {
    path.push_back(0.0);
  } else {
    const LambdaGrid grid = LambdaGrid::log_spaced(top, config.grid_points, config.grid_ratio);
    const LambdaSelection sel =
        select_lambda_cv(design, y, offset, grid, config.cv_folds, config.seed, config.solver);
    path.assign(grid.values.begin(), grid.values.begin() + static_cast<long>(sel.index) + 1);
  }

  // Warm-started path down to the selected lambda.
  L1Solution sol;
  bool have = false;
  for (double lambda : path) {
    sol = solve_l1_logistic(design, y, offset, lambda, config.solver, have ? &sol : nullptr);
    have = true;
  }
  fit.intercept = sol.intercept;
  fit.coefficients = sol.beta;
  fit.lambda = path.back();
  fit.converged = sol.converged;
  fit.n_iterations = sol.iterations;
  return fit;
}

}  // namespace tlrisk
