#include "tlrisk/simgen.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <random>

#include "tlrisk/error.hpp"
#include "tlrisk/numeric.hpp"

namespace tlrisk {
namespace {

enum Stream : std::uint64_t { kSourceStream = 1, kTargetStream = 2, kTestStream = 3 };

std::string short_number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Cohort draw_cohort(const SimConfig& config, Domain domain, int rows, std::uint64_t seed,
                   std::string group_id) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXd beta = domain_mean(config, domain);
  const Eigen::Matrix2d chol = config.sigma_neg_block.llt().matrixL();

  Cohort c;
  c.group_id = std::move(group_id);
  c.features.resize(rows, config.p);
  c.labels.resize(rows);
  for (int j = 0; j < config.p; ++j) c.feature_names.push_back("x" + std::to_string(j + 1));
  for (int i = 0; i < rows; ++i) {
    const bool positive = unif(rng) < config.prevalence;
    const double sign = positive ? 1.0 : -1.0;
    Eigen::VectorXd z(config.p);
    for (int j = 0; j < config.p; ++j) z(j) = normal(rng);
    if (!positive) z.head<2>() = chol * z.head<2>();
    c.features.row(i) = (sign * beta + z).transpose();
    c.labels(i) = positive ? 1.0 : 0.0;
  }
  return c;
}

}  // namespace

void SimConfig::validate() const {
  if (p < 5) throw DataError("simulation needs p >= 5");
  if (m_target < 1 || m_target >= n_total) throw DataError("need 0 < m_target < n_total");
  if (n_test < 0) throw DataError("n_test must be nonnegative");
  if (!(prevalence >= 0.0 && prevalence <= 1.0)) throw DataError("prevalence must lie in [0, 1]");
  if (replicates < 1) throw DataError("replicates must be at least 1");
  if (!std::isfinite(a) || !std::isfinite(b)) throw DataError("a and b must be finite");
  const bool symmetric = sigma_neg_block(0, 1) == sigma_neg_block(1, 0);
  if (!symmetric || sigma_neg_block.llt().info() != Eigen::Success ||
      !(sigma_neg_block(0, 0) * sigma_neg_block(1, 1) - sigma_neg_block(0, 1) * sigma_neg_block(1, 0) > 0.0)) {
    throw DataError("sigma_neg_block must be symmetric positive definite");
  }
}

std::string SimConfig::label() const {
  return "pi" + short_number(prevalence) + "_b" + short_number(b);
}

Eigen::VectorXd domain_mean(const SimConfig& config, Domain domain) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(config.p);
  const double lead = domain == Domain::Target ? config.a : -config.a;
  beta(0) = lead;
  beta(1) = lead;
  beta(2) = config.b;
  beta(3) = config.b;
  beta(4) = config.b;
  return beta;
}

GroupedDataset SimStudy::grouped() const {
  GroupedDataset d;
  d.cohorts = {source, target};
  return d;
}

SimStudy generate_study(const SimConfig& config, int replicate) {
  config.validate();
  SimStudy s;
  s.config = config;
  s.replicate = replicate;
  const auto r = static_cast<std::uint64_t>(replicate);
  s.source = draw_cohort(config, Domain::Source, config.n_total - config.m_target,
                         derive_seed(config.seed, r, kSourceStream), "source");
  s.target = draw_cohort(config, Domain::Target, config.m_target,
                         derive_seed(config.seed, r, kTargetStream), "target");
  s.test = draw_cohort(config, Domain::Target, config.n_test,
                       derive_seed(config.seed, r, kTestStream), "target");
  return s;
}

double bayes_log_odds(const Eigen::VectorXd& x, const SimConfig& config, Domain domain) {
  if (x.size() != config.p) throw DataError("feature row length does not match p");
  const Eigen::VectorXd beta = domain_mean(config, domain);
  const double prior = std::log(config.prevalence) - std::log1p(-config.prevalence);
  if (!std::isfinite(prior)) return prior;

  // Positive class: N(beta, I). Negative class: N(-beta, Sigma_neg).
  const Eigen::VectorXd dp = x - beta;
  const Eigen::VectorXd dn = x + beta;
  const Eigen::Matrix2d inv_block = config.sigma_neg_block.inverse();
  const double quad_pos = dp.squaredNorm();
  const Eigen::Vector2d dn_head = dn.head<2>();
  const double quad_neg = dn_head.dot(inv_block * dn_head) + dn.tail(config.p - 2).squaredNorm();
  const double log_det_neg = std::log(config.sigma_neg_block.determinant());
  return prior - 0.5 * quad_pos + 0.5 * quad_neg + 0.5 * log_det_neg;
}

Eigen::VectorXd bayes_log_odds(const Eigen::MatrixXd& x, const SimConfig& config, Domain domain) {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out(i) = bayes_log_odds(Eigen::VectorXd(x.row(i).transpose()), config, domain);
  }
  return out;
}

std::vector<SimConfig> scenario_grid() {
  std::vector<SimConfig> grid;
  for (double prevalence : {0.5, 0.1}) {
    for (double b : {0.2, 0.7}) {
      SimConfig c;
      c.prevalence = prevalence;
      c.a = 0.3;
      c.b = b;
      grid.push_back(c);
    }
  }
  return grid;
}

}  // namespace tlrisk
