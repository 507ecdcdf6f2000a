#include "tlrisk/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include "tlrisk/error.hpp"
#include "tlrisk/glm.hpp"
#include "tlrisk/log.hpp"
#include "tlrisk/numeric.hpp"
#include "tlrisk/serialization.hpp"
#include "tlrisk/transfer.hpp"

namespace tlrisk {
namespace {

using nlohmann::json;

constexpr std::string_view kToolVersion = "0.1.0";

constexpr std::array<std::pair<Method, std::string_view>, 8> kMethodNames{{
    {Method::SingleFeaturePooledGlm, "SingleFeaturePooledGlm"},
    {Method::TargetOnlyGlm, "TargetOnlyGlm"},
    {Method::SourceGlm, "SourceGlm"},
    {Method::TlGlm, "TlGlm"},
    {Method::TargetOnlyGbt, "TargetOnlyGbt"},
    {Method::SourceGbt, "SourceGbt"},
    {Method::TlGbt, "TlGbt"},
    {Method::BayesOracle, "BayesOracle"},
}};

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item.push_back(c);
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

bool has_method(const ExperimentConfig& config, Method m) {
  return std::find(config.methods.begin(), config.methods.end(), m) != config.methods.end();
}

/// Runs `work(i)` for i in [0, count) on up to `jobs` threads. Exceptions are
/// rethrown for the lowest failing index.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& work) {
  std::vector<std::exception_ptr> errors(count);
  auto run = [&](std::size_t i) {
    try {
      work(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

SolverOptions solver_options(const GlmSettings& s) {
  SolverOptions o;
  o.tolerance = s.tolerance;
  o.max_outer = s.max_outer;
  return o;
}

PenalizedGlmConfig glm_config(const ExperimentConfig& config, TransformSpec spec,
                              std::uint64_t seed) {
  PenalizedGlmConfig g;
  g.spec = spec;
  g.grid_points = config.glm.grid_points;
  g.grid_ratio = config.glm.grid_ratio;
  g.cv_folds = config.glm.cv_folds;
  g.seed = seed;
  g.solver = solver_options(config.glm);
  return g;
}

SourceConfig source_config(const ExperimentConfig& config, std::uint64_t seed) {
  SourceConfig s;
  s.glm = glm_config(config, TransformSpec{TransformMode::MainPlusInteractions},
                     derive_seed(seed, 1));
  s.gbt = config.gbt;
  s.gbt.seed = derive_seed(seed, 2);
  return s;
}

AdjustmentConfig adjustment_config(const ExperimentConfig& config) {
  AdjustmentConfig a;
  a.spec = config.adjustment;
  a.grid_points = config.glm.grid_points;
  a.grid_ratio = config.glm.grid_ratio;
  a.cv_folds = config.glm.cv_folds;
  a.solver = solver_options(config.glm);
  return a;
}

Eigen::Index feature_index(const std::vector<std::string>& names, const std::string& wanted) {
  if (wanted.empty()) return 0;
  auto it = std::find(names.begin(), names.end(), wanted);
  if (it == names.end()) throw DataError("single_feature '" + wanted + "' is not a column");
  return static_cast<Eigen::Index>(it - names.begin());
}

using Predictor = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

Predictor with_recalibration(Predictor base, std::optional<RecalibrationParams> recal) {
  if (!recal) return base;
  return [base = std::move(base), r = *recal](const Eigen::MatrixXd& x) {
    return apply_recalibration(r, base(x));
  };
}

Predictor source_predictor(std::shared_ptr<const SourceLearner> learner) {
  return [learner](const Eigen::MatrixXd& x) { return Eigen::VectorXd(sigmoid(learner->log_odds(x))); };
}

/// Lazily fitted learners shared by the methods of one evaluation unit.
class UnitModels {
 public:
  UnitModels(const ExperimentConfig& config, const Cohort& pool, const Cohort& target,
             std::uint64_t seed)
      : config_(config), pool_(pool), target_(target), seed_(seed) {}

  std::shared_ptr<const SourceLearner> source(SourceKind kind) {
    auto& slot = kind == SourceKind::PenalizedGlm ? glm_source_ : gbt_source_;
    if (!slot) {
      slot = std::make_shared<SourceLearner>(
          fit_source(pool_, kind, source_config(config_, derive_seed(seed_, 10))));
    }
    return slot;
  }

  Predictor build(Method method, bool recalibrate) {
    switch (method) {
      case Method::SingleFeaturePooledGlm:
        return single_feature();
      case Method::SourceGlm:
        return recalibrated_source(SourceKind::PenalizedGlm, recalibrate);
      case Method::SourceGbt:
        return recalibrated_source(SourceKind::Gbt, recalibrate);
      case Method::TlGlm:
        return transfer(SourceKind::PenalizedGlm, recalibrate);
      case Method::TlGbt:
        return transfer(SourceKind::Gbt, recalibrate);
      case Method::TargetOnlyGlm:
        return target_only_glm(recalibrate);
      case Method::TargetOnlyGbt:
        return target_only_gbt(recalibrate);
      case Method::BayesOracle:
        break;
    }
    throw DataError("method is not available here");
  }

 private:
  Predictor single_feature() {
    const Eigen::Index j = feature_index(pool_.feature_names, config_.single_feature);
    PenalizedGlmConfig g = glm_config(config_, TransformSpec{TransformMode::MainOnly}, 0);
    g.fixed_lambda = 0.0;
    auto fit = std::make_shared<GlmFit>(fit_penalized_glm(
        pool_.features.col(j), pool_.labels, Eigen::VectorXd(), {pool_.feature_names[j]}, g));
    return [fit, j](const Eigen::MatrixXd& x) {
      return predict_probability(*fit, x.col(j));
    };
  }

  Predictor recalibrated_source(SourceKind kind, bool recalibrate) {
    auto learner = source(kind);
    std::optional<RecalibrationParams> recal;
    if (recalibrate) {
      const SourceConfig sc = source_config(config_, derive_seed(seed_, 11));
      recal = holdout_recalibration(
          pool_, config_.recalibration_holdout_folds, derive_seed(seed_, 12),
          [&](const Cohort& fit_part, const Cohort& held_out) {
            const SourceLearner partial = fit_source(fit_part, kind, sc);
            return Eigen::VectorXd(sigmoid(partial.log_odds(held_out.features)));
          });
    }
    return with_recalibration(source_predictor(learner), recal);
  }

  Predictor transfer(SourceKind kind, bool recalibrate) {
    TransferConfig tc;
    tc.adjustment = adjustment_config(config_);
    tc.recalibrate = recalibrate;
    tc.holdout_folds = config_.recalibration_holdout_folds;
    tc.seed = derive_seed(seed_, 20 + static_cast<int>(kind));
    auto model = std::make_shared<TransferModel>(fit_transfer_model(*source(kind), {target_}, tc));
    const std::string group = target_.group_id;
    return [model, group](const Eigen::MatrixXd& x) { return predict(*model, x, group); };
  }

  Predictor target_only_glm(bool recalibrate) {
    const PenalizedGlmConfig g = glm_config(
        config_, TransformSpec{TransformMode::MainPlusInteractions}, derive_seed(seed_, 30));
    auto fit_on = [g](const Cohort& c) {
      return fit_penalized_glm(c.features, c.labels, Eigen::VectorXd(), c.feature_names, g);
    };
    std::optional<RecalibrationParams> recal;
    if (recalibrate) {
      recal = holdout_recalibration(target_, config_.recalibration_holdout_folds,
                                    derive_seed(seed_, 31),
                                    [&](const Cohort& fit_part, const Cohort& held_out) {
                                      return predict_probability(fit_on(fit_part),
                                                                 held_out.features);
                                    });
    }
    auto fit = std::make_shared<GlmFit>(fit_on(target_));
    Predictor base = [fit](const Eigen::MatrixXd& x) { return predict_probability(*fit, x); };
    return with_recalibration(std::move(base), recal);
  }

  Predictor target_only_gbt(bool recalibrate) {
    GbtConfig g = config_.gbt;
    g.seed = derive_seed(seed_, 40);
    std::optional<RecalibrationParams> recal;
    if (recalibrate) {
      recal = holdout_recalibration(
          target_, config_.recalibration_holdout_folds, derive_seed(seed_, 41),
          [&](const Cohort& fit_part, const Cohort& held_out) {
            return Eigen::VectorXd(
                sigmoid(predict_log_odds(fit_gbt(fit_part.features, fit_part.labels, g),
                                         held_out.features)));
          });
    }
    auto model = std::make_shared<GbtModel>(fit_gbt(target_.features, target_.labels, g));
    Predictor base = [model](const Eigen::MatrixXd& x) {
      return Eigen::VectorXd(sigmoid(predict_log_odds(*model, x)));
    };
    return with_recalibration(std::move(base), recal);
  }

  const ExperimentConfig& config_;
  const Cohort& pool_;
  const Cohort& target_;
  std::uint64_t seed_;
  std::shared_ptr<SourceLearner> glm_source_;
  std::shared_ptr<SourceLearner> gbt_source_;
};

void emit(ResultTable& out, const std::string& unit, Method m, int index, std::string metric,
          std::string threshold, std::optional<double> value) {
  out.push_back(ResultRow{unit, std::string(method_name(m)), index, std::move(metric),
                          std::move(threshold), value});
}

void emit_threshold_free(ResultTable& out, const std::string& unit, Method m, int index,
                         const Eigen::VectorXd& probs, const Eigen::VectorXd& labels,
                         double ici_span) {
  const MetricReport r = evaluate_probabilities(probs, labels, ici_span);
  emit(out, unit, m, index, "auroc", "", r.auroc);
  emit(out, unit, m, index, "auprc", "", r.auprc);
  emit(out, unit, m, index, "brier", "", r.brier);
  emit(out, unit, m, index, "ici", "", r.ici);
}

void emit_thresholded(ResultTable& out, const std::string& unit, Method m, int index,
                      const ThresholdSpec& spec, double threshold, const Eigen::VectorXd& probs,
                      const Eigen::VectorXd& labels) {
  const ThresholdMetrics t = confusion_at(probs, labels, threshold);
  const std::string label = spec.label();
  emit(out, unit, m, index, "threshold_value", label, threshold);
  emit(out, unit, m, index, "sensitivity", label, t.sensitivity);
  emit(out, unit, m, index, "specificity", label, t.specificity);
  emit(out, unit, m, index, "balanced_accuracy", label, t.balanced_accuracy);
  emit(out, unit, m, index, "precision", label, t.precision);
  emit(out, unit, m, index, "f1", label, t.f1);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

json sim_config_json(const SimConfig& s) {
  return json{{"n_total", s.n_total},
              {"m_target", s.m_target},
              {"p", s.p},
              {"prevalence", s.prevalence},
              {"a", s.a},
              {"b", s.b},
              {"sigma_neg_block",
               {{s.sigma_neg_block(0, 0), s.sigma_neg_block(0, 1)},
                {s.sigma_neg_block(1, 0), s.sigma_neg_block(1, 1)}}},
              {"seed", s.seed},
              {"replicates", s.replicates},
              {"n_test", s.n_test},
              {"source_only", s.source_only}};
}

SimConfig sim_config_from(const json& j, std::uint64_t default_seed) {
  SimConfig s;
  s.seed = default_seed;
  s.n_total = j.value("n_total", s.n_total);
  s.m_target = j.value("m_target", s.m_target);
  s.p = j.value("p", s.p);
  s.prevalence = j.value("prevalence", s.prevalence);
  s.a = j.value("a", s.a);
  s.b = j.value("b", s.b);
  if (j.contains("sigma_neg_block")) {
    const auto m = j.at("sigma_neg_block").get<std::vector<std::vector<double>>>();
    if (m.size() != 2 || m[0].size() != 2 || m[1].size() != 2) {
      throw DataError("sigma_neg_block must be 2x2");
    }
    s.sigma_neg_block << m[0][0], m[0][1], m[1][0], m[1][1];
  }
  s.seed = j.value("seed", s.seed);
  s.replicates = j.value("replicates", s.replicates);
  s.n_test = j.value("n_test", s.n_test);
  s.source_only = j.value("source_only", s.source_only);
  s.validate();
  return s;
}

}  // namespace

std::string_view method_name(Method m) {
  for (const auto& [method, name] : kMethodNames) {
    if (method == m) return name;
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (const auto& [method, text] : kMethodNames) {
    if (text == name) return method;
  }
  throw DataError("unknown method '" + std::string(name) + "'");
}

std::vector<Method> parse_method_list(std::string_view comma_separated) {
  std::vector<Method> out;
  for (const auto& item : split_list(comma_separated)) out.push_back(parse_method(item));
  return out;
}

std::vector<ThresholdSpec> parse_threshold_list(std::string_view comma_separated) {
  std::vector<ThresholdSpec> out;
  for (const auto& item : split_list(comma_separated)) out.push_back(ThresholdSpec::parse(item));
  return out;
}

std::string format_value(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw DataError("at least one method is required");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (methods[i] == methods[j]) {
        throw DataError("method '" + std::string(method_name(methods[i])) + "' listed twice");
      }
    }
  }
  if (mode == ExperimentMode::CohortStudy && has_method(*this, Method::BayesOracle)) {
    throw DataError("BayesOracle is only available in simulation mode");
  }
  if (k_folds < 2) throw DataError("k_folds must be at least 2");
  if (jobs < 1) throw DataError("jobs must be at least 1");
  if (recalibration_holdout_folds < 2) throw DataError("recalibration holdout needs >= 2 parts");
  if (glm.cv_folds < 2 || glm.grid_points < 1) throw DataError("invalid GLM settings");
  gbt.validate();
  if (mode == ExperimentMode::Simulation) {
    if (scenarios.empty()) throw DataError("simulation needs at least one scenario");
    for (const auto& s : scenarios) s.validate();
  }
}

ExperimentConfig ExperimentConfig::simulation_defaults() {
  ExperimentConfig c;
  c.mode = ExperimentMode::Simulation;
  c.methods = {Method::BayesOracle, Method::SourceGlm, Method::SourceGbt, Method::TlGlm,
               Method::TlGbt};
  c.thresholds = parse_threshold_list("0.5,prevalence,youden");
  c.scenarios = scenario_grid();
  return c;
}

ExperimentConfig ExperimentConfig::cohort_defaults() {
  ExperimentConfig c;
  c.mode = ExperimentMode::CohortStudy;
  c.methods = {Method::SingleFeaturePooledGlm, Method::TargetOnlyGlm, Method::SourceGlm,
               Method::TlGlm, Method::TargetOnlyGbt, Method::SourceGbt, Method::TlGbt};
  c.thresholds = parse_threshold_list("0.5,prevalence,youden");
  return c;
}

ExperimentConfig config_from_json(const json& j) {
  const std::string mode = j.value("mode", std::string("simulation"));
  ExperimentConfig c;
  if (mode == "simulation") {
    c = ExperimentConfig::simulation_defaults();
  } else if (mode == "study") {
    c = ExperimentConfig::cohort_defaults();
  } else {
    throw DataError("mode must be 'simulation' or 'study'");
  }
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
  }
  if (j.contains("thresholds")) {
    c.thresholds.clear();
    for (const auto& t : j.at("thresholds")) {
      c.thresholds.push_back(t.is_number() ? ThresholdSpec{ThresholdKind::Fixed, t.get<double>()}
                                           : ThresholdSpec::parse(t.get<std::string>()));
    }
    for (const auto& t : c.thresholds) {
      if (t.kind == ThresholdKind::Fixed && !(t.fixed_value > 0.0 && t.fixed_value < 1.0)) {
        throw DataError("fixed thresholds must lie in (0, 1)");
      }
    }
  }
  c.k_folds = j.value("k_folds", c.k_folds);
  c.seed = j.value("seed", c.seed);
  c.jobs = j.value("jobs", c.jobs);
  if (j.contains("glm")) {
    const json& g = j.at("glm");
    c.glm.grid_points = g.value("grid_points", c.glm.grid_points);
    c.glm.grid_ratio = g.value("grid_ratio", c.glm.grid_ratio);
    c.glm.cv_folds = g.value("cv_folds", c.glm.cv_folds);
    c.glm.tolerance = g.value("tolerance", c.glm.tolerance);
    c.glm.max_outer = g.value("max_outer", c.glm.max_outer);
  }
  if (j.contains("gbt")) c.gbt = j.at("gbt").get<GbtConfig>();
  if (j.contains("adjustment")) {
    const std::string a = j.at("adjustment").get<std::string>();
    if (a == "main") {
      c.adjustment.mode = TransformMode::MainOnly;
    } else if (a == "main+interactions") {
      c.adjustment.mode = TransformMode::MainPlusInteractions;
    } else {
      throw DataError("adjustment must be 'main' or 'main+interactions'");
    }
  }
  c.recalibrate = j.value("recalibrate", c.recalibrate);
  c.recalibration_holdout_folds =
      j.value("recalibration_holdout_folds", c.recalibration_holdout_folds);
  c.ici_span = j.value("ici_span", c.ici_span);
  if (j.contains("input")) {
    const json& in = j.at("input");
    c.input_path = in.value("path", std::string());
    c.label_column = in.value("label_column", c.label_column);
    c.group_column = in.value("group_column", c.group_column);
  }
  c.single_feature = j.value("single_feature", c.single_feature);
  c.min_positives = j.value("min_positives", c.min_positives);
  if (j.contains("groups")) c.groups = j.at("groups").get<std::vector<std::string>>();
  if (j.contains("scenarios")) {
    c.scenarios.clear();
    for (const auto& s : j.at("scenarios")) c.scenarios.push_back(sim_config_from(s, c.seed));
  } else {
    for (auto& s : c.scenarios) s.seed = c.seed;
  }
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(std::string(method_name(m)));
  json thresholds = json::array();
  for (const auto& t : c.thresholds) thresholds.push_back(t.label());
  json scenarios = json::array();
  for (const auto& s : c.scenarios) scenarios.push_back(sim_config_json(s));
  json out{
      {"mode", c.mode == ExperimentMode::Simulation ? "simulation" : "study"},
      {"methods", methods},
      {"thresholds", thresholds},
      {"k_folds", c.k_folds},
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"glm",
       {{"grid_points", c.glm.grid_points},
        {"grid_ratio", c.glm.grid_ratio},
        {"cv_folds", c.glm.cv_folds},
        {"tolerance", c.glm.tolerance},
        {"max_outer", c.glm.max_outer}}},
      {"gbt", c.gbt},
      {"adjustment", c.adjustment.mode == TransformMode::MainOnly ? "main" : "main+interactions"},
      {"recalibrate", c.recalibrate},
      {"recalibration_holdout_folds", c.recalibration_holdout_folds},
      {"ici_span", c.ici_span},
      {"input",
       {{"path", c.input_path.string()},
        {"label_column", c.label_column},
        {"group_column", c.group_column}}},
      {"single_feature", c.single_feature},
      {"min_positives", c.min_positives},
      {"groups", c.groups},
      {"scenarios", scenarios},
      {"output_dir", c.output_dir.string()},
  };
  return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw DataError("config '" + path.string() + "': " + e.what());
  }
}

FoldAssignment group_folds(const GroupedDataset& data, std::size_t group_index,
                           const ExperimentConfig& config) {
  return stratified_kfold(data.cohorts.at(group_index), config.k_folds,
                          derive_seed(config.seed, 0x5EED, group_index));
}

FoldPartition fold_partition(const GroupedDataset& data, std::size_t group_index,
                             const FoldAssignment& folds, int test_fold) {
  FoldPartition part;
  Eigen::Index offset = 0;
  for (std::size_t g = 0; g < data.cohorts.size(); ++g) {
    const Eigen::Index m = data.cohorts[g].rows();
    if (g == group_index) {
      if (folds.fold.size() != static_cast<std::size_t>(m)) {
        throw DataError("fold assignment does not match group size");
      }
      for (Eigen::Index i = 0; i < m; ++i) {
        if (folds.fold[i] == test_fold) {
          part.test.push_back(offset + i);
        } else {
          part.target_train.push_back(offset + i);
          part.pool_train.push_back(offset + i);
        }
      }
    } else {
      for (Eigen::Index i = 0; i < m; ++i) part.pool_train.push_back(offset + i);
    }
    offset += m;
  }
  // Leakage guard.
  std::vector<Eigen::Index> sorted_pool = part.pool_train;
  std::sort(sorted_pool.begin(), sorted_pool.end());
  for (Eigen::Index id : part.test) {
    if (std::binary_search(sorted_pool.begin(), sorted_pool.end(), id)) {
      throw std::logic_error("test row " + std::to_string(id) + " leaked into training data");
    }
  }
  return part;
}

std::vector<StratificationReport> validate_dataset(const GroupedDataset& data,
                                                   const ExperimentConfig& config) {
  data.validate();
  std::vector<StratificationReport> out;
  const long needed = std::max<long>(config.k_folds, config.min_positives);
  for (const auto& c : data.cohorts) {
    StratificationReport r;
    r.group = c.group_id;
    r.rows = static_cast<long>(c.rows());
    r.positives = static_cast<long>(c.positives());
    const long negatives = r.rows - r.positives;
    if (r.positives < needed) {
      r.reason = "insufficient positive cases (" + std::to_string(r.positives) + " < " +
                 std::to_string(needed) + ")";
    } else if (negatives < config.k_folds) {
      r.reason = "insufficient negative cases (" + std::to_string(negatives) + " < " +
                 std::to_string(config.k_folds) + ")";
    } else {
      r.usable = true;
    }
    out.push_back(std::move(r));
  }
  return out;
}

ResultTable run_cohort_study(const ExperimentConfig& config, const GroupedDataset& data) {
  config.validate();
  if (config.mode != ExperimentMode::CohortStudy) {
    throw DataError("run_cohort_study needs a study-mode config");
  }
  const auto reports = validate_dataset(data, config);
  const Cohort all = data.pooled("all");

  struct Unit {
    std::size_t group;
    int fold;
    FoldAssignment folds;
  };
  std::vector<Unit> units;
  for (std::size_t g = 0; g < data.cohorts.size(); ++g) {
    const std::string& id = data.cohorts[g].group_id;
    if (!config.groups.empty() &&
        std::find(config.groups.begin(), config.groups.end(), id) == config.groups.end()) {
      continue;
    }
    if (!reports[g].usable) {
      log::warn("skipping group '" + id + "': " + reports[g].reason);
      continue;
    }
    const FoldAssignment folds = group_folds(data, g, config);
    for (int f = 0; f < config.k_folds; ++f) units.push_back({g, f, folds});
  }

  std::vector<ResultTable> per_unit(units.size());
  parallel_for(units.size(), config.jobs, [&](std::size_t u) {
    const Unit& unit = units[u];
    const std::string& group = data.cohorts[unit.group].group_id;
    const FoldPartition part = fold_partition(data, unit.group, unit.folds, unit.fold);
    Cohort pool = all.subset(part.pool_train);
    pool.group_id = "pool";
    Cohort train = all.subset(part.target_train);
    train.group_id = group;
    const Cohort test = all.subset(part.test);

    UnitModels models(config, pool, train, derive_seed(config.seed, unit.group, unit.fold));
    ResultTable& out = per_unit[u];
    for (Method m : config.methods) {
      log::info("group " + group + " fold " + std::to_string(unit.fold) + ": " +
                std::string(method_name(m)));
      const Predictor predictor = models.build(m, config.recalibrate);
      const Eigen::VectorXd test_probs = predictor(test.features);
      emit_threshold_free(out, group, m, unit.fold, test_probs, test.labels, config.ici_span);
      if (!config.thresholds.empty()) {
        const Eigen::VectorXd train_probs = predictor(train.features);
        for (const auto& spec : config.thresholds) {
          const double threshold = spec.resolve(train_probs, train.labels);
          emit_thresholded(out, group, m, unit.fold, spec, threshold, test_probs, test.labels);
        }
      }
    }
  });

  ResultTable results;
  for (auto& t : per_unit) {
    results.insert(results.end(), std::make_move_iterator(t.begin()),
                   std::make_move_iterator(t.end()));
  }
  return results;
}

ResultTable run_cohort_study(const ExperimentConfig& config) {
  if (config.input_path.empty()) throw DataError("study config needs input.path");
  return run_cohort_study(
      config, load_grouped_csv(config.input_path, config.label_column, config.group_column));
}

ResultTable run_simulation_study(const ExperimentConfig& config) {
  config.validate();
  if (config.mode != ExperimentMode::Simulation) {
    throw DataError("run_simulation_study needs a simulation-mode config");
  }
  struct Unit {
    std::size_t scenario;
    int replicate;
  };
  std::vector<Unit> units;
  for (std::size_t s = 0; s < config.scenarios.size(); ++s) {
    for (int r = 0; r < config.scenarios[s].replicates; ++r) units.push_back({s, r});
  }

  std::vector<ResultTable> per_unit(units.size());
  parallel_for(units.size(), config.jobs, [&](std::size_t u) {
    const Unit& unit = units[u];
    const SimConfig& sim = config.scenarios[unit.scenario];
    const std::string label = sim.label();
    try {
      const SimStudy study = generate_study(sim, unit.replicate);
      Cohort pool = sim.source_only ? study.source : study.grouped().pooled("pool");
      UnitModels models(config, pool, study.target,
                        derive_seed(config.seed, unit.scenario, unit.replicate));
      ResultTable& out = per_unit[u];
      for (Method m : config.methods) {
        Eigen::VectorXd probs;
        if (m == Method::BayesOracle) {
          probs = sigmoid(bayes_log_odds(study.test.features, sim, Domain::Target));
        } else {
          probs = models.build(m, false)(study.test.features);
        }
        emit(out, label, m, unit.replicate, "auroc", "", auroc(probs, study.test.labels));
        emit(out, label, m, unit.replicate, "auprc", "", auprc(probs, study.test.labels));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("scenario " + label + " replicate " +
                               std::to_string(unit.replicate) + " failed: " + e.what());
    }
  });

  ResultTable results;
  for (auto& t : per_unit) {
    results.insert(results.end(), std::make_move_iterator(t.begin()),
                   std::make_move_iterator(t.end()));
  }
  return results;
}

std::vector<SummaryRow> summarize(const ResultTable& results) {
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::map<Key, std::pair<std::vector<double>, long>> cells;
  for (const auto& r : results) {
    auto& cell = cells[Key{r.scenario_or_group, r.method, r.metric, r.threshold}];
    if (r.value) {
      cell.first.push_back(*r.value);
    } else {
      ++cell.second;
    }
  }
  std::vector<SummaryRow> out;
  for (auto& [key, cell] : cells) {
    SummaryRow row;
    std::tie(row.scenario_or_group, row.method, row.metric, row.threshold) = key;
    auto& values = cell.first;
    // Sorting makes the floating-point sums independent of input order.
    std::sort(values.begin(), values.end());
    row.count = static_cast<long>(values.size());
    row.absent_count = cell.second;
    if (!values.empty()) {
      double sum = 0.0;
      for (double v : values) sum += v;
      const double mean = sum / static_cast<double>(values.size());
      row.mean = mean;
      if (values.size() >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        row.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

void write_results_csv(const ResultTable& results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "scenario_or_group,method,replicate_or_fold,metric,threshold,value,absent_flag\n";
  for (const auto& r : results) {
    out << csv_field(r.scenario_or_group) << ',' << csv_field(r.method) << ','
        << r.replicate_or_fold << ',' << csv_field(r.metric) << ',' << csv_field(r.threshold)
        << ',' << (r.value ? format_value(*r.value) : std::string()) << ','
        << (r.value ? '0' : '1') << '\n';
  }
}

ResultTable read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "scenario_or_group,method,replicate_or_fold,metric,threshold,value,absent_flag") {
    throw DataError("'" + path.string() + "' is not a results CSV");
  }
  ResultTable out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = parse_csv_line(line);
    if (f.size() != 7) throw DataError("results row " + std::to_string(row) + " is malformed");
    ResultRow r;
    r.scenario_or_group = f[0];
    r.method = f[1];
    r.replicate_or_fold = std::stoi(f[2]);
    r.metric = f[3];
    r.threshold = f[4];
    if (f[6] == "0") {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f[5].data(), f[5].data() + f[5].size(), v);
      if (ec != std::errc() || ptr != f[5].data() + f[5].size()) {
        throw DataError("results row " + std::to_string(row) + " has a bad value");
      }
      r.value = v;
    } else if (f[6] != "1") {
      throw DataError("results row " + std::to_string(row) + " has a bad absent_flag");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_summary_csv(const std::vector<SummaryRow>& summary, std::ostream& out) {
  out << "scenario_or_group,method,metric,threshold,mean,sd,count,absent_count\n";
  for (const auto& r : summary) {
    out << csv_field(r.scenario_or_group) << ',' << csv_field(r.method) << ','
        << csv_field(r.metric) << ',' << csv_field(r.threshold) << ','
        << (r.mean ? format_value(*r.mean) : std::string()) << ','
        << (r.sd ? format_value(*r.sd) : std::string()) << ',' << r.count << ','
        << r.absent_count << '\n';
  }
}

void write_summary_csv(const std::vector<SummaryRow>& summary, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  write_summary_csv(summary, out);
}

void write_manifest(const ExperimentConfig& config, const ResultTable& results,
                    const std::filesystem::path& path) {
  json seeds = json::array();
  for (const auto& s : config.scenarios) seeds.push_back(s.seed);
  const json manifest{
      {"tool", "tlrisk"},
      {"tool_version", std::string(kToolVersion)},
      {"model_format_version", kModelFormatVersion},
      {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." +
                            std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
      {"config", config_to_json(config)},
      {"base_seed", config.seed},
      {"scenario_seeds", seeds},
      {"result_rows", results.size()},
      {"files", {"results.csv", "summary.csv"}},
  };
  write_text(path, manifest.dump(2) + "\n");
}

void write_run(const ExperimentConfig& config, const ResultTable& results) {
  std::filesystem::create_directories(config.output_dir);
  write_results_csv(results, config.output_dir / "results.csv");
  write_summary_csv(summarize(results), config.output_dir / "summary.csv");
  write_manifest(config, results, config.output_dir / "manifest.json");
}

}  // namespace tlrisk
