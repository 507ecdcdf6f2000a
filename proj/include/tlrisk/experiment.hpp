#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tlrisk/dataset.hpp"
#include "tlrisk/gbt.hpp"
#include "tlrisk/metrics.hpp"
#include "tlrisk/simgen.hpp"

namespace tlrisk {

enum class Method {
  SingleFeaturePooledGlm,
  TargetOnlyGlm,
  SourceGlm,
  TlGlm,
  TargetOnlyGbt,
  SourceGbt,
  TlGbt,
  BayesOracle,
};

std::string_view method_name(Method m);
Method parse_method(std::string_view name);
std::vector<Method> parse_method_list(std::string_view comma_separated);
std::vector<ThresholdSpec> parse_threshold_list(std::string_view comma_separated);

enum class ExperimentMode { Simulation, CohortStudy };

struct GlmSettings {
  int grid_points = 50;
  double grid_ratio = 1e-3;
  int cv_folds = 5;
  double tolerance = 1e-7;
  int max_outer = 10000;
};

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::Simulation;
  std::vector<Method> methods;
  std::vector<ThresholdSpec> thresholds;
  int k_folds = 3;
  std::uint64_t seed = 0;
  int jobs = 1;
  GlmSettings glm;
  GbtConfig gbt;
  TransformSpec adjustment{TransformMode::MainOnly};
  bool recalibrate = true;
  int recalibration_holdout_folds = 5;  // one part of five: an 80/20 split
  double ici_span = 0.75;

  // Cohort study
  std::filesystem::path input_path;
  std::string label_column = "y";
  std::string group_column = "group";
  std::string single_feature;       // empty: first feature column
  int min_positives = 0;            // groups below max(k_folds, this) are skipped
  std::vector<std::string> groups;  // empty: every group

  // Simulation
  std::vector<SimConfig> scenarios;

  std::filesystem::path output_dir = "results";

  void validate() const;

  static ExperimentConfig simulation_defaults();
  static ExperimentConfig cohort_defaults();
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ResultRow {
  std::string scenario_or_group;
  std::string method;
  int replicate_or_fold = 0;
  std::string metric;
  std::string threshold;        // empty for threshold-free metrics
  std::optional<double> value;  // absent, e.g. F1 with no predicted positives
};

using ResultTable = std::vector<ResultRow>;

/// Row ids are positions in `data.pooled()` order.
struct FoldPartition {
  std::vector<Eigen::Index> pool_train;    // every row outside the group's test fold
  std::vector<Eigen::Index> target_train;  // the group's training folds
  std::vector<Eigen::Index> test;          // the group's test fold
};

FoldPartition fold_partition(const GroupedDataset& data, std::size_t group_index,
                             const FoldAssignment& folds, int test_fold);

/// Seeded fold assignment used for group `group_index`.
FoldAssignment group_folds(const GroupedDataset& data, std::size_t group_index,
                           const ExperimentConfig& config);

/// Per group and fold: fit every method on training rows only, recalibrate,
/// resolve thresholds on the training fold, evaluate on the test fold.
ResultTable run_cohort_study(const ExperimentConfig& config, const GroupedDataset& data);
ResultTable run_cohort_study(const ExperimentConfig& config);

/// Per scenario and replicate: fit source and transfer learners, evaluate
/// AUROC and AUPRC on the independent target test set.
ResultTable run_simulation_study(const ExperimentConfig& config);

struct SummaryRow {
  std::string scenario_or_group;
  std::string method;
  std::string metric;
  std::string threshold;
  std::optional<double> mean;
  std::optional<double> sd;  // sample SD, n - 1 denominator
  long count = 0;            // present values
  long absent_count = 0;
};

/// Mean and sample SD per (scenario/group, method, metric, threshold) cell,
/// sorted by those keys.
std::vector<SummaryRow> summarize(const ResultTable& results);

struct StratificationReport {
  std::string group;
  long rows = 0;
  long positives = 0;
  bool usable = false;
  std::string reason;
};

std::vector<StratificationReport> validate_dataset(const GroupedDataset& data,
                                                   const ExperimentConfig& config);

void write_results_csv(const ResultTable& results, const std::filesystem::path& path);
ResultTable read_results_csv(const std::filesystem::path& path);
void write_summary_csv(const std::vector<SummaryRow>& summary, const std::filesystem::path& path);
void write_summary_csv(const std::vector<SummaryRow>& summary, std::ostream& out);
void write_manifest(const ExperimentConfig& config, const ResultTable& results,
                    const std::filesystem::path& path);

/// Writes results.csv, summary.csv and manifest.json into the output directory.
void write_run(const ExperimentConfig& config, const ResultTable& results);

std::string format_value(double v);

}  // namespace tlrisk
