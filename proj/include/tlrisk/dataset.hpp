#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tlrisk {

/// One domain (diagnosis group): features, 0/1 labels and group identity.
struct Cohort {
  std::string group_id;
  Eigen::MatrixXd features;
  Eigen::VectorXd labels;
  std::vector<std::string> feature_names;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index width() const { return features.cols(); }
  Eigen::Index positives() const;

  /// Throws DataError when the shape, label or finiteness invariants fail.
  void validate() const;

  /// Rows selected by index, in the given order.
  Cohort subset(const std::vector<Eigen::Index>& rows) const;
};

struct GroupedDataset {
  std::vector<Cohort> cohorts;

  std::size_t groups() const { return cohorts.size(); }
  Eigen::Index total_rows() const;
  const std::vector<std::string>& feature_names() const;
  const Cohort& group(std::string_view id) const;

  /// All cohorts stacked in order, tagged with `group_id`.
  Cohort pooled(std::string group_id = "pooled") const;

  void validate() const;
};

/// Reads a comma-separated file with a header row. One cohort per distinct
/// group value, in order of first appearance; rows keep file order.
GroupedDataset load_grouped_csv(const std::filesystem::path& path, std::string_view label_column,
                                std::string_view group_column);

void write_grouped_csv(const GroupedDataset& data, const std::filesystem::path& path,
                       std::string_view label_column = "y", std::string_view group_column = "group");

struct FoldAssignment {
  std::vector<int> fold;
  int k_folds = 0;
  std::uint64_t seed = 0;

  std::vector<Eigen::Index> test_rows(int f) const;
  std::vector<Eigen::Index> train_rows(int f) const;

  /// `row_index,fold` lines with a header.
  void write_csv(const std::filesystem::path& path) const;
};

/// Shuffles each label stratum with a seeded generator and deals rows round
/// robin into folds. Dealing of the negative stratum continues where the
/// positive stratum stopped so total fold sizes stay balanced.
FoldAssignment stratified_kfold(const Eigen::VectorXd& labels, int k_folds, std::uint64_t seed,
                                std::string_view name = "data");
FoldAssignment stratified_kfold(const Cohort& cohort, int k_folds, std::uint64_t seed);

enum class TransformMode { MainOnly, MainPlusInteractions };

struct TransformSpec {
  TransformMode mode = TransformMode::MainOnly;
};

Eigen::Index expanded_width(Eigen::Index p, TransformMode mode);

/// Main effects, optionally followed by every product x_i * x_j with i <= j in
/// lexicographic order.
Eigen::MatrixXd expand_features(const Eigen::MatrixXd& x, TransformSpec spec);
std::vector<std::string> expand_feature_names(const std::vector<std::string>& names,
                                              TransformSpec spec);

/// Column centring and scaling with population statistics of the fit matrix.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;       // 1 for constant columns
  std::vector<bool> constant;  // zero-variance flag per column

  static Standardizer fit(const Eigen::MatrixXd& x);
  static Standardizer identity(Eigen::Index width);

  Eigen::Index width() const { return mean.size(); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

struct Standardized {
  Standardizer standardizer;
  Eigen::MatrixXd matrix;
};

Standardized standardize(const Eigen::MatrixXd& x_train);

/// Raw features to penalized design: standardize raw columns, expand, then
/// standardize the expanded columns.
struct DesignMap {
  TransformSpec spec;
  Standardizer raw;
  Standardizer expanded;

  static DesignMap fit(const Eigen::MatrixXd& x_raw, TransformSpec spec);

  Eigen::Index input_width() const { return raw.width(); }
  Eigen::Index output_width() const { return expanded.width(); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x_raw) const;
};

}  // namespace tlrisk
