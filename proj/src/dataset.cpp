#include "tlrisk/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "tlrisk/error.hpp"

namespace tlrisk {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
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

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_double(const std::string& text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::string quote_if_needed(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Eigen::Index Cohort::positives() const {
  return static_cast<Eigen::Index>((labels.array() == 1.0).count());
}

void Cohort::validate() const {
  if (features.rows() != labels.size()) {
    throw DataError("cohort '" + group_id + "': " + std::to_string(features.rows()) +
                    " feature rows but " + std::to_string(labels.size()) + " labels");
  }
  if (features.cols() < 1) throw DataError("cohort '" + group_id + "' has no feature columns");
  if (static_cast<Eigen::Index>(feature_names.size()) != features.cols()) {
    throw DataError("cohort '" + group_id + "': feature name count does not match width");
  }
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) != 0.0 && labels(i) != 1.0) {
      throw DataError("cohort '" + group_id + "': label at row " + std::to_string(i) +
                      " is not 0/1");
    }
  }
  if (!features.allFinite()) throw DataError("cohort '" + group_id + "' has non-finite features");
}

Cohort Cohort::subset(const std::vector<Eigen::Index>& rows) const {
  Cohort out;
  out.group_id = group_id;
  out.feature_names = feature_names;
  out.features = features(rows, Eigen::all);
  out.labels = labels(rows);
  return out;
}

Eigen::Index GroupedDataset::total_rows() const {
  Eigen::Index n = 0;
  for (const auto& c : cohorts) n += c.rows();
  return n;
}

const std::vector<std::string>& GroupedDataset::feature_names() const {
  if (cohorts.empty()) throw DataError("dataset has no groups");
  return cohorts.front().feature_names;
}

const Cohort& GroupedDataset::group(std::string_view id) const {
  for (const auto& c : cohorts) {
    if (c.group_id == id) return c;
  }
  throw DataError("unknown group '" + std::string(id) + "'");
}

Cohort GroupedDataset::pooled(std::string group_id) const {
  Cohort out;
  out.group_id = std::move(group_id);
  out.feature_names = feature_names();
  const Eigen::Index n = total_rows();
  const Eigen::Index p = cohorts.front().width();
  out.features.resize(n, p);
  out.labels.resize(n);
  Eigen::Index offset = 0;
  for (const auto& c : cohorts) {
    out.features.middleRows(offset, c.rows()) = c.features;
    out.labels.segment(offset, c.rows()) = c.labels;
    offset += c.rows();
  }
  return out;
}

void GroupedDataset::validate() const {
  if (cohorts.empty()) throw DataError("dataset has no groups");
  for (std::size_t k = 0; k < cohorts.size(); ++k) {
    cohorts[k].validate();
    if (cohorts[k].feature_names != cohorts.front().feature_names) {
      throw DataError("group '" + cohorts[k].group_id + "' does not share the feature schema");
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (cohorts[j].group_id == cohorts[k].group_id) {
        throw DataError("duplicate group id '" + cohorts[k].group_id + "'");
      }
    }
  }
}

GroupedDataset load_grouped_csv(const std::filesystem::path& path, std::string_view label_column,
                                std::string_view group_column) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw DataError("'" + path.string() + "' is empty");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  int label_idx = -1;
  int group_idx = -1;
  std::vector<int> feature_idx;
  std::vector<std::string> feature_names;
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    if (header[j] == label_column) {
      label_idx = j;
    } else if (header[j] == group_column) {
      group_idx = j;
    } else {
      feature_idx.push_back(j);
      feature_names.push_back(header[j]);
    }
  }
  if (label_idx < 0) throw DataError("missing label column '" + std::string(label_column) + "'");
  if (group_idx < 0) throw DataError("missing group column '" + std::string(group_column) + "'");
  if (feature_idx.empty()) throw DataError("no feature columns in '" + path.string() + "'");

  struct Pending {
    std::vector<double> values;
    std::vector<double> labels;
  };
  std::vector<std::string> order;
  std::map<std::string, Pending> pending;

  std::size_t row = 1;  // file line number; the header is line 1
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("line " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " cells, found " + std::to_string(cells.size()));
    }
    const std::string label = trim(cells[label_idx]);
    if (label != "0" && label != "1") {
      throw DataError("line " + std::to_string(row) + ": label value '" + label + "' is not 0/1");
    }
    const std::string group = trim(cells[group_idx]);
    auto [it, inserted] = pending.try_emplace(group);
    if (inserted) order.push_back(group);
    it->second.labels.push_back(label == "1" ? 1.0 : 0.0);
    for (std::size_t j = 0; j < feature_idx.size(); ++j) {
      double v = 0.0;
      const std::string cell = trim(cells[feature_idx[j]]);
      if (!parse_double(cell, v)) {
        throw DataError("line " + std::to_string(row) + ": column '" + feature_names[j] +
                        "' has non-numeric value '" + cell + "'");
      }
      it->second.values.push_back(v);
    }
  }
  if (order.empty()) throw DataError("'" + path.string() + "' has no data rows");

  GroupedDataset out;
  const auto p = static_cast<Eigen::Index>(feature_idx.size());
  for (const auto& g : order) {
    Pending& src = pending[g];
    Cohort c;
    c.group_id = g;
    c.feature_names = feature_names;
    const auto m = static_cast<Eigen::Index>(src.labels.size());
    c.features = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        src.values.data(), m, p);
    c.labels = Eigen::Map<Eigen::VectorXd>(src.labels.data(), m);
    out.cohorts.push_back(std::move(c));
  }
  out.validate();
  return out;
}

void write_grouped_csv(const GroupedDataset& data, const std::filesystem::path& path,
                       std::string_view label_column, std::string_view group_column) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << quote_if_needed(group_column) << ',' << quote_if_needed(label_column);
  for (const auto& name : data.feature_names()) out << ',' << quote_if_needed(name);
  out << '\n';
  for (const auto& c : data.cohorts) {
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      out << quote_if_needed(c.group_id) << ',' << (c.labels(i) == 1.0 ? '1' : '0');
      for (Eigen::Index j = 0; j < c.width(); ++j) out << ',' << format_double(c.features(i, j));
      out << '\n';
    }
  }
}

std::vector<Eigen::Index> FoldAssignment::test_rows(int f) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] == f) rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

std::vector<Eigen::Index> FoldAssignment::train_rows(int f) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] != f) rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

void FoldAssignment::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "row_index,fold\n";
  for (std::size_t i = 0; i < fold.size(); ++i) out << i << ',' << fold[i] << '\n';
}

FoldAssignment stratified_kfold(const Eigen::VectorXd& labels, int k_folds, std::uint64_t seed,
                                std::string_view name) {
  if (k_folds < 2) throw DataError("k_folds must be at least 2");
  std::vector<Eigen::Index> pos;
  std::vector<Eigen::Index> neg;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    (labels(i) == 1.0 ? pos : neg).push_back(i);
  }
  if (static_cast<int>(pos.size()) < k_folds) {
    throw DataError("'" + std::string(name) + "': insufficient positive cases (" +
                    std::to_string(pos.size()) + " positives, " + std::to_string(k_folds) +
                    " folds)");
  }
  if (static_cast<int>(neg.size()) < k_folds) {
    throw DataError("'" + std::string(name) + "': insufficient negative cases (" +
                    std::to_string(neg.size()) + " negatives, " + std::to_string(k_folds) +
                    " folds)");
  }

  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  FoldAssignment out;
  out.k_folds = k_folds;
  out.seed = seed;
  out.fold.assign(static_cast<std::size_t>(labels.size()), -1);
  std::size_t next = 0;
  for (Eigen::Index i : pos) out.fold[i] = static_cast<int>(next++ % k_folds);
  for (Eigen::Index i : neg) out.fold[i] = static_cast<int>(next++ % k_folds);
  return out;
}

FoldAssignment stratified_kfold(const Cohort& cohort, int k_folds, std::uint64_t seed) {
  return stratified_kfold(cohort.labels, k_folds, seed, cohort.group_id);
}

Eigen::Index expanded_width(Eigen::Index p, TransformMode mode) {
  return mode == TransformMode::MainOnly ? p : p + p * (p + 1) / 2;
}

Eigen::MatrixXd expand_features(const Eigen::MatrixXd& x, TransformSpec spec) {
  if (!x.allFinite()) throw DataError("expand_features: non-finite input");
  if (spec.mode == TransformMode::MainOnly) return x;
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd out(x.rows(), expanded_width(p, spec.mode));
  out.leftCols(p) = x;
  Eigen::Index col = p;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = i; j < p; ++j) {
      out.col(col++) = x.col(i).cwiseProduct(x.col(j));
    }
  }
  return out;
}

std::vector<std::string> expand_feature_names(const std::vector<std::string>& names,
                                              TransformSpec spec) {
  std::vector<std::string> out = names;
  if (spec.mode == TransformMode::MainOnly) return out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t j = i; j < names.size(); ++j) out.push_back(names[i] + ":" + names[j]);
  }
  return out;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw DataError("standardize: need at least 2 rows");
  Standardizer s;
  const double n = static_cast<double>(x.rows());
  s.mean = x.colwise().mean().transpose();
  s.scale.resize(x.cols());
  s.constant.assign(static_cast<std::size_t>(x.cols()), false);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - s.mean(j)).square().sum() / n;
    const double sd = std::sqrt(var);
    // Relative cutoff: columns that are constant up to rounding are flagged.
    const double magnitude = std::max(1.0, std::abs(s.mean(j)));
    if (!(sd > 1e-12 * magnitude)) {
      s.scale(j) = 1.0;
      s.constant[j] = true;
    } else {
      s.scale(j) = sd;
    }
  }
  return s;
}

Standardizer Standardizer::identity(Eigen::Index width) {
  Standardizer s;
  s.mean = Eigen::VectorXd::Zero(width);
  s.scale = Eigen::VectorXd::Ones(width);
  s.constant.assign(static_cast<std::size_t>(width), false);
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  if (x.cols() != width()) {
    throw DataError("standardizer width " + std::to_string(width()) + " but input has " +
                    std::to_string(x.cols()) + " columns");
  }
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    out.col(j) = (x.col(j).array() - mean(j)) / scale(j);
  }
  return out;
}

Standardized standardize(const Eigen::MatrixXd& x_train) {
  Standardized out;
  out.standardizer = Standardizer::fit(x_train);
  out.matrix = out.standardizer.apply(x_train);
  return out;
}

DesignMap DesignMap::fit(const Eigen::MatrixXd& x_raw, TransformSpec spec) {
  DesignMap d;
  d.spec = spec;
  d.raw = Standardizer::fit(x_raw);
  d.expanded = Standardizer::fit(expand_features(d.raw.apply(x_raw), spec));
  return d;
}

Eigen::MatrixXd DesignMap::apply(const Eigen::MatrixXd& x_raw) const {
  return expanded.apply(expand_features(raw.apply(x_raw), spec));
}

}  // namespace tlrisk
