#include "tlrisk/serialization.hpp"

#include <fstream>
#include <sstream>

#include "tlrisk/error.hpp"

namespace tlrisk {
namespace {

using nlohmann::json;

json vector_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string mode_name(TransformMode mode) {
  return mode == TransformMode::MainOnly ? "main" : "main+interactions";
}

TransformMode mode_from(const std::string& s) {
  if (s == "main") return TransformMode::MainOnly;
  if (s == "main+interactions") return TransformMode::MainPlusInteractions;
  throw DataError("unknown transform mode '" + s + "'");
}

}  // namespace

void to_json(json& j, const Standardizer& s) {
  j = json{{"mean", vector_json(s.mean)},
           {"scale", vector_json(s.scale)},
           {"constant", std::vector<bool>(s.constant.begin(), s.constant.end())}};
}

void from_json(const json& j, Standardizer& s) {
  s.mean = vector_from(j.at("mean"));
  s.scale = vector_from(j.at("scale"));
  s.constant = j.at("constant").get<std::vector<bool>>();
  if (s.scale.size() != s.mean.size() ||
      s.constant.size() != static_cast<std::size_t>(s.mean.size())) {
    throw DataError("standardizer arrays differ in length");
  }
}

void to_json(json& j, const DesignMap& d) {
  j = json{{"transform", mode_name(d.spec.mode)}, {"raw", d.raw}, {"expanded", d.expanded}};
}

void from_json(const json& j, DesignMap& d) {
  d.spec.mode = mode_from(j.at("transform").get<std::string>());
  d.raw = j.at("raw").get<Standardizer>();
  d.expanded = j.at("expanded").get<Standardizer>();
  if (expanded_width(d.raw.width(), d.spec.mode) != d.expanded.width()) {
    throw DataError("design map widths are inconsistent");
  }
}

void to_json(json& j, const GlmFit& fit) {
  j = json{{"design", fit.design},
           {"column_names", fit.column_names},
           {"intercept", fit.intercept},
           {"coefficients", vector_json(fit.coefficients)},
           {"lambda", fit.lambda},
           {"converged", fit.converged},
           {"n_iterations", fit.n_iterations}};
}

void from_json(const json& j, GlmFit& fit) {
  fit.design = j.at("design").get<DesignMap>();
  fit.column_names = j.at("column_names").get<std::vector<std::string>>();
  fit.intercept = j.at("intercept").get<double>();
  fit.coefficients = vector_from(j.at("coefficients"));
  fit.lambda = j.at("lambda").get<double>();
  fit.converged = j.at("converged").get<bool>();
  fit.n_iterations = j.at("n_iterations").get<int>();
  if (fit.coefficients.size() != fit.design.output_width()) {
    throw DataError("coefficient count does not match design width");
  }
}

void to_json(json& j, const GbtConfig& c) {
  j = json{{"n_trees", c.n_trees},
           {"max_depth", c.max_depth},
           {"learning_rate", c.learning_rate},
           {"min_child_weight", c.min_child_weight},
           {"l2_leaf_penalty", c.l2_leaf_penalty},
           {"subsample_rows", c.subsample_rows},
           {"seed", c.seed}};
}

void from_json(const json& j, GbtConfig& c) {
  GbtConfig d;
  c.n_trees = j.value("n_trees", d.n_trees);
  c.max_depth = j.value("max_depth", d.max_depth);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.min_child_weight = j.value("min_child_weight", d.min_child_weight);
  c.l2_leaf_penalty = j.value("l2_leaf_penalty", d.l2_leaf_penalty);
  c.subsample_rows = j.value("subsample_rows", d.subsample_rows);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

void to_json(json& j, const GbtModel& m) {
  json trees = json::array();
  for (const auto& tree : m.trees) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold, value, gain;
    for (const auto& node : tree.nodes) {
      feature.push_back(node.feature);
      left.push_back(node.left);
      right.push_back(node.right);
      threshold.push_back(node.threshold);
      value.push_back(node.value);
      gain.push_back(node.gain);
    }
    trees.push_back(json{{"feature", feature},
                         {"threshold", threshold},
                         {"left", left},
                         {"right", right},
                         {"value", value},
                         {"gain", gain}});
  }
  j = json{{"base_score", m.base_score},
           {"n_features", m.n_features},
           {"config", m.config},
           {"train_loss_trace", m.train_loss_trace},
           {"trees", trees}};
}

void from_json(const json& j, GbtModel& m) {
  m.base_score = j.at("base_score").get<double>();
  m.n_features = j.at("n_features").get<Eigen::Index>();
  m.config = j.at("config").get<GbtConfig>();
  m.train_loss_trace = j.at("train_loss_trace").get<std::vector<double>>();
  m.trees.clear();
  for (const auto& t : j.at("trees")) {
    const auto feature = t.at("feature").get<std::vector<int>>();
    const auto left = t.at("left").get<std::vector<int>>();
    const auto right = t.at("right").get<std::vector<int>>();
    const auto threshold = t.at("threshold").get<std::vector<double>>();
    const auto value = t.at("value").get<std::vector<double>>();
    const auto gain = t.at("gain").get<std::vector<double>>();
    const std::size_t size = feature.size();
    if (left.size() != size || right.size() != size || threshold.size() != size ||
        value.size() != size || gain.size() != size || size == 0) {
      throw DataError("malformed tree arrays");
    }
    RegressionTree tree;
    for (std::size_t k = 0; k < size; ++k) {
      TreeNode node{feature[k], threshold[k], left[k], right[k], value[k], gain[k]};
      if (node.feature >= 0) {
        const auto bound = static_cast<int>(size);
        if (node.feature >= m.n_features || node.left <= static_cast<int>(k) ||
            node.right <= static_cast<int>(k) || node.left >= bound || node.right >= bound) {
          throw DataError("malformed tree node");
        }
      }
      tree.nodes.push_back(node);
    }
    m.trees.push_back(std::move(tree));
  }
}

void to_json(json& j, const RecalibrationParams& r) { j = json{{"a", r.a}, {"b", r.b}}; }

void from_json(const json& j, RecalibrationParams& r) {
  r.a = j.at("a").get<double>();
  r.b = j.at("b").get<double>();
}

void to_json(json& j, const SourceLearner& s) {
  j = json{{"n_train", s.n_train}, {"prevalence", s.prevalence}};
  if (const auto* glm = std::get_if<GlmFit>(&s.model)) {
    j["kind"] = "glm";
    j["model"] = *glm;
  } else {
    j["kind"] = "gbt";
    j["model"] = std::get<GbtModel>(s.model);
  }
}

void from_json(const json& j, SourceLearner& s) {
  s.n_train = j.at("n_train").get<Eigen::Index>();
  s.prevalence = j.at("prevalence").get<double>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "glm") {
    s.kind = SourceKind::PenalizedGlm;
    s.model = j.at("model").get<GlmFit>();
  } else if (kind == "gbt") {
    s.kind = SourceKind::Gbt;
    s.model = j.at("model").get<GbtModel>();
  } else {
    throw DataError("unknown source kind '" + kind + "'");
  }
}

void to_json(json& j, const TransferModel& m) {
  json groups = json::object();
  for (const auto& [id, g] : m.groups) {
    json entry{{"delta", g.delta}};
    entry["recalibration"] = g.recalibration ? json(*g.recalibration) : json(nullptr);
    groups[id] = std::move(entry);
  }
  j = json{{"source", m.source}, {"groups", groups}, {"fallback_to_source", m.fallback_to_source}};
  j["source_recalibration"] =
      m.source_recalibration ? json(*m.source_recalibration) : json(nullptr);
}

void from_json(const json& j, TransferModel& m) {
  m.source = j.at("source").get<SourceLearner>();
  m.fallback_to_source = j.at("fallback_to_source").get<bool>();
  m.groups.clear();
  for (const auto& [id, entry] : j.at("groups").items()) {
    GroupAdjustment g;
    g.delta = entry.at("delta").get<GlmFit>();
    if (!entry.at("recalibration").is_null()) {
      g.recalibration = entry.at("recalibration").get<RecalibrationParams>();
    }
    if (g.delta.design.input_width() != m.source.input_width()) {
      throw DataError("group '" + id + "' adjustment width does not match the source");
    }
    m.groups.emplace(id, std::move(g));
  }
  m.source_recalibration.reset();
  if (!j.at("source_recalibration").is_null()) {
    m.source_recalibration = j.at("source_recalibration").get<RecalibrationParams>();
  }
}

json make_document(std::string_view kind, json payload) {
  return json{{"format", "tlrisk." + std::string(kind)},
              {"format_version", kModelFormatVersion},
              {"payload", std::move(payload)}};
}

const json& open_document(const json& doc, std::string_view kind) {
  const std::string expected = "tlrisk." + std::string(kind);
  if (!doc.contains("format") || doc.at("format") != expected) {
    throw DataError("expected a '" + expected + "' document");
  }
  const int version = doc.at("format_version").get<int>();
  if (version != kModelFormatVersion) {
    throw DataError("unsupported format_version " + std::to_string(version));
  }
  return doc.at("payload");
}

std::string serialize(const GlmFit& fit) { return make_document("glm", fit).dump(2); }
std::string serialize(const GbtModel& model) { return make_document("gbt", model).dump(2); }
std::string serialize(const TransferModel& model) {
  return make_document("transfer", model).dump(2);
}

namespace {

template <typename T>
T load_document(const std::string& text, std::string_view kind) {
  try {
    return open_document(json::parse(text), kind).get<T>();
  } catch (const json::exception& e) {
    throw DataError("malformed '" + std::string(kind) + "' document: " + e.what());
  }
}

}  // namespace

GlmFit deserialize_glm(const std::string& text) { return load_document<GlmFit>(text, "glm"); }

GbtModel deserialize_gbt(const std::string& text) { return load_document<GbtModel>(text, "gbt"); }

TransferModel deserialize_transfer(const std::string& text) {
  return load_document<TransferModel>(text, "transfer");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace tlrisk
