#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "tlrisk/gbt.hpp"
#include "tlrisk/glm.hpp"
#include "tlrisk/transfer.hpp"

namespace tlrisk {

// Versioned JSON documents. Doubles are written in shortest round-trip form,
// so loading a document reproduces predictions bit for bit.

inline constexpr int kModelFormatVersion = 1;

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);
void to_json(nlohmann::json& j, const DesignMap& d);
void from_json(const nlohmann::json& j, DesignMap& d);
void to_json(nlohmann::json& j, const GlmFit& fit);
void from_json(const nlohmann::json& j, GlmFit& fit);
void to_json(nlohmann::json& j, const GbtConfig& c);
void from_json(const nlohmann::json& j, GbtConfig& c);
void to_json(nlohmann::json& j, const GbtModel& m);
void from_json(const nlohmann::json& j, GbtModel& m);
void to_json(nlohmann::json& j, const RecalibrationParams& r);
void from_json(const nlohmann::json& j, RecalibrationParams& r);
void to_json(nlohmann::json& j, const SourceLearner& s);
void from_json(const nlohmann::json& j, SourceLearner& s);
void to_json(nlohmann::json& j, const TransferModel& m);
void from_json(const nlohmann::json& j, TransferModel& m);

/// Wraps a payload with its kind and format version.
nlohmann::json make_document(std::string_view kind, nlohmann::json payload);
/// Checks kind and version and returns the payload.
const nlohmann::json& open_document(const nlohmann::json& doc, std::string_view kind);

std::string serialize(const GlmFit& fit);
std::string serialize(const GbtModel& model);
std::string serialize(const TransferModel& model);

GlmFit deserialize_glm(const std::string& text);
GbtModel deserialize_gbt(const std::string& text);
TransferModel deserialize_transfer(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace tlrisk
