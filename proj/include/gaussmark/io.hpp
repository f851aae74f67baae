#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "gaussmark/kgw.hpp"
#include "gaussmark/rankreduce.hpp"
#include "gaussmark/watermark.hpp"

namespace gaussmark::io {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;

// Throws IoError when the file cannot be read or written, FormatError on bad JSON.
json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Stable 64-bit hash of a JSON value's canonical dump.
std::uint64_t json_hash(const json& j);
std::string hex64(std::uint64_t v);

// Throws FormatError unless j["version"] == 1.
void require_version(const json& j, const char* what);

// Model files: {"version": 1, "model": {...spec...}}; a bare spec is accepted on read.
json model_file(const LanguageModel& model);
ModelPtr model_from_json(const json& j);

// The parameter block a watermark perturbs, shaped as a matrix (1 x d for the linear model).
Matrix watermark_block(const LanguageModel& model);

// Key files:
//   {"version": 1, "d", "sigma", "master_seed", "stream_id",
//    "projector_spec": {"shape": [r, c], "dropped_top_k", "svd_seed_or_hash"}, "values": [...]}
// With "values" absent the key is redrawn from its stream.
json key_to_json(const WatermarkKey& key, bool include_values = true);
// Keys with a projector_spec need the model they were built from; the stored
// hash must match that model's watermark block.
WatermarkKey key_from_json(const json& j, const LanguageModel* model = nullptr);
// Fingerprint of the key values.
std::string key_fingerprint(const WatermarkKey& key);

// Draws a key for `model`; rank_drop > 0 removes the top directions of the watermark block.
WatermarkKey keygen(std::size_t d, double sigma, std::uint64_t master_seed, std::uint64_t stream_id,
                    const LanguageModel* model = nullptr, std::size_t rank_drop = 0);

json tokens_to_json(std::span<const Token> tokens);
Tokens tokens_from_json(const json& j);

json to_json(const DetectionReport& r);
json to_json(const RobustDetectionReport& r);
json to_json(const KgwTestResult& r);
json to_json(const KgwParams& p);
KgwParams kgw_params_from_json(const json& j);

}  // namespace gaussmark::io
