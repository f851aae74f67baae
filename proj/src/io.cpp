#include "gaussmark/io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gaussmark::io {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json_file(const std::filesystem::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

std::uint64_t json_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) h = (h ^ c) * 0x100000001b3ULL;
  return mix64(h);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::uint64_t parse_hex64(const std::string& s) {
  if (s.empty() || s.size() > 16) throw FormatError("bad 64-bit hex value '" + s + "'");
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw FormatError("bad 64-bit hex value '" + s + "'");
  return v;
}

template <typename T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) throw FormatError(std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad field '") + name + "': " + e.what());
  }
}

}  // namespace

void require_version(const json& j, const char* what) {
  if (!j.is_object()) throw FormatError(std::string(what) + ": expected a JSON object");
  if (!j.contains("version") || j["version"] != kFormatVersion)
    throw FormatError(std::string(what) + ": unsupported or missing \"version\" (expected 1)");
}

json model_file(const LanguageModel& model) { return {{"version", kFormatVersion}, {"model", model.spec()}}; }

ModelPtr model_from_json(const json& j) {
  if (j.is_object() && j.contains("model")) {
    require_version(j, "model file");
    return make_model(j["model"]);
  }
  return make_model(j);
}

Matrix watermark_block(const LanguageModel& model) {
  if (const auto* mlp = dynamic_cast<const MlpSoftmaxLM*>(&model)) return mlp->hidden_weights();
  Matrix m(1, model.param_dim());
  std::copy(model.params().begin(), model.params().end(), m.data().begin());
  return m;
}

json key_to_json(const WatermarkKey& key, bool include_values) {
  json j{{"version", kFormatVersion},
         {"d", key.dim()},
         {"sigma", key.sigma},
         {"master_seed", key.master_seed},
         {"stream_id", key.stream_id}};
  if (key.projector) {
    j["projector_spec"] = {{"shape", {key.projector->rows(), key.projector->cols()}},
                           {"dropped_top_k", key.projector->dropped_top_k()},
                           {"svd_seed_or_hash", hex64(key.projector->source_hash())}};
  }
  if (include_values) j["values"] = key.xi;
  return j;
}

WatermarkKey key_from_json(const json& j, const LanguageModel* model) {
  require_version(j, "key");
  const auto d = field<std::size_t>(j, "d");
  const auto sigma = field<double>(j, "sigma");
  const auto master = field<std::uint64_t>(j, "master_seed");
  const auto stream = field<std::uint64_t>(j, "stream_id");

  std::shared_ptr<const SubspaceProjector> projector;
  if (j.contains("projector_spec")) {
    const json& spec = j["projector_spec"];
    if (!model) throw InvalidInput("key has a projector_spec; the model it was built from is required");
    const Matrix block = watermark_block(*model);
    const auto shape = field<std::vector<std::size_t>>(spec, "shape");
    if (shape.size() != 2 || shape[0] != block.rows() || shape[1] != block.cols())
      throw DimensionError("projector_spec shape does not match the model's watermark block");
    if (parse_hex64(field<std::string>(spec, "svd_seed_or_hash")) != matrix_hash(block))
      throw InvalidInput("projector_spec hash does not match the model's watermark block");
    projector = std::make_shared<const SubspaceProjector>(
        bottom_subspace_projector(block, field<std::size_t>(spec, "dropped_top_k")));
  }

  WatermarkKey key;
  if (j.contains("values")) {
    key = key_from_values(field<Vec>(j, "values"), sigma);
    if (key.dim() != d) throw DimensionError("key values length differs from \"d\"");
    key.master_seed = master;
    key.stream_id = stream;
    key.projector = std::move(projector);
  } else if (projector) {
    RngStream rng(master, stream);
    key = rank_reduced_key(watermark_block(*model), projector->dropped_top_k(), sigma, rng);
  } else {
    key = make_key(d, sigma, master, stream);
  }
  if (model && key.dim() != model->param_dim()) throw DimensionError("key dimension differs from the model's");
  return key;
}

std::string key_fingerprint(const WatermarkKey& key) {
  std::uint64_t h = hash_combine(mix64(key.dim()), std::bit_cast<std::uint64_t>(key.sigma));
  for (double x : key.xi) h = hash_combine(h, std::bit_cast<std::uint64_t>(x));
  return hex64(h);
}

WatermarkKey keygen(std::size_t d, double sigma, std::uint64_t master_seed, std::uint64_t stream_id,
                    const LanguageModel* model, std::size_t rank_drop) {
  if (rank_drop > 0) {
    if (!model) throw InvalidInput("rank reduction needs a model");
    RngStream rng(master_seed, stream_id);
    return rank_reduced_key(watermark_block(*model), rank_drop, sigma, rng);
  }
  if (model) d = model->param_dim();
  if (d == 0) throw InvalidDimension("key dimension must be positive");
  return make_key(d, sigma, master_seed, stream_id);
}

json tokens_to_json(std::span<const Token> tokens) { return json(std::vector<Token>(tokens.begin(), tokens.end())); }

Tokens tokens_from_json(const json& j) {
  const json& arr = j.is_object() ? (j.contains("tokens") ? j["tokens"] : j.value("response", json::array())) : j;
  try {
    return arr.get<Tokens>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad token list: ") + e.what());
  }
}

json to_json(const DetectionReport& r) {
  return {{"psi", r.psi},
          {"grad_norm", r.grad_norm},
          {"p_value", r.p_value},
          {"alpha", r.alpha},
          {"tau_alpha", r.tau_alpha},
          {"decision", to_string(r.decision)},
          {"null_gradient", r.null_gradient}};
}

json to_json(const RobustDetectionReport& r) {
  return {{"gammas", r.gammas},
          {"null_gradients", r.null_gradients},
          {"lambda_prime", r.lambda_prime},
          {"token_level_alpha", r.token_level_alpha},
          {"threshold", r.threshold},
          {"statistic", r.statistic},
          {"decision", to_string(r.decision)}};
}

json to_json(const KgwTestResult& r) {
  return {{"green_count", r.green_count},
          {"length", r.length},
          {"gamma_effective", r.gamma_effective},
          {"z", r.z},
          {"p_value", r.p_value}};
}

json to_json(const KgwParams& p) {
  return {{"gamma", p.gamma}, {"delta", p.delta}, {"context_width", p.context_width}, {"hash_seed", p.hash_seed}};
}

KgwParams kgw_params_from_json(const json& j) {
  KgwParams p;
  p.gamma = j.value("gamma", p.gamma);
  p.delta = j.value("delta", p.delta);
  p.context_width = j.value("context_width", p.context_width);
  p.hash_seed = j.value("hash_seed", p.hash_seed);
  validate(p);
  return p;
}

}  // namespace gaussmark::io
