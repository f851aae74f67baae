#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>

#include "gaussmark/attacks.hpp"
#include "gaussmark/experiment.hpp"
#include "gaussmark/io.hpp"
#include "gaussmark/kgw.hpp"
#include "gaussmark/watermark.hpp"

using namespace gaussmark;
using nlohmann::json;

namespace {

constexpr int kUsageError = 2;

Tokens parse_token_list(const std::string& s) {
  Tokens out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(item, &used);
    } catch (const std::exception&) {
      throw FormatError("bad token '" + item + "'");
    }
    if (used != item.size() || v < 0) throw FormatError("bad token '" + item + "'");
    out.push_back(static_cast<Token>(v));
  }
  return out;
}

void emit(const json& j, const std::string& out_path) {
  if (out_path.empty())
    std::cout << j.dump(2) << '\n';
  else
    io::write_json_file(out_path, j);
}

// Response and prompt from --input (a token list or a generate/attack output) and --tokens/--prompt.
struct TextInput {
  Tokens prompt;
  Tokens response;
};

TextInput read_text(const std::string& input_path, const std::string& tokens, const std::string& prompt) {
  TextInput t;
  if (!input_path.empty()) {
    const json j = io::read_json_file(input_path);
    t.response = io::tokens_from_json(j);
    if (j.is_object() && j.contains("prompt")) t.prompt = j["prompt"].get<Tokens>();
  }
  if (!tokens.empty()) t.response = parse_token_list(tokens);
  if (!prompt.empty()) t.prompt = parse_token_list(prompt);
  if (input_path.empty() && tokens.empty()) throw InvalidInput("give --input or --tokens");
  return t;
}

ModelPtr load_model(const std::string& path) { return io::model_from_json(io::read_json_file(path)); }

struct KgwFlags {
  double gamma = 0.25;
  double delta = 1.0;
  int context_width = 1;
  std::uint64_t hash_seed = 0;

  void add(CLI::App* app) {
    app->add_option("--gamma", gamma, "Green-list fraction");
    app->add_option("--delta", delta, "Logit bonus for green tokens");
    app->add_option("--context-width", context_width, "Tokens hashed to seed the green list");
    app->add_option("--hash-seed", hash_seed, "Secret hash seed");
  }
  KgwParams params() const {
    KgwParams p{gamma, delta, context_width, hash_seed};
    validate(p);
    return p;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GaussMark watermarking lab: Gaussian parameter watermarks for toy language models"};
  app.require_subcommand(1);
  std::string out_path;

  // keygen
  auto* keygen = app.add_subcommand("keygen", "Draw a watermark key and write it as JSON");
  std::size_t d = 0, rank_drop = 0;
  std::optional<double> sigma, sigma2;
  std::uint64_t seed = 0, stream = 0;
  std::string model_path;
  bool no_values = false;
  keygen->add_option("--d", d, "Key dimension (taken from --model when given)");
  auto* sigma_opt = keygen->add_option("--sigma", sigma, "Key standard deviation");
  keygen->add_option("--sigma2", sigma2, "Key variance (alternative to --sigma)")->excludes(sigma_opt);
  keygen->add_option("--seed", seed, "Master seed");
  keygen->add_option("--stream", stream, "Stream id");
  keygen->add_option("--model", model_path, "Model file the key is for");
  keygen->add_option("--rank-drop", rank_drop, "Remove the top-k singular directions of the watermark block");
  keygen->add_flag("--no-values", no_values, "Store only the seed; values are redrawn on load");
  keygen->add_option("-o,--out", out_path, "Output file (default: standard output)");

  // generate
  auto* generate_cmd = app.add_subcommand("generate", "Sample a watermarked response");
  std::string key_path, prompt_str, tokens_str, input_path;
  std::size_t length = 32;
  bool robust = false;
  for (auto* c : {generate_cmd}) {
    c->add_option("--model", model_path, "Model file")->required();
    c->add_option("--key", key_path, "Key file")->required();
    c->add_option("--prompt", prompt_str, "Comma-separated prompt tokens");
    c->add_option("--length", length, "Response length");
    c->add_option("--seed", seed, "Sampling seed");
    c->add_option("--stream", stream, "Sampling stream id");
    c->add_flag("--robust", robust, "Fresh key per token, derived from the key's stream");
    c->add_option("-o,--out", out_path, "Output file (default: standard output)");
  }

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "Test a response for the watermark");
  double alpha = 0.05, alpha0 = 0.05, lambda_prime = 0.5;
  detect_cmd->add_option("--model", model_path, "Model file")->required();
  detect_cmd->add_option("--key", key_path, "Key file")->required();
  detect_cmd->add_option("--input", input_path, "Token list or generate output (JSON)");
  detect_cmd->add_option("--tokens", tokens_str, "Comma-separated response tokens");
  detect_cmd->add_option("--prompt", prompt_str, "Comma-separated prompt tokens");
  detect_cmd->add_option("--alpha", alpha, "Significance level");
  detect_cmd->add_flag("--robust", robust, "Per-token quantile detector for --robust generations");
  detect_cmd->add_option("--alpha0", alpha0, "Token-level level of the robust detector");
  detect_cmd->add_option("--lambda-prime", lambda_prime, "Quantile of the robust detector");
  detect_cmd->add_option("-o,--out", out_path, "Output file (default: standard output)");

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "Corrupt a response with insertions, deletions or substitutions");
  std::string kind = "substitute", locus = "random";
  double fraction = 0.0;
  int vocab = 0;
  attack_cmd->add_option("--input", input_path, "Token list or generate output (JSON)");
  attack_cmd->add_option("--tokens", tokens_str, "Comma-separated response tokens");
  attack_cmd->add_option("--kind", kind, "insert | delete | substitute");
  attack_cmd->add_option("--locus", locus, "random | prefix");
  attack_cmd->add_option("--fraction", fraction, "Fraction of the response to edit");
  attack_cmd->add_option("--vocab", vocab, "Vocabulary size (or give --model)");
  attack_cmd->add_option("--model", model_path, "Model file for the vocabulary size");
  attack_cmd->add_option("--seed", seed, "Seed");
  attack_cmd->add_option("--stream", stream, "Stream id");
  attack_cmd->add_option("-o,--out", out_path, "Output file (default: standard output)");

  // kgw-generate / kgw-detect
  KgwFlags kgw;
  auto* kgw_gen = app.add_subcommand("kgw-generate", "Sample with the green-list watermark");
  kgw_gen->add_option("--model", model_path, "Model file")->required();
  kgw_gen->add_option("--prompt", prompt_str, "Comma-separated prompt tokens");
  kgw_gen->add_option("--length", length, "Response length");
  kgw_gen->add_option("--seed", seed, "Sampling seed");
  kgw_gen->add_option("--stream", stream, "Sampling stream id");
  kgw.add(kgw_gen);
  kgw_gen->add_option("-o,--out", out_path, "Output file (default: standard output)");

  auto* kgw_det = app.add_subcommand("kgw-detect", "Green-token z-test");
  kgw_det->add_option("--input", input_path, "Token list or kgw-generate output (JSON)");
  kgw_det->add_option("--tokens", tokens_str, "Comma-separated response tokens");
  kgw_det->add_option("--prompt", prompt_str, "Comma-separated prompt tokens");
  kgw_det->add_option("--vocab", vocab, "Vocabulary size (or give --model)");
  kgw_det->add_option("--model", model_path, "Model file for the vocabulary size");
  kgw_det->add_option("--alpha", alpha, "Significance level");
  kgw.add(kgw_det);
  kgw_det->add_option("-o,--out", out_path, "Output file (default: standard output)");

  // experiment
  auto* experiment_cmd = app.add_subcommand("experiment", "Run an experiment config; CSV rows plus a JSON summary");
  std::string config_path, csv_path, summary_path, point;
  experiment_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required();
  experiment_cmd->add_option("--csv", csv_path, "CSV output (default: standard output)");
  experiment_cmd->add_option("--summary", summary_path, "Summary JSON output");
  experiment_cmd->add_option("--point", point, "Rerun only the point with this config hash");

  // verify-theory
  auto* verify_cmd = app.add_subcommand("verify-theory", "Numerical checks of the detector's guarantees");
  std::string check = "all";
  double scale = 1.0;
  verify_cmd->add_option("--check", check, "Check name or 'all'");
  verify_cmd->add_option("--scale", scale, "Budget multiplier");
  verify_cmd->add_option("--seed", seed, "Master seed");
  verify_cmd->add_flag_callback(
      "--list",
      [] {
        for (const auto& n : experiment::theory_check_names()) std::cout << n << '\n';
        throw CLI::Success();
      },
      "List the checks");
  verify_cmd->add_option("-o,--out", out_path, "Output file (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*keygen) {
      ModelPtr model;
      if (!model_path.empty()) model = load_model(model_path);
      if (!sigma && !sigma2) throw InvalidInput("give --sigma or --sigma2");
      const double s = sigma ? *sigma : std::sqrt(*sigma2);
      const WatermarkKey key = io::keygen(d, s, seed, stream, model.get(), rank_drop);
      const json j = io::key_to_json(key, !no_values);
      emit(j, out_path);
      std::cerr << "fingerprint " << io::key_fingerprint(key) << '\n';
    } else if (*generate_cmd) {
      const ModelPtr model = load_model(model_path);
      const WatermarkKey key = io::key_from_json(io::read_json_file(key_path), model.get());
      const Tokens prompt = parse_token_list(prompt_str);
      RngStream rng(seed, stream);
      Tokens y;
      if (robust) {
        const auto chain = make_key_chain(length, key.dim(), key.sigma, key.master_seed, key.stream_id);
        y = robust_generate(*model, chain, prompt, rng);
      } else {
        y = generate(*model, key, prompt, length, rng);
      }
      emit({{"version", io::kFormatVersion},
            {"prompt", prompt},
            {"tokens", y},
            {"key_fingerprint", io::key_fingerprint(key)},
            {"robust", robust}},
           out_path);
    } else if (*detect_cmd) {
      const ModelPtr model = load_model(model_path);
      const WatermarkKey key = io::key_from_json(io::read_json_file(key_path), model.get());
      const TextInput text = read_text(input_path, tokens_str, prompt_str);
      json report;
      if (robust) {
        if (text.response.empty()) throw InvalidInput("empty response");
        const auto chain = make_key_chain(text.response.size(), key.dim(), key.sigma, key.master_seed, key.stream_id);
        report = io::to_json(robust_detect(*model, chain, text.prompt, text.response, alpha0, lambda_prime));
      } else {
        report = io::to_json(detect(*model, key, text.prompt, text.response, alpha));
      }
      report["version"] = io::kFormatVersion;
      report["key_fingerprint"] = io::key_fingerprint(key);
      report["response_length"] = text.response.size();
      emit(report, out_path);
    } else if (*attack_cmd) {
      const TextInput text = read_text(input_path, tokens_str, "");
      if (!model_path.empty()) vocab = load_model(model_path)->vocab_size();
      if (vocab <= 0) throw InvalidInput("give --vocab or --model");
      const AttackSpec spec{parse_attack_kind(kind), parse_attack_locus(locus), fraction};
      RngStream rng(seed, stream);
      const AttackResult r = corrupt(text.response, spec, vocab, rng);
      emit({{"version", io::kFormatVersion},
            {"prompt", text.prompt},
            {"tokens", r.tokens},
            {"attack", {{"kind", kind}, {"locus", locus}, {"fraction", fraction}}},
            {"edits", r.edits},
            {"clamped", r.clamped}},
           out_path);
    } else if (*kgw_gen) {
      const ModelPtr model = load_model(model_path);
      const Tokens prompt = parse_token_list(prompt_str);
      RngStream rng(seed, stream);
      const Tokens y = kgw_generate(*model, kgw.params(), prompt, length, rng);
      emit({{"version", io::kFormatVersion}, {"prompt", prompt}, {"tokens", y}, {"kgw", io::to_json(kgw.params())}},
           out_path);
    } else if (*kgw_det) {
      const TextInput text = read_text(input_path, tokens_str, prompt_str);
      if (!model_path.empty()) vocab = load_model(model_path)->vocab_size();
      if (vocab <= 0) throw InvalidInput("give --vocab or --model");
      json report = io::to_json(kgw_z_test(text.prompt, text.response, vocab, kgw.params()));
      rejection_threshold(alpha);
      report["version"] = io::kFormatVersion;
      report["alpha"] = alpha;
      report["decision"] = report["p_value"].get<double>() <= alpha ? "reject" : "fail_to_reject";
      emit(report, out_path);
    } else if (*experiment_cmd) {
      const json config = io::read_json_file(config_path);
      std::string csv;
      json summary;
      if (!point.empty()) {
        std::size_t used = 0;
        std::uint64_t h = 0;
        try {
          h = std::stoull(point, &used, 16);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != point.size()) throw InvalidInput("--point must be a hex config hash");
        const auto p = experiment::rerun_point(config, h);
        csv = experiment::to_csv(p.rows);
        summary = p.summary;
      } else {
        const auto r = experiment::run_experiment(config);
        csv = experiment::to_csv(r.rows);
        summary = r.summary;
      }
      if (csv_path.empty())
        std::cout << csv;
      else
        io::write_text_file(csv_path, csv);
      if (!summary_path.empty()) io::write_json_file(summary_path, summary);
    } else if (*verify_cmd) {
      emit(experiment::verify_theory(check, scale, seed), out_path);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return 0;
}
