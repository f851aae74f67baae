#include "gaussmark/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "gaussmark/io.hpp"
#include "gaussmark/theory.hpp"

namespace gaussmark::experiment {

namespace {

const std::set<std::string> kTopLevel{"version",      "master_seed", "scheme",      "check",       "model",
                                      "watermark",    "kgw",         "detector",    "prompt",      "response_length",
                                      "trials",       "null_trials", "null_source", "attack",      "theory",
                                      "record_trials", "sweep",      "description"};

template <typename T>
T get_or(const json& j, const char* name, T fallback) {
  if (!j.contains(name) || j[name].is_null()) return fallback;
  try {
    return j[name].get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad field '") + name + "': " + e.what());
  }
}

json normalize_attack(const json& a) {
  if (a.is_null()) return nullptr;
  if (!a.is_object()) throw FormatError("attack must be an object or null");
  AttackSpec spec;
  spec.kind = parse_attack_kind(get_or<std::string>(a, "kind", ""));
  spec.locus = parse_attack_locus(get_or<std::string>(a, "locus", "random"));
  spec.fraction = get_or<double>(a, "fraction", 0.0);
  if (!(spec.fraction >= 0.0)) throw FormatError("attack fraction must be nonnegative");
  return {{"kind", to_string(spec.kind)}, {"locus", to_string(spec.locus)}, {"fraction", spec.fraction}};
}

AttackSpec attack_from_json(const json& a) {
  return {parse_attack_kind(a["kind"].get<std::string>()), parse_attack_locus(a["locus"].get<std::string>()),
          a["fraction"].get<double>()};
}

json normalize_theory(const std::string& check, const json& t) {
  if (!t.is_null() && !t.is_object()) throw FormatError("theory must be an object");
  const json src = t.is_null() ? json::object() : t;
  if (check == "log_concave") return {{"eta", get_or(src, "eta", 1.0)}, {"beta", get_or(src, "beta", 0.1)}};
  if (check == "robustness")
    return {{"beta", get_or(src, "beta", 0.05)},
            {"alpha0", get_or(src, "alpha0", 0.05)},
            {"lambda0", get_or(src, "lambda0", 0.2)},
            {"beta0_sequences", get_or<std::size_t>(src, "beta0_sequences", 50)},
            {"beta0_length", get_or<std::size_t>(src, "beta0_length", 200)}};
  return json::object();
}

std::string pointer_of(const std::string& parameter) {
  if (parameter.empty()) throw FormatError("sweep parameter must be nonempty");
  if (parameter.front() == '/') return parameter;
  std::string p = "/" + parameter;
  std::replace(p.begin(), p.end(), '.', '/');
  return p;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string value_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

Tokens null_tokens(const LanguageModel& model, theory::NullSource q, std::span<const Token> prompt, std::size_t length,
                   RngStream& rng) {
  Tokens y(length);
  const auto V = static_cast<std::uint64_t>(model.vocab_size());
  switch (q) {
    case theory::NullSource::UniformTokens:
      for (Token& t : y) t = static_cast<Token>(rng.below(V));
      break;
    case theory::NullSource::ModelSamples:
      y = sample_sequence(model, prompt, length, rng);
      break;
    case theory::NullSource::ConstantSequence:
      for (std::size_t k = 0; k < y.size(); ++k) y[k] = static_cast<Token>((7 * k + 3) % V);
      break;
  }
  return y;
}

TrialOutcome outcome_of(const theory::TrialRecord& r) {
  return {r.p_value, r.psi, r.grad_norm, r.null_gradient, r.attack_edits};
}

Vec p_values_of(const std::vector<TrialOutcome>& t) {
  Vec p;
  p.reserve(t.size());
  for (const auto& o : t) p.push_back(o.p_value);
  return p;
}

double rate_at(const Vec& p, double alpha) {
  if (p.empty()) return 0.0;
  return static_cast<double>(std::count_if(p.begin(), p.end(), [&](double x) { return x <= alpha; })) /
         static_cast<double>(p.size());
}

void power_point(PointResult& out, const json& cfg, std::uint64_t seed) {
  const ModelPtr model = make_model(cfg["model"]);
  const Tokens prompt = cfg["prompt"].get<Tokens>();
  const auto length = cfg["response_length"].get<std::size_t>();
  const auto trials = cfg["trials"].get<std::size_t>();
  const auto null_trials = cfg["null_trials"].get<std::size_t>();
  const double alpha = cfg["detector"]["alpha"].get<double>();
  const auto q = theory::parse_null_source(cfg["null_source"].get<std::string>());
  std::optional<AttackSpec> attack;
  if (!cfg["attack"].is_null()) attack = attack_from_json(cfg["attack"]);
  const RngStream parent(seed, out.config_hash);

  if (cfg["scheme"] == "gaussmark") {
    theory::TrialSetup setup{model, prompt, length, cfg["watermark"]["sigma"].get<double>(), nullptr, attack};
    if (const auto k = cfg["watermark"]["rank_drop"].get<std::size_t>(); k > 0)
      setup.projector =
          std::make_shared<const SubspaceProjector>(bottom_subspace_projector(io::watermark_block(*model), k));
    theory::TrialSetup null_setup = setup;
    null_setup.attack.reset();
    out.watermarked = parallel_trials(
        trials, [&](std::size_t i) { return outcome_of(theory::watermark_trial(setup, parent.derive(2 * i))); });
    out.null = parallel_trials(
        null_trials, [&](std::size_t i) { return outcome_of(theory::null_trial(null_setup, q, parent.derive(2 * i + 1))); });
  } else {
    const KgwParams base = io::kgw_params_from_json(cfg["kgw"]);
    const int V = model->vocab_size();
    auto detect = [&](const Tokens& y, const KgwParams& params, std::size_t edits) {
      const KgwTestResult r = kgw_z_test(prompt, y, V, params);
      return TrialOutcome{r.p_value, r.z, 0.0, y.empty(), edits};
    };
    out.watermarked = parallel_trials(trials, [&](std::size_t i) {
      RngStream rng = parent.derive(2 * i);
      KgwParams params = base;
      params.hash_seed = hash_combine(base.hash_seed, rng.next_u64());
      Tokens y = kgw_generate(*model, params, prompt, length, rng);
      std::size_t edits = 0;
      if (attack) {
        AttackResult a = corrupt(y, *attack, V, rng);
        y = std::move(a.tokens);
        edits = a.edits;
      }
      return detect(y, params, edits);
    });
    out.null = parallel_trials(null_trials, [&](std::size_t i) {
      RngStream rng = parent.derive(2 * i + 1);
      KgwParams params = base;
      params.hash_seed = hash_combine(base.hash_seed, rng.next_u64());
      return detect(null_tokens(*model, q, prompt, length, rng), params, 0);
    });
  }

  const Vec wp = p_values_of(out.watermarked), np = p_values_of(out.null);
  auto add = [&](const std::string& name, double value, std::optional<double> se, std::size_t n) {
    out.rows.push_back({io::hex64(out.config_hash), out.label, name, value, se, n, "ok", seed});
  };
  const double power = rate_at(wp, alpha), tpr05 = rate_at(wp, 0.05), tpr01 = rate_at(wp, 0.01);
  Vec psi;
  std::size_t nulls = 0;
  for (const auto& o : out.watermarked) {
    psi.push_back(o.psi);
    nulls += o.null_gradient ? 1 : 0;
  }
  add("power", power, stats::binomial_se(power, trials), trials);
  add("tpr@0.05", tpr05, stats::binomial_se(tpr05, trials), trials);
  add("tpr@0.01", tpr01, stats::binomial_se(tpr01, trials), trials);
  add("median_p_value", stats::median(wp), std::nullopt, trials);
  add("mean_psi", stats::mean(psi), trials > 1 ? std::optional(stats::standard_error(psi)) : std::nullopt, trials);
  add("null_gradient_rate", static_cast<double>(nulls) / static_cast<double>(trials), std::nullopt, trials);

  out.summary = {{"point", out.label},
                 {"config_hash", io::hex64(out.config_hash)},
                 {"config", cfg},
                 {"power", power},
                 {"tpr@0.05", tpr05},
                 {"tpr@0.01", tpr01},
                 {"median_p_value", stats::median(wp)}};
  if (!np.empty()) {
    const double level = rate_at(np, alpha);
    const double auc = stats::auc_from_pvalues(wp, np);
    add("level", level, stats::binomial_se(level, null_trials), null_trials);
    add("auc", auc, std::nullopt, trials + null_trials);
    json roc = json::array();
    for (const auto& pt : stats::roc_from_pvalues(wp, np)) roc.push_back({pt.false_positive_rate, pt.true_positive_rate});
    out.summary["level"] = level;
    out.summary["auc"] = auc;
    out.summary["roc"] = roc;
  }
  if (cfg["record_trials"].get<bool>()) {
    auto dump = [&](const std::vector<TrialOutcome>& ts) {
      json arr = json::array();
      for (const auto& t : ts)
        arr.push_back({{"p_value", t.p_value},
                       {"psi", t.psi},
                       {"grad_norm", t.grad_norm},
                       {"decision", t.p_value <= alpha ? "reject" : "fail_to_reject"},
                       {"null_gradient", t.null_gradient},
                       {"attack_edits", t.attack_edits}});
      return arr;
    };
    out.summary["trials"] = {{"watermarked", dump(out.watermarked)}, {"null", dump(out.null)}};
  }
}

void log_concave_point(PointResult& out, const json& cfg, std::uint64_t seed) {
  const json& t = cfg["theory"];
  const double beta = t["beta"].get<double>();
  const auto n = cfg["trials"].get<std::size_t>();
  const auto r = theory::log_concave_power_check(t["eta"].get<double>(), cfg["watermark"]["sigma"].get<double>(),
                                                 cfg["detector"]["alpha"].get<double>(), beta, n,
                                                 hash_combine(seed, out.config_hash));
  const std::string h = io::hex64(out.config_hash);
  if (!r.testable) {
    out.rows.push_back({h, out.label, "bound_dimension", static_cast<double>(r.bound_dimension), std::nullopt, 0,
                        "untestable", seed});
    out.summary = {{"point", out.label}, {"config_hash", h}, {"config", cfg}, {"status", "untestable"},
                   {"bound_dimension", r.bound_dimension}};
    return;
  }
  out.rows.push_back({h, out.label, "bound_dimension", static_cast<double>(r.bound_dimension), std::nullopt, 0, "ok", seed});
  const char* names[] = {"power_at_bound", "power_at_2x_bound", "power_at_4x_bound"};
  for (std::size_t i = 0; i < r.power.size(); ++i) {
    const bool pass = i == 0 ? r.bound_holds : r.monotone;
    out.rows.push_back({h, out.label, names[i], r.power[i].rate, r.power[i].std_error(), n, pass ? "pass" : "fail", seed});
  }
  out.summary = {{"point", out.label},        {"config_hash", h},          {"config", cfg},
                 {"status", "ok"},            {"bound_dimension", r.bound_dimension},
                 {"bound_holds", r.bound_holds}, {"monotone", r.monotone}};
}

void robustness_point(PointResult& out, const json& cfg, std::uint64_t seed) {
  const json& t = cfg["theory"];
  theory::RobustnessSetup setup;
  setup.model = make_model(cfg["model"]);
  setup.sigma = cfg["watermark"]["sigma"].get<double>();
  setup.alpha = cfg["detector"]["alpha"].get<double>();
  setup.beta = t["beta"].get<double>();
  setup.alpha0 = t["alpha0"].get<double>();
  setup.lambda0 = t["lambda0"].get<double>();
  setup.beta0_sequences = t["beta0_sequences"].get<std::size_t>();
  setup.beta0_length = t["beta0_length"].get<std::size_t>();
  setup.trials = cfg["trials"].get<std::size_t>();
  const auto r = theory::robustness_bound_check(setup, hash_combine(seed, out.config_hash));
  const std::string h = io::hex64(out.config_hash);
  out.rows.push_back({h, out.label, "beta0_hat", r.beta0_hat, std::nullopt, setup.beta0_sequences * setup.beta0_length,
                      "ok", seed});
  out.summary = {{"point", out.label}, {"config_hash", h}, {"config", cfg}, {"feasible", r.feasible},
                 {"beta0_hat", r.beta0_hat}, {"beta0_upper", r.beta0_upper}};
  if (!r.feasible) {
    out.rows.push_back({h, out.label, "k", 0.0, std::nullopt, 0, "infeasible", seed});
    out.summary["status"] = "infeasible";
    return;
  }
  out.rows.push_back({h, out.label, "k", static_cast<double>(r.k), std::nullopt, 0, "ok", seed});
  out.rows.push_back({h, out.label, "fpr", r.null_rate.rate, r.null_rate.std_error(), setup.trials,
                      r.level_holds ? "pass" : "fail", seed});
  out.rows.push_back({h, out.label, "tpr", r.alt_rate.rate, r.alt_rate.std_error(), setup.trials,
                      r.power_holds ? "pass" : "fail", seed});
  out.summary["status"] = "ok";
  out.summary["lambda_prime"] = r.lambda_prime;
  out.summary["k"] = r.k;
  out.summary["fpr"] = r.null_rate.rate;
  out.summary["tpr"] = r.alt_rate.rate;
}

}  // namespace

json normalize_config(const json& config) {
  io::require_version(config, "experiment config");
  for (const auto& [key, _] : config.items())
    if (!kTopLevel.count(key)) throw FormatError("unknown config field '" + key + "'");

  json out;
  out["version"] = io::kFormatVersion;
  out["master_seed"] = get_or<std::uint64_t>(config, "master_seed", 0);
  const auto scheme = get_or<std::string>(config, "scheme", "gaussmark");
  if (scheme != "gaussmark" && scheme != "kgw") throw FormatError("scheme must be \"gaussmark\" or \"kgw\"");
  out["scheme"] = scheme;
  const auto check = get_or<std::string>(config, "check", "power");
  if (check != "power" && check != "log_concave" && check != "robustness")
    throw FormatError("check must be \"power\", \"log_concave\" or \"robustness\"");
  out["check"] = check;
  out["model"] = normalize_model_spec(get_or<json>(config, "model", json{{"kind", "linear"}}));

  const json wm = get_or<json>(config, "watermark", json::object());
  double sigma = get_or(wm, "sigma", 0.1);
  if (wm.contains("sigma2")) {
    const double s2 = get_or(wm, "sigma2", 0.0);
    if (!(s2 >= 0.0)) throw FormatError("watermark.sigma2 must be nonnegative");
    sigma = std::sqrt(s2);
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw FormatError("watermark.sigma must be finite and nonnegative");
  out["watermark"] = {{"sigma", sigma}, {"rank_drop", get_or<std::size_t>(wm, "rank_drop", 0)}};
  out["kgw"] = io::to_json(io::kgw_params_from_json(get_or<json>(config, "kgw", json::object())));

  const double alpha = get_or(get_or<json>(config, "detector", json::object()), "alpha", 0.05);
  if (!(alpha > 0.0 && alpha < 1.0)) throw FormatError("detector.alpha must lie in (0, 1)");
  out["detector"] = {{"alpha", alpha}};

  out["prompt"] = get_or<Tokens>(config, "prompt", Tokens{});
  out["response_length"] = get_or<std::size_t>(config, "response_length", 64);
  if (out["response_length"] == 0) throw FormatError("response_length must be positive");
  out["trials"] = get_or<std::size_t>(config, "trials", 200);
  if (out["trials"] == 0) throw FormatError("trials must be positive");
  out["null_trials"] = get_or<std::size_t>(config, "null_trials", 200);
  out["null_source"] = theory::to_string(theory::parse_null_source(get_or<std::string>(config, "null_source", "uniform")));
  out["attack"] = normalize_attack(config.contains("attack") ? config["attack"] : json(nullptr));
  out["theory"] = normalize_theory(check, config.contains("theory") ? config["theory"] : json(nullptr));
  out["record_trials"] = get_or(config, "record_trials", false);
  if (config.contains("sweep") && !config["sweep"].is_null()) {
    const json& s = config["sweep"];
    if (!s.is_object() || !s.contains("parameter") || !s.contains("values") || !s["values"].is_array())
      throw FormatError("sweep needs \"parameter\" and a \"values\" array");
    out["sweep"] = {{"parameter", get_or<std::string>(s, "parameter", "")}, {"values", s["values"]}};
    pointer_of(out["sweep"]["parameter"].get<std::string>());
  }
  return out;
}

std::vector<json> expand_sweep(const json& config) {
  json base = normalize_config(config);
  if (!base.contains("sweep")) return {base};
  const json sweep = base["sweep"];
  base.erase("sweep");
  const json::json_pointer ptr(pointer_of(sweep["parameter"].get<std::string>()));
  std::vector<json> points;
  for (const auto& v : sweep["values"]) {
    json p = base;
    if (ptr.to_string() == "/watermark/sigma2") p["watermark"].erase("sigma");
    try {
      p[ptr] = v;
    } catch (const json::exception& e) {
      throw FormatError("cannot apply sweep parameter: " + std::string(e.what()));
    }
    points.push_back(normalize_config(p));
  }
  return points;
}

std::uint64_t point_hash(const json& point_config) {
  json c = point_config;
  c.erase("master_seed");
  return io::json_hash(c);
}

std::string csv_header() { return "config_hash,point,estimator,value,se,n,status,seed\n"; }

std::string csv_line(const CsvRow& r) {
  std::ostringstream s;
  auto quoted = [](const std::string& x) {
    if (x.find_first_of(",\"\n") == std::string::npos) return x;
    std::string q = "\"";
    for (char c : x) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  s << r.config_hash << ',' << quoted(r.point) << ',' << quoted(r.estimator) << ',' << format_double(r.value) << ','
    << (r.se ? format_double(*r.se) : "") << ',' << r.n << ',' << r.status << ',' << r.seed << '\n';
  return s.str();
}

std::string to_csv(const std::vector<CsvRow>& rows) {
  std::string out = csv_header();
  for (const auto& r : rows) out += csv_line(r);
  return out;
}

PointResult run_point(const json& point_config, const std::string& label) {
  const json cfg = normalize_config(point_config);
  if (cfg.contains("sweep")) throw InvalidInput("run_point expects a config without a sweep");
  PointResult out;
  out.config = cfg;
  out.config_hash = point_hash(cfg);
  out.label = label.empty() ? "base" : label;
  const auto seed = cfg["master_seed"].get<std::uint64_t>();
  const auto check = cfg["check"].get<std::string>();
  if (check == "log_concave")
    log_concave_point(out, cfg, seed);
  else if (check == "robustness")
    robustness_point(out, cfg, seed);
  else
    power_point(out, cfg, seed);
  return out;
}

namespace {

std::vector<std::string> point_labels(const json& normalized, std::size_t n) {
  std::vector<std::string> labels;
  if (!normalized.contains("sweep")) return {"base"};
  const auto& s = normalized["sweep"];
  for (std::size_t i = 0; i < n; ++i) labels.push_back(s["parameter"].get<std::string>() + "=" + value_label(s["values"][i]));
  return labels;
}

}  // namespace

ExperimentResult run_experiment(const json& config) {
  const json normalized = normalize_config(config);
  const auto points = expand_sweep(normalized);
  const auto labels = point_labels(normalized, points.size());
  ExperimentResult result;
  json entries = json::array();
  json series = {{"label", json::array()}, {"median_p_value", json::array()}, {"tpr@0.05", json::array()}};
  for (std::size_t i = 0; i < points.size(); ++i) {
    result.points.push_back(run_point(points[i], labels[i]));
    const auto& p = result.points.back();
    result.rows.insert(result.rows.end(), p.rows.begin(), p.rows.end());
    entries.push_back(p.summary);
    series["label"].push_back(p.label);
    series["median_p_value"].push_back(p.summary.value("median_p_value", json(nullptr)));
    series["tpr@0.05"].push_back(p.summary.value("tpr@0.05", json(nullptr)));
  }
  result.summary = {{"version", io::kFormatVersion},
                    {"config_hash", io::hex64(point_hash(normalized))},
                    {"master_seed", normalized["master_seed"]},
                    {"sweep", normalized.value("sweep", json(nullptr))},
                    {"series", series},
                    {"points", entries}};
  return result;
}

PointResult rerun_point(const json& config, std::uint64_t config_hash) {
  const json normalized = normalize_config(config);
  const auto points = expand_sweep(normalized);
  const auto labels = point_labels(normalized, points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    if (point_hash(points[i]) == config_hash) return run_point(points[i], labels[i]);
  throw InvalidInput("no point of this config has hash " + io::hex64(config_hash));
}

std::vector<std::string> theory_check_names() {
  return {"level", "tilted_beta", "meanshift", "halfspace", "kl_projection", "log_concave", "robustness", "quantile_gap"};
}

json verify_theory(const std::string& check, double scale, std::uint64_t master_seed) {
  if (!(scale > 0.0)) throw InvalidInput("budget scale must be positive");
  const auto names = theory_check_names();
  if (check != "all" && std::find(names.begin(), names.end(), check) == names.end())
    throw InvalidInput("unknown theory check '" + check + "'");
  auto budget = [&](double base) { return std::max<std::size_t>(100, static_cast<std::size_t>(std::llround(base * scale))); };
  auto linear = [](int vocab, std::size_t dim, int window) {
    return make_linear_model({{"kind", "linear"}, {"vocab", vocab}, {"dim", dim}, {"context_window", window}});
  };

  json checks = json::array();
  bool all_pass = true;
  for (std::size_t idx = 0; idx < names.size(); ++idx) {
    const std::string& name = names[idx];
    if (check != "all" && check != name) continue;
    RngStream rng(master_seed, hash_combine(0x5448454FULL, idx));
    json c{{"name", name}};
    bool pass = false;
    if (name == "level") {
      theory::TrialSetup setup{linear(32, 64, 2), {1, 2}, 32, 0.1, nullptr, std::nullopt};
      const std::size_t n = budget(2000);
      pass = true;
      json sources = json::array();
      for (auto q : {theory::NullSource::UniformTokens, theory::NullSource::ModelSamples,
                     theory::NullSource::ConstantSequence}) {
        const auto e = theory::estimate_level(setup, q, n, 0.05, master_seed, static_cast<std::uint64_t>(q) + 1);
        const double ks = stats::ks_uniform(e.p_values);
        // 99.9% Kolmogorov critical value and a 3-SE binomial band.
        const bool ok = ks < 1.95 / std::sqrt(static_cast<double>(n)) &&
                        std::abs(e.rate - 0.05) <= 3.0 * stats::binomial_se(0.05, n);
        pass = pass && ok;
        sources.push_back({{"source", theory::to_string(q)}, {"rate", e.rate}, {"ks", ks}, {"n", n}, {"pass", ok}});
      }
      c["sources"] = sources;
    } else if (name == "tilted_beta") {
      const auto t = theory::tilted_beta(*linear(4, 8, 0), Tokens{}, 2, 1.0, 0.05, budget(2000), budget(4000), rng);
      pass = std::abs(t.beta_tilted - t.beta_direct) <= 3.0 * (t.se_tilted + t.se_direct) &&
             t.max_tilt_normalization_error < 1e-10;
      c.update({{"beta_tilted", t.beta_tilted}, {"se_tilted", t.se_tilted}, {"beta_direct", t.beta_direct},
                {"se_direct", t.se_direct}, {"max_tilt_normalization_error", t.max_tilt_normalization_error}});
    } else if (name == "meanshift") {
      pass = true;
      json rows = json::array();
      for (auto [d, sigma] : {std::pair<std::size_t, double>{1024, 0.1}, {4096, 0.05}}) {
        const auto s = theory::gaussian_meanshift_psi(d, sigma, budget(1000), rng);
        const double ratio = s.mean_sigma_psi / s.lemma_scale;
        pass = pass && ratio >= 0.5 && ratio <= 2.0;
        rows.push_back({{"d", d}, {"sigma", sigma}, {"mean_psi", s.mean_psi}, {"p05_psi", s.p05_psi}, {"ratio", ratio}});
      }
      c["points"] = rows;
    } else if (name == "halfspace") {
      pass = true;
      json rows = json::array();
      for (int k = 0; k < 5; ++k) {
        const std::size_t d = 1 + rng.below(8);
        Vec u = sample_gaussian_vector(d, 1.0, rng).values;
        const double scale = (0.5 + 1.5 * rng.uniform()) / norm(u);
        for (double& x : u) x *= scale;
        const double a = 2.0 * rng.uniform() - 1.0, gamma = rng.uniform();
        const auto h = theory::halfspace_expectation(u, a, gamma, budget(100000), rng);
        const bool ok = std::abs(h.closed_form - h.mc_estimate) <= 3.0 * h.mc_se;
        pass = pass && ok;
        rows.push_back({{"d", d}, {"a", a}, {"gamma", gamma}, {"closed_form", h.closed_form},
                        {"mc_estimate", h.mc_estimate}, {"mc_se", h.mc_se}, {"pass", ok}});
      }
      c["configs"] = rows;
    } else if (name == "kl_projection") {
      const auto model = linear(3, 6, 0);
      const auto nu = theory::discretize_gaussian(6, 1.0, 2, rng);
      const auto r = theory::kl_projection_check(*model, Tokens{}, 1, nu, 60, 20, rng);
      pass = r.argmin_linf_distance <= r.grid_step + 1e-12 && r.max_identity_error < 1e-10 &&
             r.kl_at_mu_star <= r.grid_min_kl + 1e-12;
      c.update({{"mu_star", r.mu_star}, {"grid_argmin", r.grid_argmin}, {"grid_step", r.grid_step},
                {"max_identity_error", r.max_identity_error}});
    } else if (name == "log_concave") {
      const auto r = theory::log_concave_power_check(1.0, 0.2, 0.1, 0.1, budget(2000), master_seed);
      pass = r.testable && r.bound_holds && r.monotone;
      json power = json::array();
      for (const auto& p : r.power) power.push_back(p.rate);
      c.update({{"bound_dimension", r.bound_dimension}, {"dimensions", r.dimensions}, {"power", power}});
      const auto tiny = theory::log_concave_power_check(1.0, 1e-4, 0.1, 0.1, 100, master_seed);
      c["sigma_1e-4"] = {{"testable", tiny.testable}, {"bound_dimension", tiny.bound_dimension}};
      pass = pass && !tiny.testable;
    } else if (name == "robustness") {
      theory::RobustnessSetup setup;
      setup.model = make_linear_model(
          {{"kind", "linear"}, {"vocab", 256}, {"dim", 64}, {"context_window", 0}, {"theta_scale", 0.1}});
      setup.trials = budget(500);
      const auto r = theory::robustness_bound_check(setup, master_seed);
      pass = r.feasible && r.level_holds && r.power_holds;
      c.update({{"feasible", r.feasible}, {"beta0_hat", r.beta0_hat}, {"lambda_prime", r.lambda_prime}, {"k", r.k},
                {"fpr", r.null_rate.rate}, {"tpr", r.alt_rate.rate}});
    } else if (name == "quantile_gap") {
      theory::TrialSetup setup{linear(32, 1024, 2), {1, 2}, 16, 0.1, nullptr, std::nullopt};
      const auto r = theory::estimate_corollary_quantile_gap(setup, 0.005, 0.05, 0.1, budget(1000), 50, budget(200),
                                                             master_seed);
      pass = r.condition_holds && r.power_holds;
      c.update({{"lambda", r.lambda}, {"condition_holds", r.condition_holds},
                {"condition_number", r.condition_number}, {"best_sigma", r.best_sigma}});
      if (r.sigma_required) c["sigma_required"] = *r.sigma_required;
      if (r.power) c["power"] = r.power->rate;
    }
    c["pass"] = pass;
    all_pass = all_pass && pass;
    checks.push_back(c);
  }
  return {{"version", io::kFormatVersion}, {"master_seed", master_seed}, {"scale", scale}, {"checks", checks},
          {"all_pass", all_pass}};
}

}  // namespace gaussmark::experiment
