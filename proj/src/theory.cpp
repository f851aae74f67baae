#include "gaussmark/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gaussmark::theory {

namespace {

double log_mean_exp(std::span<const double> a) { return log_sum_exp(a) - std::log(static_cast<double>(a.size())); }

Vec random_direction_key(std::size_t d, const SubspaceProjector* projector, RngStream& rng) {
  Vec z = sample_gaussian_vector(d, 1.0, rng).values;
  if (projector) z = projector->apply(z);
  return z;
}

TrialRecord detect_direction(const TrialSetup& setup, std::span<const double> z, std::span<const Token> y) {
  TrialRecord r;
  r.response_length = y.size();
  if (y.empty()) {
    r.null_gradient = true;
    return r;
  }
  Vec g = setup.model->grad_log_prob(setup.prompt, y);
  if (setup.projector) g = setup.projector->apply(g);
  r.grad_norm = norm(g);
  if (r.grad_norm <= kNullGradientTolerance) {
    r.null_gradient = true;
    return r;
  }
  r.psi = dot(z, g) / r.grad_norm;
  r.p_value = p_value(r.psi);
  return r;
}

void validate_setup(const TrialSetup& setup) {
  if (!setup.model) throw InvalidInput("trial setup has no model");
  if (setup.length == 0) throw InvalidInput("trial setup needs a positive response length");
  if (!(setup.sigma >= 0.0) || !std::isfinite(setup.sigma)) throw InvalidInput("sigma must be finite and nonnegative");
  if (setup.projector && setup.projector->dim() != setup.model->param_dim())
    throw DimensionError("projector shape does not match the model's watermarkable block");
}

}  // namespace

LevelPowerEstimate summarize_rejections(Vec p_values, double alpha, std::uint64_t config_hash) {
  LevelPowerEstimate e;
  e.n_trials = p_values.size();
  rejection_threshold(alpha);
  for (double p : p_values) e.rejections += p <= alpha ? 1 : 0;
  e.rate = e.n_trials ? static_cast<double>(e.rejections) / static_cast<double>(e.n_trials) : 0.0;
  e.wilson = stats::wilson_interval(e.rejections, e.n_trials);
  e.config_hash = config_hash;
  e.p_values = std::move(p_values);
  return e;
}

TrialRecord watermark_trial(const TrialSetup& setup, RngStream rng) {
  validate_setup(setup);
  const LanguageModel& model = *setup.model;
  const Vec z = random_direction_key(model.param_dim(), setup.projector.get(), rng);
  Tokens y;
  if (setup.sigma == 0.0) {
    y = sample_sequence(model, setup.prompt, setup.length, rng);
  } else {
    Vec params = model.params();
    axpy(setup.sigma, z, params);
    y = sample_sequence(*model.with_params(std::move(params)), setup.prompt, setup.length, rng);
  }
  std::size_t edits = 0;
  if (setup.attack) {
    AttackResult a = corrupt(y, *setup.attack, model.vocab_size(), rng);
    y = std::move(a.tokens);
    edits = a.edits;
  }
  TrialRecord r = detect_direction(setup, z, y);
  r.attack_edits = edits;
  return r;
}

std::string to_string(NullSource q) {
  switch (q) {
    case NullSource::UniformTokens: return "uniform";
    case NullSource::ModelSamples: return "model";
    case NullSource::ConstantSequence: return "constant";
  }
  return "unknown";
}

NullSource parse_null_source(const std::string& s) {
  if (s == "uniform") return NullSource::UniformTokens;
  if (s == "model") return NullSource::ModelSamples;
  if (s == "constant") return NullSource::ConstantSequence;
  throw FormatError("unknown null source '" + s + "'");
}

TrialRecord null_trial(const TrialSetup& setup, NullSource q, RngStream rng) {
  validate_setup(setup);
  const LanguageModel& model = *setup.model;
  const Vec z = random_direction_key(model.param_dim(), setup.projector.get(), rng);
  Tokens y(setup.length);
  const auto V = static_cast<std::uint64_t>(model.vocab_size());
  switch (q) {
    case NullSource::UniformTokens:
      for (Token& t : y) t = static_cast<Token>(rng.below(V));
      break;
    case NullSource::ModelSamples:
      y = sample_sequence(model, setup.prompt, setup.length, rng);
      break;
    case NullSource::ConstantSequence:
      // The same handwritten-style list in every trial.
      for (std::size_t k = 0; k < y.size(); ++k) y[k] = static_cast<Token>((7 * k + 3) % V);
      break;
  }
  std::size_t edits = 0;
  if (setup.attack) {
    AttackResult a = corrupt(y, *setup.attack, model.vocab_size(), rng);
    y = std::move(a.tokens);
    edits = a.edits;
  }
  TrialRecord r = detect_direction(setup, z, y);
  r.attack_edits = edits;
  return r;
}

LevelPowerEstimate estimate_level(const TrialSetup& setup, NullSource q, std::size_t n, double alpha,
                                  std::uint64_t master_seed, std::uint64_t stream_id) {
  const RngStream parent(master_seed, stream_id);
  auto records = parallel_trials(n, [&](std::size_t i) { return null_trial(setup, q, parent.derive(i)).p_value; });
  return summarize_rejections(std::move(records), alpha);
}

LevelPowerEstimate estimate_power(const TrialSetup& setup, std::size_t n, double alpha, std::uint64_t master_seed,
                                  std::uint64_t stream_id) {
  const RngStream parent(master_seed, stream_id);
  auto records = parallel_trials(n, [&](std::size_t i) { return watermark_trial(setup, parent.derive(i)).p_value; });
  return summarize_rejections(std::move(records), alpha);
}

TiltingEstimate tilted_beta(const LinearSoftmaxLM& model, std::span<const Token> prompt, std::size_t length,
                            double sigma, double alpha, std::size_t n_keys, std::size_t n_direct, RngStream& rng) {
  if (model.features().context_buckets() != 1)
    throw InvalidInput("tilted_beta: requires context-free features (sequence-level and autoregressive models agree)");
  if (n_keys == 0) throw InvalidInput("tilted_beta: need at least one key");
  const SequenceSpace space(model.feature_ptr(), Tokens(prompt.begin(), prompt.end()), length);
  const double tau = rejection_threshold(alpha);
  const std::size_t d = model.param_dim(), n = space.size();
  const Vec lp = space.log_probs(model.params());
  const Vec mean_phi = space.mean_phi(model.params());
  std::vector<Vec> grads(n);
  Vec gnorm(n);
  for (std::size_t i = 0; i < n; ++i) {
    grads[i].assign(space.phi(i).begin(), space.phi(i).end());
    axpy(-1.0, mean_phi, grads[i]);
    gnorm[i] = norm(grads[i]);
  }

  TiltingEstimate out;
  out.n_keys = n_keys;
  Vec terms(n_keys);
  Vec logits(n);
  for (std::size_t j = 0; j < n_keys; ++j) {
    const Vec z = sample_gaussian_vector(d, 1.0, rng).values;
    Vec zg(n);
    for (std::size_t i = 0; i < n; ++i) {
      zg[i] = dot(z, grads[i]);
      logits[i] = lp[i] + sigma * zg[i];
    }
    const double log_norm = log_sum_exp(logits);
    double beta = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = std::exp(logits[i] - log_norm);  // p_θ(y) γ(y, ξ)
      total += w;
      const bool accept_null = gnorm[i] <= kNullGradientTolerance || zg[i] / gnorm[i] < tau;
      if (accept_null) beta += w;
    }
    terms[j] = beta;
    out.max_tilt_normalization_error = std::max(out.max_tilt_normalization_error, std::abs(total - 1.0));
  }
  out.beta_tilted = stats::mean(terms);
  out.se_tilted = n_keys > 1 ? stats::standard_error(terms) : 0.0;

  out.n_direct = n_direct;
  std::size_t misses = 0;
  for (std::size_t i = 0; i < n_direct; ++i) {
    const Vec z = sample_gaussian_vector(d, 1.0, rng).values;
    Vec params = model.params();
    axpy(sigma, z, params);
    const Tokens y = sample_sequence(*model.with_params(std::move(params)), prompt, length, rng);
    const Vec g = model.grad_log_prob(prompt, y);
    const double gn = norm(g);
    misses += (gn <= kNullGradientTolerance || dot(z, g) / gn < tau) ? 1 : 0;
  }
  if (n_direct > 0) {
    out.beta_direct = static_cast<double>(misses) / static_cast<double>(n_direct);
    out.se_direct = stats::binomial_se(out.beta_direct, n_direct);
  }
  return out;
}

MeanShiftSummary gaussian_meanshift_psi(std::size_t d, double sigma, std::size_t n, RngStream& rng) {
  if (d < 4) throw InvalidDimension("gaussian_meanshift_psi: need d >= 4");
  if (n < 2) throw InvalidInput("gaussian_meanshift_psi: need at least two samples");
  Vec psi(n);
  Vec z(d), score(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      z[k] = rng.normal();
      score[k] = sigma * z[k] + rng.normal();  // y − θ with y ~ N(θ + σz, I)
    }
    psi[i] = dot(z, score) / norm(score);
  }
  MeanShiftSummary s;
  s.mean_psi = stats::mean(psi);
  s.se_psi = stats::standard_error(psi);
  s.p05_psi = stats::quantile(psi, 0.05);
  s.mean_sigma_psi = sigma * s.mean_psi;
  const double dd = static_cast<double>(d);
  s.lemma_scale = sigma * sigma * std::sqrt(dd) / std::sqrt(1.0 + sigma * sigma);
  s.predicted_mean_psi = sigma * std::sqrt(dd) / std::sqrt(1.0 + sigma * sigma);
  return s;
}

double halfspace_closed_form(std::span<const double> u, double a, double gamma) {
  const double un = norm(u);
  if (!(un > 0.0)) throw DomainError("halfspace: u must be nonzero");
  if (!(gamma >= 0.0)) throw InvalidInput("halfspace: gamma must be nonnegative");
  const double d = static_cast<double>(u.size());
  return std::pow(1.0 + gamma, -d / 2.0) * normal_cdf(std::sqrt(1.0 + gamma) * a / un);
}

HalfspaceResult halfspace_expectation(std::span<const double> u, double a, double gamma, std::size_t n,
                                      RngStream& rng) {
  HalfspaceResult r;
  r.closed_form = halfspace_closed_form(u, a, gamma);
  if (n < 2) throw InvalidInput("halfspace: need at least two samples");
  const std::size_t d = u.size();
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double proj = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double z = rng.normal();
      proj += z * u[k];
      sq += z * z;
    }
    const double v = proj <= a ? std::exp(-0.5 * gamma * sq) : 0.0;
    sum += v;
    sum_sq += v * v;
  }
  const double nn = static_cast<double>(n);
  r.mc_estimate = sum / nn;
  r.mc_se = std::sqrt(std::max(0.0, (sum_sq / nn - r.mc_estimate * r.mc_estimate) / (nn - 1.0)));
  return r;
}

std::vector<KeyAtom> discretize_gaussian(std::size_t d, double sigma, std::size_t atoms, RngStream& rng) {
  if (atoms == 0 || atoms > 64) throw InvalidInput("discretize_gaussian: between 1 and 64 atoms");
  std::vector<KeyAtom> nu(atoms);
  for (auto& atom : nu) {
    atom.weight = 1.0 / static_cast<double>(atoms);
    atom.xi = sample_gaussian_vector(d, sigma, rng).values;
  }
  return nu;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

double joint_kl(const std::vector<KeyAtom>& nu, const std::vector<Vec>& conditionals, std::span<const double> mu) {
  double kl = 0.0;
  for (std::size_t a = 0; a < nu.size(); ++a) kl += nu[a].weight * kl_divergence(conditionals[a], mu);
  return kl;
}

namespace {

// Calls fn on every composition of `total` into `parts` positive integers.
template <typename Fn>
void for_each_composition(std::size_t total, std::size_t parts, std::vector<std::size_t>& cur, Fn&& fn) {
  if (parts == 1) {
    cur.push_back(total);
    fn(cur);
    cur.pop_back();
    return;
  }
  for (std::size_t k = 1; k + (parts - 1) <= total; ++k) {
    cur.push_back(k);
    for_each_composition(total - k, parts - 1, cur, fn);
    cur.pop_back();
  }
}

}  // namespace

KlProjectionReport kl_projection_check(const LinearSoftmaxLM& model, std::span<const Token> prompt, std::size_t length,
                                       const std::vector<KeyAtom>& nu, std::size_t grid_resolution,
                                       std::size_t identity_trials, RngStream& rng) {
  if (nu.empty() || nu.size() > 64) throw InvalidInput("kl_projection_check: key law needs 1 to 64 atoms");
  const SequenceSpace space(model.feature_ptr(), Tokens(prompt.begin(), prompt.end()), length);
  const std::size_t ny = space.size();
  if (ny < 2 || ny > 4) throw InvalidInput("kl_projection_check: response space must have 2 to 4 elements");
  if (grid_resolution < ny) throw InvalidInput("kl_projection_check: grid too coarse");

  double total_weight = 0.0;
  for (const auto& atom : nu) total_weight += atom.weight;
  std::vector<KeyAtom> weights = nu;
  for (auto& atom : weights) atom.weight /= total_weight;

  std::vector<Vec> conditionals;
  KlProjectionReport r;
  r.mu_star.assign(ny, 0.0);
  for (const auto& atom : weights) {
    Vec shifted = model.params();
    axpy(1.0, atom.xi, shifted);
    Vec lp = space.log_probs(shifted);
    for (double& x : lp) x = std::exp(x);
    axpy(atom.weight, lp, r.mu_star);
    conditionals.push_back(std::move(lp));
  }
  r.kl_at_mu_star = joint_kl(weights, conditionals, r.mu_star);

  r.grid_step = 1.0 / static_cast<double>(grid_resolution);
  r.grid_min_kl = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> cur;
  Vec mu(ny);
  for_each_composition(grid_resolution, ny, cur, [&](const std::vector<std::size_t>& c) {
    for (std::size_t i = 0; i < ny; ++i) mu[i] = static_cast<double>(c[i]) * r.grid_step;
    const double kl = joint_kl(weights, conditionals, mu);
    ++r.grid_points;
    if (kl < r.grid_min_kl) {
      r.grid_min_kl = kl;
      r.grid_argmin = mu;
    }
  });
  for (std::size_t i = 0; i < ny; ++i)
    r.argmin_linf_distance = std::max(r.argmin_linf_distance, std::abs(r.grid_argmin[i] - r.mu_star[i]));

  for (std::size_t t = 0; t < identity_trials; ++t) {
    double s = 0.0;
    for (double& x : mu) {
      x = -std::log(rng.uniform());
      s += x;
    }
    for (double& x : mu) x /= s;
    const double lhs = joint_kl(weights, conditionals, mu) - r.kl_at_mu_star;
    const double rhs = kl_divergence(r.mu_star, mu);
    r.max_identity_error = std::max(r.max_identity_error, std::abs(lhs - rhs));
  }
  return r;
}

double log_mgf_chi(std::size_t d, double c) {
  if (d == 0) throw InvalidDimension("log_mgf_chi: d must be positive");
  const double dd = static_cast<double>(d);
  const double log_norm = (dd / 2.0 - 1.0) * std::log(2.0) + std::lgamma(dd / 2.0);
  // Tilted density c r + (d−1) log r − r²/2 peaks at r*; integrate ±40 around it.
  const double mode = 0.5 * (c + std::sqrt(c * c + 4.0 * (dd - 1.0)));
  const double lo = std::max(0.0, mode - 40.0), hi = mode + 40.0;
  const std::size_t steps = 16000;
  const double h = (hi - lo) / static_cast<double>(steps);
  Vec terms;
  terms.reserve(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    const double r = lo + h * static_cast<double>(i);
    if (r <= 0.0 && d > 1) continue;
    const double log_r = d > 1 ? (dd - 1.0) * std::log(r) : 0.0;
    const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);  // Simpson
    terms.push_back(std::log(w * h / 3.0) + c * r + log_r - 0.5 * r * r - log_norm);
  }
  return log_sum_exp(terms);
}

std::optional<std::size_t> log_concave_min_dimension(double eta, double sigma, double alpha, double beta,
                                                     std::size_t max_dimension) {
  if (!(eta > 0.0)) throw InvalidInput("eta must be positive");
  if (!(sigma > 0.0)) throw InvalidInput("sigma must be positive");
  if (!(beta > 0.0 && beta < 1.0)) throw DomainError("beta must lie in (0, 1)");
  const double c = rejection_threshold(alpha) * sigma * std::sqrt(eta);
  const double rate = std::log1p(eta * sigma * sigma);
  auto holds = [&](std::size_t d) {
    return static_cast<double>(d) * rate >= 2.0 * log_mgf_chi(d, c) + 2.0 * std::log(1.0 / beta);
  };
  // The slack is negative at d = 1, decreases, then increases without bound, so
  // {d : holds(d)} is an interval [d*, ∞).
  std::size_t hi = 1;
  while (!holds(hi)) {
    if (hi > max_dimension / 2) return std::nullopt;
    hi *= 2;
  }
  std::size_t lo = hi / 2;  // holds(lo) is false (or lo == 0)
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (holds(mid) ? hi : lo) = mid;
  }
  if (hi > max_dimension) return std::nullopt;
  return hi;
}

LevelPowerEstimate gaussian_location_power(std::size_t d, double eta, double sigma, double alpha, std::size_t n,
                                           std::uint64_t master_seed, std::uint64_t stream_id) {
  if (d == 0) throw InvalidDimension("gaussian_location_power: d must be positive");
  const RngStream parent(master_seed, stream_id);
  const double noise = 1.0 / std::sqrt(eta);
  auto p = parallel_trials(n, [&](std::size_t i) {
    RngStream rng = parent.derive(i);
    double zg = 0.0, gg = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double z = rng.normal();
      // ∇ log p_θ(y) = η (y − θ), y − θ = σz + w/√η.
      const double g = eta * (sigma * z + noise * rng.normal());
      zg += z * g;
      gg += g * g;
    }
    return p_value(zg / std::sqrt(gg));
  });
  return summarize_rejections(std::move(p), alpha);
}

LogConcaveReport log_concave_power_check(double eta, double sigma, double alpha, double beta, std::size_t n,
                                         std::uint64_t master_seed, std::size_t max_testable_dimension) {
  LogConcaveReport r;
  r.required_power = 1.0 - beta;
  const auto bound = log_concave_min_dimension(eta, sigma, alpha, beta);
  if (!bound || *bound > max_testable_dimension) {
    r.bound_dimension = bound.value_or(0);
    return r;
  }
  r.testable = true;
  r.bound_dimension = *bound;
  for (std::size_t mult : {1, 2, 4}) {
    r.dimensions.push_back(mult * *bound);
    r.power.push_back(gaussian_location_power(mult * *bound, eta, sigma, alpha, n, master_seed, mult));
  }
  r.bound_holds = r.power[0].rate >= r.required_power - 3.0 * stats::binomial_se(r.required_power, n);
  r.monotone = true;
  for (std::size_t i = 0; i + 1 < r.power.size(); ++i) {
    const double tol = 2.0 * std::hypot(r.power[i].std_error(), r.power[i + 1].std_error());
    if (r.power[i + 1].rate < r.power[i].rate - tol) r.monotone = false;
  }
  return r;
}

std::size_t robust_level_length(double alpha, double alpha0, double lambda_prime) {
  const double gap = 1.0 - lambda_prime - alpha0;
  if (!(gap > 0.0)) throw DomainError("level condition needs lambda' < 1 - alpha0");
  return static_cast<std::size_t>(std::ceil(std::log(1.0 / alpha) / (2.0 * gap * gap)));
}

std::size_t robust_power_length(double beta, double beta0, double lambda0, double lambda_prime) {
  const double gap = lambda_prime - lambda0 - beta0;
  if (!(gap > 0.0)) throw DomainError("power condition needs lambda' > lambda0 + beta0");
  return static_cast<std::size_t>(std::ceil(2.0 * std::log(1.0 / beta) / ((1.0 - lambda0) * gap * gap)));
}

RobustnessReport robustness_bound_check(const RobustnessSetup& setup, std::uint64_t master_seed) {
  if (!setup.model) throw InvalidInput("robustness check needs a model");
  const LanguageModel& model = *setup.model;
  const std::size_t d = model.param_dim();
  const double tau0 = rejection_threshold(setup.alpha0);
  RobustnessReport r;

  // Token-level miss rate on uncorrupted watermarked tokens.
  std::size_t misses = 0, tokens = 0;
  for (std::size_t s = 0; s < setup.beta0_sequences; ++s) {
    const TokenKeyChain chain = make_key_chain(setup.beta0_length, d, setup.sigma, master_seed, hash_combine(1, s));
    RngStream rng(master_seed, hash_combine(2, s));
    const Tokens y = robust_generate(model, chain, Tokens{}, rng);
    for (double g : per_token_statistics(model, chain, Tokens{}, y).gammas) {
      misses += g < tau0 ? 1 : 0;
      ++tokens;
    }
  }
  r.beta0_hat = static_cast<double>(misses) / static_cast<double>(tokens);
  r.beta0_upper = stats::wilson_interval(misses, tokens).upper;

  const double low = setup.lambda0 + r.beta0_upper, high = 1.0 - setup.alpha0;
  if (!(low < high)) return r;
  r.feasible = true;
  r.lambda_prime = 0.5 * (low + high);
  r.k_level = robust_level_length(setup.alpha, setup.alpha0, r.lambda_prime);
  r.k_power = robust_power_length(setup.beta, r.beta0_upper, setup.lambda0, r.lambda_prime);
  r.k = std::max(r.k_level, r.k_power);

  const AttackSpec substitutions{AttackKind::Substitute, AttackLocus::Random, setup.lambda0};
  auto run = [&](bool watermarked, std::uint64_t tag) {
    auto p = parallel_trials(setup.trials, [&](std::size_t i) {
      const TokenKeyChain chain = make_key_chain(r.k, d, setup.sigma, master_seed, hash_combine(tag, i));
      RngStream rng(master_seed, hash_combine(tag + 1, i));
      Tokens y = watermarked ? robust_generate(model, chain, Tokens{}, rng) : sample_sequence(model, Tokens{}, r.k, rng);
      y = corrupt(y, substitutions, model.vocab_size(), rng).tokens;
      const auto report = robust_detect(model, chain, Tokens{}, y, setup.alpha0, r.lambda_prime);
      // Encode the decision as a p-value-like flag: 0 rejects at any α, 1 never does.
      return report.decision == Decision::Reject ? 0.0 : 1.0;
    });
    return summarize_rejections(std::move(p), 0.5);
  };
  r.null_rate = run(false, 10);
  r.alt_rate = run(true, 20);
  const auto n = setup.trials;
  r.level_holds = r.null_rate.rate <= setup.alpha + 3.0 * stats::binomial_se(setup.alpha, n);
  r.power_holds = r.alt_rate.rate >= 1.0 - setup.beta - 3.0 * stats::binomial_se(1.0 - setup.beta, n);
  return r;
}

Vec log_sigma_grid(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0 && hi > lo) || points < 2) throw InvalidInput("log_sigma_grid: need 0 < lo < hi and >= 2 points");
  Vec g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(points - 1));
  return g;
}

double gradient_condition_number(const Matrix& gradients) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = 0; i < gradients.rows(); ++i) {
    const double n = norm(gradients.row(i));
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  if (gradients.rows() == 0) throw EmptyInput("gradient_condition_number: no gradients");
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

CorollaryReport corollary_quantile_gap(const Matrix& gradients, double alpha_tilde, double alpha, const Vec& sigma_grid,
                                       std::size_t n_keys, RngStream& rng) {
  if (gradients.rows() < 2) throw InvalidInput("corollary check needs at least two responses");
  if (!(alpha_tilde > 0.0 && alpha_tilde < 1.0)) throw DomainError("alpha_tilde must lie in (0, 1)");
  if (n_keys == 0 || sigma_grid.empty()) throw InvalidInput("corollary check needs keys and a sigma grid");
  const double tau = rejection_threshold(alpha);
  const std::size_t ny = gradients.rows(), d = gradients.cols();

  CorollaryReport r;
  r.n_responses = ny;
  r.n_keys = n_keys;
  r.sigma_grid = sigma_grid;
  Vec norms(ny);
  for (std::size_t i = 0; i < ny; ++i) norms[i] = norm(gradients.row(i));
  r.condition_number = gradient_condition_number(gradients);

  Vec q(n_keys), dots(ny);
  for (std::size_t j = 0; j < n_keys; ++j) {
    const Vec z = sample_gaussian_vector(d, 1.0, rng).values;
    for (std::size_t i = 0; i < ny; ++i) dots[i] = dot(gradients.row(i), z);
    q[j] = stats::quantile(dots, 1.0 - alpha_tilde);
  }
  r.mean_quantile = stats::mean(q);

  double best = -std::numeric_limits<double>::infinity();
  Vec a(n_keys), b(ny);
  for (double s : sigma_grid) {
    for (std::size_t j = 0; j < n_keys; ++j) a[j] = -s * q[j];
    for (std::size_t i = 0; i < ny; ++i) b[i] = s * tau * norms[i];
    const double value = (log_mean_exp(a) + log_mean_exp(b)) / s;
    r.log_mgf_over_sigma.push_back(value);
    if (value > best) {
      best = value;
      r.best_sigma = s;
    }
  }
  r.lambda = -best;
  r.condition_holds = r.lambda > 0.0;
  return r;
}

Matrix sample_gradients(const LanguageModel& model, std::span<const Token> prompt, std::size_t length, std::size_t n,
                        RngStream& rng) {
  Matrix g(n, model.param_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const Tokens y = sample_sequence(model, prompt, length, rng);
    const Vec row = model.grad_log_prob(prompt, y);
    std::copy(row.begin(), row.end(), g.row(i).begin());
  }
  return g;
}

Matrix annulus_gradients(std::size_t d, std::size_t n, double r, double R, RngStream& rng) {
  if (!(r >= 0.0 && R >= r)) throw InvalidInput("annulus_gradients: need 0 <= r <= R");
  Matrix g(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    Vec v = sample_gaussian_vector(d, 1.0, rng).values;
    const double scale = (r + (R - r) * rng.uniform()) / norm(v);
    for (std::size_t k = 0; k < d; ++k) g(i, k) = scale * v[k];
  }
  return g;
}

CorollaryReport estimate_corollary_quantile_gap(const TrialSetup& setup, double alpha_tilde, double alpha,
                                                double beta, std::size_t n_responses, std::size_t n_keys,
                                                std::size_t power_trials, std::uint64_t master_seed) {
  validate_setup(setup);
  RngStream rng(master_seed, 0x434F524FULL);
  Matrix grads = sample_gradients(*setup.model, setup.prompt, setup.length, n_responses, rng);
  CorollaryReport r = corollary_quantile_gap(grads, alpha_tilde, alpha, log_sigma_grid(), n_keys, rng);
  if (!r.condition_holds) return r;
  r.sigma_required = std::log(1.0 / (alpha_tilde * beta)) / r.lambda;
  TrialSetup at_bound = setup;
  at_bound.sigma = *r.sigma_required;
  r.power = estimate_power(at_bound, power_trials, alpha, master_seed, 0x504F5745ULL);
  r.power_holds = r.power->rate >= 1.0 - beta - 3.0 * stats::binomial_se(1.0 - beta, power_trials);
  return r;
}

}  // namespace gaussmark::theory
