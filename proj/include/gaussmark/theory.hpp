#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "gaussmark/attacks.hpp"
#include "gaussmark/sequence_space.hpp"
#include "gaussmark/stats.hpp"
#include "gaussmark/watermark.hpp"

namespace gaussmark::theory {

struct LevelPowerEstimate {
  std::size_t n_trials = 0;
  std::size_t rejections = 0;
  double rate = 0.0;
  stats::Interval wilson;
  std::uint64_t config_hash = 0;
  // Per-trial p-values, in trial order.
  Vec p_values;

  double std_error() const { return stats::binomial_se(rate, n_trials); }
};

LevelPowerEstimate summarize_rejections(Vec p_values, double alpha, std::uint64_t config_hash = 0);

// One watermark trial: the key direction z ~ N(0, I) (projected when a
// projector is given), generation from θ + σz, optional attack, detection with
// ψ = <z, g>/‖g‖. This equals <ξ, g>/(σ‖g‖) for σ > 0 and stays defined at σ = 0.
struct TrialSetup {
  ModelPtr model;
  Tokens prompt;
  std::size_t length = 32;
  double sigma = 0.1;
  std::shared_ptr<const SubspaceProjector> projector;
  std::optional<AttackSpec> attack;
};

struct TrialRecord {
  double psi = 0.0;
  double p_value = 1.0;
  double grad_norm = 0.0;
  bool null_gradient = false;
  std::size_t response_length = 0;
  std::size_t attack_edits = 0;
};

TrialRecord watermark_trial(const TrialSetup& setup, RngStream rng);

enum class NullSource { UniformTokens, ModelSamples, ConstantSequence };
std::string to_string(NullSource q);
NullSource parse_null_source(const std::string& s);

// Null trial: y drawn from q independently of the key.
TrialRecord null_trial(const TrialSetup& setup, NullSource q, RngStream rng);

// Trials i = 0..n-1 run on streams RngStream(master_seed, stream_id).derive(i).
LevelPowerEstimate estimate_level(const TrialSetup& setup, NullSource q, std::size_t n, double alpha,
                                  std::uint64_t master_seed, std::uint64_t stream_id = 0);
LevelPowerEstimate estimate_power(const TrialSetup& setup, std::size_t n, double alpha, std::uint64_t master_seed,
                                  std::uint64_t stream_id = 0);

// β = E[γ(y, ξ) 1{ψ ≤ τ_α}] with the tilt γ summed exactly over all responses
// for each of `n_keys` keys, against direct simulation (generate from θ + ξ,
// detect) over `n_direct` trials. Needs context-free features so that the
// autoregressive sampler draws from the sequence-level model.
struct TiltingEstimate {
  double beta_tilted = 0.0;
  double se_tilted = 0.0;
  double beta_direct = 0.0;
  double se_direct = 0.0;
  std::size_t n_keys = 0;
  std::size_t n_direct = 0;
  // max over keys of |Σ_y p_θ(y) γ(y, ξ) − 1|.
  double max_tilt_normalization_error = 0.0;
};

TiltingEstimate tilted_beta(const LinearSoftmaxLM& model, std::span<const Token> prompt, std::size_t length,
                            double sigma, double alpha, std::size_t n_keys, std::size_t n_direct, RngStream& rng);

// ψ under the alternative for the Gaussian location model p_θ = N(θ, I_d),
// whose score is y − θ.
struct MeanShiftSummary {
  double mean_psi = 0.0;
  double se_psi = 0.0;
  double p05_psi = 0.0;
  // Mean of σψ = <ξ, ∇>/‖∇‖.
  double mean_sigma_psi = 0.0;
  // σ²√d / √(1 + σ²).
  double lemma_scale = 0.0;
  // σ√d / √(1 + σ²), the leading-order mean of ψ.
  double predicted_mean_psi = 0.0;
};

MeanShiftSummary gaussian_meanshift_psi(std::size_t d, double sigma, std::size_t n, RngStream& rng);

// E[1{<Z,u> ≤ a} e^{−γ‖Z‖²/2}] for Z ~ N(0, I_d): closed form (1+γ)^{−d/2} Φ(√(1+γ) a/‖u‖) and Monte-Carlo.
struct HalfspaceResult {
  double closed_form = 0.0;
  double mc_estimate = 0.0;
  double mc_se = 0.0;
};

double halfspace_closed_form(std::span<const double> u, double a, double gamma);
HalfspaceResult halfspace_expectation(std::span<const double> u, double a, double gamma, std::size_t n,
                                      RngStream& rng);

// KL projection of the watermarked joint law ν ⊗ p_{θ+ξ} onto product laws ν ⊗ μ
// over an enumerable response space.
struct KeyAtom {
  double weight = 0.0;
  Vec xi;
};

// `atoms` equally weighted draws from N(0, σ² I_d).
std::vector<KeyAtom> discretize_gaussian(std::size_t d, double sigma, std::size_t atoms, RngStream& rng);

struct KlProjectionReport {
  Vec mu_star;
  Vec grid_argmin;
  double kl_at_mu_star = 0.0;
  double grid_min_kl = 0.0;
  double grid_step = 0.0;
  double argmin_linf_distance = 0.0;
  // max over random μ of |[KL(H‖ν⊗μ) − KL(H‖ν⊗μ*)] − KL(μ*‖μ)|.
  double max_identity_error = 0.0;
  std::size_t grid_points = 0;
};

// KL(H_A ‖ ν ⊗ μ) for joint H_A(ξ, y) = ν(ξ) p_{θ+ξ}(y).
double joint_kl(const std::vector<KeyAtom>& nu, const std::vector<Vec>& conditionals, std::span<const double> mu);
double kl_divergence(std::span<const double> p, std::span<const double> q);

KlProjectionReport kl_projection_check(const LinearSoftmaxLM& model, std::span<const Token> prompt, std::size_t length,
                                       const std::vector<KeyAtom>& nu, std::size_t grid_resolution,
                                       std::size_t identity_trials, RngStream& rng);

// Power bound for the Gaussian family N(θ, I_d/η) (η-strongly log-concave):
// the smallest d with d log(1 + ησ²) ≥ 2 log E e^{τ_α σ ‖∇‖} + 2 log(1/β),
// where ‖∇‖ = √η ‖Z‖ and the expectation is a 1-D integral over the chi law.
double log_mgf_chi(std::size_t d, double c);
std::optional<std::size_t> log_concave_min_dimension(double eta, double sigma, double alpha, double beta,
                                                     std::size_t max_dimension = std::size_t{1} << 40);

LevelPowerEstimate gaussian_location_power(std::size_t d, double eta, double sigma, double alpha, std::size_t n,
                                           std::uint64_t master_seed, std::uint64_t stream_id = 0);

struct LogConcaveReport {
  bool testable = false;
  std::size_t bound_dimension = 0;
  double required_power = 0.0;
  std::vector<std::size_t> dimensions;
  std::vector<LevelPowerEstimate> power;
  bool bound_holds = false;
  bool monotone = false;
};

// Runs the power check at the bound and at 2x, 4x of it; bounds above
// `max_testable_dimension` are reported untestable without running.
LogConcaveReport log_concave_power_check(double eta, double sigma, double alpha, double beta, std::size_t n,
                                         std::uint64_t master_seed, std::size_t max_testable_dimension = 1000000);

// Robust quantile detector sizing and validation.
struct RobustnessSetup {
  ModelPtr model;
  double sigma = 4.0;
  double alpha = 0.05;
  double beta = 0.05;
  double alpha0 = 0.05;
  double lambda0 = 0.2;
  std::size_t beta0_sequences = 50;
  std::size_t beta0_length = 200;
  std::size_t trials = 2000;
};

struct RobustnessReport {
  bool feasible = false;
  double beta0_hat = 0.0;
  double beta0_upper = 0.0;
  double lambda_prime = 0.0;
  std::size_t k_level = 0;
  std::size_t k_power = 0;
  std::size_t k = 0;
  LevelPowerEstimate null_rate;
  LevelPowerEstimate alt_rate;
  bool level_holds = false;
  bool power_holds = false;
};

std::size_t robust_level_length(double alpha, double alpha0, double lambda_prime);
std::size_t robust_power_length(double beta, double beta0, double lambda0, double lambda_prime);

RobustnessReport robustness_bound_check(const RobustnessSetup& setup, std::uint64_t master_seed);

// Quantile condition on the spread of gradient norms:
//   Λ = −max_σ (1/σ) log E exp(σ τ_α ‖∇‖ − Γ̃(ξ)),
// Γ̃(ξ) = σ q(z) the (1 − α̃) quantile over y of <ξ, ∇>. The expectation factorizes
// into E_z e^{−σ q(z)} · E_y e^{σ τ_α ‖∇_y‖}; σ runs over a log grid.
struct CorollaryReport {
  double lambda = 0.0;
  bool condition_holds = false;
  double best_sigma = 0.0;
  Vec sigma_grid;
  Vec log_mgf_over_sigma;
  double mean_quantile = 0.0;
  double condition_number = 0.0;
  std::size_t n_responses = 0;
  std::size_t n_keys = 0;
  // Filled when the power check runs.
  std::optional<double> sigma_required;
  std::optional<LevelPowerEstimate> power;
  bool power_holds = false;
};

Vec log_sigma_grid(double lo = 1e-3, double hi = 10.0, std::size_t points = 25);

// Gradients are rows of `gradients`.
CorollaryReport corollary_quantile_gap(const Matrix& gradients, double alpha_tilde, double alpha, const Vec& sigma_grid,
                                       std::size_t n_keys, RngStream& rng);

// Response gradients for T-token samples from the model.
Matrix sample_gradients(const LanguageModel& model, std::span<const Token> prompt, std::size_t length, std::size_t n,
                        RngStream& rng);

// Gradients with uniformly random directions and norms uniform in [r, R].
Matrix annulus_gradients(std::size_t d, std::size_t n, double r, double R, RngStream& rng);

CorollaryReport estimate_corollary_quantile_gap(const TrialSetup& setup, double alpha_tilde, double alpha,
                                                double beta, std::size_t n_responses, std::size_t n_keys,
                                                std::size_t power_trials, std::uint64_t master_seed);

// max ‖∇‖ / min ‖∇‖ over sampled responses.
double gradient_condition_number(const Matrix& gradients);

}  // namespace gaussmark::theory
