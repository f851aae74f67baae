#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gaussmark/theory.hpp"

using namespace gaussmark;
using namespace gaussmark::theory;

namespace {

std::shared_ptr<const LinearSoftmaxLM> linear(int vocab, std::size_t dim, int window, std::uint64_t seed,
                                              double theta_scale = 1.0) {
  return make_linear_model({{"kind", "linear"},
                            {"vocab", vocab},
                            {"dim", dim},
                            {"context_window", window},
                            {"feature_seed", seed},
                            {"theta_seed", seed + 1},
                            {"theta_scale", theta_scale}});
}

bool within(double x, double target, double tol) { return std::abs(x - target) <= tol; }

}  // namespace

TEST_CASE("summarize rejections") {
  auto e = summarize_rejections({0.01, 0.2, 0.05, 0.9}, 0.05, 42);
  CHECK(e.n_trials == 4);
  CHECK(e.rejections == 2);
  CHECK(e.rate == doctest::Approx(0.5));
  CHECK(e.wilson.lower <= e.rate);
  CHECK(e.wilson.upper >= e.rate);
  CHECK(e.config_hash == 42);
  CHECK_THROWS_AS(summarize_rejections({0.1}, 1.5), DomainError);
}

TEST_CASE("level holds for several null sources") {
  TrialSetup setup{linear(32, 64, 2, 5), {1, 2}, 24, 0.1, nullptr, std::nullopt};
  const std::size_t n = 2000;
  const double band = 3.0 * stats::binomial_se(0.05, n);
  std::vector<double> rates;
  for (auto q : {NullSource::UniformTokens, NullSource::ModelSamples, NullSource::ConstantSequence}) {
    auto e = estimate_level(setup, q, n, 0.05, 11, static_cast<std::uint64_t>(q));
    INFO(to_string(q), " rate ", e.rate);
    CHECK(within(e.rate, 0.05, band));
    CHECK(stats::ks_uniform(e.p_values) < 1.36 * 1.2 / std::sqrt(static_cast<double>(n)));
    rates.push_back(e.rate);
  }
  CHECK(std::abs(rates[0] - rates[1]) <= 2.0 * band);
  CHECK(std::abs(rates[1] - rates[2]) <= 2.0 * band);

  auto half = estimate_level(setup, NullSource::UniformTokens, 1000, 0.5, 12);
  CHECK(within(half.rate, 0.5, 3.0 * stats::binomial_se(0.5, 1000)));

  CHECK(parse_null_source("model") == NullSource::ModelSamples);
  CHECK_THROWS_AS(parse_null_source("other"), FormatError);
}

TEST_CASE("zero sigma power equals level") {
  TrialSetup setup{linear(32, 64, 2, 6), {}, 24, 0.0, nullptr, std::nullopt};
  auto e = estimate_power(setup, 2000, 0.05, 13);
  CHECK(within(e.rate, 0.05, 3.0 * stats::binomial_se(0.05, 2000)));
}

TEST_CASE("power grows with response length") {
  TrialSetup setup{linear(32, 256, 2, 7), {}, 16, 0.1, nullptr, std::nullopt};
  auto short_run = estimate_power(setup, 300, 0.05, 14);
  setup.length = 128;
  auto long_run = estimate_power(setup, 300, 0.05, 14);
  INFO(short_run.rate, " ", long_run.rate);
  CHECK(long_run.rate >= short_run.rate - 2.0 * std::hypot(short_run.std_error(), long_run.std_error()));
  CHECK(stats::median(long_run.p_values) < stats::median(short_run.p_values));
}

TEST_CASE("trial is deterministic per stream and handles attacks") {
  TrialSetup setup{linear(16, 32, 1, 8), {3}, 20, 0.5, nullptr, AttackSpec{AttackKind::Delete, AttackLocus::Random, 1.0}};
  auto a = watermark_trial(setup, RngStream(1, 2));
  CHECK(a.response_length == 0);
  CHECK(a.attack_edits == 20);
  CHECK(a.null_gradient);
  CHECK(a.p_value == 1.0);
  setup.attack.reset();
  auto b = watermark_trial(setup, RngStream(1, 2));
  auto c = watermark_trial(setup, RngStream(1, 2));
  CHECK(b.psi == c.psi);
  CHECK(b.p_value == c.p_value);
  CHECK(b.response_length == 20);
}

TEST_CASE("tilted beta") {
  auto model = linear(4, 8, 0, 9);
  RngStream rng(21, 0);
  SUBCASE("agrees with direct simulation") {
    auto t = tilted_beta(*model, Tokens{}, 2, 1.0, 0.05, 2000, 4000, rng);
    INFO(t.beta_tilted, " +- ", t.se_tilted, " vs ", t.beta_direct, " +- ", t.se_direct);
    CHECK(std::abs(t.beta_tilted - t.beta_direct) <= 3.0 * (t.se_tilted + t.se_direct));
    CHECK(t.max_tilt_normalization_error < 1e-10);
    CHECK(t.beta_tilted >= 0.0);
    CHECK(t.beta_tilted <= 1.0);
  }
  SUBCASE("no tilt gives one minus alpha") {
    auto t = tilted_beta(*model, Tokens{}, 2, 0.0, 0.05, 4000, 0, rng);
    CHECK(within(t.beta_tilted, 0.95, 3.0 * t.se_tilted + 1e-12));
  }
  SUBCASE("context features rejected") {
    CHECK_THROWS_AS(tilted_beta(*linear(4, 8, 1, 9), Tokens{}, 2, 1.0, 0.05, 10, 10, rng), InvalidInput);
  }
  SUBCASE("too large to enumerate") {
    CHECK_THROWS_AS(tilted_beta(*linear(256, 8, 0, 9), Tokens{}, 3, 1.0, 0.05, 10, 10, rng), BudgetError);
  }
}

TEST_CASE("gaussian mean shift") {
  RngStream rng(22, 0);
  auto null = gaussian_meanshift_psi(64, 0.0, 4000, rng);
  CHECK(within(null.mean_psi, 0.0, 3.0 * null.se_psi));

  double prev = -1e9;
  for (std::size_t d : {16, 256, 4096}) {
    auto s = gaussian_meanshift_psi(d, 0.1, 1000, rng);
    CHECK(s.mean_psi > prev);
    prev = s.mean_psi;
  }
  for (auto [d, sigma] : {std::pair<std::size_t, double>{1024, 0.1}, {4096, 0.05}}) {
    auto s = gaussian_meanshift_psi(d, sigma, 1000, rng);
    const double ratio = s.mean_sigma_psi / s.lemma_scale;
    INFO(d, " ", sigma, " ratio ", ratio);
    CHECK(ratio >= 0.5);
    CHECK(ratio <= 2.0);
    CHECK(within(s.mean_psi, s.predicted_mean_psi, 4.0 * s.se_psi + 0.05));
  }
  CHECK_THROWS_AS(gaussian_meanshift_psi(3, 0.1, 10, rng), InvalidDimension);
}

TEST_CASE("gaussian halfspace") {
  const Vec u{1.0, 0.0};
  CHECK(halfspace_closed_form(u, 0.0, 1.0) == doctest::Approx(0.25).epsilon(1e-14));
  const Vec v{3.0, 4.0};
  CHECK(halfspace_closed_form(v, 2.0, 0.0) == doctest::Approx(normal_cdf(0.4)).epsilon(1e-14));
  CHECK_THROWS_AS(halfspace_closed_form(Vec{0.0, 0.0}, 1.0, 1.0), DomainError);

  RngStream rng(23, 0);
  for (int c = 0; c < 5; ++c) {
    const std::size_t d = 1 + rng.below(8);
    Vec w = sample_gaussian_vector(d, 1.0, rng).values;
    const double scale = (0.5 + 1.5 * rng.uniform()) / norm(w);
    for (double& x : w) x *= scale;
    const double a = 2.0 * rng.uniform() - 1.0;
    const double gamma = rng.uniform();
    auto r = halfspace_expectation(w, a, gamma, 100000, rng);
    INFO(r.closed_form, " vs ", r.mc_estimate, " se ", r.mc_se);
    CHECK(std::abs(r.closed_form - r.mc_estimate) <= 3.0 * r.mc_se);
  }
}

TEST_CASE("kl projection") {
  auto model = linear(3, 6, 0, 10);
  RngStream rng(24, 0);
  SUBCASE("point mass at zero") {
    std::vector<KeyAtom> nu{{1.0, Vec(6, 0.0)}};
    auto r = kl_projection_check(*model, Tokens{}, 1, nu, 30, 5, rng);
    const SequenceSpace space(model->feature_ptr(), Tokens{}, 1);
    const Vec lp = space.log_probs(model->params());
    for (std::size_t i = 0; i < 3; ++i) CHECK(r.mu_star[i] == doctest::Approx(std::exp(lp[i])).epsilon(1e-12));
    CHECK(std::abs(r.kl_at_mu_star) < 1e-14);
    CHECK(r.grid_min_kl >= -1e-14);
  }
  SUBCASE("two atoms") {
    auto nu = discretize_gaussian(6, 1.0, 2, rng);
    auto r = kl_projection_check(*model, Tokens{}, 1, nu, 60, 20, rng);
    CHECK(r.argmin_linf_distance <= r.grid_step + 1e-12);
    CHECK(r.kl_at_mu_star <= r.grid_min_kl + 1e-12);
    CHECK(r.max_identity_error < 1e-10);
    CHECK(r.grid_points == 59 * 58 / 2);
  }
  SUBCASE("response space too large") {
    std::vector<KeyAtom> nu{{1.0, Vec(6, 0.0)}};
    CHECK_THROWS_AS(kl_projection_check(*model, Tokens{}, 2, nu, 30, 0, rng), InvalidInput);
  }
  CHECK(kl_divergence(Vec{0.5, 0.5}, Vec{0.5, 0.5}) == 0.0);
  CHECK(std::isinf(kl_divergence(Vec{0.5, 0.5}, Vec{1.0, 0.0})));
}

TEST_CASE("chi moment generating function") {
  for (double c : {0.0, 0.3, 2.0}) {
    // |Z| for d = 1 has E e^{c|Z|} = 2 e^{c²/2} Φ(c).
    CHECK(log_mgf_chi(1, c) == doctest::Approx(std::log(2.0 * normal_cdf(c)) + 0.5 * c * c).epsilon(1e-9));
  }
  CHECK(std::abs(log_mgf_chi(500, 0.0)) < 1e-9);
  // d = 2: Rayleigh, E e^{cR} = 1 + c e^{c²/2} √(2π) Φ(c).
  const double c = 0.7;
  CHECK(log_mgf_chi(2, c) ==
        doctest::Approx(std::log1p(c * std::exp(0.5 * c * c) * std::sqrt(2.0 * M_PI) * normal_cdf(c))).epsilon(1e-9));
  RngStream rng(25, 0);
  const std::size_t d = 50, n = 40000;
  Vec vals(n);
  for (auto& v : vals) v = std::exp(0.3 * norm(sample_gaussian_vector(d, 1.0, rng).values));
  const double m = stats::mean(vals);
  CHECK(std::abs(std::exp(log_mgf_chi(d, 0.3)) - m) <= 3.0 * stats::standard_error(vals));
}

TEST_CASE("log-concave dimension bound") {
  auto d = log_concave_min_dimension(1.0, 0.2, 0.1, 0.1);
  REQUIRE(d.has_value());
  const double tau = rejection_threshold(0.1);
  auto slack = [&](std::size_t k) {
    return static_cast<double>(k) * std::log(1.04) - 2.0 * log_mgf_chi(k, tau * 0.2) - 2.0 * std::log(10.0);
  };
  CHECK(slack(*d) >= 0.0);
  CHECK(slack(*d - 1) < 0.0);
  CHECK(*d > 300);
  CHECK(*d < 450);

  auto tiny = log_concave_power_check(1.0, 1e-4, 0.1, 0.1, 100, 1);
  CHECK_FALSE(tiny.testable);
  CHECK(tiny.bound_dimension > 1000000);

  auto r = log_concave_power_check(1.0, 0.2, 0.1, 0.1, 2000, 26);
  REQUIRE(r.testable);
  INFO(r.power[0].rate, " ", r.power[1].rate, " ", r.power[2].rate);
  CHECK(r.bound_holds);
  CHECK(r.monotone);
  CHECK(r.dimensions[1] == 2 * r.dimensions[0]);
}

TEST_CASE("robust detector sizing") {
  // λ0 = 0 reduces the power condition to 2 log(1/β)/(λ' − β0)².
  CHECK(robust_power_length(0.05, 0.1, 0.0, 0.5) == static_cast<std::size_t>(std::ceil(2.0 * std::log(20.0) / 0.16)));
  CHECK(robust_level_length(0.05, 0.05, 0.6) == static_cast<std::size_t>(std::ceil(std::log(20.0) / (2.0 * 0.35 * 0.35))));
  CHECK_THROWS_AS(robust_level_length(0.05, 0.5, 0.6), DomainError);

  auto model = make_linear_model(
      {{"kind", "linear"}, {"vocab", 256}, {"dim", 64}, {"context_window", 0}, {"theta_scale", 0.1}});
  RobustnessSetup setup;
  setup.model = model;
  setup.beta0_sequences = 10;
  setup.trials = 300;
  auto r = robustness_bound_check(setup, 27);
  INFO("beta0 ", r.beta0_hat, " K ", r.k, " fpr ", r.null_rate.rate, " tpr ", r.alt_rate.rate);
  REQUIRE(r.feasible);
  CHECK(r.lambda_prime >= setup.lambda0 + r.beta0_upper);
  CHECK(r.lambda_prime <= 1.0 - setup.alpha0);
  CHECK(r.k == std::max(r.k_level, r.k_power));
  CHECK(r.level_holds);
  CHECK(r.power_holds);

  setup.alpha0 = 0.9;
  auto infeasible = robustness_bound_check(setup, 27);
  CHECK_FALSE(infeasible.feasible);
  CHECK(infeasible.k == 0);
}

TEST_CASE("quantile gap condition") {
  RngStream rng(28, 0);
  const Vec grid = log_sigma_grid();
  CHECK(grid.size() == 25);
  CHECK(grid.front() == doctest::Approx(1e-3));
  CHECK(grid.back() == doctest::Approx(10.0));

  auto zero = corollary_quantile_gap(Matrix(50, 16), 0.005, 0.05, grid, 20, rng);
  CHECK(zero.mean_quantile == 0.0);
  CHECK_FALSE(zero.condition_holds);

  auto annulus = annulus_gradients(1024, 2000, 1.0, 2.0, rng);
  CHECK(gradient_condition_number(annulus) <= 2.0);
  auto r = corollary_quantile_gap(annulus, 0.005, 0.05, grid, 50, rng);
  INFO("lambda ", r.lambda, " best sigma ", r.best_sigma);
  CHECK(r.condition_holds);
  CHECK(r.lambda > 0.0);

  Matrix g(2, 2);
  g(0, 0) = 1.0;
  g(1, 1) = 3.0;
  CHECK(gradient_condition_number(g) == doctest::Approx(3.0));
}

TEST_CASE("quantile gap power check on the linear model") {
  TrialSetup setup{linear(32, 1024, 2, 12), {1, 2}, 16, 0.1, nullptr, std::nullopt};
  auto r = estimate_corollary_quantile_gap(setup, 0.005, 0.05, 0.1, 1000, 50, 200, 29);
  INFO("lambda ", r.lambda, " condition number ", r.condition_number);
  REQUIRE(r.condition_holds);
  REQUIRE(r.sigma_required.has_value());
  CHECK(*r.sigma_required == doctest::Approx(std::log(1.0 / (0.005 * 0.1)) / r.lambda));
  CHECK(r.power_holds);
  CHECK(r.condition_number >= 1.0);
}
