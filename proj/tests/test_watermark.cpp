#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "gaussmark/stats.hpp"
#include "gaussmark/watermark.hpp"

using namespace gaussmark;

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

// Key with exactly the given values.
WatermarkKey key_of(Vec xi, double sigma) { return key_from_values(std::move(xi), sigma); }

}  // namespace

TEST_CASE("perturb") {
  RngStream rng(1, 1);
  const Vec theta = sample_gaussian_vector(64, 1.0, rng).values;
  CHECK(perturb(theta, key_of(Vec(64, 0.0), 1.0)) == theta);
  const WatermarkKey key = make_key(64, 0.3, 5, 6);
  WatermarkKey neg = key;
  for (double& x : neg.xi) x = -x;
  const Vec back = perturb(perturb(theta, key), neg);
  for (std::size_t i = 0; i < theta.size(); ++i) CHECK(std::abs(back[i] - theta[i]) <= 1e-15);
  Vec diff = perturb(theta, key);
  axpy(-1.0, theta, diff);
  CHECK(norm(diff) == doctest::Approx(norm(key.xi)).epsilon(1e-14));
  CHECK_THROWS_AS(perturb(theta, make_key(63, 0.3, 5, 6)), DimensionError);
  CHECK_THROWS_AS(make_key(8, 0.0, 1, 1), InvalidInput);
}

TEST_CASE("generate") {
  auto m = linear(4, 8, 2, 3, 1.0);
  const WatermarkKey zero = key_of(Vec(8, 0.0), 0.0);
  RngStream a(2, 2), b(2, 2);
  CHECK(generate(*m, zero, Tokens{1}, 40, a) == sample_sequence(*m, Tokens{1}, 40, b));
  const WatermarkKey key = make_key(8, 0.8, 9, 9);
  RngStream c(3, 3), d(3, 3);
  CHECK(generate(*m, key, Tokens{1}, 40, c) == generate(*m, key, Tokens{1}, 40, d));
  CHECK_THROWS_AS(generate(*m, key, Tokens{1}, 0, c), InvalidInput);

  SUBCASE("frequencies match the perturbed model") {
    const Vec shifted = perturb(m->params(), key);
    const std::size_t n = 100000;
    std::map<std::pair<Token, Token>, std::size_t> counts;
    RngStream rng(4, 4);
    for (std::size_t i = 0; i < n; ++i) {
      const Tokens y = generate(*m, key, Tokens{0}, 2, rng);
      ++counts[{y[0], y[1]}];
    }
    for (Token u = 0; u < 4; ++u)
      for (Token v = 0; v < 4; ++v) {
        const double p = m->next_token_dist_at(shifted, Tokens{0})[static_cast<std::size_t>(u)] *
                         m->next_token_dist_at(shifted, Tokens{0, u})[static_cast<std::size_t>(v)];
        const double freq = static_cast<double>(counts[{u, v}]) / static_cast<double>(n);
        CHECK(std::abs(freq - p) <= 4 * stats::binomial_se(p, n));
      }
  }
}

TEST_CASE("test statistic") {
  auto m = linear(32, 128, 2, 5);
  RngStream rng(6, 6);
  const Tokens prompt{3, 4};
  const Tokens y = sample_sequence(*m, prompt, 20, rng);
  const Vec g = m->grad_log_prob(prompt, y);
  const double sigma = 0.7;

  Vec orth = sample_gaussian_vector(128, sigma, rng).values;
  axpy(-dot(orth, g) / dot(g, g), g, orth);
  CHECK(std::abs(test_statistic(*m, key_of(orth, sigma), prompt, y)) <= 1e-12);

  const WatermarkKey aligned = key_of(scaled(g, sigma / norm(g)), sigma);
  CHECK(std::abs(test_statistic(*m, aligned, prompt, y) - 1.0) <= 1e-14);

  Vec psi(10000);
  for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = alignment_statistic(make_key(128, sigma, 11, i).xi, sigma, g);
  CHECK(stats::ks_standard_normal(psi) < 0.02);

  SUBCASE("normalization invariance and key-scale equivariance") {
    const WatermarkKey key = make_key(128, sigma, 12, 0);
    const double base = alignment_statistic(key.xi, sigma, g);
    for (double c : {1e-6, 0.5, 3.0, 1e6}) {
      CHECK(alignment_statistic(key.xi, sigma, scaled(g, c)) == doctest::Approx(base).epsilon(1e-12));
      CHECK(alignment_statistic(scaled(key.xi, c), c * sigma, g) == doctest::Approx(base).epsilon(1e-12));
    }
  }

  SUBCASE("null gradient") {
    auto base = linear(32, 64, 0, 7);
    auto atom = base->with_params(scaled(base->features().feature(0, 2), 1e3));
    const WatermarkKey key = make_key(64, 0.5, 1, 1);
    const Tokens yy(5, 2);
    CHECK_THROWS_AS(test_statistic(*atom, key, Tokens{}, yy), NullGradient);
    const DetectionReport r = detect(*atom, key, Tokens{}, yy, 0.05);
    CHECK(r.null_gradient);
    CHECK(r.p_value == 1.0);
    CHECK(r.decision == Decision::FailToReject);
  }
}

TEST_CASE("p-values") {
  CHECK(p_value(0.0) == 0.5);
  CHECK(std::abs(p_value(normal_quantile(0.95)) - 0.05) <= 1e-9);
  double prev = 1.0;
  for (double psi = -8.0; psi <= 8.0; psi += 0.25) {
    CHECK(p_value(psi) < prev);
    CHECK(std::abs(p_value(psi) - (1.0 - normal_cdf(psi))) <= 1e-12);
    prev = p_value(psi);
  }
}

TEST_CASE("detect") {
  SUBCASE("boundary is inclusive") {
    const double alpha = 0.05;
    const double tau = rejection_threshold(alpha);
    Vec g(4, 0.0);
    g[0] = 1.0;
    Vec xi(4, 0.0);
    xi[0] = tau;
    const DetectionReport r = detect_from_gradient(key_of(xi, 1.0), g, alpha);
    CHECK(r.psi == tau);
    CHECK(r.decision == Decision::Reject);
    CHECK_THROWS_AS(rejection_threshold(0.0), DomainError);
    CHECK_THROWS_AS(rejection_threshold(1.0), DomainError);
  }

  SUBCASE("report is consistent and computed at the base parameters") {
    auto m = linear(32, 64, 2, 8);
    const WatermarkKey key = make_key(64, 0.4, 3, 3);
    RngStream rng(8, 8);
    const Tokens y = generate(*m, key, Tokens{1}, 30, rng);
    const DetectionReport r = detect(*m, key, Tokens{1}, y, 0.01);
    CHECK(std::abs(r.p_value - (1.0 - normal_cdf(r.psi))) <= 1e-12);
    CHECK((r.decision == Decision::Reject) == (r.psi >= r.tau_alpha));
    CHECK(r.grad_norm == doctest::Approx(norm(m->grad_log_prob(Tokens{1}, y))).epsilon(1e-14));
    CHECK(r.psi == alignment_statistic(key.xi, key.sigma, m->grad_log_prob(Tokens{1}, y)));
  }

  SUBCASE("null rejection rate") {
    auto m = linear(32, 64, 2, 9);
    std::size_t rejections = 0;
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
      RngStream rng(21, i);
      const Tokens y = sample_sequence(*m, Tokens{}, 8, rng);
      rejections += detect(*m, make_key(64, 0.5, 22, i), Tokens{}, y, 0.05).decision == Decision::Reject;
    }
    const double rate = static_cast<double>(rejections) / static_cast<double>(n);
    CHECK(rate >= 0.043);
    CHECK(rate <= 0.057);
  }

  SUBCASE("alternative power at d = 1024") {
    auto m = linear(32, 1024, 2, 10);
    std::size_t rejections = 0;
    const std::size_t n = 300;
    for (std::size_t i = 0; i < n; ++i) {
      const WatermarkKey key = make_key(1024, 0.4, 31, i);
      RngStream rng(32, i);
      const Tokens y = generate(*m, key, Tokens{}, 64, rng);
      rejections += detect(*m, key, Tokens{}, y, 0.05).decision == Decision::Reject;
    }
    CHECK(static_cast<double>(rejections) / static_cast<double>(n) >= 0.9);
  }
}

TEST_CASE("median p-value decreases with response length") {
  auto m = linear(32, 256, 2, 11);
  double previous = 1.0;
  for (std::size_t T : {32, 128, 512}) {
    Vec p(200);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const WatermarkKey key = make_key(256, 0.2, 40 + T, i);
      RngStream rng(41 + T, i);
      p[i] = detect(*m, key, Tokens{}, generate(*m, key, Tokens{}, T, rng), 0.05).p_value;
    }
    const double med = stats::median(p);
    CHECK(med < previous);
    previous = med;
  }
}

TEST_CASE("robust generation") {
  auto m = linear(16, 32, 2, 12);
  const TokenKeyChain one = make_key_chain(1, 32, 0.5, 50, 0);
  RngStream a(5, 0), b(5, 0);
  CHECK(robust_generate(*m, one, Tokens{2}, a) == generate(*m, one.keys[0], Tokens{2}, 1, b));

  TokenKeyChain zeros;
  for (int k = 0; k < 20; ++k) zeros.keys.push_back(key_of(Vec(32, 0.0), 0.5));
  RngStream c(6, 0), d(6, 0);
  CHECK(robust_generate(*m, zeros, Tokens{2}, c) == sample_sequence(*m, Tokens{2}, 20, d));

  const TokenKeyChain chain = make_key_chain(20, 32, 0.5, 51, 0);
  RngStream e(7, 0), f(7, 0);
  CHECK(robust_generate(*m, chain, Tokens{}, e) == robust_generate(*m, chain, Tokens{}, f));
  CHECK(chain.sigma() == 0.5);
  CHECK(chain.keys[0].xi != chain.keys[1].xi);
  CHECK_THROWS_AS(robust_generate(*m, TokenKeyChain{}, Tokens{}, e), InvalidInput);
}

TEST_CASE("per-token statistics") {
  auto m = linear(32, 64, 2, 13);
  SUBCASE("null distribution and independence") {
    Vec pooled, first, second;
    for (std::size_t i = 0; i < 100; ++i) {
      RngStream rng(60, i);
      const Tokens y = sample_sequence(*m, Tokens{}, 100, rng);
      const TokenStatistics s = per_token_statistics(*m, make_key_chain(100, 64, 0.5, 61, i), Tokens{}, y);
      pooled.insert(pooled.end(), s.gammas.begin(), s.gammas.end());
      for (std::size_t k = 0; k + 1 < s.gammas.size(); ++k) {
        first.push_back(s.gammas[k]);
        second.push_back(s.gammas[k + 1]);
      }
    }
    CHECK(pooled.size() == 10000);
    CHECK(stats::ks_standard_normal(pooled) < 0.02);
    CHECK(std::abs(stats::correlation(first, second)) < 0.03);
  }
  SUBCASE("orthogonal key gives zero") {
    const Tokens y{1, 2, 3};
    TokenKeyChain chain = make_key_chain(3, 64, 0.5, 62, 0);
    Tokens ctx;
    for (std::size_t k = 0; k < 3; ++k) {
      const Vec g = m->token_grad(ctx, y[k]);
      axpy(-dot(chain.keys[k].xi, g) / dot(g, g), g, chain.keys[k].xi);
      ctx.push_back(y[k]);
    }
    for (double gamma : per_token_statistics(*m, chain, Tokens{}, y).gammas) CHECK(std::abs(gamma) <= 1e-12);
  }
  CHECK_THROWS_AS(per_token_statistics(*m, make_key_chain(3, 64, 0.5, 62, 0), Tokens{}, Tokens{1, 2}), DimensionError);
}

TEST_CASE("quantile_lambda") {
  CHECK(quantile_lambda(Vec{1, 2, 3, 4}, 0.5) == 2.0);
  CHECK(quantile_lambda(Vec{4, 1, 3, 2}, 0.5) == 2.0);
  CHECK(quantile_lambda(Vec{1, 2, 3, 4}, 0.74) == 2.0);
  CHECK(quantile_lambda(Vec{1, 2, 3, 4}, 0.75) == 3.0);
  CHECK(std::isinf(quantile_lambda(Vec{1, 2, 3, 4}, 0.2)));
  CHECK(quantile_lambda(Vec{1, 2, 3, 4}, 0.2) < 0.0);
  // Ties count together: 2 has empirical CDF 3/4.
  CHECK(quantile_lambda(Vec{1, 2, 2, 4}, 0.5) == 1.0);
  CHECK_THROWS_AS(quantile_lambda(Vec{}, 0.5), EmptyInput);
  CHECK_THROWS_AS(quantile_lambda(Vec{1.0}, 1.0), DomainError);

  RngStream rng(70, 0);
  Vec v = sample_gaussian_vector(50, 1.0, rng).values;
  const double q = quantile_lambda(v, 0.3);
  for (int shuffle = 0; shuffle < 5; ++shuffle) {
    std::shuffle(v.begin(), v.end(), rng);
    CHECK(quantile_lambda(v, 0.3) == q);
  }
}

TEST_CASE("robust detection") {
  TokenStatistics low{Vec(10, 0.5), std::vector<bool>(10, false)};
  CHECK(robust_detect_from_statistics(low, 0.05, 0.5).decision == Decision::FailToReject);

  // Context-free features so a substituted token leaves the other tokens' gradients untouched.
  auto m = linear(256, 64, 0, 14, 0.1);
  const double sigma = 4.0, alpha0 = 0.05;

  SUBCASE("null level at the Hoeffding length") {
    const double lambda = 0.75, alpha = 0.05;
    const auto K = static_cast<std::size_t>(std::ceil(std::log(1 / alpha) / (2 * std::pow(1 - lambda - alpha0, 2))));
    std::size_t rejections = 0;
    for (std::size_t i = 0; i < 2000; ++i) {
      RngStream rng(80, i);
      const Tokens y = sample_sequence(*m, Tokens{}, K, rng);
      rejections +=
          robust_detect(*m, make_key_chain(K, 64, sigma, 81, i), Tokens{}, y, alpha0, lambda).decision ==
          Decision::Reject;
    }
    CHECK(static_cast<double>(rejections) / 2000.0 <= alpha);
  }

  SUBCASE("power under 20% random substitutions with K = 400") {
    std::size_t rejections = 0;
    const std::size_t n = 200, K = 400;
    for (std::size_t i = 0; i < n; ++i) {
      const TokenKeyChain chain = make_key_chain(K, 64, sigma, 90, i);
      RngStream rng(91, i);
      Tokens y = robust_generate(*m, chain, Tokens{}, rng);
      for (std::size_t k = 0; k < K; ++k)
        if (rng.uniform() < 0.2) y[k] = static_cast<Token>(rng.below(256));
      rejections += robust_detect(*m, chain, Tokens{}, y, alpha0, 0.6).decision == Decision::Reject;
    }
    CHECK(static_cast<double>(rejections) / static_cast<double>(n) >= 0.95);
  }
}
