#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "dtgan/accountant.hpp"
#include "dtgan/common.hpp"
#include "dtgan/rng.hpp"

using namespace dtgan;
using namespace dtgan::accountant;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Direct (non-log-space) evaluation of the amplification bound in long
// double, independent of the implementation path.
long double amplify_direct(const std::function<long double(int)>& base, long double gamma,
                           int lambda) {
  auto binom = [](int n, int k) {
    long double r = 1.0L;
    for (int i = 1; i <= k; ++i) r = r * static_cast<long double>(n - k + i) / i;
    return r;
  };
  long double eps2 = base(2);
  long double m = std::min(4.0L * (std::exp(eps2) - 1.0L), 2.0L * std::exp(eps2));
  long double sum = gamma * gamma * binom(lambda, 2) * m;
  for (int j = 3; j <= lambda; ++j) {
    sum += std::pow(gamma, static_cast<long double>(j)) * binom(lambda, j) *
           std::exp((j - 1) * base(j)) * 2.0L;
  }
  return std::log1p(sum) / static_cast<long double>(lambda - 1);
}

}  // namespace

TEST_CASE("gaussian_rdp closed form") {
  CHECK(gaussian_rdp(1.0, 1.0, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(gaussian_rdp(2.0, 2.0, 3) == doctest::Approx(1.5).epsilon(1e-12));
  // 2 * 4 / (2 * 1.06^2), evaluated in high precision.
  CHECK(gaussian_rdp(1.06, 2.0, 2) ==
        doctest::Approx(3.5599857600569598).epsilon(1e-12));
}

TEST_CASE("gaussian_rdp rejects bad input") {
  CHECK_THROWS_AS(gaussian_rdp(0.0, 1.0, 2), ConfigError);
  CHECK_THROWS_AS(gaussian_rdp(-1.0, 1.0, 2), ConfigError);
  CHECK_THROWS_AS(gaussian_rdp(1.0, 0.0, 2), ConfigError);
  CHECK_THROWS_AS(gaussian_rdp(std::nan(""), 1.0, 2), ConfigError);
  CHECK_THROWS_AS(gaussian_rdp(1.0, kInf, 2), ConfigError);
  CHECK_THROWS_AS(gaussian_rdp(1.0, 1.0, 1), ConfigError);
}

TEST_CASE("gaussian_rdp scaling laws") {
  for (int lambda : {2, 5, 17}) {
    double base = gaussian_rdp(2.0, 1.5, lambda);
    CHECK(gaussian_rdp(1.0, 1.5, lambda) == doctest::Approx(4.0 * base).epsilon(1e-12));
    CHECK(base / lambda == doctest::Approx(gaussian_rdp(2.0, 1.5, 2) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("compose identity, self-composition, linearity") {
  OrderGrid grid;
  RdpCurve c = discriminator_update_cost(4, 1.5, grid);
  RdpCurve zero = RdpCurve::zero(grid);

  std::vector<RdpCurve> with_zero{zero, c};
  RdpCurve r = compose(with_zero);
  for (size_t i = 0; i < c.eps.size(); ++i) CHECK(r.eps[i] == c.eps[i]);

  std::vector<RdpCurve> twice{c, c};
  r = compose(twice);
  for (size_t i = 0; i < c.eps.size(); ++i) {
    CHECK(r.eps[i] == doctest::Approx(2.0 * c.eps[i]).epsilon(1e-12));
  }

  // k copies of one Gaussian mechanism: k * lambda * d^2 / (2 s^2).
  RdpCurve g{grid, {}};
  for (int lambda : grid.orders()) g.eps.push_back(gaussian_rdp(1.7, 0.9, lambda));
  std::vector<RdpCurve> copies(7, g);
  r = compose(copies);
  for (size_t i = 0; i < r.eps.size(); ++i) {
    int lambda = grid.orders()[i];
    CHECK(r.eps[i] ==
          doctest::Approx(7.0 * lambda * 0.9 * 0.9 / (2.0 * 1.7 * 1.7)).epsilon(1e-12));
  }
}

TEST_CASE("compose is associative and commutative") {
  OrderGrid grid;
  RdpCurve a = discriminator_update_cost(2, 1.1, grid);
  RdpCurve b = discriminator_update_cost(5, 2.3, grid);
  RdpCurve c = generator_update_cost(3, 0.7, grid);
  std::vector<RdpCurve> abc{a, b, c};
  std::vector<RdpCurve> cba{c, b, a};
  RdpCurve r1 = compose(abc);
  RdpCurve r2 = compose(cba);
  std::vector<RdpCurve> ab{a, b};
  std::vector<RdpCurve> ab_c{compose(ab), c};
  RdpCurve r3 = compose(ab_c);
  for (size_t i = 0; i < r1.eps.size(); ++i) {
    CHECK(r1.eps[i] == doctest::Approx(r2.eps[i]).epsilon(1e-12));
    CHECK(r1.eps[i] == doctest::Approx(r3.eps[i]).epsilon(1e-12));
  }
}

TEST_CASE("compose rejects mismatched grids") {
  RdpCurve a = discriminator_update_cost(2, 1.1, OrderGrid());
  RdpCurve b = discriminator_update_cost(2, 1.1, OrderGrid({2, 3, 4}));
  std::vector<RdpCurve> both{a, b};
  CHECK_THROWS_AS(compose(both), ConfigError);
}

TEST_CASE("subsample_amplify fixed values") {
  auto unit_base = [](int) { return 1.0; };
  CHECK(subsample_amplify(unit_base, 0.0, 2) == 0.0);
  // log(1 + 0.01 * min{4(e-1), 2e}) at lambda = 2 (empty j >= 3 sum).
  CHECK(subsample_amplify(unit_base, 0.1, 2) ==
        doctest::Approx(0.052939293727797600).epsilon(1e-12));
  // gamma = 1: log(1 + 2e).
  CHECK(subsample_amplify(unit_base, 1.0, 2) ==
        doctest::Approx(1.8619948040582511).epsilon(1e-12));
}

TEST_CASE("subsample_amplify rejects bad input") {
  auto base = [](int) { return 0.5; };
  CHECK_THROWS_AS(subsample_amplify(base, -0.1, 2), ConfigError);
  CHECK_THROWS_AS(subsample_amplify(base, 1.1, 2), ConfigError);
  CHECK_THROWS_AS(subsample_amplify(base, 0.5, 1), ConfigError);
}

TEST_CASE("subsample_amplify matches direct high-precision evaluation") {
  // Gaussian bases with varying scale, including a composed per-update cost.
  std::vector<std::function<double(int)>> bases;
  for (double sigma : {5.0, 20.0, 100.0}) {
    bases.push_back([sigma](int j) { return gaussian_rdp(sigma, 1.0, j); });
  }
  bases.push_back([](int j) { return 64.0 * gaussian_rdp(30.0, 2.0, j); });

  for (const auto& base : bases) {
    std::function<long double(int)> base_ld = [&](int j) {
      return static_cast<long double>(base(j));
    };
    for (double gamma : {1e-4, 1e-3, 1e-2, 0.1}) {
      for (int lambda = 2; lambda <= 64; ++lambda) {
        double got = subsample_amplify(base, gamma, lambda);
        long double want = amplify_direct(base_ld, static_cast<long double>(gamma), lambda);
        CHECK(std::abs(got - static_cast<double>(want)) <=
              1e-9 * std::max(1e-300, std::abs(static_cast<double>(want))));
      }
    }
  }
}

TEST_CASE("subsample_amplify monotone in gamma") {
  auto base = [](int j) { return gaussian_rdp(10.0, 2.0, j); };
  for (int lambda : {2, 8, 32, 64}) {
    double prev = 0.0;
    for (double gamma : {0.0, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.5, 1.0}) {
      double cur = subsample_amplify(base, gamma, lambda);
      CHECK(cur >= prev);
      CHECK(cur >= 0.0);
      prev = cur;
    }
  }
}

TEST_CASE("subsample_amplify handles large orders without overflow") {
  auto base = [](int j) { return 64.0 * gaussian_rdp(1.06, 2.0, j); };
  double v = subsample_amplify(base, 64.0 / 39000.0, 512);
  CHECK(std::isfinite(v));
  CHECK(v > 0.0);
}

TEST_CASE("to_dp fixed cases") {
  OrderGrid grid({32});
  RdpCurve curve{grid, {0.5}};
  DpResult r = to_dp(curve, 1e-5);
  CHECK(r.epsilon == doctest::Approx(0.8713846924183945).epsilon(1e-12));
  CHECK(r.best_order == 32);

  RdpCurve zeros = RdpCurve::zero(OrderGrid());
  r = to_dp(zeros, 0.5);
  CHECK(r.best_order == 512);
  CHECK(r.epsilon == doctest::Approx(std::log(2.0) / 511.0).epsilon(1e-12));
}

TEST_CASE("to_dp equals brute-force scan on random curves") {
  Rng rng(7);
  OrderGrid grid;
  for (int trial = 0; trial < 25; ++trial) {
    RdpCurve curve{grid, {}};
    for (size_t i = 0; i < grid.size(); ++i) {
      curve.eps.push_back(0.01 * rng.uniform() * grid.orders()[i]);
    }
    double delta = std::pow(10.0, -1.0 - 6.0 * rng.uniform());
    DpResult r = to_dp(curve, delta);
    double best = kInf;
    int best_order = 0;
    for (size_t i = 0; i < grid.size(); ++i) {
      double cand = curve.eps[i] + std::log(1.0 / delta) / (grid.orders()[i] - 1.0);
      if (cand < best) {
        best = cand;
        best_order = grid.orders()[i];
      }
    }
    CHECK(r.epsilon == doctest::Approx(best).epsilon(1e-12));
    CHECK(r.best_order == best_order);
  }
}

TEST_CASE("to_dp breaks ties toward the smaller order") {
  double delta = 0.01;
  double l = std::log(1.0 / delta);
  // eps2 + l/1 == eps3 + l/2 when eps3 = eps2 + l/2.
  OrderGrid grid({2, 3});
  RdpCurve curve{grid, {0.1, 0.1 + l / 2.0}};
  CHECK(to_dp(curve, delta).best_order == 2);
}

TEST_CASE("to_dp monotone non-increasing in delta") {
  RdpCurve c = generator_update_cost(2, 8.0);
  double prev = kInf;
  for (double delta : {1e-8, 1e-6, 1e-4, 1e-2, 0.3}) {
    double eps = to_dp(c, delta).epsilon;
    CHECK(eps <= prev);
    prev = eps;
  }
}

TEST_CASE("per-update costs match the corollaries") {
  OrderGrid grid;
  RdpCurve d = discriminator_update_cost(1, 2.0, grid);
  CHECK(d.eps[0] == doctest::Approx(1.0).epsilon(1e-12));  // 2*1*2/4 at lambda=2
  d = discriminator_update_cost(64, 2.0, grid);
  CHECK(d.eps[1] == doctest::Approx(96.0).epsilon(1e-12));  // lambda=3

  RdpCurve g = generator_update_cost(1, 2.0, grid);
  CHECK(g.eps[0] == doctest::Approx(3.0).epsilon(1e-12));
  g = generator_update_cost(64, 3.518, grid);
  CHECK(g.eps[0] == doctest::Approx(62.053966912954121).epsilon(1e-12));
}

TEST_CASE("discriminator cost equals composing B Gaussian mechanisms") {
  OrderGrid grid;
  const int batch = 9;
  const double sigma = 1.7;
  RdpCurve one{grid, {}};
  for (int lambda : grid.orders()) one.eps.push_back(gaussian_rdp(sigma, 2.0, lambda));
  std::vector<RdpCurve> copies(batch, one);
  RdpCurve composed = compose(copies);
  RdpCurve direct = discriminator_update_cost(batch, sigma, grid);
  for (size_t i = 0; i < direct.eps.size(); ++i) {
    CHECK(direct.eps[i] == doctest::Approx(composed.eps[i]).epsilon(1e-12));
  }

  RdpCurve gen = generator_update_cost(batch, sigma, grid);
  for (size_t i = 0; i < gen.eps.size(); ++i) {
    CHECK(gen.eps[i] == doctest::Approx(3.0 * direct.eps[i]).epsilon(1e-12));
  }
}

TEST_CASE("run_ledger composes identical steps") {
  MechanismSpec spec{3.0, 2.0, 8, 0.02};
  LedgerResult one = run_ledger(spec, 1, 1e-5);
  RdpCurve step = amplified_step_cost(spec);
  for (size_t i = 0; i < step.eps.size(); ++i) {
    CHECK(one.total.eps[i] == doctest::Approx(step.eps[i]).epsilon(1e-12));
  }
  CHECK(one.epsilon == doctest::Approx(to_dp(step, 1e-5).epsilon).epsilon(1e-12));

  LedgerResult many = run_ledger(spec, 37, 1e-5);
  for (size_t i = 0; i < step.eps.size(); ++i) {
    CHECK(many.total.eps[i] == doctest::Approx(37.0 * step.eps[i]).epsilon(1e-12));
  }
  CHECK(many.epsilon_per_step.size() == 37);
}

TEST_CASE("ledger epsilon strictly increasing in steps") {
  MechanismSpec spec{5.0, 2.0, 16, 0.05};
  Ledger ledger(spec, 1e-5);
  double prev = 0.0;
  for (int t = 0; t < 100; ++t) {
    ledger.spend();
    CHECK(ledger.epsilon() > prev);
    prev = ledger.epsilon();
  }
}

TEST_CASE("ledger epsilon monotone in batch and sigma") {
  auto eps_of = [](long batch, double sigma) {
    return run_ledger({sigma, 2.0, batch, 0.01}, 20, 1e-5).epsilon;
  };
  CHECK(eps_of(8, 4.0) < eps_of(16, 4.0));
  CHECK(eps_of(16, 4.0) < eps_of(64, 4.0));
  CHECK(eps_of(16, 8.0) < eps_of(16, 4.0));
  CHECK(eps_of(16, 4.0) < eps_of(16, 2.0));
}

TEST_CASE("calibrate_sigma round trip lands within one percent below target") {
  Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    double target = 0.5 + 19.5 * rng.uniform();
    long steps = 5 + static_cast<long>(rng.uniform_int(496));
    long batch = 1 + static_cast<long>(rng.uniform_int(128));
    double gamma = std::pow(10.0, -4.0 + 2.7 * rng.uniform());
    long compositions = (trial % 2 == 0) ? batch : 3 * batch;
    DpBudget budget{target, 1e-5};
    double sigma = calibrate_sigma(budget, steps, compositions, gamma);
    double achieved = run_ledger({sigma, 2.0, compositions, gamma}, steps, budget.delta).epsilon;
    CHECK(achieved <= target);
    CHECK(achieved >= 0.99 * target);
  }
}

TEST_CASE("calibrated sigma grows with the step count") {
  DpBudget budget{1.0, 1e-5};
  double prev = 0.0;
  for (long steps : {10L, 100L, 1000L}) {
    double sigma = calibrate_sigma(budget, steps, 64, 0.01);
    CHECK(sigma > prev);
    prev = sigma;
  }
}

TEST_CASE("calibrate_sigma reports unreachable budgets") {
  // gamma = 1 composed many times cannot reach a tiny epsilon even at the
  // sigma ceiling.
  CHECK_THROWS_AS(calibrate_sigma({1e-6, 1e-5}, 100000, 64, 1.0), BudgetError);
}

TEST_CASE("order grid validation") {
  CHECK_THROWS_AS(OrderGrid(std::vector<int>{}), ConfigError);
  CHECK_THROWS_AS(OrderGrid({1, 2}), ConfigError);
  CHECK_THROWS_AS(OrderGrid({2, 2}), ConfigError);
  CHECK_THROWS_AS(OrderGrid({3, 2}), ConfigError);
  OrderGrid grid;
  CHECK(grid.size() == 66);
  CHECK(grid.max_order() == 512);
}

TEST_CASE("transcript json round trip") {
  Transcript t;
  t.variant = "dp_discriminator";
  t.steps = 12;
  t.sigma = 2.5;
  t.gamma = 0.01;
  t.batch = 64;
  t.compositions = 64;
  t.delta = 1e-5;
  t.epsilon = 0.93;
  t.best_order = 14;
  t.orders = {2, 3, 4};
  t.rdp = {0.1, 0.2, kInf};
  Transcript back = Transcript::from_json(t.to_json());
  CHECK(back.variant == t.variant);
  CHECK(back.steps == t.steps);
  CHECK(back.sigma == t.sigma);
  CHECK(back.epsilon == t.epsilon);
  CHECK(back.rdp[2] == kInf);
  CHECK(back.orders == t.orders);
}
