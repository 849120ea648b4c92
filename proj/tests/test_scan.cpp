#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "compfit/scan.hpp"

using namespace compfit;

namespace {

struct Instance {
  std::vector<double> a, b;
  double y0 = 0.0;
};

Instance random_instance(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> ua(-1.0, 1.0);
  std::uniform_real_distribution<double> ub(-1.0, 1.0);
  Instance in;
  in.a.resize(n);
  in.b.resize(n);
  for (auto& v : in.a) v = ua(rng);
  for (auto& v : in.b) v = ub(rng);
  in.y0 = ub(rng);
  return in;
}

double max_abs_diff(const std::vector<double>& x, const std::vector<double>& y) {
  REQUIRE(x.size() == y.size());
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

}  // namespace

TEST_CASE("affine_compose") {
  const AffineElem e{0.3, -1.7};
  CHECK(affine_compose(e, AffineElem{1.0, 0.0}) == e);
  CHECK(affine_compose(AffineElem{1.0, 0.0}, e) == e);
  const AffineElem c = affine_compose({0.5, 1.0}, {0.25, 2.0});
  CHECK(c.a == 0.125);
  CHECK(c.b == 2.25);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const AffineElem e1{u(rng), u(rng)}, e2{u(rng), u(rng)}, e3{u(rng), u(rng)};
    const AffineElem l = affine_compose(affine_compose(e1, e2), e3);
    const AffineElem r = affine_compose(e1, affine_compose(e2, e3));
    CHECK(std::abs(l.a - r.a) < 1e-15);
    CHECK(std::abs(l.b - r.b) < 1e-15);
    const double y = u(rng);
    CHECK(std::abs(c.apply(y) - AffineElem{0.25, 2.0}.apply(AffineElem{0.5, 1.0}.apply(y))) <
          1e-15);
  }
}

TEST_CASE("linrec_sequential examples") {
  const std::vector<double> b{1.0, -2.0, 3.0};
  CHECK(linrec_sequential(std::vector<double>(3, 0.0), b, 5.0) == b);
  CHECK(linrec_sequential(std::vector<double>(4, 1.0), std::vector<double>(4, 1.0), 0.0) ==
        std::vector<double>{1, 2, 3, 4});
  CHECK(linrec_sequential(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 1}, 2.0) ==
        std::vector<double>{2.0, 2.0});
  CHECK_THROWS_AS(linrec_sequential(std::vector<double>(2), std::vector<double>(3), 0.0),
                  std::invalid_argument);
}

TEST_CASE("linrec_scan examples") {
  CHECK(linrec_scan(std::vector<double>{0.5}, std::vector<double>{2.0}, 3.0) ==
        std::vector<double>{3.5});
  CHECK_THROWS_AS(linrec_scan(std::vector<double>(5000), std::vector<double>(4999), 0.0),
                  std::invalid_argument);
  ScanStats stats;
  ScanOptions opt;
  opt.stats = &stats;
  linrec_scan(std::vector<double>(100, 0.5), std::vector<double>(100, 1.0), 0.0, opt);
  CHECK(stats.used_sequential_fallback);
}

TEST_CASE("linrec_scan matches sequential on random stable instances") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> len(1, 20000);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in = random_instance(rng, len(rng));
    ScanOptions opt;
    opt.threads = 1 + trial % 4;
    opt.parallel_threshold = trial % 2 == 0 ? 4096 : 1;
    opt.block_len = trial % 3 == 0 ? 520 : 1 + trial % 97;
    CHECK(max_abs_diff(linrec_scan(in.a, in.b, in.y0, opt),
                       linrec_sequential(in.a, in.b, in.y0)) < 1e-12);
  }
}

TEST_CASE("scan phase count grows logarithmically") {
  std::vector<std::size_t> phases;
  for (std::size_t n : {1u << 14, 1u << 16, 1u << 18, 1u << 20}) {
    ScanStats stats;
    ScanOptions opt;
    opt.stats = &stats;
    opt.threads = 4;
    linrec_scan(std::vector<double>(n, 0.5), std::vector<double>(n, 1.0), 0.0, opt);
    CHECK_FALSE(stats.used_sequential_fallback);
    CHECK(stats.length == n);
    phases.push_back(stats.phases);
  }
  for (std::size_t i = 1; i < phases.size(); ++i) {
    // Input grows 4x per step, so depth grows by a bounded additive amount.
    CHECK(phases[i] >= phases[i - 1]);
    CHECK(phases[i] <= phases[i - 1] + 4);
  }
}

TEST_CASE("linrec_reversed") {
  SUBCASE("hand unrolled") {
    const auto y = linrec_reversed(std::vector<double>(3, 0.5), std::vector<double>(3, 1.0), 0.0);
    CHECK(y == std::vector<double>{1.75, 1.5, 1.0});
  }
  SUBCASE("zero multiplier passes input") {
    const std::vector<double> b{4.0, 5.0, 6.0};
    CHECK(linrec_reversed(std::vector<double>(3, 0.0), b, 0.0) == b);
  }
  SUBCASE("equals a forward run on reversed, shifted inputs") {
    std::mt19937_64 rng(23);
    for (std::size_t n : {1u, 2u, 7u, 5000u, 20000u}) {
      const Instance in = random_instance(rng, n);
      // Reversed time: u[k] = y[n-1-k], u[k] = b[n-1-k] + a[n-k] u[k-1].
      std::vector<double> ra(n), rb(n);
      for (std::size_t k = 0; k < n; ++k) {
        rb[k] = in.b[n - 1 - k];
        ra[k] = k == 0 ? 1.0 : in.a[n - k];
      }
      auto fwd = linrec_sequential(ra, rb, in.y0);
      std::reverse(fwd.begin(), fwd.end());
      ScanOptions opt;
      opt.parallel_threshold = 1;
      CHECK(max_abs_diff(linrec_reversed(in.a, in.b, in.y0), fwd) < 1e-12);
      CHECK(max_abs_diff(linrec_reversed(in.a, in.b, in.y0, opt), fwd) < 1e-12);
    }
  }
}

TEST_CASE("LinrecEngine routes agree") {
  std::mt19937_64 rng(29);
  const Instance in = random_instance(rng, 30000);
  LinrecEngine seq{LinrecMethod::Sequential, {}};
  LinrecEngine scan{LinrecMethod::Scan, {}};
  CHECK(seq.forward(in.a, in.b, in.y0) == linrec_sequential(in.a, in.b, in.y0));
  CHECK(max_abs_diff(scan.forward(in.a, in.b, in.y0), seq.forward(in.a, in.b, in.y0)) < 1e-12);
  CHECK(max_abs_diff(scan.reversed(in.a, in.b, in.y0), seq.reversed(in.a, in.b, in.y0)) < 1e-12);
}
