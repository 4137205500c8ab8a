#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "support.hpp"
#include "trpm/eppf.hpp"
#include "trpm/rng.hpp"

using trpm::Coord;
using trpm::EppfSpec;
using trpm::Partition;

namespace {

Partition P(std::vector<int> labels) { return Partition::canonicalize(labels); }

// Independent sequential oracle for the 2-d Gaussian marginal under the
// normal-inverse-Wishart prior NIW(0, kappa0=1, nu0, I): chain of bivariate
// Student-t predictive densities with posterior-updated parameters.
double niw_log_marginal_oracle(const std::vector<Coord>& pts, double nu0) {
  double kappa = 1.0, nu = nu0;
  double mx = 0.0, my = 0.0;                       // posterior mean
  double pxx = 1.0, pxy = 0.0, pyy = 1.0;          // posterior scale matrix Psi
  double total = 0.0;
  for (const auto& p : pts) {
    // predictive: bivariate t with dof nu-1, location (mx,my),
    // scale Psi*(kappa+1)/(kappa*(nu-1))
    const double df = nu - 1.0;
    const double f = (kappa + 1.0) / (kappa * df);
    const double sxx = pxx * f, sxy = pxy * f, syy = pyy * f;
    const double det = sxx * syy - sxy * sxy;
    const double dx = p[0] - mx, dy = p[1] - my;
    const double q = (syy * dx * dx - 2.0 * sxy * dx * dy + sxx * dy * dy) / det;
    total += std::lgamma(0.5 * (df + 2.0)) - std::lgamma(0.5 * df) - std::log(df * M_PI) -
             0.5 * std::log(det) - 0.5 * (df + 2.0) * std::log1p(q / df);
    // NIW posterior update with the new point
    const double kappa1 = kappa + 1.0;
    pxx += dx * dx * kappa / kappa1;
    pxy += dx * dy * kappa / kappa1;
    pyy += dy * dy * kappa / kappa1;
    mx = (kappa * mx + p[0]) / kappa1;
    my = (kappa * my + p[1]) / kappa1;
    kappa = kappa1;
    nu += 1.0;
  }
  return total;
}

}  // namespace

TEST_CASE("CRP log probability matches hand values") {
  CHECK(trpm::crp_log_prob(P({1, 1, 1}), 1.0) == doctest::Approx(std::log(2.0 / 6.0)).epsilon(1e-14));
  CHECK(trpm::crp_log_prob(P({1, 2, 3}), 1.0) == doctest::Approx(std::log(1.0 / 6.0)).epsilon(1e-14));
  CHECK(trpm::crp_log_prob(P({1, 2, 3}), 2.0) == doctest::Approx(std::log(8.0 / 24.0)).epsilon(1e-14));
  CHECK(trpm::crp_log_prob(Partition(), 1.0) == 0.0);
  CHECK_THROWS_AS(trpm::crp_log_prob(P({1, 1}), 0.0), std::invalid_argument);
}

TEST_CASE("CRP normalizes over all partitions") {
  for (int m = 1; m <= 8; ++m) {
    const auto all = trpm::enumerate_partitions(m);
    for (double mass : {0.5, 1.0, 2.0}) {
      double total = 0.0;
      for (const auto& p : all) total += std::exp(trpm::crp_log_prob(p, mass));
      CHECK(std::fabs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("CRP satisfies the addition rule") {
  for (int m = 1; m <= 7; ++m) {
    const auto all = trpm::enumerate_partitions(m);
    for (double mass : {0.5, 1.0, 2.0}) {
      for (const auto& p : all) {
        double total = 0.0;
        for (int c = 1; c <= p.num_clusters() + 1; ++c) {
          std::vector<int> ext = p.labels();
          ext.push_back(c);
          total += std::exp(trpm::crp_log_prob(Partition::canonicalize(ext), mass));
        }
        CHECK(std::fabs(total - std::exp(trpm::crp_log_prob(p, mass))) < 1e-12);
      }
    }
  }
}

TEST_CASE("sequential seating reproduces the CRP law along any order") {
  trpm::Rng rng(101);
  for (int m = 2; m <= 6; ++m) {
    const auto spec = EppfSpec::crp(1.5);
    for (const auto& p : trpm::enumerate_partitions(m)) {
      std::vector<int> order(static_cast<std::size_t>(m));
      std::iota(order.begin(), order.end(), 0);
      for (int trial = 0; trial < 3; ++trial) {
        rng.shuffle(order);
        double lp = 0.0;
        std::vector<int> seated, labels;
        for (int u : order) {
          const Partition partial =
              labels.empty() ? Partition() : Partition::canonicalize(labels);
          // target = partial cluster sharing a seated co-member, else new
          int target = partial.num_clusters() + 1;
          for (std::size_t s = 0; s < seated.size(); ++s)
            if (p.label(seated[s]) == p.label(u)) {
              target = partial.label(static_cast<int>(s));
              break;
            }
          lp += trpm::seating_log_predictive(partial, seated, u, target, spec);
          seated.push_back(u);
          labels.push_back(target);
        }
        CHECK(lp == doctest::Approx(trpm::crp_log_prob(p, 1.5)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("CRP seating weights") {
  const auto spec = EppfSpec::crp(1.0);
  std::vector<int> seated{0, 1};
  const auto w = trpm::seating_log_weights(P({1, 1}), seated, 2, spec);
  REQUIRE(w.size() == 2);
  CHECK(w[0] == doctest::Approx(std::log(2.0)));
  CHECK(w[1] == doctest::Approx(std::log(1.0)));
  const auto w0 = trpm::seating_log_weights(Partition(), std::vector<int>{}, 0, spec);
  REQUIRE(w0.size() == 1);
  CHECK(w0[0] == doctest::Approx(std::log(1.0)));
}

TEST_CASE("similarity marginal: conventions and invariances") {
  CHECK(trpm::niw_log_marginal(std::vector<Coord>{}, 5.0) == 0.0);
  CHECK_THROWS_AS(trpm::niw_log_marginal(std::vector<Coord>{{0.0, 0.0}}, 1.0),
                  std::invalid_argument);
  const std::vector<Coord> nf{{std::numeric_limits<double>::quiet_NaN(), 0.0}};
  CHECK_THROWS_AS(trpm::niw_log_marginal(nf, 5.0), std::invalid_argument);

  trpm::Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Coord> pts(static_cast<std::size_t>(1 + rng.uniform_int(4)));
    for (auto& p : pts) p = {rng.normal(0.0, 1.5), rng.normal(0.0, 1.5)};
    const double base = trpm::niw_log_marginal(pts, 5.0);
    std::vector<Coord> perm = pts;
    rng.shuffle(perm);
    CHECK(trpm::niw_log_marginal(perm, 5.0) == doctest::Approx(base).epsilon(1e-10));
    const double a = rng.uniform(0.0, 2.0 * M_PI);
    std::vector<Coord> rot;
    for (const auto& p : pts)
      rot.push_back({std::cos(a) * p[0] - std::sin(a) * p[1],
                     std::sin(a) * p[0] + std::cos(a) * p[1]});
    CHECK(trpm::niw_log_marginal(rot, 5.0) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("similarity marginal matches the quadrature oracle to 4 significant digits") {
  const std::vector<std::vector<Coord>> cases = {
      {{0.0, 0.0}},
      {{0.7, -0.3}},
      {{0.1, 0.0}, {-0.1, 0.0}},
      {{0.5, 0.5}, {-0.4, 0.2}},
      {{0.3, -0.2}, {-0.5, 0.6}, {0.2, 0.4}},
  };
  for (const auto& pts : cases) {
    const double closed = std::exp(trpm::niw_log_marginal(pts, 5.0));
    const double quad = support::niw_marginal_quadrature(pts, 5.0);
    CHECK(std::fabs(closed - quad) / quad < 5e-4);
  }
}

TEST_CASE("similarity marginal agrees with the sequential predictive oracle") {
  trpm::Rng rng(13);
  for (double nu0 : {3.0, 5.0, 8.0}) {
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<Coord> pts(static_cast<std::size_t>(1 + rng.uniform_int(5)));
      for (auto& p : pts) p = {rng.normal(0.0, 2.0), rng.normal(0.0, 2.0)};
      CHECK(trpm::niw_log_marginal(pts, nu0) ==
            doctest::Approx(niw_log_marginal_oracle(pts, nu0)).epsilon(1e-10));
    }
  }
}

TEST_CASE("similarity rewards tight point sets") {
  CHECK(trpm::niw_log_marginal(std::vector<Coord>{{0.1, 0.0}, {-0.1, 0.0}}, 5.0) >
        trpm::niw_log_marginal(std::vector<Coord>{{2.0, 0.0}, {-2.0, 0.0}}, 5.0));
}

TEST_CASE("spatial partition weights: enumeration behavior") {
  const auto one_cluster = P({1, 1, 1});
  {
    const auto spec = EppfSpec::sppm(1.0, 5.0, {{0.1, 0.1}, {0.1, 0.1}, {0.1, 0.1}});
    double best = -1e300;
    Partition argbest;
    for (const auto& p : trpm::enumerate_partitions(3)) {
      const double w = trpm::sppm_log_weight(p, spec);
      if (w > best) {
        best = w;
        argbest = p;
      }
    }
    CHECK(argbest == one_cluster);
  }
  {
    const auto spec = EppfSpec::sppm(1.0, 5.0, {{0.0, 0.0}, {0.1, 0.0}, {8.0, 8.0}});
    CHECK(trpm::sppm_log_weight(P({1, 1, 2}), spec) > trpm::sppm_log_weight(one_cluster, spec));
  }
}

TEST_CASE("spatial seating weights reduce to cohesion ratios for identical coordinates") {
  // With all units co-located, the similarity ratio depends only on cluster
  // size, so equal-size clusters must get identical weights and the weight
  // decomposes as log(n_j) + similarity ratio.
  const Coord s{0.4, -0.2};
  const auto spec = EppfSpec::sppm(1.0, 5.0, {s, s, s, s, s});
  std::vector<int> seated{0, 1, 2, 3};
  const auto w = trpm::seating_log_weights(P({1, 1, 2, 2}), seated, 4, spec);
  REQUIRE(w.size() == 3);
  CHECK(w[0] == doctest::Approx(w[1]).epsilon(1e-12));
  const double g2 = trpm::niw_log_marginal(std::vector<Coord>{s, s}, 5.0);
  const double g3 = trpm::niw_log_marginal(std::vector<Coord>{s, s, s}, 5.0);
  CHECK(w[0] == doctest::Approx(std::log(2.0) + g3 - g2).epsilon(1e-12));
  const double g1 = trpm::niw_log_marginal(std::vector<Coord>{s}, 5.0);
  CHECK(w[2] == doctest::Approx(std::log(1.0) + g1).epsilon(1e-12));
}

TEST_CASE("spatial seating predictives normalize") {
  const auto spec = EppfSpec::sppm(0.8, 5.0, {{0.0, 0.0}, {0.5, 0.3}, {-0.4, 0.7}, {1.0, -1.0}});
  std::vector<int> seated{0, 1, 2};
  const Partition partial = P({1, 2, 1});
  double total = 0.0;
  for (int target = 1; target <= 3; ++target)
    total += std::exp(trpm::seating_log_predictive(partial, seated, 3, target, spec));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("coordinate standardization") {
  const std::vector<Coord> raw{{10.0, -3.0}, {12.0, -1.0}, {14.0, 1.0}, {16.0, 3.0}};
  const auto s = trpm::standardize_coords(raw);
  double mx = 0.0, my = 0.0;
  for (const auto& c : s.standardized) {
    mx += c[0];
    my += c[1];
  }
  CHECK(std::fabs(mx) < 1e-12);
  CHECK(std::fabs(my) < 1e-12);
  double vx = 0.0, vy = 0.0;
  for (const auto& c : s.standardized) {
    vx += c[0] * c[0];
    vy += c[1] * c[1];
  }
  CHECK(vx / 3.0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(vy / 3.0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.mean[0] == doctest::Approx(13.0));
  CHECK(s.sd[1] == doctest::Approx(std::sqrt(20.0 / 3.0)));
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(EppfSpec::crp(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(EppfSpec::sppm(1.0, 0.5, {{0.0, 0.0}}), std::invalid_argument);
  CHECK_THROWS_AS(EppfSpec::sppm(1.0, 5.0, {}), std::invalid_argument);
}
