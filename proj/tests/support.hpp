#pragma once

// Shared helpers for the test suites: independent statistical oracles
// (regularized incomplete gamma/beta, chi-square and KS p-values), the m=3
// closed-form one-step transition table, and a quadrature oracle for the
// spatial similarity marginal.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trpm/eppf.hpp"
#include "trpm/partition.hpp"

namespace support {

// ---- special functions (independent of the library under test) -------------

inline double gamma_p(double a, double x) {  // regularized lower incomplete gamma
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) {  // series
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 1000; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::fabs(term) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // continued fraction for Q, Lentz's method
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

inline double chi_square_p_value(double stat, double dof) {  // upper tail
  return 1.0 - gamma_p(0.5 * dof, 0.5 * stat);
}

inline double beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-14) break;
  }
  return h;
}

inline double beta_cdf(double x, double a, double b) {  // regularized incomplete beta
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - lbeta);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

// One-sample KS test p-value (asymptotic Kolmogorov distribution).
inline double ks_p_value(std::vector<double> draws, const std::function<double(double)>& cdf) {
  std::sort(draws.begin(), draws.end());
  const double n = static_cast<double>(draws.size());
  double d = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const double f = cdf(draws[i]);
    d = std::max(d, std::fabs(f - static_cast<double>(i) / n));
    d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - f));
  }
  const double lam = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    p += sign * 2.0 * std::exp(-2.0 * j * j * lam * lam);
    sign = -sign;
  }
  return std::clamp(p, 0.0, 1.0);
}

// ---- m=3 closed-form one-step transition table ------------------------------
//
// Hand-derived polynomials in the dependence parameter for M=1: entry (r, c)
// is the probability that the next partition equals partition r given the
// previous one was partition c, over the 5 canonical partitions of 3 units
// a=(1,1,1), b=(1,1,2), c=(1,2,1), d=(1,2,2), e=(1,2,3).
inline std::vector<trpm::Partition> three_unit_partitions() {
  using trpm::Partition;
  return {Partition::canonicalize(std::vector<int>{1, 1, 1}),
          Partition::canonicalize(std::vector<int>{1, 1, 2}),
          Partition::canonicalize(std::vector<int>{1, 2, 1}),
          Partition::canonicalize(std::vector<int>{1, 2, 2}),
          Partition::canonicalize(std::vector<int>{1, 2, 3})};
}

inline std::array<std::array<double, 5>, 5> closed_form_transition(double a) {
  const double a2 = a * a, a3 = a * a * a;
  const double f1 = 1.0 + 3.0 * a2 - a3;   // stay in the one-cluster state
  const double f2 = 1.0 - a2;              // off-diagonal to/from mid states
  const double f3 = 1.0 - 3.0 * a2 + 2.0 * a3;  // one-cluster <-> all-singletons
  const double f4 = 1.0 + 3.0 * a2 + 2.0 * a3;  // stay in a two/three-cluster state
  const double f5 = 1.0 + a2 - 2.0 * a3;        // mid states <-> all-singletons
  // t[row][col] = Pr(next = row | prev = col); rows/cols in order a,b,c,d,e.
  std::array<std::array<double, 5>, 5> t{};
  const double s = 1.0 / 6.0;
  t[0] = {2 * s * f1, 2 * s * f2, 2 * s * f2, 2 * s * f2, 2 * s * f3};
  t[1] = {s * f2, s * f4, s * f2, s * f2, s * f5};
  t[2] = {s * f2, s * f2, s * f4, s * f2, s * f5};
  t[3] = {s * f2, s * f2, s * f2, s * f4, s * f5};
  t[4] = {s * f3, s * f5, s * f5, s * f5, s * f4};
  return t;
}

// ---- quadrature oracle for the spatial similarity marginal ------------------
//
// Independent evaluation of the 2-d Gaussian marginal under the
// normal-inverse-Wishart prior NIW(0, 1, nu0, I): the mean is integrated
// analytically, and the covariance integral is done by deterministic
// Gauss-Legendre quadrature over the Bartlett factors of the Wishart-
// distributed precision W = L L' with c1 ~ chi2(nu0), c2 ~ chi2(nu0-1),
// z ~ N(0,1).

namespace detail {

inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.resize(static_cast<std::size_t>(n));
  weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      const double dp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / dp;
      x -= dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    nodes[static_cast<std::size_t>(i)] = x;
    double p0 = 1.0, p1 = 0.0;
    for (int j = 0; j < n; ++j) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
    }
    const double dp = n * (x * p0 - p1) / (x * x - 1.0);
    weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

inline double log_chi2_pdf(double x, double dof) {
  return (0.5 * dof - 1.0) * std::log(x) - 0.5 * x - 0.5 * dof * std::log(2.0) -
         std::lgamma(0.5 * dof);
}

}  // namespace detail

inline double niw_marginal_quadrature(const std::vector<trpm::Coord>& pts, double nu0) {
  const int n = static_cast<int>(pts.size());
  if (n == 0) return 1.0;
  double sx = 0.0, sy = 0.0;
  for (const auto& p : pts) {
    sx += p[0];
    sy += p[1];
  }
  // Integrand over the Bartlett factors (c1, c2, z): W = L L' with
  // L = [[sqrt(c1), 0], [z, sqrt(c2)]]; given W, the mean integrates out to
  // f(W) = (2pi)^{-n} (n+1)^{-1} |W|^{n/2} exp(-0.5 [sum x'Wx - S'WS/(n+1)]).
  auto integrand = [&](double c1, double c2, double z) {
    const double wxx = c1, wxy = std::sqrt(c1) * z, wyy = z * z + c2;
    double q = 0.0;
    for (const auto& p : pts)
      q += wxx * p[0] * p[0] + 2.0 * wxy * p[0] * p[1] + wyy * p[1] * p[1];
    q -= (wxx * sx * sx + 2.0 * wxy * sx * sy + wyy * sy * sy) / (n + 1.0);
    const double log_det_w = std::log(c1 * c2);
    const double log_f = -n * std::log(2.0 * M_PI) - std::log(n + 1.0) +
                         0.5 * n * log_det_w - 0.5 * q;
    const double log_dens = detail::log_chi2_pdf(c1, nu0) + detail::log_chi2_pdf(c2, nu0 - 1.0) -
                            0.5 * z * z - 0.5 * std::log(2.0 * M_PI);
    return std::exp(log_f + log_dens);
  };

  std::vector<double> gl_x, gl_w;
  detail::gauss_legendre(40, gl_x, gl_w);
  auto segments = [&](double lo, double hi, int pieces, std::vector<double>& xs,
                      std::vector<double>& ws) {
    xs.clear();
    ws.clear();
    const double step = (hi - lo) / pieces;
    for (int s = 0; s < pieces; ++s) {
      const double a = lo + s * step, b = a + step;
      for (std::size_t i = 0; i < gl_x.size(); ++i) {
        xs.push_back(0.5 * (a + b) + 0.5 * (b - a) * gl_x[i]);
        ws.push_back(0.5 * (b - a) * gl_w[i]);
      }
    }
  };
  const double c_max = 2.0 * nu0 + 60.0;
  std::vector<double> c1x, c1w, c2x, c2w, zx, zw;
  segments(1e-10, c_max, 6, c1x, c1w);
  segments(1e-10, c_max, 6, c2x, c2w);
  segments(-9.0, 9.0, 4, zx, zw);

  double total = 0.0;
  for (std::size_t i = 0; i < c1x.size(); ++i) {
    for (std::size_t j = 0; j < c2x.size(); ++j) {
      double inner = 0.0;
      for (std::size_t k = 0; k < zx.size(); ++k)
        inner += zw[k] * integrand(c1x[i], c2x[j], zx[k]);
      total += c1w[i] * c2w[j] * inner;
    }
  }
  return total;
}

// ---- brute-force posterior for the two-period toy model ---------------------
//
// Exact posterior over the pair (rho_1, rho_2) for m units at two time
// points with cluster means pinned by canonical label, unit-variance-free
// Gaussian noise of known sd, CRP concentration M, and the dependence
// parameter integrated against its Beta(a, b) prior. Enumerates all
// partition pairs and indicator vectors.
inline std::map<std::pair<std::size_t, std::size_t>, double> toy_pair_posterior(
    const std::vector<std::array<double, 2>>& y, const std::vector<double>& means, double sd,
    double mass, double a_alpha, double b_alpha) {
  const int m = static_cast<int>(y.size());
  const auto all = trpm::enumerate_partitions(m);
  auto loglik = [&](const trpm::Partition& p, int t) {
    double ll = 0.0;
    for (int u = 0; u < m; ++u) {
      const double mu = means.at(static_cast<std::size_t>(p.label(u) - 1));
      const double d = y[static_cast<std::size_t>(u)][static_cast<std::size_t>(t)] - mu;
      ll += -0.5 * std::log(2.0 * M_PI * sd * sd) - 0.5 * d * d / (sd * sd);
    }
    return ll;
  };
  const double lbeta0 = std::lgamma(a_alpha) + std::lgamma(b_alpha) -
                        std::lgamma(a_alpha + b_alpha);
  std::map<std::pair<std::size_t, std::size_t>, double> post;
  double total = 0.0;
  for (std::size_t r1 = 0; r1 < all.size(); ++r1) {
    const double w1 = std::exp(trpm::crp_log_prob(all[r1], mass) + loglik(all[r1], 0));
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
      int s = 0;
      std::vector<int> fixed;
      for (int u = 0; u < m; ++u)
        if (mask & (1u << u)) {
          ++s;
          fixed.push_back(u);
        }
      const double pg = std::exp(std::lgamma(a_alpha + s) + std::lgamma(b_alpha + m - s) -
                                 std::lgamma(a_alpha + b_alpha + m) - lbeta0);
      const trpm::Partition target = trpm::restrict_to(all[r1], fixed);
      double z = 0.0;
      std::vector<std::size_t> compat;
      for (std::size_t r2 = 0; r2 < all.size(); ++r2)
        if (trpm::restrict_to(all[r2], fixed) == target) {
          compat.push_back(r2);
          z += std::exp(trpm::crp_log_prob(all[r2], mass));
        }
      for (std::size_t r2 : compat) {
        const double w = w1 * pg * std::exp(trpm::crp_log_prob(all[r2], mass)) / z *
                         std::exp(loglik(all[r2], 1));
        post[{r1, r2}] += w;
        total += w;
      }
    }
  }
  for (auto& [_, v] : post) v /= total;
  return post;
}

// ---- subprocess helper for command-line tests -------------------------------

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

inline CmdResult run_cmd(const std::string& cmd) {
  CmdResult r;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed: " + cmd);
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe) != nullptr) r.output += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

}  // namespace support
