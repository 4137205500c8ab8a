#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "trpm/partition.hpp"

namespace trpm {

using Coord = std::array<double, 2>;

// Marginal partition law: either the CRP with concentration M, or the spatial
// product partition model with CRP-style cohesion M*(|S|-1)! and a
// Gaussian/normal-inverse-Wishart similarity over 2-d unit coordinates.
struct EppfSpec {
  enum class Kind { Crp, Sppm };

  Kind kind = Kind::Crp;
  double concentration = 1.0;  // M
  double dof = 5.0;            // nu0, used by the spatial similarity only
  std::vector<Coord> coords;   // standardized locations, one per unit (Sppm only)

  static EppfSpec crp(double mass) {
    EppfSpec s;
    s.kind = Kind::Crp;
    s.concentration = mass;
    s.validate();
    return s;
  }

  static EppfSpec sppm(double mass, double nu0, std::vector<Coord> standardized_coords) {
    EppfSpec s;
    s.kind = Kind::Sppm;
    s.concentration = mass;
    s.dof = nu0;
    s.coords = std::move(standardized_coords);
    s.validate();
    return s;
  }

  void validate() const {
    if (!(concentration > 0.0)) throw std::invalid_argument("EppfSpec: M must be positive");
    if (kind == Kind::Sppm) {
      if (!(dof > 1.0)) throw std::invalid_argument("EppfSpec: nu0 must exceed 1");
      if (coords.empty()) throw std::invalid_argument("EppfSpec: spatial model requires coordinates");
      for (const auto& c : coords)
        if (!std::isfinite(c[0]) || !std::isfinite(c[1]))
          throw std::invalid_argument("EppfSpec: non-finite coordinate");
    }
  }
};

// Exact log CRP probability: M^k / prod_{i=1}^{m}(M+i-1) * prod_j (|S_j|-1)!.
// The empty partition has probability 1.
inline double crp_log_prob(const Partition& p, double mass) {
  if (!(mass > 0.0)) throw std::invalid_argument("crp_log_prob: M must be positive");
  if (p.empty()) return 0.0;
  double lp = p.num_clusters() * std::log(mass);
  for (int i = 1; i <= p.size(); ++i) lp -= std::log(mass + i - 1);
  for (int n : p.cluster_sizes()) lp += std::lgamma(static_cast<double>(n));
  return lp;
}

namespace detail {

// log of the bivariate multivariate gamma function.
inline double log_multigamma2(double a) {
  return 0.5 * std::log(M_PI) + std::lgamma(a) + std::lgamma(a - 0.5);
}

}  // namespace detail

// Closed-form log marginal likelihood of a 2-d point set under a Gaussian
// likelihood with normal-inverse-Wishart prior NIW(0, 1, nu0, I): the spatial
// similarity function. The empty set contributes log 1 = 0.
inline double niw_log_marginal(std::span<const Coord> points, double nu0) {
  if (!(nu0 > 1.0)) throw std::invalid_argument("niw_log_marginal: nu0 must exceed 1");
  const int n = static_cast<int>(points.size());
  if (n == 0) return 0.0;
  constexpr double kappa0 = 1.0;
  constexpr int d = 2;
  double mx = 0.0, my = 0.0;
  for (const auto& p : points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
      throw std::invalid_argument("niw_log_marginal: non-finite coordinate");
    mx += p[0];
    my += p[1];
  }
  mx /= n;
  my /= n;
  // Psi_n = I + scatter about the mean + kappa0*n/(kappa0+n) * xbar xbar^T.
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : points) {
    const double dx = p[0] - mx, dy = p[1] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  const double kappa_n = kappa0 + n;
  const double shrink = kappa0 * n / kappa_n;
  const double pxx = 1.0 + sxx + shrink * mx * mx;
  const double pxy = sxy + shrink * mx * my;
  const double pyy = 1.0 + syy + shrink * my * my;
  const double log_det_psi_n = std::log(pxx * pyy - pxy * pxy);
  const double nu_n = nu0 + n;
  return -0.5 * n * d * std::log(M_PI) + 0.5 * d * (std::log(kappa0) - std::log(kappa_n)) +
         0.5 * nu0 * 0.0  // log|Psi_0| = log|I| = 0
         - 0.5 * nu_n * log_det_psi_n + detail::log_multigamma2(0.5 * nu_n) -
         detail::log_multigamma2(0.5 * nu0);
}

namespace detail {

inline std::vector<Coord> cluster_coords(const Partition& p, std::span<const int> units,
                                         const EppfSpec& spec, int cluster_label) {
  std::vector<Coord> pts;
  for (int i = 0; i < p.size(); ++i)
    if (p.label(i) == cluster_label)
      pts.push_back(spec.coords[static_cast<std::size_t>(units[static_cast<std::size_t>(i)])]);
  return pts;
}

}  // namespace detail

// Unnormalized log weight of a partition of the units listed in `units` under
// the spatial PPM: sum over clusters of log cohesion M*(|S|-1)! plus the log
// NIW similarity of the cluster's coordinates.
inline double sppm_log_weight(const Partition& p, std::span<const int> units,
                              const EppfSpec& spec) {
  if (spec.kind != EppfSpec::Kind::Sppm)
    throw std::invalid_argument("sppm_log_weight: spec is not spatial");
  spec.validate();
  if (static_cast<int>(units.size()) != p.size())
    throw std::invalid_argument("sppm_log_weight: unit list size mismatch");
  double lw = 0.0;
  const auto sizes = p.cluster_sizes();
  for (int j = 1; j <= p.num_clusters(); ++j) {
    lw += std::log(spec.concentration) + std::lgamma(static_cast<double>(sizes[static_cast<std::size_t>(j - 1)]));
    const auto pts = detail::cluster_coords(p, units, spec, j);
    lw += niw_log_marginal(pts, spec.dof);
  }
  return lw;
}

// Convenience overload: the partition covers units 0..m-1 of the spec.
inline double sppm_log_weight(const Partition& p, const EppfSpec& spec) {
  std::vector<int> units(static_cast<std::size_t>(p.size()));
  for (int i = 0; i < p.size(); ++i) units[static_cast<std::size_t>(i)] = i;
  return sppm_log_weight(p, units, spec);
}

// Log weight of a partition over an arbitrary unit subset. For the CRP this
// is the exact log probability (normalized over that subset size); for the
// spatial PPM it is the unnormalized product weight.
inline double eppf_log_weight(const Partition& p, std::span<const int> units,
                              const EppfSpec& spec) {
  if (spec.kind == EppfSpec::Kind::Crp) return crp_log_prob(p, spec.concentration);
  if (p.empty()) return 0.0;
  return sppm_log_weight(p, units, spec);
}

// Unnormalized log seating weights for adding `new_unit` to a partial
// partition over `seated_units`: one entry per existing cluster, then one for
// opening a new cluster. CRP: log(n_j) and log(M), the exact predictive up to
// normalization. Spatial PPM: log-ratio of the product weight with and
// without the unit in each candidate cluster.
inline std::vector<double> seating_log_weights(const Partition& partial,
                                               std::span<const int> seated_units,
                                               int new_unit, const EppfSpec& spec) {
  const int k = partial.num_clusters();
  std::vector<double> logw(static_cast<std::size_t>(k) + 1);
  if (spec.kind == EppfSpec::Kind::Crp) {
    const auto sizes = partial.cluster_sizes();
    for (int j = 0; j < k; ++j) logw[static_cast<std::size_t>(j)] = std::log(static_cast<double>(sizes[static_cast<std::size_t>(j)]));
    logw[static_cast<std::size_t>(k)] = std::log(spec.concentration);
    return logw;
  }
  spec.validate();
  if (static_cast<int>(seated_units.size()) != partial.size())
    throw std::invalid_argument("seating_log_weights: unit list size mismatch");
  const auto& xi = spec.coords[static_cast<std::size_t>(new_unit)];
  const auto sizes = partial.cluster_sizes();
  for (int j = 1; j <= k; ++j) {
    auto pts = detail::cluster_coords(partial, seated_units, spec, j);
    const double g_without = niw_log_marginal(pts, spec.dof);
    pts.push_back(xi);
    const double g_with = niw_log_marginal(pts, spec.dof);
    // cohesion ratio M*n_j!/(M*(n_j-1)!) = n_j
    logw[static_cast<std::size_t>(j - 1)] =
        std::log(static_cast<double>(sizes[static_cast<std::size_t>(j - 1)])) + g_with - g_without;
  }
  logw[static_cast<std::size_t>(k)] =
      std::log(spec.concentration) + niw_log_marginal(std::span<const Coord>(&xi, 1), spec.dof);
  return logw;
}

// Predictive log probability that `new_unit` joins cluster `target` (1-based;
// k+1 means a new cluster): normalized seating weight. For the CRP this is
// the exact ratio Pr(partition with unit)/Pr(partition without unit).
inline double seating_log_predictive(const Partition& partial, std::span<const int> seated_units,
                                     int new_unit, int target, const EppfSpec& spec) {
  const auto logw = seating_log_weights(partial, seated_units, new_unit, spec);
  double mx = logw[0];
  for (double w : logw) mx = std::max(mx, w);
  double total = 0.0;
  for (double w : logw) total += std::exp(w - mx);
  return logw[static_cast<std::size_t>(target - 1)] - mx - std::log(total);
}

// Per-axis standardization of raw coordinates to mean 0, sd 1. Returns the
// standardized coordinates along with the transform so clusters can be
// reported in original units.
struct Standardization {
  Coord mean{0.0, 0.0};
  Coord sd{1.0, 1.0};
  std::vector<Coord> standardized;
};

inline Standardization standardize_coords(std::span<const Coord> raw) {
  Standardization out;
  const auto n = static_cast<double>(raw.size());
  if (raw.empty()) return out;
  for (const auto& c : raw) {
    out.mean[0] += c[0];
    out.mean[1] += c[1];
  }
  out.mean[0] /= n;
  out.mean[1] /= n;
  double vx = 0.0, vy = 0.0;
  for (const auto& c : raw) {
    vx += (c[0] - out.mean[0]) * (c[0] - out.mean[0]);
    vy += (c[1] - out.mean[1]) * (c[1] - out.mean[1]);
  }
  out.sd[0] = raw.size() > 1 ? std::sqrt(vx / (n - 1)) : 1.0;
  out.sd[1] = raw.size() > 1 ? std::sqrt(vy / (n - 1)) : 1.0;
  if (out.sd[0] <= 0.0) out.sd[0] = 1.0;
  if (out.sd[1] <= 0.0) out.sd[1] = 1.0;
  out.standardized.reserve(raw.size());
  for (const auto& c : raw)
    out.standardized.push_back({(c[0] - out.mean[0]) / out.sd[0], (c[1] - out.mean[1]) / out.sd[1]});
  return out;
}

}  // namespace trpm
