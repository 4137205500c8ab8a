#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "trpm/gibbs.hpp"
#include "trpm/partition.hpp"

namespace trpm {

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

// WAIC from an S x n pointwise log-likelihood matrix (rows = draws):
// -2 * (lppd - p_waic) with lppd via max-shifted log-sum-exp and p_waic the
// sum of per-datum sample variances. Lower is better.
inline double waic(const std::vector<std::vector<double>>& loglik) {
  const std::size_t S = loglik.size();
  if (S < 2) throw std::invalid_argument("waic: need at least two draws");
  const std::size_t n = loglik.front().size();
  for (const auto& row : loglik)
    if (row.size() != n) throw std::invalid_argument("waic: ragged log-likelihood matrix");
  double lppd = 0.0, p_waic = 0.0;
  std::vector<double> col(S);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < S; ++s) col[s] = loglik[s][i];
    lppd += detail::log_sum_exp(col) - std::log(static_cast<double>(S));
    double mean = 0.0;
    for (double x : col) mean += x;
    mean /= static_cast<double>(S);
    double ss = 0.0;
    for (double x : col) ss += (x - mean) * (x - mean);
    p_waic += ss / static_cast<double>(S - 1);
  }
  return -2.0 * (lppd - p_waic);
}

// Log pseudo marginal likelihood: sum of log CPO_i where CPO_i is the
// harmonic mean of the per-draw likelihoods, computed in the log domain.
// Higher is better.
inline double lpml(const std::vector<std::vector<double>>& loglik) {
  const std::size_t S = loglik.size();
  if (S < 1) throw std::invalid_argument("lpml: need at least one draw");
  const std::size_t n = loglik.front().size();
  double total = 0.0;
  std::vector<double> neg(S);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < S; ++s) neg[s] = -loglik[s][i];
    const double log_cpo = std::log(static_cast<double>(S)) - detail::log_sum_exp(neg);
    if (!std::isfinite(log_cpo))
      throw std::runtime_error("lpml: infinite CPO term at datum " + std::to_string(i));
    total += log_cpo;
  }
  return total;
}

// Pairwise co-clustering frequencies across draws: P[i][j] = fraction of
// draws in which units i and j share a cluster.
inline std::vector<std::vector<double>> coclustering_matrix(const std::vector<Partition>& draws) {
  if (draws.empty()) throw std::invalid_argument("coclustering_matrix: no draws");
  const int m = draws.front().size();
  std::vector<std::vector<double>> p(static_cast<std::size_t>(m),
                                     std::vector<double>(static_cast<std::size_t>(m), 0.0));
  for (const auto& d : draws) {
    if (d.size() != m) throw std::invalid_argument("coclustering_matrix: draw size mismatch");
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j)
        if (d.label(i) == d.label(j)) {
          p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] += 1.0;
          p[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] += i == j ? 0.0 : 1.0;
        }
  }
  const double S = static_cast<double>(draws.size());
  for (auto& row : p)
    for (auto& v : row) v /= S;
  return p;
}

enum class PartitionLoss { Binder, ViLb };

// Expected Binder loss of candidate labels against the co-clustering matrix.
inline double binder_loss(const Partition& c, const std::vector<std::vector<double>>& p) {
  const int m = c.size();
  double loss = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      const double ind = c.label(i) == c.label(j) ? 1.0 : 0.0;
      loss += std::fabs(ind - p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    }
  return loss;
}

// Jensen lower bound of the expected variation-of-information loss evaluated
// from the co-clustering matrix (the salso-style "VI.lb" objective).
inline double vi_lower_bound(const Partition& c, const std::vector<std::vector<double>>& p) {
  const int m = c.size();
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    double n_own = 0.0, p_sum = 0.0, p_own = 0.0;
    for (int j = 0; j < m; ++j) {
      const double pij = p[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      p_sum += pij;
      if (c.label(i) == c.label(j)) {
        n_own += 1.0;
        p_own += pij;
      }
    }
    loss += std::log2(n_own) + std::log2(p_sum) - 2.0 * std::log2(p_own);
  }
  return loss / m;
}

// Loss-minimizing sampled partition: the search space is the set of draws,
// ties broken by earliest draw index.
inline Partition point_estimate_partition(const std::vector<Partition>& draws, PartitionLoss loss) {
  if (draws.empty()) throw std::invalid_argument("point_estimate_partition: no draws");
  const auto p = coclustering_matrix(draws);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_idx = 0;
  for (std::size_t s = 0; s < draws.size(); ++s) {
    const double l = loss == PartitionLoss::Binder ? binder_loss(draws[s], p)
                                                   : vi_lower_bound(draws[s], p);
    if (l < best) {
      best = l;
      best_idx = s;
    }
  }
  return draws[best_idx];
}

struct CredibleInterval {
  double lo = 0.0;
  double hi = 0.0;
};

// Equal-tailed interval via linearly interpolated order statistics.
inline CredibleInterval credible_interval(std::vector<double> draws, double level = 0.95) {
  if (draws.empty()) throw std::invalid_argument("credible_interval: no draws");
  std::sort(draws.begin(), draws.end());
  auto quantile = [&](double q) {
    const double pos = q * (static_cast<double>(draws.size()) - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, draws.size() - 1);
    const double frac = pos - std::floor(pos);
    return draws[lo] * (1.0 - frac) + draws[hi] * frac;
  };
  const double tail = 0.5 * (1.0 - level);
  return {quantile(tail), quantile(1.0 - tail)};
}

struct EstimateReport {
  std::vector<Partition> partition_estimates;            // per t
  std::vector<std::vector<double>> lagged_ari;           // T x T ARI of the estimates
  std::map<std::string, CredibleInterval> scalar_intervals;
  std::vector<std::vector<double>> mu_mean;              // i][t] posterior mean of mu_it
  std::vector<std::vector<CredibleInterval>> mu_interval;  // i][t]
};

// Posterior summary: per-time point-estimate partitions, the ARI matrix
// between them, equal-tailed 95% intervals for the scalar parameters, and
// per-(i,t) intervals for mu_it tracked through each draw's labels.
inline EstimateReport estimate_report(const ChainOutput& chain,
                                      PartitionLoss loss = PartitionLoss::ViLb) {
  const long S = chain.n_saved();
  if (S < 1) throw std::invalid_argument("estimate_report: empty chain");
  const int T = chain.num_times;
  const int m = chain.m;
  EstimateReport rep;

  for (int t = 0; t < T; ++t) {
    std::vector<Partition> draws;
    draws.reserve(static_cast<std::size_t>(S));
    for (long s = 0; s < S; ++s)
      draws.push_back(chain.partitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)]);
    rep.partition_estimates.push_back(point_estimate_partition(draws, loss));
  }

  rep.lagged_ari.assign(static_cast<std::size_t>(T), std::vector<double>(static_cast<std::size_t>(T), 1.0));
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < T; ++u)
      rep.lagged_ari[static_cast<std::size_t>(t)][static_cast<std::size_t>(u)] = adjusted_rand_index(
          rep.partition_estimates[static_cast<std::size_t>(t)],
          rep.partition_estimates[static_cast<std::size_t>(u)]);

  rep.scalar_intervals["tau"] = credible_interval(chain.tau);
  rep.scalar_intervals["phi0"] = credible_interval(chain.phi0);
  rep.scalar_intervals["phi1"] = credible_interval(chain.phi1);
  rep.scalar_intervals["lambda"] = credible_interval(chain.lambda);
  for (int t = 0; t < T; ++t) {
    std::vector<double> th, al;
    for (long s = 0; s < S; ++s) {
      th.push_back(chain.theta[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)]);
      al.push_back(chain.alpha[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)]);
    }
    rep.scalar_intervals["theta[" + std::to_string(t + 1) + "]"] = credible_interval(th);
    if (t > 0) rep.scalar_intervals["alpha[" + std::to_string(t + 1) + "]"] = credible_interval(al);
  }
  for (int i = 0; i < m; ++i) {
    std::vector<double> e;
    for (long s = 0; s < S; ++s) e.push_back(chain.eta[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)]);
    rep.scalar_intervals["eta[" + std::to_string(i + 1) + "]"] = credible_interval(e);
  }

  rep.mu_mean.assign(static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(T), 0.0));
  rep.mu_interval.assign(static_cast<std::size_t>(m),
                         std::vector<CredibleInterval>(static_cast<std::size_t>(T)));
  std::vector<double> mu_draws(static_cast<std::size_t>(S));
  for (int i = 0; i < m; ++i) {
    for (int t = 0; t < T; ++t) {
      for (long s = 0; s < S; ++s) {
        const int j = chain.partitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)].label(i);
        mu_draws[static_cast<std::size_t>(s)] =
            chain.mu_star[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)][static_cast<std::size_t>(j - 1)];
      }
      double mean = 0.0;
      for (double v : mu_draws) mean += v;
      rep.mu_mean[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = mean / static_cast<double>(S);
      rep.mu_interval[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = credible_interval(mu_draws);
    }
  }
  return rep;
}

// Flattens a chain's S x m x T log-likelihood tensor to the S x n matrix the
// fit metrics expect.
inline std::vector<std::vector<double>> flatten_loglik(const ChainOutput& chain) {
  std::vector<std::vector<double>> out;
  out.reserve(chain.loglik.size());
  for (const auto& draw : chain.loglik) {
    std::vector<double> row;
    row.reserve(static_cast<std::size_t>(chain.m) * chain.num_times);
    for (const auto& unit : draw)
      for (double v : unit) row.push_back(v);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace trpm
