#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <vector>

#include "trpm/eppf.hpp"
#include "trpm/partition.hpp"
#include "trpm/rng.hpp"

namespace trpm {

// Parameters of the temporal dependent random partition prior: m units over T
// time points, one temporal dependence parameter per time step (alpha[0] is
// unused since every unit is freshly allocated at t=0), and the marginal EPPF.
struct TrpmParams {
  int m = 1;
  int num_times = 1;
  std::vector<double> alpha;  // size num_times
  EppfSpec eppf;

  void validate() const {
    if (m < 1) throw std::invalid_argument("TrpmParams: m must be positive");
    if (num_times < 1) throw std::invalid_argument("TrpmParams: T must be positive");
    if (static_cast<int>(alpha.size()) != num_times)
      throw std::invalid_argument("TrpmParams: alpha must have one entry per time point");
    for (double a : alpha)
      if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("TrpmParams: alpha outside [0,1]");
    eppf.validate();
    if (eppf.kind == EppfSpec::Kind::Sppm && static_cast<int>(eppf.coords.size()) != m)
      throw std::invalid_argument("TrpmParams: coordinate count must equal m");
  }
};

struct PriorDraw {
  std::vector<Partition> partitions;   // one per time point
  std::vector<GammaVector> gammas;     // gammas[0] is all zeros
};

namespace detail {

// Incremental sequential seating. Units are appended in seating order, so the
// compact labels stay in first-appearance canonical form throughout.
struct SeatingState {
  std::vector<int> units;
  std::vector<int> labels;

  void seat(int unit, const EppfSpec& spec, Rng& rng) {
    const Partition partial = labels.empty() ? Partition() : Partition::canonicalize(labels);
    const auto logw = seating_log_weights(partial, units, unit, spec);
    const int choice = rng.categorical_from_log(logw);
    units.push_back(unit);
    labels.push_back(choice + 1);  // choice == k means a new cluster labeled k+1
  }
};

}  // namespace detail

// Forward simulation of the joint prior over (gamma, rho) sequences. rho_1 is
// drawn from the EPPF by sequential seating; at each later time the gamma=1
// units keep their previous co-memberships (the reduced partition) and the
// free units are reseated in uniformly random order. For the CRP this is an
// exact draw from the compatibility-constrained conditional.
inline PriorDraw sample_joint_prior(const TrpmParams& params, Rng& rng) {
  params.validate();
  const int m = params.m;
  PriorDraw draw;
  draw.partitions.resize(static_cast<std::size_t>(params.num_times));
  draw.gammas.assign(static_cast<std::size_t>(params.num_times),
                     GammaVector(static_cast<std::size_t>(m), 0));

  for (int t = 0; t < params.num_times; ++t) {
    auto& gamma = draw.gammas[static_cast<std::size_t>(t)];
    detail::SeatingState seats;
    std::vector<int> free_units;
    if (t == 0) {
      free_units.resize(static_cast<std::size_t>(m));
      std::iota(free_units.begin(), free_units.end(), 0);
    } else {
      const double a = params.alpha[static_cast<std::size_t>(t)];
      const Partition& prev = draw.partitions[static_cast<std::size_t>(t - 1)];
      for (int i = 0; i < m; ++i) gamma[static_cast<std::size_t>(i)] = rng.bernoulli(a) ? 1 : 0;
      std::vector<int> fixed;
      for (int i = 0; i < m; ++i)
        (gamma[static_cast<std::size_t>(i)] ? fixed : free_units).push_back(i);
      const Partition reduced = restrict_to(prev, fixed);
      seats.units = fixed;
      seats.labels = reduced.labels();
    }
    rng.shuffle(free_units);
    for (int unit : free_units) seats.seat(unit, params.eppf, rng);

    // Map seating-order labels back to unit order and canonicalize.
    std::vector<int> labels(static_cast<std::size_t>(m), 0);
    for (std::size_t s = 0; s < seats.units.size(); ++s)
      labels[static_cast<std::size_t>(seats.units[s])] = seats.labels[s];
    draw.partitions[static_cast<std::size_t>(t)] = Partition::canonicalize(labels);
  }
  return draw;
}

// Exact one-step transition distribution Pr(rho_t | rho_{t-1}) obtained by
// enumerating all 2^m gamma vectors and, for each, normalizing the EPPF over
// the compatible set of partitions. Exact for any EPPF since the
// normalization constant over all partitions cancels inside each gamma term.
inline std::map<Partition, double> exact_conditional_table(const Partition& rho_prev,
                                                           double alpha,
                                                           const EppfSpec& eppf) {
  const int m = rho_prev.size();
  if (m < 1) throw std::invalid_argument("exact_conditional_table: empty partition");
  if (m > 10) throw std::length_error("exact_conditional_table: m > 10 exceeds resource limit");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("exact_conditional_table: alpha outside [0,1]");

  std::vector<int> all_units(static_cast<std::size_t>(m));
  std::iota(all_units.begin(), all_units.end(), 0);
  const auto all = enumerate_partitions(m);
  std::vector<double> weight(all.size());
  for (std::size_t j = 0; j < all.size(); ++j)
    weight[j] = std::exp(eppf_log_weight(all[j], all_units, eppf));

  std::map<Partition, double> table;
  for (const auto& lambda : all) table.emplace(lambda, 0.0);

  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    const int ones = std::popcount(mask);
    double pg = 1.0;
    for (int b = 0; b < ones; ++b) pg *= alpha;
    for (int b = 0; b < m - ones; ++b) pg *= 1.0 - alpha;
    if (pg == 0.0) continue;

    std::vector<int> fixed;
    for (int i = 0; i < m; ++i)
      if (mask & (1u << i)) fixed.push_back(i);
    const Partition target = restrict_to(rho_prev, fixed);

    std::vector<std::size_t> compatible;
    double z = 0.0;
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (restrict_to(all[j], fixed) == target) {
        compatible.push_back(j);
        z += weight[j];
      }
    }
    for (std::size_t j : compatible) table[all[j]] += pg * weight[j] / z;
  }
  return table;
}

// Monte Carlo summary of prior partition similarity: for each lag, the mean
// over draws of ARI(rho_t, rho_{t+lag}) averaged over valid t, with standard
// errors. The data behind a lagged-ARI surface plot.
struct LaggedAriSummary {
  std::vector<double> mean;  // index lag-1
  std::vector<double> se;
  long n_draws = 0;
};

inline LaggedAriSummary lagged_ari_summary(const TrpmParams& params, long n_draws,
                                           std::uint64_t seed, int n_threads = 1) {
  params.validate();
  if (n_draws < 1) throw std::invalid_argument("lagged_ari_summary: n_draws must be positive");
  const int num_lags = params.num_times - 1;
  LaggedAriSummary out;
  out.n_draws = n_draws;
  out.mean.assign(static_cast<std::size_t>(num_lags), 0.0);
  out.se.assign(static_cast<std::size_t>(num_lags), 0.0);
  if (num_lags == 0) return out;

  // Per-draw lag profiles, filled by draw index so the result is independent
  // of the thread count.
  std::vector<double> per_draw(static_cast<std::size_t>(n_draws) * num_lags);
  const Rng base(seed);
  auto worker = [&](long lo, long hi) {
    for (long r = lo; r < hi; ++r) {
      Rng rng = base.fork(static_cast<std::uint64_t>(r));
      const PriorDraw draw = sample_joint_prior(params, rng);
      for (int lag = 1; lag <= num_lags; ++lag) {
        double acc = 0.0;
        int cnt = 0;
        for (int t = 0; t + lag < params.num_times; ++t) {
          acc += adjusted_rand_index(draw.partitions[static_cast<std::size_t>(t)],
                                     draw.partitions[static_cast<std::size_t>(t + lag)]);
          ++cnt;
        }
        per_draw[static_cast<std::size_t>(r) * num_lags + (lag - 1)] = acc / cnt;
      }
    }
  };
  if (n_threads <= 1) {
    worker(0, n_draws);
  } else {
    std::vector<std::thread> pool;
    const long chunk = (n_draws + n_threads - 1) / n_threads;
    for (int w = 0; w < n_threads; ++w) {
      const long lo = w * chunk;
      const long hi = std::min<long>(n_draws, lo + chunk);
      if (lo < hi) pool.emplace_back(worker, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  for (int lag = 0; lag < num_lags; ++lag) {
    double sum = 0.0, comp = 0.0;  // Kahan
    for (long r = 0; r < n_draws; ++r) {
      const double y = per_draw[static_cast<std::size_t>(r) * num_lags + lag] - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    const double mean = sum / static_cast<double>(n_draws);
    double ss = 0.0;
    for (long r = 0; r < n_draws; ++r) {
      const double d = per_draw[static_cast<std::size_t>(r) * num_lags + lag] - mean;
      ss += d * d;
    }
    out.mean[static_cast<std::size_t>(lag)] = mean;
    out.se[static_cast<std::size_t>(lag)] =
        n_draws > 1 ? std::sqrt(ss / (static_cast<double>(n_draws) * (n_draws - 1)))
                    : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace trpm
