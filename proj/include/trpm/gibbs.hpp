#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trpm/eppf.hpp"
#include "trpm/partition.hpp"
#include "trpm/prior.hpp"
#include "trpm/rng.hpp"

namespace trpm {

struct Dataset {
  std::vector<std::string> unit_ids;       // optional, sized m when present
  std::vector<std::vector<double>> y;      // y[i][t], m x T
  std::optional<std::vector<Coord>> coords;

  int m() const { return static_cast<int>(y.size()); }
  int num_times() const { return y.empty() ? 0 : static_cast<int>(y.front().size()); }

  void validate(bool need_coords) const {
    if (y.empty() || y.front().empty()) throw std::invalid_argument("Dataset: empty response matrix");
    for (const auto& row : y) {
      if (static_cast<int>(row.size()) != num_times())
        throw std::invalid_argument("Dataset: ragged response matrix");
      for (double v : row)
        if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite response");
    }
    if (need_coords) {
      if (!coords || static_cast<int>(coords->size()) != m())
        throw std::invalid_argument("Dataset: spatial model requires one coordinate pair per unit");
    }
    if (!unit_ids.empty() && static_cast<int>(unit_ids.size()) != m())
      throw std::invalid_argument("Dataset: unit id count mismatch");
  }
};

// Configuration for the hierarchical model sampler. The three dependence
// toggles select among the 8 model variants; spatial switches the partition
// law from CRP to the spatial PPM.
struct ModelConfig {
  bool partition_dependence = true;  // alpha_t free vs fixed at 0
  bool likelihood_ar = false;        // eta_1i free vs fixed at 0
  bool atom_ar = false;              // phi_1 free vs fixed at 0
  bool spatial = false;

  double crp_mass = 1.0;   // M
  double sppm_dof = 5.0;   // nu0
  double a_sigma = 5.0;
  double a_tau = 5.0;
  double a_lambda = 5.0;
  double phi0_prior_var = 100.0;  // s^2
  double laplace_loc = 0.0;       // a
  double laplace_scale = 1.0;     // b
  double alpha_shape1 = 1.0;      // a_alpha
  double alpha_shape2 = 1.0;      // b_alpha

  long iterations = 10000;
  long burnin = 5000;
  long thinning = 5;
  double sigma_prop_sd = 0.0;   // 0 selects the default 0.1 * A_sigma
  double tau_prop_sd = 0.0;
  double lambda_prop_sd = 0.0;
  double xi_prop_sd = 0.2;
  double phi1_prop_sd = 0.2;
  std::uint64_t seed = 1;

  // Validation hook for exact-enumeration tests: pins the atom of canonical
  // cluster j at every time point to (fixed_atom_means[j-1], fixed_atom_sd)
  // and disables all continuous-parameter updates.
  std::vector<double> fixed_atom_means;
  double fixed_atom_sd = 1.0;
  bool fixed_atoms() const { return !fixed_atom_means.empty(); }

  void validate() const {
    if (!(crp_mass > 0.0)) throw std::invalid_argument("ModelConfig: M must be positive");
    if (!(a_sigma > 0.0 && a_tau > 0.0 && a_lambda > 0.0))
      throw std::invalid_argument("ModelConfig: uniform support bounds must be positive");
    if (!(phi0_prior_var > 0.0)) throw std::invalid_argument("ModelConfig: s^2 must be positive");
    if (!(laplace_scale > 0.0)) throw std::invalid_argument("ModelConfig: Laplace scale must be positive");
    if (!(alpha_shape1 > 0.0 && alpha_shape2 > 0.0))
      throw std::invalid_argument("ModelConfig: Beta shapes must be positive");
    if (iterations < 1 || burnin < 0 || burnin >= iterations || thinning < 1)
      throw std::invalid_argument("ModelConfig: bad iteration/burnin/thinning settings");
    if (spatial && !(sppm_dof > 1.0)) throw std::invalid_argument("ModelConfig: nu0 must exceed 1");
    if (fixed_atoms() && fixed_atom_sd <= 0.0)
      throw std::invalid_argument("ModelConfig: fixed atom sd must be positive");
  }

  long n_saved() const { return (iterations - burnin) / thinning; }

  double sigma_step() const { return sigma_prop_sd > 0.0 ? sigma_prop_sd : 0.1 * a_sigma; }
  double tau_step() const { return tau_prop_sd > 0.0 ? tau_prop_sd : 0.1 * a_tau; }
  double lambda_step() const { return lambda_prop_sd > 0.0 ? lambda_prop_sd : 0.1 * a_lambda; }
};

struct McmcState {
  std::vector<Partition> rho;                   // T
  std::vector<GammaVector> gamma;               // T x m, gamma[0] all zero
  std::vector<std::vector<double>> mu_star;     // T x k_t
  std::vector<std::vector<double>> sigma_star;  // T x k_t, values in (0, A_sigma)
  std::vector<double> theta;                    // T
  std::vector<double> alpha;                    // T, alpha[0] unused
  double tau = 1.0;
  double phi0 = 0.0;
  double phi1 = 0.0;
  double lambda = 1.0;
  std::vector<double> eta;  // m, values in (-1, 1)

  double xi(int i) const {  // Logit(0.5*(eta+1))
    const double e = eta[static_cast<std::size_t>(i)];
    return std::log1p(e) - std::log1p(-e);
  }
};

struct ChainOutput {
  int m = 0;
  int num_times = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<Partition>> partitions;               // s][t]
  std::vector<std::vector<GammaVector>> gammas;                 // s][t][i]
  std::vector<std::vector<std::vector<double>>> mu_star;        // s][t][j]
  std::vector<std::vector<std::vector<double>>> sigma_star;     // s][t][j]
  std::vector<std::vector<double>> theta;                       // s][t]
  std::vector<std::vector<double>> alpha;                       // s][t]
  std::vector<double> tau, phi0, phi1, lambda;                  // s]
  std::vector<std::vector<double>> eta;                         // s][i]
  std::vector<std::vector<std::vector<double>>> loglik;         // s][i][t]
  std::map<std::string, double> acceptance_rates;

  long n_saved() const { return static_cast<long>(partitions.size()); }
};

// Thrown when a Metropolis acceptance probability turns up NaN; carries a
// dump of the offending block so the likelihood bug can be located.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * (x - mean) * (x - mean) / var;
}

inline double log_laplace_pdf(double x, double loc, double scale) {
  return -std::log(2.0 * scale) - std::fabs(x - loc) / scale;
}

constexpr double kVarFloor = 1e-12;
constexpr double kEtaBound = 1.0 - 1e-6;
constexpr double kPhiBound = 1.0 - 1e-6;

}  // namespace detail

class GibbsSampler {
 public:
  GibbsSampler(const Dataset& data, const ModelConfig& cfg) : data_(data), cfg_(cfg) {
    cfg_.validate();
    data_.validate(cfg_.spatial);
    if (cfg_.fixed_atoms() && static_cast<int>(cfg_.fixed_atom_means.size()) < data_.m())
      throw std::invalid_argument("ModelConfig: fixed atom list must cover up to m clusters");
    if (cfg_.spatial) {
      std_ = standardize_coords(*data_.coords);
      eppf_ = EppfSpec::sppm(cfg_.crp_mass, cfg_.sppm_dof, std_.standardized);
    } else {
      eppf_ = EppfSpec::crp(cfg_.crp_mass);
    }
    all_units_.resize(static_cast<std::size_t>(data_.m()));
    std::iota(all_units_.begin(), all_units_.end(), 0);
    init_state();
  }

  const McmcState& state() const { return state_; }
  McmcState& mutable_state() { return state_; }

  // Swaps in a new response matrix of identical shape, keeping the state.
  // Used when the sampler runs inside a larger simulation loop.
  void replace_data(const Dataset& data) {
    if (data.m() != data_.m() || data.num_times() != data_.num_times())
      throw std::invalid_argument("replace_data: dimension mismatch");
    data.validate(cfg_.spatial);
    data_.y = data.y;
  }
  const EppfSpec& eppf() const { return eppf_; }
  const ModelConfig& config() const { return cfg_; }

  // Replaces the partition at time t, redrawing (or re-pinning) its atoms.
  void set_partition(int t, const Partition& p, Rng& rng) {
    if (p.size() != data_.m()) throw std::invalid_argument("set_partition: size mismatch");
    state_.rho[static_cast<std::size_t>(t)] = p;
    resize_atoms(t, rng);
  }

  // Two-point conditional for the reallocation indicator of unit i at time t.
  void update_gamma(int t, int i, Rng& rng) {
    if (t < 1) throw std::invalid_argument("update_gamma: t must be >= 2nd time point");
    auto& g = state_.gamma[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
    if (!cfg_.partition_dependence) {
      g = 0;
      return;
    }
    const double a = state_.alpha[static_cast<std::size_t>(t)];
    if (a <= 0.0) {
      g = 0;
      return;
    }
    const Partition& cur = state_.rho[static_cast<std::size_t>(t)];
    const Partition& prev = state_.rho[static_cast<std::size_t>(t - 1)];
    std::vector<int> fixed_others;
    for (int j = 0; j < data_.m(); ++j)
      if (j != i && state_.gamma[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)])
        fixed_others.push_back(j);

    // Setting gamma=1 is feasible only if i's co-memberships with the fixed
    // units agree between rho_{t-1} and rho_t; otherwise that branch has
    // probability zero.
    std::vector<int> fixed_with_i = fixed_others;
    fixed_with_i.push_back(i);
    std::sort(fixed_with_i.begin(), fixed_with_i.end());
    if (restrict_to(cur, fixed_with_i) != restrict_to(prev, fixed_with_i)) {
      g = 0;
      return;
    }
    if (a >= 1.0) {
      g = 1;
      return;
    }
    // Pr(gamma=1|-) = a / (a + (1-a) q) where q is the predictive probability
    // that i, appended to the reduced partition over the other fixed units,
    // lands in its current cluster. This is the reduced-EPPF probability
    // ratio in predictive form (exact for the CRP).
    const Partition reduced = restrict_to(cur, fixed_others);
    int target = reduced.num_clusters() + 1;  // new cluster unless a fixed unit shares i's cluster
    for (std::size_t p = 0; p < fixed_others.size(); ++p) {
      if (cur.label(fixed_others[p]) == cur.label(i)) {
        target = reduced.label(static_cast<int>(p));
        break;
      }
    }
    const double q = std::exp(seating_log_predictive(reduced, fixed_others, i, target, eppf_));
    const double p1 = a / (a + (1.0 - a) * q);
    g = rng.bernoulli(p1) ? 1 : 0;
  }

  // Auxiliary-cluster label move for a free unit (Neal's Algorithm 8 with one
  // auxiliary pair), screened against forward compatibility with rho_{t+1}.
  void update_cluster_label(int t, int i, Rng& rng) {
    if (state_.gamma[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)])
      throw std::invalid_argument("update_cluster_label: unit is fixed by gamma");
    const Partition& cur = state_.rho[static_cast<std::size_t>(t)];
    const int m = data_.m();

    // Partition over the other units, with atoms carried along.
    std::vector<int> others;
    std::vector<int> other_raw_labels;
    others.reserve(static_cast<std::size_t>(m) - 1);
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      others.push_back(j);
      other_raw_labels.push_back(cur.label(j));
    }
    const Partition without =
        others.empty() ? Partition() : Partition::canonicalize(other_raw_labels);
    const int k_wo = without.num_clusters();
    std::vector<double> mu_wo(static_cast<std::size_t>(k_wo));
    std::vector<double> sig_wo(static_cast<std::size_t>(k_wo));
    for (std::size_t p = 0; p < others.size(); ++p) {
      const int lw = without.label(static_cast<int>(p));
      const int lc = cur.label(others[p]);
      mu_wo[static_cast<std::size_t>(lw - 1)] = state_.mu_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(lc - 1)];
      sig_wo[static_cast<std::size_t>(lw - 1)] = state_.sigma_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(lc - 1)];
    }

    // Auxiliary atoms: reuse i's atoms if it sat alone, otherwise a prior draw.
    const bool was_singleton = cur.cluster_sizes()[static_cast<std::size_t>(cur.label(i) - 1)] == 1;
    double aux_mu, aux_sigma;
    if (cfg_.fixed_atoms()) {
      aux_mu = cfg_.fixed_atom_means[static_cast<std::size_t>(k_wo)];
      aux_sigma = cfg_.fixed_atom_sd;
    } else if (was_singleton) {
      aux_mu = state_.mu_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(cur.label(i) - 1)];
      aux_sigma = state_.sigma_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(cur.label(i) - 1)];
    } else {
      aux_mu = rng.normal(state_.theta[static_cast<std::size_t>(t)], state_.tau);
      aux_sigma = rng.uniform(0.0, cfg_.a_sigma);
    }

    const auto prior_logw = seating_log_weights(without, others, i, eppf_);
    std::vector<double> logw(static_cast<std::size_t>(k_wo) + 1,
                             -std::numeric_limits<double>::infinity());
    for (int h = 1; h <= k_wo + 1; ++h) {
      if (!forward_compatible(t, i, h, without, others)) continue;
      double lik;
      if (cfg_.fixed_atoms()) {
        lik = full_loglik_fixed(t, i, h, without, others);
      } else {
        const double mu = h <= k_wo ? mu_wo[static_cast<std::size_t>(h - 1)] : aux_mu;
        const double sig = h <= k_wo ? sig_wo[static_cast<std::size_t>(h - 1)] : aux_sigma;
        lik = obs_loglik(i, t, mu, sig);
      }
      logw[static_cast<std::size_t>(h - 1)] = prior_logw[static_cast<std::size_t>(h - 1)] + lik;
    }
    const int choice = rng.categorical_from_log(logw) + 1;

    // Rebuild the time-t partition and its atom vectors in canonical order.
    std::vector<int> new_labels(static_cast<std::size_t>(m));
    for (std::size_t p = 0; p < others.size(); ++p)
      new_labels[static_cast<std::size_t>(others[p])] = without.label(static_cast<int>(p));
    new_labels[static_cast<std::size_t>(i)] = choice;
    const Partition updated = Partition::canonicalize(new_labels);
    const int k_new = updated.num_clusters();
    std::vector<double> mu_new(static_cast<std::size_t>(k_new));
    std::vector<double> sig_new(static_cast<std::size_t>(k_new));
    for (int j = 0; j < m; ++j) {
      const int pre = new_labels[static_cast<std::size_t>(j)];
      const int post = updated.label(j);
      if (pre <= k_wo) {
        mu_new[static_cast<std::size_t>(post - 1)] = mu_wo[static_cast<std::size_t>(pre - 1)];
        sig_new[static_cast<std::size_t>(post - 1)] = sig_wo[static_cast<std::size_t>(pre - 1)];
      } else {
        mu_new[static_cast<std::size_t>(post - 1)] = aux_mu;
        sig_new[static_cast<std::size_t>(post - 1)] = aux_sigma;
      }
    }
    state_.rho[static_cast<std::size_t>(t)] = updated;
    state_.mu_star[static_cast<std::size_t>(t)] = std::move(mu_new);
    state_.sigma_star[static_cast<std::size_t>(t)] = std::move(sig_new);
    if (cfg_.fixed_atoms()) pin_atoms(t);
  }

  // Conjugate Beta draw for the temporal dependence parameter at time t.
  void update_alpha(int t, Rng& rng) {
    if (!cfg_.partition_dependence || t < 1) return;
    int ones = 0;
    for (auto g : state_.gamma[static_cast<std::size_t>(t)]) ones += g;
    state_.alpha[static_cast<std::size_t>(t)] =
        rng.beta(cfg_.alpha_shape1 + ones, cfg_.alpha_shape2 + data_.m() - ones);
  }

  // Cluster atoms: conjugate normal for mu*, random-walk Metropolis for
  // sigma* on (0, A_sigma).
  void update_atoms(Rng& rng) {
    if (cfg_.fixed_atoms()) return;
    for (int t = 0; t < data_.num_times(); ++t) {
      const Partition& rho = state_.rho[static_cast<std::size_t>(t)];
      for (int j = 1; j <= rho.num_clusters(); ++j) {
        const auto members = rho.cluster_members(j);
        auto& mu = state_.mu_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(j - 1)];
        auto& sig = state_.sigma_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(j - 1)];

        double prec = 1.0 / (state_.tau * state_.tau);
        double num = state_.theta[static_cast<std::size_t>(t)] * prec;
        for (int u : members) {
          const auto [shift, var] = obs_shift_var(u, t, sig);
          prec += 1.0 / var;
          num += (data_.y[static_cast<std::size_t>(u)][static_cast<std::size_t>(t)] - shift) / var;
        }
        mu = rng.normal(num / prec, std::sqrt(1.0 / prec));

        const double prop = sig + cfg_.sigma_step() * rng.normal();
        if (prop > 0.0 && prop < cfg_.a_sigma) {
          double lr = 0.0;
          for (int u : members)
            lr += obs_loglik(u, t, mu, prop) - obs_loglik(u, t, mu, sig);
          if (mh_accept("sigma", lr, rng)) sig = prop;
        } else {
          count_reject("sigma");
        }
      }
    }
  }

  // One sweep over theta_t, tau, phi0, phi1, lambda, and the xi/eta block.
  void update_continuous(Rng& rng) {
    if (cfg_.fixed_atoms()) return;
    const int T = data_.num_times();
    const double lam2 = state_.lambda * state_.lambda;
    // theta_t: normal prior chain combined with the atom likelihood.
    for (int t = 0; t < T; ++t) {
      const double v_in = t == 0 ? lam2 : ar_var();
      const double m_in = t == 0 ? state_.phi0
                                 : state_.phi0 + state_.phi1 * state_.theta[static_cast<std::size_t>(t - 1)];
      double prec = 1.0 / v_in;
      double num = m_in / v_in;
      if (t + 1 < T) {
        const double v_f = ar_var();
        prec += state_.phi1 * state_.phi1 / v_f;
        num += state_.phi1 * (state_.theta[static_cast<std::size_t>(t + 1)] - state_.phi0) / v_f;
      }
      const double tau2 = state_.tau * state_.tau;
      for (double mu : state_.mu_star[static_cast<std::size_t>(t)]) {
        prec += 1.0 / tau2;
        num += mu / tau2;
      }
      state_.theta[static_cast<std::size_t>(t)] = rng.normal(num / prec, std::sqrt(1.0 / prec));
    }

    // tau: Metropolis on (0, A_tau) against the atom-mean likelihood.
    {
      const double prop = state_.tau + cfg_.tau_step() * rng.normal();
      if (prop > 0.0 && prop < cfg_.a_tau) {
        double lr = 0.0;
        for (int t = 0; t < T; ++t)
          for (double mu : state_.mu_star[static_cast<std::size_t>(t)])
            lr += detail::log_normal_pdf(mu, state_.theta[static_cast<std::size_t>(t)], prop * prop) -
                  detail::log_normal_pdf(mu, state_.theta[static_cast<std::size_t>(t)], state_.tau * state_.tau);
        if (mh_accept("tau", lr, rng)) state_.tau = prop;
      } else {
        count_reject("tau");
      }
    }

    // phi0: conjugate normal with N(0, s^2) prior.
    {
      const double v = ar_var();
      double prec = 1.0 / cfg_.phi0_prior_var + 1.0 / lam2;
      double num = state_.theta[0] / lam2;
      for (int t = 1; t < T; ++t) {
        prec += 1.0 / v;
        num += (state_.theta[static_cast<std::size_t>(t)] -
                state_.phi1 * state_.theta[static_cast<std::size_t>(t - 1)]) /
               v;
      }
      state_.phi0 = rng.normal(num / prec, std::sqrt(1.0 / prec));
    }

    // phi1: Metropolis on (-1, 1); present only in the AR(1)-atom variant.
    if (cfg_.atom_ar && T > 1) {
      const double prop = state_.phi1 + cfg_.phi1_prop_sd * rng.normal();
      if (std::fabs(prop) < detail::kPhiBound) {
        double lr = 0.0;
        for (int t = 1; t < T; ++t) {
          const double th_prev = state_.theta[static_cast<std::size_t>(t - 1)];
          const double th = state_.theta[static_cast<std::size_t>(t)];
          lr += detail::log_normal_pdf(th, state_.phi0 + prop * th_prev,
                                       std::max(lam2 * (1.0 - prop * prop), detail::kVarFloor)) -
                detail::log_normal_pdf(th, state_.phi0 + state_.phi1 * th_prev, ar_var());
        }
        if (mh_accept("phi1", lr, rng)) state_.phi1 = prop;
      } else {
        count_reject("phi1");
      }
    }

    // lambda: Metropolis on (0, A_lambda) against the theta chain.
    {
      const double prop = state_.lambda + cfg_.lambda_step() * rng.normal();
      if (prop > 0.0 && prop < cfg_.a_lambda) {
        auto chain_ll = [&](double l) {
          const double l2 = l * l;
          const double v = std::max(l2 * (1.0 - state_.phi1 * state_.phi1), detail::kVarFloor);
          double ll = detail::log_normal_pdf(state_.theta[0], state_.phi0, l2);
          for (int t = 1; t < T; ++t)
            ll += detail::log_normal_pdf(
                state_.theta[static_cast<std::size_t>(t)],
                state_.phi0 + state_.phi1 * state_.theta[static_cast<std::size_t>(t - 1)], v);
          return ll;
        };
        if (mh_accept("lambda", chain_ll(prop) - chain_ll(state_.lambda), rng)) state_.lambda = prop;
      } else {
        count_reject("lambda");
      }
    }

    // xi/eta block: random-walk on xi with Laplace prior and the AR(1)
    // observation likelihood; present only when the likelihood is AR.
    if (cfg_.likelihood_ar && T > 1) {
      for (int i = 0; i < data_.m(); ++i) {
        const double xi_cur = state_.xi(i);
        const double xi_prop = xi_cur + cfg_.xi_prop_sd * rng.normal();
        const double eta_prop =
            std::clamp(std::tanh(0.5 * xi_prop), -detail::kEtaBound, detail::kEtaBound);
        auto unit_ll = [&](double eta) {
          double ll = 0.0;
          for (int t = 1; t < T; ++t) {
            const int j = state_.rho[static_cast<std::size_t>(t)].label(i);
            const double mu = state_.mu_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(j - 1)];
            const double sig = state_.sigma_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(j - 1)];
            const double var = std::max(sig * sig * (1.0 - eta * eta), detail::kVarFloor);
            ll += detail::log_normal_pdf(
                data_.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)],
                mu + eta * data_.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t - 1)], var);
          }
          return ll;
        };
        const double lr = unit_ll(eta_prop) - unit_ll(state_.eta[static_cast<std::size_t>(i)]) +
                          detail::log_laplace_pdf(xi_prop, cfg_.laplace_loc, cfg_.laplace_scale) -
                          detail::log_laplace_pdf(xi_cur, cfg_.laplace_loc, cfg_.laplace_scale);
        if (mh_accept("xi", lr, rng)) state_.eta[static_cast<std::size_t>(i)] = eta_prop;
      }
    }
  }

  // Full Gibbs sweep: per time point gamma then labels, then atoms, then the
  // continuous hyperparameters, then the alpha block.
  void sweep(Rng& rng) {
    const int T = data_.num_times();
    for (int t = 0; t < T; ++t) {
      if (t > 0 && cfg_.partition_dependence)
        for (int i = 0; i < data_.m(); ++i) update_gamma(t, i, rng);
      for (int i = 0; i < data_.m(); ++i)
        if (!state_.gamma[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)])
          update_cluster_label(t, i, rng);
    }
    update_atoms(rng);
    update_continuous(rng);
    for (int t = 1; t < T; ++t) update_alpha(t, rng);
#ifndef NDEBUG
    check_invariants();
#endif
  }

  // Pointwise observation log density under the current state.
  double loglik_point(int i, int t) const {
    const int j = state_.rho[static_cast<std::size_t>(t)].label(i);
    return obs_loglik(i, t, state_.mu_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(j - 1)],
                      state_.sigma_star[static_cast<std::size_t>(t)][static_cast<std::size_t>(j - 1)]);
  }

  void check_invariants() const {
    const int T = data_.num_times();
    for (int t = 0; t < T; ++t) {
      const auto& rho = state_.rho[static_cast<std::size_t>(t)];
      require_canonical(rho);
      if (static_cast<int>(state_.mu_star[static_cast<std::size_t>(t)].size()) != rho.num_clusters() ||
          static_cast<int>(state_.sigma_star[static_cast<std::size_t>(t)].size()) != rho.num_clusters())
        throw std::logic_error("atom vectors out of step with cluster count");
      if (t > 0 && !is_compatible(rho, state_.rho[static_cast<std::size_t>(t - 1)],
                                  state_.gamma[static_cast<std::size_t>(t)]))
        throw std::logic_error("compatibility invariant violated");
      for (double s : state_.sigma_star[static_cast<std::size_t>(t)])
        if (!(s > 0.0 && s < cfg_.a_sigma)) throw std::logic_error("sigma* outside support");
    }
    for (auto g : state_.gamma[0])
      if (g) throw std::logic_error("gamma at the first time point must be zero");
    if (!(state_.tau > 0.0 && state_.tau < cfg_.a_tau)) throw std::logic_error("tau outside support");
    if (!(state_.lambda > 0.0 && state_.lambda < cfg_.a_lambda))
      throw std::logic_error("lambda outside support");
    if (!(std::fabs(state_.phi1) < 1.0)) throw std::logic_error("phi1 outside support");
    for (double e : state_.eta)
      if (!(std::fabs(e) < 1.0)) throw std::logic_error("eta outside support");
  }

  std::map<std::string, double> acceptance_rates() const {
    std::map<std::string, double> out;
    for (const auto& [name, c] : counters_)
      out[name] = c.attempts == 0 ? 0.0 : static_cast<double>(c.accepts) / c.attempts;
    return out;
  }

 private:
  struct Counter {
    long attempts = 0;
    long accepts = 0;
  };

  void init_state() {
    const int m = data_.m();
    const int T = data_.num_times();
    state_.rho.assign(static_cast<std::size_t>(T),
                      Partition::canonicalize(std::vector<int>(static_cast<std::size_t>(m), 1)));
    state_.gamma.assign(static_cast<std::size_t>(T), GammaVector(static_cast<std::size_t>(m), 0));
    state_.mu_star.resize(static_cast<std::size_t>(T));
    state_.sigma_star.resize(static_cast<std::size_t>(T));
    state_.theta.resize(static_cast<std::size_t>(T));
    state_.alpha.assign(static_cast<std::size_t>(T), cfg_.partition_dependence ? 0.5 : 0.0);
    state_.eta.assign(static_cast<std::size_t>(m), 0.0);
    state_.tau = 0.5 * cfg_.a_tau;
    state_.lambda = 0.5 * cfg_.a_lambda;
    state_.phi1 = 0.0;
    double grand = 0.0;
    for (int t = 0; t < T; ++t) {
      double mean = 0.0;
      for (int i = 0; i < m; ++i) mean += data_.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
      mean /= m;
      grand += mean;
      state_.theta[static_cast<std::size_t>(t)] = mean;
      if (cfg_.fixed_atoms()) {
        state_.mu_star[static_cast<std::size_t>(t)] = {cfg_.fixed_atom_means[0]};
        state_.sigma_star[static_cast<std::size_t>(t)] = {cfg_.fixed_atom_sd};
      } else {
        double ss = 0.0;
        for (int i = 0; i < m; ++i) {
          const double d = data_.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] - mean;
          ss += d * d;
        }
        const double sd = m > 1 ? std::sqrt(ss / (m - 1)) : 1.0;
        state_.mu_star[static_cast<std::size_t>(t)] = {mean};
        state_.sigma_star[static_cast<std::size_t>(t)] = {
            std::clamp(sd, 0.05 * cfg_.a_sigma, 0.95 * cfg_.a_sigma)};
      }
    }
    state_.phi0 = grand / T;
  }

  void resize_atoms(int t, Rng& rng) {
    const int k = state_.rho[static_cast<std::size_t>(t)].num_clusters();
    auto& mu = state_.mu_star[static_cast<std::size_t>(t)];
    auto& sig = state_.sigma_star[static_cast<std::size_t>(t)];
    mu.resize(static_cast<std::size_t>(k));
    sig.resize(static_cast<std::size_t>(k));
    if (cfg_.fixed_atoms()) {
      pin_atoms(t);
      return;
    }
    for (int j = 0; j < k; ++j) {
      mu[static_cast<std::size_t>(j)] = rng.normal(state_.theta[static_cast<std::size_t>(t)], state_.tau);
      sig[static_cast<std::size_t>(j)] = rng.uniform(0.0, cfg_.a_sigma);
    }
  }

  void pin_atoms(int t) {
    const int k = state_.rho[static_cast<std::size_t>(t)].num_clusters();
    auto& mu = state_.mu_star[static_cast<std::size_t>(t)];
    auto& sig = state_.sigma_star[static_cast<std::size_t>(t)];
    mu.resize(static_cast<std::size_t>(k));
    sig.resize(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      mu[static_cast<std::size_t>(j)] = cfg_.fixed_atom_means[static_cast<std::size_t>(j)];
      sig[static_cast<std::size_t>(j)] = cfg_.fixed_atom_sd;
    }
  }

  // (additive shift to the mean, observation variance) for unit i at time t
  // given its cluster's sigma; the cluster mean is added by the caller.
  std::pair<double, double> obs_shift_var(int i, int t, double sigma) const {
    if (cfg_.likelihood_ar && t > 0) {
      const double e = state_.eta[static_cast<std::size_t>(i)];
      return {e * data_.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t - 1)],
              std::max(sigma * sigma * (1.0 - e * e), detail::kVarFloor)};
    }
    return {0.0, std::max(sigma * sigma, detail::kVarFloor)};
  }

  double obs_loglik(int i, int t, double mu, double sigma) const {
    const auto [shift, var] = obs_shift_var(i, t, sigma);
    return detail::log_normal_pdf(data_.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)],
                                  mu + shift, var);
  }

  // In pinned-atom mode relabeling can move every unit's atom, so the label
  // conditional needs the likelihood of the whole candidate partition.
  double full_loglik_fixed(int t, int i, int h, const Partition& without,
                           const std::vector<int>& others) const {
    std::vector<int> labels(static_cast<std::size_t>(data_.m()));
    for (std::size_t p = 0; p < others.size(); ++p)
      labels[static_cast<std::size_t>(others[p])] = without.label(static_cast<int>(p));
    labels[static_cast<std::size_t>(i)] = h;
    const Partition cand = Partition::canonicalize(labels);
    double ll = 0.0;
    for (int u = 0; u < data_.m(); ++u) {
      const double mu = cfg_.fixed_atom_means[static_cast<std::size_t>(cand.label(u) - 1)];
      ll += obs_loglik(u, t, mu, cfg_.fixed_atom_sd);
    }
    return ll;
  }

  // A candidate cluster for free unit i at time t must keep rho_t's
  // restriction to the units pinned at time t+1 equal to rho_{t+1}'s.
  bool forward_compatible(int t, int i, int h, const Partition& without,
                          const std::vector<int>& others) const {
    if (t + 1 >= data_.num_times()) return true;
    const auto& g_next = state_.gamma[static_cast<std::size_t>(t + 1)];
    if (!g_next[static_cast<std::size_t>(i)]) return true;
    const Partition& next = state_.rho[static_cast<std::size_t>(t + 1)];
    const int k_wo = without.num_clusters();
    for (std::size_t p = 0; p < others.size(); ++p) {
      const int j = others[p];
      if (!g_next[static_cast<std::size_t>(j)]) continue;
      const bool together_next = next.label(j) == next.label(i);
      const bool together_cand = h <= k_wo && without.label(static_cast<int>(p)) == h;
      if (together_next != together_cand) return false;
    }
    return true;
  }

  bool mh_accept(const std::string& name, double log_ratio, Rng& rng) {
    auto& c = counters_[name];
    ++c.attempts;
    if (std::isnan(log_ratio)) {
      std::ostringstream oss;
      oss << "NaN Metropolis acceptance ratio in block '" << name << "' (tau=" << state_.tau
          << ", lambda=" << state_.lambda << ", phi0=" << state_.phi0 << ", phi1=" << state_.phi1
          << ")";
      throw NumericalError(oss.str());
    }
    const bool accept = log_ratio >= 0.0 || rng.uniform() < std::exp(log_ratio);
    if (accept) ++c.accepts;
    return accept;
  }

  void count_reject(const std::string& name) { ++counters_[name].attempts; }

  double ar_var() const {
    return std::max(state_.lambda * state_.lambda * (1.0 - state_.phi1 * state_.phi1),
                    detail::kVarFloor);
  }

  Dataset data_;
  ModelConfig cfg_;
  EppfSpec eppf_;
  Standardization std_;
  std::vector<int> all_units_;
  McmcState state_;
  std::map<std::string, Counter> counters_;
};

// Runs the full chain and stores post-burn-in thinned draws of every
// parameter block plus the pointwise log-likelihood matrix.
inline ChainOutput run_chain(const Dataset& data, const ModelConfig& cfg) {
  GibbsSampler sampler(data, cfg);
  Rng rng = Rng(cfg.seed).fork(0x636861696eULL);  // chain stream
  ChainOutput out;
  out.m = data.m();
  out.num_times = data.num_times();
  out.seed = cfg.seed;
  const long n_save = cfg.n_saved();
  out.partitions.reserve(static_cast<std::size_t>(n_save));

  for (long it = 1; it <= cfg.iterations; ++it) {
    try {
      sampler.sweep(rng);
    } catch (const NumericalError& e) {
      throw NumericalError("sweep " + std::to_string(it) + ": " + e.what());
    }
    if (it <= cfg.burnin || (it - cfg.burnin) % cfg.thinning != 0) continue;
    const auto& st = sampler.state();
    out.partitions.push_back(st.rho);
    out.gammas.push_back(st.gamma);
    out.mu_star.push_back(st.mu_star);
    out.sigma_star.push_back(st.sigma_star);
    out.theta.push_back(st.theta);
    out.alpha.push_back(st.alpha);
    out.tau.push_back(st.tau);
    out.phi0.push_back(st.phi0);
    out.phi1.push_back(st.phi1);
    out.lambda.push_back(st.lambda);
    out.eta.push_back(st.eta);
    std::vector<std::vector<double>> ll(static_cast<std::size_t>(data.m()),
                                        std::vector<double>(static_cast<std::size_t>(data.num_times())));
    for (int i = 0; i < data.m(); ++i)
      for (int t = 0; t < data.num_times(); ++t)
        ll[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = sampler.loglik_point(i, t);
    out.loglik.push_back(std::move(ll));
  }
  out.acceptance_rates = sampler.acceptance_rates();
  return out;
}

}  // namespace trpm
