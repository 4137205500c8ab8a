// Command-line front end: prior simulation, synthetic-data generation, model
// fitting over the dependence-toggle variants, and report generation.

#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trpm/io.hpp"
#include "trpm/prior.hpp"
#include "trpm/selection.hpp"
#include "trpm/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitDataError = 3;
constexpr int kExitNumericalError = 4;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

const std::map<std::string, std::vector<std::string>> kSchema = {
    {"model", {"partition_dependence", "likelihood_ar", "atom_ar", "spatial"}},
    {"prior",
     {"crp_mass", "sppm_dof", "a_sigma", "a_tau", "a_lambda", "s2", "laplace_a", "laplace_b",
      "alpha_a", "alpha_b"}},
    {"mcmc",
     {"iterations", "burnin", "thinning", "sigma_prop_sd", "tau_prop_sd", "lambda_prop_sd",
      "xi_prop_sd", "phi1_prop_sd", "seed"}},
    {"io", {"data", "out"}},
    {"simulate_prior", {"m", "T", "n_draws", "crp_mass", "alpha_grid"}},
    {"synth", {"mode", "m", "T", "alpha", "crp_mass", "tau", "sigma", "phi1", "n_replicates"}},
};

void validate_schema(const json& cfg) {
  if (!cfg.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& [block, value] : cfg.items()) {
    const auto it = kSchema.find(block);
    if (it == kSchema.end()) throw ConfigError("unknown config block '" + block + "'");
    if (!value.is_object()) throw ConfigError("config block '" + block + "' must be an object");
    for (const auto& [key, _] : value.items()) {
      const auto& allowed = it->second;
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
        throw ConfigError("unknown config key '" + block + "." + key + "'");
    }
  }
}

// Environment overrides: TRPM_<BLOCK>_<KEY>=<json or raw string>.
void apply_env_overrides(json& cfg) {
  for (char** env = ::environ; *env != nullptr; ++env) {
    const std::string entry(*env);
    if (entry.rfind("TRPM_", 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(5, eq - 5);
    const std::string raw = entry.substr(eq + 1);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::string block, key;
    for (const auto& [candidate, _] : kSchema) {
      if (name.rfind(candidate + "_", 0) == 0 && candidate.size() + 1 < name.size() &&
          candidate.size() > block.size()) {
        block = candidate;
        key = name.substr(candidate.size() + 1);
      }
    }
    if (block.empty()) throw ConfigError("cannot map environment override TRPM_" + name);
    // Schema keys are matched case-insensitively; store under the canonical spelling.
    for (const std::string& allowed : kSchema.at(block)) {
      std::string lower = allowed;
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (lower == key) {
        key = allowed;
        break;
      }
    }
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;  // plain string
    }
    cfg[block][key] = value;
  }
  validate_schema(cfg);
}

json load_config(const std::string& path) {
  json cfg = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    try {
      cfg = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
  }
  validate_schema(cfg);
  apply_env_overrides(cfg);
  return cfg;
}

template <class T>
T get_or(const json& cfg, const std::string& block, const std::string& key, T fallback) {
  if (!cfg.contains(block) || !cfg[block].contains(key)) return fallback;
  try {
    return cfg[block][key].get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + block + "." + key + "' has the wrong type");
  }
}

struct GlobalOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int threads = 1;
};

fs::path resolve_out(const json& cfg, const GlobalOpts& g, const char* fallback) {
  fs::path out = g.out ? *g.out : get_or<std::string>(cfg, "io", "out", fallback);
  fs::create_directories(out);
  return out;
}

std::uint64_t resolve_seed(const json& cfg, const GlobalOpts& g) {
  if (g.seed) return *g.seed;
  return get_or<std::uint64_t>(cfg, "mcmc", "seed", 1);
}

// ---------------------------------------------------------------------------

int cmd_simulate_prior(const json& cfg, const GlobalOpts& g) {
  const int m = get_or(cfg, "simulate_prior", "m", 20);
  const int T = get_or(cfg, "simulate_prior", "T", 10);
  const long n_draws = get_or<long>(cfg, "simulate_prior", "n_draws", 10000);
  const double mass = get_or(cfg, "simulate_prior", "crp_mass", 0.5);
  const std::vector<double> grid = get_or<std::vector<double>>(
      cfg, "simulate_prior", "alpha_grid", {0.0, 0.25, 0.5, 0.75, 0.9});
  const std::uint64_t seed = resolve_seed(cfg, g);
  const fs::path out = resolve_out(cfg, g, "prior_out");

  std::ostringstream csv;
  csv << "alpha,lag,mean_ari,se,n_draws\n";
  json summary;
  summary["m"] = m;
  summary["T"] = T;
  summary["n_draws"] = n_draws;
  summary["crp_mass"] = mass;
  summary["seed"] = seed;
  json rows = json::array();
  for (std::size_t a = 0; a < grid.size(); ++a) {
    trpm::TrpmParams params{m, T, std::vector<double>(static_cast<std::size_t>(T), grid[a]),
                            trpm::EppfSpec::crp(mass)};
    const auto res = trpm::lagged_ari_summary(params, n_draws, trpm::Rng(seed).fork(a).seed(),
                                              g.threads);
    for (std::size_t lag = 0; lag < res.mean.size(); ++lag) {
      csv << trpm::io::format_double(grid[a]) << ',' << (lag + 1) << ','
          << trpm::io::format_double(res.mean[lag]) << ','
          << (n_draws > 1 ? trpm::io::format_double(res.se[lag]) : std::string("NA")) << ','
          << n_draws << "\n";
      json row;
      row["alpha"] = grid[a];
      row["lag"] = lag + 1;
      row["mean_ari"] = res.mean[lag];
      if (n_draws > 1) row["se"] = res.se[lag];
      rows.push_back(row);
    }
  }
  summary["rows"] = rows;
  trpm::io::atomic_write(out / "lagged_ari.csv", csv.str());
  trpm::io::atomic_write(out / "summary.json", summary.dump(2) + "\n");
  return 0;
}

int cmd_synth(const json& cfg, const GlobalOpts& g) {
  const std::string mode = get_or<std::string>(cfg, "synth", "mode", "sim1");
  if (mode != "sim1" && mode != "sim2") throw ConfigError("synth.mode must be 'sim1' or 'sim2'");
  const int m = get_or(cfg, "synth", "m", mode == "sim1" ? 50 : 25);
  const int T = get_or(cfg, "synth", "T", mode == "sim1" ? 5 : 10);
  const double alpha = get_or(cfg, "synth", "alpha", 0.5);
  const double mass = get_or(cfg, "synth", "crp_mass", 1.0);
  const double tau = get_or(cfg, "synth", "tau", mode == "sim1" ? 5.0 : 10.0);
  const double sigma = get_or(cfg, "synth", "sigma", 1.0);
  const double phi1 = get_or(cfg, "synth", "phi1", 0.0);
  const int n_rep = get_or(cfg, "synth", "n_replicates", 1);
  const std::uint64_t seed = resolve_seed(cfg, g);
  const fs::path out = resolve_out(cfg, g, "synth_out");

  for (int r = 1; r <= n_rep; ++r) {
    trpm::Rng rng = trpm::Rng(seed).fork(0x73796e7468ULL, static_cast<std::uint64_t>(r));
    const trpm::SynthDataset d =
        mode == "sim1" ? trpm::generate_sim1(m, T, alpha, mass, tau, sigma, rng)
                       : trpm::generate_sim2(m, T, alpha, mass, tau, sigma, phi1, rng);
    const fs::path rep_dir = out / ("rep" + std::to_string(r));
    fs::create_directories(rep_dir);
    trpm::io::atomic_write(rep_dir / "y.csv", trpm::io::write_dataset_csv(d.data));

    std::ostringstream truth;
    truth << "unit,t,label\n";
    for (int i = 0; i < m; ++i)
      for (int t = 0; t < T; ++t)
        truth << (i + 1) << ',' << (t + 1) << ','
              << d.true_partitions[static_cast<std::size_t>(t)].label(i) << "\n";
    trpm::io::atomic_write(rep_dir / "truth_partitions.csv", truth.str());

    std::ostringstream atoms;
    atoms << "t,cluster,mu\n";
    for (int t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d.true_mu[static_cast<std::size_t>(t)].size(); ++j)
        atoms << (t + 1) << ',' << (j + 1) << ','
              << trpm::io::format_double(d.true_mu[static_cast<std::size_t>(t)][j]) << "\n";
    trpm::io::atomic_write(rep_dir / "truth_atoms.csv", atoms.str());

    json meta;
    meta["mode"] = mode;
    meta["m"] = m;
    meta["T"] = T;
    meta["alpha"] = alpha;
    meta["crp_mass"] = mass;
    meta["tau"] = tau;
    meta["sigma"] = sigma;
    if (mode == "sim2") meta["phi1"] = phi1;
    meta["seed"] = seed;
    meta["replicate"] = r;
    trpm::io::atomic_write(rep_dir / "meta.json", meta.dump(2) + "\n");
  }
  return 0;
}

trpm::ModelConfig model_config_from_json(const json& cfg, const trpm::Dataset& data,
                                         std::uint64_t seed) {
  trpm::ModelConfig mc;
  mc.partition_dependence = get_or(cfg, "model", "partition_dependence", true);
  mc.likelihood_ar = get_or(cfg, "model", "likelihood_ar", false);
  mc.atom_ar = get_or(cfg, "model", "atom_ar", false);
  mc.spatial = get_or(cfg, "model", "spatial", false);
  mc.crp_mass = get_or(cfg, "prior", "crp_mass", 1.0);
  mc.sppm_dof = get_or(cfg, "prior", "sppm_dof", 5.0);
  // Default A_sigma: about half the pooled sample standard deviation.
  double a_sigma = get_or(cfg, "prior", "a_sigma", 0.0);
  if (a_sigma <= 0.0) {
    double mean = 0.0;
    long n = 0;
    for (const auto& row : data.y)
      for (double v : row) {
        mean += v;
        ++n;
      }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (const auto& row : data.y)
      for (double v : row) ss += (v - mean) * (v - mean);
    a_sigma = 0.5 * std::sqrt(ss / static_cast<double>(n > 1 ? n - 1 : 1));
    if (a_sigma <= 0.0) a_sigma = 1.0;
  }
  mc.a_sigma = a_sigma;
  mc.a_tau = get_or(cfg, "prior", "a_tau", 5.0);
  mc.a_lambda = get_or(cfg, "prior", "a_lambda", 5.0);
  mc.phi0_prior_var = get_or(cfg, "prior", "s2", 100.0);
  mc.laplace_loc = get_or(cfg, "prior", "laplace_a", 0.0);
  mc.laplace_scale = get_or(cfg, "prior", "laplace_b", 1.0);
  mc.alpha_shape1 = get_or(cfg, "prior", "alpha_a", 1.0);
  mc.alpha_shape2 = get_or(cfg, "prior", "alpha_b", 1.0);
  mc.iterations = get_or<long>(cfg, "mcmc", "iterations", 10000);
  mc.burnin = get_or<long>(cfg, "mcmc", "burnin", 5000);
  mc.thinning = get_or<long>(cfg, "mcmc", "thinning", 5);
  mc.sigma_prop_sd = get_or(cfg, "mcmc", "sigma_prop_sd", 0.0);
  mc.tau_prop_sd = get_or(cfg, "mcmc", "tau_prop_sd", 0.0);
  mc.lambda_prop_sd = get_or(cfg, "mcmc", "lambda_prop_sd", 0.0);
  mc.xi_prop_sd = get_or(cfg, "mcmc", "xi_prop_sd", 0.2);
  mc.phi1_prop_sd = get_or(cfg, "mcmc", "phi1_prop_sd", 0.2);
  mc.seed = seed;
  return mc;
}

json config_echo(const trpm::ModelConfig& mc) {
  json j;
  j["partition_dependence"] = mc.partition_dependence;
  j["likelihood_ar"] = mc.likelihood_ar;
  j["atom_ar"] = mc.atom_ar;
  j["spatial"] = mc.spatial;
  j["crp_mass"] = mc.crp_mass;
  j["sppm_dof"] = mc.sppm_dof;
  j["a_sigma"] = mc.a_sigma;
  j["a_tau"] = mc.a_tau;
  j["a_lambda"] = mc.a_lambda;
  j["s2"] = mc.phi0_prior_var;
  j["laplace_a"] = mc.laplace_loc;
  j["laplace_b"] = mc.laplace_scale;
  j["alpha_a"] = mc.alpha_shape1;
  j["alpha_b"] = mc.alpha_shape2;
  j["iterations"] = mc.iterations;
  j["burnin"] = mc.burnin;
  j["thinning"] = mc.thinning;
  j["seed"] = mc.seed;
  return j;
}

int cmd_fit(const json& cfg, const GlobalOpts& g) {
  const std::string data_path = get_or<std::string>(cfg, "io", "data", "");
  if (data_path.empty()) throw ConfigError("fit requires io.data");
  const trpm::Dataset data = trpm::io::read_dataset_csv(data_path);
  const std::uint64_t seed = resolve_seed(cfg, g);
  const trpm::ModelConfig mc = model_config_from_json(cfg, data, seed);
  mc.validate();
  data.validate(mc.spatial);
  const fs::path out = resolve_out(cfg, g, "fit_out");

  const auto start = std::chrono::steady_clock::now();
  const trpm::ChainOutput chain = trpm::run_chain(data, mc);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  trpm::io::write_chain(chain, out, config_echo(mc), wall);
  return 0;
}

int cmd_report(const json& cfg, const GlobalOpts& g, const std::vector<std::string>& chain_dirs) {
  if (chain_dirs.empty()) throw ConfigError("report requires at least one --chain directory");
  const fs::path out = resolve_out(cfg, g, "report_out");
  const std::string data_path = get_or<std::string>(cfg, "io", "data", "");
  std::optional<trpm::Dataset> data;
  if (!data_path.empty()) data = trpm::io::read_dataset_csv(data_path);

  json table = json::array();
  double best_waic = std::numeric_limits<double>::infinity();
  double best_lpml = -std::numeric_limits<double>::infinity();
  std::string best_waic_name, best_lpml_name;
  for (const auto& dir : chain_dirs) {
    const trpm::ChainOutput chain = trpm::io::read_chain(dir);
    if (data && (chain.m != data->m() || chain.num_times != data->num_times()))
      throw trpm::io::IoError("chain " + dir + " dimensions do not match the dataset");
    const std::string name = fs::path(dir).filename().string();
    const auto ll = trpm::flatten_loglik(chain);
    const double w = trpm::waic(ll);
    const double l = trpm::lpml(ll);
    const trpm::EstimateReport rep = trpm::estimate_report(chain);

    std::ostringstream labels;
    labels << "unit,t,label\n";
    for (int i = 0; i < chain.m; ++i)
      for (int t = 0; t < chain.num_times; ++t)
        labels << (i + 1) << ',' << (t + 1) << ','
               << rep.partition_estimates[static_cast<std::size_t>(t)].label(i) << "\n";
    trpm::io::atomic_write(out / (name + "_estimates.csv"), labels.str());

    std::ostringstream ari;
    ari << "t1,t2,ari\n";
    for (int t = 0; t < chain.num_times; ++t)
      for (int u = t + 1; u < chain.num_times; ++u)
        ari << (t + 1) << ',' << (u + 1) << ','
            << trpm::io::format_double(
                   rep.lagged_ari[static_cast<std::size_t>(t)][static_cast<std::size_t>(u)])
            << "\n";
    trpm::io::atomic_write(out / (name + "_lagged_ari.csv"), ari.str());

    json row;
    row["chain"] = name;
    row["waic"] = w;
    row["lpml"] = l;
    table.push_back(row);
    if (w < best_waic) {
      best_waic = w;
      best_waic_name = name;
    }
    if (l > best_lpml) {
      best_lpml = l;
      best_lpml_name = name;
    }
  }
  json report;
  report["models"] = table;
  if (chain_dirs.size() > 1) {
    report["best_waic"] = best_waic_name;
    report["best_lpml"] = best_lpml_name;
    for (auto& row : report["models"]) {
      row["best_waic"] = row["chain"] == best_waic_name;
      row["best_lpml"] = row["chain"] == best_lpml_name;
    }
  }
  trpm::io::atomic_write(out / "report.json", report.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dependent random partition modeling toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand name
  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON configuration file");
  std::uint64_t seed_opt = 0;
  auto* seed_flag = app.add_option("--seed", seed_opt, "RNG seed override");
  std::string out_opt;
  auto* out_flag = app.add_option("--out", out_opt, "output directory override");
  app.add_option("--threads", g.threads, "worker threads for Monte Carlo fan-out");

  auto* sim = app.add_subcommand("simulate-prior", "lagged-ARI prior simulation grid");
  auto* synth = app.add_subcommand("synth", "generate synthetic datasets");
  auto* fit = app.add_subcommand("fit", "fit the hierarchical model by MCMC");
  auto* report = app.add_subcommand("report", "fit metrics and partition estimates");
  std::vector<std::string> chain_dirs;
  report->add_option("--chain", chain_dirs, "chain output directory (repeatable)");

  CLI11_PARSE(app, argc, argv);
  if (*seed_flag) g.seed = seed_opt;
  if (*out_flag) g.out = out_opt;

  try {
    const json cfg = load_config(g.config_path);
    if (sim->parsed()) return cmd_simulate_prior(cfg, g);
    if (synth->parsed()) return cmd_synth(cfg, g);
    if (fit->parsed()) return cmd_fit(cfg, g);
    if (report->parsed()) return cmd_report(cfg, g, chain_dirs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const trpm::io::IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const trpm::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
