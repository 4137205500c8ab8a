#pragma once

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "trpm/gibbs.hpp"

namespace trpm::io {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Shortest round-trip decimal representation; keeps data files byte-stable
// across reruns.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Trim to the shortest representation that round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[32];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

// Writes through a temp file and renames, so readers never observe partial
// output and failed commands leave nothing behind.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out << content;
    if (!out.good()) {
      std::filesystem::remove(tmp);
      throw IoError("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("rename failed: " + path.string() + ": " + ec.message());
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("cannot parse number '" + s + "' in " + context);
  }
}

// Wide panel CSV: header `unit_id,[lat,lon,]y_1..y_T`, one row per unit.
inline Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file: " + path.string());
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "unit_id")
    throw IoError(path.string() + ": first column must be unit_id");
  std::size_t y_start = 1;
  bool has_coords = false;
  if (header.size() > 2 && header[1] == "lat" && header[2] == "lon") {
    has_coords = true;
    y_start = 3;
  }
  const std::size_t T = header.size() - y_start;
  if (T == 0) throw IoError(path.string() + ": no response columns");
  for (std::size_t t = 0; t < T; ++t) {
    const std::string expected = "y_" + std::to_string(t + 1);
    if (header[y_start + t] != expected)
      throw IoError(path.string() + ": expected column " + expected + ", found " + header[y_start + t]);
  }

  Dataset data;
  if (has_coords) data.coords.emplace();
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw IoError(path.string() + " row " + std::to_string(row) + ": wrong field count");
    data.unit_ids.push_back(fields[0]);
    if (has_coords)
      data.coords->push_back({parse_double(fields[1], path.string() + " lat row " + std::to_string(row)),
                              parse_double(fields[2], path.string() + " lon row " + std::to_string(row))});
    std::vector<double> y(T);
    for (std::size_t t = 0; t < T; ++t)
      y[t] = parse_double(fields[y_start + t],
                          path.string() + " row " + std::to_string(row) + " col " + header[y_start + t]);
    data.y.push_back(std::move(y));
  }
  if (data.y.empty()) throw IoError(path.string() + ": no data rows");
  return data;
}

inline std::string write_dataset_csv(const Dataset& data) {
  std::ostringstream out;
  const bool has_coords = data.coords.has_value();
  out << "unit_id";
  if (has_coords) out << ",lat,lon";
  for (int t = 1; t <= data.num_times(); ++t) out << ",y_" << t;
  out << "\n";
  for (int i = 0; i < data.m(); ++i) {
    out << (data.unit_ids.empty() ? std::to_string(i + 1) : data.unit_ids[static_cast<std::size_t>(i)]);
    if (has_coords)
      out << ',' << format_double((*data.coords)[static_cast<std::size_t>(i)][0]) << ','
          << format_double((*data.coords)[static_cast<std::size_t>(i)][1]);
    for (int t = 0; t < data.num_times(); ++t)
      out << ',' << format_double(data.y[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)]);
    out << "\n";
  }
  return out.str();
}

// --- chain draw storage -----------------------------------------------------
//
// partitions.csv / gammas.csv: one row per saved iterate, one column per
// (t, unit) pair in time-major order. params.csv: long format
// (iterate, name, index, value). loglik.csv: (iterate, unit, t, value).

inline std::string label_matrix_header(int num_times, int m) {
  std::ostringstream out;
  out << "iterate";
  for (int t = 1; t <= num_times; ++t)
    for (int i = 1; i <= m; ++i) out << ",t" << t << "_u" << i;
  out << "\n";
  return out.str();
}

inline void write_chain(const ChainOutput& chain, const std::filesystem::path& dir,
                        const nlohmann::json& config_echo, double wall_time_sec) {
  std::filesystem::create_directories(dir);
  const long S = chain.n_saved();

  std::ostringstream parts, gammas;
  parts << label_matrix_header(chain.num_times, chain.m);
  gammas << label_matrix_header(chain.num_times, chain.m);
  for (long s = 0; s < S; ++s) {
    parts << (s + 1);
    gammas << (s + 1);
    for (int t = 0; t < chain.num_times; ++t)
      for (int i = 0; i < chain.m; ++i) {
        parts << ',' << chain.partitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)].label(i);
        gammas << ',' << static_cast<int>(
            chain.gammas[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]);
      }
    parts << "\n";
    gammas << "\n";
  }

  std::ostringstream params;
  params << "iterate,name,index,value\n";
  for (long s = 0; s < S; ++s) {
    const auto su = static_cast<std::size_t>(s);
    params << (s + 1) << ",tau,," << format_double(chain.tau[su]) << "\n";
    params << (s + 1) << ",phi0,," << format_double(chain.phi0[su]) << "\n";
    params << (s + 1) << ",phi1,," << format_double(chain.phi1[su]) << "\n";
    params << (s + 1) << ",lambda,," << format_double(chain.lambda[su]) << "\n";
    for (int t = 0; t < chain.num_times; ++t) {
      params << (s + 1) << ",theta," << (t + 1) << ',' << format_double(chain.theta[su][static_cast<std::size_t>(t)]) << "\n";
      params << (s + 1) << ",alpha," << (t + 1) << ',' << format_double(chain.alpha[su][static_cast<std::size_t>(t)]) << "\n";
    }
    for (int i = 0; i < chain.m; ++i)
      params << (s + 1) << ",eta," << (i + 1) << ',' << format_double(chain.eta[su][static_cast<std::size_t>(i)]) << "\n";
    for (int t = 0; t < chain.num_times; ++t)
      for (std::size_t j = 0; j < chain.mu_star[su][static_cast<std::size_t>(t)].size(); ++j) {
        params << (s + 1) << ",mu_star," << (t + 1) << '.' << (j + 1) << ','
               << format_double(chain.mu_star[su][static_cast<std::size_t>(t)][j]) << "\n";
        params << (s + 1) << ",sigma_star," << (t + 1) << '.' << (j + 1) << ','
               << format_double(chain.sigma_star[su][static_cast<std::size_t>(t)][j]) << "\n";
      }
  }

  std::ostringstream loglik;
  loglik << "iterate,unit,t,value\n";
  for (long s = 0; s < S; ++s)
    for (int i = 0; i < chain.m; ++i)
      for (int t = 0; t < chain.num_times; ++t)
        loglik << (s + 1) << ',' << (i + 1) << ',' << (t + 1) << ','
               << format_double(chain.loglik[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)][static_cast<std::size_t>(t)])
               << "\n";

  nlohmann::json meta;
  meta["m"] = chain.m;
  meta["num_times"] = chain.num_times;
  meta["n_saved"] = S;
  meta["seed"] = chain.seed;
  meta["config"] = config_echo;
  meta["acceptance_rates"] = chain.acceptance_rates;
  meta["wall_time_sec"] = wall_time_sec;

  atomic_write(dir / "partitions.csv", parts.str());
  atomic_write(dir / "gammas.csv", gammas.str());
  atomic_write(dir / "params.csv", params.str());
  atomic_write(dir / "loglik.csv", loglik.str());
  atomic_write(dir / "run_meta.json", meta.dump(2) + "\n");
}

inline ChainOutput read_chain(const std::filesystem::path& dir) {
  ChainOutput chain;
  {
    std::ifstream meta_in(dir / "run_meta.json");
    if (!meta_in) throw IoError("cannot open " + (dir / "run_meta.json").string());
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    chain.m = meta.at("m").get<int>();
    chain.num_times = meta.at("num_times").get<int>();
    chain.seed = meta.at("seed").get<std::uint64_t>();
  }
  const int m = chain.m;
  const int T = chain.num_times;

  auto read_label_matrix = [&](const std::filesystem::path& path, auto&& push_row) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto fields = split_csv_line(line);
      if (static_cast<int>(fields.size()) != 1 + m * T)
        throw IoError(path.string() + ": wrong column count");
      push_row(fields);
    }
  };

  read_label_matrix(dir / "partitions.csv", [&](const std::vector<std::string>& fields) {
    std::vector<Partition> row;
    for (int t = 0; t < T; ++t) {
      std::vector<int> labels(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i)
        labels[static_cast<std::size_t>(i)] =
            static_cast<int>(parse_double(fields[static_cast<std::size_t>(1 + t * m + i)], "partitions.csv"));
      row.push_back(Partition::canonicalize(labels));
    }
    chain.partitions.push_back(std::move(row));
  });
  read_label_matrix(dir / "gammas.csv", [&](const std::vector<std::string>& fields) {
    std::vector<GammaVector> row;
    for (int t = 0; t < T; ++t) {
      GammaVector g(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i)
        g[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(
            parse_double(fields[static_cast<std::size_t>(1 + t * m + i)], "gammas.csv"));
      row.push_back(std::move(g));
    }
    chain.gammas.push_back(std::move(row));
  });
  const long S = chain.n_saved();

  chain.tau.assign(static_cast<std::size_t>(S), 0.0);
  chain.phi0.assign(static_cast<std::size_t>(S), 0.0);
  chain.phi1.assign(static_cast<std::size_t>(S), 0.0);
  chain.lambda.assign(static_cast<std::size_t>(S), 0.0);
  chain.theta.assign(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(T), 0.0));
  chain.alpha.assign(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(T), 0.0));
  chain.eta.assign(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(m), 0.0));
  chain.mu_star.assign(static_cast<std::size_t>(S), std::vector<std::vector<double>>(static_cast<std::size_t>(T)));
  chain.sigma_star.assign(static_cast<std::size_t>(S), std::vector<std::vector<double>>(static_cast<std::size_t>(T)));
  {
    std::ifstream in(dir / "params.csv");
    if (!in) throw IoError("cannot open " + (dir / "params.csv").string());
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 4) throw IoError("params.csv: wrong field count");
      const auto s = static_cast<std::size_t>(std::stol(f[0]) - 1);
      const double v = parse_double(f[3], "params.csv");
      const std::string& name = f[1];
      if (name == "tau") chain.tau[s] = v;
      else if (name == "phi0") chain.phi0[s] = v;
      else if (name == "phi1") chain.phi1[s] = v;
      else if (name == "lambda") chain.lambda[s] = v;
      else if (name == "theta") chain.theta[s][static_cast<std::size_t>(std::stoi(f[2]) - 1)] = v;
      else if (name == "alpha") chain.alpha[s][static_cast<std::size_t>(std::stoi(f[2]) - 1)] = v;
      else if (name == "eta") chain.eta[s][static_cast<std::size_t>(std::stoi(f[2]) - 1)] = v;
      else if (name == "mu_star" || name == "sigma_star") {
        const auto dot = f[2].find('.');
        if (dot == std::string::npos) throw IoError("params.csv: bad atom index " + f[2]);
        const auto t = static_cast<std::size_t>(std::stoi(f[2].substr(0, dot)) - 1);
        const auto j = static_cast<std::size_t>(std::stoi(f[2].substr(dot + 1)) - 1);
        auto& store = name == "mu_star" ? chain.mu_star[s][t] : chain.sigma_star[s][t];
        if (store.size() <= j) store.resize(j + 1);
        store[j] = v;
      } else {
        throw IoError("params.csv: unknown parameter name " + name);
      }
    }
  }
  chain.loglik.assign(static_cast<std::size_t>(S),
                      std::vector<std::vector<double>>(static_cast<std::size_t>(m),
                                                       std::vector<double>(static_cast<std::size_t>(T), 0.0)));
  {
    std::ifstream in(dir / "loglik.csv");
    if (!in) throw IoError("cannot open " + (dir / "loglik.csv").string());
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 4) throw IoError("loglik.csv: wrong field count");
      chain.loglik[static_cast<std::size_t>(std::stol(f[0]) - 1)][static_cast<std::size_t>(std::stoi(f[1]) - 1)]
                  [static_cast<std::size_t>(std::stoi(f[2]) - 1)] = parse_double(f[3], "loglik.csv");
    }
  }
  return chain;
}

}  // namespace trpm::io
