#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace trpm {

// Per-unit reallocation indicators for one time step: 1 means the unit keeps
// its previous-time cluster relation, 0 means it is free to be reallocated.
using GammaVector = std::vector<std::uint8_t>;

// A partition of m units stored as cluster labels in first-appearance
// canonical form: labels[0] == 1 and label j+1 first appears after label j.
// Equality of canonical label vectors is then exactly set-partition equality.
class Partition {
 public:
  Partition() = default;

  // Accepts arbitrary integer labels and canonicalizes them.
  static Partition canonicalize(std::span<const int> raw_labels) {
    if (raw_labels.empty()) throw std::invalid_argument("canonicalize: empty label vector");
    Partition p;
    p.labels_.reserve(raw_labels.size());
    std::unordered_map<int, int> remap;
    for (int raw : raw_labels) {
      auto [it, inserted] = remap.emplace(raw, static_cast<int>(remap.size()) + 1);
      p.labels_.push_back(it->second);
    }
    p.k_ = static_cast<int>(remap.size());
    return p;
  }

  static Partition canonicalize(const std::vector<int>& raw_labels) {
    return canonicalize(std::span<const int>(raw_labels));
  }

  int size() const { return static_cast<int>(labels_.size()); }
  bool empty() const { return labels_.empty(); }
  int num_clusters() const { return k_; }

  // 1-based canonical label of unit i (0-based unit index).
  int label(int i) const { return labels_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& labels() const { return labels_; }

  std::vector<int> cluster_sizes() const {
    std::vector<int> sizes(static_cast<std::size_t>(k_), 0);
    for (int c : labels_) ++sizes[static_cast<std::size_t>(c - 1)];
    return sizes;
  }

  // Members of cluster j (1-based label), as 0-based unit indices.
  std::vector<int> cluster_members(int j) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (labels_[static_cast<std::size_t>(i)] == j) out.push_back(i);
    return out;
  }

  bool operator==(const Partition&) const = default;
  auto operator<=>(const Partition&) const = default;

 private:
  std::vector<int> labels_;
  int k_ = 0;
};

// Validates canonical-form preconditions where an operation requires them.
inline void require_canonical(const Partition& p) {
  int seen = 0;
  for (int c : p.labels()) {
    if (c < 1 || c > seen + 1) throw std::invalid_argument("partition labels are not canonical");
    seen = std::max(seen, c);
  }
}

// Induced partition on the kept units (0-based indices), canonicalized.
// An empty keep set yields the empty partition.
inline Partition restrict_to(const Partition& p, std::span<const int> keep) {
  std::vector<int> sub;
  sub.reserve(keep.size());
  for (int i : keep) {
    if (i < 0 || i >= p.size()) throw std::invalid_argument("restrict_to: index out of range");
    sub.push_back(p.label(i));
  }
  if (sub.empty()) return Partition();
  return Partition::canonicalize(sub);
}

inline Partition restrict_to(const Partition& p, const std::vector<int>& keep) {
  return restrict_to(p, std::span<const int>(keep));
}

// Compatibility in the sense of the dependent-partition construction: the
// restrictions of rho_t and rho_prev to the gamma=1 units coincide.
inline bool is_compatible(const Partition& rho_t, const Partition& rho_prev,
                          const GammaVector& gamma_t) {
  if (rho_t.size() != rho_prev.size() ||
      static_cast<int>(gamma_t.size()) != rho_t.size())
    throw std::invalid_argument("is_compatible: size mismatch");
  std::vector<int> fixed;
  for (int i = 0; i < rho_t.size(); ++i)
    if (gamma_t[static_cast<std::size_t>(i)]) fixed.push_back(i);
  return restrict_to(rho_t, fixed) == restrict_to(rho_prev, fixed);
}

// Pair-counting adjusted Rand index (Hubert & Arabie). Label-invariant and
// symmetric. When the chance-corrected denominator vanishes (e.g. both
// partitions are all singletons) the partitions are necessarily identical
// there and the index is 1; we return 1 for identical inputs, else 0.
inline double adjusted_rand_index(const Partition& p, const Partition& q) {
  if (p.size() != q.size()) throw std::invalid_argument("adjusted_rand_index: size mismatch");
  const int m = p.size();
  if (m <= 1) return 1.0;  // no pairs to count
  const int kp = p.num_clusters();
  const int kq = q.num_clusters();
  std::vector<long long> table(static_cast<std::size_t>(kp) * kq, 0);
  for (int i = 0; i < m; ++i)
    ++table[static_cast<std::size_t>(p.label(i) - 1) * kq + (q.label(i) - 1)];

  auto comb2 = [](long long n) { return n * (n - 1) / 2; };
  long long sum_ij = 0;
  for (long long n : table) sum_ij += comb2(n);
  long long sum_a = 0;
  for (int n : p.cluster_sizes()) sum_a += comb2(n);
  long long sum_b = 0;
  for (int n : q.cluster_sizes()) sum_b += comb2(n);
  const double total = static_cast<double>(comb2(m));
  const double expected = static_cast<double>(sum_a) * static_cast<double>(sum_b) / total;
  const double maximum = 0.5 * static_cast<double>(sum_a + sum_b);
  if (maximum == expected) return p == q ? 1.0 : 0.0;
  return (static_cast<double>(sum_ij) - expected) / (maximum - expected);
}

inline constexpr std::array<long long, 13> kBellNumbers = {
    1, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975, 678570, 4213597};

// All Bell(m) canonical partitions of m units, in lexicographic order of the
// restricted-growth label vectors. Guarded so callers cannot blow memory.
inline std::vector<Partition> enumerate_partitions(int m) {
  if (m < 1) throw std::invalid_argument("enumerate_partitions: m must be positive");
  if (m > 12) throw std::length_error("enumerate_partitions: m > 12 exceeds resource limit");
  std::vector<Partition> out;
  out.reserve(static_cast<std::size_t>(kBellNumbers[static_cast<std::size_t>(m)]));
  std::vector<int> labels(static_cast<std::size_t>(m), 1);
  // Restricted-growth strings: labels[i] <= 1 + max(labels[0..i-1]).
  auto rec = [&](auto&& self, int i, int kmax) -> void {
    if (i == m) {
      out.push_back(Partition::canonicalize(labels));
      return;
    }
    for (int c = 1; c <= kmax + 1; ++c) {
      labels[static_cast<std::size_t>(i)] = c;
      self(self, i + 1, std::max(kmax, c));
    }
  };
  rec(rec, 1, 1);  // unit 0 is always in cluster 1
  return out;
}

}  // namespace trpm
