#pragma once

// Training conditions over the 2x2 (discriminant, distractor) feature space.
//
// A condition is fixed by two conditional probabilities:
//   pi0 = p(z_dist = 1 | z_disc = 0),  pi1 = p(z_dist = 1 | z_disc = 1),
// with both discriminant classes held at exactly half of the data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biasprobe/errors.hpp"
#include "biasprobe/random.hpp"

namespace biasprobe {

struct Quadrant {
  bool z_disc;
  bool z_dist;

  constexpr std::size_t index() const noexcept { return (z_disc ? 2u : 0u) + (z_dist ? 1u : 0u); }
  friend constexpr bool operator==(Quadrant, Quadrant) = default;
};

// Canonical iteration order: (0,0), (0,1), (1,0), (1,1).
inline constexpr std::array<Quadrant, 4> kQuadrants{
    Quadrant{false, false}, Quadrant{false, true}, Quadrant{true, false}, Quadrant{true, true}};

inline constexpr Quadrant kExtrapolationQuadrant{true, true};

struct ConditionSpec {
  double pi0 = 0.0;
  double pi1 = 0.0;
  std::size_t n_total = 0;
  std::uint64_t seed = 0;

  void validate() const {
    auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in_unit(pi0) || !in_unit(pi1)) {
      throw InvalidSpec("pi0 and pi1 must lie in [0, 1] (got " + std::to_string(pi0) + ", " +
                        std::to_string(pi1) + ")");
    }
    if (n_total < 2 || n_total % 2 != 0) {
      throw InvalidSpec("n_total must be even and >= 2 (got " + std::to_string(n_total) + ")");
    }
  }

  friend bool operator==(const ConditionSpec&, const ConditionSpec&) = default;
};

struct JointDistribution {
  std::array<double, 4> p{};

  double at(bool z_disc, bool z_dist) const noexcept { return p[Quadrant{z_disc, z_dist}.index()]; }
  double at(Quadrant q) const noexcept { return p[q.index()]; }
};

struct QuadrantCounts {
  std::array<std::size_t, 4> counts{};

  std::size_t at(bool z_disc, bool z_dist) const noexcept {
    return counts[Quadrant{z_disc, z_dist}.index()];
  }
  std::size_t at(Quadrant q) const noexcept { return counts[q.index()]; }
  std::size_t total() const noexcept { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

  friend bool operator==(const QuadrantCounts&, const QuadrantCounts&) = default;
};

inline JointDistribution joint_from_pi(const ConditionSpec& spec) {
  spec.validate();
  JointDistribution j;
  j.p[Quadrant{false, true}.index()] = 0.5 * spec.pi0;
  j.p[Quadrant{false, false}.index()] = 0.5 * (1.0 - spec.pi0);
  j.p[Quadrant{true, true}.index()] = 0.5 * spec.pi1;
  j.p[Quadrant{true, false}.index()] = 0.5 * (1.0 - spec.pi1);
  return j;
}

// Pearson correlation between z_disc and z_dist induced by (pi0, pi1):
//   rho = a / sqrt(b (1 - b)),  a = (pi0 - pi1) / 2,  b = (pi0 + pi1) / 2.
inline double spurious_correlation(double pi0, double pi1) {
  if (!(pi0 >= 0.0 && pi0 <= 1.0 && pi1 >= 0.0 && pi1 <= 1.0)) {
    throw InvalidSpec("pi0 and pi1 must lie in [0, 1]");
  }
  const double rho_alpha = 0.5 * (pi0 - pi1);
  const double rho_beta = 0.5 * (pi0 + pi1);
  const double var = rho_beta * (1.0 - rho_beta);
  if (var <= 0.0) {
    throw DegenerateCorrelation("distractor is constant (beta = " + std::to_string(rho_beta) +
                                "); correlation is undefined");
  }
  return std::clamp(rho_alpha / std::sqrt(var), -1.0, 1.0);
}

// Split `total` between (z_dist=0, z_dist=1) by largest remainder. With two
// parts the remainders are r and 1 - r, so the spare seat goes to z_dist=1
// iff r > 1/2; an exact tie goes to z_dist=0.
inline std::pair<std::size_t, std::size_t> split_half(std::size_t total, double pi) {
  const double share1 = static_cast<double>(total) * pi;
  const double floor1 = std::floor(share1);
  auto n1 = static_cast<std::size_t>(floor1);
  if (share1 - floor1 > 0.5) ++n1;
  n1 = std::min(n1, total);
  return {total - n1, n1};
}

inline QuadrantCounts counts_for(const ConditionSpec& spec) {
  spec.validate();
  const std::size_t half = spec.n_total / 2;
  const auto [c00, c01] = split_half(half, spec.pi0);
  const auto [c10, c11] = split_half(half, spec.pi1);
  QuadrantCounts q;
  q.counts[Quadrant{false, false}.index()] = c00;
  q.counts[Quadrant{false, true}.index()] = c01;
  q.counts[Quadrant{true, false}.index()] = c10;
  q.counts[Quadrant{true, true}.index()] = c11;
  return q;
}

struct Observation {
  std::vector<double> x;
  bool z_disc = false;
  bool z_dist = false;
  bool y = false;

  Quadrant quadrant() const noexcept { return {z_disc, z_dist}; }
  friend bool operator==(const Observation&, const Observation&) = default;
};

// Labeled observations annotated with their quadrant. The discriminant is the
// label; every feature vector has the same dimensionality.
class QuadrantTable {
 public:
  QuadrantTable() = default;
  explicit QuadrantTable(std::size_t dim) : dim_(dim) {}

  void add(std::vector<double> x, bool z_disc, bool z_dist) {
    if (rows_.empty() && dim_ == 0) dim_ = x.size();
    if (x.size() != dim_) {
      throw DimensionMismatch("row has " + std::to_string(x.size()) + " features, table has " +
                              std::to_string(dim_));
    }
    rows_.push_back(Observation{std::move(x), z_disc, z_dist, z_disc});
  }

  void append(const QuadrantTable& other) {
    for (const auto& r : other.rows()) add(r.x, r.z_disc, r.z_dist);
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const std::vector<Observation>& rows() const noexcept { return rows_; }
  const Observation& operator[](std::size_t i) const { return rows_[i]; }

  std::vector<std::vector<double>> features() const {
    std::vector<std::vector<double>> xs;
    xs.reserve(rows_.size());
    for (const auto& r : rows_) xs.push_back(r.x);
    return xs;
  }

  std::vector<int> labels() const {
    std::vector<int> ys;
    ys.reserve(rows_.size());
    for (const auto& r : rows_) ys.push_back(r.y ? 1 : 0);
    return ys;
  }

  QuadrantCounts quadrant_counts() const noexcept {
    QuadrantCounts c;
    for (const auto& r : rows_) ++c.counts[r.quadrant().index()];
    return c;
  }

  friend bool operator==(const QuadrantTable&, const QuadrantTable&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<Observation> rows_;
};

// Pre-featurized rows with named binary attributes.
class AttributePool {
 public:
  struct Row {
    std::vector<double> x;
    std::vector<std::uint8_t> attributes;
  };

  AttributePool() = default;
  AttributePool(std::size_t dim, std::vector<std::string> attribute_names)
      : dim_(dim), names_(std::move(attribute_names)) {}

  void add(std::vector<double> x, std::vector<std::uint8_t> attributes) {
    if (x.size() != dim_) throw DimensionMismatch("pool row has wrong feature count");
    if (attributes.size() != names_.size()) throw DimensionMismatch("pool row has wrong attribute count");
    for (auto a : attributes) {
      if (a > 1) throw ParseError("attribute values must be 0 or 1");
    }
    rows_.push_back(Row{std::move(x), std::move(attributes)});
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return rows_.size(); }
  const std::vector<std::string>& attribute_names() const noexcept { return names_; }
  const std::vector<Row>& rows() const noexcept { return rows_; }

  std::size_t attribute_index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw UnknownAttribute(name);
    return static_cast<std::size_t>(it - names_.begin());
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> names_;
  std::vector<Row> rows_;
};

// Conjunction reduction of many binary attributes to (z_disc, z_dist).
inline std::pair<bool, bool> reduce_attributes(const std::map<std::string, bool>& attributes,
                                               const std::vector<std::string>& disc_names,
                                               const std::vector<std::string>& dist_names) {
  if (disc_names.empty() || dist_names.empty()) {
    throw InvalidSpec("discriminant and distractor name lists must be non-empty");
  }
  for (const auto& d : disc_names) {
    if (std::find(dist_names.begin(), dist_names.end(), d) != dist_names.end()) {
      throw OverlappingAttributes("attribute '" + d + "' is both discriminant and distractor");
    }
  }
  auto conj = [&](const std::vector<std::string>& names) {
    bool v = true;
    for (const auto& n : names) {
      auto it = attributes.find(n);
      if (it == attributes.end()) throw UnknownAttribute(n);
      v = v && it->second;
    }
    return v;
  };
  return {conj(disc_names), conj(dist_names)};
}

// Row indices of `pool` with `need` rows per quadrant, grouped by quadrant in
// canonical order and ascending within each quadrant. Rows flagged in
// `excluded` are never chosen.
inline std::vector<std::size_t> select_rows(const AttributePool& pool, const std::vector<std::string>& disc_names,
                                            const std::vector<std::string>& dist_names, const QuadrantCounts& need,
                                            std::uint64_t seed, const std::vector<bool>* excluded = nullptr) {
  if (disc_names.empty() || dist_names.empty()) {
    throw InvalidSpec("discriminant and distractor name lists must be non-empty");
  }
  std::vector<std::size_t> disc_idx, dist_idx;
  for (const auto& n : disc_names) disc_idx.push_back(pool.attribute_index(n));
  for (const auto& n : dist_names) {
    if (std::find(disc_names.begin(), disc_names.end(), n) != disc_names.end()) {
      throw OverlappingAttributes("attribute '" + n + "' is both discriminant and distractor");
    }
    dist_idx.push_back(pool.attribute_index(n));
  }

  std::array<std::vector<std::size_t>, 4> members;
  const auto& rows = pool.rows();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (excluded && i < excluded->size() && (*excluded)[i]) continue;
    bool d = true, s = true;
    for (auto k : disc_idx) d = d && rows[i].attributes[k];
    for (auto k : dist_idx) s = s && rows[i].attributes[k];
    members[Quadrant{d, s}.index()].push_back(i);
  }

  std::vector<std::size_t> chosen;
  chosen.reserve(need.total());
  for (const Quadrant q : kQuadrants) {
    auto& cand = members[q.index()];
    const std::size_t k = need.at(q);
    if (cand.size() < k) throw InsufficientQuadrant(q.z_disc, q.z_dist, k, cand.size());
    // Partial Fisher-Yates: uniform k-subset without replacement.
    Stream rng(derive_key(seed, q.index()));
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(cand.size() - i));
      std::swap(cand[i], cand[j]);
    }
    std::vector<std::size_t> picked(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(picked.begin(), picked.end());
    chosen.insert(chosen.end(), picked.begin(), picked.end());
  }
  return chosen;
}

inline std::vector<std::size_t> select_condition_rows(const AttributePool& pool,
                                                      const std::vector<std::string>& disc_names,
                                                      const std::vector<std::string>& dist_names,
                                                      const ConditionSpec& spec,
                                                      const std::vector<bool>* excluded = nullptr) {
  return select_rows(pool, disc_names, dist_names, counts_for(spec), spec.seed, excluded);
}

inline QuadrantTable table_from_rows(const AttributePool& pool, const std::vector<std::string>& disc_names,
                                     const std::vector<std::string>& dist_names,
                                     std::span<const std::size_t> indices) {
  std::vector<std::size_t> disc_idx, dist_idx;
  for (const auto& n : disc_names) disc_idx.push_back(pool.attribute_index(n));
  for (const auto& n : dist_names) dist_idx.push_back(pool.attribute_index(n));
  QuadrantTable table(pool.dim());
  for (auto i : indices) {
    const auto& row = pool.rows().at(i);
    bool d = true, s = true;
    for (auto k : disc_idx) d = d && row.attributes[k];
    for (auto k : dist_idx) s = s && row.attributes[k];
    table.add(row.x, d, s);
  }
  return table;
}

inline QuadrantTable assemble_condition(const AttributePool& pool, const std::vector<std::string>& disc_names,
                                        const std::vector<std::string>& dist_names, const ConditionSpec& spec,
                                        const std::vector<bool>* excluded = nullptr) {
  const auto idx = select_condition_rows(pool, disc_names, dist_names, spec, excluded);
  return table_from_rows(pool, disc_names, dist_names, idx);
}

inline QuadrantTable assemble_condition(const AttributePool& pool, const std::string& disc_attr,
                                        const std::string& dist_attr, const ConditionSpec& spec) {
  return assemble_condition(pool, std::vector<std::string>{disc_attr}, std::vector<std::string>{dist_attr}, spec);
}

// Several training conditions plus an evaluation set from one shared pool.
// The evaluation rows are disjoint from every row used for training.
struct PoolSplit {
  std::vector<std::pair<std::string, QuadrantTable>> training;
  QuadrantTable evaluation;
};

inline PoolSplit split_pool(const AttributePool& pool, const std::vector<std::string>& disc_names,
                            const std::vector<std::string>& dist_names,
                            const std::vector<std::pair<std::string, ConditionSpec>>& training_specs,
                            const ConditionSpec& evaluation_spec) {
  PoolSplit out;
  std::vector<bool> used(pool.size(), false);
  for (const auto& [name, spec] : training_specs) {
    const auto idx = select_condition_rows(pool, disc_names, dist_names, spec);
    for (auto i : idx) used[i] = true;
    out.training.emplace_back(name, table_from_rows(pool, disc_names, dist_names, idx));
  }
  const auto idx = select_condition_rows(pool, disc_names, dist_names, evaluation_spec, &used);
  out.evaluation = table_from_rows(pool, disc_names, dist_names, idx);
  return out;
}

struct StandardConditions {
  ConditionSpec cc;
  ConditionSpec zs;
  ConditionSpec pe;
  ConditionSpec extrapolation;

  std::vector<std::pair<std::string, ConditionSpec>> named() const {
    return {{"CC", cc}, {"ZS", zs}, {"PE", pe}, {"EXTRAPOLATION", extrapolation}};
  }
};

inline StandardConditions standard_conditions(std::size_t n_total, std::uint64_t seed) {
  StandardConditions s{
      {1.0, 0.0, n_total, seed + 0},
      {0.0, 0.0, n_total, seed + 1},
      {0.5, 0.0, n_total, seed + 2},
      {1.0, 1.0, n_total, seed + 3},
  };
  s.cc.validate();
  return s;
}

}  // namespace biasprobe
