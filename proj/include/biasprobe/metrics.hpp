#pragma once

// Aggregation of extrapolation accuracies into bias scores.
//
// Confidence intervals are 1.96 standard errors (normal approximation) using
// the sample standard deviation; with a single run no interval is reported.
// Means and deviations are computed over a sorted copy so results do not
// depend on the order runs were produced in.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biasprobe/errors.hpp"

namespace biasprobe {

inline constexpr double kZ95 = 1.96;
inline constexpr double kLogitClamp = 1e-4;

struct ProbeResult {
  std::string model;
  std::string condition;  // "CC", "ZS", "PE" or a schedule label
  double pi0 = 0.0;
  double pi1 = 0.0;
  std::optional<double> rho;  // absent where the correlation is undefined
  std::size_t run = 0;
  std::uint64_t seed = 0;
  double extrap_accuracy = 0.0;
  std::optional<double> validation_accuracy;
};

struct Estimate {
  double value = 0.0;
  std::optional<double> ci95;
  std::size_t n = 0;
};

inline double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw LengthMismatch("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) throw EmptyInput("accuracy of an empty list");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace detail {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // sample variance, 0 when n == 1
  std::size_t n = 0;
};

inline Moments moments(std::span<const double> xs) {
  if (xs.empty()) throw EmptyInput("no runs to aggregate");
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  Moments m;
  m.n = v.size();
  double s = 0.0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(m.n);
  if (m.n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.var = ss / static_cast<double>(m.n - 1);
  }
  return m;
}

}  // namespace detail

inline Estimate mean_ci(std::span<const double> xs) {
  const auto m = detail::moments(xs);
  Estimate e{m.mean, std::nullopt, m.n};
  if (m.n > 1) e.ci95 = kZ95 * std::sqrt(m.var / static_cast<double>(m.n));
  return e;
}

inline Estimate flb(std::span<const double> cc_accuracies) {
  Estimate e = mean_ci(cc_accuracies);
  e.value -= 0.5;
  return e;
}

// Difference of means with independent-samples error propagation.
inline Estimate condition_gap(std::span<const double> zs_accuracies, std::span<const double> other_accuracies) {
  const auto a = detail::moments(zs_accuracies);
  const auto b = detail::moments(other_accuracies);
  Estimate e{a.mean - b.mean, std::nullopt, std::min(a.n, b.n)};
  if (a.n > 1 || b.n > 1) {
    e.ci95 = kZ95 * std::sqrt(a.var / static_cast<double>(a.n) + b.var / static_cast<double>(b.n));
  }
  return e;
}

inline Estimate evr(std::span<const double> zs_accuracies, std::span<const double> pe_accuracies) {
  return condition_gap(zs_accuracies, pe_accuracies);
}

struct GateResult {
  std::vector<ProbeResult> kept;
  std::vector<ProbeResult> dropped;
};

inline GateResult gate_by_validation(std::span<const ProbeResult> results, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw OutOfRange("validation threshold must lie in [0, 1]");
  GateResult g;
  for (const auto& r : results) {
    (!r.validation_accuracy || *r.validation_accuracy >= threshold ? g.kept : g.dropped).push_back(r);
  }
  return g;
}

inline double logit(double a) {
  const double c = std::clamp(a, kLogitClamp, 1.0 - kLogitClamp);
  return std::log(c / (1.0 - c));
}

struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double intercept_ci95 = 0.0;
};

// Two-sided 97.5% Student-t quantile; tabulated up to 30 degrees of freedom,
// Cornish-Fisher expansion beyond (error < 1e-7).
inline double t_quantile_975(std::size_t dof) {
  static constexpr double table[] = {12.706205, 4.302653, 3.182446, 2.776445, 2.570582, 2.446912, 2.364624, 2.306004,
                                     2.262157,  2.228139, 2.200985, 2.178813, 2.160369, 2.144787, 2.131450, 2.119905,
                                     2.109816,  2.100922, 2.093024, 2.085963, 2.079614, 2.073873, 2.068658, 2.063899,
                                     2.059539,  2.055529, 2.051831, 2.048407, 2.045230, 2.042272};
  if (dof == 0) throw DegenerateDesign("no residual degrees of freedom");
  if (dof <= 30) return table[dof - 1];
  const double z = 1.959963984540054;
  const double v = static_cast<double>(dof);
  const double z3 = z * z * z, z5 = z3 * z * z, z7 = z5 * z * z, z9 = z7 * z * z;
  return z + (z3 + z) / (4 * v) + (5 * z5 + 16 * z3 + 3 * z) / (96 * v * v) +
         (3 * z7 + 19 * z5 + 17 * z3 - 15 * z) / (384 * v * v * v) +
         (79 * z9 + 776 * z7 + 1482 * z5 - 1920 * z3 - 945 * z) / (92160 * v * v * v * v);
}

// Ordinary least squares y = slope * x + intercept over (x, y) points. The
// intercept interval uses the t quantile with n - 2 degrees of freedom, which
// tends to the normal 1.96 as n grows and keeps nominal coverage for the
// handful of points a feature-pair study produces.
inline Regression ols_fit(std::span<const std::pair<double, double>> points) {
  const std::size_t n = points.size();
  if (n < 3) throw DegenerateDesign("regression needs at least 3 points");
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (!(sxx > 0.0)) throw DegenerateDesign("all regression abscissae are equal");
  Regression r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double rss = 0.0;
  for (const auto& [x, y] : points) {
    const double e = y - (r.intercept + r.slope * x);
    rss += e * e;
  }
  const double s2 = rss / static_cast<double>(n - 2);
  r.intercept_ci95 = t_quantile_975(n - 2) * std::sqrt(s2 * (1.0 / static_cast<double>(n) + mx * mx / sxx));
  return r;
}

// Points are (flb_logit, evr_logit) per model.
inline Regression evr_flb_regression(std::span<const std::pair<double, double>> points) { return ols_fit(points); }

struct BiasReport {
  std::string model;
  std::map<std::string, Estimate> conditions;  // CC / ZS / PE as present
  std::optional<Estimate> flb;
  std::optional<Estimate> evr;
  std::size_t gated_runs_dropped = 0;

  std::optional<Estimate> condition(const std::string& name) const {
    auto it = conditions.find(name);
    if (it == conditions.end()) return std::nullopt;
    return it->second;
  }
};

// Logit-scale scores: FLB = logit(mean CC), EVR = logit(mean ZS) - logit(mean PE).
struct LogitScores {
  std::optional<double> flb;
  std::optional<double> evr;
};

inline LogitScores logit_scores(const BiasReport& r) {
  LogitScores s;
  if (auto cc = r.condition("CC")) s.flb = logit(cc->value);
  auto zs = r.condition("ZS");
  auto pe = r.condition("PE");
  if (zs && pe) s.evr = logit(zs->value) - logit(pe->value);
  return s;
}

// One report per model, in order of first appearance.
inline std::vector<BiasReport> aggregate(std::span<const ProbeResult> results, std::optional<double> threshold = {}) {
  std::vector<ProbeResult> kept(results.begin(), results.end());
  std::map<std::string, std::size_t> dropped;
  if (threshold) {
    auto g = gate_by_validation(results, *threshold);
    for (const auto& r : g.dropped) ++dropped[r.model];
    kept = std::move(g.kept);
  }
  std::vector<std::string> order;
  for (const auto& r : results) {
    if (std::find(order.begin(), order.end(), r.model) == order.end()) order.push_back(r.model);
  }
  std::vector<BiasReport> out;
  for (const auto& model : order) {
    std::map<std::string, std::vector<double>> by_cond;
    for (const auto& r : kept) {
      if (r.model == model) by_cond[r.condition].push_back(r.extrap_accuracy);
    }
    BiasReport rep;
    rep.model = model;
    rep.gated_runs_dropped = dropped[model];
    if (by_cond.empty()) throw EmptyInput("every run of " + model + " was dropped by validation gating");
    for (const auto& [cond, accs] : by_cond) rep.conditions[cond] = mean_ci(accs);
    if (by_cond.count("CC")) rep.flb = flb(by_cond["CC"]);
    if (by_cond.count("ZS") && by_cond.count("PE")) rep.evr = evr(by_cond["ZS"], by_cond["PE"]);
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace biasprobe
