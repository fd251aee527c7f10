#pragma once

// Logistic regression on linear or interaction-expanded features, fitted by
// proximal gradient with backtracking:
//
//   minimise  mean_i [softplus(z_i) - y_i z_i] + lambda * Omega(w),
//   z = X w + b,  Omega = sum|w| (L1), 0.5 * sum w^2 (L2) or 0.
//
// The intercept b is never penalised.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "biasprobe/errors.hpp"
#include "biasprobe/learners/classifier.hpp"
#include "biasprobe/learners/spec.hpp"
#include "biasprobe/protocol.hpp"

namespace biasprobe {

inline FeatureRow glm_features(std::span<const double> x, FeatureSet set, double alpha_scale) {
  if (set == FeatureSet::Linear) return FeatureRow(x.begin(), x.end());
  if (x.size() != 2) {
    throw DimensionMismatch("interaction features need 2-D inputs, got " + std::to_string(x.size()));
  }
  return {x[0], x[1], x[0] * x[1] / alpha_scale};
}

namespace glm {

inline double softplus(double z) noexcept { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct SolverOptions {
  std::size_t max_iterations = 10000;
  double objective_tolerance = 1e-8;
  double gradient_mapping_tolerance = 1e-6;
};

struct Solution {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  TrainDiagnostics diagnostics;
};

// Mean logistic loss and its gradient with respect to (w, b).
inline double smooth_loss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double b,
                          Eigen::VectorXd* grad_w = nullptr, double* grad_b = nullptr) {
  const Eigen::Index n = X.rows();
  const Eigen::VectorXd z = (X * w).array() + b;
  double loss = 0.0;
  Eigen::VectorXd resid(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    loss += softplus(z[i]) - y[i] * z[i];
    resid[i] = sigmoid(z[i]) - y[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad_w) *grad_w = X.transpose() * resid * inv_n;
  if (grad_b) *grad_b = resid.sum() * inv_n;
  return loss * inv_n;
}

inline double penalty_value(const Eigen::VectorXd& w, Penalty p, double lambda) {
  switch (p) {
    case Penalty::L1: {
      const double s = w.cwiseAbs().sum();
      return s == 0.0 ? 0.0 : lambda * s;
    }
    case Penalty::L2: {
      const double s = w.squaredNorm();
      return s == 0.0 ? 0.0 : 0.5 * lambda * s;
    }
    case Penalty::None: return 0.0;
  }
  return 0.0;
}

inline Eigen::VectorXd prox(const Eigen::VectorXd& v, Penalty p, double lambda, double step) {
  switch (p) {
    case Penalty::L1: {
      const double t = lambda * step;
      return v.unaryExpr([t](double a) { return a > t ? a - t : (a < -t ? a + t : 0.0); });
    }
    case Penalty::L2: return v / (1.0 + lambda * step);
    case Penalty::None: return v;
  }
  return v;
}

inline double objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double b,
                        Penalty p, double lambda) {
  return smooth_loss(X, y, w, b) + penalty_value(w, p, lambda);
}

inline Solution fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Penalty penalty, double lambda,
                             const Eigen::VectorXd& initial_weights, double initial_intercept,
                             const SolverOptions& opt = {}) {
  const Eigen::Index n = X.rows();
  // Lipschitz bound of the smooth part: 0.25 * ||[X 1]||_F^2 / n.
  const double lipschitz = 0.25 * (X.squaredNorm() + static_cast<double>(n)) / static_cast<double>(n);
  // Steps at or below 1 / L always satisfy the bound; a failed check there is rounding.
  const double min_step = 1.0 / std::max(lipschitz, 1e-12);
  double step = min_step;
  const double max_step = step * 1e6;

  Eigen::VectorXd w = initial_weights;
  double b = initial_intercept;
  Eigen::VectorXd gw;
  double gb = 0.0;
  double f = smooth_loss(X, y, w, b, &gw, &gb);
  double obj = f + penalty_value(w, penalty, lambda);

  Solution sol;
  std::size_t it = 0;
  for (; it < opt.max_iterations; ++it) {
    step = std::min(step * 2.0, max_step);
    Eigen::VectorXd w_new;
    double b_new = 0.0, f_new = 0.0;
    for (;;) {
      w_new = prox(w - step * gw, penalty, lambda, step);
      b_new = b - step * gb;
      f_new = smooth_loss(X, y, w_new, b_new);
      const Eigen::VectorXd dw = w_new - w;
      const double db = b_new - b;
      const double bound = f + gw.dot(dw) + gb * db + (dw.squaredNorm() + db * db) / (2.0 * step);
      if (f_new <= bound || step <= min_step) break;
      step = std::max(step * 0.5, min_step);
    }
    const double mapping = std::sqrt((w - w_new).squaredNorm() + (b - b_new) * (b - b_new)) / step;
    const double obj_new = f_new + penalty_value(w_new, penalty, lambda);
    const double decrease = obj - obj_new;
    w = std::move(w_new);
    b = b_new;
    f = smooth_loss(X, y, w, b, &gw, &gb);
    obj = obj_new;
    if (mapping < opt.gradient_mapping_tolerance || (decrease >= 0.0 && decrease < opt.objective_tolerance)) {
      sol.diagnostics.converged = true;
      ++it;
      break;
    }
  }
  sol.weights = std::move(w);
  sol.intercept = b;
  sol.diagnostics.iterations = it;
  sol.diagnostics.final_objective = obj;
  return sol;
}

}  // namespace glm

class GlmModel final : public ProbabilisticClassifier {
 public:
  GlmModel(GlmVariant variant, std::size_t input_dim, std::vector<double> weights, double intercept,
           TrainDiagnostics diag = {})
      : variant_(variant), input_dim_(input_dim), weights_(std::move(weights)), intercept_(intercept), diag_(diag) {}

  std::string name() const override { return LearnerSpec{Family::Glm, variant_}.name(); }
  std::size_t input_dim() const override { return input_dim_; }
  TrainDiagnostics diagnostics() const override { return diag_; }

  const std::vector<double>& weights() const noexcept { return weights_; }
  double intercept() const noexcept { return intercept_; }
  const GlmVariant& variant() const noexcept { return variant_; }

  double score(std::span<const double> x) const {
    if (x.size() != input_dim_) {
      throw DimensionMismatch("model expects " + std::to_string(input_dim_) + " features, got " +
                              std::to_string(x.size()));
    }
    const auto f = glm_features(x, variant_.features, variant_.alpha_scale);
    double z = intercept_;
    for (std::size_t j = 0; j < f.size(); ++j) z += weights_[j] * f[j];
    return z;
  }

  std::vector<double> predict_proba(std::span<const FeatureRow> xs) const override {
    std::vector<double> p;
    p.reserve(xs.size());
    for (const auto& x : xs) p.push_back(glm::sigmoid(score(x)));
    return p;
  }

  // Sign of the linear score; exact, including the tie at z = 0.
  std::vector<int> predict(std::span<const FeatureRow> xs) const override {
    std::vector<int> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(score(x) >= 0.0 ? 1 : 0);
    return out;
  }

  nlohmann::json to_json() const override {
    return {{"kind", "glm"},
            {"features", variant_.features == FeatureSet::Linear ? "linear" : "phi"},
            {"penalty", variant_.penalty == Penalty::None ? "none" : variant_.penalty == Penalty::L1 ? "l1" : "l2"},
            {"penalty_weight", variant_.penalty_weight},
            {"alpha_scale", variant_.alpha_scale},
            {"input_dim", input_dim_},
            {"weights", weights_},
            {"intercept", intercept_},
            {"converged", diag_.converged},
            {"iterations", diag_.iterations},
            {"final_objective", diag_.final_objective}};
  }

  static std::unique_ptr<GlmModel> from_json(const nlohmann::json& j) {
    GlmVariant v;
    v.features = j.at("features") == "linear" ? FeatureSet::Linear : FeatureSet::Phi;
    const std::string p = j.at("penalty");
    v.penalty = p == "none" ? Penalty::None : p == "l1" ? Penalty::L1 : Penalty::L2;
    v.penalty_weight = j.at("penalty_weight");
    v.alpha_scale = j.at("alpha_scale");
    TrainDiagnostics d;
    d.converged = j.at("converged");
    d.iterations = j.at("iterations");
    d.final_objective = j.at("final_objective");
    return std::make_unique<GlmModel>(v, j.at("input_dim").get<std::size_t>(),
                                      j.at("weights").get<std::vector<double>>(), j.at("intercept").get<double>(), d);
  }

 private:
  GlmVariant variant_;
  std::size_t input_dim_;
  std::vector<double> weights_;
  double intercept_;
  TrainDiagnostics diag_;
};

namespace detail {
inline void require_both_classes(const QuadrantTable& table) {
  if (table.empty()) throw EmptyInput("training table is empty");
  bool has0 = false, has1 = false;
  for (const auto& r : table.rows()) (r.y ? has1 : has0) = true;
  if (!(has0 && has1)) throw SingleClassData("training data contains a single class");
}
}  // namespace detail

inline std::unique_ptr<GlmModel> train_glm(const QuadrantTable& table, const GlmVariant& variant,
                                           std::uint64_t /*seed*/, const glm::SolverOptions& opt = {}) {
  detail::require_both_classes(table);
  const auto n = static_cast<Eigen::Index>(table.size());
  const std::size_t p = variant.features == FeatureSet::Linear ? table.dim() : 3;
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(p));
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = table[static_cast<std::size_t>(i)];
    const auto f = glm_features(row.x, variant.features, variant.alpha_scale);
    for (std::size_t j = 0; j < p; ++j) X(i, static_cast<Eigen::Index>(j)) = f[j];
    y[i] = row.y ? 1.0 : 0.0;
  }
  const double lambda = variant.penalty == Penalty::None ? 0.0 : variant.penalty_weight;
  auto sol = glm::fit_logistic(X, y, variant.penalty, lambda, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p)),
                               0.0, opt);
  return std::make_unique<GlmModel>(variant, table.dim(),
                                    std::vector<double>(sol.weights.data(), sol.weights.data() + sol.weights.size()),
                                    sol.intercept, sol.diagnostics);
}

}  // namespace biasprobe
