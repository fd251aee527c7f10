#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace biasprobe {

using FeatureRow = std::vector<double>;
using FeatureRows = std::vector<FeatureRow>;

struct TrainDiagnostics {
  bool converged = false;
  std::size_t iterations = 0;
  double final_objective = 0.0;
  std::optional<double> fitted_lengthscale;
  std::optional<double> fitted_signal_variance;
};

// A fitted binary classifier. predict() must be free of observable side
// effects so grids and evaluation sets can be scored from several threads.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string name() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::vector<int> predict(std::span<const FeatureRow> xs) const = 0;
  virtual TrainDiagnostics diagnostics() const { return {}; }
};

// Classifiers that expose p(y = 1 | x). Labels are thresholded at 0.5 with
// ties going to 1.
class ProbabilisticClassifier : public Classifier {
 public:
  virtual std::vector<double> predict_proba(std::span<const FeatureRow> xs) const = 0;
  virtual nlohmann::json to_json() const = 0;

  std::vector<int> predict(std::span<const FeatureRow> xs) const override {
    const auto p = predict_proba(xs);
    std::vector<int> labels(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) labels[i] = p[i] >= 0.5 ? 1 : 0;
    return labels;
  }
};

}  // namespace biasprobe
