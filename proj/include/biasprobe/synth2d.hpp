#pragma once

// Two-dimensional generative setting: each quadrant is an isotropic Gaussian
// centred at alpha_scale * (2 z_disc - 1, 2 z_dist - 1).

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "biasprobe/errors.hpp"
#include "biasprobe/learners/classifier.hpp"
#include "biasprobe/protocol.hpp"
#include "biasprobe/random.hpp"

namespace biasprobe {

struct Synth2DConfig {
  double alpha_scale = 3.0;
  double noise_sd = 1.0;

  void validate() const {
    if (!(alpha_scale > 0.0)) throw InvalidSpec("alpha_scale must be positive");
    if (!(noise_sd > 0.0)) throw InvalidSpec("noise_sd must be positive");
  }
};

// Point k of a quadrant uses counters (2k, 2k+1) of the stream keyed by
// (seed, quadrant), so any prefix of a sample is itself a valid sample.
inline std::vector<FeatureRow> sample_quadrant(bool z_disc, bool z_dist, std::size_t count, const Synth2DConfig& config,
                                               std::uint64_t seed) {
  config.validate();
  const double mx = config.alpha_scale * (z_disc ? 1.0 : -1.0);
  const double my = config.alpha_scale * (z_dist ? 1.0 : -1.0);
  const std::uint64_t key = derive_key(seed, Quadrant{z_disc, z_dist}.index());
  std::vector<FeatureRow> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto [a, b] = normal_pair_at(key, k);
    out.push_back({mx + config.noise_sd * a, my + config.noise_sd * b});
  }
  return out;
}

inline QuadrantTable synth_condition(const ConditionSpec& spec, const Synth2DConfig& config = {}) {
  const QuadrantCounts counts = counts_for(spec);
  QuadrantTable table(2);
  for (const Quadrant q : kQuadrants) {
    for (auto& x : sample_quadrant(q.z_disc, q.z_dist, counts.at(q), config, spec.seed)) {
      table.add(std::move(x), q.z_disc, q.z_dist);
    }
  }
  return table;
}

// Held-out (1, 1) quadrant as an evaluation set.
inline QuadrantTable synth_extrapolation(std::size_t count, std::uint64_t seed, const Synth2DConfig& config = {}) {
  QuadrantTable table(2);
  for (auto& x : sample_quadrant(true, true, count, config, seed)) table.add(std::move(x), true, true);
  return table;
}

struct PredictionGrid {
  double x_min = -7.0;
  double x_max = 7.0;
  std::size_t resolution = 101;
  // values[i * resolution + j] is the prediction at (coord(i), coord(j)).
  std::vector<double> values;

  double coord(std::size_t i) const noexcept {
    return x_min + (x_max - x_min) * static_cast<double>(i) / static_cast<double>(resolution - 1);
  }
  double at(std::size_t i, std::size_t j) const { return values.at(i * resolution + j); }
};

inline std::vector<FeatureRow> grid_points(double x_min, double x_max, std::size_t resolution) {
  PredictionGrid g{x_min, x_max, resolution, {}};
  std::vector<FeatureRow> pts;
  pts.reserve(resolution * resolution);
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) pts.push_back({g.coord(i), g.coord(j)});
  }
  return pts;
}

// Mean predicted label of an ensemble on a square grid (x1 outer, x2 inner,
// both ascending).
inline PredictionGrid prediction_grid(std::span<const Classifier* const> ensemble, double x_min = -7.0,
                                      double x_max = 7.0, std::size_t resolution = 101) {
  if (resolution < 2) throw InvalidSpec("grid resolution must be >= 2");
  if (!(x_max > x_min)) throw InvalidSpec("grid needs x_max > x_min");
  if (ensemble.empty()) throw UntrainedModel("prediction grid needs at least one trained model");
  PredictionGrid grid{x_min, x_max, resolution, std::vector<double>(resolution * resolution, 0.0)};
  const auto pts = grid_points(x_min, x_max, resolution);
  for (const Classifier* model : ensemble) {
    if (model == nullptr) throw UntrainedModel("prediction grid given an untrained model");
    const auto labels = model->predict(pts);
    for (std::size_t k = 0; k < labels.size(); ++k) grid.values[k] += labels[k];
  }
  const double inv = 1.0 / static_cast<double>(ensemble.size());
  for (auto& v : grid.values) v *= inv;
  return grid;
}

inline PredictionGrid prediction_grid(const Classifier* model, double x_min = -7.0, double x_max = 7.0,
                                      std::size_t resolution = 101) {
  const Classifier* one[] = {model};
  return prediction_grid(std::span<const Classifier* const>(one), x_min, x_max, resolution);
}

}  // namespace biasprobe
