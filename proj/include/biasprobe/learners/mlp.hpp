#pragma once

// Fully-connected ReLU network with a single logistic output unit.
//
// Training: mini-batch Adam on mean binary cross-entropy plus an L2 term
// 0.5 * weight_decay * sum |W|^2 / batch_size (biases unpenalised). Training
// stops after max_epochs, or once the epoch loss has failed to improve on the
// best loss by more than `tolerance` for more than `patience` epochs in a row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "biasprobe/errors.hpp"
#include "biasprobe/learners/classifier.hpp"
#include "biasprobe/learners/glm.hpp"
#include "biasprobe/learners/spec.hpp"
#include "biasprobe/protocol.hpp"
#include "biasprobe/random.hpp"

namespace biasprobe {
namespace mlp {

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

using Network = std::vector<Layer>;

struct TrainOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  std::size_t max_batch = 200;
  std::size_t max_epochs = 200;
  double tolerance = 1e-4;
  std::size_t patience = 10;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)) for weights and biases alike.
inline Network init_network(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  Stream rng(derive_key(seed, hash_name("mlp-init")));
  Network net;
  std::size_t fan_in = input_dim;
  std::vector<std::size_t> widths = hidden;
  widths.push_back(1);
  for (std::size_t fan_out : widths) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Layer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd(fan_out)};
    // Row-major draw order so the stream layout does not depend on Eigen storage.
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = rng.uniform(-bound, bound);
    net.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return net;
}

// Output logits for inputs X (input_dim x m).
inline Eigen::RowVectorXd forward_logits(const Network& net, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd a = X;
  for (std::size_t l = 0; l + 1 < net.size(); ++l) {
    a = ((net[l].weight * a).colwise() + net[l].bias).cwiseMax(0.0);
  }
  return ((net.back().weight * a).colwise() + net.back().bias).row(0);
}

// Batch objective and its gradient (same shapes as `net`).
inline double loss_and_gradient(const Network& net, const Eigen::MatrixXd& X, const Eigen::RowVectorXd& y,
                                double weight_decay, Network* grad) {
  const Eigen::Index m = X.cols();
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<Eigen::MatrixXd> acts;  // inputs to each layer
  acts.reserve(net.size());
  acts.push_back(X);
  for (std::size_t l = 0; l + 1 < net.size(); ++l) {
    acts.push_back(((net[l].weight * acts.back()).colwise() + net[l].bias).cwiseMax(0.0));
  }
  const Eigen::RowVectorXd z = ((net.back().weight * acts.back()).colwise() + net.back().bias).row(0);

  double loss = 0.0;
  Eigen::RowVectorXd delta(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    loss += glm::softplus(z[i]) - y[i] * z[i];
    delta[i] = (glm::sigmoid(z[i]) - y[i]) * inv_m;
  }
  loss *= inv_m;
  double sq = 0.0;
  for (const auto& layer : net) sq += layer.weight.squaredNorm();
  loss += 0.5 * weight_decay * sq * inv_m;

  if (grad) {
    grad->resize(net.size());
    Eigen::MatrixXd d = delta;  // 1 x m
    for (std::size_t l = net.size(); l-- > 0;) {
      (*grad)[l].weight = d * acts[l].transpose() + weight_decay * inv_m * net[l].weight;
      (*grad)[l].bias = d.rowwise().sum();
      if (l > 0) {
        Eigen::MatrixXd back = net[l].weight.transpose() * d;
        d = (acts[l].array() > 0.0).select(back, 0.0);
      }
    }
  }
  return loss;
}

}  // namespace mlp

class MlpModel final : public ProbabilisticClassifier {
 public:
  MlpModel(MlpVariant variant, std::size_t input_dim, mlp::Network net, TrainDiagnostics diag)
      : variant_(std::move(variant)), input_dim_(input_dim), net_(std::move(net)), diag_(diag) {}

  std::string name() const override { return LearnerSpec{Family::Mlp, variant_}.name(); }
  std::size_t input_dim() const override { return input_dim_; }
  TrainDiagnostics diagnostics() const override { return diag_; }
  const mlp::Network& network() const noexcept { return net_; }

  Eigen::RowVectorXd logits(std::span<const FeatureRow> xs) const {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(input_dim_), static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i].size() != input_dim_) {
        throw DimensionMismatch("model expects " + std::to_string(input_dim_) + " features, got " +
                                std::to_string(xs[i].size()));
      }
      for (std::size_t j = 0; j < input_dim_; ++j) {
        X(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = xs[i][j];
      }
    }
    return mlp::forward_logits(net_, X);
  }

  std::vector<double> predict_proba(std::span<const FeatureRow> xs) const override {
    if (xs.empty()) return {};
    const auto z = logits(xs);
    std::vector<double> p(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) p[i] = glm::sigmoid(z[static_cast<Eigen::Index>(i)]);
    return p;
  }

  std::vector<int> predict(std::span<const FeatureRow> xs) const override {
    if (xs.empty()) return {};
    const auto z = logits(xs);
    std::vector<int> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = z[static_cast<Eigen::Index>(i)] >= 0.0 ? 1 : 0;
    return out;
  }

  nlohmann::json to_json() const override {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net_) {
      layers.push_back({{"rows", l.weight.rows()},
                        {"cols", l.weight.cols()},
                        {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
                        {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return {{"kind", "mlp"},
            {"hidden_widths", variant_.hidden_widths},
            {"input_dim", input_dim_},
            {"layers", layers},
            {"converged", diag_.converged},
            {"iterations", diag_.iterations},
            {"final_objective", diag_.final_objective}};
  }

  static std::unique_ptr<MlpModel> from_json(const nlohmann::json& j) {
    MlpVariant v{j.at("hidden_widths").get<std::vector<std::size_t>>()};
    mlp::Network net;
    for (const auto& l : j.at("layers")) {
      const Eigen::Index r = l.at("rows"), c = l.at("cols");
      auto w = l.at("weight").get<std::vector<double>>();
      auto b = l.at("bias").get<std::vector<double>>();
      net.push_back({Eigen::Map<Eigen::MatrixXd>(w.data(), r, c), Eigen::Map<Eigen::VectorXd>(b.data(), r)});
    }
    TrainDiagnostics d;
    d.converged = j.at("converged");
    d.iterations = j.at("iterations");
    d.final_objective = j.at("final_objective");
    return std::make_unique<MlpModel>(v, j.at("input_dim").get<std::size_t>(), std::move(net), d);
  }

 private:
  MlpVariant variant_;
  std::size_t input_dim_;
  mlp::Network net_;
  TrainDiagnostics diag_;
};

inline std::unique_ptr<MlpModel> train_mlp(const QuadrantTable& table, const MlpVariant& variant, std::uint64_t seed,
                                           const mlp::TrainOptions& opt = {}) {
  detail::require_both_classes(table);
  const std::size_t n = table.size();
  const std::size_t d = table.dim();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  Eigen::RowVectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) X(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = table[i].x[j];
    y[static_cast<Eigen::Index>(i)] = table[i].y ? 1.0 : 0.0;
  }

  mlp::Network net = mlp::init_network(d, variant.hidden_widths, seed);
  mlp::Network m1, m2, grad;
  for (const auto& l : net) {
    m1.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
  }
  m2 = m1;

  Stream shuffle_rng(derive_key(seed, hash_name("mlp-shuffle")));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::min(opt.max_batch, n);

  TrainDiagnostics diag;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t no_improvement = 0;
  std::size_t step = 0;
  double epoch_loss = 0.0;
  std::size_t epoch = 0;
  for (; epoch < opt.max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double accumulated = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(start + batch, n);
      const auto m = static_cast<Eigen::Index>(stop - start);
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(d), m);
      Eigen::RowVectorXd yb(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const auto src = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(k)]);
        xb.col(k) = X.col(src);
        yb[k] = y[src];
      }
      const double loss = mlp::loss_and_gradient(net, xb, yb, opt.weight_decay, &grad);
      accumulated += loss * static_cast<double>(m);

      ++step;
      const double t = static_cast<double>(step);
      const double lr_t =
          opt.learning_rate * std::sqrt(1.0 - std::pow(opt.beta2, t)) / (1.0 - std::pow(opt.beta1, t));
      for (std::size_t l = 0; l < net.size(); ++l) {
        m1[l].weight = opt.beta1 * m1[l].weight + (1.0 - opt.beta1) * grad[l].weight;
        m2[l].weight = opt.beta2 * m2[l].weight + (1.0 - opt.beta2) * grad[l].weight.cwiseAbs2();
        net[l].weight.array() -= lr_t * m1[l].weight.array() / (m2[l].weight.array().sqrt() + opt.epsilon);
        m1[l].bias = opt.beta1 * m1[l].bias + (1.0 - opt.beta1) * grad[l].bias;
        m2[l].bias = opt.beta2 * m2[l].bias + (1.0 - opt.beta2) * grad[l].bias.cwiseAbs2();
        net[l].bias.array() -= lr_t * m1[l].bias.array() / (m2[l].bias.array().sqrt() + opt.epsilon);
      }
    }
    epoch_loss = accumulated / static_cast<double>(n);
    if (epoch_loss > best_loss - opt.tolerance) {
      ++no_improvement;
    } else {
      no_improvement = 0;
    }
    best_loss = std::min(best_loss, epoch_loss);
    if (no_improvement > opt.patience) {
      diag.converged = true;
      ++epoch;
      break;
    }
  }
  diag.iterations = epoch;
  diag.final_objective = epoch_loss;
  return std::make_unique<MlpModel>(variant, d, std::move(net), diag);
}

}  // namespace biasprobe
