#pragma once

// Binary Gaussian-process classification with a logistic likelihood and the
// Laplace approximation. Kernel: s2 * exp(-|a - b|^2 / (2 l^2)).
//
// Mode finding follows the standard Newton scheme on
//   Psi(f) = log p(y | f) - 0.5 f' K^-1 f
// using B = I + W^1/2 K W^1/2, which is well conditioned even when K is not.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "biasprobe/errors.hpp"
#include "biasprobe/learners/classifier.hpp"
#include "biasprobe/learners/glm.hpp"
#include "biasprobe/learners/spec.hpp"
#include "biasprobe/protocol.hpp"

namespace biasprobe {
namespace gp {

struct Hyper {
  double lengthscale = 1.0;
  double signal_variance = 1.0;
};

inline Eigen::MatrixXd rbf_gram(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Hyper& h) {
  // Direct differences keep K(a, b) == K(b, a) bit for bit.
  const double scale = -0.5 / (h.lengthscale * h.lengthscale);
  Eigen::MatrixXd K(A.rows(), B.rows());
  for (Eigen::Index j = 0; j < B.rows(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      K(i, j) = h.signal_variance * std::exp(scale * (A.row(i) - B.row(j)).squaredNorm());
    }
  }
  return K;
}

struct JitteredCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

// Cholesky of a symmetric PSD matrix, adding jitter 1e-10, 1e-9, ..., 1e-4 to
// the diagonal until the factorisation succeeds.
inline JitteredCholesky cholesky_with_jitter(const Eigen::MatrixXd& M) {
  JitteredCholesky out;
  out.llt.compute(M);
  if (out.llt.info() == Eigen::Success) return out;
  for (double jitter = 1e-10; jitter <= 1.0001e-4; jitter *= 10.0) {
    Eigen::MatrixXd Mj = M;
    Mj.diagonal().array() += jitter;
    out.llt.compute(Mj);
    if (out.llt.info() == Eigen::Success) {
      out.jitter = jitter;
      return out;
    }
  }
  throw NotPositiveDefinite("matrix is not positive definite even with jitter 1e-4");
}

struct LaplaceOptions {
  int max_iterations = 100;
  double residual_tolerance = 1e-8;
};

struct LaplaceFit {
  Eigen::VectorXd f;         // posterior mode
  Eigen::VectorXd grad;      // d log p(y|f) / df at the mode = t - pi
  Eigen::VectorXd sqrt_w;    // W^1/2
  Eigen::MatrixXd chol_b;    // lower Cholesky factor of B
  double log_marginal = 0.0;
  double residual = 0.0;     // |grad - K^-1 f|_inf
  int iterations = 0;
  bool converged = false;
};

inline double log_likelihood(const Eigen::VectorXd& t, const Eigen::VectorXd& f) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    // log sigma(y f) with y = 2t - 1
    const double yf = (2.0 * t[i] - 1.0) * f[i];
    s -= glm::softplus(-yf);
  }
  return s;
}

// t holds labels in {0, 1}.
inline LaplaceFit laplace_mode(const Eigen::MatrixXd& K, const Eigen::VectorXd& t, const LaplaceOptions& opt = {}) {
  const Eigen::Index n = K.rows();
  LaplaceFit fit;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  auto psi = [&](const Eigen::VectorXd& av, const Eigen::VectorXd& fv) { return -0.5 * av.dot(fv) + log_likelihood(t, fv); };
  double obj = psi(a, f);

  Eigen::VectorXd pi(n), sw(n), grad(n);
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (int it = 0; it < opt.max_iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      pi[i] = glm::sigmoid(f[i]);
      grad[i] = t[i] - pi[i];
      sw[i] = std::sqrt(pi[i] * (1.0 - pi[i]));
    }
    fit.residual = (grad - a).cwiseAbs().maxCoeff();
    fit.iterations = it;
    if (fit.residual <= opt.residual_tolerance) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd B = sw.asDiagonal() * K * sw.asDiagonal();
    B.diagonal().array() += 1.0;
    llt.compute(B);
    if (llt.info() != Eigen::Success) {
      auto c = cholesky_with_jitter(B);
      llt = std::move(c.llt);
    }
    const Eigen::VectorXd b = sw.cwiseProduct(sw).cwiseProduct(f) + grad;
    const Eigen::VectorXd kb = K * b;
    const Eigen::VectorXd c = llt.matrixU().solve(llt.matrixL().solve(sw.cwiseProduct(kb)));
    Eigen::VectorXd a_new = b - sw.cwiseProduct(c);
    Eigen::VectorXd f_new = K * a_new;
    double obj_new = psi(a_new, f_new);
    // Damped step if the full Newton step overshoots.
    double step = 1.0;
    while (obj_new < obj && step > 1e-6) {
      step *= 0.5;
      Eigen::VectorXd a_try = a + step * (a_new - a);
      Eigen::VectorXd f_try = f + step * (f_new - f);
      const double o = psi(a_try, f_try);
      if (o >= obj || step <= 1e-6) {
        a_new = std::move(a_try);
        f_new = std::move(f_try);
        obj_new = o;
        break;
      }
    }
    a = std::move(a_new);
    f = std::move(f_new);
    obj = obj_new;
    fit.iterations = it + 1;
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    pi[i] = glm::sigmoid(f[i]);
    grad[i] = t[i] - pi[i];
    sw[i] = std::sqrt(pi[i] * (1.0 - pi[i]));
  }
  fit.residual = (grad - a).cwiseAbs().maxCoeff();
  fit.converged = fit.converged || fit.residual <= opt.residual_tolerance;
  Eigen::MatrixXd B = sw.asDiagonal() * K * sw.asDiagonal();
  B.diagonal().array() += 1.0;
  llt.compute(B);
  if (llt.info() != Eigen::Success) {
    auto c = cholesky_with_jitter(B);
    llt = std::move(c.llt);
  }
  fit.chol_b = llt.matrixL();
  fit.log_marginal = -0.5 * grad.dot(f) + log_likelihood(t, f) - fit.chol_b.diagonal().array().log().sum();
  fit.f = std::move(f);
  fit.grad = std::move(grad);
  fit.sqrt_w = std::move(sw);
  return fit;
}

struct FitOptions {
  double lengthscale_min = 0.1;
  double lengthscale_max = 20.0;
  int grid_points = 40;
  double log_tolerance = 1e-3;  // golden-section bracket width in log(l)
  bool fit_signal_variance = false;
  double signal_variance_min = 1e-5;
  double signal_variance_max = 1e5;
};

}  // namespace gp

class GpModel final : public ProbabilisticClassifier {
 public:
  GpModel(GpVariant variant, gp::Hyper hyper, Eigen::MatrixXd train_x, Eigen::VectorXd grad, Eigen::VectorXd sqrt_w,
          Eigen::MatrixXd chol_b, TrainDiagnostics diag)
      : variant_(std::move(variant)),
        hyper_(hyper),
        x_(std::move(train_x)),
        grad_(std::move(grad)),
        sqrt_w_(std::move(sqrt_w)),
        chol_b_(std::move(chol_b)),
        diag_(diag) {}

  std::string name() const override { return LearnerSpec{Family::Gp, variant_}.name(); }
  std::size_t input_dim() const override { return static_cast<std::size_t>(x_.cols()); }
  TrainDiagnostics diagnostics() const override { return diag_; }
  const gp::Hyper& hyper() const noexcept { return hyper_; }

  struct Latent {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
    Eigen::VectorXd magnitude;  // sum_i |k_i * grad_i|, the scale of rounding in `mean`
  };

  Latent latent(std::span<const FeatureRow> xs) const {
    const auto m = static_cast<Eigen::Index>(xs.size());
    Eigen::MatrixXd Q(m, x_.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& r = xs[static_cast<std::size_t>(i)];
      if (r.size() != input_dim()) {
        throw DimensionMismatch("model expects " + std::to_string(input_dim()) + " features, got " +
                                std::to_string(r.size()));
      }
      for (Eigen::Index j = 0; j < x_.cols(); ++j) Q(i, j) = r[static_cast<std::size_t>(j)];
    }
    Latent out;
    if (m == 0) return out;
    const Eigen::MatrixXd Ks = gp::rbf_gram(x_, Q, hyper_);  // n x m
    out.mean = Ks.transpose() * grad_;
    out.magnitude = Ks.transpose().cwiseAbs() * grad_.cwiseAbs();
    const Eigen::MatrixXd V = chol_b_.triangularView<Eigen::Lower>().solve(sqrt_w_.asDiagonal() * Ks);
    out.variance = (hyper_.signal_variance - V.colwise().squaredNorm().transpose().array()).max(0.0);
    return out;
  }

  // Latent-averaged class probability, probit approximation of the logistic
  // integral. Its 0.5 crossing coincides with the sign of the latent mean.
  std::vector<double> predict_proba(std::span<const FeatureRow> xs) const override {
    const Latent l = latent(xs);
    std::vector<double> p(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double kappa = 1.0 / std::sqrt(1.0 + std::numbers::pi * l.variance[k] / 8.0);
      p[i] = glm::sigmoid(kappa * l.mean[k]);
    }
    return p;
  }

  // A latent mean within rounding of zero is a tie (exact symmetry does not
  // survive floating point). Far from the data both mean and magnitude vanish
  // together, so the test stays relative.
  static constexpr double kTieUlps = 64.0;

  std::vector<int> predict(std::span<const FeatureRow> xs) const override {
    const Latent l = latent(xs);
    std::vector<int> out(xs.size());
    const double eps = std::numeric_limits<double>::epsilon();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      out[i] = l.mean[k] >= -kTieUlps * eps * l.magnitude[k] ? 1 : 0;
    }
    return out;
  }

  nlohmann::json to_json() const override {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    std::vector<double> xs(x_.data(), x_.data() + x_.size());
    std::vector<double> lb(chol_b_.data(), chol_b_.data() + chol_b_.size());
    nlohmann::json j = {{"kind", "gp"},
                        {"lengthscale_spec", variant_.lengthscale ? nlohmann::json(*variant_.lengthscale) : nlohmann::json("fit")},
                        {"size_cap", variant_.size_cap},
                        {"lengthscale", hyper_.lengthscale},
                        {"signal_variance", hyper_.signal_variance},
                        {"rows", x_.rows()},
                        {"cols", x_.cols()},
                        {"train_x", xs},
                        {"grad", vec(grad_)},
                        {"sqrt_w", vec(sqrt_w_)},
                        {"chol_b", lb},
                        {"converged", diag_.converged},
                        {"iterations", diag_.iterations},
                        {"final_objective", diag_.final_objective}};
    return j;
  }

  static std::unique_ptr<GpModel> from_json(const nlohmann::json& j) {
    GpVariant v;
    if (j.at("lengthscale_spec").is_number()) v.lengthscale = j.at("lengthscale_spec").get<double>();
    v.size_cap = j.at("size_cap");
    gp::Hyper h{j.at("lengthscale"), j.at("signal_variance")};
    const Eigen::Index rows = j.at("rows"), cols = j.at("cols");
    auto xs = j.at("train_x").get<std::vector<double>>();
    auto lb = j.at("chol_b").get<std::vector<double>>();
    auto g = j.at("grad").get<std::vector<double>>();
    auto s = j.at("sqrt_w").get<std::vector<double>>();
    TrainDiagnostics d;
    d.converged = j.at("converged");
    d.iterations = j.at("iterations");
    d.final_objective = j.at("final_objective");
    if (!v.lengthscale) {
      d.fitted_lengthscale = h.lengthscale;
      d.fitted_signal_variance = h.signal_variance;
    }
    return std::make_unique<GpModel>(v, h, Eigen::Map<Eigen::MatrixXd>(xs.data(), rows, cols),
                                     Eigen::Map<Eigen::VectorXd>(g.data(), rows),
                                     Eigen::Map<Eigen::VectorXd>(s.data(), rows),
                                     Eigen::Map<Eigen::MatrixXd>(lb.data(), rows, rows), d);
  }

 private:
  GpVariant variant_;
  gp::Hyper hyper_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd grad_;
  Eigen::VectorXd sqrt_w_;
  Eigen::MatrixXd chol_b_;
  TrainDiagnostics diag_;
};

namespace gp {

struct Data {
  Eigen::MatrixXd x;
  Eigen::VectorXd t;
};

inline Data table_data(const QuadrantTable& table) {
  Data d{Eigen::MatrixXd(static_cast<Eigen::Index>(table.size()), static_cast<Eigen::Index>(table.dim())),
         Eigen::VectorXd(static_cast<Eigen::Index>(table.size()))};
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < table.dim(); ++j) d.x(k, static_cast<Eigen::Index>(j)) = table[i].x[j];
    d.t[k] = table[i].y ? 1.0 : 0.0;
  }
  return d;
}

// Maximises the Laplace log marginal likelihood over log(l) (and, when
// requested, over log(s2) for each l): a log-spaced grid followed by
// golden-section refinement inside the best grid cell.
class MarginalLikelihoodSearch {
 public:
  MarginalLikelihoodSearch(const Data& data, const FitOptions& opt) : data_(data), opt_(opt) {}

  struct Result {
    Hyper hyper;
    double log_marginal = 0.0;
    std::size_t evaluations = 0;
  };

  Result run() {
    const double lo = std::log(opt_.lengthscale_min);
    const double hi = std::log(opt_.lengthscale_max);
    std::vector<double> grid(static_cast<std::size_t>(opt_.grid_points));
    std::vector<double> values(grid.size());
    std::vector<double> variances(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
      auto [v, s2] = profile(grid[i]);
      values[i] = v;
      variances[i] = s2;
    }
    const auto best = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
    double a = grid[best == 0 ? 0 : best - 1];
    double b = grid[std::min(best + 1, grid.size() - 1)];
    Result r{{std::exp(grid[best]), variances[best]}, values[best], evaluations_};
    golden(a, b, r);
    r.evaluations = evaluations_;
    return r;
  }

  // Log marginal likelihood at fixed hyperparameters.
  double evaluate(const Hyper& h) {
    ++evaluations_;
    const Eigen::MatrixXd K = rbf_gram(data_.x, data_.x, h);
    LaplaceFit fit = laplace_mode(K, data_.t);
    return fit.log_marginal;
  }

 private:
  // Best log marginal over the signal variance at fixed log(l).
  std::pair<double, double> profile(double log_l) {
    const double l = std::exp(log_l);
    if (!opt_.fit_signal_variance) return {evaluate({l, 1.0}), 1.0};
    double a = std::log(opt_.signal_variance_min);
    double b = std::log(opt_.signal_variance_max);
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = evaluate({l, std::exp(c)});
    double fd = evaluate({l, std::exp(d)});
    while (b - a > 0.05) {
      if (fc >= fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - inv_phi * (b - a);
        fc = evaluate({l, std::exp(c)});
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + inv_phi * (b - a);
        fd = evaluate({l, std::exp(d)});
      }
    }
    return fc >= fd ? std::pair{fc, std::exp(c)} : std::pair{fd, std::exp(d)};
  }

  void golden(double a, double b, Result& best) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    auto [fc, sc] = profile(c);
    auto [fd, sd] = profile(d);
    while (b - a > opt_.log_tolerance) {
      if (fc >= fd) {
        b = d;
        d = c;
        fd = fc;
        sd = sc;
        c = b - inv_phi * (b - a);
        std::tie(fc, sc) = profile(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        sc = sd;
        d = a + inv_phi * (b - a);
        std::tie(fd, sd) = profile(d);
      }
    }
    if (fc > best.log_marginal) best = {{std::exp(c), sc}, fc, evaluations_};
    if (fd > best.log_marginal) best = {{std::exp(d), sd}, fd, evaluations_};
  }

  const Data& data_;
  FitOptions opt_;
  std::size_t evaluations_ = 0;
};

}  // namespace gp

inline std::unique_ptr<GpModel> train_gp(const QuadrantTable& table, const GpVariant& variant, std::uint64_t /*seed*/,
                                         const gp::FitOptions& fit_opt = {}) {
  detail::require_both_classes(table);
  if (table.size() > variant.size_cap) {
    throw SizeCapExceeded("GP training set has " + std::to_string(table.size()) + " rows; cap is " +
                          std::to_string(variant.size_cap));
  }
  const gp::Data data = gp::table_data(table);
  gp::Hyper hyper{variant.lengthscale.value_or(1.0), variant.signal_variance};
  TrainDiagnostics diag;
  if (!variant.lengthscale) {
    gp::MarginalLikelihoodSearch search(data, fit_opt);
    const auto r = search.run();
    hyper = r.hyper;
    diag.fitted_lengthscale = hyper.lengthscale;
    diag.fitted_signal_variance = hyper.signal_variance;
  }
  const Eigen::MatrixXd K = gp::rbf_gram(data.x, data.x, hyper);
  gp::LaplaceFit fit = gp::laplace_mode(K, data.t);
  diag.converged = fit.converged;
  diag.iterations = static_cast<std::size_t>(fit.iterations);
  diag.final_objective = fit.log_marginal;
  return std::make_unique<GpModel>(variant, hyper, data.x, fit.grad, fit.sqrt_w, fit.chol_b, diag);
}

}  // namespace biasprobe
