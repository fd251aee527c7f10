// End-to-end acceptance run: one PASS/FAIL line per criterion. Tolerances and
// time limits are pinned below. The process exits 0 once every criterion has
// been evaluated; a FAIL line is a reported result, not a crash.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "biasprobe/harness.hpp"
#include "test_support.hpp"

namespace bp = biasprobe;

namespace {

constexpr std::uint64_t kBaseSeed = 1;
constexpr std::size_t kRuns = 20;

constexpr double kTableTolerance = 0.005;
constexpr double kRuleEvrBound = 0.05;
constexpr double kGpFitEvrFloor = 0.15;
constexpr double kLengthscaleLo = 4.2, kLengthscaleHi = 6.2;
constexpr double kDeepWideRatio = 0.5;  // |EVR(4h4d) - EVR(16h1d)| <= ratio * (EVR(16h1d) - EVR(2h1d))
constexpr double kPeGapTarget = 0.37, kPeGapTolerance = 0.15;
constexpr double kEquiBound = 0.05, kPeGapFloor = 0.2;
constexpr double kGradientTolerance = 1e-5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail, double runtime, double limit) {
  const bool in_time = runtime <= limit;
  const bool ok = pass && in_time;
  failures += !ok;
  std::printf("%s  %-26s %s  [%.1f s, limit %.0f s%s]\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str(), runtime,
              limit, in_time ? "" : ", over time");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string est(const bp::Estimate& e) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f±%.3f", e.value, e.ci95.value_or(0.0));
  return buf;
}

double ci(const bp::Estimate& e) { return e.ci95.value_or(0.0); }
bool covers_zero(const bp::Estimate& e) { return std::abs(e.value) <= ci(e); }
bool excludes_zero(const bp::Estimate& e) { return std::abs(e.value) > ci(e); }

struct Suite {
  std::map<std::string, bp::BiasReport> reports;
  double seconds = 0.0;
};

Suite run_suite(const std::vector<std::string>& models, std::vector<bp::NamedCondition> conditions) {
  const auto t0 = Clock::now();
  bp::ExperimentPlan plan;
  for (const auto& m : models) plan.models.push_back(bp::ModelEntry::from_name(m));
  plan.conditions = std::move(conditions);
  plan.runs = kRuns;
  plan.base_seed = kBaseSeed;
  Suite s;
  for (auto& r : bp::run_synth(plan).reports) s.reports[r.model] = r;
  s.seconds = seconds_since(t0);
  return s;
}

// --- table reproductions ---------------------------------------------------

void rho_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& t : testing_support::kReferenceRhoTriples) {
    worst = std::max(worst, std::abs(bp::spurious_correlation(t.pi0, t.pi1) - t.rho));
  }
  report("rho-oracle", worst <= kTableTolerance, fmt("max |drho| = %.4f (tol 0.005)", worst), seconds_since(t0), 1);
}

void interpolant_solver() {
  const auto t0 = Clock::now();
  struct Row {
    double pi_fe, zs_pi0, eq_pi0;
  };
  const Row rows[] = {{0.1, 0.32, 0.66}, {0.25, 0.125, 0.825}, {0.01, 0.481, 0.519}};
  double worst = 0.0;
  for (const auto& r : rows) {
    worst = std::max(worst, std::abs(bp::zs_interpolant(r.pi_fe).pi0 - r.zs_pi0));
    worst = std::max(worst, std::abs(bp::eq_interpolant(r.pi_fe).pi0 - r.eq_pi0));
  }
  report("interpolant-solver", worst <= kTableTolerance, fmt("max |dpi0| = %.4f (tol 0.005)", worst),
         seconds_since(t0), 1);
}

// --- model-family criteria -------------------------------------------------

void glm_criteria(const Suite& s) {
  const auto& lin = *s.reports.at("GLM:lin").evr;
  const auto& l1 = *s.reports.at("GLM:l1").evr;
  const auto& l2 = *s.reports.at("GLM:l2").evr;
  const auto& phi = *s.reports.at("GLM:Φ").evr;
  const bool rule = std::abs(lin.value) <= kRuleEvrBound && covers_zero(lin) && std::abs(l1.value) <= kRuleEvrBound &&
                    covers_zero(l1);
  report("glm-rule-based", rule, "EVR lin " + est(lin) + ", l1 " + est(l1) + " (|EVR| <= 0.05, CI covers 0)",
         s.seconds, 60);
  const bool order = phi.value > l2.value && l2.value > l1.value && phi.value - ci(phi) > l1.value + ci(l1);
  report("glm-regularization-order", order,
         "EVR phi " + est(phi) + " > l2 " + est(l2) + " > l1 " + est(l1) + ", phi/l1 CIs disjoint", s.seconds, 120);
}

void gp_criteria(const Suite& s) {
  const auto& a = *s.reports.at("GP:0.5").evr;
  const auto& b = *s.reports.at("GP:8.0").evr;
  const auto& f = *s.reports.at("GP:fit").evr;
  const bool pass = a.value > b.value && excludes_zero(a) && excludes_zero(b) && f.value >= kGpFitEvrFloor;
  report("gp-exemplar-based", pass,
         "EVR 0.5 " + est(a) + " > 8.0 " + est(b) + " (CIs exclude 0), fit " + est(f) + " >= 0.15", s.seconds, 600);
}

void gp_lengthscale(double suite_seconds) {
  const auto t0 = Clock::now();
  bp::ExperimentPlan plan;
  plan.models = {bp::ModelEntry::from_name("GP:fit")};
  plan.base_seed = kBaseSeed;
  const bp::NamedCondition cc{"CC", 1.0, 0.0};
  double sum = 0.0;
  for (std::size_t run = 0; run < kRuns; ++run) {
    const auto seed = bp::job_seed(plan.base_seed, cc.name, run);
    const auto data = bp::make_job_data(plan, cc, seed);
    const auto m = bp::fit_model(plan.models[0], data.train, bp::derive_key(seed, bp::hash_name("GP:fit")));
    sum += m->diagnostics().fitted_lengthscale.value_or(std::nan(""));
  }
  const double mean = sum / kRuns;
  report("gp-fit-lengthscale", mean >= kLengthscaleLo && mean <= kLengthscaleHi,
         fmt("mean fitted l on CC = %.3f (want [4.2, 6.2])", mean), suite_seconds + seconds_since(t0), 600);
}

void nn_width(const Suite& s) {
  const auto& wide = *s.reports.at("NN:16h1d").evr;
  const auto& narrow = *s.reports.at("NN:2h1d").evr;
  const auto& deep = *s.reports.at("NN:4h4d").evr;
  const double gap = wide.value - narrow.value;
  const bool separated = wide.value - ci(wide) > narrow.value + ci(narrow);
  const bool comparable = std::abs(deep.value - wide.value) <= kDeepWideRatio * gap;
  report("nn-width-effect", gap > 0 && separated && comparable,
         "EVR 16h1d " + est(wide) + " vs 2h1d " + est(narrow) + (separated ? " (CIs disjoint)" : " (CIs overlap)") +
             "; 4h4d " + est(deep) + fmt(", |4h4d-16h1d| <= %.3f", kDeepWideRatio * gap),
         s.seconds, 300);
}

void nn_pe_gap_and_equi(const Suite& s) {
  const auto& r = s.reports.at("NN:16h1d");
  const auto& gap = *r.evr;
  report("nn-pe-gap", std::abs(gap.value - kPeGapTarget) <= kPeGapTolerance,
         "ZS-PE " + est(gap) + " (want 0.37 ± 0.15)", s.seconds, 180);
  const double zs = r.condition("ZS")->value;
  const double eq = r.condition("EQ_INTERP@0.1")->value;
  const bool pass = std::abs(zs - eq) <= kEquiBound && gap.value >= kPeGapFloor;
  report("nn-equi-correlation", pass,
         fmt("|ZS-EQ(0.1)| = %.4f (<= 0.05)", std::abs(zs - eq)) + fmt(", ZS-PE = %.3f (>= 0.2)", gap.value),
         s.seconds, 300);
}

void flb_null(const std::vector<const Suite*>& suites) {
  double seconds = 0.0;
  std::string bad;
  std::size_t n = 0;
  for (const auto* s : suites) {
    seconds += s->seconds;
    for (const auto& [name, r] : s->reports) {
      if (!r.flb) continue;
      ++n;
      if (!covers_zero(*r.flb)) bad += " " + name + "=" + est(*r.flb);
    }
  }
  report("flb-null", bad.empty(), std::to_string(n) + " models" + (bad.empty() ? ", all FLB CIs cover 0" : "; not covering 0:" + bad),
         seconds, 900);
}

// --- property suite --------------------------------------------------------

void property_suite() {
  const auto t0 = Clock::now();
  std::vector<std::string> broken;
  auto check = [&](const std::string& what, bool ok) {
    if (!ok) broken.push_back(what);
  };
  bp::Stream rng(77);

  // Sampler determinism and counts partitions.
  check("sampler-determinism",
        bp::synth_condition({0.66, 0.1, 600, 3}) == bp::synth_condition({0.66, 0.1, 600, 3}));
  bool partitions = true;
  for (int i = 0; i < 2000; ++i) {
    const std::size_t n = 2 * (1 + rng.below(500));
    const bp::ConditionSpec spec{rng.uniform(), rng.uniform(), n, 0};
    const auto c = bp::counts_for(spec);
    partitions &= c.total() == n && c.at(false, false) + c.at(false, true) == n / 2 &&
                  c.at(true, false) + c.at(true, true) == n / 2;
  }
  check("counts-partition", partitions);

  // GLM gradient against central differences.
  {
    const auto t = bp::synth_condition({0.5, 0.0, 60, 4});
    Eigen::MatrixXd X(60, 3);
    Eigen::VectorXd y(60);
    for (std::size_t i = 0; i < 60; ++i) {
      const auto f = bp::glm_features(t[i].x, bp::FeatureSet::Phi, 3.0);
      for (int j = 0; j < 3; ++j) X(static_cast<Eigen::Index>(i), j) = f[static_cast<std::size_t>(j)];
      y[static_cast<Eigen::Index>(i)] = t[i].y;
    }
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Eigen::VectorXd w(3);
      for (int j = 0; j < 3; ++j) w[j] = rng.uniform(-1, 1);
      const double b = rng.uniform(-1, 1);
      Eigen::VectorXd gw;
      double gb = 0;
      bp::glm::smooth_loss(X, y, w, b, &gw, &gb);
      Eigen::VectorXd ana(4), num(4);
      ana << gw, gb;
      for (int j = 0; j < 4; ++j) {
        Eigen::VectorXd wp = w, wm = w;
        double bp_ = b, bm = b;
        if (j < 3) {
          wp[j] += 1e-5;
          wm[j] -= 1e-5;
        } else {
          bp_ += 1e-5;
          bm -= 1e-5;
        }
        num[j] = (bp::glm::smooth_loss(X, y, wp, bp_) - bp::glm::smooth_loss(X, y, wm, bm)) / 2e-5;
      }
      worst = std::max(worst, (num - ana).norm() / (num.norm() + ana.norm()));
    }
    check(fmt("glm-gradient (rel %.1e)", worst), worst <= kGradientTolerance);
  }

  // MLP gradient against central differences.
  {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      auto net = bp::mlp::init_network(2, {5, 3}, 500 + trial);
      Eigen::MatrixXd X(2, 12);
      Eigen::RowVectorXd y(12);
      for (int i = 0; i < 12; ++i) {
        X(0, i) = rng.uniform(-3, 3);
        X(1, i) = rng.uniform(-3, 3);
        y[i] = rng.uniform() < 0.5;
      }
      bp::mlp::Network grad;
      bp::mlp::loss_and_gradient(net, X, y, 1e-2, &grad);
      double diff = 0, scale = 0;
      for (std::size_t l = 0; l < net.size(); ++l) {
        auto probe = [&](double& p, double g) {
          const double saved = p;
          p = saved + 1e-5;
          const double up = bp::mlp::loss_and_gradient(net, X, y, 1e-2, nullptr);
          p = saved - 1e-5;
          const double down = bp::mlp::loss_and_gradient(net, X, y, 1e-2, nullptr);
          p = saved;
          const double n = (up - down) / 2e-5;
          diff += (n - g) * (n - g);
          scale += n * n + g * g;
        };
        for (Eigen::Index k = 0; k < net[l].weight.size(); ++k) probe(net[l].weight.data()[k], grad[l].weight.data()[k]);
        for (Eigen::Index k = 0; k < net[l].bias.size(); ++k) probe(net[l].bias[k], grad[l].bias[k]);
      }
      worst = std::max(worst, std::sqrt(diff / scale));
    }
    check(fmt("mlp-gradient (rel %.1e)", worst), worst <= kGradientTolerance);
  }

  // L1 sparsity on the interaction weight.
  {
    int zeroed = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto m = bp::train_glm(bp::synth_condition({0.5, 0.0, 600, 500 + s}), bp::parse_learner("GLM:l1").glm(), s);
      zeroed += std::abs(m->weights()[2]) < 1e-6;
    }
    check("l1-sparsity (" + std::to_string(zeroed) + "/20)", zeroed >= 19);
  }

  // Kernel PSD with jitter.
  {
    bool ok = true;
    for (int trial = 0; trial < 1000 && ok; ++trial) {
      const auto n = static_cast<Eigen::Index>(2 + rng.below(40));
      Eigen::MatrixXd x(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        x(i, 0) = rng.uniform(-5, 5);
        x(i, 1) = i > 0 && rng.uniform() < 0.2 ? x(i - 1, 1) : rng.uniform(-5, 5);
      }
      try {
        bp::gp::cholesky_with_jitter(bp::gp::rbf_gram(x, x, {std::exp(rng.uniform(-2.3, 3.0)), 1.0}));
      } catch (const bp::Error&) {
        ok = false;
      }
    }
    check("kernel-psd", ok);
  }

  // Logit and regression exactness, metric antisymmetry.
  {
    bool ok = bp::logit(0.5) == 0.0;
    for (int i = 1; i < 1000; ++i) ok &= std::abs(bp::logit(i / 1000.0) + bp::logit(1 - i / 1000.0)) < 1e-9;
    check("logit-odd", ok);
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < 8; ++i) pts.emplace_back(i * 0.37 - 1, 2 * (i * 0.37 - 1) + 1);
    const auto r = bp::ols_fit(pts);
    check("regression-exact", std::abs(r.slope - 2) < 1e-10 && std::abs(r.intercept - 1) < 1e-10);
    bool anti = true;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> a(1 + rng.below(20)), b(1 + rng.below(20));
      for (auto& v : a) v = rng.uniform();
      for (auto& v : b) v = rng.uniform();
      anti &= bp::evr(a, b).value == -bp::evr(b, a).value;
    }
    check("evr-antisymmetry", anti);
  }

  std::string detail = broken.empty() ? "sampler, partitions, gradients, L1 sparsity, kernel PSD, logit/regression, antisymmetry"
                                      : "broken:";
  for (const auto& b : broken) detail += " " + b;
  report("property-suite", broken.empty(), detail, seconds_since(t0), 300);
}

// --- splitter and gating ---------------------------------------------------

void splitter_oracle() {
  const auto t0 = Clock::now();
  const auto pool = testing_support::make_pool(10000, 2024);
  bp::Stream rng(31);
  int exact = 0;
  for (int i = 0; i < 50; ++i) {
    const bp::ConditionSpec spec{rng.uniform(), rng.uniform(), 2 * (1 + rng.below(1000)), rng.next_bits()};
    const auto t = bp::assemble_condition(pool, std::string("disc"), std::string("dist"), spec);
    exact += t.quadrant_counts() == bp::counts_for(spec);
  }
  bool gating = true;
  for (double th : {0.80, 0.75}) {
    std::vector<bp::ProbeResult> rs(400);
    for (std::size_t i = 0; i < rs.size(); ++i) {
      rs[i].run = i;
      rs[i].validation_accuracy = std::round(rng.uniform(0.5, 1.0) * 100) / 100;  // hits the threshold exactly too
    }
    const auto g = bp::gate_by_validation(rs, th);
    gating &= g.kept.size() + g.dropped.size() == rs.size() && !g.kept.empty() && !g.dropped.empty();
    for (const auto& r : g.kept) gating &= *r.validation_accuracy >= th;
    for (const auto& r : g.dropped) gating &= *r.validation_accuracy < th;
  }
  report("splitter-oracle", exact == 50 && gating,
         std::to_string(exact) + "/50 specs exact on a 10000-row pool; gating at 0.80/0.75 " + (gating ? "ok" : "wrong"),
         seconds_since(t0), 30);
}

}  // namespace

int main() {
  std::printf("acceptance: %zu runs per condition, N=600, base seed %llu\n", kRuns,
              static_cast<unsigned long long>(kBaseSeed));
  rho_oracle();
  interpolant_solver();
  splitter_oracle();
  property_suite();

  const Suite glm = run_suite({"GLM:lin", "GLM:Φ", "GLM:l1", "GLM:l2"}, bp::probe_conditions());
  glm_criteria(glm);

  auto nn_conditions = bp::probe_conditions();
  const auto eq = bp::eq_interpolant(0.1);
  nn_conditions.push_back({"EQ_INTERP@0.1", eq.pi0, eq.pi1});
  const Suite nn = run_suite({"NN:16h1d", "NN:2h1d", "NN:4h4d"}, nn_conditions);
  nn_width(nn);
  nn_pe_gap_and_equi(nn);

  const Suite gp = run_suite({"GP:0.5", "GP:8.0", "GP:fit"}, bp::probe_conditions());
  gp_criteria(gp);
  gp_lengthscale(gp.seconds);

  flb_null({&glm, &nn, &gp});

  std::printf("acceptance: %d criterion/criteria failed\n", failures);
  return 0;
}
