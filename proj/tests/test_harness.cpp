#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "biasprobe/csv.hpp"
#include "biasprobe/harness.hpp"
#include "test_support.hpp"

using namespace biasprobe;
namespace fs = std::filesystem;

namespace {

ExperimentPlan small_plan(std::vector<std::string> models, std::size_t runs = 3) {
  ExperimentPlan p;
  for (const auto& m : models) p.models.push_back(ModelEntry::from_name(m));
  p.runs = runs;
  p.n_total = 200;
  p.extrapolation_n = 50;
  p.base_seed = 123;
  return p;
}

AdapterConfig mock(const std::string& mode) {
  AdapterConfig c;
  c.command = {MOCK_ADAPTER_PATH, mode};
  c.train_timeout_seconds = 20;
  c.predict_timeout_seconds = 20;
  c.label = mode;
  return c;
}

bool same(const ProbeResult& a, const ProbeResult& b) {
  return a.model == b.model && a.condition == b.condition && a.run == b.run && a.seed == b.seed &&
         a.extrap_accuracy == b.extrap_accuracy && a.validation_accuracy == b.validation_accuracy && a.rho == b.rho;
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "biasprobe-cli-XXXXXX").string();
    path = ::mkdtemp(tmpl.data());
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

int cli(const std::string& args) {
  const std::string cmd = std::string(BIASPROBE_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Harness, DeterministicAndIndependentOfJobCount) {
  auto plan = small_plan({"GLM:lin", "NN:2h1d"});
  const auto a = run_synth(plan);
  plan.jobs = 3;
  const auto b = run_synth(plan);
  ASSERT_EQ(a.runs.results.size(), 2u * 3u * 3u);
  ASSERT_EQ(a.runs.results.size(), b.runs.results.size());
  for (std::size_t i = 0; i < a.runs.results.size(); ++i) EXPECT_TRUE(same(a.runs.results[i], b.runs.results[i])) << i;
  // Canonical order: model, then condition, then run.
  EXPECT_EQ(a.runs.results[0].model, "GLM:lin");
  EXPECT_EQ(a.runs.results[0].condition, "CC");
  EXPECT_EQ(a.runs.results[1].run, 1u);
  EXPECT_EQ(a.runs.results[3].condition, "ZS");
}

TEST(Harness, SeedsDistinctAcrossJobs) {
  std::set<std::uint64_t> seeds;
  for (const auto& c : probe_conditions()) {
    for (std::size_t r = 0; r < 50; ++r) seeds.insert(job_seed(7, c.name, r));
  }
  EXPECT_EQ(seeds.size(), 150u);
  EXPECT_NE(job_seed(7, "CC", 0), job_seed(8, "CC", 0));
}

TEST(Harness, AddingAModelDoesNotChangeOthers) {
  const auto a = run_synth(small_plan({"GLM:lin"}));
  const auto b = run_synth(small_plan({"NN:2h1d", "GLM:lin"}));
  std::vector<ProbeResult> lin;
  for (const auto& r : b.runs.results) {
    if (r.model == "GLM:lin") lin.push_back(r);
  }
  ASSERT_EQ(lin.size(), a.runs.results.size());
  for (std::size_t i = 0; i < lin.size(); ++i) EXPECT_TRUE(same(lin[i], a.runs.results[i]));
}

TEST(Harness, ReportRecomputableFromRunsCsv) {
  const auto out = run_synth(small_plan({"GLM:l2", "NN:2h1d"}, 4));
  std::stringstream ss;
  csv::write_runs(ss, out.runs.results);
  const auto back = aggregate(csv::read_runs(ss));
  ASSERT_EQ(back.size(), out.reports.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].model, out.reports[i].model);
    EXPECT_EQ(back[i].evr->value, out.reports[i].evr->value);
    EXPECT_EQ(*back[i].evr->ci95, *out.reports[i].evr->ci95);
    EXPECT_EQ(back[i].flb->value, out.reports[i].flb->value);
  }
}

TEST(Harness, SingleRunHasNoCi) {
  const auto out = run_synth(small_plan({"GLM:lin"}, 1));
  ASSERT_EQ(out.reports.size(), 1u);
  EXPECT_FALSE(out.reports[0].flb->ci95.has_value());
  EXPECT_FALSE(out.reports[0].evr->ci95.has_value());
  EXPECT_FALSE(out.reports[0].condition("ZS")->ci95.has_value());
}

TEST(Harness, RhoRecordedWhereDefined) {
  const auto out = run_synth(small_plan({"GLM:lin"}, 1));
  for (const auto& r : out.runs.results) {
    if (r.condition == "ZS") {
      EXPECT_FALSE(r.rho.has_value());
    } else if (r.condition == "CC") {
      EXPECT_EQ(r.rho, 1.0);
    } else {
      EXPECT_NEAR(*r.rho, 0.5773502691896258, 1e-12);
    }
  }
}

TEST(Harness, PlanValidation) {
  EXPECT_THROW(ModelEntry::from_name("GLM:nope"), UsageError);
  auto p = small_plan({"GLM:lin", "GLM:lin"});
  EXPECT_THROW(p.validate(), UsageError);
  p = small_plan({"GLM:lin"});
  p.conditions.push_back({"CC", 1.0, 0.0});
  EXPECT_THROW(p.validate(), UsageError);
  p = small_plan({"GLM:lin"});
  p.n_total = 201;
  EXPECT_THROW(p.validate(), InvalidSpec);
  p = small_plan({"GLM:lin"});
  p.runs = 0;
  EXPECT_THROW(p.validate(), UsageError);
  p = small_plan({});
  EXPECT_THROW(run_synth(p), UsageError);
}

TEST(Harness, FailingJobsAbortOrAreSkipped) {
  auto p = small_plan({"GLM:lin"}, 2);
  p.models.push_back(ModelEntry::from_adapter(mock("exit")));
  EXPECT_THROW(run_jobs(p), JobFailure);
  p.keep_going = true;
  const auto out = run_jobs(p);
  EXPECT_EQ(out.results.size(), 6u);
  EXPECT_EQ(out.failures.size(), 6u);
  EXPECT_EQ(out.failures.front().model, "BB:exit");
}

TEST(Harness, AdapterMatchesInProcessLearner) {
  auto p = small_plan({"GLM:lin"}, 3);
  p.models.push_back(ModelEntry::from_adapter(mock("linear")));
  const auto out = run_synth(p);
  ASSERT_EQ(out.reports.size(), 2u);
  EXPECT_EQ(out.reports[0].evr->value, out.reports[1].evr->value);
  EXPECT_EQ(out.reports[0].flb->value, out.reports[1].flb->value);
  EXPECT_EQ(out.reports[1].model, "BB:linear");
}

TEST(Harness, PoolSourceWithValidationGating) {
  const auto pool = std::make_shared<AttributePool>(testing_support::make_pool(4000, 3));
  auto p = small_plan({"GLM:lin"}, 3);
  p.source = PoolSource{pool, {"disc"}, {"dist"}};
  p.validation_n = 100;
  const auto out = run_synth(p);
  ASSERT_EQ(out.runs.results.size(), 9u);
  for (const auto& r : out.runs.results) {
    ASSERT_TRUE(r.validation_accuracy.has_value());
    EXPECT_GE(*r.validation_accuracy, 0.0);
  }
  const JobData d = make_job_data(p, probe_conditions()[2], 5);
  EXPECT_EQ(d.train.size(), 200u);
  EXPECT_EQ(d.extrapolation.size(), 50u);
  EXPECT_EQ(d.extrapolation.quadrant_counts().at(true, true), 50u);
  EXPECT_EQ(d.validation->size(), 100u);
  // Training, validation and evaluation rows never overlap.
  std::set<std::vector<double>> seen;
  for (const auto* t : {&d.train, &d.extrapolation, &*d.validation}) {
    for (const auto& r : t->rows()) EXPECT_TRUE(seen.insert(r.x).second);
  }
  p.validation_threshold = 1.01;
  EXPECT_THROW(p.validate(), UsageError);
}

TEST(Harness, SynthValidationSet) {
  auto p = small_plan({"GLM:lin"}, 2);
  p.validation_n = 40;
  const auto d = make_job_data(p, {"PE", 0.5, 0.0}, 9);
  EXPECT_EQ(d.validation->size(), 40u);
  EXPECT_EQ(d.validation->quadrant_counts(), counts_for({0.5, 0.0, 40, 0}));
}

TEST(Harness, BoundarySingleRunIsBinary) {
  auto p = small_plan({"GLM:lin"}, 1);
  p.conditions = {{"ZS", 0.0, 0.0}};
  const auto g = run_boundary(p, {-7, 7, 21});
  EXPECT_EQ(g.values.size(), 441u);
  for (double v : g.values) EXPECT_TRUE(v == 0.0 || v == 1.0);
  p.runs = 4;
  const auto g4 = run_boundary(p, {-7, 7, 21});
  for (double v : g4.values) EXPECT_EQ(v * 4, std::round(v * 4));
  p.source = PoolSource{std::make_shared<AttributePool>(testing_support::make_pool(1000, 1)), {"disc"}, {"dist"}};
  EXPECT_THROW(run_boundary(p, {}), DimensionMismatch);
}

TEST(Harness, InterpolationSweep) {
  auto p = small_plan({"GLM:lin"}, 2);
  const auto out = run_interp(p, {0.1, 0.25});
  ASSERT_EQ(out.rows.size(), 1u + 7u);
  EXPECT_EQ(out.rows[0].kind, "ZS");
  EXPECT_EQ(out.rows[0].gap_to_zs.value, 0.0);
  EXPECT_EQ(out.rows[1].kind, "PE_ANCHOR");
  EXPECT_EQ(out.runs.results.size(), 8u * 2u);
  for (const auto& r : out.rows) EXPECT_NEAR(r.gap_to_zs.value, out.rows[0].accuracy.value - r.accuracy.value, 1e-12);
  std::stringstream ss;
  write_interp(ss, out.rows);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "model,kind,pi_fe,pi0,pi1,rho,mean_acc,ci95,gap_to_zs");
}

TEST(Harness, LogitRegressionAcrossModels) {
  std::vector<BiasReport> reports;
  for (double cc : {0.3, 0.45, 0.6, 0.7}) {
    BiasReport r;
    r.model = "m" + csv::number(cc);
    r.conditions["CC"] = {cc, {}, 1};
    r.conditions["ZS"] = {0.9, {}, 1};
    r.conditions["PE"] = {1.0 / (1.0 + std::exp(-(std::log(9.0) - 0.5 * logit(cc) - 0.2))), {}, 1};
    reports.push_back(r);
  }
  const auto reg = regress_evr_on_flb(logit_rows(reports));
  EXPECT_NEAR(reg.slope, 0.5, 1e-9);
  EXPECT_NEAR(reg.intercept, 0.2, 1e-9);
}

TEST(Cli, ExitCodesAndOutputs) {
  TempDir dir;
  EXPECT_EQ(cli("--help >/dev/null"), 0);
  EXPECT_EQ(cli("synth --models FOO:x"), 1);
  EXPECT_EQ(cli("synth --bogus-flag"), 1);
  EXPECT_EQ(cli("synth --models GLM:lin --runs 0"), 1);
  EXPECT_EQ(cli("report --runs " + dir / "missing.csv"), 2);

  ASSERT_EQ(cli("synth --models GLM:lin,NN:2h1d --runs 2 --n 100 --extrapolation-n 40 --out-runs " + dir / "runs.csv" +
                " --out-report " + dir / "report.csv"),
            0);
  EXPECT_EQ(slurp(dir / "report.csv").substr(0, 9), "model,cc,");
  ASSERT_EQ(cli("report --runs " + dir / "runs.csv" + " --out " + dir / "again.csv"), 0);
  EXPECT_EQ(slurp(dir / "again.csv"), slurp(dir / "report.csv"));
  EXPECT_EQ(cli("report --runs " + dir / "runs.csv" + " --logit --out " + dir / "logit.csv"), 0);
  EXPECT_NE(slurp(dir / "logit.csv").find("model,flb_logit,evr_logit"), std::string::npos);
  // Two models cannot support a regression line.
  EXPECT_EQ(cli("report --runs " + dir / "runs.csv" + " --regress-evr-on-flb"), 2);

  {
    std::ofstream os(dir / "pool.csv");
    csv::write_pool(os, testing_support::make_pool(2000, 4));
  }
  EXPECT_EQ(cli("split --pool " + dir / "pool.csv" + " --disc disc --dist dist --pi0 0.66 --pi1 0.1 --n 600 --out " +
                dir / "cond.csv" + " > " + dir / "split.txt"),
            0);
  EXPECT_NE(slurp(dir / "split.txt").find("(0,0)=102 (0,1)=198 (1,0)=270 (1,1)=30"), std::string::npos);
  {
    std::ifstream is(dir / "cond.csv");
    EXPECT_EQ(csv::read_table(is).size(), 600u);
  }
  EXPECT_EQ(cli("split --pool " + dir / "pool.csv" + " --disc nope --dist dist --pi0 0.5 --pi1 0 --n 100"), 2);
  EXPECT_EQ(cli("split --pool " + dir / "pool.csv" + " --disc disc --dist dist --pi0 0.5 --pi1 0 --n 101"), 1);
  EXPECT_EQ(cli("split --pool " + dir / "pool.csv" + " --disc disc --dist dist --pi0 0.5 --pi1 0 --n 4000"), 2);

  EXPECT_EQ(cli("probe --adapter '" + std::string(MOCK_ADAPTER_PATH) + " exit' --runs 1 --n 50"), 3);
  EXPECT_EQ(cli("probe --adapter '" + std::string(MOCK_ADAPTER_PATH) + " exit' --runs 1 --n 50 --keep-going --models GLM:lin --out-report " +
                dir / "probe.csv"),
            0);
  EXPECT_EQ(cli("probe --adapter '" + std::string(MOCK_ADAPTER_PATH) + " linear' --transport file --runs 2 --n 60 --out-report " +
                dir / "bb.csv"),
            0);
  EXPECT_NE(slurp(dir / "bb.csv").find("BB:adapter"), std::string::npos);

  EXPECT_EQ(cli("boundary --model GLM:lin --condition ZS --runs 1 --resolution 5 --matrix --out " + dir / "grid.txt"), 0);
  EXPECT_EQ(slurp(dir / "grid.txt").substr(0, slurp(dir / "grid.txt").find('\n')), "-7 7 5");
  EXPECT_EQ(cli("boundary --model GLM:lin --condition 0.7,0.2 --runs 1 --resolution 5"), 0);
  EXPECT_EQ(cli("boundary --model GLM:lin --condition 1.5,0 --runs 1"), 1);

  EXPECT_EQ(cli("interp --schedule-only --pi-fe 0.1 --out " + dir / "sched.csv"), 0);
  EXPECT_EQ(slurp(dir / "sched.csv").substr(0, 23), "kind,pi_fe,pi0,pi1,rho\n");
  EXPECT_EQ(cli("interp --schedule-only --pi-fe 0.7"), 1);
}
