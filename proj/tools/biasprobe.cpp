// biasprobe command-line driver.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 job failure.

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biasprobe/blackbox.hpp"
#include "biasprobe/csv.hpp"
#include "biasprobe/harness.hpp"

namespace bp = biasprobe;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kJob = 3 };

const std::vector<std::string> kDefaultModels{"GLM:lin", "GLM:Φ",    "GLM:l1",   "GLM:l2",   "GP:fit",
                                              "GP:0.5",  "GP:8.0", "NN:2h1d", "NN:16h1d", "NN:4h4d"};

struct Common {
  std::uint64_t seed = 0;
  std::size_t runs = 20;
  std::size_t n_total = 600;
  std::size_t extrapolation_n = 200;
  std::size_t jobs = 1;
  bool keep_going = false;
  double alpha_scale = 3.0;
  double noise_sd = 1.0;
};

void add_common(CLI::App* app, Common& c, bool with_runs = true) {
  app->add_option("--seed", c.seed, "Base seed; all randomness derives from it");
  if (with_runs) app->add_option("--runs", c.runs, "Runs per condition")->check(CLI::PositiveNumber);
  app->add_option("--n", c.n_total, "Training rows per condition");
  app->add_option("--extrapolation-n", c.extrapolation_n, "Evaluation rows per run");
  app->add_option("--jobs", c.jobs, "Parallel jobs")->check(CLI::PositiveNumber);
  app->add_flag("--keep-going", c.keep_going, "Skip failed jobs instead of aborting");
  app->add_option("--alpha-scale", c.alpha_scale, "Cluster displacement of the 2-D setting");
  app->add_option("--noise-sd", c.noise_sd, "Per-axis noise standard deviation of the 2-D setting");
}

bp::ExperimentPlan plan_from(const Common& c) {
  bp::ExperimentPlan p;
  p.runs = c.runs;
  p.base_seed = c.seed;
  p.n_total = c.n_total;
  p.extrapolation_n = c.extrapolation_n;
  p.jobs = c.jobs;
  p.keep_going = c.keep_going;
  bp::Synth2DConfig cfg{c.alpha_scale, c.noise_sd};
  cfg.validate();
  p.source = bp::SynthSource{cfg};
  return p;
}

std::vector<bp::ModelEntry> parse_models(const std::vector<std::string>& names) {
  std::vector<bp::ModelEntry> out;
  for (const auto& n : names) out.push_back(bp::ModelEntry::from_name(n));
  return out;
}

// Writes to `path`, or to stdout when the path is empty or "-".
template <class F>
void with_output(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream os(path);
  if (!os) throw bp::ParseError("cannot open '" + path + "' for writing");
  write(os);
  if (!os) throw bp::ParseError("error writing '" + path + "'");
}

std::ifstream open_input(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw bp::ParseError("cannot open '" + path + "'");
  return is;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

bp::NamedCondition parse_condition(const std::string& s) {
  for (const auto& c : bp::probe_conditions()) {
    if (c.name == s) return c;
  }
  const auto parts = split_list(s);
  if (parts.size() == 2) {
    auto a = bp::detail::parse_double(parts[0]);
    auto b = bp::detail::parse_double(parts[1]);
    if (a && b) return {"P" + bp::csv::number(*a) + "_" + bp::csv::number(*b), *a, *b};
  }
  throw bp::UsageError("condition must be CC, ZS, PE or 'pi0,pi1', got '" + s + "'");
}

void print_failures(const bp::RunOutput& r) {
  for (const auto& f : r.failures) {
    std::cerr << "skipped: " << f.model << " / " << f.condition << " / run " << f.run << ": " << f.message << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure feature-level bias and exemplar-vs-rule propensity of classifiers"};
  app.require_subcommand(1);

  // synth
  Common synth_c;
  std::vector<std::string> synth_models = kDefaultModels;
  std::string synth_runs_out, synth_report_out;
  auto* synth = app.add_subcommand("synth", "Run the 2-D experiment suite over CC/ZS/PE");
  add_common(synth, synth_c);
  synth->add_option("--models", synth_models, "Model names")->delimiter(',');
  synth->add_option("--out-runs", synth_runs_out, "Per-run CSV path");
  synth->add_option("--out-report", synth_report_out, "Aggregate CSV path (default stdout)");

  // split
  std::string pool_path, split_out, disc_arg, dist_arg;
  double split_pi0 = 0.0, split_pi1 = 0.0;
  std::size_t split_n = 0;
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "Assemble one condition from an attribute pool");
  split->add_option("--pool", pool_path, "Attribute pool CSV")->required();
  split->add_option("--disc", disc_arg, "Discriminant attribute(s), comma separated")->required();
  split->add_option("--dist", dist_arg, "Distractor attribute(s), comma separated")->required();
  split->add_option("--pi0", split_pi0, "p(z_dist=1 | z_disc=0)")->required();
  split->add_option("--pi1", split_pi1, "p(z_dist=1 | z_disc=1)")->required();
  split->add_option("--n", split_n, "Rows in the condition")->required();
  split->add_option("--seed", split_seed, "Sampling seed");
  split->add_option("--out", split_out, "Output table CSV (default stdout)");

  // interp
  Common interp_c;
  std::vector<std::string> interp_models{"NN:16h1d"};
  std::vector<double> pi_fe{0.01, 0.1, 0.25, 0.5};
  std::string interp_out, interp_runs_out, schedule_out;
  bool schedule_only = false;
  auto* interp = app.add_subcommand("interp", "Sweep interpolations away from partial exposure");
  add_common(interp, interp_c);
  interp->add_option("--models", interp_models, "Model names")->delimiter(',');
  interp->add_option("--pi-fe", pi_fe, "Interpolation parameters in (0, 0.5]")->delimiter(',');
  interp->add_option("--out", interp_out, "Sweep CSV path (default stdout)");
  interp->add_option("--out-runs", interp_runs_out, "Per-run CSV path");
  interp->add_option("--schedule-out", schedule_out, "Also write the schedule CSV here");
  interp->add_flag("--schedule-only", schedule_only, "Only write the schedule, train nothing");

  // boundary
  Common boundary_c;
  std::string boundary_model = "GLM:lin", boundary_condition = "ZS", boundary_out;
  bp::GridParams grid;
  bool matrix = false;
  auto* boundary = app.add_subcommand("boundary", "Average decision boundary on a grid");
  add_common(boundary, boundary_c);
  boundary->add_option("--model", boundary_model, "Model name");
  boundary->add_option("--condition", boundary_condition, "CC, ZS, PE or 'pi0,pi1'");
  boundary->add_option("--x-min", grid.x_min, "Grid lower bound");
  boundary->add_option("--x-max", grid.x_max, "Grid upper bound");
  boundary->add_option("--resolution", grid.resolution, "Grid points per axis");
  boundary->add_flag("--matrix", matrix, "Write the dense matrix form");
  boundary->add_option("--out", boundary_out, "Grid CSV path (default stdout)");

  // probe
  Common probe_c;
  std::string adapter_cmd, adapter_label = "adapter", transport = "inline";
  double train_timeout = 600.0, predict_timeout = 600.0;
  std::vector<std::string> probe_models;
  std::string probe_pool, probe_disc, probe_dist, probe_runs_out, probe_report_out;
  std::size_t validation_n = 0;
  std::optional<double> validation_threshold;
  auto* probe = app.add_subcommand("probe", "Probe an external adapter (and optional built-ins)");
  add_common(probe, probe_c);
  probe->add_option("--adapter", adapter_cmd, "Adapter command line (whitespace separated)");
  probe->add_option("--label", adapter_label, "Adapter name used in reports (BB:<label>)");
  probe->add_option("--transport", transport, "inline or file")->check(CLI::IsMember({"inline", "file"}));
  probe->add_option("--train-timeout", train_timeout, "Seconds to wait for 'trained'");
  probe->add_option("--predict-timeout", predict_timeout, "Seconds to wait for 'predictions'");
  probe->add_option("--models", probe_models, "Built-in models to probe alongside")->delimiter(',');
  probe->add_option("--pool", probe_pool, "Attribute pool CSV (default: 2-D synthetic data)");
  probe->add_option("--disc", probe_disc, "Discriminant attribute(s) for --pool");
  probe->add_option("--dist", probe_dist, "Distractor attribute(s) for --pool");
  probe->add_option("--validation-n", validation_n, "Validation rows per run (0: none)");
  probe->add_option("--validation-threshold", validation_threshold, "Drop runs below this validation accuracy");
  probe->add_option("--out-runs", probe_runs_out, "Per-run CSV path");
  probe->add_option("--out-report", probe_report_out, "Aggregate CSV path (default stdout)");

  // report
  std::string report_in, report_out;
  std::optional<double> report_threshold;
  bool report_logit = false, report_regress = false;
  auto* report = app.add_subcommand("report", "Re-aggregate a per-run CSV");
  report->add_option("--runs", report_in, "Per-run CSV")->required();
  report->add_option("--validation-threshold", report_threshold, "Drop runs below this validation accuracy");
  report->add_flag("--logit", report_logit, "Report logit-scale FLB and EVR");
  report->add_flag("--regress-evr-on-flb", report_regress, "Regress logit EVR on logit FLB across models");
  report->add_option("--out", report_out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) {
      auto plan = plan_from(synth_c);
      plan.models = parse_models(synth_models);
      const auto out = bp::run_synth(plan, &std::cerr);
      print_failures(out.runs);
      if (!synth_runs_out.empty()) with_output(synth_runs_out, [&](std::ostream& os) { bp::csv::write_runs(os, out.runs.results); });
      with_output(synth_report_out, [&](std::ostream& os) { bp::csv::write_reports(os, out.reports); });
    } else if (*split) {
      auto is = open_input(pool_path);
      const auto pool = bp::csv::read_pool(is);
      const bp::ConditionSpec spec{split_pi0, split_pi1, split_n, split_seed};
      spec.validate();
      const auto table = bp::assemble_condition(pool, split_list(disc_arg), split_list(dist_arg), spec);
      with_output(split_out, [&](std::ostream& os) { bp::csv::write_table(os, table); });
      std::ostream& info = split_out.empty() || split_out == "-" ? std::cerr : std::cout;
      const auto c = table.quadrant_counts();
      info << "counts (z_disc,z_dist): (0,0)=" << c.counts[0] << " (0,1)=" << c.counts[1] << " (1,0)=" << c.counts[2]
           << " (1,1)=" << c.counts[3] << '\n';
      const auto rho = bp::rho_or_none(split_pi0, split_pi1);
      info << "rho: " << (rho ? bp::csv::number(*rho) : std::string("undefined")) << '\n';
    } else if (*interp) {
      if (schedule_only || !schedule_out.empty()) {
        const auto points = bp::schedule(pi_fe);
        with_output(schedule_only ? (schedule_out.empty() ? interp_out : schedule_out) : schedule_out,
                    [&](std::ostream& os) { bp::csv::write_schedule(os, points); });
        if (schedule_only) return kOk;
      }
      auto plan = plan_from(interp_c);
      plan.models = parse_models(interp_models);
      const auto out = bp::run_interp(plan, pi_fe, &std::cerr);
      print_failures(out.runs);
      if (!interp_runs_out.empty()) with_output(interp_runs_out, [&](std::ostream& os) { bp::csv::write_runs(os, out.runs.results); });
      with_output(interp_out, [&](std::ostream& os) { bp::write_interp(os, out.rows); });
    } else if (*boundary) {
      auto plan = plan_from(boundary_c);
      plan.models = parse_models({boundary_model});
      plan.conditions = {parse_condition(boundary_condition)};
      const auto g = bp::run_boundary(plan, grid);
      with_output(boundary_out, [&](std::ostream& os) {
        if (matrix) {
          bp::csv::write_grid_matrix(os, g);
        } else {
          bp::csv::write_grid(os, g);
        }
      });
    } else if (*probe) {
      auto plan = plan_from(probe_c);
      plan.models = parse_models(probe_models);
      if (!adapter_cmd.empty()) {
        bp::AdapterConfig cfg;
        cfg.command = split_words(adapter_cmd);
        cfg.label = adapter_label;
        cfg.train_timeout_seconds = train_timeout;
        cfg.predict_timeout_seconds = predict_timeout;
        cfg.transport = transport == "file" ? bp::Transport::FileReference : bp::Transport::Inline;
        try {
          plan.models.push_back(bp::ModelEntry::from_adapter(cfg));
        } catch (const bp::InvalidSpec& e) {
          throw bp::UsageError(e.what());
        }
      }
      if (!probe_pool.empty()) {
        if (probe_disc.empty() || probe_dist.empty()) throw bp::UsageError("--pool needs --disc and --dist");
        auto is = open_input(probe_pool);
        plan.source = bp::PoolSource{std::make_shared<bp::AttributePool>(bp::csv::read_pool(is)),
                                     split_list(probe_disc), split_list(probe_dist)};
      }
      plan.validation_n = validation_n;
      plan.validation_threshold = validation_threshold;
      const auto out = bp::run_synth(plan, &std::cerr);
      print_failures(out.runs);
      if (!probe_runs_out.empty()) with_output(probe_runs_out, [&](std::ostream& os) { bp::csv::write_runs(os, out.runs.results); });
      with_output(probe_report_out, [&](std::ostream& os) { bp::csv::write_reports(os, out.reports); });
    } else if (*report) {
      auto is = open_input(report_in);
      const auto runs = bp::csv::read_runs(is);
      if (report_threshold && !(*report_threshold >= 0.0 && *report_threshold <= 1.0)) {
        throw bp::UsageError("validation threshold must lie in [0, 1]");
      }
      const auto reports = bp::aggregate(runs, report_threshold);
      with_output(report_out, [&](std::ostream& os) {
        bp::csv::write_reports(os, reports);
        if (report_logit || report_regress) {
          const auto rows = bp::logit_rows(reports);
          if (report_logit) {
            os << '\n';
            bp::write_logit_rows(os, rows);
          }
          if (report_regress) {
            const auto reg = bp::regress_evr_on_flb(rows);
            os << '\n';
            bp::csv::write_row(os, {"slope", "intercept", "intercept-ci95"});
            bp::csv::write_row(os, {bp::csv::number(reg.slope), bp::csv::number(reg.intercept),
                                    bp::csv::number(reg.intercept_ci95)});
          }
        }
      });
      for (const auto& r : reports) {
        if (r.gated_runs_dropped) std::cerr << r.model << ": " << r.gated_runs_dropped << " runs dropped by gating\n";
      }
    }
  } catch (const bp::JobFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kJob;
  } catch (const bp::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const bp::InvalidSpec& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const bp::OutOfRange& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const bp::Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
