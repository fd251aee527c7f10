#pragma once

// Batch experiments: every (model, condition, run) triple is an independent
// job. Condition data for run r of condition c is seeded with
//   base_seed XOR derive_key(hash_name(c), r)
// so all models see the same data for a given (c, r), while different
// conditions never share a seed. Results are returned in canonical order
// (model, condition, run) whatever the degree of parallelism.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "biasprobe/blackbox.hpp"
#include "biasprobe/csv.hpp"
#include "biasprobe/errors.hpp"
#include "biasprobe/interp.hpp"
#include "biasprobe/learners.hpp"
#include "biasprobe/metrics.hpp"
#include "biasprobe/protocol.hpp"
#include "biasprobe/random.hpp"
#include "biasprobe/synth2d.hpp"

namespace biasprobe {

struct NamedCondition {
  std::string name;
  double pi0 = 0.0;
  double pi1 = 0.0;
};

inline std::vector<NamedCondition> probe_conditions() { return {{"CC", 1.0, 0.0}, {"ZS", 0.0, 0.0}, {"PE", 0.5, 0.0}}; }

inline std::optional<double> rho_or_none(double pi0, double pi1) {
  try {
    return spurious_correlation(pi0, pi1);
  } catch (const DegenerateCorrelation&) {
    return std::nullopt;
  }
}

inline std::uint64_t job_seed(std::uint64_t base_seed, const std::string& condition, std::size_t run) {
  return base_seed ^ derive_key(hash_name(condition), run);
}

// A built-in learner or an external adapter.
struct ModelEntry {
  std::string name;
  std::optional<LearnerSpec> builtin;
  std::optional<AdapterConfig> adapter;

  static ModelEntry from_name(const std::string& n) {
    auto spec = parse_learner(n);
    return {spec.name(), spec, std::nullopt};
  }
  static ModelEntry from_adapter(const AdapterConfig& c) {
    c.validate();
    return {"BB:" + c.label, std::nullopt, c};
  }
};

inline std::unique_ptr<Classifier> fit_model(const ModelEntry& m, const QuadrantTable& table, std::uint64_t seed) {
  if (m.builtin) return train(*m.builtin, table, seed);
  if (m.adapter) return std::make_unique<AdapterModel>(adapter_train(*m.adapter, table, seed));
  throw InvalidSpec("model entry '" + m.name + "' has neither a learner nor an adapter");
}

struct SynthSource {
  Synth2DConfig config;
};

struct PoolSource {
  std::shared_ptr<const AttributePool> pool;
  std::vector<std::string> disc;
  std::vector<std::string> dist;
};

struct ExperimentPlan {
  std::vector<ModelEntry> models;
  std::vector<NamedCondition> conditions = probe_conditions();
  std::size_t runs = 20;
  std::uint64_t base_seed = 0;
  std::size_t n_total = 600;
  std::size_t extrapolation_n = 200;
  std::size_t validation_n = 0;  // 0: no validation accuracy recorded
  std::optional<double> validation_threshold;
  std::variant<SynthSource, PoolSource> source = SynthSource{};
  std::size_t jobs = 1;
  bool keep_going = false;

  void validate() const {
    if (models.empty()) throw UsageError("no models given");
    if (conditions.empty()) throw UsageError("no conditions given");
    if (runs < 1) throw UsageError("runs per condition must be >= 1");
    if (n_total < 2) throw UsageError("training size must be >= 2");
    if (extrapolation_n < 1) throw UsageError("extrapolation size must be >= 1");
    if (jobs < 1) throw UsageError("--jobs must be >= 1");
    if (validation_n % 2 != 0) throw UsageError("validation size must be even");
    if (validation_threshold && !(*validation_threshold >= 0.0 && *validation_threshold <= 1.0)) {
      throw UsageError("validation threshold must lie in [0, 1]");
    }
    for (std::size_t i = 0; i < conditions.size(); ++i) {
      ConditionSpec{conditions[i].pi0, conditions[i].pi1, n_total, 0}.validate();
      for (std::size_t j = 0; j < i; ++j) {
        if (conditions[i].name == conditions[j].name) {
          throw UsageError("duplicate condition name '" + conditions[i].name + "'");
        }
      }
    }
    for (std::size_t i = 0; i < models.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (models[i].name == models[j].name) throw UsageError("duplicate model '" + models[i].name + "'");
      }
    }
    if (const auto* p = std::get_if<PoolSource>(&source); p && !p->pool) throw UsageError("pool source has no pool");
  }
};

struct JobError {
  std::string model;
  std::string condition;
  std::size_t run = 0;
  std::string message;
};

struct RunOutput {
  std::vector<ProbeResult> results;  // canonical order, failed jobs omitted
  std::vector<JobError> failures;
};

// Data for one (condition, run): training table, extrapolation set and an
// optional validation set drawn from the training distribution.
struct JobData {
  QuadrantTable train;
  QuadrantTable extrapolation;
  std::optional<QuadrantTable> validation;
};

inline JobData make_job_data(const ExperimentPlan& plan, const NamedCondition& cond, std::uint64_t seed) {
  const ConditionSpec spec{cond.pi0, cond.pi1, plan.n_total, seed};
  const std::uint64_t extrap_seed = derive_key(seed, hash_name("extrapolation"));
  const std::uint64_t val_seed = derive_key(seed, hash_name("validation"));
  if (const auto* s = std::get_if<SynthSource>(&plan.source)) {
    JobData d{synth_condition(spec, s->config), synth_extrapolation(plan.extrapolation_n, extrap_seed, s->config),
              std::nullopt};
    if (plan.validation_n > 0) d.validation = synth_condition({cond.pi0, cond.pi1, plan.validation_n, val_seed}, s->config);
    return d;
  }
  const auto& p = std::get<PoolSource>(plan.source);
  std::vector<bool> used(p.pool->size(), false);
  const auto train_idx = select_condition_rows(*p.pool, p.disc, p.dist, spec);
  for (auto i : train_idx) used[i] = true;
  JobData d{table_from_rows(*p.pool, p.disc, p.dist, train_idx), QuadrantTable(p.pool->dim()), std::nullopt};
  if (plan.validation_n > 0) {
    const auto idx =
        select_condition_rows(*p.pool, p.disc, p.dist, {cond.pi0, cond.pi1, plan.validation_n, val_seed}, &used);
    for (auto i : idx) used[i] = true;
    d.validation = table_from_rows(*p.pool, p.disc, p.dist, idx);
  }
  QuadrantCounts ex_need;
  ex_need.counts[kExtrapolationQuadrant.index()] = plan.extrapolation_n;
  const auto ex_idx = select_rows(*p.pool, p.disc, p.dist, ex_need, extrap_seed, &used);
  d.extrapolation = table_from_rows(*p.pool, p.disc, p.dist, ex_idx);
  return d;
}

namespace detail {

// Runs f(i) for i in [0, n) on up to `workers` threads.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  }
}

}  // namespace detail

inline RunOutput run_jobs(const ExperimentPlan& plan, std::ostream* log = nullptr) {
  plan.validate();
  const std::size_t nc = plan.conditions.size();
  const std::size_t per_model = nc * plan.runs;
  const std::size_t total = plan.models.size() * per_model;
  std::vector<std::optional<ProbeResult>> slots(total);
  std::vector<std::optional<std::string>> errors(total);
  std::atomic<bool> abort{false};
  std::mutex log_mutex;

  detail::parallel_for(total, plan.jobs, [&](std::size_t job) {
    if (abort) return;
    const auto& model = plan.models[job / per_model];
    const auto& cond = plan.conditions[(job % per_model) / plan.runs];
    const std::size_t run = job % plan.runs;
    const std::uint64_t seed = job_seed(plan.base_seed, cond.name, run);
    try {
      const JobData data = make_job_data(plan, cond, seed);
      const auto fitted = fit_model(model, data.train, derive_key(seed, hash_name(model.name)));
      ProbeResult r;
      r.model = model.name;
      r.condition = cond.name;
      r.pi0 = cond.pi0;
      r.pi1 = cond.pi1;
      r.rho = rho_or_none(cond.pi0, cond.pi1);
      r.run = run;
      r.seed = seed;
      r.extrap_accuracy = accuracy(fitted->predict(data.extrapolation.features()), data.extrapolation.labels());
      if (data.validation) {
        r.validation_accuracy = accuracy(fitted->predict(data.validation->features()), data.validation->labels());
      }
      slots[job] = std::move(r);
    } catch (const std::exception& e) {
      errors[job] = e.what();
      if (!plan.keep_going) abort = true;
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << "job failed: " << model.name << " / " << cond.name << " / run " << run << ": " << e.what() << '\n';
      }
    }
  });

  RunOutput out;
  for (std::size_t job = 0; job < total; ++job) {
    if (slots[job]) out.results.push_back(std::move(*slots[job]));
    if (errors[job]) {
      out.failures.push_back({plan.models[job / per_model].name, plan.conditions[(job % per_model) / plan.runs].name,
                              job % plan.runs, *errors[job]});
    }
  }
  if (!plan.keep_going && !out.failures.empty()) {
    const auto& f = out.failures.front();
    throw JobFailure(f.model + " / " + f.condition + " / run " + std::to_string(f.run) + ": " + f.message);
  }
  return out;
}

struct SynthOutput {
  RunOutput runs;
  std::vector<BiasReport> reports;
};

inline SynthOutput run_synth(const ExperimentPlan& plan, std::ostream* log = nullptr) {
  SynthOutput out{run_jobs(plan, log), {}};
  out.reports = aggregate(out.runs.results, plan.validation_threshold);
  return out;
}

// --- interpolation sweeps -------------------------------------------------

struct InterpRow {
  std::string model;
  std::string kind;  // ZS baseline or a schedule kind
  std::optional<double> pi_fe;
  double pi0 = 0.0;
  double pi1 = 0.0;
  std::optional<double> rho;
  Estimate accuracy;
  Estimate gap_to_zs;  // mean(ZS) - mean(this point)
};

struct InterpOutput {
  RunOutput runs;
  std::vector<InterpRow> rows;
};

inline std::string schedule_condition_name(const InterpolationPoint& p) {
  if (p.kind == InterpKind::PeAnchor) return std::string(to_string(p.kind));
  return std::string(to_string(p.kind)) + "@" + csv::number(p.pi_fe);
}

// `plan.conditions` is replaced by the ZS baseline plus the schedule.
inline InterpOutput run_interp(ExperimentPlan plan, const std::vector<double>& pi_fe_values,
                               std::ostream* log = nullptr) {
  if (plan.models.empty()) throw UsageError("no models given");
  if (pi_fe_values.empty()) throw UsageError("no pi_fe values given");
  const auto points = schedule(pi_fe_values);
  plan.conditions = {{"ZS", 0.0, 0.0}};
  for (const auto& p : points) plan.conditions.push_back({schedule_condition_name(p), p.pi0, p.pi1});

  InterpOutput out{run_jobs(plan, log), {}};
  for (const auto& model : plan.models) {
    auto accs = [&](const std::string& cond) {
      std::vector<double> v;
      for (const auto& r : out.runs.results) {
        if (r.model == model.name && r.condition == cond) v.push_back(r.extrap_accuracy);
      }
      return v;
    };
    const auto zs = accs("ZS");
    if (zs.empty()) continue;
    out.rows.push_back({model.name, "ZS", std::nullopt, 0.0, 0.0, std::nullopt, mean_ci(zs), condition_gap(zs, zs)});
    for (const auto& p : points) {
      const auto a = accs(schedule_condition_name(p));
      if (a.empty()) continue;
      std::optional<double> pi_fe;
      if (p.kind != InterpKind::PeAnchor) pi_fe = p.pi_fe;
      out.rows.push_back({model.name, std::string(to_string(p.kind)), pi_fe, p.pi0, p.pi1, p.rho, mean_ci(a),
                          condition_gap(zs, a)});
    }
  }
  return out;
}

inline void write_interp(std::ostream& os, const std::vector<InterpRow>& rows) {
  csv::write_row(os, {"model", "kind", "pi_fe", "pi0", "pi1", "rho", "mean_acc", "ci95", "gap_to_zs"});
  for (const auto& r : rows) {
    csv::write_row(os, {r.model, r.kind, csv::optional_number(r.pi_fe), csv::number(r.pi0), csv::number(r.pi1),
                        csv::optional_number(r.rho), csv::number(r.accuracy.value),
                        csv::optional_number(r.accuracy.ci95), csv::number(r.gap_to_zs.value)});
  }
}

// --- decision boundaries --------------------------------------------------

struct GridParams {
  double x_min = -7.0;
  double x_max = 7.0;
  std::size_t resolution = 101;
};

inline PredictionGrid run_boundary(const ExperimentPlan& plan, const GridParams& grid) {
  plan.validate();
  if (plan.models.size() != 1 || plan.conditions.size() != 1) {
    throw UsageError("boundary needs exactly one model and one condition");
  }
  if (!std::holds_alternative<SynthSource>(plan.source)) {
    throw DimensionMismatch("decision boundaries are only defined for the 2-D synthetic setting");
  }
  const auto& model = plan.models.front();
  const auto& cond = plan.conditions.front();
  std::vector<std::unique_ptr<Classifier>> fitted(plan.runs);
  std::vector<std::optional<std::string>> errors(plan.runs);
  detail::parallel_for(plan.runs, plan.jobs, [&](std::size_t run) {
    const std::uint64_t seed = job_seed(plan.base_seed, cond.name, run);
    try {
      const auto data = make_job_data(plan, cond, seed);
      fitted[run] = fit_model(model, data.train, derive_key(seed, hash_name(model.name)));
    } catch (const std::exception& e) {
      errors[run] = e.what();
    }
  });
  std::vector<const Classifier*> ensemble;
  for (std::size_t r = 0; r < plan.runs; ++r) {
    if (errors[r]) {
      if (!plan.keep_going) throw JobFailure(model.name + " / " + cond.name + " / run " + std::to_string(r) + ": " + *errors[r]);
      continue;
    }
    ensemble.push_back(fitted[r].get());
  }
  return prediction_grid(std::span<const Classifier* const>(ensemble), grid.x_min, grid.x_max, grid.resolution);
}

// --- re-aggregation -------------------------------------------------------

struct LogitRow {
  std::string model;
  std::optional<double> flb;
  std::optional<double> evr;
};

inline std::vector<LogitRow> logit_rows(const std::vector<BiasReport>& reports) {
  std::vector<LogitRow> rows;
  for (const auto& r : reports) {
    const auto s = logit_scores(r);
    rows.push_back({r.model, s.flb, s.evr});
  }
  return rows;
}

inline void write_logit_rows(std::ostream& os, const std::vector<LogitRow>& rows) {
  csv::write_row(os, {"model", "flb_logit", "evr_logit"});
  for (const auto& r : rows) csv::write_row(os, {r.model, csv::optional_number(r.flb), csv::optional_number(r.evr)});
}

inline Regression regress_evr_on_flb(const std::vector<LogitRow>& rows) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) {
    if (r.flb && r.evr) pts.emplace_back(*r.flb, *r.evr);
  }
  return evr_flb_regression(pts);
}

}  // namespace biasprobe
