#include "fairstage/eval.hpp"

#include "fairstage/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace fairstage {

namespace {

constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::cipw_lb_mono, "cipw-lb-mono"},
    {Method::cipw_lb_union, "cipw-lb-union"},
    {Method::ipw, "ipw"},
    {Method::uncal_individual, "uncal-individual"},
    {Method::uncal_marginal, "uncal-marginal"},
    {Method::platt_individual, "platt-individual"},
    {Method::platt_marginal, "platt-marginal"},
    {Method::platt_pg_individual, "platt-pg-individual"},
    {Method::platt_pg_marginal, "platt-pg-marginal"},
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

std::string_view method_name(Method method) noexcept {
    for (const auto& [m, name] : kMethodNames) {
        if (m == method) return name;
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (const auto& [m, n] : kMethodNames) {
        if (n == name) return m;
    }
    throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods = [] {
        std::vector<Method> out;
        for (const auto& entry : kMethodNames) out.push_back(entry.first);
        return out;
    }();
    return methods;
}

std::vector<GroupMetrics> evaluate_policy(const CandidatePolicy& policy, const RelevanceModel& model,
                                          const Dataset& test) {
    std::vector<GroupMetrics> out(test.groups.size());
    if (test.queries.empty()) return out;
    for (const auto& query : test.queries) {
        const auto selected = apply_policy(policy, query, model);
        for (std::size_t j = 0; j < query.items.size(); ++j) {
            if (!selected[j]) continue;
            for (std::size_t g = 0; g < out.size(); ++g) {
                if (!query.items[j].in_group(g)) continue;
                out[g].selected += 1.0;
                out[g].relevant += query.items[j].relevance;
            }
        }
    }
    const double n = static_cast<double>(test.queries.size());
    for (auto& m : out) {
        m.selected /= n;
        m.relevant /= n;
    }
    return out;
}

int eval_er(const CandidatePolicy& policy, const RelevanceModel& model, const Dataset& test, std::size_t group,
            double target) {
    return evaluate_policy(policy, model, test).at(group).relevant >= target ? 1 : 0;
}

double eval_css(const CandidatePolicy& policy, const RelevanceModel& model, const Dataset& test,
                std::size_t group) {
    return evaluate_policy(policy, model, test).at(group).selected;
}

std::vector<std::size_t> PipelineConfig::resolved_t_max(std::size_t groups) const {
    if (t_max.empty()) return std::vector<std::size_t>(groups, default_t_max);
    if (t_max.size() != groups) throw std::invalid_argument("t_max needs one value per group");
    return t_max;
}

ReplicationResult run_pipeline(const Dataset& dataset, const PipelineConfig& config, std::uint64_t seed,
                               std::span<const double> targets) {
    const std::size_t groups = dataset.groups.size();
    if (targets.size() != groups) throw std::invalid_argument("one target per group required");
    const auto t_max = config.resolved_t_max(groups);

    ReplicationResult result;
    result.seed = seed;
    result.targets.assign(targets.begin(), targets.end());

    SplitSpec split_spec = config.split;
    split_spec.seed = seed;
    const auto parts = split(dataset, split_spec);

    RelevanceModel model = train_logistic(parts.train, config.train);
    if (config.epsilon > 0.0) {
        CorruptionSpec spec;
        spec.epsilon = config.epsilon;
        spec.beta_a = config.beta_a;
        spec.beta_b = config.beta_b;
        spec.target_group = dataset.group_index(config.corrupt_group);
        spec.seed = seed;
        model = corrupt_scores(model, spec);
    }
    const auto log = simulate_log(parts.sim, model, t_max, config.m, seed);

    // Fixed-threshold policies are scored from per-threshold test tables.
    const auto oracle = oracle_table(parts.test, model, t_max);
    std::vector<std::vector<double>> css_table(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        css_table[g].assign(t_max[g] + 1, 0.0);
        for (const auto& query : parts.test.queries) {
            std::size_t size = 0;
            for (const auto& item : query.items) size += item.in_group(g);
            for (std::size_t t = 0; t <= t_max[g]; ++t) css_table[g][t] += static_cast<double>(std::min(t, size));
        }
        for (auto& v : css_table[g]) v /= static_cast<double>(std::max<std::size_t>(1, parts.test.queries.size()));
        if (oracle.at(g, t_max[g]) < targets[g]) {
            result.warnings.push_back("seed " + std::to_string(seed) + ": target for group '" + dataset.groups[g] +
                                      "' exceeds U(t_max) on the test split; the guarantee is vacuous");
        }
    }

    std::optional<BoundTable> cipw;
    std::optional<RelevanceModel> platt;
    std::optional<RelevanceModel> platt_pg;
    auto get_platt = [&](bool per_group) -> const RelevanceModel& {
        auto& slot = per_group ? platt_pg : platt;
        if (!slot) slot = platt_calibrate(model, log, parts.sim, per_group, &result.warnings);
        return *slot;
    };

    for (Method method : config.methods) {
        RunResult run;
        run.method = method;
        run.er.assign(groups, 0);
        run.css.assign(groups, 0.0);
        run.t_hat.assign(groups, std::nullopt);
        run.gap.assign(groups, std::nullopt);
        try {
            auto fixed = [&](std::size_t g, std::size_t t) {
                run.t_hat[g] = t;
                run.er[g] = oracle.at(g, t) >= targets[g] ? 1 : 0;
                run.css[g] = css_table[g][t];
            };
            auto individual = [&](const RelevanceModel* scorer) {
                IndividualTargets policy{result.targets, t_max, nullptr};
                if (scorer) policy.score_model = std::make_shared<const RelevanceModel>(*scorer);
                const auto metrics = evaluate_policy(policy, model, parts.test);
                for (std::size_t g = 0; g < groups; ++g) {
                    run.er[g] = metrics[g].relevant >= targets[g] ? 1 : 0;
                    run.css[g] = metrics[g].selected;
                }
            };
            switch (method) {
                case Method::cipw_lb_mono:
                case Method::cipw_lb_union: {
                    if (!cipw) cipw = BoundTable::build(log, model, config.lambda);
                    SelectionConfig sc{result.targets, t_max, config.alpha,
                                       method == Method::cipw_lb_mono ? Rule::monotone : Rule::union_bound,
                                       config.lambda};
                    const auto sel = select_thresholds(*cipw, sc);
                    for (std::size_t g = 0; g < groups; ++g) {
                        fixed(g, sel.per_group[g].threshold);
                        run.gap[g] = sel.per_group[g].gap.gap;
                    }
                    break;
                }
                case Method::ipw: {
                    for (std::size_t g = 0; g < groups; ++g) fixed(g, baseline_ipw(log, g, targets[g], t_max[g]));
                    break;
                }
                case Method::uncal_marginal:
                case Method::platt_marginal:
                case Method::platt_pg_marginal: {
                    const RelevanceModel* scorer = nullptr;
                    if (method != Method::uncal_marginal) scorer = &get_platt(method == Method::platt_pg_marginal);
                    for (std::size_t g = 0; g < groups; ++g) {
                        fixed(g, baseline_marginal(log, parts.sim, model, g, targets[g], t_max[g], scorer));
                    }
                    break;
                }
                case Method::uncal_individual:
                    individual(nullptr);
                    break;
                case Method::platt_individual:
                    individual(&get_platt(false));
                    break;
                case Method::platt_pg_individual:
                    individual(&get_platt(true));
                    break;
            }
        } catch (const std::exception& e) {
            run.error = e.what();
        }
        result.runs.push_back(std::move(run));
    }
    return result;
}

std::string_view sweep_name(SweepParam param) noexcept {
    switch (param) {
        case SweepParam::m: return "m";
        case SweepParam::epsilon: return "epsilon";
        case SweepParam::lambda: return "lambda";
        case SweepParam::t_max: return "t_max";
    }
    return "unknown";
}

SweepParam parse_sweep(std::string_view name) {
    if (name == "m") return SweepParam::m;
    if (name == "epsilon" || name == "eps") return SweepParam::epsilon;
    if (name == "lambda") return SweepParam::lambda;
    if (name == "t_max" || name == "tmax") return SweepParam::t_max;
    throw std::invalid_argument("unknown sweep parameter '" + std::string(name) + "'");
}

void ExperimentSpec::validate() const {
    if (replications < 1) throw std::invalid_argument("replications must be >= 1");
    if (values.empty()) throw std::invalid_argument("sweep needs at least one value");
}

const AggregateRow& ExperimentResult::find(double sweep_value, std::string_view method,
                                           std::string_view group) const {
    for (const auto& row : aggregate) {
        if (row.sweep_value == sweep_value && row.method == method && row.group == group) return row;
    }
    throw std::out_of_range("no aggregate row for " + std::string(method) + "/" + std::string(group));
}

std::pair<double, double> summarize_er(std::span<const int> er) {
    if (er.empty()) return {0.0, 0.0};
    double ones = 0;
    for (int v : er) ones += v;
    const double n = static_cast<double>(er.size());
    const double p = ones / n;
    return {100.0 * p, 100.0 * std::sqrt(p * (1.0 - p) / n)};
}

std::pair<double, double> summarize_css(std::span<const double> css) {
    if (css.empty()) return {0.0, 0.0};
    double mean = 0;
    for (double v : css) mean += v;
    mean /= static_cast<double>(css.size());
    if (css.size() < 2) return {mean, 0.0};
    double ss = 0;
    for (double v : css) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(css.size() - 1))};
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < threads; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (failure) std::rethrow_exception(failure);
}

ExperimentResult run_replications(const Dataset& dataset, const ExperimentSpec& spec) {
    spec.validate();
    const std::size_t groups = dataset.groups.size();

    ExperimentResult result;
    if (!spec.base.targets.empty()) {
        if (spec.base.targets.size() != groups) throw std::invalid_argument("one target per group required");
        result.targets = spec.base.targets;
    } else {
        std::vector<double> ar;
        for (std::size_t g = 0; g < groups; ++g) ar.push_back(average_relevant(dataset, g));
        result.targets = equal_opportunity_targets(ar, spec.base.target_total);
    }

    auto config_for = [&](double value) {
        PipelineConfig config = spec.base;
        switch (spec.param) {
            case SweepParam::m: config.m = static_cast<std::size_t>(std::llround(value)); break;
            case SweepParam::epsilon: config.epsilon = value; break;
            case SweepParam::lambda: config.lambda = value; break;
            case SweepParam::t_max:
                config.default_t_max = static_cast<std::size_t>(std::llround(value));
                config.t_max.clear();
                break;
        }
        return config;
    };

    const std::size_t reps = spec.replications;
    std::vector<ReplicationResult> outcomes(spec.values.size() * reps);
    std::vector<std::string> failures(outcomes.size());
    parallel_for(outcomes.size(), spec.threads, [&](std::size_t k) {
        const auto config = config_for(spec.values[k / reps]);
        const std::uint64_t seed = spec.base_seed + k % reps;
        try {
            outcomes[k] = run_pipeline(dataset, config, seed, result.targets);
        } catch (const std::exception& e) {
            failures[k] = e.what();
            outcomes[k].seed = seed;
        }
    });

    const std::string param(sweep_name(spec.param));
    for (std::size_t v = 0; v < spec.values.size(); ++v) {
        for (Method method : spec.base.methods) {
            std::vector<std::vector<int>> er(groups);
            std::vector<std::vector<double>> css(groups);
            for (std::size_t r = 0; r < reps; ++r) {
                const auto& outcome = outcomes[v * reps + r];
                const auto& failure = failures[v * reps + r];
                const RunResult* run = nullptr;
                for (const auto& candidate : outcome.runs) {
                    if (candidate.method == method) run = &candidate;
                }
                for (std::size_t g = 0; g < groups; ++g) {
                    ResultRow row;
                    row.sweep_param = param;
                    row.sweep_value = spec.values[v];
                    row.replication = r;
                    row.method = method_name(method);
                    row.group = dataset.groups[g];
                    if (run == nullptr || !run->error.empty()) {
                        row.error = run ? run->error : failure;
                    } else {
                        row.er = run->er[g];
                        row.css = run->css[g];
                        row.t_hat = run->t_hat[g];
                        row.gap = run->gap[g];
                        er[g].push_back(row.er);
                        css[g].push_back(row.css);
                    }
                    result.rows.push_back(std::move(row));
                }
            }
            for (std::size_t g = 0; g < groups; ++g) {
                AggregateRow agg;
                agg.sweep_param = param;
                agg.sweep_value = spec.values[v];
                agg.method = method_name(method);
                agg.group = dataset.groups[g];
                agg.runs = er[g].size();
                std::tie(agg.er_pct, agg.er_se) = summarize_er(er[g]);
                std::tie(agg.css_mean, agg.css_std) = summarize_css(css[g]);
                result.aggregate.push_back(std::move(agg));
            }
        }
        for (std::size_t r = 0; r < reps; ++r) {
            const auto& outcome = outcomes[v * reps + r];
            result.warnings.insert(result.warnings.end(), outcome.warnings.begin(), outcome.warnings.end());
        }
    }
    return result;
}

void write_rows_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    out << "sweep_param,sweep_value,replication,method,group,er,css,t_hat,gap,error\n";
    for (const auto& r : rows) {
        out << r.sweep_param << ',' << fmt(r.sweep_value) << ',' << r.replication << ',' << r.method << ','
            << r.group << ',';
        if (r.error.empty()) {
            out << r.er << ',' << fmt(r.css) << ',' << (r.t_hat ? std::to_string(*r.t_hat) : "") << ','
                << (r.gap ? fmt(*r.gap) : "") << ",";
        } else {
            std::string msg = r.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            out << ",,,," << msg;
        }
        out << '\n';
    }
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
    out << "sweep_param,sweep_value,method,group,runs,er_pct,er_se,css_mean,css_std\n";
    for (const auto& r : rows) {
        out << r.sweep_param << ',' << fmt(r.sweep_value) << ',' << r.method << ',' << r.group << ',' << r.runs
            << ',' << fmt(r.er_pct) << ',' << fmt(r.er_se) << ',' << fmt(r.css_mean) << ',' << fmt(r.css_std)
            << '\n';
    }
}

void write_plot_script(std::ostream& out, std::string_view aggregate_csv, SweepParam param,
                       std::string_view output_png) {
    const bool log_x = param == SweepParam::m || param == SweepParam::lambda;
    out << "#!/usr/bin/env python3\n"
           "import csv\n"
           "from collections import defaultdict\n\n"
           "import matplotlib\n"
           "matplotlib.use('Agg')\n"
           "import matplotlib.pyplot as plt\n\n"
        << "SOURCE = '" << aggregate_csv << "'\n"
        << "OUTPUT = '" << output_png << "'\n"
        << "XLABEL = '" << sweep_name(param) << "'\n"
        << "LOG_X = " << (log_x ? "True" : "False") << "\n\n"
        << "series = defaultdict(list)\n"
           "with open(SOURCE) as fh:\n"
           "    for row in csv.DictReader(fh):\n"
           "        series[(row['method'], row['group'])].append(row)\n\n"
           "panels = [('er', 'adv'), ('er', 'disadv'), ('css', 'adv'), ('css', 'disadv')]\n"
           "fig, axes = plt.subplots(1, 4, figsize=(20, 4))\n"
           "for ax, (metric, group) in zip(axes, panels):\n"
           "    for (method, g), rows in sorted(series.items()):\n"
           "        if g != group:\n"
           "            continue\n"
           "        rows = sorted(rows, key=lambda r: float(r['sweep_value']))\n"
           "        x = [float(r['sweep_value']) for r in rows]\n"
           "        if metric == 'er':\n"
           "            y = [float(r['er_pct']) for r in rows]\n"
           "            e = [float(r['er_se']) for r in rows]\n"
           "            ax.errorbar(x, y, yerr=e, label=method, capsize=3)\n"
           "            ax.set_ylabel('ER_' + group + ' (%)')\n"
           "        else:\n"
           "            y = [float(r['css_mean']) for r in rows]\n"
           "            s = [float(r['css_std']) for r in rows]\n"
           "            ax.plot(x, y, label=method)\n"
           "            ax.fill_between(x, [a - b for a, b in zip(y, s)], [a + b for a, b in zip(y, s)], alpha=0.2)\n"
           "            ax.set_ylabel('CSS_' + group)\n"
           "    ax.set_xlabel(XLABEL)\n"
           "    if LOG_X:\n"
           "        ax.set_xscale('log')\n"
           "axes[0].legend(fontsize='small')\n"
           "fig.tight_layout()\n"
           "fig.savefig(OUTPUT)\n";
}

bool CoverageReport::passes() const {
    return std::all_of(groups.begin(), groups.end(), [](const CoverageGroup& g) { return g.passes; });
}

CoverageReport coverage_study(const SyntheticStudy& study, Rule rule) {
    const std::size_t groups = study.dataset.groups.size();
    if (study.t_max.size() != groups || study.targets.size() != groups) {
        throw std::invalid_argument("one t_max and target per group required");
    }
    const auto exact = exact_oracle_table(study.dataset, study.model, study.t_max);

    CoverageReport report;
    report.rule = rule;
    report.replications = study.replications;
    report.groups.resize(groups);
    const double reps = static_cast<double>(study.replications);
    for (std::size_t g = 0; g < groups; ++g) {
        report.groups[g].t_star = oracle_threshold(exact.u[g], study.targets[g], study.t_max[g]).threshold;
        report.groups[g].required = 1.0 - study.alpha - 2.0 * std::sqrt(study.alpha * (1.0 - study.alpha) / reps);
    }

    const SelectionConfig config{study.targets, study.t_max, study.alpha, rule, study.lambda};
    for (std::size_t r = 0; r < study.replications; ++r) {
        const auto log = simulate_log(study.dataset, study.model, study.t_max, study.m, mix_key(study.seed, r),
                                      RelevanceSource::resample);
        const auto sel = select_thresholds(BoundTable::build(log, study.lambda), config);
        for (std::size_t g = 0; g < groups; ++g) {
            const auto t_hat = sel.per_group[g].threshold;
            auto& out = report.groups[g];
            if (exact.at(g, t_hat) >= study.targets[g]) ++out.covered;
            ++out.offset_counts[static_cast<long>(t_hat) - static_cast<long>(out.t_star)];
        }
    }
    for (auto& g : report.groups) {
        g.coverage = static_cast<double>(g.covered) / reps;
        g.passes = g.coverage >= g.required;
    }
    return report;
}

const AsymptoticsCell& AsymptoticsReport::find(std::size_t m, Rule rule, std::size_t group) const {
    for (const auto& c : cells) {
        if (c.m == m && c.rule == rule && c.group == group) return c;
    }
    throw std::out_of_range("no asymptotics cell");
}

AsymptoticsReport asymptotics_study(const SyntheticStudy& study, std::span<const std::size_t> m_values,
                                    double delta) {
    const std::size_t groups = study.dataset.groups.size();
    const auto exact = exact_oracle_table(study.dataset, study.model, study.t_max);
    AsymptoticsReport report;
    for (std::size_t g = 0; g < groups; ++g) {
        report.t_star.push_back(oracle_threshold(exact.u[g], study.targets[g], study.t_max[g]).threshold);
    }
    const double reps = static_cast<double>(study.replications);
    for (auto m : m_values) {
        const double lambda = std::sqrt(static_cast<double>(m));
        std::vector<std::size_t> hits(2 * groups, 0), sandwich(2 * groups, 0);
        for (std::size_t r = 0; r < study.replications; ++r) {
            const auto log = simulate_log(study.dataset, study.model, study.t_max, m, mix_key(study.seed, r, m),
                                          RelevanceSource::resample);
            const auto table = BoundTable::build(log, lambda);
            for (Rule rule : {Rule::union_bound, Rule::monotone}) {
                const auto sel = select_thresholds(table, {study.targets, study.t_max, study.alpha, rule, lambda});
                for (std::size_t g = 0; g < groups; ++g) {
                    const auto t_hat = sel.per_group[g].threshold;
                    const auto k = static_cast<std::size_t>(rule) * groups + g;
                    if (t_hat >= report.t_star[g] && t_hat <= report.t_star[g] + 1) ++hits[k];
                    const double target = study.targets[g];
                    if (exact.at(g, t_hat) > target - delta && exact.at(g, t_hat - 1) < target + delta) ++sandwich[k];
                }
            }
        }
        for (Rule rule : {Rule::union_bound, Rule::monotone}) {
            for (std::size_t g = 0; g < groups; ++g) {
                const auto k = static_cast<std::size_t>(rule) * groups + g;
                report.cells.push_back({m, rule, g, static_cast<double>(hits[k]) / reps,
                                        static_cast<double>(sandwich[k]) / reps});
            }
        }
    }
    return report;
}

}  // namespace fairstage
