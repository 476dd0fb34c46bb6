#pragma once

#include "fairstage/clicklog.hpp"
#include "fairstage/corpus.hpp"
#include "fairstage/relevance.hpp"
#include "fairstage/selector.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fairstage {

enum class Method {
    cipw_lb_mono,
    cipw_lb_union,
    ipw,
    uncal_individual,
    uncal_marginal,
    platt_individual,
    platt_marginal,
    platt_pg_individual,
    platt_pg_marginal,
};

std::string_view method_name(Method method) noexcept;
Method parse_method(std::string_view name);
const std::vector<Method>& all_methods();

// Test-set means per group of selected-and-relevant items and of selected items.
struct GroupMetrics {
    double relevant = 0.0;
    double selected = 0.0;
};

std::vector<GroupMetrics> evaluate_policy(const CandidatePolicy& policy, const RelevanceModel& model,
                                          const Dataset& test);

// ER_g: 1 iff the test mean of selected relevant items in the group reaches the target.
int eval_er(const CandidatePolicy& policy, const RelevanceModel& model, const Dataset& test, std::size_t group,
            double target);
// CSS_g: test mean of the number of selected items in the group.
double eval_css(const CandidatePolicy& policy, const RelevanceModel& model, const Dataset& test,
                std::size_t group);

/// One end-to-end replication's settings. Empty `t_max` means `default_t_max`
/// for every group; empty `targets` means equal-opportunity targets summing
/// to `target_total`.
struct PipelineConfig {
    SplitSpec split;
    TrainOptions train;
    double epsilon = 0.0;
    double beta_a = 1.0;
    double beta_b = 10.0;
    std::string corrupt_group = "disadv";
    std::size_t m = 100000;
    double lambda = 100.0;
    double alpha = 0.1;
    std::size_t default_t_max = 50;
    std::vector<std::size_t> t_max;
    double target_total = 5.0;
    std::vector<double> targets;
    std::vector<Method> methods = all_methods();

    std::vector<std::size_t> resolved_t_max(std::size_t groups) const;
};

struct RunResult {
    Method method = Method::cipw_lb_mono;
    std::vector<int> er;
    std::vector<double> css;
    std::vector<std::optional<std::size_t>> t_hat;
    std::vector<std::optional<double>> gap;
    std::string error;  // nonempty when the method failed in this run
};

struct ReplicationResult {
    std::uint64_t seed = 0;
    std::vector<double> targets;
    std::vector<RunResult> runs;
    std::vector<std::string> warnings;
};

/// Split, train, corrupt, simulate, select and evaluate once. Every
/// stochastic stage is keyed by `seed`, so all methods share one split and
/// one log. `targets` must hold one value per group.
ReplicationResult run_pipeline(const Dataset& dataset, const PipelineConfig& config, std::uint64_t seed,
                               std::span<const double> targets);

enum class SweepParam { m, epsilon, lambda, t_max };

std::string_view sweep_name(SweepParam param) noexcept;
SweepParam parse_sweep(std::string_view name);

struct ExperimentSpec {
    SweepParam param = SweepParam::m;
    std::vector<double> values;
    std::size_t replications = 50;
    PipelineConfig base;
    std::uint64_t base_seed = 0;
    unsigned threads = 1;

    void validate() const;
};

struct ResultRow {
    std::string sweep_param;
    double sweep_value = 0.0;
    std::size_t replication = 0;
    std::string method;
    std::string group;
    int er = 0;
    double css = 0.0;
    std::optional<std::size_t> t_hat;
    std::optional<double> gap;
    std::string error;
};

struct AggregateRow {
    std::string sweep_param;
    double sweep_value = 0.0;
    std::string method;
    std::string group;
    std::size_t runs = 0;
    double er_pct = 0.0;
    double er_se = 0.0;  // percentage points
    double css_mean = 0.0;
    double css_std = 0.0;
};

struct ExperimentResult {
    std::vector<double> targets;
    std::vector<ResultRow> rows;
    std::vector<AggregateRow> aggregate;
    std::vector<std::string> warnings;

    const AggregateRow& find(double sweep_value, std::string_view method, std::string_view group) const;
};

/// Replication i of every sweep value uses seed base_seed + i, giving paired
/// comparisons across methods and sweep values. Failed methods are recorded
/// per row and excluded from the aggregates.
ExperimentResult run_replications(const Dataset& dataset, const ExperimentSpec& spec);

// Percentage of ones and its binomial standard error (percentage points).
std::pair<double, double> summarize_er(std::span<const int> er);
// Mean and sample standard deviation.
std::pair<double, double> summarize_css(std::span<const double> css);

void write_rows_csv(std::ostream& out, const std::vector<ResultRow>& rows);
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);
/// Matplotlib script drawing ER and CSS panels for both groups against the
/// swept parameter from an aggregate CSV.
void write_plot_script(std::ostream& out, std::string_view aggregate_csv, SweepParam param,
                       std::string_view output_png);

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

/// Synthetic ground-truth setting: `dataset` carries relevance probabilities,
/// requests redraw relevance on every visit, and U_g is known exactly.
struct SyntheticStudy {
    Dataset dataset;
    RelevanceModel model = RelevanceModel::constant(0.5);
    std::vector<std::size_t> t_max;
    std::vector<double> targets;
    std::size_t m = 2000;
    double lambda = 100.0;
    double alpha = 0.1;
    std::size_t replications = 200;
    std::uint64_t seed = 0;
};

struct CoverageGroup {
    std::size_t covered = 0;
    double coverage = 0.0;
    double required = 0.0;  // 1 - alpha - 2 * binomial SE
    bool passes = false;
    std::size_t t_star = 0;
    std::map<long, std::size_t> offset_counts;  // t_hat - t_star -> replications
};

struct CoverageReport {
    Rule rule = Rule::monotone;
    std::size_t replications = 0;
    std::vector<CoverageGroup> groups;
    bool passes() const;
};

CoverageReport coverage_study(const SyntheticStudy& study, Rule rule);

struct AsymptoticsCell {
    std::size_t m = 0;
    Rule rule = Rule::monotone;
    std::size_t group = 0;
    double hit_rate = 0.0;       // t_star <= t_hat <= t_star + 1
    double sandwich_rate = 0.0;  // U* - delta < U(t_hat) and U(t_hat - 1) < U* + delta
};

struct AsymptoticsReport {
    std::vector<std::size_t> t_star;
    std::vector<AsymptoticsCell> cells;

    const AsymptoticsCell& find(std::size_t m, Rule rule, std::size_t group) const;
};

/// For each m the clipping level is sqrt(m); `study.m` and `study.lambda` are ignored.
AsymptoticsReport asymptotics_study(const SyntheticStudy& study, std::span<const std::size_t> m_values,
                                    double delta);

}  // namespace fairstage
