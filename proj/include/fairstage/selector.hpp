#pragma once

#include "fairstage/clicklog.hpp"
#include "fairstage/estimator.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fairstage {

enum class Rule { union_bound, monotone };

std::string_view to_string(Rule rule) noexcept;
Rule parse_rule(std::string_view name);

struct SelectionConfig {
    std::vector<double> targets;      // U*_g
    std::vector<std::size_t> t_max;   // per group, >= 2
    double alpha = 0.1;
    Rule rule = Rule::monotone;
    double lambda = 100.0;

    void validate() const;
};

using ThresholdVector = std::vector<std::size_t>;

// Top-t_g items of every group.
struct FixedThresholds {
    ThresholdVector thresholds;
};

// Per query and group, the shortest prefix whose scores sum to the target.
// Ranking always follows the policy's model; prefix sums use `score_model`
// when set (a calibrated copy of it), otherwise the ranking model.
struct IndividualTargets {
    std::vector<double> targets;
    std::vector<std::size_t> t_max;
    std::shared_ptr<const RelevanceModel> score_model;
};

using CandidatePolicy = std::variant<FixedThresholds, IndividualTargets>;

/// U*_g = total * AR_g / sum AR, so every group gets the same share of its
/// average relevant count.
std::vector<double> equal_opportunity_targets(std::span<const double> average_relevant, double total);

// Failure probability each lower bound gets under the union rule.
double union_alpha(double alpha, std::size_t t_max);

/// Both take lower bounds for t = 1..t_max-1 (lbs[k] belongs to t = k + 1)
/// and return a threshold in [1 : t_max]; t_max when no threshold qualifies.
std::size_t union_threshold(std::span<const double> lbs, double target);
std::size_t monotone_threshold(std::span<const double> lbs, double target);

std::size_t select_union(const BoundTable& table, std::size_t group, double target, std::size_t t_max,
                         double alpha);
std::size_t select_monotone(const BoundTable& table, std::size_t group, double target, std::size_t t_max,
                            double alpha);

struct OracleThreshold {
    std::size_t threshold = 0;
    bool assumption_holds = true;  // U(t_max) >= target
};

/// Smallest t in [1 : t_max] with u[t] >= target, where u[t] is U_g(t).
/// When U(t_max) < target the assumption flag is cleared and t_max returned.
OracleThreshold oracle_threshold(std::span<const double> u, double target, std::size_t t_max);

struct GapBounds {
    double gap = 0.0;
    double upper = 0.0;           // UB(t_hat, alpha / (t_max - 1))
    double lower_previous = 0.0;  // LB(t_hat - 1, rule's alpha)
};

GapBounds gap_bounds(const BoundTable& table, std::size_t group, Rule rule, std::size_t t_hat, double alpha,
                     std::size_t t_max);

struct GroupSelection {
    std::size_t threshold = 0;
    double target = 0.0;
    std::size_t t_max = 0;
    GapBounds gap;
};

struct Selection {
    Rule rule = Rule::monotone;
    double alpha = 0.1;
    double lambda = 100.0;
    std::vector<std::string> groups;
    std::string model_fingerprint;
    std::vector<GroupSelection> per_group;

    ThresholdVector thresholds() const;
    FixedThresholds policy() const { return {thresholds()}; }
};

// Threshold selection from a precomputed bound table.
Selection select_thresholds(const BoundTable& table, const SelectionConfig& config);

/// Builds the bound table from the log (after checking it was ranked by
/// `model`) and picks one threshold per group with the configured rule.
Selection algorithm1(const InteractionLog& log, const RelevanceModel& model, const SelectionConfig& config);

// Selection vector s in {0,1}^n for one query.
std::vector<std::uint8_t> apply_policy(const CandidatePolicy& policy, const QueryInstance& query,
                                       const RelevanceModel& model);

/// Smallest t whose score prefix sum, averaged over the logged requests, reaches the target.
/// Items are ranked by `model` and summed with `score_model` (defaults to `model`).
std::size_t baseline_marginal(const InteractionLog& log, const Dataset& sim, const RelevanceModel& model,
                              std::size_t group, double target, std::size_t t_max,
                              const RelevanceModel* score_model = nullptr);

std::size_t baseline_individual(const QueryInstance& query, const RelevanceModel& model, std::size_t group,
                                double target, std::size_t t_max, const RelevanceModel* score_model = nullptr);

// Smallest t whose unclipped IPW estimate reaches the target.
std::size_t baseline_ipw(const InteractionLog& log, std::size_t group, double target, std::size_t t_max);

void write_selection(std::ostream& out, const Selection& selection);
Selection read_selection(std::istream& in);

}  // namespace fairstage
