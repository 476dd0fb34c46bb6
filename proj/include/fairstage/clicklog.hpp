#pragma once

#include "fairstage/corpus.hpp"
#include "fairstage/relevance.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fairstage {

struct LoggedPosition {
    std::int32_t item = 0;  // item index within the query
    std::uint8_t click = 0;
    double propensity = 1.0;
};

/// Logged feedback S = {query, clicks, propensities} for m requests, stored
/// as one per-group slate per request. Slates are ordered by rank (rank 1
/// first) and may be shorter than the group's depth when the group has fewer
/// items than that.
class InteractionLog {
public:
    InteractionLog() = default;
    InteractionLog(std::vector<std::string> groups, std::vector<std::size_t> depth,
                   std::string fingerprint);

    void add_request(std::uint64_t request_id, std::string query_id,
                     const std::vector<std::vector<LoggedPosition>>& slates);

    std::size_t size() const noexcept { return query_ids_.size(); }
    std::size_t group_count() const noexcept { return groups_.size(); }
    const std::vector<std::string>& groups() const noexcept { return groups_; }
    // Number of ranks logged per request for the group (its t_max).
    std::size_t depth(std::size_t group) const { return depth_.at(group); }
    const std::vector<std::size_t>& depths() const noexcept { return depth_; }
    const std::string& fingerprint() const noexcept { return fingerprint_; }

    std::uint64_t request_id(std::size_t request) const { return request_ids_.at(request); }
    const std::string& query_id(std::size_t request) const { return query_ids_.at(request); }
    std::span<const LoggedPosition> slate(std::size_t request, std::size_t group) const;

    // Checks the positivity and range invariants; throws std::invalid_argument.
    void validate() const;

    /// CSV with `# key = value` metadata lines followed by
    /// `request_id,query_id,group,rank,item_id,propensity,click` rows.
    void write_csv(std::ostream& out) const;
    static InteractionLog read_csv(std::istream& in);

private:
    std::vector<std::string> groups_;
    std::vector<std::size_t> depth_;
    std::string fingerprint_;
    std::vector<std::uint64_t> request_ids_;
    std::vector<std::string> query_ids_;
    std::vector<std::size_t> offsets_{0};  // size * group_count + 1 slate boundaries
    std::vector<LoggedPosition> positions_;
};

/// Items of `group` ordered by score (descending, ties by ascending item
/// index), truncated to t_max.
std::vector<std::size_t> rank_group(const RelevanceModel& model, const QueryInstance& query,
                                    std::size_t group, std::size_t t_max);

// Per query, per group ranking and the matching scores.
struct QueryRanking {
    std::vector<std::vector<std::size_t>> items;
    std::vector<std::vector<double>> scores;
};

std::vector<QueryRanking> rank_queries(const Dataset& dataset, const RelevanceModel& model,
                                       std::span<const std::size_t> t_max);

enum class RelevanceSource {
    stored,    // use each item's recorded binary relevance
    resample,  // draw a fresh Bernoulli(relevance_prob) per request
};

/// Position-based click simulation: each request samples a query uniformly
/// with replacement, ranks every group with `model`, observes rank k with
/// probability 1/k and clicks iff observed and relevant. Request i draws from
/// the stream keyed (seed, i).
InteractionLog simulate_log(const Dataset& sim, const RelevanceModel& model,
                            std::span<const std::size_t> t_max, std::size_t m, std::uint64_t seed,
                            RelevanceSource source = RelevanceSource::stored);

/// U_g(t) for t in [0 : t_max_g] per group.
struct OracleTable {
    std::vector<std::vector<double>> u;

    double at(std::size_t group, std::size_t t) const { return u.at(group).at(t); }
    std::size_t t_max(std::size_t group) const { return u.at(group).size() - 1; }
};

// Mean number of relevant items in the model's top t of `group`, over queries.
double true_expected_relevant(const Dataset& test, const RelevanceModel& model, std::size_t group,
                              std::size_t t);

// Empirical U_g(t) from stored relevance labels.
OracleTable oracle_table(const Dataset& test, const RelevanceModel& model,
                         std::span<const std::size_t> t_max);

// Exact U_g(t) from relevance probabilities; requires synthetic data.
OracleTable exact_oracle_table(const Dataset& dataset, const RelevanceModel& model,
                               std::span<const std::size_t> t_max);

}  // namespace fairstage
