#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fairstage {

// Sparse features sorted by index; an absent index reads as 0.
using FeatureVector = std::vector<std::pair<int, double>>;

using GroupMask = std::uint32_t;
inline constexpr std::size_t kMaxGroups = 32;

struct Item {
    std::size_t index = 0;  // position j within the query
    FeatureVector features;
    int raw_label = 0;
    int relevance = 0;
    GroupMask groups = 0;
    // Known Bernoulli relevance probability; set only for synthetic data.
    std::optional<double> relevance_prob;

    double feature(int feature_index) const noexcept;
    bool in_group(std::size_t g) const noexcept { return (groups >> g) & 1U; }
};

struct QueryInstance {
    std::string query_id;
    std::vector<Item> items;
};

struct Dataset {
    std::vector<QueryInstance> queries;
    std::vector<std::string> groups;
    int feature_count = 0;

    std::size_t group_index(std::string_view name) const;  // throws std::domain_error
    std::size_t item_count() const noexcept;
};

struct SplitSpec {
    double train = 0.01;
    double sim = 0.69;
    double test = 0.30;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SplitResult {
    Dataset train;
    Dataset sim;
    Dataset test;
};

/// Reads LETOR / SVMlight ranking data: `<label> qid:<qid> <fid>:<val> ... [# comment]`.
/// Queries keep the order of their first appearance. Raw labels are stored;
/// relevance is left at 0 until binarize() runs. Lines starting with `#` are
/// skipped.
Dataset parse_letor(std::istream& in);
Dataset parse_letor_file(const std::string& path);

/// Writes the dataset back in LETOR form; group membership goes in the trailing comment.
void write_letor(std::ostream& out, const Dataset& dataset);

// 1 iff raw_label is 2, 3 or 4; labels outside 0..4 throw std::domain_error.
int binarize_relevance(int raw_label);
void binarize(Dataset& dataset);

/// Two disjoint groups keyed on one feature: value 0 (or absent) -> "disadv",
/// anything else -> "adv". Group 0 is adv, group 1 is disadv.
Dataset assign_groups(Dataset dataset, int feature_index);

/// Query-level random partition. Each part keeps the input query order.
SplitResult split(const Dataset& dataset, const SplitSpec& spec);

double average_relevant(const Dataset& dataset, std::size_t group);
double average_relevant(const Dataset& dataset, std::string_view group);

struct SynthGroup {
    std::string name;
    // One Bernoulli relevance probability per item of the group.
    std::vector<double> relevance_probs;
    // Items of a group with zero click rate get 0 in the click-count feature.
    bool zero_clicks = false;
};

struct SynthConfig {
    std::vector<SynthGroup> groups;
    std::size_t num_queries = 1;
    // Std-dev of Gaussian noise added to the relevance probability in feature 2.
    double feature_noise = 0.0;
    std::uint64_t seed = 0;
};

/// Synthetic data with known per-item relevance probabilities.
///
/// Feature layout: 1 = click count (0 for zero-click groups, otherwise >= 1),
/// 2 = relevance probability plus Gaussian noise, 3 = pure noise. Item order
/// inside each query is shuffled. `exact_u[g][t]` is the expected number of
/// relevant items in the top t of group g under a model that orders items by
/// their true probability (the sum of the t largest probabilities).
struct SynthResult {
    Dataset dataset;
    std::vector<std::vector<double>> exact_u;
};

SynthResult synth_generate(const SynthConfig& config);

/// Default experiment instance: an "adv" group of 50 items with clicks and a
/// zero-click "disadv" group of 80 items, with average relevant counts close
/// to the real-data statistics (about 6.2 and 14.0).
SynthConfig default_synth_config(std::uint64_t seed = 0, std::size_t num_queries = 10000);

// Geometric probability profile p_j = head * exp(-j / decay), j = 0..count-1.
std::vector<double> decaying_profile(std::size_t count, double head, double decay);

}  // namespace fairstage
