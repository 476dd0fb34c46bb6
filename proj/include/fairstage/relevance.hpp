#pragma once

#include "fairstage/corpus.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fairstage {

class InteractionLog;

struct TrainOptions {
    double learning_rate = 0.1;
    int iterations = 1000;
    double l2 = 1e-4;
};

/// Noise injected into one group's scores: with probability `epsilon` an
/// item's score is replaced by a Beta(beta_a, beta_b) draw.
struct CorruptionSpec {
    double epsilon = 0.0;
    double beta_a = 1.0;
    double beta_b = 10.0;
    std::size_t target_group = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CorruptionDraw {
    bool replaced = false;
    double noise = 0.0;
};

// The (eta, beta) pair for one (query, item); a pure function of its inputs.
CorruptionDraw corruption_draw(const CorruptionSpec& spec, std::string_view query_id,
                               std::size_t item_index);

// Calibration map sigmoid(slope * logit(s) + intercept).
struct PlattMap {
    double slope = 1.0;
    double intercept = 0.0;

    double apply(double score) const noexcept;
};

/// Deterministic first-stage relevance model f(q, d) in [0, 1].
/// Models are immutable values; wrappers share their base model.
class RelevanceModel {
public:
    enum class Kind { constant, logistic, corrupted, platt };

    static RelevanceModel constant(double value);
    // weights[k] multiplies feature k + 1.
    static RelevanceModel logistic(std::vector<double> weights, double intercept);
    static RelevanceModel corrupted(RelevanceModel base, CorruptionSpec spec);
    // One map shared by every item, or one per group when per_group is set.
    static RelevanceModel platt(RelevanceModel base, std::vector<PlattMap> maps, bool per_group);

    Kind kind() const noexcept;
    double score(const QueryInstance& query, std::size_t item) const;

    const std::vector<double>& weights() const;
    double intercept() const;
    const std::vector<PlattMap>& platt_maps() const;
    const RelevanceModel& base() const;

    std::string serialize() const;
    static RelevanceModel deserialize(std::string_view text);
    // Hex digest of serialize(); identifies the ranking a log was built with.
    std::string fingerprint() const;

private:
    struct Constant {
        double value;
    };
    struct Logistic {
        std::vector<double> weights;
        double intercept;
    };
    struct Corrupted {
        std::shared_ptr<const RelevanceModel> base;
        CorruptionSpec spec;
    };
    struct Platt {
        std::shared_ptr<const RelevanceModel> base;
        std::vector<PlattMap> maps;
        bool per_group;
    };

    explicit RelevanceModel(std::variant<Constant, Logistic, Corrupted, Platt> impl)
        : impl_(std::move(impl)) {}

    void serialize_into(std::string& out, const std::string& prefix) const;

    std::variant<Constant, Logistic, Corrupted, Platt> impl_;
};

/// Full-batch gradient descent on the L2-regularised log-loss, zero initialised.
/// Features are standardised internally and the fit is folded back into raw
/// feature weights.
RelevanceModel train_logistic(const Dataset& train, const TrainOptions& options = {});

RelevanceModel corrupt_scores(const RelevanceModel& base, const CorruptionSpec& spec);

/// Platt scaling fitted on click feedback with inverse propensity weighting.
///
/// Every logged impression (score s, click c, propensity p) contributes the
/// term softplus(z) - (c / p) z with z = a * logit(s) + b, an unbiased
/// estimate of the relevance log-loss. `sim` must contain the logged queries.
/// Groups without impressions fall back to the identity map and a message is
/// appended to `warnings`.
RelevanceModel platt_calibrate(const RelevanceModel& base, const InteractionLog& log,
                               const Dataset& sim, bool per_group,
                               std::vector<std::string>* warnings = nullptr,
                               int max_iterations = 1000);

double sigmoid(double z) noexcept;

}  // namespace fairstage
