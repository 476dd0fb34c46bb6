#include "fairstage/selector.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace fairstage {

std::string_view to_string(Rule rule) noexcept {
    return rule == Rule::union_bound ? "union" : "monotone";
}

Rule parse_rule(std::string_view name) {
    if (name == "union") return Rule::union_bound;
    if (name == "monotone" || name == "mono") return Rule::monotone;
    throw std::invalid_argument("unknown rule '" + std::string(name) + "' (expected union or monotone)");
}

void SelectionConfig::validate() const {
    if (targets.empty() || targets.size() != t_max.size()) {
        throw std::invalid_argument("one target and one t_max per group required");
    }
    for (double u : targets) {
        if (!(u > 0.0)) throw std::invalid_argument("targets must be positive");
    }
    for (auto t : t_max) {
        if (t < 2) throw std::invalid_argument("t_max must be at least 2");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("alpha must lie in (0, 1)");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
}

std::vector<double> equal_opportunity_targets(std::span<const double> average_relevant, double total) {
    if (!(total > 0.0)) throw std::invalid_argument("target total must be positive");
    if (average_relevant.empty()) throw std::invalid_argument("no groups");
    double sum = 0.0;
    for (double ar : average_relevant) {
        if (!(ar > 0.0)) throw std::invalid_argument("average relevant counts must be positive");
        sum += ar;
    }
    std::vector<double> out;
    for (double ar : average_relevant) out.push_back(total * ar / sum);
    return out;
}

double union_alpha(double alpha, std::size_t t_max) {
    if (t_max < 2) throw std::invalid_argument("t_max must be at least 2");
    return alpha / static_cast<double>(t_max - 1);
}

std::size_t union_threshold(std::span<const double> lbs, double target) {
    for (std::size_t k = 0; k < lbs.size(); ++k) {
        if (lbs[k] >= target) return k + 1;
    }
    return lbs.size() + 1;
}

std::size_t monotone_threshold(std::span<const double> lbs, double target) {
    // Walk down from t_max - 1 while the bounds keep clearing the target.
    std::size_t t = lbs.size() + 1;
    while (t > 1 && lbs[t - 2] >= target) --t;
    return t;
}

std::size_t select_union(const BoundTable& table, std::size_t group, double target, std::size_t t_max,
                         double alpha) {
    return union_threshold(table.lower_bounds(group, t_max, union_alpha(alpha, t_max)), target);
}

std::size_t select_monotone(const BoundTable& table, std::size_t group, double target, std::size_t t_max,
                            double alpha) {
    if (t_max < 2) throw std::invalid_argument("t_max must be at least 2");
    return monotone_threshold(table.lower_bounds(group, t_max, alpha), target);
}

OracleThreshold oracle_threshold(std::span<const double> u, double target, std::size_t t_max) {
    if (t_max < 1 || u.size() <= t_max) throw std::out_of_range("oracle table shorter than t_max");
    OracleThreshold out{t_max, u[t_max] >= target};
    for (std::size_t t = 1; t <= t_max; ++t) {
        if (u[t] >= target) {
            out.threshold = t;
            break;
        }
    }
    return out;
}

GapBounds gap_bounds(const BoundTable& table, std::size_t group, Rule rule, std::size_t t_hat, double alpha,
                     std::size_t t_max) {
    if (t_hat < 1) throw std::invalid_argument("selected threshold must be >= 1");
    const double a_union = union_alpha(alpha, t_max);
    GapBounds out;
    out.upper = table.upper(group, t_hat, a_union);
    out.lower_previous = table.lower(group, t_hat - 1, rule == Rule::union_bound ? a_union : alpha);
    out.gap = out.upper - out.lower_previous;
    return out;
}

ThresholdVector Selection::thresholds() const {
    ThresholdVector out;
    for (const auto& g : per_group) out.push_back(g.threshold);
    return out;
}

Selection select_thresholds(const BoundTable& table, const SelectionConfig& config) {
    config.validate();
    if (config.targets.size() != table.group_count()) {
        throw std::invalid_argument("config has " + std::to_string(config.targets.size()) + " groups, log has " +
                                    std::to_string(table.group_count()));
    }
    Selection sel;
    sel.rule = config.rule;
    sel.alpha = config.alpha;
    sel.lambda = table.lambda();
    sel.groups = table.groups();
    for (std::size_t g = 0; g < config.targets.size(); ++g) {
        GroupSelection gs;
        gs.target = config.targets[g];
        gs.t_max = config.t_max[g];
        gs.threshold = config.rule == Rule::union_bound
                           ? select_union(table, g, gs.target, gs.t_max, config.alpha)
                           : select_monotone(table, g, gs.target, gs.t_max, config.alpha);
        gs.gap = gap_bounds(table, g, config.rule, gs.threshold, config.alpha, gs.t_max);
        sel.per_group.push_back(gs);
    }
    return sel;
}

Selection algorithm1(const InteractionLog& log, const RelevanceModel& model, const SelectionConfig& config) {
    config.validate();
    auto sel = select_thresholds(BoundTable::build(log, model, config.lambda), config);
    sel.model_fingerprint = model.fingerprint();
    return sel;
}

std::vector<std::uint8_t> apply_policy(const CandidatePolicy& policy, const QueryInstance& query,
                                       const RelevanceModel& model) {
    std::vector<std::uint8_t> selected(query.items.size(), 0);
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, FixedThresholds>) {
                for (std::size_t g = 0; g < p.thresholds.size(); ++g) {
                    if (p.thresholds[g] == 0) continue;
                    for (auto j : rank_group(model, query, g, p.thresholds[g])) selected[j] = 1;
                }
            } else {
                for (std::size_t g = 0; g < p.targets.size(); ++g) {
                    const auto ranked = rank_group(model, query, g, p.t_max[g]);
                    const auto k =
                        baseline_individual(query, model, g, p.targets[g], p.t_max[g], p.score_model.get());
                    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) selected[ranked[r]] = 1;
                }
            }
        },
        policy);
    return selected;
}

std::size_t baseline_individual(const QueryInstance& query, const RelevanceModel& model, std::size_t group,
                                double target, std::size_t t_max, const RelevanceModel* score_model) {
    const auto& scorer = score_model ? *score_model : model;
    const auto ranked = rank_group(model, query, group, t_max);
    double sum = 0.0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        sum += scorer.score(query, ranked[k]);
        if (sum >= target) return k + 1;
    }
    return t_max;
}

std::size_t baseline_marginal(const InteractionLog& log, const Dataset& sim, const RelevanceModel& model,
                              std::size_t group, double target, std::size_t t_max,
                              const RelevanceModel* score_model) {
    const auto& scorer = score_model ? *score_model : model;
    if (log.size() == 0) throw std::invalid_argument("marginal baseline needs logged requests");
    std::unordered_map<std::string, std::size_t> counts;
    for (std::size_t i = 0; i < log.size(); ++i) ++counts[log.query_id(i)];

    std::vector<double> prefix(t_max + 1, 0.0);
    for (const auto& query : sim.queries) {
        auto it = counts.find(query.query_id);
        if (it == counts.end()) continue;
        const auto ranked = rank_group(model, query, group, t_max);
        double running = 0.0;
        for (std::size_t t = 1; t <= t_max; ++t) {
            if (t <= ranked.size()) running += scorer.score(query, ranked[t - 1]);
            prefix[t] += static_cast<double>(it->second) * running;
        }
    }
    const double m = static_cast<double>(log.size());
    for (std::size_t t = 1; t <= t_max; ++t) {
        if (prefix[t] / m >= target) return t;
    }
    return t_max;
}

std::size_t baseline_ipw(const InteractionLog& log, std::size_t group, double target, std::size_t t_max) {
    if (t_max > log.depth(group)) throw std::out_of_range("t_max beyond the logged depth");
    const auto table = BoundTable::build(log, std::numeric_limits<double>::infinity());
    for (std::size_t t = 1; t <= t_max; ++t) {
        if (table.estimate(group, t) >= target) return t;
    }
    return t_max;
}

void write_selection(std::ostream& out, const Selection& s) {
    char buf[64];
    auto num = [&](double v) {
        const auto r = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, r.ptr);
    };
    out << "rule = " << to_string(s.rule) << "\nalpha = " << num(s.alpha) << "\nlambda = " << num(s.lambda)
        << "\nmodel_fingerprint = " << s.model_fingerprint << "\ngroups = ";
    for (std::size_t g = 0; g < s.groups.size(); ++g) out << (g ? "," : "") << s.groups[g];
    out << '\n';
    for (std::size_t g = 0; g < s.per_group.size(); ++g) {
        const auto& p = s.per_group[g];
        const std::string key = "group." + s.groups[g] + ".";
        out << key << "threshold = " << p.threshold << '\n'
            << key << "target = " << num(p.target) << '\n'
            << key << "t_max = " << p.t_max << '\n'
            << key << "gap = " << num(p.gap.gap) << '\n'
            << key << "gap_upper = " << num(p.gap.upper) << '\n'
            << key << "gap_lower_previous = " << num(p.gap.lower_previous) << '\n';
    }
}

Selection read_selection(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
        };
        kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::invalid_argument("policy file missing '" + key + "'");
        return it->second;
    };
    Selection s;
    s.rule = parse_rule(get("rule"));
    s.alpha = std::stod(get("alpha"));
    s.lambda = std::stod(get("lambda"));
    s.model_fingerprint = kv["model_fingerprint"];
    std::stringstream groups(get("groups"));
    std::string name;
    while (std::getline(groups, name, ',')) s.groups.push_back(name);
    for (const auto& g : s.groups) {
        const std::string key = "group." + g + ".";
        GroupSelection p;
        p.threshold = std::stoul(get(key + "threshold"));
        p.target = std::stod(get(key + "target"));
        p.t_max = std::stoul(get(key + "t_max"));
        p.gap.gap = std::stod(get(key + "gap"));
        p.gap.upper = std::stod(get(key + "gap_upper"));
        p.gap.lower_previous = std::stod(get(key + "gap_lower_previous"));
        s.per_group.push_back(p);
    }
    return s;
}

}  // namespace fairstage
