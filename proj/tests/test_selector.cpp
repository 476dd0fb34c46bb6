#include "fairstage/clicklog.hpp"
#include "fairstage/error.hpp"
#include "fairstage/estimator.hpp"
#include "fairstage/selector.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace fairstage;

namespace {

// Log with one group, `depth` positions per request, propensity 1/rank and
// clicks given per request as a list of clicked ranks (1-based).
InteractionLog ranked_log(const std::vector<std::vector<int>>& clicked, std::size_t depth) {
    InteractionLog log({"g"}, {depth}, "fp");
    for (std::size_t i = 0; i < clicked.size(); ++i) {
        std::vector<LoggedPosition> slate;
        for (std::size_t r = 0; r < depth; ++r) {
            std::uint8_t c = 0;
            for (int k : clicked[i]) c |= static_cast<std::size_t>(k) == r + 1;
            slate.push_back({static_cast<std::int32_t>(r), c, 1.0 / double(r + 1)});
        }
        log.add_request(i, "q", {slate});
    }
    return log;
}

// Smallest t whose lower bound (computed straight from the log) clears the target.
std::size_t union_by_hand(const InteractionLog& log, std::size_t g, double target, std::size_t t_max,
                          double alpha, double lambda) {
    for (std::size_t t = 1; t < t_max; ++t) {
        if (lower_bound(log, g, t, lambda, alpha / double(t_max - 1)) >= target) return t;
    }
    return t_max;
}

std::size_t monotone_by_hand(const InteractionLog& log, std::size_t g, double target, std::size_t t_max,
                             double alpha, double lambda) {
    for (std::size_t t = 1; t < t_max; ++t) {
        bool all = true;
        for (std::size_t s = t; s < t_max; ++s) all &= lower_bound(log, g, s, lambda, alpha) >= target;
        if (all) return t;
    }
    return t_max;
}

}  // namespace

TEST_CASE("equal-opportunity targets") {
    const std::vector<double> ar{6.16, 13.99};
    const auto u = equal_opportunity_targets(ar, 5.0);
    CHECK(u[0] == doctest::Approx(5.0 * 6.16 / 20.15).epsilon(1e-12));
    CHECK(u[0] == doctest::Approx(1.52854).epsilon(1e-5));
    CHECK(u[1] == doctest::Approx(3.47146).epsilon(1e-5));
    CHECK(u[0] + u[1] == doctest::Approx(5.0));
    CHECK(u[0] / 6.16 == doctest::Approx(u[1] / 13.99));

    const std::vector<double> eq{3.0, 3.0};
    CHECK(equal_opportunity_targets(eq, 4.0) == std::vector<double>{2.0, 2.0});
    const std::vector<double> one{7.0};
    CHECK(equal_opportunity_targets(one, 5.0) == std::vector<double>{5.0});
    const std::vector<double> zero{0.0, 1.0};
    CHECK_THROWS(equal_opportunity_targets(zero, 5.0));
}

TEST_CASE("union rule on a lower-bound table") {
    const std::vector<double> lbs{0.2, 0.8, 1.1};  // t = 1..3, t_max = 4
    CHECK(union_threshold(lbs, 1.0) == 3);
    CHECK(union_threshold(lbs, 5.0) == 4);
    CHECK(union_threshold(lbs, 0.1) == 1);
    CHECK(union_alpha(0.3, 4) == doctest::Approx(0.1));
    const std::vector<double> bumpy{1.2, 0.9, 1.5};
    CHECK(union_threshold(bumpy, 1.0) == 1);
}

TEST_CASE("monotone rule on a non-monotone table") {
    const std::vector<double> lbs{1.2, 0.9, 1.5};
    CHECK(monotone_threshold(lbs, 1.0) == 3);
    CHECK(monotone_threshold(lbs, 0.5) == 1);
    CHECK(monotone_threshold(lbs, 2.0) == 4);
    const std::vector<double> tail_fails{1.2, 1.3, 0.5};
    CHECK(monotone_threshold(tail_fails, 1.0) == 4);

    // every t in [t_hat, t_max - 1] clears the target, t_hat - 1 does not
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        std::vector<double> v;
        for (int k = 0; k < 8; ++k) v.push_back(double((seed * 7919 + k * 104729) % 13) / 6.0);
        const auto t = monotone_threshold(v, 1.0);
        for (std::size_t s = t; s < 9; ++s) CHECK(v[s - 1] >= 1.0);
        if (t > 1 && t < 9) CHECK(v[t - 2] < 1.0);
        if (t == 9) CHECK(v[7] < 1.0);
        CHECK(union_threshold(v, 1.0) <= t);
    }
}

TEST_CASE("oracle threshold") {
    const std::vector<double> u{0.0, 0.4, 0.9, 1.3};
    CHECK(oracle_threshold(u, 1.0, 3).threshold == 3);
    CHECK(oracle_threshold(u, 1.0, 3).assumption_holds);
    CHECK(oracle_threshold(u, 0.4, 3).threshold == 1);
    const auto bad = oracle_threshold(u, 2.0, 3);
    CHECK_FALSE(bad.assumption_holds);
    CHECK(bad.threshold == 3);
    CHECK_THROWS(oracle_threshold(u, 1.0, 4));
}

TEST_CASE("select_union and select_monotone read the right bounds") {
    // clicks decay with rank so bounds grow with t
    std::vector<std::vector<int>> clicks;
    for (int i = 0; i < 400; ++i) {
        std::vector<int> c;
        if (i % 2 == 0) c.push_back(1);
        if (i % 4 == 1) c.push_back(2);
        if (i % 8 == 3) c.push_back(3);
        clicks.push_back(c);
    }
    const auto log = ranked_log(clicks, 4);
    const auto table = BoundTable::build(log, 100.0);
    for (double target : {0.05, 0.2, 0.4, 0.6, 2.0}) {
        CHECK(select_union(table, 0, target, 4, 0.3) == union_by_hand(log, 0, target, 4, 0.3, 100.0));
        CHECK(select_monotone(table, 0, target, 4, 0.3) == monotone_by_hand(log, 0, target, 4, 0.3, 100.0));
        CHECK(select_monotone(table, 0, target, 4, 0.3) <= select_union(table, 0, target, 4, 0.3));
    }
}

TEST_CASE("gap bounds") {
    InteractionLog two({"g"}, {2}, "fp");
    two.add_request(0, "q", {{{0, 1, 1.0}, {1, 0, 0.5}}});
    two.add_request(1, "q", {{{0, 0, 1.0}, {1, 1, 0.5}}});
    two.add_request(2, "q", {{{0, 1, 1.0}, {1, 1, 0.5}}});
    const auto table = BoundTable::build(two, 100.0);

    const auto g1 = gap_bounds(table, 0, Rule::monotone, 1, 0.1, 2);
    CHECK(g1.lower_previous == 0.0);
    CHECK(g1.upper == upper_bound(two, 0, 1, 100.0, 0.1));
    CHECK(g1.gap == g1.upper);

    // t_max = 2: union alpha = alpha, so both rules give the same gap
    const auto g2m = gap_bounds(table, 0, Rule::monotone, 2, 0.1, 2);
    const auto g2u = gap_bounds(table, 0, Rule::union_bound, 2, 0.1, 2);
    CHECK(g2m.gap == g2u.gap);
    // by hand: Z(1) = (1, 0, 1), Z(2) = (1, 2, 3)
    const double ln20 = std::log(20.0), ln40 = std::log(40.0);
    const double lb1 = 2.0 / 3.0 - std::sqrt(2.0 * (1.0 / 3.0) * ln20 / 3.0) - 7.0 * 100.0 * ln20 / 6.0;
    const double ub2 = 2.0 + std::sqrt(2.0 * 1.0 * ln40 / 3.0) + 7.0 * 2.0 * 100.0 * ln40 / 6.0 +
                       2.0 * std::sqrt(ln20 / 6.0);
    CHECK(g2m.lower_previous == doctest::Approx(lb1).epsilon(1e-12));
    CHECK(g2m.upper == doctest::Approx(ub2).epsilon(1e-12));
    CHECK(g2m.gap == doctest::Approx(ub2 - lb1).epsilon(1e-12));
    CHECK(g2m.gap >= 0.0);

    // union with t_max = 5 uses alpha / 4 on both sides
    InteractionLog deep({"g"}, {5}, "fp");
    for (int i = 0; i < 30; ++i) {
        std::vector<LoggedPosition> s;
        for (int r = 0; r < 5; ++r) s.push_back({r, static_cast<std::uint8_t>((i + r) % 3 == 0), 1.0 / (r + 1)});
        deep.add_request(i, "q", {s});
    }
    const auto dt = BoundTable::build(deep, 10.0);
    const auto gu = gap_bounds(dt, 0, Rule::union_bound, 3, 0.2, 5);
    CHECK(gu.upper == dt.upper(0, 3, 0.05));
    CHECK(gu.lower_previous == dt.lower(0, 2, 0.05));
    const auto gm = gap_bounds(dt, 0, Rule::monotone, 3, 0.2, 5);
    CHECK(gm.lower_previous == dt.lower(0, 2, 0.2));
    CHECK(gm.gap < gu.gap);
}

TEST_CASE("algorithm1 matches step-by-step composition") {
    auto d = synth_generate(default_synth_config(9, 200)).dataset;
    const auto model = RelevanceModel::logistic({0.01, 2.0, 0.3}, 0.0);
    const std::vector<std::size_t> t_max{20, 40};
    const auto log = simulate_log(d, model, t_max, 3000, 17);
    for (Rule rule : {Rule::union_bound, Rule::monotone}) {
        SelectionConfig cfg{{1.5, 3.5}, t_max, 0.1, rule, 100.0};
        const auto sel = algorithm1(log, model, cfg);
        CHECK(sel.model_fingerprint == model.fingerprint());
        for (std::size_t g = 0; g < 2; ++g) {
            const auto by_hand = rule == Rule::union_bound
                                     ? union_by_hand(log, g, cfg.targets[g], t_max[g], 0.1, 100.0)
                                     : monotone_by_hand(log, g, cfg.targets[g], t_max[g], 0.1, 100.0);
            CHECK(sel.per_group[g].threshold == by_hand);
        }
        CHECK(algorithm1(log, model, cfg).thresholds() == sel.thresholds());
    }

    // alpha -> 0: penalties blow up, both rules fall back to t_max
    for (Rule rule : {Rule::union_bound, Rule::monotone}) {
        SelectionConfig cfg{{0.01, 0.01}, t_max, 1e-300, rule, 100.0};
        CHECK(algorithm1(log, model, cfg).thresholds() == ThresholdVector{20, 40});
    }

    const auto other = RelevanceModel::logistic({0.02, 2.0, 0.3}, 0.0);
    SelectionConfig cfg{{1.5, 3.5}, t_max, 0.1, Rule::monotone, 100.0};
    CHECK_THROWS_AS(algorithm1(log, other, cfg), FingerprintMismatch);
    cfg.t_max = {1, 40};
    CHECK_THROWS(algorithm1(log, model, cfg));
    cfg.t_max = t_max;
    cfg.alpha = 1.0;
    CHECK_THROWS_AS(algorithm1(log, model, cfg), std::domain_error);
}

TEST_CASE("apply_policy") {
    const auto id = RelevanceModel::logistic({1.0}, 0.0);
    // items 0..3 in group 0, items 4..7 in group 1
    const auto q = testutil::make_query("q", {8, 7, 6, 5, 4, 3, 2, 1}, {}, {1, 1, 1, 1, 2, 2, 2, 2});
    auto count = [](const std::vector<std::uint8_t>& s) {
        std::size_t n = 0;
        for (auto v : s) n += v;
        return n;
    };
    const auto s = apply_policy(FixedThresholds{{2, 3}}, q, id);
    CHECK(count(s) == 5);
    CHECK(s == std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1, 1, 0});
    CHECK(count(apply_policy(FixedThresholds{{10, 10}}, q, id)) == 8);
    CHECK(count(apply_policy(FixedThresholds{{0, 0}}, q, id)) == 0);

    // item 0 tops both groups
    const auto shared = testutil::make_query("s", {9, 5, 4}, {}, {3, 1, 2});
    const auto both = apply_policy(FixedThresholds{{1, 1}}, shared, id);
    CHECK(count(both) == 1);
    CHECK(count(apply_policy(FixedThresholds{{2, 2}}, shared, id)) == 3);

    // individual: scores sigmoid(x); group 0 sums 0.9997 + 0.9991 >= 1.5 at k = 2
    const auto ind = apply_policy(IndividualTargets{{1.5, 0.9}, {4, 4}, nullptr}, q, id);
    CHECK(ind == std::vector<std::uint8_t>{1, 1, 0, 0, 1, 0, 0, 0});
}

TEST_CASE("individual baseline") {
    const auto id = RelevanceModel::logistic({1.0}, 0.0);
    const double l6 = std::log(0.6 / 0.4), l5 = 0.0;  // scores 0.6, 0.5, ...
    const auto q = testutil::make_query("q", {l6, l5, -1.0, -2.0}, {});
    CHECK(baseline_individual(q, id, 0, 1.0, 4) == 2);
    CHECK(baseline_individual(q, id, 0, 0.5, 4) == 1);
    CHECK(baseline_individual(q, RelevanceModel::constant(0.0), 0, 1.0, 4) == 4);
    CHECK(baseline_individual(q, id, 0, 10.0, 3) == 3);
    // ranking by one model, sums from another
    const auto half = RelevanceModel::constant(0.5);
    CHECK(baseline_individual(q, id, 0, 1.0, 4, &half) == 2);
    CHECK(baseline_individual(q, id, 0, 1.5, 4, &half) == 3);
}

TEST_CASE("marginal baseline") {
    Dataset d;
    d.groups = {"g"};
    d.feature_count = 1;
    d.queries.push_back(testutil::make_query("a", {1, 2, 3, 4, 5}, {1, 0, 1, 0, 1}));
    d.queries.push_back(testutil::make_query("b", {5, 4, 3, 2, 1}, {0, 0, 1, 1, 1}));
    const auto c = RelevanceModel::constant(0.5);
    const std::vector<std::size_t> t_max{5};
    const auto log = simulate_log(d, c, t_max, 40, 3);
    CHECK(baseline_marginal(log, d, c, 0, 1.0, 5) == 2);
    CHECK(baseline_marginal(log, d, c, 0, 0.0, 5) == 1);
    CHECK(baseline_marginal(log, d, c, 0, 2.5, 5) == 5);
    const auto zero = RelevanceModel::constant(0.0);
    CHECK(baseline_marginal(log, d, c, 0, 0.1, 5, &zero) == 5);

    // scores differ per query: weighting by how often each query was logged
    const auto id = RelevanceModel::logistic({1.0}, 0.0);
    const auto log2 = simulate_log(d, id, t_max, 40, 3);
    std::size_t na = 0;
    for (std::size_t i = 0; i < log2.size(); ++i) na += log2.query_id(i) == "a";
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    for (std::size_t t = 1; t <= 5; ++t) {
        double per_query = 0;
        for (std::size_t k = 0; k < t; ++k) per_query += sig(5.0 - double(k));
        // both queries hold the same multiset of scores, so the mean prefix is query-independent
        CHECK(baseline_marginal(log2, d, id, 0, per_query - 1e-9, 5) == t);
    }
    CHECK(na > 0);
}

TEST_CASE("IPW baseline") {
    // 20 requests: rank 1 clicked in 14 (estimate 0.7), rank 2 clicked in 5 (adds 5 * 2 / 20 = 0.5)
    std::vector<std::vector<int>> clicks(20);
    for (int i = 0; i < 14; ++i) clicks[i].push_back(1);
    for (int i = 0; i < 5; ++i) clicks[i].push_back(2);
    const auto log = ranked_log(clicks, 4);
    CHECK(ipw_estimate(log, 0, 1) == doctest::Approx(0.7));
    CHECK(ipw_estimate(log, 0, 2) == doctest::Approx(1.2));
    CHECK(baseline_ipw(log, 0, 1.0, 4) == 2);
    CHECK(baseline_ipw(log, 0, 0.5, 4) == 1);
    CHECK(baseline_ipw(log, 0, 3.0, 4) == 4);
    CHECK_THROWS(baseline_ipw(log, 0, 1.0, 5));
}

TEST_CASE("policy file round trip and rule names") {
    Selection s;
    s.rule = Rule::union_bound;
    s.alpha = 0.1;
    s.lambda = 100;
    s.groups = {"adv", "disadv"};
    s.model_fingerprint = "abc123";
    s.per_group = {{7, 1.5285359801488834, 50, {0.25, 3.0, 2.75}}, {19, 3.4714640198511166, 50, {0.5, 4, 3.5}}};
    std::stringstream io;
    write_selection(io, s);
    const auto back = read_selection(io);
    CHECK(back.rule == s.rule);
    CHECK(back.alpha == s.alpha);
    CHECK(back.groups == s.groups);
    CHECK(back.model_fingerprint == s.model_fingerprint);
    CHECK(back.thresholds() == ThresholdVector{7, 19});
    CHECK(back.per_group[0].target == s.per_group[0].target);
    CHECK(back.per_group[1].gap.lower_previous == 3.5);

    std::istringstream missing("rule = union\n");
    CHECK_THROWS(read_selection(missing));
    CHECK(parse_rule("mono") == Rule::monotone);
    CHECK(to_string(parse_rule("union")) == "union");
    CHECK_THROWS(parse_rule("both"));
}
