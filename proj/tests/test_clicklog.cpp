#include "fairstage/clicklog.hpp"
#include "fairstage/error.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

using namespace fairstage;

namespace {

const auto kIdentity = RelevanceModel::logistic({1.0}, 0.0);

Dataset one_query(const std::vector<double>& x, const std::vector<int>& rel) {
    Dataset d;
    d.groups = {"g"};
    d.feature_count = 1;
    d.queries.push_back(testutil::make_query("q", x, rel));
    return d;
}

}  // namespace

TEST_CASE("rank_group ordering, ties and truncation") {
    const auto d = one_query({0.9, 0.5, 0.7}, {});
    CHECK(rank_group(kIdentity, d.queries[0], 0, 2) == std::vector<std::size_t>{0, 2});
    CHECK(rank_group(kIdentity, d.queries[0], 0, 10) == std::vector<std::size_t>{0, 2, 1});
    const auto tie = one_query({0.5, 0.5}, {});
    CHECK(rank_group(kIdentity, tie.queries[0], 0, 2) == std::vector<std::size_t>{0, 1});
    CHECK(rank_group(kIdentity, tie.queries[0], 1, 2).empty());

    // scores non-increasing, distinct, group members only
    auto big = synth_generate(default_synth_config(4, 5)).dataset;
    const auto model = RelevanceModel::logistic({0.01, 2.0, 0.3}, 0.0);
    for (const auto& q : big.queries) {
        for (std::size_t g = 0; g < 2; ++g) {
            const auto r = rank_group(model, q, g, 50);
            CHECK(std::set<std::size_t>(r.begin(), r.end()).size() == r.size());
            for (std::size_t k = 0; k < r.size(); ++k) {
                CHECK(q.items[r[k]].in_group(g));
                if (k > 0) CHECK(model.score(q, r[k - 1]) >= model.score(q, r[k]));
            }
        }
    }
}

TEST_CASE("simulate_log propensities, clicks and determinism") {
    auto d = synth_generate(default_synth_config(8, 50)).dataset;
    const auto model = RelevanceModel::logistic({0.01, 2.0, 0.3}, 0.0);
    const std::vector<std::size_t> t_max{10, 20};
    const auto log = simulate_log(d, model, t_max, 500, 42);
    CHECK(log.size() == 500);
    CHECK(log.fingerprint() == model.fingerprint());
    CHECK_NOTHROW(log.validate());
    std::map<std::string, std::size_t> index;
    for (std::size_t q = 0; q < d.queries.size(); ++q) index[d.queries[q].query_id] = q;
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& q = d.queries[index.at(log.query_id(i))];
        for (std::size_t g = 0; g < 2; ++g) {
            const auto slate = log.slate(i, g);
            const auto ranked = rank_group(model, q, g, t_max[g]);
            REQUIRE(slate.size() == ranked.size());
            for (std::size_t r = 0; r < slate.size(); ++r) {
                CHECK(slate[r].item == static_cast<std::int32_t>(ranked[r]));
                CHECK(slate[r].propensity == 1.0 / double(r + 1));
                CHECK(slate[r].click <= q.items[slate[r].item].relevance);
                if (r == 0) CHECK(slate[r].click == q.items[slate[r].item].relevance);
            }
        }
    }
    std::ostringstream a, b;
    log.write_csv(a);
    simulate_log(d, model, t_max, 500, 42).write_csv(b);
    CHECK(a.str() == b.str());
    std::ostringstream c;
    simulate_log(d, model, t_max, 500, 43).write_csv(c);
    CHECK(a.str() != c.str());

    CHECK_THROWS(simulate_log(Dataset{}, model, std::vector<std::size_t>{}, 10, 1));
    CHECK_THROWS(simulate_log(d, model, t_max, 1, 1));
}

TEST_CASE("empirical click rate at rank k approaches relevance rate / k") {
    // Two items, relevance probability 0.6 at rank 1 and 0.8 at rank 2.
    Dataset d = one_query({2.0, 1.0}, {0, 0});
    d.queries[0].items[0].relevance_prob = 0.6;
    d.queries[0].items[1].relevance_prob = 0.8;
    const std::vector<std::size_t> t_max{2};
    const std::size_t m = 40000;
    const auto log = simulate_log(d, kIdentity, t_max, m, 5, RelevanceSource::resample);
    double c1 = 0, c2 = 0;
    for (std::size_t i = 0; i < m; ++i) {
        c1 += log.slate(i, 0)[0].click;
        c2 += log.slate(i, 0)[1].click;
    }
    auto within = [&](double hits, double p) {
        const double se = std::sqrt(p * (1 - p) / double(m));
        return std::abs(hits / double(m) - p) < 4 * se;
    };
    CHECK(within(c1, 0.6));
    CHECK(within(c2, 0.4));
}

TEST_CASE("log CSV round trip and format") {
    auto d = synth_generate(default_synth_config(2, 10)).dataset;
    const auto model = RelevanceModel::logistic({0.01, 2.0, 0.3}, 0.0);
    const std::vector<std::size_t> t_max{3, 7};
    const auto log = simulate_log(d, model, t_max, 30, 1);
    std::ostringstream out;
    log.write_csv(out);
    const auto text = out.str();
    CHECK(text.find("request_id,query_id,group,rank,item_id,propensity,click") != std::string::npos);
    CHECK(text.find("0.14285714285714285") != std::string::npos);  // 1/7 with 17 digits
    std::istringstream in(text);
    const auto back = InteractionLog::read_csv(in);
    std::ostringstream again;
    back.write_csv(again);
    CHECK(again.str() == text);
    CHECK(back.depths() == log.depths());

    std::istringstream bad("# groups = g\n# depth = 1\nrequest_id,query_id,group,rank,item_id,propensity,click\n0,q,g,1,0,0,1\n");
    CHECK_THROWS(InteractionLog::read_csv(bad));
    std::istringstream short_line(
        "# groups = g\n# depth = 1\nrequest_id,query_id,group,rank,item_id,propensity,click\n0,q,g,1\n");
    CHECK_THROWS_AS(InteractionLog::read_csv(short_line), ParseError);
}

TEST_CASE("true_expected_relevant and oracle tables") {
    Dataset d;
    d.groups = {"g"};
    d.feature_count = 1;
    d.queries.push_back(testutil::make_query("a", {0.9, 0.8, 0.1}, {1, 0, 1}));
    d.queries.push_back(testutil::make_query("b", {0.9, 0.8, 0.1}, {1, 1, 0}));
    CHECK(true_expected_relevant(d, kIdentity, 0, 0) == 0.0);
    CHECK(true_expected_relevant(d, kIdentity, 0, 2) == 1.5);
    const std::vector<std::size_t> t_max{3};
    const auto table = oracle_table(d, kIdentity, t_max);
    CHECK(table.at(0, 0) == 0.0);
    CHECK(table.at(0, 1) == 1.0);
    CHECK(table.at(0, 2) == 1.5);
    CHECK(table.at(0, 3) == 2.0);

    const auto all = one_query({1, 2, 3}, {1, 1, 1});
    CHECK(true_expected_relevant(all, kIdentity, 0, 3) == 3.0);

    // exact table equals the sum of probabilities down the model's ranking
    auto synth = synth_generate(default_synth_config(6, 30)).dataset;
    const auto model = RelevanceModel::logistic({0.01, 2.0, 0.3}, 0.0);
    const std::vector<std::size_t> tm{50, 50};
    const auto exact = exact_oracle_table(synth, model, tm);
    for (std::size_t g = 0; g < 2; ++g) {
        double brute = 0;
        for (const auto& q : synth.queries) {
            for (auto j : rank_group(model, q, g, 5)) brute += *q.items[j].relevance_prob;
        }
        CHECK(exact.at(g, 5) == doctest::Approx(brute / 30.0).epsilon(1e-12));
        for (std::size_t t = 1; t <= 50; ++t) {
            CHECK(exact.at(g, t) >= exact.at(g, t - 1));
            CHECK(exact.at(g, t) <= double(t));
        }
    }
    CHECK_THROWS(exact_oracle_table(d, kIdentity, t_max));
}
