// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.
// Exit status is non-zero when any criterion fails.

#include "fairstage/clicklog.hpp"
#include "fairstage/corpus.hpp"
#include "fairstage/estimator.hpp"
#include "fairstage/eval.hpp"
#include "fairstage/rng.hpp"
#include "fairstage/selector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

using namespace fairstage;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double binom_slack(double p, std::size_t n) { return 2.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n)); }

// Two groups with strictly decreasing relevance probabilities; feature 2 is the
// probability itself, so the model below ranks every query exactly by it.
struct Instance {
    Dataset dataset;
    RelevanceModel model = RelevanceModel::logistic({0.0, 1.0, 0.0}, 0.0);
    std::vector<std::size_t> t_max{20, 30};
    OracleTable exact;
    std::vector<double> targets;
    std::vector<std::size_t> t_star;
};

Instance make_instance() {
    SynthConfig c;
    c.groups = {{"adv", decaying_profile(20, 0.9, 30.0), false}, {"disadv", decaying_profile(30, 0.7, 40.0), true}};
    c.num_queries = 100;
    c.seed = 2024;
    Instance in;
    in.dataset = synth_generate(c).dataset;
    in.exact = exact_oracle_table(in.dataset, in.model, in.t_max);
    // targets halfway between consecutive U values, so t* is unambiguous
    for (std::size_t g = 0; g < 2; ++g) {
        const std::size_t t0 = g == 0 ? 4 : 6;
        in.targets.push_back(0.5 * (in.exact.at(g, t0 - 1) + in.exact.at(g, t0)));
        in.t_star.push_back(t0);
    }
    return in;
}

SyntheticStudy study_of(const Instance& in) {
    SyntheticStudy s;
    s.dataset = in.dataset;
    s.model = in.model;
    s.t_max = in.t_max;
    s.targets = in.targets;
    return s;
}

Outcome criterion1() {
    KeyedRng rng(1);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t m = 2 + rng.below(199);
        std::vector<double> z(m);
        const double scale = std::pow(10.0, -3.0 + 6.0 * rng.uniform());
        const double shift = k % 4 == 0 ? 1e3 * scale : 0.0;
        for (auto& v : z) v = shift + scale * rng.uniform();
        if (k % 10 == 0) std::fill(z.begin(), z.end(), z[0]);
        double pair = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = i + 1; j < m; ++j) pair += (z[i] - z[j]) * (z[i] - z[j]);
        }
        pair /= static_cast<double>(m) * static_cast<double>(m - 1);
        const double fast = sample_variance(z);
        const double rel = pair == 0.0 ? std::abs(fast) : std::abs(fast - pair) / pair;
        worst = std::max(worst, rel);
    }

    // Lower-bound example: Z = (0, 1), lambda = 1, alpha = 2/e.
    InteractionLog lb_log({"g"}, {1}, "fp");
    lb_log.add_request(0, "q", {{{0, 0, 1.0}}});
    lb_log.add_request(1, "q", {{{0, 1, 1.0}}});
    const double lb = lower_bound(lb_log, 0, 1, 1.0, 2.0 / std::numbers::e);
    const double lb_hand = 0.5 - std::sqrt(0.5) - 7.0 / 3.0;

    // Upper-bound example: requests (1.0, 1) and (0.25, 1), lambda = 2. Its
    // alpha = 4/e lies outside (0, 1), so the public call would reject it; the
    // kernel takes the two log terms (1 - ln 2, 1) directly.
    InteractionLog ub_log({"g"}, {1}, "fp");
    ub_log.add_request(0, "q", {{{0, 1, 1.0}}});
    ub_log.add_request(1, "q", {{{0, 1, 0.25}}});
    const auto& cell = BoundTable::build(ub_log, 2.0).cell(0, 1);
    const double ub = upper_bound_kernel(cell.estimate, cell.variance, cell.bias_cap, 2, 1, 2.0,
                                         1.0 - std::numbers::ln2, 1.0);
    const double ub_hand = 1.5 + std::sqrt(0.5) + 14.0 / 3.0 + std::sqrt((1.0 - std::numbers::ln2) / 4.0) + 0.25;
    // same instance through the checked API at alpha = 0.5
    const double ub_api = upper_bound(ub_log, 0, 1, 2.0, 0.5);
    const double ub_api_hand = 1.5 + std::sqrt(0.5 * std::log(8.0)) + 14.0 * std::log(8.0) / 3.0 +
                               std::sqrt(std::log(4.0) / 4.0) + 0.25;

    const bool t0 = lower_bound(lb_log, 0, 0, 1.0, 0.1) == 0.0 && upper_bound(ub_log, 0, 0, 2.0, 0.1) == 0.0;
    const bool pass = worst <= 1e-9 && std::abs(lb - lb_hand) <= 1e-6 && std::abs(lb - (-2.54044)) <= 1e-5 &&
                      std::abs(ub - ub_hand) <= 1e-6 && std::abs(ub_api - ub_api_hand) <= 1e-6 && t0;
    return {pass, fmt("variance max rel err %.2e over 1000 vectors; LB %.9f (hand %.9f); UB %.9f (hand %.9f); "
                      "UB at alpha 0.5 %.9f (hand %.9f)",
                      worst, lb, lb_hand, ub, ub_hand, ub_api, ub_api_hand)};
}

Outcome criterion2(const Instance& in) {
    auto s = study_of(in);
    s.m = 2000;
    s.lambda = 100;
    s.alpha = 0.1;
    s.replications = 200;
    s.seed = 2;
    bool pass = true;
    std::string detail;
    for (Rule rule : {Rule::union_bound, Rule::monotone}) {
        const auto rep = coverage_study(s, rule);
        for (std::size_t g = 0; g < 2; ++g) {
            const auto& c = rep.groups[g];
            double mean_offset = 0.0;
            for (const auto& [off, n] : c.offset_counts) mean_offset += static_cast<double>(off * long(n));
            mean_offset /= 200.0;
            pass &= c.passes;
            detail += fmt("%s/%s %.3f (need %.3f, mean t_hat - t* %+.1f); ", std::string(to_string(rule)).c_str(),
                          in.dataset.groups[g].c_str(), c.coverage, c.required, mean_offset);
        }
    }
    return {pass, detail};
}

Outcome criterion3(const Instance& in) {
    const std::size_t logs = 500, m = 500;
    const double lambda = 1e6;  // above 1 / min propensity, so no clipping
    const std::size_t ts[] = {1, 5, 10};
    std::vector<std::vector<double>> sum(2, std::vector<double>(3)), sq(2, std::vector<double>(3));
    for (std::size_t r = 0; r < logs; ++r) {
        const auto log = simulate_log(in.dataset, in.model, in.t_max, m, mix_key(3, r), RelevanceSource::resample);
        const auto table = BoundTable::build(log, lambda);
        for (std::size_t g = 0; g < 2; ++g) {
            for (std::size_t k = 0; k < 3; ++k) {
                const double e = table.estimate(g, ts[k]);
                sum[g][k] += e;
                sq[g][k] += e * e;
            }
        }
    }
    bool pass = true;
    std::string detail;
    const double n = static_cast<double>(logs);
    for (std::size_t g = 0; g < 2; ++g) {
        for (std::size_t k = 0; k < 3; ++k) {
            const double mean = sum[g][k] / n;
            const double sd = std::sqrt(std::max(0.0, (sq[g][k] - n * mean * mean) / (n - 1.0)));
            const double se = sd / std::sqrt(n);
            const double z = (mean - in.exact.at(g, ts[k])) / se;
            pass &= std::abs(z) <= 3.0;
            detail += fmt("%s t=%zu z=%+.2f; ", in.dataset.groups[g].c_str(), ts[k], z);
        }
    }
    return {pass, detail};
}

Outcome criterion4(const Instance& in) {
    auto s = study_of(in);
    s.alpha = 0.1;
    s.replications = 50;
    s.seed = 4;
    const std::vector<std::size_t> ms{1000, 10000, 100000};
    const auto rep = asymptotics_study(s, ms, 0.25);
    bool pass = true;
    std::string detail = fmt("t* = (%zu, %zu); ", rep.t_star[0], rep.t_star[1]);
    for (Rule rule : {Rule::union_bound, Rule::monotone}) {
        for (std::size_t g = 0; g < 2; ++g) {
            std::vector<double> hits;
            for (auto m : ms) hits.push_back(rep.find(m, rule, g).hit_rate);
            int inversions = 0;
            for (std::size_t k = 1; k < hits.size(); ++k) inversions += hits[k] < hits[k - 1];
            pass &= hits.back() >= 0.9 && inversions <= 1;
            detail += fmt("%s/%s hits %.2f %.2f %.2f; ", std::string(to_string(rule)).c_str(),
                          in.dataset.groups[g].c_str(), hits[0], hits[1], hits[2]);
        }
    }
    return {pass, detail};
}

Outcome criterion5(const Instance& in) {
    const std::size_t logs = 200, m = 2000;
    const double alphas[] = {0.05, 0.1, 0.5};
    const double lambdas[] = {100.0, 5.0};  // 5 < t_max: clipping and the bias term are active
    const std::size_t ts[] = {1, 4, 10, 20};
    // [lambda][alpha][group][t] -> (lower covered, upper covered)
    std::vector<std::size_t> lo(2 * 3 * 2 * 4, 0), hi(lo.size(), 0);
    for (std::size_t r = 0; r < logs; ++r) {
        const auto log = simulate_log(in.dataset, in.model, in.t_max, m, mix_key(5, r), RelevanceSource::resample);
        for (std::size_t l = 0; l < 2; ++l) {
            const auto table = BoundTable::build(log, lambdas[l]);
            for (std::size_t a = 0; a < 3; ++a) {
                for (std::size_t g = 0; g < 2; ++g) {
                    for (std::size_t k = 0; k < 4; ++k) {
                        const std::size_t idx = ((l * 3 + a) * 2 + g) * 4 + k;
                        const double u = in.exact.at(g, ts[k]);
                        lo[idx] += u >= table.lower(g, ts[k], alphas[a]);
                        hi[idx] += u <= table.upper(g, ts[k], alphas[a]);
                    }
                }
            }
        }
    }
    bool pass = true;
    std::string detail;
    for (std::size_t a = 0; a < 3; ++a) {
        const double need = 1.0 - alphas[a] - binom_slack(alphas[a], logs);
        double worst_lo = 1.0, worst_hi = 1.0;
        for (std::size_t l = 0; l < 2; ++l) {
            for (std::size_t g = 0; g < 2; ++g) {
                for (std::size_t k = 0; k < 4; ++k) {
                    const std::size_t idx = ((l * 3 + a) * 2 + g) * 4 + k;
                    worst_lo = std::min(worst_lo, double(lo[idx]) / double(logs));
                    worst_hi = std::min(worst_hi, double(hi[idx]) / double(logs));
                }
            }
        }
        pass &= worst_lo >= need && worst_hi >= need;
        detail += fmt("alpha %.2f: min LB cov %.3f, min UB cov %.3f (need %.3f); ", alphas[a], worst_lo, worst_hi,
                      need);
    }
    return {pass, detail};
}

ExperimentSpec default_experiment(SweepParam param, std::vector<double> values) {
    ExperimentSpec spec;
    spec.param = param;
    spec.values = std::move(values);
    spec.replications = 50;
    spec.base.methods = {Method::cipw_lb_mono, Method::cipw_lb_union, Method::ipw};
    return spec;
}

Outcome criterion6(const Dataset& data) {
    struct Sweep {
        const char* label;
        ExperimentSpec spec;
    };
    std::vector<Sweep> sweeps;
    sweeps.push_back({"m (eps 0)", default_experiment(SweepParam::m, {1e3, 1e4, 1e5})});
    sweeps.push_back({"eps (m 1e5)", default_experiment(SweepParam::epsilon, {0.0, 0.5, 0.9})});
    auto corrupted = default_experiment(SweepParam::m, {1e3, 1e4, 1e5});
    corrupted.base.epsilon = 0.9;
    sweeps.push_back({"m (eps 0.9)", corrupted});

    bool a = true, b = true, c_ipw = false, c_prop = true;
    std::string detail;
    for (const auto& sw : sweeps) {
        const auto res = run_replications(data, sw.spec);
        detail += std::string(sw.label) + ": ";
        for (double v : sw.spec.values) {
            const bool at_09 = sw.spec.param == SweepParam::epsilon ? v == 0.9 : sw.spec.base.epsilon == 0.9;
            detail += fmt("[%g", v);
            for (const char* g : {"adv", "disadv"}) {
                const auto& mono = res.find(v, "cipw-lb-mono", g);
                const auto& uni = res.find(v, "cipw-lb-union", g);
                const auto& ipw = res.find(v, "ipw", g);
                a &= mono.er_pct == 100.0 && uni.er_pct == 100.0 && mono.runs == 50 && uni.runs == 50;
                b &= mono.css_mean <= uni.css_mean;
                if (at_09 && std::string(g) == "disadv") {
                    c_ipw |= ipw.er_pct < 100.0;
                    c_prop &= mono.er_pct == 100.0 && uni.er_pct == 100.0;
                }
                detail += fmt(" %s ER mono/union/ipw %.0f/%.0f/%.0f CSS %.2f/%.2f/%.2f", g, mono.er_pct, uni.er_pct,
                              ipw.er_pct, mono.css_mean, uni.css_mean, ipw.css_mean);
            }
            detail += "] ";
        }
    }
    detail = fmt("(a) %s (b) %s (c) %s; ", a ? "ok" : "no", b ? "ok" : "no", c_ipw && c_prop ? "ok" : "no") + detail;
    return {a && b && c_ipw && c_prop, detail};
}

Outcome criterion7(const Dataset& data) {
    const std::vector<double> lambdas{1, 10, 100, 1000};
    const auto res = run_replications(data, default_experiment(SweepParam::lambda, lambdas));
    bool pass = true;
    std::string detail;
    for (const char* method : {"cipw-lb-mono", "cipw-lb-union"}) {
        for (const char* g : {"adv", "disadv"}) {
            std::vector<double> css;
            for (double l : lambdas) {
                const auto& row = res.find(l, method, g);
                css.push_back(row.css_mean);
                pass &= row.er_pct == 100.0;
            }
            const auto best = static_cast<std::size_t>(std::min_element(css.begin(), css.end()) - css.begin());
            // an interior minimum must be strictly below both endpoints
            const bool interior = best != 0 && best != css.size() - 1 && css[best] < css.front() &&
                                  css[best] < css.back();
            pass &= interior;
            detail += fmt("%s/%s CSS %.2f %.2f %.2f %.2f; ", method, g, css[0], css[1], css[2], css[3]);
        }
    }
    return {pass, detail};
}

// Returns false when the dataset is absent (criterion skipped).
bool criterion8(Outcome& out) {
    const char* path = std::getenv("FAIRSTAGE_MSLR");
    if (!path || !*path) return false;
    auto d = parse_letor_file(path);
    binarize(d);
    d = assign_groups(d, 135);
    const double adv = average_relevant(d, "adv"), dis = average_relevant(d, "disadv");
    out.pass = std::abs(adv - 6.16) <= 0.01 && std::abs(dis - 13.99) <= 0.01;
    out.detail = fmt("%zu queries; AR adv %.4f (expect 6.16), disadv %.4f (expect 13.99), tol 0.01",
                     d.queries.size(), adv, dis);
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    // optional report file: ctest hides the output of passing tests
    FILE* report = argc > 1 ? std::fopen(argv[1], "w") : nullptr;
    auto emit = [&](const std::string& line) {
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        if (report) {
            std::fprintf(report, "%s\n", line.c_str());
            std::fflush(report);
        }
    };
    int failures = 0;
    auto run = [&](int id, const char* name, double limit_s, const std::function<Outcome()>& fn) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < limit_s;
        const bool pass = o.pass && in_time;
        failures += !pass;
        emit(fmt("criterion %d %s: %s (%.1f s, limit %.0f s%s) ", id, name, pass ? "PASS" : "FAIL", secs, limit_s,
                 in_time ? "" : ", over time") +
             o.detail);
    };

    const auto instance = make_instance();
    run(1, "formula oracles", 1, criterion1);
    run(2, "threshold coverage", 300, [&] { return criterion2(instance); });
    run(3, "unclipped estimator unbiased", 120, [&] { return criterion3(instance); });
    run(4, "asymptotic tightness", 600, [&] { return criterion4(instance); });
    run(5, "bound coverage", 300, [&] { return criterion5(instance); });

    const auto data = synth_generate(default_synth_config(0, 10000)).dataset;
    run(6, "ER/CSS trends", 1200, [&] { return criterion6(data); });
    run(7, "lambda bowl", 600, [&] { return criterion7(data); });

    Outcome mslr;
    const auto start = std::chrono::steady_clock::now();
    bool ran = false;
    try {
        ran = criterion8(mslr);
    } catch (const std::exception& e) {
        ran = true;
        mslr = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (ran) {
        failures += !mslr.pass;
        emit(fmt("criterion 8 MSLR averages: %s (%.1f s) ", mslr.pass ? "PASS" : "FAIL", secs) + mslr.detail);
    } else {
        emit("criterion 8 MSLR averages: SKIP (set FAIRSTAGE_MSLR to a MSLR-WEB30K LETOR file to run)");
    }
    if (report) std::fclose(report);
    return failures == 0 ? 0 : 1;
}
