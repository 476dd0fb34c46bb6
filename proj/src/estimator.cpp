#include "fairstage/estimator.hpp"

#include "fairstage/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace fairstage {

namespace {

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("alpha must lie in (0, 1)");
}

void check_common(std::size_t m, double lambda) {
    if (m < 2) throw std::invalid_argument("bounds need m > 1 logged requests");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
}

double weight(double lambda, double propensity) noexcept {
    return std::min(lambda, 1.0 / propensity);
}

}  // namespace

double cipw_per_request(std::span<const LoggedPosition> slate, std::size_t t, double lambda, std::size_t depth) {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (t > depth || slate.size() > depth) {
        throw std::out_of_range("threshold " + std::to_string(t) + " exceeds the " + std::to_string(depth) +
                                " logged ranks; simulate the log with a larger t_max");
    }
    double z = 0.0;
    const auto n = std::min(t, slate.size());
    for (std::size_t r = 0; r < n; ++r) {
        if (slate[r].click) z += weight(lambda, slate[r].propensity);
    }
    return z;
}

double cipw_per_request(std::span<const LoggedPosition> slate, std::size_t t, double lambda) {
    return cipw_per_request(slate, t, lambda, slate.size());
}

double cipw_estimate(const InteractionLog& log, std::size_t group, std::size_t t, double lambda) {
    if (log.size() == 0) throw std::invalid_argument("empty log");
    double total = 0.0;
    for (std::size_t i = 0; i < log.size(); ++i) {
        total += cipw_per_request(log.slate(i, group), t, lambda, log.depth(group));
    }
    return total / static_cast<double>(log.size());
}

double ipw_estimate(const InteractionLog& log, std::size_t group, std::size_t t) {
    return cipw_estimate(log, group, t, std::numeric_limits<double>::infinity());
}

double sample_variance(std::span<const double> z) {
    if (z.size() < 2) throw std::invalid_argument("sample variance needs m > 1 values");
    // Sums are taken around z[0] so large offsets do not cancel.
    const double shift = z[0];
    double s1 = 0.0, s2 = 0.0;
    for (double v : z) {
        const double d = v - shift;
        s1 += d;
        s2 += d * d;
    }
    const double m = static_cast<double>(z.size());
    return std::max(0.0, (s2 - s1 * s1 / m) / (m - 1.0));
}

double lower_bound_kernel(double estimate, double variance, std::size_t m, std::size_t t, double lambda,
                          double log2) {
    check_common(m, lambda);
    if (t == 0) return 0.0;
    const double md = static_cast<double>(m);
    return estimate - std::sqrt(2.0 * variance * log2 / md) -
           7.0 * static_cast<double>(t) * lambda * log2 / (3.0 * (md - 1.0));
}

double upper_bound_kernel(double estimate, double variance, double bias_cap, std::size_t m, std::size_t t,
                          double lambda, double log2, double log4) {
    check_common(m, lambda);
    if (t == 0) return 0.0;
    const double md = static_cast<double>(m);
    const double td = static_cast<double>(t);
    return estimate + std::sqrt(2.0 * variance * log4 / md) + 7.0 * td * lambda * log4 / (3.0 * (md - 1.0)) +
           td * std::sqrt(log2 / (2.0 * md)) + bias_cap;
}

double lower_bound_from(double estimate, double variance, std::size_t m, std::size_t t, double lambda,
                        double alpha) {
    check_alpha(alpha);
    return lower_bound_kernel(estimate, variance, m, t, lambda, std::log(2.0 / alpha));
}

double upper_bound_from(double estimate, double variance, double bias_cap, std::size_t m, std::size_t t,
                        double lambda, double alpha) {
    check_alpha(alpha);
    return upper_bound_kernel(estimate, variance, bias_cap, m, t, lambda, std::log(2.0 / alpha),
                              std::log(4.0 / alpha));
}

double lower_bound(const InteractionLog& log, std::size_t group, std::size_t t, double lambda, double alpha) {
    check_alpha(alpha);
    const auto table = BoundTable::build(log, lambda);
    if (t > table.max_threshold(group)) throw std::out_of_range("threshold beyond the logged depth");
    return table.lower(group, t, alpha);
}

double upper_bound(const InteractionLog& log, std::size_t group, std::size_t t, double lambda, double alpha) {
    check_alpha(alpha);
    const auto table = BoundTable::build(log, lambda);
    if (t > table.max_threshold(group)) throw std::out_of_range("threshold beyond the logged depth");
    return table.upper(group, t, alpha);
}

void check_fingerprint(const InteractionLog& log, const RelevanceModel& model) {
    const auto expected = model.fingerprint();
    if (log.fingerprint() != expected) {
        throw FingerprintMismatch("log was ranked by model " + log.fingerprint() + " but model " + expected +
                                  " is being evaluated; re-simulate the log with this model");
    }
}

BoundTable BoundTable::build(const InteractionLog& log, const RelevanceModel& model, double lambda) {
    check_fingerprint(log, model);
    return build(log, lambda);
}

BoundTable BoundTable::build(const InteractionLog& log, double lambda) {
    check_common(log.size(), lambda);
    BoundTable table;
    table.groups_ = log.groups();
    table.lambda_ = lambda;
    table.m_ = log.size();

    for (std::size_t g = 0; g < log.group_count(); ++g) {
        const std::size_t depth = log.depth(g);
        // Welford accumulators per threshold.
        std::vector<double> mean(depth + 1, 0.0), m2(depth + 1, 0.0), bias(depth + 1, 0.0);
        for (std::size_t i = 0; i < log.size(); ++i) {
            const auto slate = log.slate(i, g);
            const double k = static_cast<double>(i + 1);
            double z = 0.0, b = 0.0;
            for (std::size_t t = 1; t <= depth; ++t) {
                if (t <= slate.size()) {
                    const auto& pos = slate[t - 1];
                    if (pos.click) z += weight(lambda, pos.propensity);
                    b += std::max(0.0, 1.0 - lambda * pos.propensity);
                }
                const double delta = z - mean[t];
                mean[t] += delta / k;
                m2[t] += delta * (z - mean[t]);
                bias[t] += b;
            }
        }
        std::vector<BoundCell> cells(depth + 1);
        const double md = static_cast<double>(log.size());
        for (std::size_t t = 1; t <= depth; ++t) {
            cells[t].estimate = mean[t];
            cells[t].variance = std::max(0.0, m2[t] / (md - 1.0));
            cells[t].bias_cap = bias[t] / md;
        }
        table.cells_.push_back(std::move(cells));
    }
    return table;
}

double BoundTable::lower(std::size_t group, std::size_t t, double alpha) const {
    const auto& c = cell(group, t);
    return lower_bound_from(c.estimate, c.variance, m_, t, lambda_, alpha);
}

double BoundTable::upper(std::size_t group, std::size_t t, double alpha) const {
    const auto& c = cell(group, t);
    return upper_bound_from(c.estimate, c.variance, c.bias_cap, m_, t, lambda_, alpha);
}

std::vector<double> BoundTable::lower_bounds(std::size_t group, std::size_t t_max, double alpha) const {
    if (t_max < 1 || t_max - 1 > max_threshold(group)) throw std::out_of_range("t_max beyond the logged depth");
    std::vector<double> out(t_max - 1);
    for (std::size_t t = 1; t < t_max; ++t) out[t - 1] = lower(group, t, alpha);
    return out;
}

void BoundTable::write_csv(std::ostream& out, double alpha, bool header) const {
    if (header) out << "group,t,lambda,m,estimate,variance,alpha,lower,upper,bias_cap\n";
    char buf[256];
    for (std::size_t g = 0; g < cells_.size(); ++g) {
        for (std::size_t t = 0; t < cells_[g].size(); ++t) {
            const auto& c = cells_[g][t];
            std::snprintf(buf, sizeof buf, ",%zu,%.17g,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", t, lambda_, m_,
                          c.estimate, c.variance, alpha, lower(g, t, alpha), upper(g, t, alpha), c.bias_cap);
            out << groups_[g] << buf;
        }
    }
}

}  // namespace fairstage
