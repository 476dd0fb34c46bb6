#pragma once

#include "fairstage/clicklog.hpp"

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace fairstage {

/// Z = sum over ranks 1..t of min(lambda, 1/p) * click for one request.
/// `depth` is how many ranks were logged for the group; a slate shorter than
/// `depth` ran out of items, and the missing ranks contribute nothing.
/// Throws std::out_of_range when t > depth.
double cipw_per_request(std::span<const LoggedPosition> slate, std::size_t t, double lambda,
                        std::size_t depth);
double cipw_per_request(std::span<const LoggedPosition> slate, std::size_t t, double lambda);

// Clipped IPW estimate of U_g(t): the mean of cipw_per_request over the log.
double cipw_estimate(const InteractionLog& log, std::size_t group, std::size_t t, double lambda);
// Unclipped (lambda = +inf) estimate.
double ipw_estimate(const InteractionLog& log, std::size_t group, std::size_t t);

/// V_m = 1/(m(m-1)) * sum_{i<j} (z_i - z_j)^2, computed in one pass.
double sample_variance(std::span<const double> z);

// Bound formulas on precomputed statistics; t = 0 gives exactly 0.
double lower_bound_from(double estimate, double variance, std::size_t m, std::size_t t, double lambda,
                        double alpha);
double upper_bound_from(double estimate, double variance, double bias_cap, std::size_t m, std::size_t t,
                        double lambda, double alpha);

/// The same arithmetic with the confidence terms supplied directly:
/// log2 = ln(2/alpha), log4 = ln(4/alpha). No domain check on alpha.
double lower_bound_kernel(double estimate, double variance, std::size_t m, std::size_t t, double lambda,
                          double log2);
double upper_bound_kernel(double estimate, double variance, double bias_cap, std::size_t m, std::size_t t,
                          double lambda, double log2, double log4);

double lower_bound(const InteractionLog& log, std::size_t group, std::size_t t, double lambda, double alpha);
double upper_bound(const InteractionLog& log, std::size_t group, std::size_t t, double lambda, double alpha);

struct BoundCell {
    double estimate = 0.0;
    double variance = 0.0;
    // (1/m) sum_i sum_{j<=t} max(0, 1 - lambda p_ij)
    double bias_cap = 0.0;
};

/// Per (group, t) statistics of one log at one clipping level, for
/// t in [0 : depth_g]. Bounds at any failure probability are derived on demand.
class BoundTable {
public:
    static BoundTable build(const InteractionLog& log, double lambda);
    // Same, after checking the log was ranked by `model`; throws FingerprintMismatch.
    static BoundTable build(const InteractionLog& log, const RelevanceModel& model, double lambda);

    std::size_t group_count() const noexcept { return cells_.size(); }
    std::size_t max_threshold(std::size_t group) const { return cells_.at(group).size() - 1; }
    const BoundCell& cell(std::size_t group, std::size_t t) const { return cells_.at(group).at(t); }
    const std::vector<std::string>& groups() const noexcept { return groups_; }
    double lambda() const noexcept { return lambda_; }
    std::size_t m() const noexcept { return m_; }

    double estimate(std::size_t group, std::size_t t) const { return cell(group, t).estimate; }
    double lower(std::size_t group, std::size_t t, double alpha) const;
    double upper(std::size_t group, std::size_t t, double alpha) const;
    // Lower bounds for t = 1..t_max-1 (index 0 holds t = 1).
    std::vector<double> lower_bounds(std::size_t group, std::size_t t_max, double alpha) const;

    /// `group,t,lambda,m,estimate,variance,alpha,lower,upper,bias_cap`
    void write_csv(std::ostream& out, double alpha, bool header = true) const;

private:
    std::vector<std::string> groups_;
    std::vector<std::vector<BoundCell>> cells_;
    double lambda_ = 0.0;
    std::size_t m_ = 0;
};

// Throws FingerprintMismatch when the log was not ranked by `model`.
void check_fingerprint(const InteractionLog& log, const RelevanceModel& model);

}  // namespace fairstage
