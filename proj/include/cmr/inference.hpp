#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cmr {

double normal_cdf(double x);

// Inverse standard-normal CDF: rational approximation refined by one
// Newton step; absolute error below 1e-9 on (1e-300, 1 - 1e-16).
double normal_quantile(double p);

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

// estimate +/- z_{(1 + level)/2} * se
Interval wald_ci(double estimate, double se, double level);

// Correlation of target estimates from per-row influence contributions
// (columns = targets, rows aligned across targets) scaled by each target's
// membership count.
Eigen::MatrixXd correlation_from_influence(const Eigen::MatrixXd& influence, const Eigen::VectorXd& denom_counts);

// Nearest correlation matrix by eigenvalue clipping at `floor` followed by
// unit-diagonal rescaling. Sets *projected when clipping changed anything.
Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& r, double floor = 1e-10, bool* projected = nullptr);

struct BandResult {
    double critical_value = 0.0;
    std::vector<Interval> bands;
    bool projected = false;
    std::vector<std::string> warnings;
};

// Sup-t simultaneous bands: c is the `level` quantile of max_j |Z_j| over
// `draws` draws of Z ~ N(0, R); bands are estimate +/- c * se. Draws are
// produced in fixed-size chunks with per-chunk seeds so the result does not
// depend on `workers`.
BandResult simultaneous_bands(const std::vector<double>& estimates, const std::vector<double>& se,
                              const Eigen::MatrixXd& correlation, double level, int draws, std::uint64_t seed,
                              int workers = 1);

// Critical value only.
double sup_t_critical_value(const Eigen::MatrixXd& correlation, double level, int draws, std::uint64_t seed,
                            int workers = 1);

} // namespace cmr
