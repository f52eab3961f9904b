#include "cmr/inference.hpp"

#include "cmr/error.hpp"
#include "cmr/parallel.hpp"
#include "cmr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cmr {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -HUGE_VAL;
        if (p == 1.0) return HUGE_VAL;
        throw ValidationError("normal_quantile: probability outside [0, 1]");
    }
    // Acklam's rational approximation (relative error ~1.15e-9).
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double low = 0.02425, high = 1 - 0.02425;
    double x;
    if (p < low) {
        double q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p <= high) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        double q = std::sqrt(-2 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    // Newton refinement on the CDF, using the upper tail for p > 0.5.
    double density = std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi);
    if (density > 0) {
        // Phi(x) - p, written through the upper tail when p > 0.5 to keep precision
        double err = p < 0.5 ? normal_cdf(x) - p : (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2);
        x -= err / density;
    }
    return x;
}

Interval wald_ci(double estimate, double se, double level) {
    if (!(se >= 0)) throw ValidationError("wald_ci: standard error must be non-negative");
    if (!(level > 0 && level < 1)) throw ValidationError("wald_ci: level must lie in (0, 1)");
    double z = normal_quantile(0.5 * (1.0 + level));
    return {estimate - z * se, estimate + z * se};
}

Eigen::MatrixXd correlation_from_influence(const Eigen::MatrixXd& influence, const Eigen::VectorXd& denom_counts) {
    Eigen::MatrixXd scaled = influence * denom_counts.cwiseInverse().asDiagonal();
    Eigen::MatrixXd cov = scaled.transpose() * scaled;
    Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
    Eigen::MatrixXd r(cov.rows(), cov.cols());
    for (Eigen::Index i = 0; i < cov.rows(); ++i)
        for (Eigen::Index j = 0; j < cov.cols(); ++j)
            r(i, j) = i == j ? 1.0 : (sd(i) > 0 && sd(j) > 0 ? cov(i, j) / (sd(i) * sd(j)) : 0.0);
    return r;
}

Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& r, double floor, bool* projected) {
    Eigen::MatrixXd sym = 0.5 * (r + r.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    Eigen::VectorXd ev = es.eigenvalues();
    bool changed = (ev.array() < floor).any();
    if (projected) *projected = changed;
    if (!changed) return sym;
    Eigen::MatrixXd fixed = es.eigenvectors() * ev.cwiseMax(floor).asDiagonal() * es.eigenvectors().transpose();
    Eigen::VectorXd d = fixed.diagonal().cwiseSqrt().cwiseInverse();
    return d.asDiagonal() * fixed * d.asDiagonal();
}

double sup_t_critical_value(const Eigen::MatrixXd& correlation, double level, int draws, std::uint64_t seed,
                            int workers) {
    if (draws < 1) throw ValidationError("simultaneous bands need at least one draw");
    if (!(level > 0 && level < 1)) throw ValidationError("band level must lie in (0, 1)");
    const Eigen::Index t = correlation.rows();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(correlation);
    Eigen::MatrixXd root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    constexpr int chunk = 4096;
    const int chunks = (draws + chunk - 1) / chunk;
    std::vector<double> maxima(static_cast<std::size_t>(draws));
    parallel_for(static_cast<std::size_t>(chunks), workers, [&](std::size_t c) {
        Rng rng(derive_seed(seed, 0x5CB, c));
        std::normal_distribution<double> normal;
        int begin = static_cast<int>(c) * chunk;
        int end = std::min(draws, begin + chunk);
        Eigen::VectorXd eps(t);
        for (int d = begin; d < end; ++d) {
            for (Eigen::Index j = 0; j < t; ++j) eps(j) = normal(rng);
            maxima[static_cast<std::size_t>(d)] = (root * eps).cwiseAbs().maxCoeff();
        }
    });
    // Smallest order statistic with empirical CDF >= level.
    std::size_t k = static_cast<std::size_t>(std::ceil(level * draws));
    k = std::clamp<std::size_t>(k, 1, maxima.size()) - 1;
    std::nth_element(maxima.begin(), maxima.begin() + static_cast<std::ptrdiff_t>(k), maxima.end());
    return maxima[k];
}

BandResult simultaneous_bands(const std::vector<double>& estimates, const std::vector<double>& se,
                              const Eigen::MatrixXd& correlation, double level, int draws, std::uint64_t seed,
                              int workers) {
    if (estimates.size() != se.size() || static_cast<Eigen::Index>(estimates.size()) != correlation.rows() ||
        correlation.rows() != correlation.cols())
        throw ValidationError("simultaneous_bands: dimension mismatch");
    BandResult out;
    if (estimates.empty()) return out;
    Eigen::MatrixXd r = nearest_correlation(correlation, 1e-10, &out.projected);
    if (out.projected)
        out.warnings.push_back("estimated correlation matrix was not positive semidefinite; projected");
    out.critical_value = sup_t_critical_value(r, level, draws, seed, workers);
    for (std::size_t j = 0; j < estimates.size(); ++j)
        out.bands.push_back({estimates[j] - out.critical_value * se[j], estimates[j] + out.critical_value * se[j]});
    return out;
}

} // namespace cmr
