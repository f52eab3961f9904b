#pragma once

// Shared numerics for the learner implementations. Not installed.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

namespace cmr::detail {

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double soft_threshold(double z, double gamma) {
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

// Row-wise softmax of a linear predictor matrix.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& eta);

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<int>& rows);
Eigen::VectorXd take_rows(const Eigen::VectorXd& x, const std::vector<int>& rows);

// Column standardization for penalized fits. Column 0 is the intercept and
// left alone; columns with no spread are marked unusable and zeroed.
struct Standardizer {
    Eigen::VectorXd center, scale;
    std::vector<char> usable;

    static Standardizer fit(const Eigen::MatrixXd& design, bool standardize);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& design) const;
    // Maps standardized coefficients back to the original design scale.
    Eigen::VectorXd unscale(const Eigen::VectorXd& beta) const;
    Eigen::VectorXd rescale(const Eigen::VectorXd& beta) const;
    bool any_usable() const;
};

// Minimizes 0.5 b'Gb - c'b + lambda * sum_{j penalized} |b_j| by cyclic
// coordinate descent, warm-started from b. Column 0 is never penalized.
// Returns the number of sweeps.
int quadratic_cd(const Eigen::MatrixXd& gram, const Eigen::VectorXd& linear, double lambda,
                 const std::vector<char>& usable, Eigen::VectorXd& b, double tolerance, int max_sweeps);

// Numerical rank of a design via column-pivoted QR.
Eigen::Index design_rank(const Eigen::MatrixXd& design);

// x' diag(w) x
Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& x, const Eigen::VectorXd& w);

} // namespace cmr::detail
