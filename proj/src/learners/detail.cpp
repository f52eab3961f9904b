#include "detail.hpp"

#include <algorithm>

namespace cmr::detail {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& eta) {
    Eigen::VectorXd mx = eta.rowwise().maxCoeff();
    Eigen::MatrixXd p = (eta.colwise() - mx).array().exp().matrix();
    Eigen::VectorXd total = p.rowwise().sum();
    p.array().colwise() /= total.array();
    return p;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<int>& rows) {
    return x(rows, Eigen::all);
}

Eigen::VectorXd take_rows(const Eigen::VectorXd& x, const std::vector<int>& rows) {
    return x(rows);
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& design, bool standardize) {
    Eigen::Index p = design.cols();
    double n = static_cast<double>(design.rows());
    Standardizer s;
    s.center = Eigen::VectorXd::Zero(p);
    s.scale = Eigen::VectorXd::Ones(p);
    s.usable.assign(static_cast<std::size_t>(p), 1);
    for (Eigen::Index j = 1; j < p; ++j) {
        double mean = design.col(j).sum() / n;
        double sd = std::sqrt((design.col(j).array() - mean).square().sum() / n);
        if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) {
            s.usable[static_cast<std::size_t>(j)] = 0;
            s.center(j) = mean;
            continue;
        }
        if (standardize) {
            s.center(j) = mean;
            s.scale(j) = sd;
        }
    }
    return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& design) const {
    Eigen::MatrixXd out(design.rows(), design.cols());
    out.col(0).setOnes();
    for (Eigen::Index j = 1; j < design.cols(); ++j) {
        if (!usable[static_cast<std::size_t>(j)])
            out.col(j).setZero();
        else
            out.col(j) = (design.col(j).array() - center(j)) / scale(j);
    }
    return out;
}

Eigen::VectorXd Standardizer::unscale(const Eigen::VectorXd& b) const {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(b.size());
    beta(0) = b(0);
    for (Eigen::Index j = 1; j < b.size(); ++j) {
        if (!usable[static_cast<std::size_t>(j)]) continue;
        beta(j) = b(j) / scale(j);
        beta(0) -= beta(j) * center(j);
    }
    return beta;
}

Eigen::VectorXd Standardizer::rescale(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(beta.size());
    b(0) = beta(0);
    for (Eigen::Index j = 1; j < beta.size(); ++j) {
        if (!usable[static_cast<std::size_t>(j)]) continue;
        b(j) = beta(j) * scale(j);
        b(0) += beta(j) * center(j);
    }
    return b;
}

bool Standardizer::any_usable() const {
    return std::any_of(usable.begin() + 1, usable.end(), [](char u) { return u != 0; });
}

int quadratic_cd(const Eigen::MatrixXd& gram, const Eigen::VectorXd& linear, double lambda,
                 const std::vector<char>& usable, Eigen::VectorXd& b, double tolerance, int max_sweeps) {
    Eigen::Index p = gram.rows();
    for (Eigen::Index j = 0; j < p; ++j)
        if (!usable[static_cast<std::size_t>(j)]) b(j) = 0.0;
    Eigen::VectorXd gb = gram * b;
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        double max_delta = 0.0;
        double max_coef = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!usable[static_cast<std::size_t>(j)]) continue;
            double gjj = gram(j, j);
            if (!(gjj > 0.0)) continue;
            double r = linear(j) - (gb(j) - gjj * b(j));
            double updated = j == 0 ? r / gjj : soft_threshold(r, lambda) / gjj;
            double delta = updated - b(j);
            if (delta != 0.0) {
                gb += delta * gram.col(j);
                b(j) = updated;
                max_delta = std::max(max_delta, std::abs(delta) * std::sqrt(gjj));
            }
            max_coef = std::max(max_coef, std::abs(b(j)) * std::sqrt(gjj));
        }
        if (max_delta <= tolerance * (1.0 + max_coef)) return sweep + 1;
    }
    return sweep;
}

Eigen::Index design_rank(const Eigen::MatrixXd& design) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    return qr.rank();
}

Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& x, const Eigen::VectorXd& w) {
    Eigen::MatrixXd wx = (x.array().colwise() * w.array()).matrix();
    Eigen::MatrixXd g = wx.transpose() * x;
    return 0.5 * (g + g.transpose());
}

} // namespace cmr::detail
