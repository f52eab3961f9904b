#include "cmr/learners.hpp"

#include "cmr/error.hpp"
#include "detail.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cmr {

namespace {

using detail::Standardizer;

double clamp_prob(double p) { return std::min(std::max(p, 1e-15), 1.0 - 1e-15); }

// Penalized fit on an already standardized design (column 0 = intercept).
class LassoProblem {
public:
    LassoProblem(Eigen::MatrixXd xs, const Eigen::VectorXd& y, Family family, std::vector<char> usable, double tol,
                 int max_sweeps)
        : xs_(std::move(xs)), y_(y), family_(family), usable_(std::move(usable)), tol_(tol), max_sweeps_(max_sweeps) {
        n_ = static_cast<double>(xs_.rows());
        if (family_ == Family::gaussian) {
            gram_ = xs_.transpose() * xs_ / n_;
            linear_ = xs_.transpose() * y_ / n_;
        }
    }

    Eigen::VectorXd start() const {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(xs_.cols());
        double ybar = y_.mean();
        b(0) = family_ == Family::binomial ? std::log(clamp_prob(ybar) / (1 - clamp_prob(ybar))) : ybar;
        return b;
    }

    double lambda_max() const {
        Eigen::VectorXd centered = (y_.array() - y_.mean()).matrix();
        double mx = 0.0;
        for (Eigen::Index j = 1; j < xs_.cols(); ++j)
            if (usable_[static_cast<std::size_t>(j)]) mx = std::max(mx, std::abs(xs_.col(j).dot(centered)) / n_);
        return mx;
    }

    // Solves at lambda, warm-starting from b. Returns total CD sweeps.
    int solve(double lambda, Eigen::VectorXd& b) const {
        if (family_ == Family::gaussian)
            return detail::quadratic_cd(gram_, linear_, lambda, usable_, b, tol_, max_sweeps_);
        int sweeps = 0;
        double obj = objective(b, lambda);
        for (int outer = 0; outer < 200; ++outer) {
            Eigen::VectorXd eta = xs_ * b;
            Eigen::VectorXd mu = eta.unaryExpr([](double v) { return detail::sigmoid(v); });
            Eigen::VectorXd w = (mu.array() * (1.0 - mu.array())).max(1e-5).matrix();
            Eigen::MatrixXd gram = detail::weighted_gram(xs_, w) / n_;
            Eigen::VectorXd linear = gram * b + xs_.transpose() * (y_ - mu) / n_;
            Eigen::VectorXd next = b;
            sweeps += detail::quadratic_cd(gram, linear, lambda, usable_, next, tol_, max_sweeps_);
            double next_obj = objective(next, lambda);
            for (int halve = 0; halve < 40 && next_obj > obj + 1e-15 * (1.0 + std::abs(obj)); ++halve) {
                next = 0.5 * (next + b);
                next_obj = objective(next, lambda);
            }
            double change = (next - b).cwiseAbs().maxCoeff();
            b = next;
            obj = next_obj;
            if (change <= 1e-11 * (1.0 + b.cwiseAbs().maxCoeff())) break;
        }
        if (!b.allFinite()) throw NumericalError("fit_lasso: coefficients diverged");
        return sweeps;
    }

    double kkt_violation(const Eigen::VectorXd& b, double lambda) const {
        Eigen::VectorXd mu = xs_ * b;
        if (family_ == Family::binomial) mu = mu.unaryExpr([](double v) { return detail::sigmoid(v); });
        Eigen::VectorXd grad = xs_.transpose() * (y_ - mu) / n_;
        double worst = std::abs(grad(0));
        for (Eigen::Index j = 1; j < b.size(); ++j) {
            if (!usable_[static_cast<std::size_t>(j)]) continue;
            double v = b(j) == 0.0 ? std::max(0.0, std::abs(grad(j)) - lambda)
                                   : std::abs(grad(j) - lambda * (b(j) > 0 ? 1.0 : -1.0));
            worst = std::max(worst, v);
        }
        return worst;
    }

private:
    double objective(const Eigen::VectorXd& b, double lambda) const {
        Eigen::VectorXd eta = xs_ * b;
        double nll = 0.0;
        for (Eigen::Index i = 0; i < eta.size(); ++i) nll += detail::softplus(eta(i)) - y_(i) * eta(i);
        double pen = 0.0;
        for (Eigen::Index j = 1; j < b.size(); ++j) pen += std::abs(b(j));
        return nll / n_ + lambda * pen;
    }

    Eigen::MatrixXd xs_;
    Eigen::VectorXd y_;
    Family family_;
    std::vector<char> usable_;
    double tol_;
    int max_sweeps_;
    double n_ = 0.0;
    Eigen::MatrixXd gram_;
    Eigen::VectorXd linear_;
};

bool is_constant(const Eigen::VectorXd& y) { return y.size() == 0 || y.maxCoeff() == y.minCoeff(); }

Eigen::VectorXd intercept_only(const Eigen::VectorXd& y, Family family, Eigen::Index p) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double ybar = y.mean();
    beta(0) = family == Family::binomial ? std::log(clamp_prob(ybar) / (1 - clamp_prob(ybar))) : ybar;
    return beta;
}

double heldout_loss(const Eigen::VectorXd& eta, const Eigen::VectorXd& y, Family family) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (family == Family::gaussian) {
            double r = y(i) - eta(i);
            loss += r * r;
        } else {
            double p = clamp_prob(detail::sigmoid(eta(i)));
            loss += -2.0 * (y(i) * std::log(p) + (1 - y(i)) * std::log(1 - p));
        }
    }
    return loss;
}

std::vector<double> make_grid(double lambda_max, int count, double min_ratio) {
    std::vector<double> grid(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        double frac = count == 1 ? 0.0 : static_cast<double>(k) / (count - 1);
        grid[static_cast<std::size_t>(k)] = lambda_max * std::pow(min_ratio, frac);
    }
    return grid;
}

} // namespace

double lasso_lambda_max(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, bool standardize) {
    auto s = Standardizer::fit(design, standardize);
    LassoProblem prob(s.apply(design), response, Family::gaussian, s.usable, 1e-13, 1);
    return prob.lambda_max();
}

std::shared_ptr<const LinearModel> fit_lasso(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                             Family family, const LassoOptions& opt) {
    if (family == Family::multinomial) throw std::invalid_argument("fit_lasso: use fit_multinomial for multiclass");
    const Eigen::Index n = design.rows(), p = design.cols();
    if (response.size() != n) throw ValidationError("fit_lasso: response length does not match design rows");
    if (n == 0 || p == 0) throw ValidationError("fit_lasso: empty design");
    check_response(response, family);

    FitInfo info;
    info.learner_id = "lasso";
    info.family = family;
    info.n_train = static_cast<std::size_t>(n);

    Standardizer scaler = Standardizer::fit(design, opt.standardize);
    if (!scaler.any_usable())
        throw ValidationError("fit_lasso: all-constant design; a penalized learner needs a non-constant column");
    if (is_constant(response)) {
        info.warnings.push_back("constant response; intercept-only model returned");
        info.lambda = 0.0;
        return std::make_shared<LinearModel>(intercept_only(response, family, p), std::move(info));
    }

    LassoProblem full(scaler.apply(design), response, family, scaler.usable, opt.tolerance, opt.max_sweeps);
    std::vector<double> grid = opt.lambda_grid;
    if (grid.empty()) grid = make_grid(full.lambda_max(), opt.n_lambda, opt.lambda_min_ratio);
    for (std::size_t k = 1; k < grid.size(); ++k)
        if (grid[k] > grid[k - 1]) throw ValidationError("fit_lasso: lambda grid must be decreasing");

    std::size_t chosen = 0;
    if (grid.size() > 1) {
        if (opt.cv_folds < 2 || n < opt.cv_folds)
            throw ValidationError("fit_lasso: need n >= cv_folds >= 2");
        auto folds = cv_fold_ids(response, opt.cv_folds, opt.seed, family == Family::binomial);
        std::vector<double> loss(grid.size(), 0.0);
        for (int v = 0; v < opt.cv_folds; ++v) {
            std::vector<int> train, test;
            for (Eigen::Index i = 0; i < n; ++i) (folds[static_cast<std::size_t>(i)] == v ? test : train).push_back(static_cast<int>(i));
            Eigen::MatrixXd xtr = detail::take_rows(design, train), xte = detail::take_rows(design, test);
            Eigen::VectorXd ytr = detail::take_rows(response, train), yte = detail::take_rows(response, test);
            auto s = Standardizer::fit(xtr, opt.standardize);
            if (is_constant(ytr) || !s.any_usable()) {
                Eigen::VectorXd beta = intercept_only(ytr, family, p);
                double l = heldout_loss(xte * beta, yte, family);
                for (auto& x : loss) x += l;
                continue;
            }
            LassoProblem prob(s.apply(xtr), ytr, family, s.usable, opt.tolerance, opt.max_sweeps);
            Eigen::VectorXd b = prob.start();
            for (std::size_t k = 0; k < grid.size(); ++k) {
                prob.solve(grid[k], b);
                loss[k] += heldout_loss(xte * s.unscale(b), yte, family);
            }
        }
        chosen = static_cast<std::size_t>(std::min_element(loss.begin(), loss.end()) - loss.begin());
        info.cv_risk = loss[chosen] / static_cast<double>(n);
    }

    Eigen::VectorXd b = full.start();
    int sweeps = 0;
    for (std::size_t k = 0; k <= chosen; ++k) sweeps += full.solve(grid[k], b);
    info.iterations = sweeps;
    info.lambda = grid[chosen];
    info.kkt_violation = full.kkt_violation(b, grid[chosen]);
    return std::make_shared<LinearModel>(scaler.unscale(b), std::move(info));
}

} // namespace cmr
