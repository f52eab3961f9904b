#include "cmr/learners.hpp"

#include "cmr/error.hpp"
#include "detail.hpp"

#include <algorithm>
#include <cmath>

namespace cmr {

namespace {

using detail::Standardizer;

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int classes) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    return y;
}

double multinomial_loglik(const Eigen::MatrixXd& x, const Eigen::MatrixXd& coef, const Eigen::MatrixXd& y) {
    Eigen::MatrixXd eta = x * coef;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        double mx = eta.row(i).maxCoeff();
        double lse = mx + std::log((eta.row(i).array() - mx).exp().sum());
        ll += y.row(i).dot(eta.row(i)) - lse;
    }
    return ll;
}

Eigen::MatrixXd intercept_start(const Eigen::MatrixXd& y, Eigen::Index p) {
    Eigen::Index k = y.cols();
    Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(p, k);
    Eigen::VectorXd freq = y.colwise().mean();
    for (Eigen::Index c = 1; c < k; ++c) coef(0, c) = std::log(std::max(freq(c), 1e-10) / std::max(freq(0), 1e-10));
    return coef;
}

std::shared_ptr<const MultinomialModel> fit_unpenalized(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                                        const MultinomialOptions& opt, FitInfo info) {
    const Eigen::Index n = x.rows(), p = x.cols(), k = y.cols(), q = p * (k - 1);
    double ridge = 0.0;
    if (detail::design_rank(x) < p) {
        ridge = 1e-8;
        info.warnings.push_back("rank-deficient design; ridge 1e-8 added to slopes");
    }
    auto penalty = [&](const Eigen::MatrixXd& c) {
        return ridge == 0.0 ? 0.0 : 0.5 * ridge * static_cast<double>(n) * c.bottomRows(p - 1).squaredNorm();
    };

    Eigen::MatrixXd coef = intercept_start(y, p);
    double ll = multinomial_loglik(x, coef, y) - penalty(coef);
    bool converged = false;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        Eigen::MatrixXd prob = detail::softmax_rows(x * coef);
        Eigen::VectorXd score(q);
        Eigen::MatrixXd hess(q, q);
        for (Eigen::Index a = 1; a < k; ++a) {
            Eigen::VectorXd g = x.transpose() * (y.col(a) - prob.col(a));
            g.tail(p - 1) -= ridge * static_cast<double>(n) * coef.col(a).tail(p - 1);
            score.segment((a - 1) * p, p) = g;
            for (Eigen::Index b = a; b < k; ++b) {
                Eigen::VectorXd w = -prob.col(a).cwiseProduct(prob.col(b));
                if (a == b) w += prob.col(a);
                Eigen::MatrixXd block = detail::weighted_gram(x, w);
                if (a == b) block.diagonal().tail(p - 1).array() += ridge * static_cast<double>(n);
                hess.block((a - 1) * p, (b - 1) * p, p, p) = block;
                if (a != b) hess.block((b - 1) * p, (a - 1) * p, p, p) = block.transpose();
            }
        }
        Eigen::VectorXd step = hess.ldlt().solve(score);
        if (!step.allFinite()) throw NumericalError("fit_multinomial: Newton step is not finite");
        Eigen::MatrixXd step_m = Eigen::MatrixXd::Zero(p, k);
        for (Eigen::Index a = 1; a < k; ++a) step_m.col(a) = step.segment((a - 1) * p, p);

        double prev = ll;
        double t = 1.0;
        Eigen::MatrixXd cand = coef + step_m;
        double cand_ll = multinomial_loglik(x, cand, y) - penalty(cand);
        for (int h = 0; h < 30 && !(cand_ll >= prev - 1e-12 * std::abs(prev)); ++h) {
            t *= 0.5;
            cand = coef + t * step_m;
            cand_ll = multinomial_loglik(x, cand, y) - penalty(cand);
        }
        coef = cand;
        ll = cand_ll;
        if (coef.cwiseAbs().maxCoeff() > 30.0)
            throw NumericalError("separation: a multinomial coefficient exceeded 30 in absolute value");

        Eigen::MatrixXd prob_new = detail::softmax_rows(x * coef);
        double max_grad = 0.0;
        for (Eigen::Index a = 1; a < k; ++a)
            max_grad = std::max(max_grad, (x.transpose() * (y.col(a) - prob_new.col(a))).cwiseAbs().maxCoeff() /
                                              static_cast<double>(n));
        if (2.0 * std::abs(ll - prev) < opt.tolerance * (2.0 * std::abs(ll) + 0.1) && max_grad < 1e-8) {
            converged = true;
            ++it;
            info.max_gradient = max_grad;
            break;
        }
    }
    if (!converged) throw NumericalError("fit_multinomial: Newton iterations did not converge");
    info.iterations = it;
    return std::make_shared<MultinomialModel>(std::move(coef), std::move(info));
}

// Per-class partial Newton with L1 coordinate descent on a standardized design.
class PenalizedMultinomial {
public:
    PenalizedMultinomial(Eigen::MatrixXd xs, Eigen::MatrixXd y, std::vector<char> usable)
        : xs_(std::move(xs)), y_(std::move(y)), usable_(std::move(usable)), n_(static_cast<double>(xs_.rows())) {}

    double lambda_max() const {
        double mx = 0.0;
        for (Eigen::Index c = 1; c < y_.cols(); ++c) {
            Eigen::VectorXd centered = (y_.col(c).array() - y_.col(c).mean()).matrix();
            for (Eigen::Index j = 1; j < xs_.cols(); ++j)
                if (usable_[static_cast<std::size_t>(j)])
                    mx = std::max(mx, std::abs(xs_.col(j).dot(centered)) / n_);
        }
        return mx;
    }

    Eigen::MatrixXd start() const { return intercept_start(y_, xs_.cols()); }
    Eigen::MatrixXd xs_times(const Eigen::MatrixXd& coef) const { return xs_ * coef; }

    // Returns the training deviance at the solution.
    double solve(double lambda, Eigen::MatrixXd& coef, int max_outer) const {
        Eigen::MatrixXd eta = xs_ * coef;
        for (int outer = 0; outer < max_outer; ++outer) {
            double change = 0.0;
            for (Eigen::Index c = 1; c < y_.cols(); ++c) {
                Eigen::MatrixXd prob = detail::softmax_rows(eta);
                Eigen::VectorXd w = (prob.col(c).array() * (1.0 - prob.col(c).array())).max(1e-5).matrix();
                Eigen::MatrixXd gram = detail::weighted_gram(xs_, w) / n_;
                Eigen::VectorXd b = coef.col(c);
                Eigen::VectorXd linear = gram * b + xs_.transpose() * (y_.col(c) - prob.col(c)) / n_;
                Eigen::VectorXd next = b;
                detail::quadratic_cd(gram, linear, lambda, usable_, next, 1e-9, 10000);
                Eigen::VectorXd delta = next - b;
                change = std::max(change, (delta.cwiseAbs().array() * gram.diagonal().cwiseSqrt().array()).maxCoeff());
                eta.col(c) += xs_ * delta;
                coef.col(c) = next;
            }
            if (!coef.allFinite()) throw NumericalError("fit_multinomial: coefficients diverged");
            if (change <= 1e-7) break;
        }
        return deviance(eta);
    }

    double deviance(const Eigen::MatrixXd& eta) const {
        double dev = 0.0;
        for (Eigen::Index i = 0; i < eta.rows(); ++i) {
            double mx = eta.row(i).maxCoeff();
            double lse = mx + std::log((eta.row(i).array() - mx).exp().sum());
            dev -= 2.0 * (y_.row(i).dot(eta.row(i)) - lse);
        }
        return dev;
    }

private:
    Eigen::MatrixXd xs_;
    Eigen::MatrixXd y_;
    std::vector<char> usable_;
    double n_;
};

Eigen::MatrixXd unscale(const Standardizer& s, const Eigen::MatrixXd& coef) {
    Eigen::MatrixXd out(coef.rows(), coef.cols());
    for (Eigen::Index c = 0; c < coef.cols(); ++c) out.col(c) = s.unscale(coef.col(c));
    return out;
}

double heldout_deviance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& coef, const std::vector<int>& labels) {
    Eigen::MatrixXd prob = detail::softmax_rows(x * coef);
    double dev = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        dev -= 2.0 * std::log(std::max(prob(static_cast<Eigen::Index>(i), labels[i]), 1e-15));
    return dev;
}

} // namespace

std::shared_ptr<const MultinomialModel> fit_multinomial(const Eigen::MatrixXd& design, const std::vector<int>& labels,
                                                        int classes, const MultinomialOptions& opt) {
    const Eigen::Index n = design.rows(), p = design.cols();
    if (static_cast<Eigen::Index>(labels.size()) != n)
        throw ValidationError("fit_multinomial: label count does not match design rows");
    if (classes < 2) throw ValidationError("fit_multinomial: need at least 2 classes");
    std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
    for (int l : labels) {
        if (l < 0 || l >= classes) throw ValidationError("fit_multinomial: label out of range");
        ++counts[static_cast<std::size_t>(l)];
    }
    for (int c = 0; c < classes; ++c)
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw ValidationError("fit_multinomial: class " + std::to_string(c) + " absent from training labels");

    FitInfo info;
    info.learner_id = opt.penalized ? "mn_glmnet" : "mn_glm";
    info.family = Family::multinomial;
    info.n_train = static_cast<std::size_t>(n);
    Eigen::MatrixXd y = one_hot(labels, classes);

    if (!opt.penalized) return fit_unpenalized(design, y, opt, std::move(info));

    Standardizer scaler = Standardizer::fit(design, true);
    if (!scaler.any_usable()) {
        info.warnings.push_back("all-constant design; intercept-only multinomial model returned");
        info.lambda = 0.0;
        return std::make_shared<MultinomialModel>(intercept_start(y, p), std::move(info));
    }
    PenalizedMultinomial full(scaler.apply(design), y, scaler.usable);
    std::vector<double> grid = opt.lambda_grid;
    if (grid.empty()) {
        double lmax = full.lambda_max();
        for (int k = 0; k < opt.n_lambda; ++k) {
            double frac = opt.n_lambda == 1 ? 0.0 : static_cast<double>(k) / (opt.n_lambda - 1);
            grid.push_back(lmax * std::pow(opt.lambda_min_ratio, frac));
        }
    }

    // Full-data path first; it ends early once the deviance stops moving,
    // and cross-validation runs over the truncated grid.
    std::vector<Eigen::MatrixXd> path;
    {
        Eigen::MatrixXd coef = full.start();
        double null_dev = full.deviance(full.xs_times(coef));
        double prev_dev = null_dev;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            double dev = full.solve(grid[k], coef, opt.max_iterations);
            path.push_back(coef);
            if (opt.lambda_grid.empty() && k >= 4 &&
                ((prev_dev - dev) < 1e-5 * prev_dev || dev < 1e-3 * null_dev))
                break;
            prev_dev = dev;
        }
        grid.resize(path.size());
    }

    std::size_t chosen = 0;
    if (grid.size() > 1) {
        if (opt.cv_folds < 2 || n < opt.cv_folds) throw ValidationError("fit_multinomial: need n >= cv_folds >= 2");
        Eigen::VectorXd label_vec(n);
        for (Eigen::Index i = 0; i < n; ++i) label_vec(i) = labels[static_cast<std::size_t>(i)];
        auto folds = cv_fold_ids(label_vec, opt.cv_folds, opt.seed, true);
        std::vector<double> loss(grid.size(), 0.0);
        for (int v = 0; v < opt.cv_folds; ++v) {
            std::vector<int> train, test;
            std::vector<int> test_labels;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (folds[static_cast<std::size_t>(i)] == v) {
                    test.push_back(static_cast<int>(i));
                    test_labels.push_back(labels[static_cast<std::size_t>(i)]);
                } else {
                    train.push_back(static_cast<int>(i));
                }
            }
            Eigen::MatrixXd xtr = detail::take_rows(design, train), xte = detail::take_rows(design, test);
            Eigen::MatrixXd ytr = y(train, Eigen::all);
            auto s = Standardizer::fit(xtr, true);
            PenalizedMultinomial prob(s.apply(xtr), ytr, s.usable);
            Eigen::MatrixXd coef = prob.start();
            for (std::size_t k = 0; k < grid.size(); ++k) {
                if (s.any_usable()) prob.solve(grid[k], coef, opt.max_iterations);
                loss[k] += heldout_deviance(xte, unscale(s, coef), test_labels);
            }
        }
        chosen = static_cast<std::size_t>(std::min_element(loss.begin(), loss.end()) - loss.begin());
        info.cv_risk = loss[chosen] / static_cast<double>(n);
    }
    const Eigen::MatrixXd& coef = path[chosen];
    info.lambda = grid[chosen];
    return std::make_shared<MultinomialModel>(unscale(scaler, coef), std::move(info));
}

} // namespace cmr
