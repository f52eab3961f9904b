#include "cmr/learners.hpp"

#include "cmr/error.hpp"
#include "detail.hpp"

#include <cmath>
#include <stdexcept>

namespace cmr {

namespace {

bool is_intercept(const Eigen::MatrixXd& design, Eigen::Index j) {
    return design.rows() > 0 && (design.col(j).array() == 1.0).all();
}

double binomial_loglik(const Eigen::VectorXd& eta, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += w(i) * (y(i) * eta(i) - detail::softplus(eta(i)));
    return ll;
}

} // namespace

std::shared_ptr<const LinearModel> fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                           Family family, const Eigen::VectorXd* weights, const GlmOptions& opt) {
    if (family == Family::multinomial) throw std::invalid_argument("fit_glm: use fit_multinomial for multiclass");
    const Eigen::Index n = design.rows(), p = design.cols();
    if (response.size() != n) throw ValidationError("fit_glm: response length does not match design rows");
    if (n == 0 || p == 0) throw ValidationError("fit_glm: empty design");
    check_response(response, family);

    Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(n);
    if (w.size() != n || (w.array() < 0).any()) throw ValidationError("fit_glm: invalid prior weights");
    const double wsum = w.sum();
    if (!(wsum > 0)) throw ValidationError("fit_glm: prior weights sum to zero");

    FitInfo info;
    info.learner_id = "glm";
    info.family = family;
    info.n_train = static_cast<std::size_t>(n);

    // Rank of the weighted design; ridge on slopes when deficient.
    Eigen::VectorXd ridge = Eigen::VectorXd::Zero(p);
    {
        Eigen::MatrixXd wx = w.array().sqrt().matrix().asDiagonal() * design;
        if (detail::design_rank(wx) < p) {
            if (!opt.ridge_fallback) throw NumericalError("fit_glm: rank-deficient design");
            for (Eigen::Index j = 0; j < p; ++j)
                if (!is_intercept(design, j)) ridge(j) = opt.ridge;
            info.warnings.push_back("rank-deficient design; ridge " + std::to_string(opt.ridge) + " added to slopes");
        }
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd grad(p);

    if (family == Family::gaussian) {
        Eigen::MatrixXd h = detail::weighted_gram(design, w);
        h.diagonal() += ridge * wsum;
        beta = h.ldlt().solve(design.transpose() * (w.array() * response.array()).matrix());
        // One refinement step removes most of the normal-equation rounding.
        Eigen::VectorXd r = response - design * beta;
        Eigen::VectorXd g = design.transpose() * (w.array() * r.array()).matrix() - (ridge * wsum).cwiseProduct(beta);
        beta += h.ldlt().solve(g);
        r = response - design * beta;
        grad = design.transpose() * (w.array() * r.array()).matrix() / wsum - ridge.cwiseProduct(beta);
        info.iterations = 1;
        info.max_gradient = grad.cwiseAbs().maxCoeff();
        return std::make_shared<LinearModel>(std::move(beta), std::move(info));
    }

    // Binomial: Newton-Raphson (IRLS) with step halving.
    for (Eigen::Index j = 0; j < p; ++j) {
        if (is_intercept(design, j)) {
            double ybar = (w.array() * response.array()).sum() / wsum;
            ybar = std::min(std::max(ybar, 1e-6), 1 - 1e-6);
            beta(j) = std::log(ybar / (1 - ybar));
            break;
        }
    }
    auto penalized_ll = [&](const Eigen::VectorXd& b) {
        return binomial_loglik(design * b, response, w) - 0.5 * wsum * (ridge.array() * b.array().square()).sum();
    };
    double ll = penalized_ll(beta);
    bool converged = false;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        Eigen::VectorXd eta = design * beta;
        Eigen::VectorXd mu = eta.unaryExpr([](double v) { return detail::sigmoid(v); });
        Eigen::VectorXd var = (w.array() * mu.array() * (1.0 - mu.array())).matrix();
        Eigen::VectorXd score =
            design.transpose() * (w.array() * (response - mu).array()).matrix() - wsum * ridge.cwiseProduct(beta);
        grad = score / wsum;
        Eigen::MatrixXd h = detail::weighted_gram(design, var);
        h.diagonal() += ridge * wsum;
        Eigen::VectorXd step = h.ldlt().solve(score);
        if (!step.allFinite()) throw NumericalError("fit_glm: Newton step is not finite");

        double prev = ll;
        double t = 1.0;
        Eigen::VectorXd candidate = beta + step;
        double cand_ll = penalized_ll(candidate);
        for (int halve = 0; halve < 30 && !(cand_ll >= prev - 1e-12 * std::abs(prev)); ++halve) {
            t *= 0.5;
            candidate = beta + t * step;
            cand_ll = penalized_ll(candidate);
        }
        beta = candidate;
        ll = cand_ll;
        if (beta.cwiseAbs().maxCoeff() > opt.separation_bound)
            throw NumericalError("separation: a coefficient exceeded " + std::to_string(opt.separation_bound) +
                                 " in absolute value");

        Eigen::VectorXd mu_new = (design * beta).unaryExpr([](double v) { return detail::sigmoid(v); });
        grad = (design.transpose() * (w.array() * (response - mu_new).array()).matrix()) / wsum -
               ridge.cwiseProduct(beta);
        double dev_change = 2.0 * std::abs(ll - prev);
        if (dev_change < opt.deviance_tolerance * (2.0 * std::abs(ll) + 0.1) &&
            grad.cwiseAbs().maxCoeff() < opt.gradient_tolerance) {
            converged = true;
            ++it;
            break;
        }
    }
    if (!converged)
        throw NumericalError("fit_glm: IRLS did not converge in " + std::to_string(opt.max_iterations) + " iterations");
    info.iterations = it;
    info.max_gradient = grad.cwiseAbs().maxCoeff();
    return std::make_shared<LinearModel>(std::move(beta), std::move(info));
}

} // namespace cmr
