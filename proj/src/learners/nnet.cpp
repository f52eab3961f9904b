#include "cmr/learners.hpp"

#include "cmr/error.hpp"
#include "cmr/rng.hpp"
#include "detail.hpp"

#include <cmath>
#include <tuple>

namespace cmr {

namespace {

// Weights flattened as [hidden, hidden_bias, output, output_bias], column-major.
struct Layout {
    Eigen::Index p, h, k;
    Eigen::Index size() const { return p * h + h + h * k + k; }

    void unpack(const Eigen::VectorXd& t, NeuralNetModel::Weights& w) const {
        Eigen::Index at = 0;
        w.hidden = Eigen::Map<const Eigen::MatrixXd>(t.data() + at, p, h);
        at += p * h;
        w.hidden_bias = Eigen::Map<const Eigen::RowVectorXd>(t.data() + at, h);
        at += h;
        w.output = Eigen::Map<const Eigen::MatrixXd>(t.data() + at, h, k);
        at += h * k;
        w.output_bias = Eigen::Map<const Eigen::RowVectorXd>(t.data() + at, k);
    }
};

// Loss and gradient of a one-hidden-layer network. The loss is half mean
// squared error (gaussian) or mean negative log-likelihood (binomial,
// multinomial), so the output-layer error is (prediction - target) / n in
// every case.
class NetObjective {
public:
    NetObjective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets, Family family, Layout layout)
        : x_(x), targets_(targets), family_(family), layout_(layout) {}

    double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
        NeuralNetModel::Weights w;
        layout_.unpack(theta, w);
        const double nd = static_cast<double>(x_.rows());
        Eigen::MatrixXd hidden = ((x_ * w.hidden).rowwise() + w.hidden_bias).unaryExpr([](double v) {
            return detail::sigmoid(v);
        });
        Eigen::MatrixXd out = (hidden * w.output).rowwise() + w.output_bias;
        double loss = 0.0;
        if (family_ == Family::binomial) {
            for (Eigen::Index i = 0; i < out.rows(); ++i)
                loss += detail::softplus(out(i, 0)) - targets_(i, 0) * out(i, 0);
            out = out.unaryExpr([](double v) { return detail::sigmoid(v); });
        } else if (family_ == Family::multinomial) {
            for (Eigen::Index i = 0; i < out.rows(); ++i) {
                double mx = out.row(i).maxCoeff();
                double lse = mx + std::log((out.row(i).array() - mx).exp().sum());
                loss += lse - targets_.row(i).dot(out.row(i));
            }
            out = detail::softmax_rows(out);
        } else {
            loss = 0.5 * (out - targets_).squaredNorm();
        }
        loss /= nd;
        if (grad && std::isfinite(loss)) {
            Eigen::MatrixXd d_out = (out - targets_) / nd;
            Eigen::MatrixXd d_hidden =
                (d_out * w.output.transpose()).array() * hidden.array() * (1.0 - hidden.array());
            const auto [p, h, k] = std::tuple{layout_.p, layout_.h, layout_.k};
            grad->resize(layout_.size());
            Eigen::Index at = 0;
            Eigen::Map<Eigen::MatrixXd>(grad->data() + at, p, h) = x_.transpose() * d_hidden;
            at += p * h;
            Eigen::Map<Eigen::RowVectorXd>(grad->data() + at, h) = d_hidden.colwise().sum();
            at += h;
            Eigen::Map<Eigen::MatrixXd>(grad->data() + at, h, k) = hidden.transpose() * d_out;
            at += h * k;
            Eigen::Map<Eigen::RowVectorXd>(grad->data() + at, k) = d_out.colwise().sum();
        }
        return loss;
    }

private:
    const Eigen::MatrixXd& x_;
    const Eigen::MatrixXd& targets_;
    Family family_;
    Layout layout_;
};

// Variable-metric (BFGS) minimization with backtracking line search, in
// the manner of the optimizer behind R's nnet. Returns the iteration count.
int minimize_bfgs(const NetObjective& f, Eigen::VectorXd& theta, int max_iterations, double reltol) {
    constexpr double accept = 1e-4, shrink = 0.2;
    const Eigen::Index q = theta.size();
    Eigen::VectorXd grad, next_grad;
    double value = f(theta, &grad);
    if (!std::isfinite(value)) throw NumericalError("fit_nnet: non-finite loss at the starting weights");
    Eigen::MatrixXd inv_h = Eigen::MatrixXd::Identity(q, q);
    int it = 0;
    bool restarted = true;
    while (it < max_iterations) {
        ++it;
        Eigen::VectorXd dir = -(inv_h * grad);
        double slope = grad.dot(dir);
        if (!(slope < 0)) {
            if (restarted) break;   // no descent direction even along the gradient
            inv_h.setIdentity();
            restarted = true;
            continue;
        }
        double step = 1.0, trial = 0.0;
        Eigen::VectorXd candidate;
        bool accepted = false;
        for (int k = 0; k < 60; ++k) {
            candidate = theta + step * dir;
            trial = f(candidate, nullptr);
            if (std::isfinite(trial) && trial <= value + accept * step * slope) {
                accepted = true;
                break;
            }
            step *= shrink;
        }
        if (!accepted) {
            if (restarted) break;
            inv_h.setIdentity();
            restarted = true;
            continue;
        }
        f(candidate, &next_grad);
        Eigen::VectorXd s = candidate - theta, y = next_grad - grad;
        double previous = value;
        theta = candidate;
        value = trial;
        grad = next_grad;
        restarted = false;
        double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            Eigen::VectorXd hy = inv_h * y;
            double yhy = y.dot(hy);
            inv_h += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) - (hy * s.transpose() + s * hy.transpose()) / sy;
        }
        if (std::abs(previous - value) <= reltol * (std::abs(value) + reltol)) break;
    }
    return it;
}

std::shared_ptr<const NeuralNetModel> train(const Eigen::MatrixXd& design, Eigen::MatrixXd targets, Family family,
                                            const NnetOptions& opt, FitInfo info) {
    if (opt.hidden_units < 1) throw ValidationError("fit_nnet: hidden_units must be >= 1");
    if (opt.iterations < 1) throw ValidationError("fit_nnet: iterations must be >= 1");
    const Eigen::Index n = design.rows(), p = design.cols(), h = opt.hidden_units, k = targets.cols();
    if (n == 0) throw ValidationError("fit_nnet: empty design");

    NeuralNetModel::Weights w;
    w.input_center = Eigen::VectorXd::Zero(p);
    w.input_scale = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        double mean = design.col(j).mean();
        double sd = std::sqrt((design.col(j).array() - mean).square().mean());
        if (sd > 1e-12 * (1.0 + std::abs(mean))) {
            w.input_center(j) = mean;
            w.input_scale(j) = sd;
            x.col(j) = (design.col(j).array() - mean) / sd;
        }
    }
    if (family == Family::gaussian) {
        double mean = targets.col(0).mean();
        double sd = std::sqrt((targets.col(0).array() - mean).square().mean());
        w.response_center = mean;
        w.response_scale = sd > 0 ? sd : 1.0;
        targets = ((targets.array() - mean) / w.response_scale).matrix();
    }

    Layout layout{p, h, k};
    Rng rng(opt.seed);
    std::uniform_real_distribution<double> init(-opt.init_range, opt.init_range);
    Eigen::VectorXd theta(layout.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = init(rng);

    NetObjective objective(x, targets, family, layout);
    info.iterations = minimize_bfgs(objective, theta, opt.iterations, opt.tolerance);
    if (!theta.allFinite()) throw NumericalError("fit_nnet: weights diverged");
    layout.unpack(theta, w);
    info.cv_risk.reset();
    return std::make_shared<NeuralNetModel>(std::move(w), std::move(info));
}

} // namespace

std::shared_ptr<const NeuralNetModel> fit_nnet(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                               Family family, const NnetOptions& opt) {
    if (family == Family::multinomial) throw ValidationError("fit_nnet: use fit_nnet_multiclass for class labels");
    if (response.size() != design.rows()) throw ValidationError("fit_nnet: response length does not match design");
    check_response(response, family);
    FitInfo info;
    info.learner_id = "nnet";
    info.family = family;
    info.n_train = static_cast<std::size_t>(design.rows());
    Eigen::MatrixXd targets = response;
    return train(design, std::move(targets), family, opt, std::move(info));
}

std::shared_ptr<const NeuralNetModel> fit_nnet_multiclass(const Eigen::MatrixXd& design, const std::vector<int>& labels,
                                                          int classes, const NnetOptions& opt) {
    if (static_cast<Eigen::Index>(labels.size()) != design.rows())
        throw ValidationError("fit_nnet_multiclass: label count does not match design");
    if (classes < 2) throw ValidationError("fit_nnet_multiclass: need at least 2 classes");
    Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(design.rows(), classes);
    std::vector<int> seen(static_cast<std::size_t>(classes), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) throw ValidationError("fit_nnet_multiclass: label out of range");
        targets(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
        seen[static_cast<std::size_t>(labels[i])] = 1;
    }
    for (int c = 0; c < classes; ++c)
        if (!seen[static_cast<std::size_t>(c)])
            throw ValidationError("fit_nnet_multiclass: class " + std::to_string(c) + " absent from training labels");
    FitInfo info;
    info.learner_id = "mn_nnet";
    info.family = Family::multinomial;
    info.n_train = labels.size();
    return train(design, std::move(targets), Family::multinomial, opt, std::move(info));
}

} // namespace cmr
