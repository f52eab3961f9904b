#include "cmr/learners.hpp"

#include "cmr/error.hpp"
#include "detail.hpp"

#include <cmath>
#include <stdexcept>

namespace cmr {

const char* to_string(Family family) {
    switch (family) {
    case Family::gaussian: return "gaussian";
    case Family::binomial: return "binomial";
    case Family::multinomial: return "multinomial";
    }
    return "?";
}

void check_response(const Eigen::VectorXd& response, Family family, int classes) {
    for (Eigen::Index i = 0; i < response.size(); ++i) {
        double v = response(i);
        if (!std::isfinite(v)) throw ValidationError("response contains a non-finite value");
        if (family == Family::binomial && v != 0.0 && v != 1.0)
            throw ValidationError("binomial response must be coded 0/1");
        if (family == Family::multinomial && (v != std::floor(v) || v < 0 || v >= classes))
            throw ValidationError("multinomial response must hold class indices");
    }
}

Eigen::MatrixXd FittedModel::predict_proba(const Eigen::MatrixXd& design) const {
    if (info_.family == Family::gaussian) throw std::logic_error("predict_proba on a gaussian model");
    Eigen::VectorXd p = predict(design);
    Eigen::MatrixXd out(p.size(), 2);
    out.col(0) = 1.0 - p.array();
    out.col(1) = p;
    return out;
}

LinearModel::LinearModel(Eigen::VectorXd coefficients, FitInfo info) : coefficients_(std::move(coefficients)) {
    info_ = std::move(info);
}

Eigen::VectorXd LinearModel::predict(const Eigen::MatrixXd& design) const {
    Eigen::VectorXd eta = design * coefficients_;
    if (info_.family == Family::binomial) eta = eta.unaryExpr([](double v) { return detail::sigmoid(v); });
    return eta;
}

MultinomialModel::MultinomialModel(Eigen::MatrixXd coefficients, FitInfo info)
    : coefficients_(std::move(coefficients)) {
    info_ = std::move(info);
}

Eigen::MatrixXd MultinomialModel::predict_proba(const Eigen::MatrixXd& design) const {
    return detail::softmax_rows(design * coefficients_);
}

Eigen::VectorXd MultinomialModel::predict(const Eigen::MatrixXd& design) const {
    if (coefficients_.cols() != 2) throw std::logic_error("predict() on a multinomial model with more than 2 classes");
    return predict_proba(design).col(1);
}

NeuralNetModel::NeuralNetModel(Weights weights, FitInfo info) : weights_(std::move(weights)) {
    info_ = std::move(info);
}

int NeuralNetModel::classes() const {
    if (info_.family == Family::gaussian) return 0;
    if (info_.family == Family::binomial) return 2;
    return static_cast<int>(weights_.output.cols());
}

Eigen::MatrixXd NeuralNetModel::forward(const Eigen::MatrixXd& design) const {
    const auto& w = weights_;
    Eigen::MatrixXd x(design.rows(), design.cols());
    for (Eigen::Index j = 0; j < design.cols(); ++j) {
        if (w.input_scale(j) > 0)
            x.col(j) = (design.col(j).array() - w.input_center(j)) / w.input_scale(j);
        else
            x.col(j).setZero();
    }
    Eigen::MatrixXd hidden = ((x * w.hidden).rowwise() + w.hidden_bias).unaryExpr([](double v) {
        return detail::sigmoid(v);
    });
    Eigen::MatrixXd out = (hidden * w.output).rowwise() + w.output_bias;
    switch (info_.family) {
    case Family::gaussian:
        return (out.array() * w.response_scale + w.response_center).matrix();
    case Family::binomial:
        return out.unaryExpr([](double v) { return detail::sigmoid(v); });
    case Family::multinomial:
        return detail::softmax_rows(out);
    }
    return out;
}

Eigen::VectorXd NeuralNetModel::predict(const Eigen::MatrixXd& design) const {
    Eigen::MatrixXd out = forward(design);
    if (info_.family == Family::multinomial) {
        if (out.cols() != 2) throw std::logic_error("predict() on a multiclass network with more than 2 classes");
        return out.col(1);
    }
    return out.col(0);
}

Eigen::MatrixXd NeuralNetModel::predict_proba(const Eigen::MatrixXd& design) const {
    if (info_.family == Family::multinomial) return forward(design);
    return FittedModel::predict_proba(design);
}

StackedModel::StackedModel(std::vector<ModelPtr> members, std::vector<double> weights, FitInfo info)
    : members_(std::move(members)), weights_(std::move(weights)) {
    info_ = std::move(info);
}

Eigen::VectorXd StackedModel::predict(const Eigen::MatrixXd& design) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(design.rows());
    for (std::size_t k = 0; k < members_.size(); ++k)
        if (weights_[k] != 0.0) out += weights_[k] * members_[k]->predict(design);
    return out;
}

} // namespace cmr
