#include "cmr/estimators.hpp"

#include "cmr/error.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace cmr {

namespace {

double clip(double p, double eps) { return std::min(std::max(p, eps), 1.0 - eps); }

bool in_subgroup(const EvaluationData& rows, std::size_t i, const Target& t) {
    return t.subgroup < 0 || rows.effect_modifier[i] == t.subgroup;
}

std::string describe(const Target& t) {
    std::string s = t.external() ? "external population" : "source " + std::to_string(t.population);
    if (t.subgroup >= 0) s += ", subgroup " + std::to_string(t.subgroup);
    return s;
}

ArmEstimate finish(const Target& target, int arm, const Eigen::VectorXd& membership,
                   const Eigen::VectorXd& plug_in, const Eigen::VectorXd& augmentation) {
    ArmEstimate est;
    est.target = target;
    est.arm = arm;
    est.denom_count = membership.sum();
    if (est.denom_count <= 0) throw ValidationError("empty target cell: " + describe(target));
    est.point = (membership.dot(plug_in) + augmentation.sum()) / est.denom_count;
    est.influence = membership.cwiseProduct((plug_in.array() - est.point).matrix()) + augmentation;
    if (!std::isfinite(est.point)) throw NumericalError("non-finite estimate for " + describe(target));
    return est;
}

} // namespace

EvaluationData evaluation_rows(const StackedDataset& data, const std::vector<int>& rows) {
    EvaluationData e;
    e.outcome.resize(static_cast<Eigen::Index>(rows.size()));
    e.treatment.resize(rows.size());
    e.source.resize(rows.size());
    e.effect_modifier.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        auto r = static_cast<std::size_t>(rows[k]);
        e.outcome(static_cast<Eigen::Index>(k)) = data.outcome[r];
        e.treatment[k] = data.treatment[r];
        e.source[k] = data.source[r];
        e.effect_modifier[k] = data.effect_modifier[r];
    }
    return e;
}

ArmEstimate estimate_arm_internal(const EvaluationData& rows, const NuisancePredictions& pred, const Target& target,
                                  int arm, double eps) {
    if (target.external()) throw ValidationError("estimate_arm_internal called with the external population");
    const std::size_t n = rows.size();
    const auto& g = pred.outcome[static_cast<std::size_t>(arm)];
    Eigen::VectorXd propensity = marginal_propensity(pred.treatment, pred.source, arm);
    Eigen::VectorXd membership = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd augmentation = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    const Eigen::Index s_col = target.population - 1;
    for (std::size_t k = 0; k < n; ++k) {
        auto i = static_cast<Eigen::Index>(k);
        if (rows.source[k] <= 0 || !in_subgroup(rows, k, target)) continue;
        if (rows.source[k] == target.population) membership(i) = 1.0;
        if (rows.treatment[k] != arm) continue;
        double q = pred.source(i, s_col);
        double pi = clip(propensity(i), eps);
        double w = q / pi;
        assert(std::isfinite(w));
        augmentation(i) = w * (rows.outcome(i) - g(i));
    }
    return finish(target, arm, membership, g, augmentation);
}

ArmEstimate estimate_arm_external(const EvaluationData& rows, const NuisancePredictions& pred, const Target& target,
                                  int arm, double eps) {
    if (!target.external()) throw ValidationError("estimate_arm_external called with an internal population");
    if (pred.external.size() != static_cast<Eigen::Index>(rows.size()))
        throw ValidationError("external-model predictions are required for the external population");
    const std::size_t n = rows.size();
    const auto& g = pred.outcome[static_cast<std::size_t>(arm)];
    Eigen::VectorXd propensity = marginal_propensity(pred.treatment, pred.source, arm);
    Eigen::VectorXd membership = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd augmentation = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
        auto i = static_cast<Eigen::Index>(k);
        if (!in_subgroup(rows, k, target)) continue;
        if (rows.source[k] == 0) {
            membership(i) = 1.0;
            continue;
        }
        if (rows.treatment[k] != arm) continue;
        double p0 = clip(pred.external(i), eps);
        double pi = clip(propensity(i), eps);
        double w = p0 / (1.0 - p0) / pi;
        assert(std::isfinite(w));
        augmentation(i) = w * (rows.outcome(i) - g(i));
    }
    return finish(target, arm, membership, g, augmentation);
}

ArmEstimate estimate_arm(const EvaluationData& rows, const NuisancePredictions& pred, const Target& target, int arm,
                         double eps) {
    return target.external() ? estimate_arm_external(rows, pred, target, arm, eps)
                             : estimate_arm_internal(rows, pred, target, arm, eps);
}

EffectEstimate effect_from_arms(const ArmEstimate& treated, const ArmEstimate& control) {
    if (!(treated.target == control.target) || treated.influence.size() != control.influence.size() ||
        treated.denom_count != control.denom_count)
        throw ValidationError("effect_from_arms: arm estimates refer to different targets");
    EffectEstimate e;
    e.target = treated.target;
    e.point = treated.point - control.point;
    e.influence = treated.influence - control.influence;
    e.denom_count = treated.denom_count;
    e.se = standard_error_from_influence(e.influence, e.denom_count);
    return e;
}

double standard_error_from_influence(const Eigen::VectorXd& influence, double denom_count) {
    if (!(denom_count >= 1)) throw ValidationError("standard error needs a positive denominator count");
    return std::sqrt(influence.squaredNorm()) / denom_count;
}

} // namespace cmr
