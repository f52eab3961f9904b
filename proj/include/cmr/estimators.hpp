#pragma once

#include "cmr/data.hpp"
#include "cmr/nuisance.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace cmr {

// A target population (internal source 1..m, or 0 for the external
// population) and an optional effect-modifier level (-1 = whole population).
struct Target {
    int population = 0;
    int subgroup = -1;

    bool external() const { return population == 0; }
    bool operator==(const Target&) const = default;
};

// Row-level data of an evaluation fold, aligned with NuisancePredictions.
struct EvaluationData {
    Eigen::VectorXd outcome;          // NaN on external rows
    std::vector<int> treatment;       // -1 on external rows
    std::vector<int> source;          // 0 external, 1..m internal
    std::vector<int> effect_modifier; // -1 when absent

    std::size_t size() const { return source.size(); }
};

EvaluationData evaluation_rows(const StackedDataset& data, const std::vector<int>& rows);

struct ArmEstimate {
    Target target;
    int arm = 0;
    double point = 0.0;
    Eigen::VectorXd influence;   // one contribution per evaluation row; sums to zero
    double denom_count = 0.0;    // number of rows in the target cell
};

struct EffectEstimate {
    Target target;
    double point = 0.0;
    double se = 0.0;
    Eigen::VectorXd influence;
    double denom_count = 0.0;
};

// One-step estimator of E(Y^a | S = s [, EM = level]) for an internal source.
// Only the denominator probabilities are clipped to [eps, 1 - eps].
ArmEstimate estimate_arm_internal(const EvaluationData& rows, const NuisancePredictions& pred, const Target& target,
                                  int arm, double clip_epsilon);

// Augmented transport estimator of E(Y^a | S = 0 [, EM = level]).
ArmEstimate estimate_arm_external(const EvaluationData& rows, const NuisancePredictions& pred, const Target& target,
                                  int arm, double clip_epsilon);

ArmEstimate estimate_arm(const EvaluationData& rows, const NuisancePredictions& pred, const Target& target, int arm,
                         double clip_epsilon);

EffectEstimate effect_from_arms(const ArmEstimate& treated, const ArmEstimate& control);

// sqrt(sum D_i^2) / denom_count.
double standard_error_from_influence(const Eigen::VectorXd& influence, double denom_count);

} // namespace cmr
