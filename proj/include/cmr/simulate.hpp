#pragma once

#include "cmr/data.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cmr {

// Which nuisance models receive the omitted nonlinear term
// h(X) = X1 * X2 + exp(X1) / 2 (scaled by `strength`).
struct Misspecification {
    bool outcome = false;     // added to the outcome baseline
    bool treatment = false;   // added to every treatment logit
    bool source = false;      // added to the logits of sources 2..m
    bool external = false;    // external rows kept with probability logistic(h - 1)
    double strength = 1.0;
};

// Data-generating process. Pooled internal covariates are N(0, I); the
// source index follows softmax(source_intercepts + source_slopes X);
// treatment is logistic(treatment_intercepts[s] + treatment_slopes X);
// Y = outcome_intercept + outcome_slopes X + A * tau(X, EM) + N(0, noise_sd^2)
// with tau = tau_intercept + tau_slopes X + tau_em[EM]. External covariates
// are N(external_shift, I). The effect modifier is independent of X.
struct SimConfig {
    int m = 3;
    // Exact per-source sizes (quota sampling). Empty: n_internal rows with
    // the source drawn from the softmax.
    std::vector<int> source_sizes;
    int n_internal = 6000;
    int n_external = 2000;
    int p = 4;
    int em_levels = 0;
    std::vector<double> em_probs_internal;   // empty = uniform
    std::vector<double> em_probs_external;   // empty = uniform

    std::vector<double> source_intercepts;            // size m, first entry ignored (reference)
    std::vector<std::vector<double>> source_slopes;   // m x p, first row ignored
    std::vector<double> treatment_intercepts;         // size m
    std::vector<double> treatment_slopes;             // size p
    double outcome_intercept = 1.0;
    std::vector<double> outcome_slopes;               // size p
    double tau_intercept = 3.0;
    std::vector<double> tau_slopes;                   // size p
    std::vector<double> tau_em;                       // size em_levels
    double noise_sd = 1.0;
    std::vector<double> external_shift;               // size p

    Misspecification misspecify;
    std::uint64_t seed = 1;

    // Fills every empty coefficient block with the built-in defaults and
    // checks dimensions. Called by generate_multisource and true_effects.
    void complete();
};

// Example-sized layout: three sources of 2312, 1147 and
// 592 rows, 10083 external rows, nine continuous covariates and a
// five-level effect modifier.
SimConfig example_config(std::uint64_t seed = 1);

struct SimulatedData {
    MultiSourceDataset data;
    ExternalSample external;
};

SimulatedData generate_multisource(SimConfig config);

struct TrueEffect {
    double value = 0.0;
    double mc_se = 0.0;                  // Monte Carlo standard error of `value`
    std::optional<double> closed_form;   // when the population's covariate mean is known exactly
};

struct PopulationTruth {
    int population = 0;                  // 0 external, 1..m internal
    TrueEffect ate;
    std::vector<TrueEffect> ste;         // per effect-modifier level
};

struct TruthTable {
    std::vector<PopulationTruth> populations;   // external first, then sources 1..m

    const PopulationTruth& population(int index) const;
};

// Monte Carlo integration of tau under each population's covariate law.
TruthTable true_effects(SimConfig config, long long oracle_n = 1000000, std::uint64_t oracle_seed = 7,
                        int workers = 1);

} // namespace cmr
