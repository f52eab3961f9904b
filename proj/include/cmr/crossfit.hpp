#pragma once

#include "cmr/data.hpp"
#include "cmr/estimators.hpp"
#include "cmr/nuisance.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cmr {

enum class Analysis { ate_internal, ate_external, ste_internal, ste_external };

const char* to_string(Analysis analysis);   // "ate-internal", ...
Analysis parse_analysis(const std::string& name);
bool is_external(Analysis analysis);
bool is_subgroup(Analysis analysis);
int default_folds(Analysis analysis);       // 4 internal, 5 external

// Targets in reporting order: sources (then subgroups within each source)
// for internal analyses, subgroups for the external population.
std::vector<Target> analysis_targets(const StackedDataset& data, Analysis analysis);

// Rows that take part in the analysis: internal rows only for internal
// analyses, every row for external ones.
std::vector<int> analysis_rows(const StackedDataset& data, Analysis analysis);

// Canonical stratum label per analysis row: source label, crossed with the
// effect-modifier level for subgroup analyses; external rows use "(external)".
std::vector<std::string> stratum_labels(const StackedDataset& data, const std::vector<int>& rows, Analysis analysis);

// Fold (1..K) for every entry of `strata`. Each stratum is permuted by its
// own stream seeded from (seed, replication, label) and dealt round-robin;
// the dealing position carries over between strata in label order so fold
// totals stay balanced too.
std::vector<int> stratified_split(const std::vector<std::string>& strata, int folds, std::uint64_t seed,
                                  int replication);

struct NuisanceRoles {
    int outcome = 0;
    int treatment = 0;
    int source = 0;
    int external = 0;   // 0 when K == 4
};

// Cyclic rotation: outcome <- k+1, treatment <- k+2, source <- k+3,
// external <- k+4 (K = 5 only), all 1-based mod K.
NuisanceRoles assign_nuisance_roles(int folds, int k);

enum Table : int { kArm0 = 0, kArm1 = 1, kDifference = 2 };

// Point and variance estimates for the three reported tables, aligned to
// the target list, plus the covariance of the estimates within each table.
struct ReplicationResult {
    std::array<std::vector<double>, 3> point;
    std::array<std::vector<double>, 3> variance;
    std::array<Eigen::MatrixXd, 3> covariance;
};

struct CrossFitPlan {
    int folds = 4;
    int replications = 100;
    std::uint64_t seed = 0;
};

struct EstimationOptions {
    Analysis analysis = Analysis::ate_internal;
    NuisanceSpec nuisance;
    bool cross_fitting = true;
    int replications = 100;
    std::uint64_t seed = 0;
    double clip_epsilon = 0.01;
    int workers = 1;
};

// Evaluates every target on `eval_rows` with already-fitted nuisances.
ReplicationResult evaluate_split(const StackedDataset& data, const NuisanceFits& fits,
                                 const std::vector<int>& eval_rows, const std::vector<Target>& targets,
                                 double clip_epsilon);

// One cross-fitting replication: psi^l = mean_k psi^{k,l},
// Var^l = sum_k Var^{k,l} / K^2 (and likewise for the covariance).
ReplicationResult run_replication(const StackedDataset& data, const EstimationOptions& options,
                                  const CrossFitPlan& plan, int replication,
                                  std::vector<std::string>* warnings = nullptr);

// point = median_l psi^l; variance = median_l (Var^l + (psi^l - point)^2).
std::pair<double, double> aggregate_replications(const std::vector<double>& points,
                                                 const std::vector<double>& variances);

double median(std::vector<double> values);

// Nuisances fit on, and estimates evaluated over, the full analysis sample.
ReplicationResult run_no_crossfit(const StackedDataset& data, const EstimationOptions& options,
                                  std::vector<std::string>* warnings = nullptr);

struct AnalysisEstimates {
    Analysis analysis = Analysis::ate_internal;
    std::vector<Target> targets;
    std::array<std::vector<double>, 3> point;
    std::array<std::vector<double>, 3> variance;
    std::array<Eigen::MatrixXd, 3> correlation;   // element-wise median over replications
    bool cross_fitting = true;
    int folds = 0;                        // 0 without cross-fitting
    int replications = 1;
    std::vector<std::string> warnings;
};

// Full pipeline for one analysis. Replications and splits run on up to
// options.workers threads; results do not depend on the worker count.
AnalysisEstimates estimate(const StackedDataset& data, const EstimationOptions& options);

} // namespace cmr
