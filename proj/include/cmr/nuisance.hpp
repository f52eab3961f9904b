#pragma once

#include "cmr/data.hpp"
#include "cmr/learners.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace cmr {

enum class TreatmentModelType { joint, separate };
enum class SourceModelKind { mn_glmnet, mn_glm, mn_nnet };

const char* to_string(TreatmentModelType type);
const char* to_string(SourceModelKind kind);

// Learner configuration for the four nuisance functions.
struct NuisanceSpec {
    LearnerSpec outcome;
    LearnerSpec treatment;
    LearnerSpec external;
    Family outcome_family = Family::gaussian;
    TreatmentModelType treatment_type = TreatmentModelType::separate;
    SourceModelKind source_model = SourceModelKind::mn_glmnet;
    int source_cv_folds = 10;
    int source_hidden_units = 3;
};

// Fitted propensity P(A = 1 | X, S = s) for every internal source.
struct TreatmentFit {
    TreatmentModelType type = TreatmentModelType::separate;
    ModelPtr joint;                    // design = base columns + (m - 1) source indicators
    std::vector<ModelPtr> per_source;  // index s - 1
};

struct NuisanceFits {
    std::array<ModelPtr, 2> outcome;         // arm a -> E(Y | A = a, X)
    std::array<std::size_t, 2> outcome_rows{0, 0};
    ModelPtr source;                         // P(S = s | X, S internal); null when m == 1
    TreatmentFit treatment;
    ModelPtr external;                       // P(S = 0 | X); null for internal targets
    std::size_t m = 0;
};

// Nuisance predictions on a set of evaluation rows, in the form the
// estimators consume. Columns of `source` and `treatment` follow the
// canonical source order.
struct NuisancePredictions {
    std::array<Eigen::VectorXd, 2> outcome;
    Eigen::MatrixXd source;      // rows x m, each row sums to 1
    Eigen::MatrixXd treatment;   // rows x m
    Eigen::VectorXd external;    // empty when no external model was fit
};

// `rows` index into the stacked dataset. External rows in `rows` are
// ignored by every fit except the external model.
std::array<ModelPtr, 2> fit_outcome_model(const StackedDataset& data, const std::vector<int>& rows,
                                          const NuisanceSpec& spec, std::uint64_t seed,
                                          std::array<std::size_t, 2>* rows_used = nullptr);
ModelPtr fit_source_model(const StackedDataset& data, const std::vector<int>& rows, const NuisanceSpec& spec,
                          std::uint64_t seed);
TreatmentFit fit_treatment_model(const StackedDataset& data, const std::vector<int>& rows, const NuisanceSpec& spec,
                                 std::uint64_t seed);
ModelPtr fit_external_model(const StackedDataset& data, const std::vector<int>& rows, const NuisanceSpec& spec,
                            std::uint64_t seed);

// Training rows per nuisance role. `external` may be empty for internal targets.
struct NuisanceRows {
    std::vector<int> outcome, treatment, source, external;
};

NuisanceFits fit_nuisance(const StackedDataset& data, const NuisanceRows& rows, const NuisanceSpec& spec,
                          bool need_external, std::uint64_t seed);

NuisancePredictions predict_nuisance(const NuisanceFits& fits, const StackedDataset& data,
                                     const std::vector<int>& rows);

// Joint design for the treatment model: base columns plus indicators for
// sources 2..m, with every row assigned to `source` (1-based), or to each
// row's own source when `source` is 0.
Eigen::MatrixXd treatment_design(const StackedDataset& data, const std::vector<int>& rows, int source);

// sum_s P(A = a | X, S = s) P(S = s | X), with the source weights
// renormalized to sum to one over the internal sources.
Eigen::VectorXd marginal_propensity(const Eigen::MatrixXd& treatment, const Eigen::MatrixXd& source, int arm);

} // namespace cmr
