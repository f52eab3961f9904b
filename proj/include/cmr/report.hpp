#pragma once

#include "cmr/crossfit.hpp"
#include "cmr/data.hpp"
#include "cmr/estimators.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cmr {

struct EstimateRow {
    Target target;
    std::string population;   // source label, or "external"
    std::string subgroup;     // effect-modifier level; empty for ATE rows
    double estimate = 0.0;
    double se = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    std::optional<double> scb_lower;
    std::optional<double> scb_upper;
};

struct InferenceOptions {
    double level = 0.95;
    int scb_draws = 100000;
    std::uint64_t seed = 0;
    int workers = 1;
};

// Everything reported for one analysis run. `timings` is kept out of the
// results document so that document is reproducible byte for byte.
struct ResultDocument {
    Analysis analysis = Analysis::ate_internal;
    std::array<std::vector<EstimateRow>, 3> tables;   // df_A0, df_A1, df_dif
    std::array<std::optional<double>, 3> scb_critical_value;

    // run metadata
    std::size_t n_internal = 0;
    std::size_t n_external = 0;
    std::vector<std::string> source_labels;
    std::vector<std::size_t> source_sizes;
    std::string effect_modifier;                       // empty when absent
    std::vector<std::string> effect_modifier_levels;
    std::array<std::string, 3> learners;               // outcome, treatment, external candidates
    std::array<std::string, 3> stack_policy;
    std::string source_model;
    std::string treatment_model;
    std::string outcome_family;
    double clip_epsilon = 0.01;
    bool cross_fitting = true;
    int folds = 0;
    int replications = 1;
    std::uint64_t seed = 0;
    double level = 0.95;
    int scb_draws = 0;
    std::string variance_rule;
    std::vector<std::string> warnings;

    std::vector<std::pair<std::string, double>> timings;   // seconds per stage
};

extern const std::array<const char*, 3> kTableNames;   // "df_A0", "df_A1", "df_dif"

// Builds the three tables: Wald CIs everywhere, sup-t bands (per table,
// jointly over every target of the run) for subgroup analyses only.
std::array<std::vector<EstimateRow>, 3> assemble_rows(const AnalysisEstimates& estimates,
                                                      const StackedDataset& data, const InferenceOptions& options,
                                                      std::array<std::optional<double>, 3>* critical_values = nullptr,
                                                      std::vector<std::string>* warnings = nullptr);

// Fills tables and metadata from a finished estimation.
ResultDocument make_result_document(const AnalysisEstimates& estimates, const StackedDataset& data,
                                    const EstimationOptions& options, const InferenceOptions& inference);

// Plain-text report laid out like the reference package's summary().
std::string format_summary(const ResultDocument& result);

struct ForestOptions {
    bool use_scb = false;
    bool sort = false;   // order rows by estimate within each source
    int width = 720;
    int row_height = 22;
};

// Standalone SVG 1.1 forest plot of the effect table.
std::string emit_forest_svg(const ResultDocument& result, const ForestOptions& options = {});

std::string to_json(const ResultDocument& result);
ResultDocument result_from_json(const std::string& text);
std::string table_csv(const std::vector<EstimateRow>& rows);
std::string timings_json(const ResultDocument& result);

// Writes <stem>.json, <stem>_df_A0.csv, <stem>_df_A1.csv, <stem>_df_dif.csv
// and <stem>.timings.json. Returns the paths written.
std::vector<std::string> serialize_results(const ResultDocument& result, const std::string& stem);

} // namespace cmr
