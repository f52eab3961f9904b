#pragma once

#include "cmr/csv.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cmr {

enum class ColumnKind { continuous, binary, categorical };

const char* to_string(ColumnKind kind);

struct Covariate {
    std::string name;
    ColumnKind kind = ColumnKind::continuous;
    std::vector<double> values;        // continuous and binary columns
    std::vector<std::string> labels;   // categorical columns
};

struct CovariateTable {
    std::vector<Covariate> columns;

    std::size_t rows() const;
    const Covariate* find(const std::string& name) const;
};

// Pooled individual-level data from m >= 1 sources. Source labels are kept
// in canonical order (numeric when every label is an integer, otherwise
// lexicographic); `source` holds indices into `source_labels`.
struct MultiSourceDataset {
    std::vector<double> outcome;
    std::vector<int> source;
    std::vector<std::string> source_labels;
    std::vector<int> treatment;
    CovariateTable covariates;
    std::optional<std::vector<std::string>> effect_modifier;
    std::string effect_modifier_name;

    std::size_t n() const { return outcome.size(); }
    std::size_t m() const { return source_labels.size(); }
    bool has_effect_modifier() const { return effect_modifier.has_value(); }
};

// Covariate-only sample from the external target population (S = 0).
struct ExternalSample {
    CovariateTable covariates;
    std::optional<std::vector<std::string>> effect_modifier;

    std::size_t n() const { return covariates.rows(); }
};

struct ColumnRoles {
    std::string outcome = "Y";
    std::string source = "S";
    std::string treatment = "A";
    std::optional<std::string> effect_modifier;
    // Empty means "every column without another role, in file order".
    std::vector<std::string> covariates;
    // Columns forced to categorical even when they parse as numbers.
    std::vector<std::string> categorical;
};

MultiSourceDataset validate_dataset(const RawTable& raw, const ColumnRoles& roles);

// Validates an external covariate file against the schema of `reference`:
// the same covariate columns in the same order, no unseen categorical levels.
ExternalSample validate_external(const RawTable& raw, const ColumnRoles& roles,
                                 const MultiSourceDataset& reference);

// Writes the dataset in the CSV schema read by validate_dataset; numbers use
// 17 significant digits so a read-back is bit-identical.
void write_dataset_csv(std::ostream& out, const MultiSourceDataset& data);
void write_external_csv(std::ostream& out, const ExternalSample& data,
                        const std::string& effect_modifier_name);

struct EncodedColumn {
    std::string variable;   // "(Intercept)", covariate name, "A", or "S"
    std::string level;      // indicator level; empty for numeric columns
};

struct DesignMatrix {
    Eigen::MatrixXd values;
    std::vector<EncodedColumn> columns;
    Eigen::VectorXd center;   // per-column mean (0 for the intercept)
    Eigen::VectorXd scale;    // per-column population SD (1 for the intercept)

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
    // Column index for (variable, level), or -1.
    Eigen::Index column_index(const std::string& variable, const std::string& level = {}) const;
};

// Level dictionary learned from multi-source covariates. Encoding any other
// table (external rows, folds) reuses it, so the column map never changes.
class DesignEncoder {
public:
    DesignEncoder() = default;
    static DesignEncoder learn(const CovariateTable& covariates,
                               const std::optional<std::vector<std::string>>& effect_modifier,
                               const std::string& effect_modifier_name = "EM");

    // Intercept, covariates, then the effect modifier when present.
    DesignMatrix encode(const CovariateTable& covariates,
                        const std::vector<std::string>* effect_modifier) const;

    std::size_t width() const;
    const std::vector<EncodedColumn>& columns() const { return columns_; }

private:
    struct Variable {
        std::string name;
        ColumnKind kind;
        std::vector<std::string> levels;   // sorted; levels[0] is the dropped reference
    };
    std::vector<Variable> variables_;
    std::optional<Variable> effect_modifier_;
    std::vector<EncodedColumn> columns_;
};

DesignMatrix encode_design(const MultiSourceDataset& data, bool include_treatment, bool include_source);

// Multi-source rows followed by external rows. Source code 0 marks external
// rows and internal sources are 1..m; outcome is NaN and treatment -1 where
// unavailable.
struct StackedDataset {
    std::size_t n_internal = 0;
    std::size_t n_external = 0;
    std::vector<int> source;
    std::vector<double> outcome;
    std::vector<int> treatment;
    std::vector<int> effect_modifier;   // level index, -1 when absent
    std::vector<std::string> source_labels;
    std::vector<std::string> effect_modifier_levels;
    std::string effect_modifier_name;
    DesignEncoder encoder;
    DesignMatrix design;   // intercept + covariates (+ EM indicators) for all rows

    std::size_t size() const { return source.size(); }
    std::size_t m() const { return source_labels.size(); }
    bool has_external() const { return n_external > 0; }
    bool has_effect_modifier() const { return !effect_modifier_levels.empty(); }
};

StackedDataset stack_internal(const MultiSourceDataset& data);
StackedDataset stack_with_external(const MultiSourceDataset& data, const ExternalSample& external);

} // namespace cmr
