#pragma once

#include "cmr/crossfit.hpp"
#include "cmr/data.hpp"
#include "cmr/report.hpp"
#include "cmr/simulate.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cmr {

struct OutputConfig {
    std::string dir = ".";
    std::string stem = "results";
    std::string summary = "summary.txt";   // empty: not written
    std::string svg;                       // empty: not written
    ForestOptions forest;
};

struct SimulateOutput {
    std::string data = "multisource.csv";
    std::string external = "external.csv";
    std::string truth = "truth.json";      // empty: not written
    long long oracle_n = 1000000;
};

// One run, as described by a JSON config document plus overrides.
struct RunConfig {
    std::string command;                   // analysis name or "simulate"
    std::string data_path;
    std::string external_path;
    ColumnRoles roles;
    EstimationOptions estimation;
    InferenceOptions inference;
    OutputConfig output;
    SimConfig simulation;
    SimulateOutput simulate_output;

    bool is_simulate() const { return command == "simulate"; }
    Analysis analysis() const { return estimation.analysis; }
};

// Sets a dotted key ("learners.outcome.candidates") inside a JSON document.
// The value is parsed as JSON when possible and kept as a string otherwise.
std::string apply_override(const std::string& config_json, const std::string& assignment);

// Parses a config document for `command`. Relative paths resolve against
// `base_dir`. Unknown keys are rejected.
RunConfig parse_run_config(const std::string& command, const std::string& config_json, const std::string& base_dir);

struct LoadedData {
    MultiSourceDataset data;
    std::optional<ExternalSample> external;
    StackedDataset stacked;
};

LoadedData load_inputs(const RunConfig& config);

// Runs an analysis end to end. `workers` caps the thread count.
ResultDocument run_analysis(const RunConfig& config, int workers);
ResultDocument run_analysis(const RunConfig& config, const StackedDataset& data, int workers);

// Writes the results document, CSV tables, summary and optional SVG under
// config.output.dir. Returns the paths written.
std::vector<std::string> write_outputs(const RunConfig& config, const ResultDocument& result);

// Generates data per config.simulation and writes the CSVs (and the truth
// table when requested). Returns the paths written.
std::vector<std::string> run_simulate(const RunConfig& config, int workers);

std::string truth_json(const TruthTable& truth, const SimConfig& config);

} // namespace cmr
