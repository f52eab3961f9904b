#include "cmr/cmr.h"

#include "cmr/error.hpp"
#include "cmr/inference.hpp"
#include "cmr/parallel.hpp"
#include "cmr/pipeline.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <new>
#include <string>

struct cmr_result {
    cmr::RunConfig config;
    cmr::ResultDocument document;
};

namespace {

thread_local std::string last_error;

cmr_status fail(cmr_status status, const std::string& message) {
    last_error = message;
    return status;
}

// Runs `body`, translating exceptions into status codes.
template <typename Body>
cmr_status guarded(Body&& body) {
    try {
        last_error.clear();
        body();
        return CMR_OK;
    } catch (const cmr::ValidationError& e) {
        return fail(CMR_ERR_VALIDATION, e.what());
    } catch (const cmr::NumericalError& e) {
        return fail(CMR_ERR_NUMERICAL, e.what());
    } catch (const cmr::IoError& e) {
        return fail(CMR_ERR_IO, e.what());
    } catch (const std::bad_alloc&) {
        return fail(CMR_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(CMR_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(CMR_ERR_INTERNAL, "unknown error");
    }
}

char* duplicate(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

int worker_count(int workers) { return workers <= 0 ? cmr::available_workers() : workers; }

std::string base_or_cwd(const char* base_dir) {
    return base_dir && *base_dir ? std::string(base_dir) : std::filesystem::current_path().string();
}

std::string joined(const std::vector<std::string>& items) {
    std::string s;
    for (const auto& p : items) s += p + "\n";
    return s;
}

} // namespace

extern "C" {

const char* cmr_version(void) { return "0.1.0"; }

const char* cmr_last_error(void) { return last_error.c_str(); }

int cmr_available_workers(void) { return cmr::available_workers(); }

void cmr_string_free(char* s) { std::free(s); }

cmr_status cmr_config_set(const char* config_json, const char* assignment, char** out_json) {
    if (!assignment || !out_json) return fail(CMR_ERR_USAGE, "cmr_config_set: null argument");
    return guarded([&] { *out_json = duplicate(cmr::apply_override(config_json ? config_json : "", assignment)); });
}

cmr_status cmr_run(const char* command, const char* config_json, const char* base_dir, int workers,
                   cmr_result** out) {
    if (!command || !out) return fail(CMR_ERR_USAGE, "cmr_run: null argument");
    *out = nullptr;
    return guarded([&] {
        auto result = std::make_unique<cmr_result>();
        result->config = cmr::parse_run_config(command, config_json ? config_json : "", base_or_cwd(base_dir));
        if (result->config.is_simulate()) throw cmr::ValidationError("use cmr_simulate for the simulate command");
        result->document = cmr::run_analysis(result->config, worker_count(workers));
        *out = result.release();
    });
}

void cmr_result_free(cmr_result* result) { delete result; }

cmr_status cmr_result_json(const cmr_result* result, char** out) {
    if (!result || !out) return fail(CMR_ERR_USAGE, "cmr_result_json: null argument");
    return guarded([&] { *out = duplicate(cmr::to_json(result->document)); });
}

cmr_status cmr_result_summary(const cmr_result* result, char** out) {
    if (!result || !out) return fail(CMR_ERR_USAGE, "cmr_result_summary: null argument");
    return guarded([&] { *out = duplicate(cmr::format_summary(result->document)); });
}

cmr_status cmr_result_forest_svg(const cmr_result* result, int use_scb, int sort, char** out) {
    if (!result || !out) return fail(CMR_ERR_USAGE, "cmr_result_forest_svg: null argument");
    return guarded([&] {
        cmr::ForestOptions opt = result->config.output.forest;
        opt.use_scb = use_scb != 0;
        opt.sort = sort != 0;
        *out = duplicate(cmr::emit_forest_svg(result->document, opt));
    });
}

size_t cmr_result_rows(const cmr_result* result, int table) {
    if (!result || table < 0 || table > 2) return 0;
    return result->document.tables[static_cast<std::size_t>(table)].size();
}

cmr_status cmr_result_row(const cmr_result* result, int table, size_t index, cmr_row* out) {
    if (!result || !out) return fail(CMR_ERR_USAGE, "cmr_result_row: null argument");
    if (table < 0 || table > 2) return fail(CMR_ERR_USAGE, "cmr_result_row: table must be 0, 1 or 2");
    const auto& rows = result->document.tables[static_cast<std::size_t>(table)];
    if (index >= rows.size()) return fail(CMR_ERR_USAGE, "cmr_result_row: index out of range");
    const auto& r = rows[index];
    out->target = r.population.c_str();
    out->subgroup = r.subgroup.c_str();
    out->estimate = r.estimate;
    out->se = r.se;
    out->ci_lower = r.ci_lower;
    out->ci_upper = r.ci_upper;
    out->has_scb = r.scb_lower.has_value() ? 1 : 0;
    out->scb_lower = r.scb_lower.value_or(0.0);
    out->scb_upper = r.scb_upper.value_or(0.0);
    return CMR_OK;
}

cmr_status cmr_result_write(const cmr_result* result, char** out_paths) {
    if (!result) return fail(CMR_ERR_USAGE, "cmr_result_write: null argument");
    return guarded([&] {
        auto written = cmr::write_outputs(result->config, result->document);
        if (out_paths) *out_paths = duplicate(joined(written));
    });
}

cmr_status cmr_simulate(const char* config_json, const char* base_dir, int workers, char** out_paths) {
    return guarded([&] {
        cmr::RunConfig config = cmr::parse_run_config("simulate", config_json ? config_json : "", base_or_cwd(base_dir));
        auto written = cmr::run_simulate(config, worker_count(workers));
        if (out_paths) *out_paths = duplicate(joined(written));
    });
}

cmr_status cmr_wald_ci(double estimate, double se, double level, double* lower, double* upper) {
    if (!lower || !upper) return fail(CMR_ERR_USAGE, "cmr_wald_ci: null argument");
    return guarded([&] {
        cmr::Interval ci = cmr::wald_ci(estimate, se, level);
        *lower = ci.lower;
        *upper = ci.upper;
    });
}

} // extern "C"
