#include "cmr/pipeline.hpp"

#include "cmr/csv.hpp"
#include "cmr/error.hpp"
#include "cmr/rng.hpp"

#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace cmr {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ValidationError("config: '" + where + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ValidationError("config: unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& into) {
    if (!obj.contains(key)) return;
    try {
        into = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string("config: '") + key + "' has the wrong type");
    }
}

std::string resolve(const std::string& base, const std::string& path) {
    if (path.empty()) return path;
    fs::path p(path);
    return p.is_absolute() ? p.string() : (fs::path(base) / p).lexically_normal().string();
}

LearnerSpec parse_learner(const json& j, const std::string& role) {
    LearnerSpec spec;
    json cand;
    if (j.is_array()) {
        cand = j;
    } else if (j.is_string()) {
        cand = json::array({j});
    } else {
        check_keys(j, {"candidates", "policy", "cv_folds"}, "learners." + role);
        if (j.contains("candidates")) cand = j.at("candidates");
        if (j.contains("policy")) {
            std::string p = j.at("policy").get<std::string>();
            if (p == "convex_stack" || p == "stack")
                spec.policy = StackPolicy::convex_stack;
            else if (p == "discrete_select" || p == "discrete")
                spec.policy = StackPolicy::discrete_select;
            else
                throw ValidationError("config: unknown stacking policy '" + p + "'");
        }
        read(j, "cv_folds", spec.cv_folds);
    }
    if (!cand.is_null()) {
        if (cand.is_string()) cand = json::array({cand});
        if (!cand.is_array() || cand.empty())
            throw ValidationError("config: learners." + role + " needs a non-empty candidate list");
        spec.candidates.clear();
        for (const auto& c : cand) {
            if (!c.is_string()) throw ValidationError("config: learner names must be strings");
            std::string text = c.get<std::string>();
            // Comma-separated lists are accepted for --set convenience.
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) spec.candidates.push_back(CandidateSpec::parse(item));
        }
    }
    spec.validate();
    return spec;
}

void parse_simulation(const json& j, SimConfig& c, SimulateOutput& out, const std::string& base) {
    check_keys(j, {"example", "m", "source_sizes", "n_internal", "n_external", "p", "em_levels",
                   "em_probs_internal", "em_probs_external", "source_intercepts", "source_slopes",
                   "treatment_intercepts", "treatment_slopes", "outcome_intercept", "outcome_slopes",
                   "tau_intercept", "tau_slopes", "tau_em", "noise_sd", "external_shift", "misspecify", "data_out",
                   "external_out", "truth_out", "oracle_n", "seed"},
               "simulate");
    if (j.value("example", false)) c = example_config(c.seed);
    read(j, "m", c.m);
    read(j, "source_sizes", c.source_sizes);
    read(j, "n_internal", c.n_internal);
    read(j, "n_external", c.n_external);
    read(j, "p", c.p);
    read(j, "em_levels", c.em_levels);
    read(j, "em_probs_internal", c.em_probs_internal);
    read(j, "em_probs_external", c.em_probs_external);
    read(j, "source_intercepts", c.source_intercepts);
    read(j, "source_slopes", c.source_slopes);
    read(j, "treatment_intercepts", c.treatment_intercepts);
    read(j, "treatment_slopes", c.treatment_slopes);
    read(j, "outcome_intercept", c.outcome_intercept);
    read(j, "outcome_slopes", c.outcome_slopes);
    read(j, "tau_intercept", c.tau_intercept);
    read(j, "tau_slopes", c.tau_slopes);
    read(j, "tau_em", c.tau_em);
    read(j, "noise_sd", c.noise_sd);
    read(j, "external_shift", c.external_shift);
    if (j.contains("misspecify")) {
        const auto& m = j.at("misspecify");
        check_keys(m, {"outcome", "treatment", "source", "external", "strength"}, "simulate.misspecify");
        read(m, "outcome", c.misspecify.outcome);
        read(m, "treatment", c.misspecify.treatment);
        read(m, "source", c.misspecify.source);
        read(m, "external", c.misspecify.external);
        read(m, "strength", c.misspecify.strength);
    }
    read(j, "data_out", out.data);
    read(j, "external_out", out.external);
    read(j, "truth_out", out.truth);
    read(j, "oracle_n", out.oracle_n);
    out.data = resolve(base, out.data);
    out.external = resolve(base, out.external);
    out.truth = resolve(base, out.truth);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << content;
    if (!out.flush()) throw IoError("failed writing '" + path + "'");
}

} // namespace

std::string apply_override(const std::string& config_json, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + assignment + "'");
    std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json doc = config_json.empty() ? json::object() : json::parse(config_json, nullptr, false);
    if (doc.is_discarded()) throw ValidationError("config is not valid JSON");
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ValidationError("--set: empty path component in '" + key + "'");
        parts.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        json& next = (*node)[parts[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw ValidationError("--set: '" + parts[i] + "' is not an object");
        node = &next;
    }
    (*node)[parts.back()] = value;
    return doc.dump();
}

RunConfig parse_run_config(const std::string& command, const std::string& config_json, const std::string& base_dir) {
    RunConfig c;
    c.command = command;
    json j = config_json.empty() ? json::object() : json::parse(config_json, nullptr, false);
    if (j.is_discarded()) throw ValidationError("config is not valid JSON");
    check_keys(j,
               {"data", "external", "columns", "outcome_family", "learners", "treatment_model", "source_model",
                "source_cv_folds", "source_hidden_units", "cross_fitting", "replications", "seed", "clip_epsilon",
                "level", "scb_draws", "output", "simulate"},
               "");
    read(j, "seed", c.estimation.seed);
    c.simulation.seed = c.estimation.seed;
    c.inference.seed = c.estimation.seed;
    if (command == "simulate") {
        if (j.contains("simulate")) parse_simulation(j.at("simulate"), c.simulation, c.simulate_output, base_dir);
        else {
            c.simulate_output.data = resolve(base_dir, c.simulate_output.data);
            c.simulate_output.external = resolve(base_dir, c.simulate_output.external);
            c.simulate_output.truth = resolve(base_dir, c.simulate_output.truth);
        }
        // a top-level seed (also what CMR_SEED sets) wins over simulate.seed
        if (j.contains("seed")) c.simulation.seed = c.estimation.seed;
        else if (j.contains("simulate") && j.at("simulate").contains("seed"))
            read(j.at("simulate"), "seed", c.simulation.seed);
        return c;
    }
    c.estimation.analysis = parse_analysis(command);
    std::string data, external;
    read(j, "data", data);
    read(j, "external", external);
    if (data.empty()) throw ValidationError("config: 'data' (multi-source CSV path) is required");
    c.data_path = resolve(base_dir, data);
    c.external_path = resolve(base_dir, external);
    if (is_external(c.analysis()) && c.external_path.empty())
        throw ValidationError(std::string(command) + " requires 'external' (external covariate CSV path)");

    if (j.contains("columns")) {
        const auto& cols = j.at("columns");
        check_keys(cols, {"outcome", "source", "treatment", "effect_modifier", "covariates", "categorical"}, "columns");
        read(cols, "outcome", c.roles.outcome);
        read(cols, "source", c.roles.source);
        read(cols, "treatment", c.roles.treatment);
        if (cols.contains("effect_modifier") && !cols.at("effect_modifier").is_null())
            c.roles.effect_modifier = cols.at("effect_modifier").get<std::string>();
        read(cols, "covariates", c.roles.covariates);
        read(cols, "categorical", c.roles.categorical);
    }
    if (is_subgroup(c.analysis()) && !c.roles.effect_modifier)
        throw ValidationError(command + " requires the effect_modifier column role (columns.effect_modifier)");

    auto& n = c.estimation.nuisance;
    std::string family = "gaussian";
    read(j, "outcome_family", family);
    if (family == "gaussian") n.outcome_family = Family::gaussian;
    else if (family == "binomial") n.outcome_family = Family::binomial;
    else throw ValidationError("config: outcome_family must be gaussian or binomial");
    if (j.contains("learners")) {
        const auto& l = j.at("learners");
        check_keys(l, {"outcome", "treatment", "external"}, "learners");
        if (l.contains("outcome")) n.outcome = parse_learner(l.at("outcome"), "outcome");
        if (l.contains("treatment")) n.treatment = parse_learner(l.at("treatment"), "treatment");
        if (l.contains("external")) n.external = parse_learner(l.at("external"), "external");
    }
    std::string tm = "separate", sm = "mn_glmnet";
    read(j, "treatment_model", tm);
    read(j, "source_model", sm);
    if (tm == "joint") n.treatment_type = TreatmentModelType::joint;
    else if (tm == "separate") n.treatment_type = TreatmentModelType::separate;
    else throw ValidationError("config: treatment_model must be joint or separate");
    if (sm == "mn_glmnet" || sm == "MN.glmnet") n.source_model = SourceModelKind::mn_glmnet;
    else if (sm == "mn_glm") n.source_model = SourceModelKind::mn_glm;
    else if (sm == "mn_nnet" || sm == "MN.nnet") n.source_model = SourceModelKind::mn_nnet;
    else throw ValidationError("config: source_model must be mn_glmnet, mn_glm or mn_nnet");
    read(j, "source_cv_folds", n.source_cv_folds);
    read(j, "source_hidden_units", n.source_hidden_units);
    if (n.source_cv_folds < 2) throw ValidationError("config: source_cv_folds must be at least 2");

    read(j, "cross_fitting", c.estimation.cross_fitting);
    read(j, "replications", c.estimation.replications);
    read(j, "clip_epsilon", c.estimation.clip_epsilon);
    read(j, "level", c.inference.level);
    read(j, "scb_draws", c.inference.scb_draws);
    if (c.estimation.replications < 1) throw ValidationError("config: replications must be at least 1");
    if (!(c.inference.level > 0 && c.inference.level < 1)) throw ValidationError("config: level must lie in (0, 1)");
    if (c.inference.scb_draws < 1) throw ValidationError("config: scb_draws must be at least 1");

    if (j.contains("output")) {
        const auto& o = j.at("output");
        check_keys(o, {"dir", "stem", "summary", "svg", "use_scb", "sort", "width"}, "output");
        read(o, "dir", c.output.dir);
        read(o, "stem", c.output.stem);
        read(o, "summary", c.output.summary);
        read(o, "svg", c.output.svg);
        read(o, "use_scb", c.output.forest.use_scb);
        read(o, "sort", c.output.forest.sort);
        read(o, "width", c.output.forest.width);
    }
    c.output.dir = resolve(base_dir, c.output.dir);
    if (!c.output.svg.empty() && is_external(c.analysis()))
        throw ValidationError("forest plot defined for internal targets");
    return c;
}

LoadedData load_inputs(const RunConfig& config) {
    LoadedData out;
    out.data = validate_dataset(read_csv(config.data_path), config.roles);
    if (is_external(config.analysis())) {
        out.external = validate_external(read_csv(config.external_path), config.roles, out.data);
        if (is_subgroup(config.analysis()) && !out.external->effect_modifier)
            throw ValidationError("ste-external requires the effect modifier column in the external file");
        out.stacked = stack_with_external(out.data, *out.external);
    } else {
        out.stacked = stack_internal(out.data);
    }
    return out;
}

ResultDocument run_analysis(const RunConfig& config, const StackedDataset& data, int workers) {
    auto t0 = std::chrono::steady_clock::now();
    EstimationOptions opt = config.estimation;
    opt.workers = workers;
    AnalysisEstimates est = estimate(data, opt);
    double t_est = seconds_since(t0);
    auto t1 = std::chrono::steady_clock::now();
    InferenceOptions inf = config.inference;
    inf.workers = workers;
    ResultDocument doc = make_result_document(est, data, opt, inf);
    doc.timings = {{"estimation", t_est}, {"inference", seconds_since(t1)}};
    return doc;
}

ResultDocument run_analysis(const RunConfig& config, int workers) {
    auto t0 = std::chrono::steady_clock::now();
    LoadedData in = load_inputs(config);
    double t_load = seconds_since(t0);
    ResultDocument doc = run_analysis(config, in.stacked, workers);
    doc.timings.insert(doc.timings.begin(), {"load", t_load});
    doc.timings.emplace_back("total", seconds_since(t0));
    return doc;
}

std::vector<std::string> write_outputs(const RunConfig& config, const ResultDocument& result) {
    std::error_code ec;
    fs::create_directories(config.output.dir, ec);
    if (ec) throw IoError("cannot create output directory '" + config.output.dir + "': " + ec.message());
    auto path = [&](const std::string& name) { return (fs::path(config.output.dir) / name).string(); };
    std::vector<std::string> written = serialize_results(result, path(config.output.stem));
    if (!config.output.summary.empty()) {
        write_text(path(config.output.summary), format_summary(result));
        written.push_back(path(config.output.summary));
    }
    if (!config.output.svg.empty()) {
        write_text(path(config.output.svg), emit_forest_svg(result, config.output.forest));
        written.push_back(path(config.output.svg));
    }
    return written;
}

std::string truth_json(const TruthTable& truth, const SimConfig& config) {
    nlohmann::ordered_json j;
    j["seed"] = config.seed;
    nlohmann::ordered_json pops = nlohmann::ordered_json::array();
    auto effect = [](const TrueEffect& t) {
        nlohmann::ordered_json e;
        e["value"] = t.value;
        e["mc_se"] = t.mc_se;
        e["closed_form"] = t.closed_form ? nlohmann::ordered_json(*t.closed_form) : nlohmann::ordered_json(nullptr);
        return e;
    };
    for (const auto& p : truth.populations) {
        nlohmann::ordered_json e;
        std::string label = config.m <= 26 ? std::string(1, static_cast<char>('A' + p.population - 1))
                                           : std::to_string(p.population);
        e["population"] = p.population == 0 ? std::string("external") : label;
        e["ate"] = effect(p.ate);
        nlohmann::ordered_json ste = nlohmann::ordered_json::array();
        for (const auto& s : p.ste) ste.push_back(effect(s));
        e["ste"] = std::move(ste);
        pops.push_back(std::move(e));
    }
    j["populations"] = std::move(pops);
    return j.dump(2) + "\n";
}

std::vector<std::string> run_simulate(const RunConfig& config, int workers) {
    SimulatedData sim = generate_multisource(config.simulation);
    std::vector<std::string> written;
    for (const auto& p : {config.simulate_output.data, config.simulate_output.external, config.simulate_output.truth}) {
        if (p.empty()) continue;
        fs::path parent = fs::path(p).parent_path();
        std::error_code ec;
        if (!parent.empty()) fs::create_directories(parent, ec);
    }
    {
        std::ostringstream s;
        write_dataset_csv(s, sim.data);
        write_text(config.simulate_output.data, s.str());
        written.push_back(config.simulate_output.data);
    }
    if (!config.simulate_output.external.empty() && sim.external.n() > 0) {
        std::ostringstream s;
        write_external_csv(s, sim.external, sim.data.effect_modifier_name.empty() ? "EM" : sim.data.effect_modifier_name);
        write_text(config.simulate_output.external, s.str());
        written.push_back(config.simulate_output.external);
    }
    if (!config.simulate_output.truth.empty()) {
        TruthTable t = true_effects(config.simulation, config.simulate_output.oracle_n, derive_seed(config.simulation.seed, 77), workers);
        write_text(config.simulate_output.truth, truth_json(t, config.simulation));
        written.push_back(config.simulate_output.truth);
    }
    return written;
}

} // namespace cmr
