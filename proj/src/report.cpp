#include "cmr/report.hpp"

#include "cmr/csv.hpp"
#include "cmr/error.hpp"
#include "cmr/inference.hpp"
#include "cmr/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cmr {

using ojson = nlohmann::ordered_json;

const std::array<const char*, 3> kTableNames{"df_A0", "df_A1", "df_dif"};

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string percent(double level) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", level * 100.0);
    return buf;
}

std::string population_label(const StackedDataset& data, const Target& t) {
    return t.external() ? "external" : data.source_labels[static_cast<std::size_t>(t.population - 1)];
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

const char* title(Analysis a) {
    switch (a) {
    case Analysis::ate_internal: return "AVERAGE TREATMENT EFFECT ESTIMATES IN INTERNAL POPULATIONS";
    case Analysis::ate_external: return "AVERAGE TREATMENT EFFECT ESTIMATES IN AN EXTERNAL POPULATION";
    case Analysis::ste_internal: return "SUBGROUP TREATMENT EFFECT ESTIMATES IN INTERNAL POPULATIONS";
    case Analysis::ste_external: return "SUBGROUP TREATMENT EFFECT ESTIMATES IN AN EXTERNAL POPULATION";
    }
    return "";
}

// Right-aligned columns separated by one space, each as wide as its widest
// cell, like R's data.frame printing.
std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& cells) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t j = 0; j < header.size(); ++j) {
        width[j] = header[j].size();
        for (const auto& row : cells) width[j] = std::max(width[j], row[j].size());
    }
    auto line = [&](const std::vector<std::string>& row) {
        std::string s;
        for (std::size_t j = 0; j < row.size(); ++j) s += " " + std::string(width[j] - row[j].size(), ' ') + row[j];
        return s + "\n";
    };
    std::string out = line(header);
    for (const auto& row : cells) out += line(row);
    return out;
}

std::string section(const std::string& heading, const ResultDocument& r, int table) {
    const auto& rows = r.tables[static_cast<std::size_t>(table)];
    const bool internal = !is_external(r.analysis);
    const bool subgroup = is_subgroup(r.analysis);
    const bool scb = !rows.empty() && rows.front().scb_lower.has_value();
    const std::string pct = percent(r.level);
    std::vector<std::string> header;
    if (internal) header.push_back("Source");
    if (subgroup) header.push_back("Subgroup");
    for (const char* h : {"Estimate", "SE"}) header.emplace_back(h);
    header.push_back("Lower " + pct + "% CI");
    header.push_back("Upper " + pct + "% CI");
    if (scb) {
        header.push_back("Lower " + pct + "% SCB");
        header.push_back("Upper " + pct + "% SCB");
    }
    std::vector<std::vector<std::string>> cells;
    std::string last_population;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        std::vector<std::string> c;
        if (internal) {
            bool first = i == 0 || row.population != last_population || !subgroup;
            c.push_back(first ? row.population : "");
            last_population = row.population;
        }
        if (subgroup) c.push_back(row.subgroup);
        c.push_back(fixed(row.estimate, 4));
        c.push_back(fixed(row.se, 4));
        c.push_back(fixed(row.ci_lower, 4));
        c.push_back(fixed(row.ci_upper, 4));
        if (scb) {
            c.push_back(fixed(*row.scb_lower, 4));
            c.push_back(fixed(*row.scb_upper, 4));
        }
        cells.push_back(std::move(c));
    }
    return heading + "\n" + std::string(heading.size(), '-') + "\n" + render_table(header, cells);
}

ojson row_json(const EstimateRow& r) {
    ojson j;
    j["target"] = r.population;
    j["subgroup"] = r.subgroup.empty() ? ojson(nullptr) : ojson(r.subgroup);
    j["estimate"] = r.estimate;
    j["se"] = r.se;
    j["ci_lower"] = r.ci_lower;
    j["ci_upper"] = r.ci_upper;
    j["scb_lower"] = r.scb_lower ? ojson(*r.scb_lower) : ojson(nullptr);
    j["scb_upper"] = r.scb_upper ? ojson(*r.scb_upper) : ojson(nullptr);
    return j;
}

std::optional<double> optional_number(const ojson& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("failed writing '" + path + "'");
}

} // namespace

std::array<std::vector<EstimateRow>, 3> assemble_rows(const AnalysisEstimates& est, const StackedDataset& data,
                                                      const InferenceOptions& options,
                                                      std::array<std::optional<double>, 3>* critical_values,
                                                      std::vector<std::string>* warnings) {
    std::array<std::vector<EstimateRow>, 3> tables;
    const bool scb = is_subgroup(est.analysis);
    for (std::size_t t = 0; t < 3; ++t) {
        const std::size_t count = est.targets.size();
        if (count == 0) continue;
        std::vector<double> se(count);
        for (std::size_t j = 0; j < count; ++j) se[j] = std::sqrt(std::max(est.variance[t][j], 0.0));
        BandResult bands;
        if (scb) {
            bands = simultaneous_bands(est.point[t], se, est.correlation[t], options.level, options.scb_draws,
                                       derive_seed(options.seed, 0x5CB, t), options.workers);
            if (critical_values) (*critical_values)[t] = bands.critical_value;
            if (warnings)
                for (const auto& w : bands.warnings) warnings->push_back(std::string(kTableNames[t]) + ": " + w);
        }
        for (std::size_t j = 0; j < count; ++j) {
            EstimateRow row;
            row.target = est.targets[j];
            row.population = population_label(data, row.target);
            if (row.target.subgroup >= 0)
                row.subgroup = data.effect_modifier_levels[static_cast<std::size_t>(row.target.subgroup)];
            row.estimate = est.point[t][j];
            row.se = se[j];
            Interval ci = wald_ci(row.estimate, row.se, options.level);
            row.ci_lower = ci.lower;
            row.ci_upper = ci.upper;
            if (scb) {
                row.scb_lower = bands.bands[j].lower;
                row.scb_upper = bands.bands[j].upper;
            }
            tables[t].push_back(std::move(row));
        }
    }
    return tables;
}

ResultDocument make_result_document(const AnalysisEstimates& est, const StackedDataset& data,
                                    const EstimationOptions& options, const InferenceOptions& inference) {
    ResultDocument r;
    r.analysis = est.analysis;
    r.warnings = est.warnings;
    r.tables = assemble_rows(est, data, inference, &r.scb_critical_value, &r.warnings);
    r.n_internal = data.n_internal;
    r.n_external = is_external(est.analysis) ? data.n_external : 0;
    r.source_labels = data.source_labels;
    r.source_sizes.assign(data.m(), 0);
    for (int s : data.source)
        if (s > 0) ++r.source_sizes[static_cast<std::size_t>(s - 1)];
    if (is_subgroup(est.analysis)) {
        r.effect_modifier = data.effect_modifier_name;
        r.effect_modifier_levels = data.effect_modifier_levels;
    }
    const auto& n = options.nuisance;
    auto policy = [](const LearnerSpec& s) {
        return std::string(s.policy == StackPolicy::convex_stack ? "convex_stack" : "discrete_select");
    };
    r.learners = {n.outcome.describe(), n.treatment.describe(), is_external(est.analysis) ? n.external.describe() : ""};
    r.stack_policy = {policy(n.outcome), policy(n.treatment), is_external(est.analysis) ? policy(n.external) : ""};
    r.source_model = data.m() > 1 ? to_string(n.source_model) : "none (single source)";
    r.treatment_model = to_string(n.treatment_type);
    r.outcome_family = to_string(n.outcome_family);
    r.clip_epsilon = options.clip_epsilon;
    r.cross_fitting = est.cross_fitting;
    r.folds = est.folds;
    r.replications = est.replications;
    r.seed = options.seed;
    r.level = inference.level;
    r.scb_draws = is_subgroup(est.analysis) ? inference.scb_draws : 0;
    r.variance_rule = est.cross_fitting
                          ? "per replication: sum of split variances / K^2; across replications: "
                            "median of (variance + squared deviation from the median estimate)"
                          : "sum of squared influence contributions / n_target^2";
    return r;
}

std::string format_summary(const ResultDocument& r) {
    std::string out = std::string(title(r.analysis)) + "\n\n";
    out += section("Treatment effect (mean difference) estimates:", r, kDifference);
    out += "\n\n";
    out += section("Potential outcome mean estimates under A = 0:", r, kArm0);
    out += "\n\n";
    out += section("Potential outcome mean estimates under A = 1:", r, kArm1);
    out += "\n\n";
    const std::string footer = "SuperLearner libraries used:";
    out += footer + "\n" + std::string(footer.size(), '-') + "\n";
    out += "Outcome model: " + r.learners[0] + "\n";
    out += "Treatment model: " + r.learners[1] + "\n";
    out += "Source model: NA (model fit via " + r.source_model + ")\n";
    if (is_external(r.analysis)) out += "External model: " + r.learners[2] + "\n";
    if (!r.warnings.empty()) {
        out += "\nWarnings:\n";
        for (const auto& w : r.warnings) out += "  " + w + "\n";
    }
    return out;
}

std::string emit_forest_svg(const ResultDocument& r, const ForestOptions& opt) {
    if (is_external(r.analysis)) throw ValidationError("forest plot defined for internal targets");
    const auto& rows_in = r.tables[kDifference];
    if (rows_in.empty()) throw ValidationError("forest plot needs at least one estimate");
    if (opt.use_scb && !rows_in.front().scb_lower)
        throw ValidationError("use_scb requires simultaneous bands, which are computed for subgroup analyses only");
    if (opt.width < 400 || opt.row_height < 12) throw ValidationError("forest plot dimensions too small");

    // Geometry (pixels).
    constexpr double kMarginTop = 40, kMarginBottom = 50, kLabelWidth = 150, kAnnotationWidth = 190, kPad = 16;
    constexpr double kSquare = 7, kFontSize = 12;

    std::vector<EstimateRow> rows = rows_in;
    if (opt.sort)
        std::stable_sort(rows.begin(), rows.end(), [](const EstimateRow& a, const EstimateRow& b) {
            if (a.target.population != b.target.population) return a.target.population < b.target.population;
            return a.estimate < b.estimate;
        });
    auto lower = [&](const EstimateRow& row) { return opt.use_scb ? *row.scb_lower : row.ci_lower; };
    auto upper = [&](const EstimateRow& row) { return opt.use_scb ? *row.scb_upper : row.ci_upper; };

    double lo = lower(rows.front()), hi = upper(rows.front());
    for (const auto& row : rows) {
        lo = std::min(lo, lower(row));
        hi = std::max(hi, upper(row));
    }
    if (!(hi > lo)) {
        lo -= 1.0;
        hi += 1.0;
    }
    double raw_step = (hi - lo) / 5.0;
    double mag = std::pow(10.0, std::floor(std::log10(raw_step)));
    double step = mag;
    for (double f : {1.0, 2.0, 5.0, 10.0})
        if (f * mag >= raw_step) {
            step = f * mag;
            break;
        }
    double axis_lo = std::floor(lo / step) * step, axis_hi = std::ceil(hi / step) * step;

    const double plot_left = kLabelWidth + kPad;
    const double plot_right = opt.width - kAnnotationWidth - kPad;
    const double height = kMarginTop + rows.size() * static_cast<double>(opt.row_height) + kMarginBottom;
    auto xpos = [&](double v) { return plot_left + (v - axis_lo) / (axis_hi - axis_lo) * (plot_right - plot_left); };
    auto num = [](double v) { return fixed(v, 2); };

    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << opt.width << "\" height=\""
      << num(height) << "\" viewBox=\"0 0 " << opt.width << " " << num(height) << "\" font-family=\"Helvetica, Arial, sans-serif\" font-size=\""
      << num(kFontSize) << "\">\n";
    s << "<rect x=\"0\" y=\"0\" width=\"" << opt.width << "\" height=\"" << num(height) << "\" fill=\"white\"/>\n";
    const bool subgroup = is_subgroup(r.analysis);
    s << "<text x=\"8\" y=\"24\" font-weight=\"bold\">Source</text>\n";
    if (subgroup) s << "<text x=\"80\" y=\"24\" font-weight=\"bold\">Subgroup</text>\n";
    s << "<text x=\"" << num(opt.width - kAnnotationWidth) << "\" y=\"24\" font-weight=\"bold\">Estimate ["
      << (opt.use_scb ? "SCB" : "CI") << "]</text>\n";

    const double plot_bottom = kMarginTop + rows.size() * static_cast<double>(opt.row_height);
    if (axis_lo < 0 && axis_hi > 0)
        s << "<line x1=\"" << num(xpos(0)) << "\" y1=\"" << num(kMarginTop) << "\" x2=\"" << num(xpos(0)) << "\" y2=\""
          << num(plot_bottom) << "\" stroke=\"#888888\" stroke-dasharray=\"4,3\"/>\n";

    std::string last;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        double y = kMarginTop + (i + 0.5) * opt.row_height;
        double ty = y + kFontSize / 3.0;
        if (row.population != last || !subgroup)
            s << "<text x=\"8\" y=\"" << num(ty) << "\">" << xml_escape(row.population) << "</text>\n";
        last = row.population;
        if (subgroup) s << "<text x=\"80\" y=\"" << num(ty) << "\">" << xml_escape(row.subgroup) << "</text>\n";
        s << "<line x1=\"" << num(xpos(lower(row))) << "\" y1=\"" << num(y) << "\" x2=\"" << num(xpos(upper(row)))
          << "\" y2=\"" << num(y) << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
        s << "<rect x=\"" << num(xpos(row.estimate) - kSquare / 2) << "\" y=\"" << num(y - kSquare / 2) << "\" width=\""
          << num(kSquare) << "\" height=\"" << num(kSquare) << "\" fill=\"black\"/>\n";
        s << "<text x=\"" << num(opt.width - kAnnotationWidth) << "\" y=\"" << num(ty) << "\">" << num(row.estimate)
          << " [" << num(lower(row)) << ", " << num(upper(row)) << "]</text>\n";
    }
    s << "<line x1=\"" << num(plot_left) << "\" y1=\"" << num(plot_bottom) << "\" x2=\"" << num(plot_right) << "\" y2=\""
      << num(plot_bottom) << "\" stroke=\"black\"/>\n";
    for (double v = axis_lo; v <= axis_hi + step * 1e-9; v += step) {
        double x = xpos(v);
        s << "<line x1=\"" << num(x) << "\" y1=\"" << num(plot_bottom) << "\" x2=\"" << num(x) << "\" y2=\""
          << num(plot_bottom + 5) << "\" stroke=\"black\"/>\n";
        double shown = std::abs(v) < step * 1e-9 ? 0.0 : v;
        char label[32];
        std::snprintf(label, sizeof label, "%g", shown);
        s << "<text x=\"" << num(x) << "\" y=\"" << num(plot_bottom + 20) << "\" text-anchor=\"middle\">" << label
          << "</text>\n";
    }
    s << "<text x=\"" << num((plot_left + plot_right) / 2) << "\" y=\"" << num(plot_bottom + 40)
      << "\" text-anchor=\"middle\">Treatment effect (mean difference)</text>\n";
    s << "</svg>\n";
    return s.str();
}

std::string to_json(const ResultDocument& r) {
    ojson doc;
    doc["analysis"] = to_string(r.analysis);
    ojson tables = ojson::object();
    for (std::size_t t = 0; t < 3; ++t) {
        ojson rows = ojson::array();
        for (const auto& row : r.tables[t]) rows.push_back(row_json(row));
        tables[kTableNames[t]] = std::move(rows);
    }
    doc["tables"] = std::move(tables);
    ojson meta;
    meta["n_internal"] = r.n_internal;
    meta["n_external"] = r.n_external;
    ojson sources = ojson::array();
    for (std::size_t s = 0; s < r.source_labels.size(); ++s)
        sources.push_back({{"label", r.source_labels[s]}, {"n", r.source_sizes[s]}});
    meta["sources"] = std::move(sources);
    meta["effect_modifier"] = r.effect_modifier.empty() ? ojson(nullptr) : ojson(r.effect_modifier);
    meta["effect_modifier_levels"] = r.effect_modifier_levels;
    ojson learners;
    const char* roles[] = {"outcome", "treatment", "external"};
    for (std::size_t k = 0; k < 3; ++k)
        learners[roles[k]] = r.learners[k].empty()
                                 ? ojson(nullptr)
                                 : ojson{{"candidates", r.learners[k]}, {"policy", r.stack_policy[k]}};
    learners["source"] = r.source_model;
    meta["learners"] = std::move(learners);
    meta["treatment_model"] = r.treatment_model;
    meta["outcome_family"] = r.outcome_family;
    meta["clip_epsilon"] = r.clip_epsilon;
    meta["cross_fitting"] = r.cross_fitting;
    meta["folds"] = r.folds;
    meta["replications"] = r.replications;
    meta["seed"] = r.seed;
    meta["level"] = r.level;
    meta["scb_draws"] = r.scb_draws;
    ojson crit = ojson::object();
    for (std::size_t t = 0; t < 3; ++t)
        crit[kTableNames[t]] = r.scb_critical_value[t] ? ojson(*r.scb_critical_value[t]) : ojson(nullptr);
    meta["scb_critical_values"] = std::move(crit);
    meta["variance_rule"] = r.variance_rule;
    meta["warnings"] = r.warnings;
    doc["metadata"] = std::move(meta);
    return doc.dump(2) + "\n";
}

ResultDocument result_from_json(const std::string& text) {
    ResultDocument r;
    try {
        ojson doc = ojson::parse(text);
        r.analysis = parse_analysis(doc.at("analysis").get<std::string>());
        for (std::size_t t = 0; t < 3; ++t)
            for (const auto& j : doc.at("tables").at(kTableNames[t])) {
                EstimateRow row;
                row.population = j.at("target").get<std::string>();
                row.subgroup = j.at("subgroup").is_null() ? "" : j.at("subgroup").get<std::string>();
                row.estimate = j.at("estimate").get<double>();
                row.se = j.at("se").get<double>();
                row.ci_lower = j.at("ci_lower").get<double>();
                row.ci_upper = j.at("ci_upper").get<double>();
                row.scb_lower = optional_number(j.at("scb_lower"));
                row.scb_upper = optional_number(j.at("scb_upper"));
                r.tables[t].push_back(std::move(row));
            }
        const auto& meta = doc.at("metadata");
        r.n_internal = meta.at("n_internal").get<std::size_t>();
        r.n_external = meta.at("n_external").get<std::size_t>();
        for (const auto& s : meta.at("sources")) {
            r.source_labels.push_back(s.at("label").get<std::string>());
            r.source_sizes.push_back(s.at("n").get<std::size_t>());
        }
        r.effect_modifier = meta.at("effect_modifier").is_null() ? "" : meta.at("effect_modifier").get<std::string>();
        r.effect_modifier_levels = meta.at("effect_modifier_levels").get<std::vector<std::string>>();
        const char* roles[] = {"outcome", "treatment", "external"};
        for (std::size_t k = 0; k < 3; ++k) {
            const auto& l = meta.at("learners").at(roles[k]);
            if (l.is_null()) continue;
            r.learners[k] = l.at("candidates").get<std::string>();
            r.stack_policy[k] = l.at("policy").get<std::string>();
        }
        r.source_model = meta.at("learners").at("source").get<std::string>();
        r.treatment_model = meta.at("treatment_model").get<std::string>();
        r.outcome_family = meta.at("outcome_family").get<std::string>();
        r.clip_epsilon = meta.at("clip_epsilon").get<double>();
        r.cross_fitting = meta.at("cross_fitting").get<bool>();
        r.folds = meta.at("folds").get<int>();
        r.replications = meta.at("replications").get<int>();
        r.seed = meta.at("seed").get<std::uint64_t>();
        r.level = meta.at("level").get<double>();
        r.scb_draws = meta.at("scb_draws").get<int>();
        for (std::size_t t = 0; t < 3; ++t) r.scb_critical_value[t] = optional_number(meta.at("scb_critical_values").at(kTableNames[t]));
        r.variance_rule = meta.at("variance_rule").get<std::string>();
        r.warnings = meta.at("warnings").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed results document: ") + e.what());
    }
    // Reattach target indices from the labels.
    for (auto& table : r.tables)
        for (auto& row : table) {
            auto it = std::find(r.source_labels.begin(), r.source_labels.end(), row.population);
            row.target.population =
                is_external(r.analysis) ? 0 : static_cast<int>(it - r.source_labels.begin()) + 1;
            auto lv = std::find(r.effect_modifier_levels.begin(), r.effect_modifier_levels.end(), row.subgroup);
            row.target.subgroup =
                row.subgroup.empty() ? -1 : static_cast<int>(lv - r.effect_modifier_levels.begin());
        }
    return r;
}

std::string table_csv(const std::vector<EstimateRow>& rows) {
    std::string out = "target,subgroup,estimate,se,ci_lower,ci_upper,scb_lower,scb_upper\n";
    for (const auto& r : rows) {
        out += csv_escape(r.population) + "," + csv_escape(r.subgroup) + "," + format_double(r.estimate) + "," +
               format_double(r.se) + "," + format_double(r.ci_lower) + "," + format_double(r.ci_upper) + "," +
               (r.scb_lower ? format_double(*r.scb_lower) : "") + "," +
               (r.scb_upper ? format_double(*r.scb_upper) : "") + "\n";
    }
    return out;
}

std::string timings_json(const ResultDocument& r) {
    ojson j = ojson::object();
    for (const auto& [stage, seconds] : r.timings) j[stage] = seconds;
    return j.dump(2) + "\n";
}

std::vector<std::string> serialize_results(const ResultDocument& r, const std::string& stem) {
    std::vector<std::string> written;
    auto put = [&](const std::string& path, const std::string& content) {
        write_file(path, content);
        written.push_back(path);
    };
    put(stem + ".json", to_json(r));
    for (std::size_t t = 0; t < 3; ++t) put(stem + "_" + kTableNames[t] + ".csv", table_csv(r.tables[t]));
    put(stem + ".timings.json", timings_json(r));
    return written;
}

} // namespace cmr
