#include "cmr/crossfit.hpp"

#include "cmr/error.hpp"
#include "cmr/parallel.hpp"
#include "cmr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace cmr {

const char* to_string(Analysis analysis) {
    switch (analysis) {
    case Analysis::ate_internal: return "ate-internal";
    case Analysis::ate_external: return "ate-external";
    case Analysis::ste_internal: return "ste-internal";
    case Analysis::ste_external: return "ste-external";
    }
    return "?";
}

Analysis parse_analysis(const std::string& name) {
    for (Analysis a : {Analysis::ate_internal, Analysis::ate_external, Analysis::ste_internal, Analysis::ste_external})
        if (name == to_string(a)) return a;
    throw ValidationError("unknown analysis '" + name + "'");
}

bool is_external(Analysis analysis) {
    return analysis == Analysis::ate_external || analysis == Analysis::ste_external;
}

bool is_subgroup(Analysis analysis) {
    return analysis == Analysis::ste_internal || analysis == Analysis::ste_external;
}

int default_folds(Analysis analysis) { return is_external(analysis) ? 5 : 4; }

std::vector<Target> analysis_targets(const StackedDataset& data, Analysis analysis) {
    std::vector<Target> out;
    const int levels = static_cast<int>(data.effect_modifier_levels.size());
    if (is_subgroup(analysis) && levels == 0)
        throw ValidationError(std::string(to_string(analysis)) + " requires an effect modifier column");
    if (is_external(analysis) && !data.has_external())
        throw ValidationError(std::string(to_string(analysis)) + " requires an external covariate sample");
    auto add_population = [&](int population) {
        if (!is_subgroup(analysis)) {
            out.push_back({population, -1});
            return;
        }
        for (int x = 0; x < levels; ++x) out.push_back({population, x});
    };
    if (is_external(analysis)) {
        add_population(0);
    } else {
        for (int s = 1; s <= static_cast<int>(data.m()); ++s) add_population(s);
    }
    return out;
}

std::vector<int> analysis_rows(const StackedDataset& data, Analysis analysis) {
    std::vector<int> rows;
    rows.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        if (is_external(analysis) || data.source[i] > 0) rows.push_back(static_cast<int>(i));
    return rows;
}

std::vector<std::string> stratum_labels(const StackedDataset& data, const std::vector<int>& rows, Analysis analysis) {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (int r : rows) {
        auto i = static_cast<std::size_t>(r);
        int s = data.source[i];
        std::string label = s == 0 ? "(external)" : "S=" + data.source_labels[static_cast<std::size_t>(s - 1)];
        if (is_subgroup(analysis)) {
            int x = data.effect_modifier[i];
            if (x < 0) throw ValidationError("effect modifier missing on row " + std::to_string(r + 1));
            label += "|" + data.effect_modifier_name + "=" + data.effect_modifier_levels[static_cast<std::size_t>(x)];
        }
        out.push_back(std::move(label));
    }
    return out;
}

std::vector<int> stratified_split(const std::vector<std::string>& strata, int folds, std::uint64_t seed,
                                  int replication) {
    if (folds < 2) throw ValidationError("cross-fitting needs at least two folds");
    std::map<std::string, std::vector<int>> groups;
    for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(static_cast<int>(i));
    std::vector<int> fold(strata.size(), 0);
    std::size_t dealt = 0;
    for (auto& [label, members] : groups) {
        if (members.size() < static_cast<std::size_t>(folds))
            throw ValidationError("stratum '" + label + "' has " + std::to_string(members.size()) +
                                  " rows, fewer than the " + std::to_string(folds) +
                                  " cross-fitting folds; set cross_fitting=false for small samples");
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(replication), hash_string(label)));
        // Fisher-Yates with a portable bounded draw.
        for (std::size_t i = members.size() - 1; i > 0; --i) {
            std::uint64_t bound = i + 1;
            std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
            std::uint64_t u;
            do u = rng(); while (u >= limit);
            std::swap(members[i], members[static_cast<std::size_t>(u % bound)]);
        }
        for (int r : members) fold[static_cast<std::size_t>(r)] = static_cast<int>(dealt++ % folds) + 1;
    }
    return fold;
}

NuisanceRoles assign_nuisance_roles(int folds, int k) {
    if (folds != 4 && folds != 5) throw ValidationError("cross-fitting uses 4 or 5 folds");
    if (k < 1 || k > folds) throw ValidationError("estimation fold out of range");
    auto at = [&](int offset) { return (k - 1 + offset) % folds + 1; };
    NuisanceRoles roles;
    roles.outcome = at(1);
    roles.treatment = at(2);
    roles.source = at(3);
    if (folds == 5) roles.external = at(4);
    return roles;
}

double median(std::vector<double> values) {
    if (values.empty()) throw ValidationError("median of an empty set");
    std::sort(values.begin(), values.end());
    std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::pair<double, double> aggregate_replications(const std::vector<double>& points,
                                                 const std::vector<double>& variances) {
    if (points.empty() || points.size() != variances.size())
        throw ValidationError("aggregate_replications needs one variance per replication");
    double point = median(points);
    std::vector<double> spread(points.size());
    for (std::size_t l = 0; l < points.size(); ++l) spread[l] = variances[l] + (points[l] - point) * (points[l] - point);
    return {point, median(std::move(spread))};
}

namespace {

void collect_warnings(const ModelPtr& model, const std::string& role, std::vector<std::string>& out) {
    if (!model) return;
    for (const auto& w : model->info().warnings) out.push_back(role + ": " + w);
}

std::vector<std::string> fit_warnings(const NuisanceFits& fits) {
    std::vector<std::string> out;
    collect_warnings(fits.outcome[0], "outcome model (A=0)", out);
    collect_warnings(fits.outcome[1], "outcome model (A=1)", out);
    collect_warnings(fits.source, "source model", out);
    collect_warnings(fits.treatment.joint, "treatment model", out);
    for (std::size_t s = 0; s < fits.treatment.per_source.size(); ++s)
        collect_warnings(fits.treatment.per_source[s], "treatment model (source " + std::to_string(s + 1) + ")", out);
    collect_warnings(fits.external, "external model", out);
    return out;
}

void append_unique(std::vector<std::string>& into, const std::vector<std::string>& from) {
    for (const auto& w : from)
        if (std::find(into.begin(), into.end(), w) == into.end()) into.push_back(w);
}

Eigen::MatrixXd to_correlation(const Eigen::MatrixXd& cov) {
    Eigen::MatrixXd r(cov.rows(), cov.cols());
    for (Eigen::Index i = 0; i < cov.rows(); ++i)
        for (Eigen::Index j = 0; j < cov.cols(); ++j) {
            double d = std::sqrt(cov(i, i) * cov(j, j));
            r(i, j) = i == j ? 1.0 : (d > 0 ? cov(i, j) / d : 0.0);
        }
    return r;
}

void check_options(const StackedDataset& data, const EstimationOptions& options) {
    if (!(options.clip_epsilon >= 0.0 && options.clip_epsilon < 0.5))
        throw ValidationError("clip epsilon must lie in [0, 0.5)");
    if (options.replications < 1) throw ValidationError("replications must be at least 1");
    options.nuisance.outcome.validate();
    options.nuisance.treatment.validate();
    if (is_external(options.analysis)) options.nuisance.external.validate();
    (void)data;
}

struct SplitOutput {
    ReplicationResult result;
    std::vector<std::string> warnings;
};

struct SplitContext {
    const StackedDataset& data;
    const EstimationOptions& options;
    const std::vector<int>& rows;
    const std::vector<Target>& targets;
    int folds;
};

std::string where(int replication, int k) {
    return "replication " + std::to_string(replication + 1) + ", estimation fold " + std::to_string(k);
}

SplitOutput run_split(const SplitContext& ctx, const std::vector<int>& assignment, int replication, int k) {
    std::vector<std::vector<int>> by_fold(static_cast<std::size_t>(ctx.folds + 1));
    for (std::size_t i = 0; i < ctx.rows.size(); ++i) by_fold[static_cast<std::size_t>(assignment[i])].push_back(ctx.rows[i]);
    NuisanceRoles roles = assign_nuisance_roles(ctx.folds, k);
    NuisanceRows nrows;
    nrows.outcome = by_fold[static_cast<std::size_t>(roles.outcome)];
    nrows.treatment = by_fold[static_cast<std::size_t>(roles.treatment)];
    nrows.source = by_fold[static_cast<std::size_t>(roles.source)];
    if (roles.external > 0) nrows.external = by_fold[static_cast<std::size_t>(roles.external)];
    const bool external = is_external(ctx.options.analysis);
    try {
        std::uint64_t seed = derive_seed(ctx.options.seed, 0xC0F, static_cast<std::uint64_t>(replication),
                                         static_cast<std::uint64_t>(k));
        NuisanceFits fits = fit_nuisance(ctx.data, nrows, ctx.options.nuisance, external, seed);
        SplitOutput out;
        out.result = evaluate_split(ctx.data, fits, by_fold[static_cast<std::size_t>(k)], ctx.targets,
                                    ctx.options.clip_epsilon);
        out.warnings = fit_warnings(fits);
        return out;
    } catch (const ValidationError& e) {
        throw ValidationError(where(replication, k) + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(where(replication, k) + ": " + e.what());
    }
}

ReplicationResult combine_splits(const std::vector<SplitOutput>& splits, std::size_t first, int folds) {
    ReplicationResult out = splits[first].result;
    const double kk = static_cast<double>(folds);
    for (int t = 0; t < 3; ++t) {
        for (std::size_t j = 0; j < out.point[static_cast<std::size_t>(t)].size(); ++j) {
            double p = 0.0, v = 0.0;
            for (int k = 0; k < folds; ++k) {
                const auto& r = splits[first + static_cast<std::size_t>(k)].result;
                p += r.point[static_cast<std::size_t>(t)][j];
                v += r.variance[static_cast<std::size_t>(t)][j];
            }
            out.point[static_cast<std::size_t>(t)][j] = p / kk;
            out.variance[static_cast<std::size_t>(t)][j] = v / (kk * kk);
        }
    }
    for (std::size_t t = 0; t < 3; ++t) {
        out.covariance[t].setZero();
        for (int k = 0; k < folds; ++k) out.covariance[t] += splits[first + static_cast<std::size_t>(k)].result.covariance[t];
        out.covariance[t] /= kk * kk;
    }
    return out;
}

} // namespace

ReplicationResult evaluate_split(const StackedDataset& data, const NuisanceFits& fits,
                                 const std::vector<int>& eval_rows, const std::vector<Target>& targets,
                                 double clip_epsilon) {
    NuisancePredictions pred = predict_nuisance(fits, data, eval_rows);
    EvaluationData ev = evaluation_rows(data, eval_rows);
    const std::size_t t_count = targets.size();
    ReplicationResult out;
    for (auto& v : out.point) v.resize(t_count);
    for (auto& v : out.variance) v.resize(t_count);
    std::array<Eigen::MatrixXd, 3> scaled;
    for (auto& m : scaled) m.resize(static_cast<Eigen::Index>(eval_rows.size()), static_cast<Eigen::Index>(t_count));
    for (std::size_t j = 0; j < t_count; ++j) {
        ArmEstimate a0 = estimate_arm(ev, pred, targets[j], 0, clip_epsilon);
        ArmEstimate a1 = estimate_arm(ev, pred, targets[j], 1, clip_epsilon);
        EffectEstimate d = effect_from_arms(a1, a0);
        auto var = [](const Eigen::VectorXd& infl, double denom) { return infl.squaredNorm() / (denom * denom); };
        out.point[kArm0][j] = a0.point;
        out.point[kArm1][j] = a1.point;
        out.point[kDifference][j] = d.point;
        out.variance[kArm0][j] = var(a0.influence, a0.denom_count);
        out.variance[kArm1][j] = var(a1.influence, a1.denom_count);
        out.variance[kDifference][j] = d.se * d.se;
        auto col = static_cast<Eigen::Index>(j);
        scaled[kArm0].col(col) = a0.influence / a0.denom_count;
        scaled[kArm1].col(col) = a1.influence / a1.denom_count;
        scaled[kDifference].col(col) = d.influence / d.denom_count;
    }
    for (std::size_t t = 0; t < 3; ++t) out.covariance[t] = scaled[t].transpose() * scaled[t];
    return out;
}

ReplicationResult run_replication(const StackedDataset& data, const EstimationOptions& options,
                                  const CrossFitPlan& plan, int replication, std::vector<std::string>* warnings) {
    check_options(data, options);
    std::vector<Target> targets = analysis_targets(data, options.analysis);
    std::vector<int> rows = analysis_rows(data, options.analysis);
    std::vector<int> assignment =
        stratified_split(stratum_labels(data, rows, options.analysis), plan.folds, plan.seed, replication);
    EstimationOptions opt = options;
    opt.seed = plan.seed;
    SplitContext ctx{data, opt, rows, targets, plan.folds};
    std::vector<SplitOutput> splits(static_cast<std::size_t>(plan.folds));
    parallel_for(splits.size(), options.workers, [&](std::size_t k) {
        splits[k] = run_split(ctx, assignment, replication, static_cast<int>(k) + 1);
    });
    if (warnings)
        for (const auto& s : splits) append_unique(*warnings, s.warnings);
    return combine_splits(splits, 0, plan.folds);
}

ReplicationResult run_no_crossfit(const StackedDataset& data, const EstimationOptions& options,
                                  std::vector<std::string>* warnings) {
    check_options(data, options);
    std::vector<Target> targets = analysis_targets(data, options.analysis);
    std::vector<int> rows = analysis_rows(data, options.analysis);
    NuisanceRows nrows{rows, rows, rows, is_external(options.analysis) ? rows : std::vector<int>{}};
    NuisanceFits fits = fit_nuisance(data, nrows, options.nuisance, is_external(options.analysis),
                                     derive_seed(options.seed, 0xC0F, 0, 0));
    if (warnings) append_unique(*warnings, fit_warnings(fits));
    return evaluate_split(data, fits, rows, targets, options.clip_epsilon);
}

AnalysisEstimates estimate(const StackedDataset& data, const EstimationOptions& options) {
    check_options(data, options);
    AnalysisEstimates out;
    out.analysis = options.analysis;
    out.targets = analysis_targets(data, options.analysis);
    out.cross_fitting = options.cross_fitting;

    if (!options.cross_fitting) {
        ReplicationResult r = run_no_crossfit(data, options, &out.warnings);
        out.point = r.point;
        out.variance = r.variance;
        for (std::size_t t = 0; t < 3; ++t) out.correlation[t] = to_correlation(r.covariance[t]);
        out.folds = 0;
        out.replications = 1;
        return out;
    }

    const int folds = default_folds(options.analysis);
    const int reps = options.replications;
    out.folds = folds;
    out.replications = reps;
    std::vector<int> rows = analysis_rows(data, options.analysis);
    std::vector<std::string> strata = stratum_labels(data, rows, options.analysis);
    std::vector<std::vector<int>> assignments(static_cast<std::size_t>(reps));
    for (int l = 0; l < reps; ++l)
        assignments[static_cast<std::size_t>(l)] = stratified_split(strata, folds, options.seed, l);

    SplitContext ctx{data, options, rows, out.targets, folds};
    std::vector<SplitOutput> splits(static_cast<std::size_t>(reps * folds));
    parallel_for(splits.size(), options.workers, [&](std::size_t task) {
        int l = static_cast<int>(task) / folds;
        int k = static_cast<int>(task) % folds + 1;
        splits[task] = run_split(ctx, assignments[static_cast<std::size_t>(l)], l, k);
    });
    for (const auto& s : splits) append_unique(out.warnings, s.warnings);

    std::vector<ReplicationResult> per_rep;
    per_rep.reserve(static_cast<std::size_t>(reps));
    for (int l = 0; l < reps; ++l) per_rep.push_back(combine_splits(splits, static_cast<std::size_t>(l * folds), folds));

    const std::size_t t_count = out.targets.size();
    for (int t = 0; t < 3; ++t) {
        auto tt = static_cast<std::size_t>(t);
        out.point[tt].resize(t_count);
        out.variance[tt].resize(t_count);
        for (std::size_t j = 0; j < t_count; ++j) {
            std::vector<double> p, v;
            for (const auto& r : per_rep) {
                p.push_back(r.point[tt][j]);
                v.push_back(r.variance[tt][j]);
            }
            auto [point, variance] = aggregate_replications(p, v);
            out.point[tt][j] = point;
            out.variance[tt][j] = variance;
        }
    }
    const auto dim = static_cast<Eigen::Index>(t_count);
    for (std::size_t t = 0; t < 3; ++t) {
        std::vector<Eigen::MatrixXd> corr;
        for (const auto& r : per_rep) corr.push_back(to_correlation(r.covariance[t]));
        out.correlation[t].resize(dim, dim);
        for (Eigen::Index i = 0; i < dim; ++i)
            for (Eigen::Index j = 0; j < dim; ++j) {
                std::vector<double> vals;
                for (const auto& c : corr) vals.push_back(c(i, j));
                out.correlation[t](i, j) = median(std::move(vals));
            }
    }
    return out;
}

} // namespace cmr
