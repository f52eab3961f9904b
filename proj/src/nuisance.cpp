#include "cmr/nuisance.hpp"

#include "cmr/error.hpp"
#include "cmr/rng.hpp"

namespace cmr {

const char* to_string(TreatmentModelType type) {
    return type == TreatmentModelType::joint ? "joint" : "separate";
}

const char* to_string(SourceModelKind kind) {
    switch (kind) {
    case SourceModelKind::mn_glmnet: return "mn_glmnet";
    case SourceModelKind::mn_glm: return "mn_glm";
    case SourceModelKind::mn_nnet: return "mn_nnet";
    }
    return "?";
}

namespace {

enum Role : std::uint64_t { kOutcome = 11, kTreatment = 12, kSource = 13, kExternal = 14 };

std::vector<int> internal_rows(const StackedDataset& data, const std::vector<int>& rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (int r : rows)
        if (data.source[static_cast<std::size_t>(r)] > 0) out.push_back(r);
    return out;
}

Eigen::MatrixXd design_rows(const StackedDataset& data, const std::vector<int>& rows) {
    return data.design.values(rows, Eigen::all);
}

// A constant-probability model used when there is a single internal source.
class SingleSourceModel final : public FittedModel {
public:
    SingleSourceModel() {
        info_.learner_id = "single_source";
        info_.family = Family::multinomial;
    }
    Eigen::VectorXd predict(const Eigen::MatrixXd& design) const override {
        return Eigen::VectorXd::Ones(design.rows());
    }
    Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& design) const override {
        return Eigen::MatrixXd::Ones(design.rows(), 1);
    }
    int classes() const override { return 1; }
};

} // namespace

std::array<ModelPtr, 2> fit_outcome_model(const StackedDataset& data, const std::vector<int>& rows,
                                          const NuisanceSpec& spec, std::uint64_t seed,
                                          std::array<std::size_t, 2>* rows_used) {
    std::array<ModelPtr, 2> out;
    for (int a = 0; a < 2; ++a) {
        std::vector<int> arm;
        for (int r : rows) {
            auto i = static_cast<std::size_t>(r);
            if (data.source[i] > 0 && data.treatment[i] == a) arm.push_back(r);
        }
        if (arm.size() < 2)
            throw ValidationError("empty arm: outcome model for A=" + std::to_string(a) + " has " +
                                  std::to_string(arm.size()) + " training rows");
        Eigen::VectorXd y(static_cast<Eigen::Index>(arm.size()));
        for (std::size_t k = 0; k < arm.size(); ++k) y(static_cast<Eigen::Index>(k)) = data.outcome[static_cast<std::size_t>(arm[k])];
        out[static_cast<std::size_t>(a)] =
            fit_super_learner(spec.outcome, design_rows(data, arm), y, spec.outcome_family, derive_seed(seed, kOutcome, a));
        if (rows_used) (*rows_used)[static_cast<std::size_t>(a)] = arm.size();
    }
    return out;
}

ModelPtr fit_source_model(const StackedDataset& data, const std::vector<int>& rows, const NuisanceSpec& spec,
                          std::uint64_t seed) {
    const int m = static_cast<int>(data.m());
    if (m == 1) return std::make_shared<SingleSourceModel>();
    std::vector<int> train = internal_rows(data, rows);
    std::vector<int> labels(train.size());
    std::vector<std::size_t> counts(static_cast<std::size_t>(m), 0);
    for (std::size_t k = 0; k < train.size(); ++k) {
        labels[k] = data.source[static_cast<std::size_t>(train[k])] - 1;
        ++counts[static_cast<std::size_t>(labels[k])];
    }
    for (int s = 0; s < m; ++s)
        if (counts[static_cast<std::size_t>(s)] == 0)
            throw ValidationError("source '" + data.source_labels[static_cast<std::size_t>(s)] +
                                  "' missing from source-model training rows");
    Eigen::MatrixXd x = design_rows(data, train);
    std::uint64_t s = derive_seed(seed, kSource);
    switch (spec.source_model) {
    case SourceModelKind::mn_glm:
        return fit_multinomial(x, labels, m, MultinomialOptions{});
    case SourceModelKind::mn_glmnet: {
        MultinomialOptions opt;
        opt.penalized = true;
        opt.cv_folds = std::min<int>(spec.source_cv_folds, static_cast<int>(train.size()));
        opt.seed = s;
        return fit_multinomial(x, labels, m, opt);
    }
    case SourceModelKind::mn_nnet: {
        NnetOptions opt;
        opt.hidden_units = spec.source_hidden_units;
        opt.seed = s;
        return fit_nnet_multiclass(x, labels, m, opt);
    }
    }
    throw ValidationError("unknown source model");
}

Eigen::MatrixXd treatment_design(const StackedDataset& data, const std::vector<int>& rows, int source) {
    const Eigen::Index base = data.design.cols();
    const Eigen::Index m = static_cast<Eigen::Index>(data.m());
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), base + m - 1);
    x.leftCols(base) = design_rows(data, rows);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        int s = source > 0 ? source : data.source[static_cast<std::size_t>(rows[k])];
        if (s >= 2) x(static_cast<Eigen::Index>(k), base + s - 2) = 1.0;
    }
    return x;
}

TreatmentFit fit_treatment_model(const StackedDataset& data, const std::vector<int>& rows, const NuisanceSpec& spec,
                                 std::uint64_t seed) {
    TreatmentFit fit;
    fit.type = spec.treatment_type;
    std::vector<int> train = internal_rows(data, rows);
    const int m = static_cast<int>(data.m());
    if (spec.treatment_type == TreatmentModelType::joint) {
        for (int s = 1; s <= m; ++s) {
            bool present = false;
            for (int r : train) present = present || data.source[static_cast<std::size_t>(r)] == s;
            if (!present)
                throw ValidationError("source '" + data.source_labels[static_cast<std::size_t>(s - 1)] +
                                      "' missing from treatment-model training rows");
        }
        Eigen::VectorXd a(static_cast<Eigen::Index>(train.size()));
        for (std::size_t k = 0; k < train.size(); ++k) a(static_cast<Eigen::Index>(k)) = data.treatment[static_cast<std::size_t>(train[k])];
        fit.joint = fit_super_learner(spec.treatment, treatment_design(data, train, 0), a, Family::binomial,
                                      derive_seed(seed, kTreatment, 1));
        return fit;
    }
    for (int s = 1; s <= m; ++s) {
        std::vector<int> rs;
        for (int r : train)
            if (data.source[static_cast<std::size_t>(r)] == s) rs.push_back(r);
        Eigen::VectorXd a(static_cast<Eigen::Index>(rs.size()));
        int treated = 0;
        for (std::size_t k = 0; k < rs.size(); ++k) {
            a(static_cast<Eigen::Index>(k)) = data.treatment[static_cast<std::size_t>(rs[k])];
            treated += data.treatment[static_cast<std::size_t>(rs[k])];
        }
        if (treated == 0 || treated == static_cast<int>(rs.size()))
            throw ValidationError("single-arm source stratum: source '" +
                                  data.source_labels[static_cast<std::size_t>(s - 1)] +
                                  "' has only one treatment arm in the treatment-model training rows");
        fit.per_source.push_back(
            fit_super_learner(spec.treatment, design_rows(data, rs), a, Family::binomial, derive_seed(seed, kTreatment, s)));
    }
    return fit;
}

ModelPtr fit_external_model(const StackedDataset& data, const std::vector<int>& rows, const NuisanceSpec& spec,
                            std::uint64_t seed) {
    Eigen::VectorXd ext(static_cast<Eigen::Index>(rows.size()));
    std::size_t n_ext = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        bool is_ext = data.source[static_cast<std::size_t>(rows[k])] == 0;
        ext(static_cast<Eigen::Index>(k)) = is_ext ? 1.0 : 0.0;
        n_ext += is_ext ? 1 : 0;
    }
    if (n_ext == 0 || n_ext == rows.size())
        throw ValidationError("external-model training rows must contain both internal and external rows");
    return fit_super_learner(spec.external, design_rows(data, rows), ext, Family::binomial,
                             derive_seed(seed, kExternal));
}

NuisanceFits fit_nuisance(const StackedDataset& data, const NuisanceRows& rows, const NuisanceSpec& spec,
                          bool need_external, std::uint64_t seed) {
    NuisanceFits fits;
    fits.m = data.m();
    fits.outcome = fit_outcome_model(data, rows.outcome, spec, seed, &fits.outcome_rows);
    fits.source = fit_source_model(data, rows.source, spec, seed);
    fits.treatment = fit_treatment_model(data, rows.treatment, spec, seed);
    if (need_external) fits.external = fit_external_model(data, rows.external, spec, seed);
    return fits;
}

NuisancePredictions predict_nuisance(const NuisanceFits& fits, const StackedDataset& data, const std::vector<int>& rows) {
    NuisancePredictions p;
    Eigen::MatrixXd x = design_rows(data, rows);
    const Eigen::Index n = x.rows(), m = static_cast<Eigen::Index>(fits.m);
    p.outcome[0] = fits.outcome[0]->predict(x);
    p.outcome[1] = fits.outcome[1]->predict(x);
    p.source = fits.source->predict_proba(x);
    if (p.source.cols() != m) throw NumericalError("source model returned the wrong number of classes");
    p.treatment.resize(n, m);
    for (Eigen::Index s = 1; s <= m; ++s) {
        if (fits.treatment.type == TreatmentModelType::joint)
            p.treatment.col(s - 1) = fits.treatment.joint->predict(treatment_design(data, rows, static_cast<int>(s)));
        else
            p.treatment.col(s - 1) = fits.treatment.per_source[static_cast<std::size_t>(s - 1)]->predict(x);
    }
    if (fits.external) p.external = fits.external->predict(x);
    return p;
}

Eigen::VectorXd marginal_propensity(const Eigen::MatrixXd& treatment, const Eigen::MatrixXd& source, int arm) {
    Eigen::VectorXd out(treatment.rows());
    for (Eigen::Index i = 0; i < treatment.rows(); ++i) {
        double num = 0.0, den = 0.0;
        for (Eigen::Index s = 0; s < treatment.cols(); ++s) {
            double e = arm == 1 ? treatment(i, s) : 1.0 - treatment(i, s);
            num += e * source(i, s);
            den += source(i, s);
        }
        out(i) = num / den;
    }
    return out;
}

} // namespace cmr
