#include "cmr/learners.hpp"

#include "cmr/error.hpp"
#include "cmr/rng.hpp"
#include "detail.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

namespace cmr {

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, LearnerFactory>& registry() {
    static std::map<std::string, LearnerFactory> r;
    return r;
}

LearnerFactory find_factory(const std::string& name) {
    std::lock_guard<std::mutex> lock(registry_mutex());
    auto it = registry().find(name);
    return it == registry().end() ? LearnerFactory{} : it->second;
}

bool is_builtin(const std::string& kind) {
    return kind == "mean" || kind == "glm" || kind == "lasso" || kind == "nnet";
}

double clamp_prob(double p) { return std::min(std::max(p, 1e-15), 1.0 - 1e-15); }

Eigen::VectorXd risk_gradient(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                              Family family) {
    const double n = static_cast<double>(y.size());
    Eigen::VectorXd pred = z * w;
    if (family == Family::gaussian) return 2.0 * z.transpose() * (pred - y) / n;
    Eigen::VectorXd d(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        double p = clamp_prob(pred(i));
        d(i) = -(y(i) / p - (1 - y(i)) / (1 - p));
    }
    return z.transpose() * d / n;
}

} // namespace

std::string CandidateSpec::id() const {
    return kind == "nnet" && hidden_units != 3 ? "nnet:" + std::to_string(hidden_units) : kind;
}

CandidateSpec CandidateSpec::parse(const std::string& text) {
    CandidateSpec c;
    std::string t = text;
    if (t.rfind("SL.", 0) == 0) t = t.substr(3);
    if (t == "glmnet") t = "lasso";
    auto colon = t.find(':');
    std::string base = t.substr(0, colon);
    if (base == "nnet" && colon != std::string::npos) {
        try {
            c.hidden_units = std::stoi(t.substr(colon + 1));
        } catch (const std::exception&) {
            throw ValidationError("invalid hidden unit count in learner '" + text + "'");
        }
        if (c.hidden_units < 1) throw ValidationError("hidden_units must be >= 1 in learner '" + text + "'");
    } else if (colon != std::string::npos) {
        throw ValidationError("unknown learner '" + text + "'");
    }
    if (!is_builtin(base) && !is_registered_learner(base)) throw ValidationError("unknown learner '" + text + "'");
    c.kind = base;
    return c;
}

void LearnerSpec::validate() const {
    if (candidates.empty()) throw ValidationError("learner spec has no candidates");
    if (cv_folds < 2) throw ValidationError("learner spec cv_folds must be >= 2");
    for (const auto& c : candidates)
        if (!is_builtin(c.kind) && !is_registered_learner(c.kind))
            throw ValidationError("unknown learner '" + c.kind + "'");
}

std::string LearnerSpec::describe() const {
    std::string s;
    for (std::size_t i = 0; i < candidates.size(); ++i) s += (i ? ", " : "") + candidates[i].id();
    return s;
}

void register_learner(const std::string& name, LearnerFactory factory) {
    if (is_builtin(name)) throw ValidationError("cannot replace built-in learner '" + name + "'");
    std::lock_guard<std::mutex> lock(registry_mutex());
    registry()[name] = std::move(factory);
}

bool is_registered_learner(const std::string& name) { return static_cast<bool>(find_factory(name)); }

ModelPtr fit_candidate(const CandidateSpec& candidate, const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                       Family family, std::uint64_t seed) {
    if (candidate.kind == "glm") return fit_glm(design, response, family);
    if (candidate.kind == "mean") {
        Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(design.rows(), 1);
        auto fit = fit_glm(ones, response, family);
        Eigen::VectorXd coef = Eigen::VectorXd::Zero(design.cols());
        coef(0) = fit->coefficients()(0);
        FitInfo info = fit->info();
        info.learner_id = "mean";
        return std::make_shared<LinearModel>(std::move(coef), std::move(info));
    }
    if (candidate.kind == "lasso") {
        LassoOptions opt;
        opt.cv_folds = candidate.lasso_cv_folds;
        opt.seed = seed;
        if (design.rows() < opt.cv_folds) opt.cv_folds = std::max(2, static_cast<int>(design.rows()));
        return fit_lasso(design, response, family, opt);
    }
    if (candidate.kind == "nnet") {
        NnetOptions opt;
        opt.hidden_units = candidate.hidden_units;
        opt.seed = seed;
        return fit_nnet(design, response, family, opt);
    }
    LearnerFactory factory = find_factory(candidate.kind);
    if (!factory) throw ValidationError("unknown learner '" + candidate.kind + "'");
    ModelPtr model = factory(design, response, family, seed);
    if (!model) throw NumericalError("custom learner '" + candidate.kind + "' returned no model");
    return model;
}

std::vector<int> cv_fold_ids(const Eigen::VectorXd& response, int folds, std::uint64_t seed, bool stratify) {
    const std::size_t n = static_cast<std::size_t>(response.size());
    std::map<double, std::vector<int>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[stratify ? response(static_cast<Eigen::Index>(i)) : 0.0].push_back(static_cast<int>(i));
    std::vector<int> ids(n, 0);
    Rng rng(derive_seed(seed, 0xCF));
    int offset = 0;
    for (auto& [key, rows] : groups) {
        std::shuffle(rows.begin(), rows.end(), rng);
        for (std::size_t r = 0; r < rows.size(); ++r)
            ids[static_cast<std::size_t>(rows[r])] = static_cast<int>((r + static_cast<std::size_t>(offset)) % static_cast<std::size_t>(folds));
        offset = static_cast<int>((static_cast<std::size_t>(offset) + rows.size()) % static_cast<std::size_t>(folds));
    }
    return ids;
}

double stacking_risk(const Eigen::VectorXd& prediction, const Eigen::VectorXd& response, Family family) {
    const double n = static_cast<double>(response.size());
    if (family == Family::gaussian) return (prediction - response).squaredNorm() / n;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < response.size(); ++i) {
        double p = clamp_prob(prediction(i));
        nll -= response(i) * std::log(p) + (1 - response(i)) * std::log(1 - p);
    }
    return nll / n;
}

std::vector<double> simplex_weights(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, Family family,
                                    double tolerance, int max_iterations) {
    const Eigen::Index k = z.cols();
    if (k == 0) throw NumericalError("simplex_weights: no candidates");
    Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
    if (k > 1) {
        double risk = stacking_risk(z * w, y, family);
        double eta = 1.0;
        for (int it = 0; it < max_iterations; ++it) {
            Eigen::VectorXd g = risk_gradient(z, y, w, family);
            g.array() -= g.minCoeff();
            bool accepted = false;
            Eigen::VectorXd next;
            double next_risk = risk;
            while (eta > 1e-30) {
                next = (w.array() * (-eta * g.array()).exp()).matrix();
                next /= next.sum();
                next_risk = stacking_risk(z * next, y, family);
                if (next_risk <= risk) {
                    accepted = true;
                    break;
                }
                eta *= 0.5;
            }
            if (!accepted) break;
            double change = (next - w).cwiseAbs().maxCoeff();
            w = next;
            risk = next_risk;
            eta = std::min(eta * 2.0, 1e12);
            if (change < tolerance) break;
        }
        // Exponentiated gradient only approaches a vertex asymptotically.
        Eigen::Index best_vertex = 0;
        double best_vertex_risk = stacking_risk(z.col(0), y, family);
        for (Eigen::Index j = 1; j < k; ++j) {
            double r = stacking_risk(z.col(j), y, family);
            if (r < best_vertex_risk) {
                best_vertex_risk = r;
                best_vertex = j;
            }
        }
        if (best_vertex_risk <= risk) {
            w.setZero();
            w(best_vertex) = 1.0;
        }
    }
    w = w.cwiseMax(0.0);
    w /= w.sum();
    return std::vector<double>(w.data(), w.data() + w.size());
}

ModelPtr fit_super_learner(const LearnerSpec& spec, const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                           Family family, std::uint64_t seed) {
    spec.validate();
    if (family == Family::multinomial) throw ValidationError("super learner supports gaussian and binomial families");
    const Eigen::Index n = design.rows();
    if (response.size() != n) throw ValidationError("super learner: response length does not match design");
    check_response(response, family);

    FitInfo info;
    info.learner_id = "super_learner";
    info.family = family;
    info.n_train = static_cast<std::size_t>(n);

    const std::size_t k = spec.candidates.size();
    if (k == 1) {
        ModelPtr model = fit_candidate(spec.candidates[0], design, response, family, derive_seed(seed, 0));
        info.members = {spec.candidates[0].id()};
        info.weights = {1.0};
        info.warnings = model->info().warnings;
        return std::make_shared<StackedModel>(std::vector<ModelPtr>{model}, std::vector<double>{1.0}, std::move(info));
    }
    if (n < spec.cv_folds) throw ValidationError("super learner: need n >= cv_folds");

    auto folds = cv_fold_ids(response, spec.cv_folds, derive_seed(seed, 0x51), family == Family::binomial);
    std::vector<std::vector<int>> train(static_cast<std::size_t>(spec.cv_folds)), test(train.size());
    for (Eigen::Index i = 0; i < n; ++i)
        for (int v = 0; v < spec.cv_folds; ++v)
            (folds[static_cast<std::size_t>(i)] == v ? test : train)[static_cast<std::size_t>(v)].push_back(static_cast<int>(i));

    Eigen::MatrixXd heldout(n, static_cast<Eigen::Index>(k));
    std::vector<char> ok(k, 1);
    for (std::size_t c = 0; c < k; ++c) {
        try {
            for (int v = 0; v < spec.cv_folds; ++v) {
                const auto& tr = train[static_cast<std::size_t>(v)];
                const auto& te = test[static_cast<std::size_t>(v)];
                ModelPtr m = fit_candidate(spec.candidates[c], detail::take_rows(design, tr),
                                           detail::take_rows(response, tr), family, derive_seed(seed, v + 1, c));
                Eigen::VectorXd pred = m->predict(detail::take_rows(design, te));
                if (!pred.allFinite()) throw NumericalError("non-finite held-out predictions");
                for (std::size_t r = 0; r < te.size(); ++r) heldout(te[r], static_cast<Eigen::Index>(c)) = pred(static_cast<Eigen::Index>(r));
            }
        } catch (const std::exception& e) {
            ok[c] = 0;
            info.warnings.push_back("candidate '" + spec.candidates[c].id() + "' dropped: " + e.what());
        }
    }
    std::vector<std::size_t> alive;
    for (std::size_t c = 0; c < k; ++c)
        if (ok[c]) alive.push_back(c);
    if (alive.empty()) throw NumericalError("super learner: all candidate learners failed");

    Eigen::MatrixXd z(n, static_cast<Eigen::Index>(alive.size()));
    for (std::size_t j = 0; j < alive.size(); ++j) z.col(static_cast<Eigen::Index>(j)) = heldout.col(static_cast<Eigen::Index>(alive[j]));
    std::vector<double> risks(alive.size());
    for (std::size_t j = 0; j < alive.size(); ++j) risks[j] = stacking_risk(z.col(static_cast<Eigen::Index>(j)), response, family);

    std::vector<double> weights;
    if (spec.policy == StackPolicy::discrete_select) {
        weights.assign(alive.size(), 0.0);
        weights[static_cast<std::size_t>(std::min_element(risks.begin(), risks.end()) - risks.begin())] = 1.0;
    } else {
        weights = simplex_weights(z, response, family);
    }
    Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
    info.cv_risk = stacking_risk(z * wv, response, family);

    std::vector<ModelPtr> members;
    std::vector<double> member_weights;
    for (std::size_t j = 0; j < alive.size(); ++j) {
        std::size_t c = alive[j];
        info.members.push_back(spec.candidates[c].id());
        info.member_risks.push_back(risks[j]);
        info.weights.push_back(weights[j]);
        if (weights[j] == 0.0) {
            members.push_back(nullptr);
        } else {
            members.push_back(fit_candidate(spec.candidates[c], design, response, family, derive_seed(seed, 0, c)));
            for (const auto& w : members.back()->info().warnings)
                info.warnings.push_back(spec.candidates[c].id() + ": " + w);
        }
        member_weights.push_back(weights[j]);
    }
    return std::make_shared<StackedModel>(std::move(members), std::move(member_weights), std::move(info));
}

} // namespace cmr
