#include <doctest.h>

#include "cmr/error.hpp"
#include "cmr/estimators.hpp"
#include "cmr/nuisance.hpp"

#include <cmath>
#include <numeric>

using namespace cmr;

namespace {

std::string num(double v) { return format_double(v); }

// Builds a stacked internal dataset from parallel vectors.
StackedDataset make_data(const std::vector<double>& y, const std::vector<std::string>& s, const std::vector<int>& a,
                         const std::vector<double>& x) {
    RawTable raw;
    raw.header = {"Y", "S", "A", "X"};
    raw.columns.resize(4);
    for (std::size_t i = 0; i < y.size(); ++i) {
        raw.columns[0].push_back(num(y[i]));
        raw.columns[1].push_back(s[i]);
        raw.columns[2].push_back(std::to_string(a[i]));
        raw.columns[3].push_back(num(x[i]));
    }
    return stack_internal(validate_dataset(raw, ColumnRoles{}));
}

std::vector<int> all_rows(std::size_t n) {
    std::vector<int> r(n);
    std::iota(r.begin(), r.end(), 0);
    return r;
}

NuisanceSpec glm_spec() {
    NuisanceSpec spec;
    spec.source_model = SourceModelKind::mn_glm;
    return spec;
}

} // namespace

TEST_CASE("marginal propensity composition") {
    Eigen::MatrixXd e(1, 2), q(1, 2);
    e << 0.2, 0.6;
    q << 0.5, 0.5;
    CHECK(marginal_propensity(e, q, 1)(0) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(marginal_propensity(e, q, 0)(0) == doctest::Approx(0.6).epsilon(1e-15));
    e << 0.8, 0.4;
    q << 0.25, 0.75;
    CHECK(marginal_propensity(e, q, 1)(0) == doctest::Approx(0.5).epsilon(1e-15));

    Eigen::MatrixXd e1(2, 1), q1 = Eigen::MatrixXd::Ones(2, 1);
    e1 << 0.3, 0.9;
    CHECK(marginal_propensity(e1, q1, 1).isApprox(e1.col(0)));
}

TEST_CASE("effect arithmetic and standard error") {
    ArmEstimate a1, a0;
    a1.point = 25.8961;
    a0.point = 19.2657;
    a1.influence = a0.influence = Eigen::VectorXd::Zero(3);
    a1.denom_count = a0.denom_count = 3;
    CHECK(effect_from_arms(a1, a0).point == doctest::Approx(6.6304).epsilon(1e-12));
    CHECK(effect_from_arms(a1, a1).point == 0.0);
    a0.point = -a1.point;
    CHECK(effect_from_arms(a1, a0).point == doctest::Approx(2 * a1.point));

    Eigen::VectorXd d(2);
    d << 1, -1;
    CHECK(standard_error_from_influence(d, 2) == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-15));
    CHECK(standard_error_from_influence(Eigen::VectorXd::Zero(4), 4) == 0.0);
}

TEST_CASE("one-step estimator reductions") {
    EvaluationData rows;
    rows.outcome.resize(6);
    rows.outcome << 1.0, 4.0, 2.0, 7.0, 3.0, 5.0;
    rows.treatment = {0, 1, 0, 1, 1, 0};
    rows.source = {1, 1, 1, 1, 1, 1};
    rows.effect_modifier = {-1, -1, -1, -1, -1, -1};
    NuisancePredictions pred;
    pred.source = Eigen::MatrixXd::Ones(6, 1);
    pred.treatment = Eigen::MatrixXd::Constant(6, 1, 0.5);

    SUBCASE("zero outcome model with known propensity is Horvitz-Thompson") {
        pred.outcome = {Eigen::VectorXd::Zero(6), Eigen::VectorXd::Zero(6)};
        auto est = estimate_arm(rows, pred, Target{1, -1}, 1, 0.01);
        CHECK(est.point == doctest::Approx(2.0 / 6.0 * (4.0 + 7.0 + 3.0)).epsilon(1e-14));
        CHECK(std::abs(est.influence.sum()) < 1e-12);
        CHECK(est.denom_count == 6);
    }
    SUBCASE("perfect outcome model has no augmentation") {
        rows.outcome.setConstant(2.5);
        pred.outcome = {Eigen::VectorXd::Constant(6, 2.5), Eigen::VectorXd::Constant(6, 2.5)};
        for (int a : {0, 1}) {
            auto est = estimate_arm(rows, pred, Target{1, -1}, a, 0.01);
            CHECK(est.point == 2.5);
            CHECK(est.influence.cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("external estimator with exact outcome model") {
    // Internal rows with Y = g(X) exactly and a constant membership model:
    // the augmentation vanishes and the point is the external plug-in mean.
    EvaluationData rows;
    const int n = 8;
    rows.outcome.resize(n);
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g(i) = 1.0 + 0.5 * i;
    rows.outcome = g;
    rows.source = {1, 1, 1, 1, 0, 0, 0, 0};
    rows.treatment = {0, 1, 0, 1, -1, -1, -1, -1};
    rows.effect_modifier = {0, 0, 1, 1, 0, 0, 1, 1};
    for (int i = 4; i < n; ++i) rows.outcome(i) = std::nan("");
    NuisancePredictions pred;
    pred.outcome = {g, g};
    pred.source = Eigen::MatrixXd::Ones(n, 1);
    pred.treatment = Eigen::MatrixXd::Constant(n, 1, 0.5);
    pred.external = Eigen::VectorXd::Constant(n, 0.5);
    auto est = estimate_arm(rows, pred, Target{0, -1}, 1, 0.01);
    CHECK(est.point == doctest::Approx(g.tail(4).mean()).epsilon(1e-14));
    CHECK(est.denom_count == 4);

    auto sub = estimate_arm(rows, pred, Target{0, 1}, 0, 0.01);
    CHECK(sub.point == doctest::Approx((g(6) + g(7)) / 2).epsilon(1e-14));

    rows.effect_modifier = {0, 0, 1, 1, 0, 0, 0, 0};
    CHECK_THROWS_WITH_AS(estimate_arm(rows, pred, Target{0, 1}, 0, 0.01), doctest::Contains("empty target cell"),
                         ValidationError);
}

TEST_CASE("outcome model recovers exact linear structure") {
    std::vector<double> y, x;
    std::vector<std::string> s;
    std::vector<int> a;
    for (int i = 0; i < 20; ++i) {
        x.push_back(0.25 * i - 2.0);
        a.push_back(i % 2);
        s.push_back(i % 3 == 0 ? "B" : "A");
        y.push_back(2.0 + 3.0 * x.back() + a.back());
    }
    auto data = make_data(y, s, a, x);
    auto fits = fit_outcome_model(data, all_rows(data.size()), glm_spec(), 1);
    Eigen::VectorXd diff = fits[1]->predict(data.design.values) - fits[0]->predict(data.design.values);
    CHECK((diff.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("saturated nuisance fits equal cell proportions") {
    // Two sources, binary X; treatment probabilities differ by source.
    std::vector<double> y, x;
    std::vector<std::string> s;
    std::vector<int> a;
    auto add = [&](const char* src, int xv, int av, int count, double base) {
        for (int i = 0; i < count; ++i) {
            s.push_back(src);
            x.push_back(xv);
            a.push_back(av);
            y.push_back(base + i);
        }
    };
    add("A", 0, 0, 3, 0.0);
    add("A", 0, 1, 7, 1.0);
    add("A", 1, 0, 4, 2.0);
    add("A", 1, 1, 2, 3.0);
    add("B", 0, 0, 5, 4.0);
    add("B", 0, 1, 5, 5.0);
    add("B", 1, 0, 6, 6.0);
    add("B", 1, 1, 2, 7.0);
    auto data = make_data(y, s, a, x);
    auto rows = all_rows(data.size());
    NuisanceSpec spec = glm_spec();
    NuisanceFits fits = fit_nuisance(data, NuisanceRows{rows, rows, rows, {}}, spec, false, 1);
    auto pred = predict_nuisance(fits, data, rows);
    // row 0: source A, X = 0 -> P(A = 1) = 7/10, P(S = A | X = 0) = 10/20
    CHECK(pred.treatment(0, 0) == doctest::Approx(0.7).epsilon(1e-10));
    CHECK(pred.treatment(0, 1) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(pred.source(0, 0) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK((pred.source.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    // cell mean of Y among A = 1, X = 0: rows with base 1 (7 rows) and base 5 (5 rows)
    double mean = ((7 * 1.0 + 21.0) + (5 * 5.0 + 10.0)) / 12.0;
    CHECK(pred.outcome[1](0) == doctest::Approx(mean).epsilon(1e-10));

    spec.treatment_type = TreatmentModelType::joint;
    auto joint = fit_treatment_model(data, rows, spec, 1);
    REQUIRE(joint.joint);
    CHECK(joint.per_source.empty());
}

TEST_CASE("nuisance preconditions") {
    std::vector<double> y{1, 2, 3, 4, 5, 6};
    std::vector<std::string> s{"A", "A", "A", "B", "B", "B"};
    std::vector<double> x{0, 1, 2, 0, 1, 2};
    SUBCASE("empty arm") {
        auto data = make_data(y, s, {1, 1, 1, 1, 1, 1}, x);
        CHECK_THROWS_WITH_AS(fit_outcome_model(data, all_rows(6), glm_spec(), 1), doctest::Contains("empty arm"),
                             ValidationError);
    }
    SUBCASE("single-arm source in separate mode") {
        auto data = make_data(y, s, {0, 0, 0, 0, 1, 1}, x);
        CHECK_THROWS_WITH_AS(fit_treatment_model(data, all_rows(6), glm_spec(), 1),
                             doctest::Contains("single-arm"), ValidationError);
    }
}

TEST_CASE("joint and separate treatment models agree with one source") {
    std::vector<double> y, x;
    std::vector<std::string> s;
    std::vector<int> a;
    for (int i = 0; i < 40; ++i) {
        x.push_back(std::sin(i));
        a.push_back((i * 7) % 5 < 2 ? 1 : 0);
        s.push_back("A");
        y.push_back(i);
    }
    auto data = make_data(y, s, a, x);
    auto rows = all_rows(data.size());
    NuisanceSpec spec = glm_spec();
    NuisanceFits sep = fit_nuisance(data, NuisanceRows{rows, rows, rows, {}}, spec, false, 1);
    spec.treatment_type = TreatmentModelType::joint;
    NuisanceFits joint = fit_nuisance(data, NuisanceRows{rows, rows, rows, {}}, spec, false, 1);
    auto p1 = predict_nuisance(sep, data, rows), p2 = predict_nuisance(joint, data, rows);
    CHECK((p1.treatment - p2.treatment).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((p1.source.array() == 1.0).all());
}
