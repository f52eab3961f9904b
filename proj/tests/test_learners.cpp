#include <doctest.h>

#include "cmr/error.hpp"
#include "cmr/learners.hpp"
#include "cmr/rng.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace cmr;

namespace {

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd d(x.rows(), x.cols() + 1);
    d.col(0).setOnes();
    d.rightCols(x.cols()) = x;
    return d;
}

// Plain two-parameter Newton iterations for logistic regression, written
// out scalar by scalar.
std::pair<double, double> hand_logistic(const std::vector<double>& x, const std::vector<double>& y) {
    double b0 = 0.0, b1 = 0.0;
    for (int it = 0; it < 50; ++it) {
        double g0 = 0, g1 = 0, h00 = 0, h01 = 0, h11 = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x[i])));
            double w = p * (1 - p);
            g0 += y[i] - p;
            g1 += (y[i] - p) * x[i];
            h00 += w;
            h01 += w * x[i];
            h11 += w * x[i] * x[i];
        }
        double det = h00 * h11 - h01 * h01;
        b0 += (h11 * g0 - h01 * g1) / det;
        b1 += (-h01 * g0 + h00 * g1) / det;
    }
    return {b0, b1};
}

double soft(double z, double l) { return z > l ? z - l : (z < -l ? z + l : 0.0); }

} // namespace

TEST_CASE("glm: closed-form cases") {
    SUBCASE("intercept-only binomial with half ones") {
        Eigen::MatrixXd x = Eigen::MatrixXd::Ones(10, 1);
        Eigen::VectorXd y(10);
        y << 1, 0, 1, 0, 1, 0, 1, 0, 1, 0;
        auto m = fit_glm(x, y, Family::binomial);
        CHECK(std::abs(m->coefficients()(0)) < 1e-12);
    }
    SUBCASE("exact linear gaussian data") {
        Eigen::VectorXd xv(5);
        xv << -1, 0, 0.5, 2, 3;
        Eigen::VectorXd y = (2.0 + 3.0 * xv.array()).matrix();
        auto m = fit_glm(with_intercept(xv), y, Family::gaussian);
        CHECK(m->coefficients()(0) == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(m->coefficients()(1) == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("gaussian equals least squares") {
        Rng rng(5);
        std::normal_distribution<double> z;
        Eigen::MatrixXd x(40, 3);
        Eigen::VectorXd y(40);
        for (int i = 0; i < 40; ++i) {
            for (int j = 0; j < 3; ++j) x(i, j) = z(rng);
            y(i) = z(rng);
        }
        Eigen::MatrixXd d = with_intercept(x);
        Eigen::VectorXd ls = d.colPivHouseholderQr().solve(y);
        auto m = fit_glm(d, y, Family::gaussian);
        CHECK((m->coefficients() - ls).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("glm: binomial matches a hand-run Newton iteration") {
    std::vector<double> xs{0, 1, 2, 3, 4, 5}, ys{0, 0, 1, 0, 1, 1};
    auto [b0, b1] = hand_logistic(xs, ys);
    Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(xs.data(), 6);
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), 6);
    auto m = fit_glm(with_intercept(x), y, Family::binomial);
    CHECK(m->coefficients()(0) == doctest::Approx(b0).epsilon(1e-6));
    CHECK(m->coefficients()(1) == doctest::Approx(b1).epsilon(1e-6));
    REQUIRE(m->info().max_gradient.has_value());
    CHECK(*m->info().max_gradient < 1e-8);
}

TEST_CASE("glm: separation is reported") {
    Eigen::VectorXd x(6), y(6);
    x << 0, 1, 2, 3, 4, 5;
    y << 0, 0, 0, 1, 1, 1;
    CHECK_THROWS_WITH_AS(fit_glm(with_intercept(x), y, Family::binomial), doctest::Contains("separation"),
                         NumericalError);
}

TEST_CASE("lasso: orthonormal design matches soft-thresholding") {
    // Columns of an 8 x 8 Hadamard matrix: (1/n) x'x = I and every slope
    // column is centered.
    Eigen::MatrixXd h(8, 4);
    h << 1, 1, 1, 1,
         1, -1, 1, -1,
         1, 1, -1, -1,
         1, -1, -1, 1,
         1, 1, 1, 1,
         1, -1, 1, -1,
         1, 1, -1, -1,
         1, -1, -1, 1;
    h.block(4, 1, 4, 3) *= -1.0;
    Eigen::VectorXd y(8);
    y << 3.0, -1.0, 2.5, 0.2, -0.7, 1.9, 4.0, -2.2;
    for (double lambda : {0.05, 0.3, 0.8}) {
        LassoOptions opt;
        opt.lambda_grid = {lambda};
        opt.standardize = false;
        auto m = fit_lasso(h, y, Family::gaussian, opt);
        CHECK(m->coefficients()(0) == doctest::Approx(y.mean()).epsilon(1e-9));
        for (int j = 1; j < 4; ++j) {
            double ls = h.col(j).dot(y) / 8.0;
            CHECK(std::abs(m->coefficients()(j) - soft(ls, lambda)) < 1e-6);
        }
    }
}

TEST_CASE("lasso: limits of the penalty") {
    Rng rng(11);
    std::normal_distribution<double> z;
    Eigen::MatrixXd x(60, 3);
    Eigen::VectorXd y(60);
    for (int i = 0; i < 60; ++i) {
        for (int j = 0; j < 3; ++j) x(i, j) = z(rng);
        y(i) = 1.0 + x(i, 0) - 0.5 * x(i, 2) + z(rng);
    }
    Eigen::MatrixXd d = with_intercept(x);
    LassoOptions opt;
    opt.lambda_grid = {lasso_lambda_max(d, y, true) * 1.0001};
    auto top = fit_lasso(d, y, Family::gaussian, opt);
    CHECK(top->coefficients().tail(3).cwiseAbs().maxCoeff() == 0.0);

    opt.lambda_grid = {0.0};
    auto zero = fit_lasso(d, y, Family::gaussian, opt);
    auto glm = fit_glm(d, y, Family::gaussian);
    CHECK((zero->coefficients() - glm->coefficients()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("multinomial: two classes reduce to logistic regression") {
    Rng rng(3);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u;
    const int n = 300;
    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd y(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = z(rng);
        x(i, 1) = z(rng);
        double p = 1.0 / (1.0 + std::exp(-(0.3 + x(i, 0) - 0.5 * x(i, 1))));
        labels[i] = u(rng) < p ? 1 : 0;
        y(i) = labels[i];
    }
    Eigen::MatrixXd d = with_intercept(x);
    auto mn = fit_multinomial(d, labels, 2);
    auto bin = fit_glm(d, y, Family::binomial);
    CHECK((mn->predict(d) - bin->predict(d)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("multinomial: rows sum to one and classes permute") {
    Rng rng(9);
    std::normal_distribution<double> z;
    std::uniform_int_distribution<int> cls(0, 2);
    const int n = 240;
    Eigen::MatrixXd x(n, 2);
    std::vector<int> labels(n), permuted(n);
    const int perm[3] = {2, 0, 1};
    for (int i = 0; i < n; ++i) {
        labels[i] = cls(rng);
        x(i, 0) = z(rng) + 0.5 * labels[i];
        x(i, 1) = z(rng);
        permuted[i] = perm[labels[i]];
    }
    Eigen::MatrixXd d = with_intercept(x);
    for (bool penalized : {false, true}) {
        MultinomialOptions opt;
        opt.penalized = penalized;
        auto m = fit_multinomial(d, labels, 3, opt);
        Eigen::MatrixXd p = m->predict_proba(d);
        CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
        if (!penalized) {
            Eigen::MatrixXd q = fit_multinomial(d, permuted, 3, opt)->predict_proba(d);
            for (int c = 0; c < 3; ++c) CHECK((p.col(c) - q.col(perm[c])).cwiseAbs().maxCoeff() < 1e-8);
        }
    }
    std::vector<int> missing(n, 0);
    missing[0] = 2;
    CHECK_THROWS_WITH_AS(fit_multinomial(d, missing, 3), doctest::Contains("absent"), ValidationError);
}

TEST_CASE("nnet: one hidden unit tracks the linear fit") {
    Rng rng(21);
    std::normal_distribution<double> z;
    const int n = 2000;
    Eigen::MatrixXd x(n, 1);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = z(rng);
        y(i) = 1.0 + 0.8 * x(i, 0) + 0.5 * z(rng);
    }
    Eigen::MatrixXd d = with_intercept(x);
    NnetOptions opt;
    opt.hidden_units = 1;
    opt.seed = 4;
    auto net = fit_nnet(d, y, Family::gaussian, opt);
    auto glm = fit_glm(d, y, Family::gaussian);
    double mse_net = (net->predict(d) - y).squaredNorm() / n;
    double mse_glm = (glm->predict(d) - y).squaredNorm() / n;
    CHECK(mse_net <= 1.10 * mse_glm);

    auto again = fit_nnet(d, y, Family::gaussian, opt);
    CHECK(again->weights().hidden == net->weights().hidden);
    CHECK(again->weights().output == net->weights().output);
}

TEST_CASE("stacking: simplex weights") {
    Rng rng(8);
    std::normal_distribution<double> z;
    const int n = 5000;
    Eigen::MatrixXd preds(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        double truth = 2.0 * z(rng);
        preds(i, 0) = truth;
        preds(i, 1) = z(rng);
        y(i) = truth + z(rng);
    }
    auto w = simplex_weights(preds, y, Family::gaussian);
    REQUIRE(w.size() == 2);
    CHECK(w[0] >= 0.9);
    CHECK(std::abs(w[0] + w[1] - 1.0) < 1e-10);
    CHECK(w[1] >= 0.0);
    double stacked = stacking_risk(preds * Eigen::Map<Eigen::VectorXd>(w.data(), 2), y, Family::gaussian);
    CHECK(stacked <= stacking_risk(preds.col(0), y, Family::gaussian) + 1e-10);
    CHECK(stacked <= stacking_risk(preds.col(1), y, Family::gaussian) + 1e-10);
}

TEST_CASE("super learner") {
    Rng rng(13);
    std::normal_distribution<double> z;
    const int n = 400;
    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = z(rng);
        x(i, 1) = z(rng);
        y(i) = 0.5 + x(i, 0) + 0.3 * z(rng);
    }
    Eigen::MatrixXd d = with_intercept(x);

    SUBCASE("a single candidate gets weight one") {
        LearnerSpec spec;
        auto m = fit_super_learner(spec, d, y, Family::gaussian, 1);
        REQUIRE(m->info().weights.size() == 1);
        CHECK(m->info().weights[0] == 1.0);
    }
    SUBCASE("convex stack is no worse than any candidate in cross-validation") {
        LearnerSpec spec;
        spec.candidates = {CandidateSpec::parse("mean"), CandidateSpec::parse("glm"), CandidateSpec::parse("lasso")};
        spec.cv_folds = 5;
        auto m = fit_super_learner(spec, d, y, Family::gaussian, 1);
        const auto& info = m->info();
        double total = std::accumulate(info.weights.begin(), info.weights.end(), 0.0);
        CHECK(std::abs(total - 1.0) < 1e-10);
        for (double w : info.weights) CHECK(w >= -1e-10);
        REQUIRE(info.cv_risk.has_value());
        for (double r : info.member_risks) CHECK(*info.cv_risk <= r + 1e-10);
    }
    SUBCASE("discrete selection picks the lowest-risk candidate") {
        LearnerSpec spec;
        spec.candidates = {CandidateSpec::parse("mean"), CandidateSpec::parse("glm")};
        spec.policy = StackPolicy::discrete_select;
        auto m = fit_super_learner(spec, d, y, Family::gaussian, 1);
        CHECK(m->info().weights == std::vector<double>{0.0, 1.0});
    }
}

TEST_CASE("candidate spec parsing") {
    CHECK(CandidateSpec::parse("nnet:5").hidden_units == 5);
    CHECK(CandidateSpec::parse("nnet:5").id() == "nnet:5");
    CHECK(CandidateSpec::parse("nnet").id() == "nnet");
    CHECK_THROWS_AS(CandidateSpec::parse("forest"), ValidationError);
    CHECK_THROWS_AS(CandidateSpec::parse("nnet:0"), ValidationError);
}

TEST_CASE("registered learners plug into stacking") {
    register_learner("constant_two", [](const Eigen::MatrixXd& design, const Eigen::VectorXd&, Family family,
                                        std::uint64_t) -> ModelPtr {
        Eigen::VectorXd coef = Eigen::VectorXd::Zero(design.cols());
        coef(0) = 2.0;
        FitInfo info;
        info.learner_id = "constant_two";
        info.family = family;
        return std::make_shared<LinearModel>(coef, info);
    });
    CHECK(is_registered_learner("constant_two"));
    Eigen::MatrixXd d = Eigen::MatrixXd::Ones(20, 1);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(20, 2.0);
    LearnerSpec spec;
    spec.candidates = {CandidateSpec::parse("constant_two")};
    auto m = fit_super_learner(spec, d, y, Family::gaussian, 0);
    CHECK(m->predict(d).isApprox(y));
}

TEST_CASE("cv folds are balanced and stratified") {
    Eigen::VectorXd y(20);
    for (int i = 0; i < 20; ++i) y(i) = i < 8 ? 1.0 : 0.0;
    auto folds = cv_fold_ids(y, 4, 3, true);
    for (int f = 0; f < 4; ++f) {
        int ones = 0, all = 0;
        for (int i = 0; i < 20; ++i)
            if (folds[i] == f) {
                ++all;
                ones += y(i) == 1.0;
            }
        CHECK(all == 5);
        CHECK(ones == 2);
    }
    CHECK(cv_fold_ids(y, 4, 3, true) == folds);
}
