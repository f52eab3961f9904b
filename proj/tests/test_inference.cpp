#include <doctest.h>

#include "cmr/error.hpp"
#include "cmr/inference.hpp"

#include <cmath>

using namespace cmr;

namespace {

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Bisection on a monotone function over [lo, hi].
template <typename F>
double solve(F f, double target, double lo, double hi) {
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        (f(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

TEST_CASE("normal quantile") {
    for (double p : {1e-10, 0.001, 0.025, 0.3, 0.5, 0.8, 0.975, 0.999999}) {
        double ref = solve(phi, p, -40.0, 40.0);
        CHECK(std::abs(normal_quantile(p) - ref) < 1e-9);
    }
    CHECK(normal_quantile(0.5) == 0.0);
}

TEST_CASE("wald intervals") {
    auto ci = wald_ci(0.0, 1.0, 0.95);
    CHECK(std::abs(ci.upper - 1.959964) < 1e-6);
    CHECK(std::abs(ci.lower + 1.959964) < 1e-6);
    ci = wald_ci(5.0, 0.0, 0.95);
    CHECK(ci.lower == 5.0);
    CHECK(ci.upper == 5.0);
    ci = wald_ci(6.6294, 0.1535, 0.95);
    CHECK(std::round(ci.lower * 1e4) / 1e4 == doctest::Approx(6.3285).epsilon(1e-12));
    CHECK(std::round(ci.upper * 1e4) / 1e4 == doctest::Approx(6.9303).epsilon(1e-12));
    CHECK_THROWS_AS(wald_ci(0, -1, 0.95), ValidationError);
    CHECK_THROWS_AS(wald_ci(0, 1, 1.0), ValidationError);
}

TEST_CASE("sup-t critical values") {
    SUBCASE("two independent targets") {
        double ref = solve([](double c) { return std::pow(2 * phi(c) - 1, 2); }, 0.95, 0.0, 10.0);
        CHECK(ref == doctest::Approx(2.2365).epsilon(1e-4));
        double c = sup_t_critical_value(Eigen::MatrixXd::Identity(2, 2), 0.95, 100000, 17);
        CHECK(std::abs(c - 2.2365) < 0.01);
    }
    SUBCASE("single target reduces to the Wald interval") {
        auto bands = simultaneous_bands({1.0}, {0.2}, Eigen::MatrixXd::Identity(1, 1), 0.95, 100000, 3);
        auto ci = wald_ci(1.0, 0.2, 0.95);
        CHECK(std::abs(bands.bands[0].upper - ci.upper) <= 0.005 * 0.2);
        CHECK(std::abs(bands.bands[0].lower - ci.lower) <= 0.005 * 0.2);
    }
    SUBCASE("five independent targets within Monte Carlo tolerance") {
        double ref = solve([](double c) { return std::pow(2 * phi(c) - 1, 5); }, 0.95, 0.0, 10.0);
        double c = sup_t_critical_value(Eigen::MatrixXd::Identity(5, 5), 0.95, 100000, 23);
        CHECK(std::abs(c - ref) < 3.0 / std::sqrt(100000.0));
    }
    SUBCASE("bands contain the pointwise intervals") {
        Eigen::MatrixXd r(3, 3);
        r << 1, 0.6, 0.2, 0.6, 1, 0.4, 0.2, 0.4, 1;
        auto b = simultaneous_bands({0, 1, 2}, {0.1, 0.2, 0.3}, r, 0.95, 20000, 4);
        CHECK(b.critical_value >= normal_quantile(0.975));
        CHECK_FALSE(b.projected);
    }
    SUBCASE("independent of the worker count") {
        Eigen::MatrixXd r = Eigen::MatrixXd::Identity(4, 4);
        r(0, 1) = r(1, 0) = 0.5;
        CHECK(sup_t_critical_value(r, 0.95, 50000, 8, 1) == sup_t_critical_value(r, 0.95, 50000, 8, 4));
    }
}

TEST_CASE("nearest correlation projection") {
    Eigen::MatrixXd r(3, 3);
    r << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
    bool projected = false;
    Eigen::MatrixXd fixed = nearest_correlation(r, 1e-10, &projected);
    CHECK(projected);
    CHECK((fixed.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fixed);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);

    auto bands = simultaneous_bands({0, 0, 0}, {1, 1, 1}, r, 0.95, 10000, 1);
    CHECK(bands.projected);
    CHECK_FALSE(bands.warnings.empty());
}

TEST_CASE("correlation from influence contributions") {
    Eigen::MatrixXd inf(4, 2);
    inf << 1, 2, -1, -2, 0.5, 1, -0.5, -1;
    Eigen::VectorXd counts(2);
    counts << 4, 4;
    Eigen::MatrixXd r = correlation_from_influence(inf, counts);
    CHECK(r(0, 1) == doctest::Approx(1.0));
    CHECK(r(0, 0) == doctest::Approx(1.0));
}
