#include <doctest.h>

#include "cmr/crossfit.hpp"
#include "cmr/error.hpp"
#include "cmr/simulate.hpp"

#include <algorithm>
#include <map>

using namespace cmr;

TEST_CASE("nuisance role rotation") {
    auto r = assign_nuisance_roles(4, 1);
    CHECK(r.outcome == 2);
    CHECK(r.treatment == 3);
    CHECK(r.source == 4);
    CHECK(r.external == 0);
    r = assign_nuisance_roles(4, 3);
    CHECK(r.outcome == 4);
    CHECK(r.treatment == 1);
    CHECK(r.source == 2);
    r = assign_nuisance_roles(5, 5);
    CHECK(r.outcome == 1);
    CHECK(r.treatment == 2);
    CHECK(r.source == 3);
    CHECK(r.external == 4);
    CHECK_THROWS_AS(assign_nuisance_roles(3, 1), ValidationError);
}

TEST_CASE("stratified split sizes") {
    SUBCASE("exact divisibility") {
        std::vector<std::string> strata{"a", "a", "a", "a", "b", "b", "b", "b"};
        auto folds = stratified_split(strata, 4, 1, 0);
        for (int k = 1; k <= 4; ++k) {
            int a = 0, b = 0;
            for (std::size_t i = 0; i < strata.size(); ++i)
                if (folds[i] == k) (strata[i] == "a" ? a : b)++;
            CHECK(a == 1);
            CHECK(b == 1);
        }
    }
    SUBCASE("five rows over four folds") {
        std::vector<std::string> strata(5, "a");
        auto folds = stratified_split(strata, 4, 2, 0);
        std::vector<int> sizes(4, 0);
        for (int f : folds) sizes[static_cast<std::size_t>(f - 1)]++;
        std::sort(sizes.begin(), sizes.end());
        CHECK(sizes == std::vector<int>{1, 1, 1, 2});
    }
    SUBCASE("worked example source sizes") {
        std::vector<std::string> strata;
        strata.insert(strata.end(), 2312, "A");
        strata.insert(strata.end(), 1147, "B");
        strata.insert(strata.end(), 592, "C");
        auto folds = stratified_split(strata, 4, 9, 3);
        std::map<std::string, std::vector<int>> counts{
            {"A", std::vector<int>(4)}, {"B", std::vector<int>(4)}, {"C", std::vector<int>(4)}};
        for (std::size_t i = 0; i < strata.size(); ++i) counts[strata[i]][static_cast<std::size_t>(folds[i] - 1)]++;
        for (int c : counts["A"]) CHECK(c == 578);
        for (int c : counts["B"]) CHECK((c == 286 || c == 287));
        for (int c : counts["C"]) CHECK(c == 148);
        int total = 0;
        for (auto& [k, v] : counts)
            for (int c : v) total += c;
        CHECK(total == 4051);
    }
    SUBCASE("deterministic per seed and replication") {
        std::vector<std::string> strata(50, "x");
        CHECK(stratified_split(strata, 4, 1, 0) == stratified_split(strata, 4, 1, 0));
        CHECK(stratified_split(strata, 4, 1, 0) != stratified_split(strata, 4, 1, 1));
    }
    SUBCASE("stratum smaller than K") {
        std::vector<std::string> strata{"a", "a", "a", "b", "b", "b", "b"};
        CHECK_THROWS_WITH_AS(stratified_split(strata, 4, 1, 0), doctest::Contains("cross_fitting=false"),
                             ValidationError);
    }
}

TEST_CASE("median aggregation") {
    SUBCASE("hand example") {
        auto [point, var] = aggregate_replications({1, 2, 3}, {0.1, 0.1, 0.1});
        CHECK(point == 2.0);
        CHECK(var == doctest::Approx(1.1).epsilon(1e-15));
    }
    SUBCASE("single replication") {
        auto [point, var] = aggregate_replications({4.5}, {0.3});
        CHECK(point == 4.5);
        CHECK(var == 0.3);
    }
    SUBCASE("constant estimates") {
        auto [point, var] = aggregate_replications({7, 7, 7, 7}, {0.1, 0.4, 0.2, 0.3});
        CHECK(point == 7.0);
        CHECK(var == doctest::Approx(0.25));
    }
    CHECK(median({4, 1, 3, 2}) == 2.5);
}

TEST_CASE("analysis naming") {
    CHECK(std::string(to_string(Analysis::ste_external)) == "ste-external");
    CHECK(parse_analysis("ate-internal") == Analysis::ate_internal);
    CHECK_THROWS_AS(parse_analysis("ate"), ValidationError);
    CHECK(default_folds(Analysis::ate_internal) == 4);
    CHECK(default_folds(Analysis::ste_external) == 5);
}

namespace {

SimulatedData small_sim(std::uint64_t seed) {
    SimConfig c;
    c.m = 2;
    c.n_internal = 800;
    c.n_external = 400;
    c.p = 2;
    c.em_levels = 3;
    c.seed = seed;
    return generate_multisource(c);
}

EstimationOptions glm_options(Analysis analysis) {
    EstimationOptions o;
    o.analysis = analysis;
    o.nuisance.source_model = SourceModelKind::mn_glm;
    o.replications = 3;
    o.seed = 5;
    return o;
}

} // namespace

TEST_CASE("per-split means and replication variance") {
    auto sim = small_sim(4);
    auto data = stack_internal(sim.data);
    auto opt = glm_options(Analysis::ate_internal);
    CrossFitPlan plan{4, 1, opt.seed};
    auto rep = run_replication(data, opt, plan, 0);
    auto targets = analysis_targets(data, opt.analysis);
    REQUIRE(rep.point[kDifference].size() == targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        CHECK(rep.point[kDifference][t] == doctest::Approx(rep.point[kArm1][t] - rep.point[kArm0][t]));
        CHECK(rep.variance[kDifference][t] > 0);
        CHECK(rep.covariance[kDifference](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(t)) ==
              doctest::Approx(rep.variance[kDifference][t]));
    }
}

TEST_CASE("estimate: targets and worker independence") {
    auto sim = small_sim(6);
    auto data = stack_with_external(sim.data, sim.external);
    for (Analysis a : {Analysis::ate_internal, Analysis::ste_external}) {
        auto opt = glm_options(a);
        auto one = estimate(data, opt);
        opt.workers = 3;
        auto three = estimate(data, opt);
        CHECK(one.point[kDifference] == three.point[kDifference]);
        CHECK(one.variance[kArm1] == three.variance[kArm1]);
        CHECK(one.correlation[kDifference] == three.correlation[kDifference]);
        CHECK(one.folds == default_folds(a));
        CHECK(one.targets.size() == (a == Analysis::ate_internal ? 2u : 3u));
    }
}

TEST_CASE("subgroup analysis needs an effect modifier") {
    SimConfig c;
    c.m = 2;
    c.n_internal = 200;
    c.n_external = 50;
    c.p = 2;
    auto sim = generate_multisource(c);
    auto data = stack_internal(sim.data);
    CHECK_THROWS_AS(analysis_targets(data, Analysis::ste_internal), ValidationError);
    CHECK_THROWS_AS(analysis_targets(data, Analysis::ate_external), ValidationError);
}

TEST_CASE("no cross-fitting evaluates on the full sample") {
    auto sim = small_sim(8);
    auto data = stack_internal(sim.data);
    auto opt = glm_options(Analysis::ste_internal);
    opt.cross_fitting = false;
    auto est = estimate(data, opt);
    CHECK(est.folds == 0);
    CHECK(est.replications == 1);
    auto direct = run_no_crossfit(data, opt);
    CHECK(est.point[kArm0] == direct.point[kArm0]);
    CHECK(est.variance[kArm0] == direct.variance[kArm0]);
}
