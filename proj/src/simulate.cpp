#include "cmr/simulate.hpp"

#include "cmr/error.hpp"
#include "cmr/parallel.hpp"
#include "cmr/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

namespace cmr {

namespace {

double cycle(std::initializer_list<double> pattern, int j) {
    return *(pattern.begin() + static_cast<std::ptrdiff_t>(j) % static_cast<std::ptrdiff_t>(pattern.size()));
}

template <typename T>
void require_size(const std::vector<T>& v, std::size_t n, const char* name) {
    if (v.size() != n)
        throw ValidationError(std::string("simulation config: ") + name + " must have " + std::to_string(n) +
                              " entries");
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double nonlinear_term(const std::vector<double>& x) { return x[0] * x[1] + 0.5 * std::exp(x[0]); }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> normalized(std::vector<double> probs, int levels, const char* name) {
    if (probs.empty()) probs.assign(static_cast<std::size_t>(levels), 1.0);
    require_size(probs, static_cast<std::size_t>(levels), name);
    double total = 0.0;
    for (double q : probs) {
        if (!(q >= 0)) throw ValidationError(std::string("simulation config: ") + name + " must be non-negative");
        total += q;
    }
    if (!(total > 0)) throw ValidationError(std::string("simulation config: ") + name + " sums to zero");
    for (double& q : probs) q /= total;
    return probs;
}

// Source probabilities P(S = s | X) over the internal sources.
std::vector<double> source_probabilities(const SimConfig& c, const std::vector<double>& x) {
    std::vector<double> eta(static_cast<std::size_t>(c.m), 0.0);
    double h = c.misspecify.source ? c.misspecify.strength * nonlinear_term(x) : 0.0;
    for (int s = 1; s < c.m; ++s) {
        auto i = static_cast<std::size_t>(s);
        eta[i] = c.source_intercepts[i] + dot(c.source_slopes[i], x) + h;
    }
    double mx = *std::max_element(eta.begin(), eta.end());
    double total = 0.0;
    for (double& e : eta) total += (e = std::exp(e - mx));
    for (double& e : eta) e /= total;
    return eta;
}

int draw_category(Rng& rng, const std::vector<double>& probs) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
}

std::vector<double> draw_x(Rng& rng, int p, const std::vector<double>* shift) {
    std::normal_distribution<double> normal;
    std::vector<double> x(static_cast<std::size_t>(p));
    for (int j = 0; j < p; ++j) x[static_cast<std::size_t>(j)] = normal(rng) + (shift ? (*shift)[static_cast<std::size_t>(j)] : 0.0);
    return x;
}

std::string source_label(int s, int m) {
    if (m <= 26) return std::string(1, static_cast<char>('A' + s));
    return std::to_string(s + 1);
}

std::string level_label(int x, int levels) {
    if (levels <= 26) return std::string(1, static_cast<char>('a' + x));
    return std::to_string(x + 1);
}

double tau_x(const SimConfig& c, const std::vector<double>& x) { return c.tau_intercept + dot(c.tau_slopes, x); }

} // namespace

void SimConfig::complete() {
    if (m < 1) throw ValidationError("simulation config: m must be at least 1");
    if (p < 2) throw ValidationError("simulation config: p must be at least 2");
    if (em_levels < 0) throw ValidationError("simulation config: em_levels must be non-negative");
    if (n_external < 0) throw ValidationError("simulation config: n_external must be non-negative");
    if (!(noise_sd >= 0)) throw ValidationError("simulation config: noise_sd must be non-negative");
    const auto mm = static_cast<std::size_t>(m), pp = static_cast<std::size_t>(p);
    if (source_sizes.empty()) {
        if (n_internal < 1) throw ValidationError("simulation config: n_internal must be at least 1");
    } else {
        require_size(source_sizes, mm, "source_sizes");
        for (int n : source_sizes)
            if (n < 1) throw ValidationError("simulation config: every source size must be at least 1");
    }
    if (source_intercepts.empty()) source_intercepts.assign(mm, 0.0);
    if (source_slopes.empty()) {
        source_slopes.assign(mm, std::vector<double>(pp, 0.0));
        for (int s = 1; s < m; ++s) {
            source_slopes[static_cast<std::size_t>(s)][static_cast<std::size_t>((s - 1) % p)] += 0.4;
            source_slopes[static_cast<std::size_t>(s)][static_cast<std::size_t>(s % p)] -= 0.2;
        }
    }
    if (treatment_intercepts.empty())
        for (int s = 0; s < m; ++s) treatment_intercepts.push_back(0.3 * ((s % 3) - 1));
    if (treatment_slopes.empty())
        for (int j = 0; j < p; ++j) treatment_slopes.push_back(cycle({0.4, -0.3, 0.2, 0.0}, j));
    if (outcome_slopes.empty())
        for (int j = 0; j < p; ++j) outcome_slopes.push_back(cycle({1.0, 0.5, -0.5, 0.25}, j));
    if (tau_slopes.empty())
        for (int j = 0; j < p; ++j) tau_slopes.push_back(j == 0 ? 0.5 : j == 1 ? 0.25 : 0.0);
    if (tau_em.empty())
        for (int x = 0; x < em_levels; ++x) tau_em.push_back(0.5 * (x - 0.5 * (em_levels - 1)));
    if (external_shift.empty())
        for (int j = 0; j < p; ++j) external_shift.push_back(cycle({0.3, -0.2, 0.2, 0.0}, j));
    if (em_levels > 0) {
        em_probs_internal = normalized(em_probs_internal, em_levels, "em_probs_internal");
        if (em_probs_external.empty())
            for (int x = 0; x < em_levels; ++x) em_probs_external.push_back(x + 1.0);
        em_probs_external = normalized(em_probs_external, em_levels, "em_probs_external");
    }
    require_size(source_intercepts, mm, "source_intercepts");
    require_size(source_slopes, mm, "source_slopes");
    for (const auto& row : source_slopes) require_size(row, pp, "source_slopes rows");
    require_size(treatment_intercepts, mm, "treatment_intercepts");
    require_size(treatment_slopes, pp, "treatment_slopes");
    require_size(outcome_slopes, pp, "outcome_slopes");
    require_size(tau_slopes, pp, "tau_slopes");
    require_size(tau_em, static_cast<std::size_t>(em_levels), "tau_em");
    require_size(external_shift, pp, "external_shift");
}

SimConfig example_config(std::uint64_t seed) {
    SimConfig c;
    c.m = 3;
    c.source_sizes = {2312, 1147, 592};
    c.n_external = 10083;
    c.p = 9;
    c.em_levels = 5;
    c.tau_intercept = 6.5;
    c.seed = seed;
    return c;
}

SimulatedData generate_multisource(SimConfig c) {
    c.complete();
    SimulatedData out;
    auto& d = out.data;
    const auto pp = static_cast<std::size_t>(c.p);
    for (int s = 0; s < c.m; ++s) d.source_labels.push_back(source_label(s, c.m));
    d.covariates.columns.resize(pp);
    for (std::size_t j = 0; j < pp; ++j) d.covariates.columns[j].name = "X" + std::to_string(j + 1);
    std::vector<std::string> em_internal, em_external;
    if (c.em_levels > 0) d.effect_modifier_name = "EM";

    Rng rng(derive_seed(c.seed, 1));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<long long> quota(c.source_sizes.begin(), c.source_sizes.end());
    long long remaining = c.source_sizes.empty() ? c.n_internal : std::accumulate(quota.begin(), quota.end(), 0LL);
    const long long max_attempts = 10000LL * std::max(remaining, 1LL);
    long long attempts = 0;
    while (remaining > 0) {
        if (++attempts > max_attempts)
            throw ValidationError("simulation: source quotas cannot be met under the configured source model");
        std::vector<double> x = draw_x(rng, c.p, nullptr);
        int s = draw_category(rng, source_probabilities(c, x));
        int em = c.em_levels > 0 ? draw_category(rng, c.em_probs_internal) : -1;
        double h = nonlinear_term(x) * c.misspecify.strength;
        double pa = logistic(c.treatment_intercepts[static_cast<std::size_t>(s)] + dot(c.treatment_slopes, x) +
                             (c.misspecify.treatment ? h : 0.0));
        int a = unif(rng) < pa ? 1 : 0;
        double eps = normal(rng);
        if (!quota.empty()) {
            if (quota[static_cast<std::size_t>(s)] == 0) continue;
            --quota[static_cast<std::size_t>(s)];
        }
        --remaining;
        double tau = tau_x(c, x) + (em >= 0 ? c.tau_em[static_cast<std::size_t>(em)] : 0.0);
        double y = c.outcome_intercept + dot(c.outcome_slopes, x) + (c.misspecify.outcome ? h : 0.0) + a * tau +
                   c.noise_sd * eps;
        d.outcome.push_back(y);
        d.source.push_back(s);
        d.treatment.push_back(a);
        for (std::size_t j = 0; j < pp; ++j) d.covariates.columns[j].values.push_back(x[j]);
        if (em >= 0) em_internal.push_back(level_label(em, c.em_levels));
    }

    Rng ext_rng(derive_seed(c.seed, 2));
    auto& e = out.external;
    e.covariates.columns.resize(pp);
    for (std::size_t j = 0; j < pp; ++j) e.covariates.columns[j].name = d.covariates.columns[j].name;
    int kept = 0;
    attempts = 0;
    while (kept < c.n_external) {
        if (++attempts > 10000LL * c.n_external) throw ValidationError("simulation: external acceptance rate too low");
        std::vector<double> x = draw_x(ext_rng, c.p, &c.external_shift);
        int em = c.em_levels > 0 ? draw_category(ext_rng, c.em_probs_external) : -1;
        if (c.misspecify.external) {
            double keep = logistic(c.misspecify.strength * nonlinear_term(x) - 1.0);
            if (unif(ext_rng) >= keep) continue;
        }
        ++kept;
        for (std::size_t j = 0; j < pp; ++j) e.covariates.columns[j].values.push_back(x[j]);
        if (em >= 0) em_external.push_back(level_label(em, c.em_levels));
    }
    if (c.em_levels > 0) {
        d.effect_modifier = std::move(em_internal);
        e.effect_modifier = std::move(em_external);
    }
    return out;
}

const PopulationTruth& TruthTable::population(int index) const {
    for (const auto& p : populations)
        if (p.population == index) return p;
    throw ValidationError("no truth for population " + std::to_string(index));
}

TruthTable true_effects(SimConfig c, long long oracle_n, std::uint64_t oracle_seed, int workers) {
    c.complete();
    if (oracle_n < 2) throw ValidationError("oracle_n must be at least 2");
    const int pops = c.m + 1;   // 0 external, 1..m internal
    // Weighted sums per population: sum w, sum w*t, sum w^2, sum w^2*t, sum w^2*t^2.
    constexpr long long chunk = 1 << 15;
    const long long chunks = (oracle_n + chunk - 1) / chunk;
    struct Sums {
        std::vector<std::array<double, 5>> pop;
    };
    std::vector<Sums> partial(static_cast<std::size_t>(chunks));
    parallel_for(static_cast<std::size_t>(chunks), workers, [&](std::size_t ci) {
        Rng rng(derive_seed(oracle_seed, 0x7E, ci));
        auto& acc = partial[ci].pop;
        acc.assign(static_cast<std::size_t>(pops), {0, 0, 0, 0, 0});
        long long begin = static_cast<long long>(ci) * chunk;
        long long end = std::min(oracle_n, begin + chunk);
        auto add = [&](int pop, double w, double t) {
            auto& a = acc[static_cast<std::size_t>(pop)];
            a[0] += w;
            a[1] += w * t;
            a[2] += w * w;
            a[3] += w * w * t;
            a[4] += w * w * t * t;
        };
        for (long long i = begin; i < end; ++i) {
            std::vector<double> x = draw_x(rng, c.p, nullptr);
            std::vector<double> q = source_probabilities(c, x);
            double t = tau_x(c, x);
            for (int s = 0; s < c.m; ++s) add(s + 1, q[static_cast<std::size_t>(s)], t);
            std::vector<double> xe = draw_x(rng, c.p, &c.external_shift);
            double w = c.misspecify.external ? logistic(c.misspecify.strength * nonlinear_term(xe) - 1.0) : 1.0;
            add(0, w, tau_x(c, xe));
        }
    });
    std::vector<std::array<double, 5>> total(static_cast<std::size_t>(pops), {0, 0, 0, 0, 0});
    for (const auto& part : partial)
        for (std::size_t k = 0; k < total.size(); ++k)
            for (std::size_t j = 0; j < 5; ++j) total[k][j] += part.pop[k][j];

    TruthTable table;
    for (int pop = 0; pop < pops; ++pop) {
        const auto& a = total[static_cast<std::size_t>(pop)];
        double mean = a[1] / a[0];
        // Delta-method SE of the self-normalized ratio.
        double var = (a[4] - 2 * mean * a[3] + mean * mean * a[2]) / (a[0] * a[0]);
        TrueEffect base{mean, std::sqrt(std::max(var, 0.0)), std::nullopt};
        if (pop == 0 && !c.misspecify.external) base.closed_form = c.tau_intercept + dot(c.tau_slopes, c.external_shift);
        if (pop > 0 && c.m == 1) base.closed_form = c.tau_intercept;

        PopulationTruth truth;
        truth.population = pop;
        const auto& probs = pop == 0 ? c.em_probs_external : c.em_probs_internal;
        double em_shift = 0.0;
        for (int x = 0; x < c.em_levels; ++x) em_shift += probs[static_cast<std::size_t>(x)] * c.tau_em[static_cast<std::size_t>(x)];
        auto shifted = [](TrueEffect t, double delta) {
            t.value += delta;
            if (t.closed_form) *t.closed_form += delta;
            return t;
        };
        truth.ate = shifted(base, em_shift);
        for (int x = 0; x < c.em_levels; ++x) truth.ste.push_back(shifted(base, c.tau_em[static_cast<std::size_t>(x)]));
        table.populations.push_back(std::move(truth));
    }
    return table;
}

} // namespace cmr
