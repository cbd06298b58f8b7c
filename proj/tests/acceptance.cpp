// Acceptance checks. One PASS/FAIL line per criterion, preceded by the
// measured numbers. `--only <name>` runs a single criterion.

#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "escalate/config.hpp"
#include "escalate/sim_harness.hpp"
#include "escalate/trial_engine.hpp"
#include "is_oracle.hpp"

using namespace escalate;

namespace {

class Checks {
public:
    void expect(bool ok, const char* fmt, ...) __attribute__((format(printf, 3, 4))) {
        char buf[512];
        va_list ap;
        va_start(ap, fmt);
        std::vsnprintf(buf, sizeof buf, fmt, ap);
        va_end(ap);
        std::printf("  [%s] %s\n", ok ? "ok" : "MISS", buf);
        ok_ = ok_ && ok;
    }
    void note(const std::string& s) { std::printf("  %s\n", s.c_str()); }
    bool ok() const { return ok_; }

private:
    bool ok_ = true;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const DoseGrid& grid() {
    static const DoseGrid g = reference_dose_grid();
    return g;
}

TrialEngine engine(int max_cohorts, TrialConfig c = {}) {
    c.max_cohorts = max_cohorts;
    return TrialEngine(grid(), published_dog_prior().params, weakly_informative_prior(grid()), c);
}

bool within(double x, double target, double tol) { return std::abs(x - target) <= tol; }

void prior_fit(Checks& c) {
    const auto t0 = std::chrono::steady_clock::now();
    const PercentileTable table = percentile_table(dog_study(), grid());
    const BvnFit f = fit_bvn(table, grid());
    const double secs = seconds_since(t0);
    const BvnParams& p = f.params;
    c.note("fit: mu (" + std::to_string(p.mu1) + ", " + std::to_string(p.mu2) + "), Sigma (" + std::to_string(p.s11) +
           ", " + std::to_string(p.s12) + ", " + std::to_string(p.s22) + "), delta " + std::to_string(f.delta));
    const BvnParams ref = published_dog_prior().params;
    c.note("published parameters score delta " +
           std::to_string(percentile_distance(table, ref, grid().d_ref)));
    c.expect(within(p.mu1, -0.524, 0.05), "mu1 %.4f vs -0.524 +- 0.05", p.mu1);
    c.expect(within(p.mu2, 0.147, 0.05), "mu2 %.4f vs 0.147 +- 0.05", p.mu2);
    c.expect(within(p.s11, 0.151, 0.3 * 0.151), "s11 %.4f vs 0.151 +- 30%%", p.s11);
    c.expect(within(p.s22, 0.001, 0.3 * 0.001), "s22 %.4f vs 0.001 +- 30%%", p.s22);
    c.expect(secs < 60.0, "runtime %.1f s < 60 s", secs);
}

void table2(Checks& c) {
    // Prior means, sds and effective sample sizes per dose as published.
    const double mean[] = {0.033, 0.069, 0.137, 0.252, 0.322, 0.382, 0.476, 0.557, 0.625};
    const double sd[] = {0.022, 0.041, 0.070, 0.102, 0.115, 0.121, 0.125, 0.121, 0.114};
    const double ess[] = {63.4, 36.7, 23.3, 17.0, 15.6, 15.0, 15.0, 15.8, 17.0};
    const auto e = engine(7);
    const auto s = summarize(mixture_posterior(e.prior_belief(1.0), {}), grid());
    for (std::size_t i = 0; i < grid().size(); ++i) {
        const auto& d = s.doses[i];
        const double n = ess_moment_match(d.mean, d.sd).ess;
        c.expect(within(d.mean, mean[i], 0.01) && within(d.sd, sd[i], 0.01) && within(n, ess[i], 0.1 * ess[i]),
                 "dose %g: mean %.3f (%.3f) sd %.3f (%.3f) ESS %.1f (%.1f)", d.dose, d.mean, mean[i], d.sd, sd[i], n,
                 ess[i]);
    }
}

void prediction_boundary(Checks& c) {
    const double table_mean[] = {0.033, 0.069, 0.137, 0.252, 0.322, 0.382, 0.476, 0.557, 0.625};
    const std::vector<int> at06{0, 0, 0, 0, 1, 1, 1, 1, 1}, at02{0, 0, 0, 0, 0, 0, 1, 1, 1};
    for (auto [b, expect] : {std::pair{0.6, at06}, std::pair{0.2, at02}}) {
        const auto u = UtilityTable::with_false_alarm_utility(b);
        std::vector<int> from_table;
        for (double m : table_mean) from_table.push_back(optimal_prediction(m, u));
        TrialConfig cfg;
        cfg.utilities = u;
        const auto engine_pred = engine(7, cfg).start(1).predictions;
        std::string shown;
        for (int v : engine_pred) shown += char('0' + v);
        c.expect(from_table == expect && engine_pred == expect, "u01 = %.1f: predictions %s", b, shown.c_str());
    }
}

void prior_gate(Checks& c) {
    const auto e = engine(7);
    const auto prior = mixture_posterior(e.prior_belief(1.0), {});
    const auto r = overdose_control(prior, grid(), kOverdoseCut, 0.25, std::nullopt, 2.0);
    const double top = r.highest_safe ? grid().doses[*r.highest_safe] : 0.0;
    c.expect(top == 16.0, "highest dose with Pr(p >= 0.33) <= 0.25: %g (Pr at 16 %.3f, at 22 %.3f)", top,
             r.prob_overdose[3], r.prob_overdose[4]);
    const double p2 = prior.risk_cdf(1, 0.1);
    c.expect(within(p2, 0.825, 0.01), "Pr(p2 < 0.1) = %.4f vs 0.825 +- 0.01", p2);
}

TrialState replay(const TrialEngine& e, const std::vector<std::pair<double, std::vector<int>>>& path) {
    TrialState s = e.start(42);
    for (const auto& [d, y] : path) e.record_cohort(s, grid().index_of(d), y, true);
    return s;
}

void weight_waypoints(Checks& c) {
    const auto e = engine(11);
    const TrialState ex2 = replay(e, {{4, {1, 0, 0}}, {2, {0, 0, 0}}, {4, {0, 0, 0}}, {8, {1, 1, 1}}});
    const TrialState ex3 = replay(e, {{4, {0, 0, 0}}, {8, {0, 0, 0}}, {16, {0, 0, 0}}, {22, {0, 0, 0}}, {28, {0, 0, 0}}});
    std::string t2, t3;
    for (const auto& w : ex2.trace) t2 += " " + std::to_string(w.weight).substr(0, 5);
    for (const auto& w : ex3.trace) t3 += " " + std::to_string(w.weight).substr(0, 5);
    c.note("example 2 weights:" + t2);
    c.note("example 3 weights:" + t3);
    c.expect(within(ex2.trace[0].weight, 0.26, 0.05), "example 2 w(1) %.3f vs 0.26 +- 0.05", ex2.trace[0].weight);
    c.expect(within(ex2.trace[3].weight, 0.08, 0.05), "example 2 w(4) %.3f vs 0.08 +- 0.05", ex2.trace[3].weight);
    c.expect(within(ex3.trace[3].weight, 0.533, 0.07), "example 3 w(4) %.3f vs 0.533 +- 0.07", ex3.trace[3].weight);
    c.expect(within(ex3.trace[4].weight, 0.250, 0.07), "example 3 w(5) %.3f vs 0.250 +- 0.07", ex3.trace[4].weight);
}

void operating_characteristics(Checks& c) {
    const StudyDesign d = reference_study_design();
    const auto oc = run_study(d, scenario_table(), parse_procedures("A,B,C,D,E"), 1000, 2024);
    write_report(oc, "oc_acceptance");
    c.note("full study written to oc_acceptance/ (" + std::to_string(oc.cells.size()) + " cells)");
    for (const auto& cell : oc.cells)
        if (cell.procedure == 'A')
            c.note(cell.scenario + ": PCS A " + std::to_string(cell.pct_correct()).substr(0, 5) + ", B " +
                   std::to_string(oc.cell(cell.scenario, 'B').pct_correct()).substr(0, 5) + ", C " +
                   std::to_string(oc.cell(cell.scenario, 'C').pct_correct()).substr(0, 5) + ", D " +
                   std::to_string(oc.cell(cell.scenario, 'D').pct_correct()).substr(0, 5) + ", E " +
                   std::to_string(oc.cell(cell.scenario, 'E').pct_correct()).substr(0, 5));
    const std::string s3 = scenario_table()[2].name, s8 = scenario_table()[7].name;
    const double b3 = oc.cell(s3, 'B').pct_correct(), c3 = oc.cell(s3, 'C').pct_correct();
    const double e8 = oc.cell(s8, 'E').pct_selecting[grid().index_of(70)];
    const double a8 = oc.cell(s8, 'A').pct_correct(), b8 = oc.cell(s8, 'B').pct_correct();
    c.expect(within(b3, 48.7, 5), "scenario 3, B: PCS %.1f vs 48.7 +- 5", b3);
    c.expect(within(c3, 38.1, 5), "scenario 3, C: PCS %.1f vs 38.1 +- 5", c3);
    c.expect(within(e8, 58.0, 5), "scenario 8, E: selects 70 in %.1f%% vs 58.0 +- 5", e8);
    c.expect(within(a8, 20.3, 6), "scenario 8, A: PCS %.1f vs 20.3 +- 6", a8);
    c.expect(within(b8, 33.8, 6), "scenario 8, B: PCS %.1f vs 33.8 +- 6", b8);
    c.expect(oc.seconds < 1800.0, "40 cells x 1000 replicates in %.0f s on %d thread(s) (limit 1800 s)", oc.seconds,
             oc.threads);
}

void oracle_equivalence(Checks& c) {
    const auto e = engine(7);
    const TrialConfig& cfg = e.config();
    const BvnParams inf = published_dog_prior().params.inflated(cfg.cov_inflation);
    const BvnParams weak = weakly_informative_prior(grid()).inflated(cfg.cov_inflation);
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> unif;
    int agree = 0;
    const int n_sets = 50;
    for (int k = 0; k < n_sets; ++k) {
        const auto data = oracle::random_dataset(rng, grid().size());
        const double w = unif(rng);
        const auto post = mixture_posterior(e.prior_belief(w), data);
        const auto is = oracle::importance_sample(inf, weak, w, grid(), data, 1'000'000, 7000 + k);
        const double wp = *post.posterior_weight;
        auto mix = [&](auto f) {
            double s = 0.0;
            if (wp > 0.0) s += wp * f(*post.post_informative);
            if (wp < 1.0) s += (1.0 - wp) * f(*post.post_weak);
            return s;
        };
        bool ok = std::abs(mix([](const auto& p) { return p.mean_theta1(); }) - is.theta1.mean) <= 3 * is.theta1.se;
        ok = ok && std::abs(mix([](const auto& p) { return p.mean_theta2(); }) - is.theta2.mean) <= 3 * is.theta2.se;
        for (std::size_t i = 0; i < grid().size(); ++i)
            ok = ok && std::abs(post.mean_risk(i) - is.risk[i].mean) <= 3 * is.risk[i].se;
        agree += ok;
    }
    c.expect(agree >= 48, "%d/%d datasets within 3 Monte Carlo standard errors (need 48)", agree, n_sets);
}

void properties(Checks& c) {
    // dlt_risk is increasing in dose for any theta.
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n1(0, 3), n2(0, 1.5);
    bool mono = true;
    for (int k = 0; k < 2000; ++k) {
        const ThetaPoint t{n1(rng), n2(rng)};
        for (std::size_t i = 1; i < grid().size(); ++i)
            mono = mono && dlt_log_odds(t, grid().doses[i - 1], grid().d_ref) < dlt_log_odds(t, grid().doses[i], grid().d_ref);
    }
    c.expect(mono, "dlt_risk increasing in dose over 2000 random theta");

    const auto pseudo = beta_pseudo_priors(dog_study());
    double lo = 1e9, hi = -1e9, worst_rt = 0.0;
    for (double d : grid().doses) {
        const double m = marginal_mass(d, pseudo);
        lo = std::min(lo, m);
        hi = std::max(hi, m);
        for (double k : {0.025, 0.5, 0.975})
            worst_rt = std::max(worst_rt, std::abs(marginal_cdf(marginal_percentile(d, k, pseudo), d, pseudo) / m - k));
    }
    c.expect(hi - lo < 1e-8, "image mass constant across doses (spread %.2e)", hi - lo);
    c.expect(worst_rt < 1e-5, "percentile round trip worst error %.2e < 1e-5", worst_rt);

    const bool ident = posterior_mixture_weight(0.0, -1, -2) == 0.0 && posterior_mixture_weight(1.0, -1, -2) == 1.0 &&
                       std::abs(posterior_mixture_weight(0.3, -4.2, -4.2) - 0.3) < 1e-15;
    c.expect(ident, "mixture-weight identities (w in {0,1}, equal likelihoods)");

    const auto e = engine(7);
    const std::vector<std::pair<double, std::vector<int>>> path{{4, {0, 1, 0}}, {4, {0, 0, 0}}, {8, {0, 0, 1}}};
    c.expect(save_session(replay(e, path)) == save_session(replay(engine(7), path)), "replay determinism");

    const StudyDesign d = reference_study_design();
    const std::vector<Scenario> two{scenario_table()[1], scenario_table()[5]};
    const auto s = run_study(d, two, parse_procedures("A,B,C"), 10, 11, {false, 1});
    const auto p = run_study(d, two, parse_procedures("A,B,C"), 10, 11, {true, 4});
    bool same = true;
    for (std::size_t k = 0; k < s.cells.size(); ++k)
        same = same && s.cells[k].pct_selecting == p.cells[k].pct_selecting &&
               s.cells[k].mean_patients == p.cells[k].mean_patients;
    c.expect(same, "run_study identical serial and on 4 threads");

    bool closed = true, capped = true;
    for (int rep = 0; rep < 20; ++rep) {
        const TrialResult t = simulate_trial(e, scenario_table()[rep % 8], 1000 + rep);
        TrialState partial = e.start(t.state.seed);
        for (const auto& h : t.state.history) {
            const auto post = e.posterior(partial);
            bool failed = false;
            for (std::size_t i = 0; i < grid().size(); ++i) {
                const bool fails = post.prob_overdose(i, kOverdoseCut) > 0.25;
                closed = closed && (!failed || fails);
                failed = failed || fails;
            }
            if (!partial.history.empty())
                capped = capped && (h.dose_index <= partial.history.back().dose_index ||
                                    grid().doses[h.dose_index] <= 2.0 * grid().doses[partial.history.back().dose_index]);
            e.record_cohort(partial, h.dose_index, h.outcomes);
        }
    }
    c.expect(closed, "unsafe doses are upward closed at every analysis of 20 simulated trials");
    c.expect(capped, "no escalation beyond twice the current dose in those trials");
}

struct Criterion {
    const char* name;
    void (*run)(Checks&);
};

const Criterion kCriteria[] = {
    {"prior_fit", prior_fit},
    {"table2", table2},
    {"prediction_boundary", prediction_boundary},
    {"prior_gate", prior_gate},
    {"weight_waypoints", weight_waypoints},
    {"operating_characteristics", operating_characteristics},
    {"oracle_equivalence", oracle_equivalence},
    {"properties", properties},
};

}  // namespace

int main(int argc, char** argv) {
    std::string only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = argv[++i];
        else {
            std::fprintf(stderr, "usage: %s [--only <criterion>]\n", argv[0]);
            return 2;
        }
    }
    int failed = 0, ran = 0;
    for (const auto& cr : kCriteria) {
        if (!only.empty() && only != cr.name) continue;
        ++ran;
        std::printf("%s\n", cr.name);
        Checks c;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            cr.run(c);
        } catch (const std::exception& e) {
            c.expect(false, "threw: %s", e.what());
        }
        std::printf("%s %s (%.1f s)\n", c.ok() ? "PASS" : "FAIL", cr.name, seconds_since(t0));
        std::fflush(stdout);
        failed += !c.ok();
    }
    if (ran == 0) {
        std::fprintf(stderr, "unknown criterion '%s'\n", only.c_str());
        return 2;
    }
    return failed == 0 ? 0 : 1;
}
