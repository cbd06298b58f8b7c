// Command-line front end: live trial conduct on a session file, the
// simulation study, prior fitting and the HTTP service.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>

#include "escalate/config.hpp"
#include "escalate/errors.hpp"
#include "escalate/service_api.hpp"
#include "escalate/sim_harness.hpp"
#include "escalate/trial_engine.hpp"

using namespace escalate;

namespace {

std::vector<int> parse_outcomes(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok != "0" && tok != "1") throw DataError("outcomes are a comma list of 0/1, got '" + s + "'");
        out.push_back(tok == "1");
    }
    return out;
}

void print_summary(const TrialEngine& engine, const TrialState& s) {
    const PosteriorSummary sum = engine.summary(s);
    std::printf("status %s, cohorts %d/%d, weight %.3f (posterior %.3f)\n", to_string(s.status), s.cohorts_done(),
                s.config.max_cohorts, s.current_weight(), sum.posterior_weight);
    std::printf("%8s %8s %8s %8s %8s %8s %5s\n", "dose", "median", "under", "target", "over", "Pr(DLT)", "pred");
    for (std::size_t i = 0; i < sum.doses.size(); ++i) {
        const auto& d = sum.doses[i];
        std::printf("%8g %8.3f %8.3f %8.3f %8.3f %8.3f %5d\n", d.dose, d.median, d.pr_under, d.pr_target, d.pr_over,
                    d.pr_dlt, s.predictions[i]);
    }
}

BvnParams informative_for(const DesignFile& d, const FitOptions& fit) {
    if (d.informative) return d.informative->params;
    if (!d.study) return published_dog_prior().params;
    const BvnFit f = fit_bvn(percentile_table(*d.study, d.grid), d.grid, fit);
    std::fprintf(stderr, "fitted prior: delta %.4f\n", f.delta);
    return f.params;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian dose escalation with an animal-data mixture prior"};
    app.require_subcommand(1);

    std::string session, design_file, scenarios_file, procedures = "A,B,C,D,E", out_dir = "oc", study_file, outcomes;
    std::uint64_t seed = 1;
    double dose = 0.0, u01 = 0.6;
    int reps = 1000, threads = 0, cohorts = 7, port = 8080;
    bool override_dose = false, serial = false;
    std::string host = "127.0.0.1", data_dir = "sessions";

    auto* init = app.add_subcommand("init", "start a trial session");
    init->add_option("--design", design_file, "design JSON (grid, animal_study or informative, trial)");
    init->add_option("--session", session, "session file to create")->required();
    init->add_option("--seed", seed, "seed for the lambda simulation stream");

    auto* recommend = app.add_subcommand("recommend", "dose for the next cohort");
    recommend->add_option("--session", session)->required();

    auto* record = app.add_subcommand("record", "enter a cohort's outcomes");
    record->add_option("--session", session)->required();
    record->add_option("--dose", dose, "administered dose (mg/m^2)")->required();
    record->add_option("--outcomes", outcomes, "per-patient DLT flags, e.g. 0,1,0")->required();
    record->add_flag("--override", override_dose, "dose differs from the recommendation (audited)");

    auto* status = app.add_subcommand("status", "posterior summary and weight trace");
    status->add_option("--session", session)->required();

    auto* mtd = app.add_subcommand("mtd", "selected MTD of a finished trial");
    mtd->add_option("--session", session)->required();

    auto* simulate = app.add_subcommand("simulate", "operating characteristics study");
    simulate->add_option("--scenarios", scenarios_file, "scenario JSON (default: the eight reference scenarios)");
    simulate->add_option("--procedures", procedures, "comma list from A-E");
    simulate->add_option("--reps", reps, "replicates per scenario and procedure");
    simulate->add_option("--seed", seed, "master seed");
    simulate->add_option("--out", out_dir, "output directory");
    simulate->add_option("--cohorts", cohorts, "maximum number of cohorts");
    simulate->add_option("--u01", u01, "utility of a false DLT prediction");
    simulate->add_option("--threads", threads, "OpenMP threads (0 = default)");
    simulate->add_flag("--serial", serial, "run the serial reference loop");

    auto* fit = app.add_subcommand("fit-prior", "fit the informative bivariate normal to animal data");
    fit->add_option("--study", study_file, "design or study JSON (default: the dog study)");

    auto* serve = app.add_subcommand("serve", "HTTP service");
    serve->add_option("--host", host)->envname("ESCALATE_HOST");
    serve->add_option("--port", port)->envname("ESCALATE_PORT");
    serve->add_option("--dir", data_dir, "session directory")->envname("ESCALATE_DATA");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*init) {
            const DesignFile d = design_file.empty() ? parse_design(json::object()) : parse_design(read_json_file(design_file));
            const TrialEngine engine(d.grid, informative_for(d, {}), d.weak ? *d.weak : weakly_informative_prior(d.grid),
                                     d.trial);
            const TrialState s = engine.start(seed);
            write_session_file(session, s);
            std::printf("session %s: first cohort at %g mg/m^2\n", session.c_str(), d.grid.doses[*s.next_dose]);
        } else if (*recommend) {
            const TrialState s = read_session_file(session);
            const TrialEngine engine = TrialEngine::for_state(s);
            const Recommendation r = engine.recommend_next(s);
            if (r.stop) std::printf("stop: lowest dose fails overdose control\n");
            else std::printf("%g\n", s.grid.doses[*r.dose]);
        } else if (*record) {
            TrialState s = read_session_file(session);
            const TrialEngine engine = TrialEngine::for_state(s);
            engine.record_cohort(s, s.grid.index_of(dose), parse_outcomes(outcomes), override_dose);
            write_session_file(session, s);
            const auto& e = s.trace.back();
            std::printf("cohort %d: kappa %.3f lambda %.3f w %.3f\n", e.cohort, e.kappa, e.lambda, e.weight);
            if (s.next_dose) std::printf("next dose %g\n", s.grid.doses[*s.next_dose]);
            else std::printf("trial %s\n", to_string(s.status));
        } else if (*status) {
            const TrialState s = read_session_file(session);
            const TrialEngine engine = TrialEngine::for_state(s);
            print_summary(engine, s);
            std::printf("\ncohort  dose  dlt   kappa  lambda  weight  run-in\n");
            for (std::size_t h = 0; h < s.trace.size(); ++h) {
                const auto& c = s.history[h];
                const auto& e = s.trace[h];
                std::printf("%6d %5g %2d/%d %7.3f %7.3f %7.3f %7s\n", e.cohort, s.grid.doses[c.dose_index], c.n_dlt,
                            c.n_patients, e.kappa, e.lambda, e.weight, e.run_in ? "yes" : "no");
            }
        } else if (*mtd) {
            const TrialState s = read_session_file(session);
            const auto m = TrialEngine::for_state(s).select_mtd(s);
            if (m) std::printf("%g\n", s.grid.doses[*m]);
            else std::printf("none\n");
        } else if (*simulate) {
            StudyDesign design = reference_study_design();
            std::vector<Scenario> scenarios = scenario_table();
            if (!scenarios_file.empty()) {
                const ScenarioFile f = parse_scenarios(read_json_file(scenarios_file));
                design.grid = f.grid;
                design.weak = weakly_informative_prior(f.grid);
                design.base.start_dose = f.grid.index_of(4.0);
                scenarios = f.scenarios;
            }
            design.base.max_cohorts = cohorts;
            const auto oc = run_study(design, scenarios, parse_procedures(procedures, u01), reps, seed,
                                      {!serial, threads});
            write_report(oc, out_dir);
            std::printf("%zu cells, %.1f s on %d thread(s); wrote %s/oc.csv, alloc.csv, plotdata.json\n",
                        oc.cells.size(), oc.seconds, oc.threads, out_dir.c_str());
            for (const auto& c : oc.cells)
                std::printf("%-11s %c  PCS %5.1f%%  stopped %5.1f%%\n", c.scenario.c_str(), c.procedure,
                            c.pct_correct(), c.pct_stopped_early);
        } else if (*fit) {
            DoseGrid grid = reference_dose_grid();
            AnimalStudy study = dog_study();
            if (!study_file.empty()) {
                const json j = read_json_file(study_file);
                if (j.contains("animal_study")) {
                    const DesignFile d = parse_design(j);
                    grid = d.grid;
                    study = *d.study;
                } else {
                    study = j.get<AnimalStudy>();
                }
            }
            const BvnFit f = fit_bvn(percentile_table(study, grid), grid);
            std::cout << json(BvnRecord{f.params, grid.d_ref, f.delta}).dump(1) << "\n";
        } else if (*serve) {
            TrialService service({data_dir, {}});
            httplib::Server server;
            service.mount(server);
            std::fprintf(stderr, "listening on %s:%d, sessions in %s\n", host.c_str(), port, data_dir.c_str());
            if (!server.listen(host, port)) {
                std::fprintf(stderr, "cannot bind %s:%d\n", host.c_str(), port);
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
