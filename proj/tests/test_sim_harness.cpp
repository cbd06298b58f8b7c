#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "escalate/config.hpp"
#include "escalate/seeding.hpp"
#include "escalate/sim_harness.hpp"

using namespace escalate;

namespace {

Scenario flat(const std::string& name, double risk) {
    return {name, std::vector<double>(9, risk), 0};
}

double row_total(const OcCell& c) {
    return std::accumulate(c.pct_selecting.begin(), c.pct_selecting.end(), 0.0) + c.pct_stopped_early +
           c.pct_no_selection;
}

}  // namespace

TEST_CASE("procedures") {
    const auto ps = parse_procedures("A,C,E", 0.2);
    REQUIRE(ps.size() == 3);
    CHECK(ps[1].weight_policy == WeightPolicy::fixed);
    CHECK(ps[1].fixed_weight == 0.5);
    CHECK(ps[2].fixed_weight == 0.0);
    CHECK(ps[0].utilities.u01 == 0.2);
    CHECK(ProcedureSpec::standard('B').run_in);
    CHECK(ProcedureSpec::standard('D').fixed_weight == 1.0);
    CHECK_THROWS_AS(parse_procedures("A,F"), DataError);

    const TrialConfig c = ProcedureSpec::standard('C').configure(reference_study_design().base);
    CHECK(c.weight_policy == WeightPolicy::fixed);
    CHECK(c.max_cohorts == 7);
}

TEST_CASE("seed derivation") {
    CHECK(derive_seed(1, {0, 0}) != derive_seed(1, {0, 1}));
    CHECK(derive_seed(1, {0, 1}) != derive_seed(1, {1, 0}));
    CHECK(derive_seed(7, {3, 4}) == derive_seed(7, {3, 4}));
    static_assert(splitmix64(0) != 0);
}

TEST_CASE("single trials") {
    const StudyDesign d = reference_study_design();
    const TrialEngine e(d.grid, d.informative, d.weak, ProcedureSpec::standard('A').configure(d.base));

    const TrialResult safe = simulate_trial(e, flat("safe", 0.0), 1);
    CHECK(safe.state.status == TrialStatus::completed);
    CHECK(safe.state.cohorts_done() == 7);
    for (const auto& c : safe.state.history) CHECK(c.n_dlt == 0);

    const TrialResult toxic = simulate_trial(e, flat("toxic", 1.0), 1);
    CHECK(toxic.state.status == TrialStatus::stopped_early);
    CHECK_FALSE(toxic.mtd);

    const TrialResult a = simulate_trial(e, scenario_table()[2], 99), b = simulate_trial(e, scenario_table()[2], 99);
    CHECK(save_session(a.state) == save_session(b.state));
    CHECK(a.mtd == b.mtd);
}

TEST_CASE("study aggregation") {
    const StudyDesign d = reference_study_design();
    const auto sc = scenario_table();
    const std::vector<Scenario> use{sc[2], sc[7]};
    const auto procs = parse_procedures("A,E");

    SUBCASE("one replicate gives a one-hot row") {
        const auto oc = run_study(d, use, procs, 1, 3, {false, 1});
        for (const auto& c : oc.cells) {
            CHECK(row_total(c) == doctest::Approx(100.0));
            int hot = 0;
            for (double p : c.pct_selecting) hot += p == 100.0;
            hot += c.pct_stopped_early == 100.0;
            hot += c.pct_no_selection == 100.0;
            CHECK(hot == 1);
            const double patients = std::accumulate(c.mean_patients.begin(), c.mean_patients.end(), 0.0);
            CHECK(patients <= 21.0);
            CHECK(std::fmod(patients, 3.0) == 0.0);
        }
    }

    SUBCASE("serial and parallel runs agree exactly") {
        const auto s = run_study(d, use, procs, 12, 5, {false, 1});
        const auto p = run_study(d, use, procs, 12, 5, {true, 3});
        REQUIRE(s.cells.size() == 4);
        CHECK(s.cells[0].scenario == use[0].name);
        CHECK(s.cells[1].procedure == 'E');
        for (std::size_t k = 0; k < s.cells.size(); ++k) {
            CHECK(s.cells[k].pct_selecting == p.cells[k].pct_selecting);
            CHECK(s.cells[k].mean_patients == p.cells[k].mean_patients);
            CHECK(s.cells[k].pct_stopped_early == p.cells[k].pct_stopped_early);
            CHECK(row_total(s.cells[k]) == doctest::Approx(100.0));
        }
        CHECK(p.threads == 3);
        CHECK(&s.cell(use[1].name, 'A') == &s.cells[2]);
        CHECK_THROWS(s.cell("nope", 'A'));

        const auto dir = std::filesystem::temp_directory_path() / "escalate_test_oc";
        std::filesystem::remove_all(dir);
        write_report(s, dir);
        std::ifstream csv(dir / "oc.csv");
        std::string header;
        std::getline(csv, header);
        CHECK(header ==
              "scenario,procedure,n_replicates,mtd_dose,stopped_early,no_selection,sel_2,sel_4,sel_8,sel_16,"
              "sel_22,sel_28,sel_40,sel_54,sel_70,pcs");
        const auto back = load_report(dir);
        REQUIRE(back.cells.size() == s.cells.size());
        CHECK(back.doses == s.doses);
        for (std::size_t k = 0; k < s.cells.size(); ++k) {
            CHECK(back.cells[k].scenario == s.cells[k].scenario);
            CHECK(back.cells[k].procedure == s.cells[k].procedure);
            CHECK(back.cells[k].mtd_index == s.cells[k].mtd_index);
            for (std::size_t i = 0; i < s.doses.size(); ++i) {
                CHECK(back.cells[k].pct_selecting[i] == doctest::Approx(s.cells[k].pct_selecting[i]));
                CHECK(back.cells[k].mean_patients[i] == doctest::Approx(s.cells[k].mean_patients[i]));
            }
        }
        CHECK(std::filesystem::exists(dir / "plotdata.json"));
        std::filesystem::remove_all(dir);
    }
}
