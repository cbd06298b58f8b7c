#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "escalate/config.hpp"
#include "escalate/trial_engine.hpp"

using namespace escalate;

namespace {

const DoseGrid& grid() {
    static const DoseGrid g = reference_dose_grid();
    return g;
}

TrialEngine make_engine(int max_cohorts = 7, TrialConfig c = {}) {
    c.max_cohorts = max_cohorts;
    return TrialEngine(grid(), published_dog_prior().params, weakly_informative_prior(grid()), c);
}

std::size_t at(double dose) { return grid().index_of(dose); }

// Replay a fixed sequence of (dose, outcomes), overriding the recommendation where needed.
TrialState replay(const TrialEngine& e, const std::vector<std::pair<double, std::vector<int>>>& path,
                  std::uint64_t seed = 42) {
    TrialState s = e.start(seed);
    for (const auto& [d, y] : path) e.record_cohort(s, at(d), y, true);
    return s;
}

}  // namespace

TEST_CASE("prior gate and start dose") {
    const auto e = make_engine();
    const auto prior = mixture_posterior(e.prior_belief(1.0), {});
    // Animal prior: Pr(p < 0.1) at 4 mg/m^2 is about 0.83; 8 fails the 0.8 requirement.
    CHECK(prior.risk_cdf(at(4), 0.1) == doctest::Approx(0.833).epsilon(0.01));
    CHECK(prior.risk_cdf(at(8), 0.1) < 0.8);
    const TrialState s = e.start(1);
    CHECK(*s.next_dose == at(4));

    const auto r = overdose_control(prior, grid(), 0.33, 0.25, std::nullopt, 2.0);
    CHECK(*r.highest_safe == at(16));
    CHECK(r.prob_overdose[at(16)] <= 0.25);
    CHECK(r.prob_overdose[at(22)] > 0.25);
}

TEST_CASE("frozen predictions from the animal prior") {
    const TrialState s = make_engine().start(1);
    CHECK(s.predictions == std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1, 1});
    TrialConfig c;
    c.utilities = UtilityTable::with_false_alarm_utility(0.2);
    const TrialState s2 = make_engine(7, c).start(1);
    CHECK(s2.predictions == std::vector<int>{0, 0, 0, 0, 0, 0, 1, 1, 1});
}

TEST_CASE("escalation is capped at twice the current dose") {
    auto no_dlt_path = [](const TrialEngine& e) {
        TrialState s = e.start(3);
        std::vector<double> path;
        while (s.status == TrialStatus::enrolling) {
            const std::size_t d = *s.next_dose;
            path.push_back(grid().doses[d]);
            e.record_cohort(s, d, {0, 0, 0});
            if (s.next_dose) CHECK(grid().doses[*s.next_dose] <= 2.0 * grid().doses[d]);
        }
        CHECK(s.status == TrialStatus::completed);
        CHECK(s.cohorts_done() == 7);
        CHECK(e.select_mtd(s).has_value());
        return path;
    };
    no_dlt_path(make_engine());
    // With only the weak component every dose soon looks safe, so the path is the
    // largest one the cap allows.
    TrialConfig c;
    c.weight_policy = WeightPolicy::fixed;
    c.fixed_weight = 0.0;
    CHECK(no_dlt_path(make_engine(7, c)) == std::vector<double>{4, 8, 16, 28, 54, 70, 70});
}

TEST_CASE("de-escalation is not capped") {
    const auto e = make_engine();
    const TrialState s = replay(e, {{4, {0, 0, 0}}, {8, {0, 0, 0}}, {16, {1, 1, 1}}});
    REQUIRE(s.next_dose);
    CHECK(*s.next_dose < at(16));
}

TEST_CASE("dynamic weight waypoints of the two data examples") {
    const auto e = make_engine(11);
    SUBCASE("conflicting data pull the weight down") {
        const TrialState s = replay(e, {{4, {1, 0, 0}}, {2, {0, 0, 0}}, {4, {0, 0, 0}}, {8, {1, 1, 1}}});
        REQUIRE(s.trace.size() == 4);
        CHECK(s.trace[0].weight == doctest::Approx(0.26).epsilon(0.05 / 0.26));
        CHECK(s.trace[3].weight == doctest::Approx(0.08).epsilon(0.05 / 0.08));
    }
    SUBCASE("agreeing data keep it up until the prediction turns") {
        const TrialState s = replay(e, {{4, {0, 0, 0}}, {8, {0, 0, 0}}, {16, {0, 0, 0}}, {22, {0, 0, 0}}, {28, {0, 0, 0}}});
        REQUIRE(s.trace.size() == 5);
        CHECK(s.trace[0].weight == 1.0);
        CHECK(s.trace[2].weight == 1.0);
        CHECK(s.trace[3].weight == doctest::Approx(0.533).epsilon(0.07 / 0.533));
        CHECK(s.trace[4].weight == doctest::Approx(0.25).epsilon(0.07 / 0.25));
    }
}

TEST_CASE("run-in and fixed weights") {
    TrialConfig c;
    c.run_in = true;
    const auto e = make_engine(7, c);
    const TrialState s = replay(e, {{4, {0, 0, 0}}, {8, {0, 1, 0}}, {8, {0, 0, 0}}});
    CHECK(s.trace[0].weight == 0.0);
    CHECK(s.trace[0].run_in);
    CHECK(s.trace[1].weight == 0.0);
    CHECK_FALSE(s.trace[2].run_in);
    CHECK(s.trace[2].weight > 0.0);

    TrialConfig f;
    f.weight_policy = WeightPolicy::fixed;
    f.fixed_weight = 0.5;
    const TrialState t = replay(make_engine(7, f), {{4, {1, 0, 0}}, {2, {0, 0, 0}}});
    for (const auto& w : t.trace) CHECK(w.weight == 0.5);
}

TEST_CASE("replay is deterministic") {
    const auto e = make_engine();
    const std::vector<std::pair<double, std::vector<int>>> path{{4, {0, 1, 0}}, {4, {0, 0, 0}}, {8, {0, 0, 1}}};
    const TrialState a = replay(e, path, 5), b = replay(make_engine(), path, 5);
    CHECK(save_session(a) == save_session(b));
    const TrialState c = replay(e, path, 6);
    CHECK(c.history.size() == a.history.size());
}

TEST_CASE("safe doses form a lower set") {
    const auto e = make_engine();
    const std::vector<std::vector<std::pair<double, std::vector<int>>>> paths{
        {}, {{4, {1, 1, 0}}}, {{4, {0, 0, 0}}, {8, {0, 0, 0}}, {16, {0, 1, 1}}}, {{4, {0, 0, 0}}, {8, {1, 0, 0}}}};
    for (const auto& p : paths) {
        const TrialState s = replay(e, p);
        const auto post = e.posterior(s);
        for (std::size_t i = 1; i < grid().size(); ++i) {
            CHECK(post.prob_overdose(i, 0.33) >= post.prob_overdose(i - 1, 0.33));
            if (post.prob_overdose(i - 1, 0.33) > 0.25) CHECK(post.prob_overdose(i, 0.33) > 0.25);
        }
    }
}

TEST_CASE("closest eligible dose") {
    CHECK(closest_eligible_dose({0.05, 0.20, 0.31}, {true, true, true}, 0.25) == std::optional<std::size_t>(1));
    CHECK(closest_eligible_dose({0.05, 0.20, 0.26}, {true, true, false}, 0.25) == std::optional<std::size_t>(1));
    CHECK(closest_eligible_dose({0.125, 0.375}, {true, true}, 0.25) == std::optional<std::size_t>(0));
    CHECK_FALSE(closest_eligible_dose({0.1, 0.2}, {false, false}, 0.25));
}

TEST_CASE("stopping for toxicity at the lowest dose") {
    TrialConfig c;
    c.start_dose = 0;
    const auto e = make_engine(7, c);
    TrialState s = e.start(1);
    int guard = 0;
    while (s.status == TrialStatus::enrolling && guard++ < 7) e.record_cohort(s, *s.next_dose, {1, 1, 1});
    CHECK(s.status == TrialStatus::stopped_early);
    CHECK_FALSE(s.next_dose);
    CHECK_FALSE(e.select_mtd(s));
    CHECK_THROWS_AS(e.recommend_next(s), StateError);
    CHECK_THROWS_AS(e.record_cohort(s, 0, {0, 0, 0}), StateError);
}

TEST_CASE("cohort entry errors") {
    const auto e = make_engine();
    TrialState s = e.start(1);
    CHECK_THROWS_AS(e.select_mtd(s), StateError);
    CHECK_THROWS_AS(e.record_cohort(s, at(8), {0, 0, 0}), ProtocolError);
    CHECK_THROWS_AS(e.record_cohort(s, at(4), {0, 0}), FieldError);
    CHECK_THROWS_AS(e.record_cohort(s, at(4), {0, 2, 0}), FieldError);
    CHECK_THROWS_AS(e.record_cohort(s, 9, {0, 0, 0}), FieldError);
    CHECK(s.history.empty());  // failures leave the state untouched

    e.record_cohort(s, at(8), {0, 0, 0}, true);
    int overrides = 0;
    for (const auto& a : s.audit) overrides += a.action == "override";
    CHECK(overrides == 1);
}

TEST_CASE("config validation names the field") {
    TrialConfig c;
    c.cohort_size = 0;
    try {
        c.validate(grid());
        FAIL("expected FieldError");
    } catch (const FieldError& e) {
        CHECK(e.field() == "cohort_size");
    }
}

TEST_CASE("session documents") {
    const auto e = make_engine();
    const TrialState s = replay(e, {{4, {0, 0, 0}}, {8, {0, 1, 0}}});
    const std::string doc = save_session(s);
    const TrialState back = load_session(doc);
    CHECK(save_session(back) == doc);
    CHECK(back.trace.size() == 2);
    CHECK(back.modal_theta.theta1 == s.modal_theta.theta1);

    // A resumed trial continues exactly as the original.
    TrialState a = s, b = back;
    const auto eb = TrialEngine::for_state(back);
    e.record_cohort(a, *a.next_dose, {0, 0, 0});
    eb.record_cohort(b, *b.next_dose, {0, 0, 0});
    CHECK(save_session(a) == save_session(b));

    CHECK_THROWS_AS(load_session(doc.substr(0, doc.size() / 2)), DataError);
    CHECK_THROWS_AS(load_session("{}"), MigrationError);
    json j = json::parse(doc);
    j["schema_version"] = kSessionSchemaVersion + 1;
    CHECK_THROWS_AS(load_session(j.dump()), MigrationError);

    const auto dir = std::filesystem::temp_directory_path() / "escalate_test_session";
    std::filesystem::create_directories(dir);
    const auto path = dir / "trial.json";
    write_session_file(path, s);
    CHECK(save_session(read_session_file(path)) == doc);
    std::filesystem::remove_all(dir);
}
