#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "escalate/config.hpp"

using namespace escalate;

namespace {

template <class T>
T round_trip(const T& v) {
    return json::parse(json(v).dump()).get<T>();
}

std::string field_of(const json& j) {
    try {
        parse_design(j);
    } catch (const FieldError& e) {
        return e.field();
    }
    return "";
}

}  // namespace

TEST_CASE("codecs round trip") {
    const DoseGrid g = round_trip(reference_dose_grid());
    CHECK(g.doses == reference_dose_grid().doses);
    CHECK(g.d_ref == 28.0);

    const AnimalStudy s = round_trip(dog_study());
    REQUIRE(s.arms.size() == 2);
    CHECK(s.arms[1].n_toxic == 17);
    CHECK(s.species_factor == 20.0);

    const BvnRecord r = round_trip(published_dog_prior());
    CHECK(r.params.mu1 == -0.524);
    CHECK(r.params.s22 == 0.001);
    CHECK(r.d_ref == 28.0);

    TrialConfig c;
    c.run_in = true;
    c.start_dose = 2;
    c.lambda_mode = LambdaMode::info_time;
    c.weight_policy = WeightPolicy::fixed;
    c.fixed_weight = 0.25;
    c.utilities = UtilityTable::with_false_alarm_utility(0.2);
    c.grid.nodes = 301;
    const TrialConfig back = round_trip(c);
    CHECK(json(back) == json(c));
    CHECK(back.start_dose == std::optional<std::size_t>(2));
    CHECK(back.utilities.u01 == 0.2);

    const auto sc = scenario_table();
    const Scenario s3 = round_trip(sc[2]);
    CHECK(s3.true_risks == sc[2].true_risks);
    CHECK(s3.mtd_index == sc[2].mtd_index);
}

TEST_CASE("design files") {
    const DesignFile empty = parse_design(json::object());
    CHECK(empty.grid.doses == reference_dose_grid().doses);
    CHECK_FALSE(empty.study);

    const json j = json::parse(R"({
        "animal_study": {"species_factor": 20, "arms": [{"dose": 0.1, "n_toxic": 1, "n_nontoxic": 29},
                                                         {"dose": 2.7, "n_toxic": 17, "n_nontoxic": 13}]},
        "trial": {"max_cohorts": 11, "utilities": {"u00": 1, "u01": 0.6, "u10": 0, "u11": 1}}
    })");
    const DesignFile d = parse_design(j);
    REQUIRE(d.study);
    CHECK(d.trial.max_cohorts == 11);
    CHECK(d.trial.cohort_size == 3);  // defaults survive partial objects
}

TEST_CASE("bad fields are named") {
    CHECK(field_of(json::parse(R"({"grid": {"doses": [2, 4], "d_ref": "x"}})")) == "d_ref");
    CHECK(field_of(json::parse(R"({"grid": {"doses": [4, 2], "d_ref": 4}})")) == "grid");
    CHECK(field_of(json::parse(R"({"trial": {"cohort_size": 0}})")) == "cohort_size");
    CHECK(field_of(json::parse(R"({"trial": {"lambda_mode": "sometimes"}})")) == "lambda_mode");
    CHECK(field_of(json::parse(R"({"trial": {"start_dose_index": 12}})")) == "start_dose_index");
    CHECK(field_of(json::parse(R"({"animal_study": {"species_factor": 20, "arms": []}})")) == "arms");
    CHECK(field_of(json::parse(R"({"animal_study": {"arms": []}})")) == "species_factor");
    CHECK(field_of(json::parse(R"({"informative": {"mu1": 0}})")) == "mu2");
}

TEST_CASE("scenario files") {
    CHECK(parse_scenarios(json::object()).scenarios.size() == 8);
    const json bad = json::parse(R"({"scenarios": [{"name": "x", "true_risks": [0.1, 0.2], "mtd_index": 0}]})");
    CHECK_THROWS_AS(parse_scenarios(bad), FieldError);
}

TEST_CASE("atomic text files") {
    const auto dir = std::filesystem::temp_directory_path() / "escalate_test_config";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto p = dir / "a.json";
    write_text_file_atomic(p, R"({"k": 1})");
    write_text_file_atomic(p, R"({"k": 2})");
    CHECK(read_json_file(p)["k"] == 2);
    int files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
    CHECK(files == 1);  // no temp file left behind
    CHECK_THROWS_AS(read_json_file(dir / "missing.json"), DataError);
    std::ofstream(dir / "broken.json") << "{\"k\": ";
    CHECK_THROWS_AS(read_json_file(dir / "broken.json"), DataError);
    std::filesystem::remove_all(dir);
}
