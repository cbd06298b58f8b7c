#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "escalate/trial_engine.hpp"

namespace escalate {

/// A: dynamic weight; B: dynamic with run-in; C: w = 0.5; D: w = 1; E: w = 0.
struct ProcedureSpec {
    char id = 'A';
    WeightPolicy weight_policy = WeightPolicy::dynamic;
    double fixed_weight = 1.0;
    bool run_in = false;
    LambdaMode lambda_mode = LambdaMode::sd_ratio;
    UtilityTable utilities = UtilityTable::with_false_alarm_utility(0.6);

    static ProcedureSpec standard(char id, double u01 = 0.6);
    TrialConfig configure(TrialConfig base) const;
};

std::vector<ProcedureSpec> parse_procedures(const std::string& csv, double u01 = 0.6);

struct StudyDesign {
    DoseGrid grid;
    BvnParams informative;
    BvnParams weak;
    TrialConfig base;  // cohort size, H, start dose, ...
};

/// Design used by the published simulation study: dog prior, 7 cohorts of 3.
StudyDesign reference_study_design();

struct TrialResult {
    TrialState state;
    std::optional<std::size_t> mtd;
};

/// One trial with Bernoulli(true risk) outcomes drawn from a stream seeded by `seed`.
TrialResult simulate_trial(const TrialEngine& engine, const Scenario& scenario, std::uint64_t seed);

/// Operating characteristics of one procedure under one scenario.
struct OcCell {
    std::string scenario;
    char procedure = 'A';
    std::size_t mtd_index = 0;
    int n_replicates = 0;
    double pct_stopped_early = 0.0;
    double pct_no_selection = 0.0;        // completed without an eligible dose
    std::vector<double> pct_selecting;    // per dose
    std::vector<double> mean_patients;    // per dose
    double pct_correct() const { return pct_selecting.at(mtd_index); }
};

struct OperatingCharacteristics {
    std::vector<double> doses;
    std::vector<OcCell> cells;
    double seconds = 0.0;
    int threads = 1;

    const OcCell& cell(const std::string& scenario, char procedure) const;
};

struct Parallelism {
    bool parallel = true;
    int threads = 0;  // 0 = OpenMP default
};

/// Replicate r of scenario s uses seed derive_seed(master, {s, r}) for every
/// procedure, so procedures are compared on common outcome streams and the
/// result does not depend on the thread count.
OperatingCharacteristics run_study(const StudyDesign& design, const std::vector<Scenario>& scenarios,
                                   const std::vector<ProcedureSpec>& procedures, int n_replicates,
                                   std::uint64_t master_seed, Parallelism par = {});

/// oc.csv (selection percentages), alloc.csv (mean patients), plotdata.json.
void write_report(const OperatingCharacteristics& oc, const std::filesystem::path& dir);
OperatingCharacteristics load_report(const std::filesystem::path& dir);

}  // namespace escalate
