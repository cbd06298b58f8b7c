#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "escalate/animal_prior.hpp"
#include "escalate/commensurability.hpp"
#include "escalate/dose_model.hpp"
#include "escalate/inference.hpp"

namespace escalate {

enum class TrialStatus { enrolling, stopped_early, completed };
enum class LambdaMode { info_time, sd_ratio };
enum class WeightPolicy { dynamic, fixed };

struct TrialConfig {
    int cohort_size = 3;
    int max_cohorts = 7;
    UtilityTable utilities = UtilityTable::with_false_alarm_utility(0.6);
    LambdaMode lambda_mode = LambdaMode::sd_ratio;
    WeightPolicy weight_policy = WeightPolicy::dynamic;
    double fixed_weight = 1.0;  // used when weight_policy == fixed
    bool run_in = false;
    double feasibility_bound = 0.25;
    double overdose_cut = kOverdoseCut;
    double max_escalation_factor = 2.0;
    // Cohort 1 dose. When unset: the highest dose whose animal prior gives
    // Pr(p < start_safe_risk) >= start_safe_prob, else the lowest dose.
    std::optional<std::size_t> start_dose;
    double start_safe_risk = 0.1;
    double start_safe_prob = 0.8;
    // Both components are used as N(mu, factor * Sigma).
    double cov_inflation = 2.0;
    int lambda_reps = 5000;
    GridOptions grid;

    void validate(const DoseGrid& doses) const;
};

struct AuditEntry {
    int seq = 0;
    std::string action;
    std::string detail;
};

/// Everything needed to resume a trial. Posteriors are not stored; they are
/// recomputed from history and the traced weights.
struct TrialState {
    DoseGrid grid;
    BvnParams informative;  // as fitted, before inflation
    BvnParams weak;
    TrialConfig config;
    std::uint64_t seed = 0;

    TrialStatus status = TrialStatus::enrolling;
    std::vector<CohortOutcome> history;
    WeightTrace trace;
    std::vector<double> prior_predictive;  // w = 1 animal prior mean risk per dose
    std::vector<int> predictions;          // frozen optimal prediction per dose
    ThetaPoint modal_theta;                // joint posterior mode after the last analysis
    std::optional<std::size_t> next_dose;  // empty once the trial has ended
    std::vector<AuditEntry> audit;

    int cohorts_done() const { return int(history.size()); }
    double current_weight() const;  // w used by the latest analysis (prior weight before any data)
};

struct Recommendation {
    std::optional<std::size_t> dose;  // empty means stop
    bool stop = false;
    std::vector<double> prob_overdose;  // Pr(p_i >= overdose_cut) per dose
    std::optional<std::size_t> highest_safe;
};

/// Overdose-control rule on any posterior: highest dose with
/// Pr(p >= cut) <= bound, capped by factor * current dose when escalating.
Recommendation overdose_control(const MixtureBelief& posterior, const DoseGrid& grid, double cut, double bound,
                                std::optional<std::size_t> current, double max_escalation_factor);

/// Eligible dose whose median risk is closest to gamma; ties go to the lower dose.
std::optional<std::size_t> closest_eligible_dose(const std::vector<double>& medians, const std::vector<bool>& eligible,
                                                 double gamma);

/// Component models are immutable and shared between all trials of a design.
class TrialEngine {
public:
    TrialEngine(DoseGrid grid, BvnParams informative, BvnParams weak, TrialConfig config);

    /// Engine matching a saved state's design.
    static TrialEngine for_state(const TrialState& state);

    const DoseGrid& grid() const { return grid_; }
    const TrialConfig& config() const { return config_; }
    MixtureBelief prior_belief(double weight) const;

    TrialState start(std::uint64_t seed) const;

    /// Posterior given the state's data and its latest weight.
    MixtureBelief posterior(const TrialState& s) const;
    PosteriorSummary summary(const TrialState& s) const;

    Recommendation recommend_next(const TrialState& s) const;

    /// Append a cohort. Outside an override, the dose must equal the standing
    /// recommendation. Overrides are recorded in the audit log.
    void record_cohort(TrialState& s, std::size_t dose, const std::vector<int>& outcomes,
                       bool override_dose = false) const;

    std::optional<std::size_t> select_mtd(const TrialState& s) const;

private:
    WeightTraceEntry analysis_weight(const TrialState& s, std::size_t dose) const;

    DoseGrid grid_;
    BvnParams informative_, weak_;
    TrialConfig config_;
    std::shared_ptr<const ComponentModel> model_inf_, model_weak_;
    MixtureBelief animal_prior_;  // w = 1, no data
    std::vector<double> prior_predictive_;
    std::vector<int> predictions_;
    std::size_t start_dose_ = 0;
};

inline constexpr int kSessionSchemaVersion = 1;

std::string save_session(const TrialState& s);
TrialState load_session(const std::string& document);

/// Atomic replace via write to a sibling temp file, fsync and rename.
void write_session_file(const std::filesystem::path& path, const TrialState& s);
TrialState read_session_file(const std::filesystem::path& path);

const char* to_string(TrialStatus s);

}  // namespace escalate
