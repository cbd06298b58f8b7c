#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "escalate/dose_model.hpp"

namespace escalate {

/// U(y = l, eta = s) = u_ls for observation y and prediction eta.
struct UtilityTable {
    double u00 = 1.0;
    double u01 = 0.6;
    double u10 = 0.0;
    double u11 = 1.0;

    /// Scheme with correct predictions worth 1, a missed DLT worth 0 and a
    /// false DLT prediction worth b.
    static UtilityTable with_false_alarm_utility(double b) { return {1.0, b, 0.0, 1.0}; }
    double value(int y, int eta) const;
    void validate() const;
};

/// argmax over eta of the expected utility; ties go to the no-DLT prediction.
int optimal_prediction(double prob_dlt, const UtilityTable& u);

/// Patients per (observed y, predicted eta) at one dose.
struct PredictionCounts {
    std::array<std::array<int, 2>, 2> n{{{0, 0}, {0, 0}}};  // n[y][eta]
    int total() const { return n[0][0] + n[0][1] + n[1][0] + n[1][1]; }
};

struct PredictionRecord {
    std::map<std::size_t, int> prediction;  // frozen eta per administered dose
    std::map<std::size_t, PredictionCounts> counts;
};

PredictionRecord prediction_record(std::span<const CohortOutcome> cohorts);

/// Average utility of the predictions at one dose.
double per_dose_utility(const PredictionRecord& record, std::size_t dose, const UtilityTable& u);

/// Administered doses no more than one level below the current dose.
std::vector<std::size_t> interesting_doses(std::span<const CohortOutcome> cohorts, std::size_t current_dose);

/// Unweighted mean of per-dose utilities over the doses in T.
double kappa(const PredictionRecord& record, std::span<const std::size_t> doses, const UtilityTable& u);

/// sqrt(n_max / n_so_far)
double lambda_info_time(int n_so_far, int n_max);

struct SdRatioInput {
    int prediction = 0;     // frozen eta at the current dose
    double prob_dlt = 0.0;  // posterior modal risk at the current dose
    int n_through_h = 0;    // patients at the dose in cohorts 1..h
    int n_before_h = 0;     // patients at the dose in cohorts 1..h-1
    int cohort_size = 3;
    int cohorts_left = 0;   // H - h
    std::uint64_t seed = 0;
    int reps = 5000;
};

/// Analytic sd of the current mean utility at the dose over the empirical sd
/// of the mean utility at trial end, clamped below at 1.
double lambda_sd_ratio(const SdRatioInput& in, const UtilityTable& u);

/// kappa^lambda
double dynamic_weight(double kappa, double lambda);

struct WeightTraceEntry {
    int cohort = 0;
    double kappa = 1.0;
    double lambda = 1.0;
    double weight = 1.0;
    bool run_in = false;
};
using WeightTrace = std::vector<WeightTraceEntry>;

/// 1-based index of the first cohort with a prediction/outcome disagreement.
std::optional<std::size_t> first_discrepancy(std::span<const CohortOutcome> cohorts);

/// True while the run-in forces w = 0 for the analysis after cohort h (1-based).
bool run_in_active(std::span<const CohortOutcome> cohorts, std::size_t h);

}  // namespace escalate
