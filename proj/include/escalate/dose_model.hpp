#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace escalate {

/// Ordered candidate doses (mg/m^2) with the model reference dose and target risk.
struct DoseGrid {
    std::vector<double> doses;
    double d_ref = 0.0;
    double gamma = 0.25;

    std::size_t size() const { return doses.size(); }
    /// Throws DataError when the invariants do not hold.
    void validate() const;
    /// Index of an exact grid dose; throws DomainError if absent.
    std::size_t index_of(double dose) const;
};

/// (theta1, theta2): log-odds at d_ref and log of the slope.
struct ThetaPoint {
    double theta1 = 0.0;
    double theta2 = 0.0;
};

struct Scenario {
    std::string name;
    std::vector<double> true_risks;
    std::size_t mtd_index = 0;
};

struct CohortOutcome {
    std::size_t dose_index = 0;
    int n_patients = 0;
    int n_dlt = 0;
    std::vector<int> outcomes;     // per patient, 1 = DLT
    std::vector<int> predictions;  // per patient, identical within the cohort
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }
double expit(double x);
double log_expit(double x);  // log(expit(x)) without underflow

/// Linear predictor theta1 + exp(theta2) * log(dose / d_ref).
double dlt_log_odds(const ThetaPoint& theta, double dose, double d_ref);
double dlt_risk(const ThetaPoint& theta, double dose, double d_ref);

/// The nine-dose AUY922 grid {2,...,70} with d_ref 28 and target 0.25.
DoseGrid reference_dose_grid();

/// Index of the risk closest to gamma (ties to the lower dose).
std::size_t closest_to_target(const std::vector<double>& risks, double gamma);

/// The eight human toxicity scenarios on the reference grid.
std::vector<Scenario> scenario_table();

}  // namespace escalate
