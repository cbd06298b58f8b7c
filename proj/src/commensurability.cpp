#include "escalate/commensurability.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "escalate/errors.hpp"

namespace escalate {

double UtilityTable::value(int y, int eta) const {
    if (y == 0) return eta == 0 ? u00 : u01;
    return eta == 0 ? u10 : u11;
}

void UtilityTable::validate() const {
    for (double v : {u00, u01, u10, u11})
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("utilities must lie in [0,1]");
}

int optimal_prediction(double prob_dlt, const UtilityTable& u) {
    if (!(prob_dlt >= 0.0 && prob_dlt <= 1.0)) throw DomainError("probability must lie in [0,1]");
    const double eu0 = u.u00 * (1.0 - prob_dlt) + u.u10 * prob_dlt;
    const double eu1 = u.u01 * (1.0 - prob_dlt) + u.u11 * prob_dlt;
    return eu1 > eu0 ? 1 : 0;
}

PredictionRecord prediction_record(std::span<const CohortOutcome> cohorts) {
    PredictionRecord rec;
    for (const auto& c : cohorts) {
        if (c.outcomes.size() != std::size_t(c.n_patients) || c.predictions.size() != std::size_t(c.n_patients))
            throw DataError("cohort needs one outcome and one prediction per patient");
        auto& counts = rec.counts[c.dose_index];
        for (int k = 0; k < c.n_patients; ++k) {
            const int y = c.outcomes[k], eta = c.predictions[k];
            if ((y != 0 && y != 1) || (eta != 0 && eta != 1)) throw DataError("outcomes and predictions are binary");
            if (eta != c.predictions.front()) throw DataError("predictions differ within a cohort");
            auto [it, inserted] = rec.prediction.emplace(c.dose_index, eta);
            if (!inserted && it->second != eta) throw DataError("prediction changed for an administered dose");
            ++counts.n[y][eta];
        }
    }
    return rec;
}

double per_dose_utility(const PredictionRecord& record, std::size_t dose, const UtilityTable& u) {
    const auto it = record.counts.find(dose);
    if (it == record.counts.end() || it->second.total() == 0)
        throw DomainError("per-dose utility is undefined for a dose without patients");
    double num = 0.0;
    for (int y = 0; y < 2; ++y)
        for (int eta = 0; eta < 2; ++eta) num += u.value(y, eta) * it->second.n[y][eta];
    return num / it->second.total();
}

std::vector<std::size_t> interesting_doses(std::span<const CohortOutcome> cohorts, std::size_t current_dose) {
    std::set<std::size_t> administered;
    for (const auto& c : cohorts)
        if (c.n_patients > 0) administered.insert(c.dose_index);
    const std::size_t floor = current_dose == 0 ? 0 : current_dose - 1;
    std::vector<std::size_t> out;
    for (std::size_t d : administered)
        if (d >= floor) out.push_back(d);
    return out;
}

double kappa(const PredictionRecord& record, std::span<const std::size_t> doses, const UtilityTable& u) {
    if (doses.empty()) throw DomainError("kappa needs a non-empty dose set");
    double s = 0.0;
    for (std::size_t d : doses) s += per_dose_utility(record, d, u);
    return s / double(doses.size());
}

double lambda_info_time(int n_so_far, int n_max) {
    if (n_so_far <= 0 || n_so_far > n_max) throw DomainError("need 0 < n_so_far <= n_max");
    return std::sqrt(double(n_max) / double(n_so_far));
}

double lambda_sd_ratio(const SdRatioInput& in, const UtilityTable& u) {
    if (in.n_through_h <= 0) throw DomainError("current dose has no patients");
    if (in.cohorts_left < 0 || in.cohort_size <= 0 || in.reps < 2) throw DomainError("invalid sd-ratio input");
    if (in.cohorts_left == 0) return 1.0;
    const double p = in.prob_dlt;
    if (!(p > 0.0 && p < 1.0)) return 1.0;

    const double u_ok = u.value(0, in.prediction), u_dlt = u.value(1, in.prediction);
    const double spread = std::abs(u_dlt - u_ok);
    if (spread == 0.0) return 1.0;
    const double sd_now = spread * std::sqrt(p * (1.0 - p) / in.n_through_h);

    const int n_end = in.n_before_h + in.cohort_size * (in.cohorts_left + 1);
    std::mt19937_64 rng(in.seed);
    std::binomial_distribution<int> draws(n_end, p);
    double mean = 0.0, m2 = 0.0;
    for (int k = 1; k <= in.reps; ++k) {
        const int dlt = draws(rng);
        const double c = (u_dlt * dlt + u_ok * (n_end - dlt)) / n_end;
        const double d = c - mean;
        mean += d / k;
        m2 += d * (c - mean);
    }
    const double sd_end = std::sqrt(m2 / (in.reps - 1));
    if (!(sd_end > 0.0)) return 1.0;
    return std::max(1.0, sd_now / sd_end);
}

double dynamic_weight(double kappa, double lambda) {
    if (!(kappa >= 0.0 && kappa <= 1.0)) throw DomainError("kappa must lie in [0,1]");
    if (!(lambda >= 1.0)) throw DomainError("lambda must be at least 1");
    return std::pow(kappa, lambda);
}

std::optional<std::size_t> first_discrepancy(std::span<const CohortOutcome> cohorts) {
    for (std::size_t h = 0; h < cohorts.size(); ++h) {
        const auto& c = cohorts[h];
        for (std::size_t k = 0; k < c.outcomes.size(); ++k)
            if (c.outcomes[k] != c.predictions[k]) return h + 1;
    }
    return std::nullopt;
}

bool run_in_active(std::span<const CohortOutcome> cohorts, std::size_t h) {
    const auto first = first_discrepancy(cohorts.first(std::min(h, cohorts.size())));
    return !first || h <= *first;
}

}  // namespace escalate
