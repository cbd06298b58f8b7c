#include "escalate/dose_model.hpp"

#include <cmath>
#include <sstream>

#include "escalate/errors.hpp"

namespace escalate {

void DoseGrid::validate() const {
    if (doses.empty()) throw DataError("dose grid is empty");
    for (std::size_t i = 0; i < doses.size(); ++i) {
        if (!(doses[i] > 0.0)) throw DataError("doses must be positive");
        if (i > 0 && !(doses[i] > doses[i - 1]))
            throw DataError("doses must be strictly increasing");
    }
    if (!(d_ref > 0.0)) throw DataError("d_ref must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw DataError("gamma must lie in (0,1)");
}

std::size_t DoseGrid::index_of(double dose) const {
    for (std::size_t i = 0; i < doses.size(); ++i)
        if (std::abs(doses[i] - dose) <= 1e-9 * doses[i]) return i;
    std::ostringstream os;
    os << "dose " << dose << " is not on the grid";
    throw DomainError(os.str());
}

double expit(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_expit(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

double dlt_log_odds(const ThetaPoint& theta, double dose, double d_ref) {
    if (!(dose > 0.0) || !(d_ref > 0.0)) throw DomainError("dose and d_ref must be positive");
    return theta.theta1 + std::exp(theta.theta2) * std::log(dose / d_ref);
}

double dlt_risk(const ThetaPoint& theta, double dose, double d_ref) {
    return expit(dlt_log_odds(theta, dose, d_ref));
}

DoseGrid reference_dose_grid() {
    return DoseGrid{{2, 4, 8, 16, 22, 28, 40, 54, 70}, 28.0, 0.25};
}

std::size_t closest_to_target(const std::vector<double>& risks, double gamma) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < risks.size(); ++i)
        if (std::abs(risks[i] - gamma) < std::abs(risks[best] - gamma)) best = i;
    return best;
}

std::vector<Scenario> scenario_table() {
    const std::vector<std::vector<double>> rows = {
        {0.11, 0.25, 0.35, 0.41, 0.47, 0.52, 0.58, 0.63, 0.70},
        {0.08, 0.16, 0.25, 0.35, 0.42, 0.45, 0.53, 0.60, 0.70},
        {0.02, 0.05, 0.14, 0.25, 0.35, 0.42, 0.51, 0.60, 0.68},
        {0.03, 0.05, 0.10, 0.16, 0.25, 0.32, 0.40, 0.48, 0.55},
        {0.001, 0.005, 0.03, 0.10, 0.16, 0.25, 0.38, 0.50, 0.60},
        {0.01, 0.02, 0.05, 0.08, 0.11, 0.14, 0.25, 0.37, 0.47},
        {0.35, 0.42, 0.60, 0.75, 0.82, 0.88, 0.91, 0.94, 0.97},
        {0.001, 0.005, 0.01, 0.02, 0.04, 0.05, 0.10, 0.16, 0.25},
    };
    std::vector<Scenario> out;
    out.reserve(rows.size());
    for (std::size_t s = 0; s < rows.size(); ++s)
        out.push_back({"Scenario " + std::to_string(s + 1), rows[s], closest_to_target(rows[s], 0.25)});
    return out;
}

}  // namespace escalate
