#include "escalate/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "escalate/errors.hpp"

namespace escalate::kernels {

namespace {

void check_sizes(GridView g, std::span<double> density, std::span<double> row_mass) {
    if (density.size() != g.n1 * g.n2 || row_mass.size() != g.n2)
        throw DomainError("kernel output spans do not match the grid");
}

// Log posterior (up to a constant) for one row; returns the row maximum.
inline double fill_row_log(GridView g, std::span<const LikelihoodTerm> terms, std::size_t r, double* out) {
    const std::size_t off = r * g.n1;
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < g.n1; ++c) {
        double v = g.log_prior[off + c];
        for (const auto& t : terms) {
            if (t.n_dlt > 0.0) v += t.n_dlt * t.log_p[off + c];
            if (t.n_no_dlt > 0.0) v += t.n_no_dlt * t.log_1mp[off + c];
        }
        out[off + c] = v;
        row_max = std::max(row_max, v);
    }
    return row_max;
}

inline double exp_row(GridView g, std::size_t r, double shift, double* out) {
    const std::size_t off = r * g.n1;
    double s = 0.0;
    for (std::size_t c = 0; c < g.n1; ++c) {
        const double e = std::exp(out[off + c] - shift);
        out[off + c] = e;
        s += g.weights[off + c] * e;
    }
    return s;
}

double finish(GridView g, double shift, std::span<double> density, std::span<double> row_mass) {
    double total = 0.0;
    for (std::size_t r = 0; r < g.n2; ++r) total += row_mass[r];
    if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("posterior integral is not positive");
    const double inv = 1.0 / total;
    for (auto& d : density) d *= inv;
    for (auto& m : row_mass) m *= inv;
    return shift + std::log(total);
}

}  // namespace

double posterior_serial(GridView g, std::span<const LikelihoodTerm> terms, std::span<double> density,
                        std::span<double> row_mass) {
    check_sizes(g, density, row_mass);
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < g.n2; ++r) shift = std::max(shift, fill_row_log(g, terms, r, density.data()));
    if (!std::isfinite(shift)) throw NumericError("posterior is zero on the whole grid");
    for (std::size_t r = 0; r < g.n2; ++r) row_mass[r] = exp_row(g, r, shift, density.data());
    return finish(g, shift, density, row_mass);
}

double posterior_omp(GridView g, std::span<const LikelihoodTerm> terms, std::span<double> density,
                     std::span<double> row_mass) {
    check_sizes(g, density, row_mass);
    std::vector<double> row_max(g.n2);
    const auto n2 = static_cast<long>(g.n2);
#pragma omp parallel for schedule(static)
    for (long r = 0; r < n2; ++r) row_max[r] = fill_row_log(g, terms, std::size_t(r), density.data());
    const double shift = *std::max_element(row_max.begin(), row_max.end());
    if (!std::isfinite(shift)) throw NumericError("posterior is zero on the whole grid");
#pragma omp parallel for schedule(static)
    for (long r = 0; r < n2; ++r) row_mass[r] = exp_row(g, std::size_t(r), shift, density.data());
    return finish(g, shift, density, row_mass);
}

}  // namespace escalate::kernels
