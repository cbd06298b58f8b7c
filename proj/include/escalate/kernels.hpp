#pragma once

// Grid posterior kernels. The OpenMP variant parallelises over theta2 rows
// and reduces row partials serially, so both variants are bit-identical.

#include <cstddef>
#include <span>

namespace escalate::kernels {

struct GridView {
    std::size_t n1 = 0;  // nodes along theta1 (contiguous)
    std::size_t n2 = 0;  // rows along theta2
    const double* weights = nullptr;
    const double* log_prior = nullptr;
};

/// Binomial log-likelihood contribution r log p + (n - r) log(1 - p) of one dose.
struct LikelihoodTerm {
    const double* log_p = nullptr;
    const double* log_1mp = nullptr;
    double n_dlt = 0.0;
    double n_no_dlt = 0.0;
};

/// Writes the normalised posterior density (sum of weights * density = 1) and
/// the per-row probability mass; returns log of the integral of prior * likelihood.
double posterior_serial(GridView grid, std::span<const LikelihoodTerm> terms, std::span<double> density,
                        std::span<double> row_mass);
double posterior_omp(GridView grid, std::span<const LikelihoodTerm> terms, std::span<double> density,
                     std::span<double> row_mass);

}  // namespace escalate::kernels
