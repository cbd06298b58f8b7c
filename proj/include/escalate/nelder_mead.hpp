#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace escalate {

struct NelderMeadResult {
    std::vector<double> x;
    double value = 0.0;
    std::size_t evaluations = 0;
    bool converged = false;
};

/// Unconstrained Nelder-Mead with adaptive coefficients (Gao & Han) and
/// restarts from the incumbent until a restart no longer improves.
NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> x0, double step, std::size_t max_evals,
                             double tol);

}  // namespace escalate
