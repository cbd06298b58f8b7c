#include "escalate/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace escalate {

namespace {

NelderMeadResult run_once(const std::function<double(const std::vector<double>&)>& f,
                          const std::vector<double>& x0, double step, std::size_t max_evals,
                          double tol) {
    const std::size_t n = x0.size();
    const double dn = static_cast<double>(n);
    const double alpha = 1.0, beta = 1.0 + 2.0 / dn, gamma = 0.75 - 1.0 / (2.0 * dn),
                 delta = 1.0 - 1.0 / dn;

    std::vector<std::vector<double>> simplex(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += step;
    std::vector<double> fv(n + 1);
    std::size_t evals = 0;
    for (std::size_t i = 0; i <= n; ++i) {
        fv[i] = f(simplex[i]);
        ++evals;
    }

    std::vector<std::size_t> order(n + 1);
    std::vector<double> centroid(n), xr(n), xe(n), xc(n);
    bool converged = false;
    while (evals < max_evals) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

        double spread = std::abs(fv[worst] - fv[best]);
        double size = 0.0;
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                size = std::max(size, std::abs(simplex[i][j] - simplex[best][j]));
        if (spread <= tol && size <= std::sqrt(tol)) {
            converged = true;
            break;
        }

        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i <= n; ++i)
            if (i != worst)
                for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / dn;

        for (std::size_t j = 0; j < n; ++j) xr[j] = centroid[j] + alpha * (centroid[j] - simplex[worst][j]);
        const double fr = f(xr);
        ++evals;
        if (fr < fv[best]) {
            for (std::size_t j = 0; j < n; ++j) xe[j] = centroid[j] + beta * (xr[j] - centroid[j]);
            const double fe = f(xe);
            ++evals;
            if (fe < fr) {
                simplex[worst] = xe;
                fv[worst] = fe;
            } else {
                simplex[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            simplex[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        const bool outside = fr < fv[worst];
        for (std::size_t j = 0; j < n; ++j)
            xc[j] = outside ? centroid[j] + gamma * (xr[j] - centroid[j])
                            : centroid[j] - gamma * (centroid[j] - simplex[worst][j]);
        const double fc = f(xc);
        ++evals;
        if (fc < std::min(fr, fv[worst])) {
            simplex[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == best) continue;
            for (std::size_t j = 0; j < n; ++j)
                simplex[i][j] = simplex[best][j] + delta * (simplex[i][j] - simplex[best][j]);
            fv[i] = f(simplex[i]);
            ++evals;
        }
    }
    const auto it = std::min_element(fv.begin(), fv.end());
    return {simplex[static_cast<std::size_t>(it - fv.begin())], *it, evals, converged};
}

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> x0, double step, std::size_t max_evals,
                             double tol) {
    NelderMeadResult best = run_once(f, x0, step, max_evals, tol);
    std::size_t used = best.evaluations;
    double restart_step = step;
    while (used < max_evals) {
        restart_step = std::max(restart_step * 0.5, 1e-3);
        NelderMeadResult next = run_once(f, best.x, restart_step, max_evals - used, tol);
        used += next.evaluations;
        const bool improved = next.value < best.value - tol;
        if (next.value <= best.value) {
            next.evaluations = used;
            best = next;
        }
        if (!improved) break;
    }
    best.evaluations = used;
    return best;
}

}  // namespace escalate
