#include "escalate/quadrature.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include <boost/math/constants/constants.hpp>

#include "escalate/errors.hpp"

namespace escalate::quad {

namespace {

// Legendre P_n and its derivative by the three-term recurrence.
void legendre(std::size_t n, double x, double& p, double& dp) {
    double p0 = 1.0, p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = pk;
    }
    p = p1;
    dp = n * (x * p1 - p0) / (x * x - 1.0);
}

GaussLegendreRule build_rule(std::size_t n) {
    const double pi = boost::math::constants::pi<double>();
    GaussLegendreRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        double p = 0.0, dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            legendre(n, x, p, dp);
            const double dx = p / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        legendre(n, x, p, dp);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    return rule;
}

}  // namespace

const GaussLegendreRule& gauss_legendre(std::size_t n) {
    static std::mutex mu;
    static std::map<std::size_t, std::unique_ptr<GaussLegendreRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<GaussLegendreRule>(build_rule(n));
    return *slot;
}

RealLineRule tanh_mapped_rule(std::size_t n, double scale) {
    const auto& gl = gauss_legendre(n);
    RealLineRule r;
    r.x.resize(n);
    r.w.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = gl.nodes[i];
        r.x[i] = scale * std::atanh(u);
        r.w[i] = gl.weights[i] * scale / (1.0 - u * u);
    }
    return r;
}

double integrate_real_line(const std::function<double(double)>& f, const RefinementOptions& opts) {
    auto eval = [&](std::size_t n) {
        const auto rule = tanh_mapped_rule(n, opts.scale);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += rule.w[i] * f(rule.x[i]);
        return s;
    };
    std::size_t n = opts.initial_nodes;
    double prev = eval(n);
    while (n * 2 <= opts.max_nodes) {
        n *= 2;
        const double cur = eval(n);
        const double denom = std::max(std::abs(cur), 1e-300);
        if (std::abs(cur - prev) <= opts.rel_tol * denom + opts.abs_tol) return cur;
        prev = cur;
    }
    throw NumericError("real-line quadrature did not converge");
}

}  // namespace escalate::quad
