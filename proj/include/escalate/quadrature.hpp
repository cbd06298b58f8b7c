#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace escalate::quad {

struct GaussLegendreRule {
    std::vector<double> nodes;    // on (-1, 1)
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule; cached per n, thread-safe.
const GaussLegendreRule& gauss_legendre(std::size_t n);

/// Nodes and weights for integrating over the real line through
/// x = scale * atanh(u), u in (-1, 1). Weights include the Jacobian.
struct RealLineRule {
    std::vector<double> x;
    std::vector<double> w;
};
RealLineRule tanh_mapped_rule(std::size_t n, double scale);

struct RefinementOptions {
    std::size_t initial_nodes = 201;
    std::size_t max_nodes = 201 * 16;
    double rel_tol = 1e-6;
    double abs_tol = 1e-30;  // far-tail integrands are below any quantity we use
    double scale = 5.0;
};

/// Integrates f over the real line, doubling the node count until the
/// relative change drops below rel_tol. Throws NumericError otherwise.
double integrate_real_line(const std::function<double(double)>& f,
                           const RefinementOptions& opts = {});

}  // namespace escalate::quad
