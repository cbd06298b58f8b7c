#include "escalate/animal_prior.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "escalate/nelder_mead.hpp"
#include "escalate/quadrature.hpp"

namespace escalate {

void AnimalStudy::validate() const {
    if (!(species_factor > 0.0)) throw DataError("species_factor must be positive");
    if (arms.size() < 2) throw DataError("animal study needs at least two arms");
    std::vector<AnimalArm> sorted = arms;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.dose < b.dose; });
    for (std::size_t j = 0; j < sorted.size(); ++j) {
        const auto& a = sorted[j];
        if (!(a.dose > 0.0)) throw DataError("animal doses must be positive");
        if (j > 0 && a.dose == sorted[j - 1].dose) throw DataError("animal doses must be distinct");
        if (a.n_toxic < 0 || a.n_nontoxic < 0) throw DataError("animal counts must be non-negative");
        if (a.n_toxic == 0 || a.n_nontoxic == 0) {
            std::ostringstream os;
            os << "improper beta prior: arm at " << a.dose
               << " mg/kg needs at least one toxic and one non-toxic animal";
            throw DataError(os.str());
        }
        if (j > 0) {
            const auto& lo = sorted[j - 1];
            const double r_lo = double(lo.n_toxic) / (lo.n_toxic + lo.n_nontoxic);
            const double r_hi = double(a.n_toxic) / (a.n_toxic + a.n_nontoxic);
            if (r_lo > r_hi) throw DataError("crude toxicity rate decreases with animal dose");
        }
    }
}

double BvnParams::sd1() const { return std::sqrt(s11); }
double BvnParams::sd2() const { return std::sqrt(s22); }
double BvnParams::correlation() const { return s12 / std::sqrt(s11 * s22); }
bool BvnParams::positive_definite() const {
    return std::isfinite(mu1) && std::isfinite(mu2) && s11 > 0.0 && s22 > 0.0 && s11 * s22 - s12 * s12 > 0.0;
}
BvnParams BvnParams::inflated(double factor) const {
    return {mu1, mu2, s11 * factor, s12 * factor, s22 * factor};
}

void PercentileTable::validate() const {
    if (levels.size() < 3) throw DataError("percentile table needs at least three levels");
    if (doses.size() != values.size()) throw DataError("percentile table rows do not match doses");
    for (std::size_t k = 0; k < levels.size(); ++k) {
        if (!(levels[k] > 0.0 && levels[k] < 1.0)) throw DataError("percentile levels must lie in (0,1)");
        if (k > 0 && !(levels[k] > levels[k - 1])) throw DataError("percentile levels must increase");
    }
    for (const auto& row : values) {
        if (row.size() != levels.size()) throw DataError("percentile row has the wrong length");
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (!(row[k] > 0.0 && row[k] < 1.0)) throw DataError("percentiles must lie in (0,1)");
            if (k > 0 && !(row[k] > row[k - 1])) throw DataError("percentiles must increase with level");
        }
    }
}

double allometric_scale(double animal_dose, double species_factor) {
    if (!(animal_dose > 0.0) || !(species_factor > 0.0))
        throw DomainError("animal dose and species factor must be positive");
    return animal_dose * species_factor;
}

std::vector<BetaArm> beta_pseudo_priors(const AnimalStudy& study) {
    study.validate();
    std::vector<BetaArm> out;
    out.reserve(study.arms.size());
    for (const auto& a : study.arms)
        out.push_back({allometric_scale(a.dose, study.species_factor), double(a.n_toxic), double(a.n_nontoxic)});
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.human_dose < y.human_dose; });
    return out;
}

namespace {

void check_pseudo(std::span<const BetaArm> pseudo) {
    if (pseudo.size() != 2) throw DomainError("joint density needs exactly two pseudo-arms");
    if (pseudo[0].human_dose == pseudo[1].human_dose)
        throw DomainError("pseudo-arms at identical doses give a degenerate transform");
}

struct PseudoTerms {
    double log_jacobian;
    double log_ratio[2];  // log(d_j / d_i)
    double a[2], b[2], log_beta[2];
};

PseudoTerms pseudo_terms(double dose, std::span<const BetaArm> pseudo) {
    PseudoTerms t{};
    t.log_jacobian = std::log(std::abs(std::log(pseudo[0].human_dose / pseudo[1].human_dose)));
    for (std::size_t j = 0; j < 2; ++j) {
        t.log_ratio[j] = std::log(pseudo[j].human_dose / dose);
        t.a[j] = pseudo[j].a;
        t.b[j] = pseudo[j].b;
        t.log_beta[j] = std::log(boost::math::beta(pseudo[j].a, pseudo[j].b));
    }
    return t;
}

// log density of (y = logit p_i, theta2).
double log_joint_logit(double y, double theta2, const PseudoTerms& t) {
    const double slope = std::exp(theta2);
    double out = theta2 + t.log_jacobian;
    for (std::size_t j = 0; j < 2; ++j) {
        const double z = y + slope * t.log_ratio[j];
        out += t.a[j] * log_expit(z) + t.b[j] * log_expit(-z) - t.log_beta[j];
    }
    return out;
}

}  // namespace

double joint_density(double p, double theta2, double dose, std::span<const BetaArm> pseudo) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("p must lie in (0,1)");
    if (!(dose > 0.0)) throw DomainError("dose must be positive");
    check_pseudo(pseudo);
    const double v = log_joint_logit(logit(p), theta2, pseudo_terms(dose, pseudo));
    return std::exp(v) / (p * (1.0 - p));
}

double marginal_logit_density(double y, double dose, std::span<const BetaArm> pseudo) {
    check_pseudo(pseudo);
    if (!(dose > 0.0)) throw DomainError("dose must be positive");
    const auto terms = pseudo_terms(dose, pseudo);
    // Far in the logit tails the density is a thin ridge in theta2. Its value there is
    // irrelevant next to a peak of order 0.1, so an absolute floor stops refinement
    // from chasing it. The relative tolerance is tight because the outer cdf integral
    // needs a smooth integrand.
    quad::RefinementOptions o;
    o.abs_tol = 1e-14;
    o.rel_tol = 1e-11;
    return quad::integrate_real_line([&](double t2) { return std::exp(log_joint_logit(y, t2, terms)); }, o);
}

double marginal_density(double p, double dose, std::span<const BetaArm> pseudo) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("p must lie in (0,1)");
    return marginal_logit_density(logit(p), dose, pseudo) / (p * (1.0 - p));
}

namespace {

// Support of the logit density used for every cdf integral. Past +-50 the density of
// any beta pseudo-arm with a, b >= 1 carries less than e^-50 of mass.
constexpr double kLogitSupport = 50.0;

double integrate_logit_density(double lower, double upper, double dose, std::span<const BetaArm> pseudo) {
    using boost::math::quadrature::gauss_kronrod;
    lower = std::max(lower, -kLogitSupport);
    upper = std::min(upper, kLogitSupport);
    if (!(upper > lower)) return 0.0;
    auto f = [&](double y) { return marginal_logit_density(y, dose, pseudo); };
    double err = 0.0;
    // One pass first: Newton steps produce very short segments where a relative
    // target is lost in roundoff but the absolute error is already negligible.
    double v = gauss_kronrod<double, 31>::integrate(f, lower, upper, 0, 0.0, &err);
    if (std::isfinite(v) && err <= std::max(1e-9 * std::abs(v), 1e-13)) return v;
    v = gauss_kronrod<double, 31>::integrate(f, lower, upper, 10, 1e-9, &err);
    if (!std::isfinite(v) || err > std::max(1e-6 * std::abs(v), 1e-10))
        throw NumericError("marginal cdf quadrature did not converge");
    return v;
}

}  // namespace

double marginal_cdf(double q, double dose, std::span<const BetaArm> pseudo) {
    if (!(q > 0.0)) return 0.0;
    if (q >= 1.0) return marginal_mass(dose, pseudo);
    return integrate_logit_density(-kLogitSupport, logit(q), dose, pseudo);
}

double marginal_mass(double dose, std::span<const BetaArm> pseudo) {
    return integrate_logit_density(-kLogitSupport, kLogitSupport, dose, pseudo);
}

std::vector<double> marginal_percentiles(double dose, const std::vector<double>& levels,
                                         std::span<const BetaArm> pseudo) {
    for (double k : levels)
        if (!(k > 0.0 && k < 1.0)) throw DomainError("percentile level must lie in (0,1)");
    const double mass = marginal_mass(dose, pseudo);
    if (!(mass > 0.0)) throw NumericError("pseudo-arms leave no image mass at this dose");

    std::vector<double> out;
    out.reserve(levels.size());
    for (double level : levels) {
        const double target = level * mass;
        double lo = -kLogitSupport, F_lo = 0.0, hi = kLogitSupport, F_hi = mass;
        // Safeguarded Newton: the density is the derivative of the cdf, and each new
        // cdf value is an increment from the nearer bracket end.
        double y = 0.0;
        for (int it = 0; it < 200; ++it) {
            const double F = (y - lo < hi - y) ? F_lo + integrate_logit_density(lo, y, dose, pseudo)
                                               : F_hi - integrate_logit_density(y, hi, dose, pseudo);
            if (std::abs(F - target) <= 1e-9 * mass) break;
            if (F < target) {
                lo = y;
                F_lo = F;
            } else {
                hi = y;
                F_hi = F;
            }
            if (expit(hi) - expit(lo) < 1e-12) break;
            const double dens = marginal_logit_density(y, dose, pseudo);
            double next = dens > 0.0 ? y - (F - target) / dens : lo - 1.0;
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            y = next;
        }
        out.push_back(expit(y));
    }
    return out;
}

double marginal_percentile(double dose, double level, std::span<const BetaArm> pseudo) {
    return marginal_percentiles(dose, {level}, pseudo).front();
}

LinearPredictorMoments implied_moments(const BvnParams& bvn, double dose, double d_ref) {
    if (!(dose > 0.0) || !(d_ref > 0.0)) throw DomainError("dose and d_ref must be positive");
    const double L = std::log(dose / d_ref);
    const double e_slope = std::exp(bvn.mu2 + 0.5 * bvn.s22);
    const double var_slope = std::exp(2.0 * bvn.mu2 + bvn.s22) * std::expm1(bvn.s22);
    // Stein: Cov(theta1, exp(theta2)) = E[exp(theta2)] Cov(theta1, theta2).
    const double cov_stein = e_slope * bvn.s12;
    return {bvn.mu1 + L * e_slope, bvn.s11 + 2.0 * L * cov_stein + L * L * var_slope};
}

double implied_percentile(const BvnParams& bvn, double dose, double d_ref, double level) {
    if (!(level > 0.0 && level < 1.0)) throw DomainError("percentile level must lie in (0,1)");
    const auto m = implied_moments(bvn, dose, d_ref);
    if (!(m.var > 0.0)) throw std::logic_error("implied variance of z is not positive");
    const boost::math::normal_distribution<double> std_normal;
    return expit(m.mean + boost::math::quantile(std_normal, level) * std::sqrt(m.var));
}

PercentileTable percentile_table(const AnimalStudy& study, const DoseGrid& grid,
                                 const std::vector<double>& levels) {
    grid.validate();
    const auto pseudo = beta_pseudo_priors(study);
    PercentileTable t;
    t.levels = levels;
    if (pseudo.size() == 2) {
        t.doses = grid.doses;
        t.values.resize(grid.size());
        std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
        for (std::size_t i = 0; i < grid.size(); ++i) {
            try {
                t.values[i] = marginal_percentiles(grid.doses[i], levels, pseudo);
            } catch (...) {
#pragma omp critical(escalate_percentile_failure)
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
    } else {
        for (const auto& arm : pseudo) {
            const boost::math::beta_distribution<double> beta(arm.a, arm.b);
            std::vector<double> row;
            for (double k : levels) row.push_back(boost::math::quantile(beta, k));
            t.doses.push_back(arm.human_dose);
            t.values.push_back(std::move(row));
        }
    }
    t.validate();
    return t;
}

double percentile_distance(const PercentileTable& target, const BvnParams& bvn, double d_ref) {
    double delta = 0.0;
    for (std::size_t i = 0; i < target.doses.size(); ++i)
        for (std::size_t k = 0; k < target.levels.size(); ++k)
            delta += std::abs(target.values[i][k] - implied_percentile(bvn, target.doses[i], d_ref, target.levels[k]));
    return delta;
}

namespace {

struct Bounds {
    double lo, hi;
};
// mu1, mu2, sd1, sd2, rho
constexpr Bounds kBounds[5] = {{-10, 10}, {-5, 5}, {1e-3, 10}, {1e-3, 10}, {-0.999, 0.999}};

double to_bounded(double t, Bounds b) { return b.lo + (b.hi - b.lo) * expit(t); }
double to_free(double x, Bounds b) {
    const double u = std::clamp((x - b.lo) / (b.hi - b.lo), 1e-12, 1.0 - 1e-12);
    return logit(u);
}

BvnParams decode(const std::vector<double>& t) {
    const double m1 = to_bounded(t[0], kBounds[0]);
    const double m2 = to_bounded(t[1], kBounds[1]);
    const double s1 = to_bounded(t[2], kBounds[2]);
    const double s2 = to_bounded(t[3], kBounds[3]);
    const double r = to_bounded(t[4], kBounds[4]);
    return {m1, m2, s1 * s1, r * s1 * s2, s2 * s2};
}

double radical_inverse(std::uint64_t i, std::uint64_t base) {
    double f = 1.0, r = 0.0;
    while (i > 0) {
        f /= double(base);
        r += f * double(i % base);
        i /= base;
    }
    return r;
}

// Start boxes inside the bounds where percentile-matched priors usually live.
std::vector<double> halton_start(std::uint64_t index) {
    constexpr std::uint64_t primes[5] = {2, 3, 5, 7, 11};
    constexpr Bounds box[5] = {{-3, 1}, {-1, 1}, {0.1, 2.0}, {0.02, 1.0}, {-0.8, 0.8}};
    std::vector<double> t(5);
    for (std::size_t j = 0; j < 5; ++j) {
        const double u = radical_inverse(index + 1, primes[j]);
        t[j] = to_free(box[j].lo + (box[j].hi - box[j].lo) * u, kBounds[j]);
    }
    return t;
}

}  // namespace

BvnFit fit_bvn(const PercentileTable& target_in, const DoseGrid& grid, const FitOptions& opts) {
    target_in.validate();
    if (!(grid.d_ref > 0.0)) throw DomainError("d_ref must be positive");
    if (opts.n_starts == 0) throw DomainError("fit_bvn needs at least one start");

    // Canonical row order so the objective is evaluated identically for any input order.
    PercentileTable target = target_in;
    std::vector<std::size_t> order(target.doses.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return target_in.doses[a] < target_in.doses[b]; });
    for (std::size_t i = 0; i < order.size(); ++i) {
        target.doses[i] = target_in.doses[order[i]];
        target.values[i] = target_in.values[order[i]];
    }

    const double d_ref = grid.d_ref;
    auto objective = [&](const std::vector<double>& t) {
        const BvnParams p = decode(t);
        if (!p.positive_definite()) return std::numeric_limits<double>::max();
        return percentile_distance(target, p, d_ref);
    };

    std::vector<NelderMeadResult> results(opts.n_starts);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t s = 0; s < opts.n_starts; ++s)
        results[s] = nelder_mead(objective, halton_start(opts.seed + s), 0.5, opts.max_evals_per_start, opts.tol);

    BvnFit best;
    best.delta = std::numeric_limits<double>::infinity();
    for (const auto& r : results) {
        if (r.converged) ++best.converged_starts;
        if (r.value < best.delta) {
            best.delta = r.value;
            best.params = decode(r.x);
        }
    }
    if (best.converged_starts == 0) throw FitFailure("no multi-start converged within the evaluation budget", best);
    return best;
}

BvnParams weakly_informative_prior(const DoseGrid& grid) {
    if (!(grid.gamma > 0.0 && grid.gamma < 1.0)) throw DomainError("gamma must lie in (0,1)");
    return {logit(grid.gamma), 0.0, 4.0, 0.0, 1.0};
}

}  // namespace escalate
