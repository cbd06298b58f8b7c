#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "escalate/dose_model.hpp"
#include "escalate/errors.hpp"

namespace escalate {

struct AnimalArm {
    double dose = 0.0;  // mg/kg
    int n_toxic = 0;
    int n_nontoxic = 0;
};

struct AnimalStudy {
    double species_factor = 0.0;  // (BW/BSA) of the species, kg per m^2
    std::vector<AnimalArm> arms;

    /// Throws DataError on too few arms, improper beta arms, a toxicity rate
    /// that decreases with dose, or no toxicity on the highest dose.
    void validate() const;
};

/// Beta(a, b) prior for the human risk at a human-equivalent dose.
struct BetaArm {
    double human_dose = 0.0;  // mg/m^2
    double a = 0.0;
    double b = 0.0;
};

/// Bivariate normal for (theta1, theta2).
struct BvnParams {
    double mu1 = 0.0;
    double mu2 = 0.0;
    double s11 = 1.0;
    double s12 = 0.0;
    double s22 = 1.0;

    double sd1() const;
    double sd2() const;
    double correlation() const;
    bool positive_definite() const;
    /// Same means, covariance multiplied by factor.
    BvnParams inflated(double factor) const;
};

struct PercentileTable {
    std::vector<double> levels;               // in (0,1), ascending
    std::vector<double> doses;                // one row per dose
    std::vector<std::vector<double>> values;  // values[row][level]

    void validate() const;
};

double allometric_scale(double animal_dose, double species_factor);

/// One Beta(t, v) per arm at the human-equivalent dose, ordered by dose.
std::vector<BetaArm> beta_pseudo_priors(const AnimalStudy& study);

/// Joint density of (p_i, theta2) at human dose d_i induced by two beta
/// pseudo-priors through the logistic model. Integrates to Pr(p_0 > p_-1).
double joint_density(double p, double theta2, double dose, std::span<const BetaArm> pseudo);

/// Density of logit(p_i) with theta2 integrated out; marginal_density is this
/// divided by p(1-p).
double marginal_logit_density(double y, double dose, std::span<const BetaArm> pseudo);
double marginal_density(double p, double dose, std::span<const BetaArm> pseudo);

/// Unnormalised cdf F_i(q) and the total image mass F_i(1).
double marginal_cdf(double q, double dose, std::span<const BetaArm> pseudo);
double marginal_mass(double dose, std::span<const BetaArm> pseudo);

/// q with F_i(q) / F_i(1) = level, by safeguarded Newton on the logit scale.
double marginal_percentile(double dose, double level, std::span<const BetaArm> pseudo);
std::vector<double> marginal_percentiles(double dose, const std::vector<double>& levels,
                                         std::span<const BetaArm> pseudo);

/// Percentile of p at a dose implied by a bivariate normal theta, from the
/// Taylor/Stein moment approximation of z = theta1 + exp(theta2) log(d/d_ref).
double implied_percentile(const BvnParams& bvn, double dose, double d_ref, double level);

/// Approximate mean and variance of the linear predictor z at a dose.
struct LinearPredictorMoments {
    double mean = 0.0;
    double var = 0.0;
};
LinearPredictorMoments implied_moments(const BvnParams& bvn, double dose, double d_ref);

/// Target percentiles for the bivariate normal fit. With two arms these are
/// percentiles of the induced marginal at every grid dose; with more arms,
/// the beta percentiles at each arm's human dose.
PercentileTable percentile_table(const AnimalStudy& study, const DoseGrid& grid,
                                 const std::vector<double>& levels = {0.025, 0.5, 0.975});

struct FitOptions {
    std::size_t n_starts = 16;
    std::size_t max_evals_per_start = 6000;
    std::uint64_t seed = 0;  // offset into the Halton start sequence
    double tol = 1e-10;
};

struct BvnFit {
    BvnParams params;
    double delta = 0.0;  // sum of absolute percentile differences
    std::size_t converged_starts = 0;
};

class FitFailure : public NumericError {
public:
    FitFailure(const std::string& what, BvnFit best) : NumericError(what), best_(best) {}
    const BvnFit& best() const { return best_; }

private:
    BvnFit best_;
};

/// Total absolute distance between target and implied percentiles.
double percentile_distance(const PercentileTable& target, const BvnParams& bvn, double d_ref);

/// Bounded multi-start Nelder-Mead minimisation of percentile_distance.
BvnFit fit_bvn(const PercentileTable& target, const DoseGrid& grid, const FitOptions& opts = {});

/// theta1 ~ N(logit(gamma), 2^2), theta2 ~ N(0, 1), independent.
BvnParams weakly_informative_prior(const DoseGrid& grid);

}  // namespace escalate
