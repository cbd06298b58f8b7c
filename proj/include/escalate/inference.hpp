#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "escalate/animal_prior.hpp"
#include "escalate/dose_model.hpp"

namespace escalate {

/// Tensor trapezoid grid over (theta1, theta2); theta1 varies fastest.
struct ThetaGrid {
    double lo1 = 0, hi1 = 0, lo2 = 0, hi2 = 0;
    std::size_t n1 = 0, n2 = 0;
    std::vector<double> weights;

    /// Box mean +/- n_sd marginal standard deviations, `nodes` per axis (odd, >= 101).
    static ThetaGrid around(const BvnParams& bvn, double n_sd = 6.0, std::size_t nodes = 201);

    double step1() const { return (hi1 - lo1) / double(n1 - 1); }
    double step2() const { return (hi2 - lo2) / double(n2 - 1); }
    double theta1(std::size_t c) const { return lo1 + step1() * double(c); }
    double theta2(std::size_t r) const { return lo2 + step2() * double(r); }
    std::size_t size() const { return n1 * n2; }
};

struct GridOptions {
    double n_sd = 6.0;
    std::size_t nodes = 201;
    double boundary_mass_tol = 1e-3;
    int max_expansions = 2;
    bool parallel = false;  // use the OpenMP kernel
};

double bvn_log_pdf(const BvnParams& bvn, double theta1, double theta2);

/// A prior component discretised on its own grid with per-dose risk tables.
/// Immutable once built; share it between trials.
class ComponentModel {
public:
    ComponentModel(BvnParams prior, const DoseGrid& doses, ThetaGrid grid);
    static std::shared_ptr<const ComponentModel> build(const BvnParams& prior, const DoseGrid& doses,
                                                       const GridOptions& opts = {});

    const BvnParams& prior() const { return prior_; }
    const DoseGrid& doses() const { return doses_; }
    const ThetaGrid& grid() const { return grid_; }
    std::span<const double> log_prior() const { return log_prior_; }
    std::span<const double> risk(std::size_t dose) const;
    std::span<const double> log_risk(std::size_t dose) const;
    std::span<const double> log_one_minus_risk(std::size_t dose) const;
    /// log(dose_i / d_ref)
    double log_dose_ratio(std::size_t dose) const { return log_ratio_[dose]; }

private:
    BvnParams prior_;
    DoseGrid doses_;
    ThetaGrid grid_;
    std::vector<double> log_prior_;
    std::vector<double> log_ratio_;
    std::vector<double> risk_, log_risk_, log_1m_risk_;  // [dose * size + node]
};

/// Patients and DLTs pooled per grid dose.
struct DoseData {
    std::size_t dose_index = 0;
    int n = 0;
    int r = 0;
};
std::vector<DoseData> pool_by_dose(std::span<const CohortOutcome> cohorts);

/// A component posterior: normalised density on the component's grid.
class ComponentPosterior {
public:
    ComponentPosterior() = default;
    ComponentPosterior(std::shared_ptr<const ComponentModel> model, std::vector<double> density,
                       std::vector<double> row_mass, double log_marginal, std::vector<DoseData> data);

    const ComponentModel& model() const { return *model_; }
    std::shared_ptr<const ComponentModel> model_ptr() const { return model_; }
    double log_marginal() const { return log_marginal_; }
    std::span<const double> density() const { return density_; }
    const std::vector<DoseData>& data() const { return data_; }

    double mean_theta1() const;
    double mean_theta2() const;
    /// Second central moments (var1, cov12, var2).
    std::array<double, 3> covariance() const;
    double mean_risk(std::size_t dose) const;
    double second_moment_risk(std::size_t dose) const;
    /// Pr(p_dose < c), interpolated linearly in theta1 within each row.
    double risk_cdf(std::size_t dose, double c) const;
    /// Probability mass on the two outermost node layers of the box.
    double boundary_mass() const;
    /// Grid node with the largest posterior density.
    ThetaPoint mode() const;
    /// Unnormalised log posterior (prior * likelihood / marginal) at any theta.
    double log_density_at(const ThetaPoint& t) const;

private:
    std::shared_ptr<const ComponentModel> model_;
    std::vector<double> density_;
    std::vector<double> row_cum_;  // cumulative node mass along theta1 per row
    double log_marginal_ = 0.0;
    std::vector<DoseData> data_;
};

/// Posterior of one bivariate-normal component. Empty data returns the prior
/// with log marginal likelihood exactly 0. Expands the grid when more than
/// boundary_mass_tol of the mass sits on the box edge; throws NumericError
/// if expansion does not help.
ComponentPosterior component_posterior(std::shared_ptr<const ComponentModel> model,
                                       std::span<const CohortOutcome> data, const GridOptions& opts = {});

/// Two-component mixture prior and, once updated, its posterior form.
struct MixtureBelief {
    std::shared_ptr<const ComponentModel> informative;
    std::shared_ptr<const ComponentModel> weak;
    double weight = 1.0;
    std::optional<ComponentPosterior> post_informative;
    std::optional<ComponentPosterior> post_weak;
    std::optional<double> posterior_weight;

    bool is_posterior() const { return posterior_weight.has_value(); }
    /// Pr(p_dose < c) under the posterior mixture.
    double risk_cdf(std::size_t dose, double c) const;
    double mean_risk(std::size_t dose) const;
    double sd_risk(std::size_t dose) const;
    double median_risk(std::size_t dose) const;
    double prob_overdose(std::size_t dose, double cut) const;
    /// Joint posterior mode, chosen among the two component modes.
    ThetaPoint mode() const;
};

/// w_+ = w M_inf / (w M_inf + (1 - w) M_weak) with component posteriors attached.
MixtureBelief mixture_posterior(const MixtureBelief& prior, std::span<const CohortOutcome> data,
                                const GridOptions& opts = {});

/// Posterior weight from the prior weight and the two log marginal likelihoods.
double posterior_mixture_weight(double w, double log_m_informative, double log_m_weak);

struct DoseSummary {
    double dose = 0.0;
    double median = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    double pr_under = 0.0;   // p < 0.16
    double pr_target = 0.0;  // 0.16 <= p < 0.33
    double pr_over = 0.0;    // p >= 0.33
    double pr_dlt = 0.0;     // predictive Pr(Y = 1)
};

struct PosteriorSummary {
    double posterior_weight = 0.0;
    std::vector<DoseSummary> doses;
};

inline constexpr double kUnderdoseCut = 0.16;
inline constexpr double kOverdoseCut = 0.33;

PosteriorSummary summarize(const MixtureBelief& posterior, const DoseGrid& grid);

struct BetaMatch {
    double a = 0.0;
    double b = 0.0;
    double ess = 0.0;
};

/// Beta(a, b) with the given mean and sd; ESS = a + b.
BetaMatch ess_moment_match(double mean, double sd);

}  // namespace escalate
