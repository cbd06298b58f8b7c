#include "escalate/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <boost/math/constants/constants.hpp>

#include "escalate/errors.hpp"
#include "escalate/kernels.hpp"

namespace escalate {

ThetaGrid ThetaGrid::around(const BvnParams& bvn, double n_sd, std::size_t nodes) {
    if (!bvn.positive_definite()) throw DomainError("grid prior must be positive definite");
    if (nodes < 101 || nodes % 2 == 0) throw DomainError("grid needs an odd node count >= 101");
    ThetaGrid g;
    g.lo1 = bvn.mu1 - n_sd * bvn.sd1();
    g.hi1 = bvn.mu1 + n_sd * bvn.sd1();
    g.lo2 = bvn.mu2 - n_sd * bvn.sd2();
    g.hi2 = bvn.mu2 + n_sd * bvn.sd2();
    g.n1 = g.n2 = nodes;
    const double h1 = g.step1(), h2 = g.step2();
    g.weights.resize(g.size());
    for (std::size_t r = 0; r < g.n2; ++r) {
        const double wr = (r == 0 || r + 1 == g.n2) ? 0.5 * h2 : h2;
        for (std::size_t c = 0; c < g.n1; ++c) {
            const double wc = (c == 0 || c + 1 == g.n1) ? 0.5 * h1 : h1;
            g.weights[r * g.n1 + c] = wr * wc;
        }
    }
    return g;
}

double bvn_log_pdf(const BvnParams& b, double t1, double t2) {
    const double det = b.s11 * b.s22 - b.s12 * b.s12;
    const double d1 = t1 - b.mu1, d2 = t2 - b.mu2;
    const double q = (b.s22 * d1 * d1 - 2.0 * b.s12 * d1 * d2 + b.s11 * d2 * d2) / det;
    return -0.5 * q - std::log(2.0 * boost::math::constants::pi<double>()) - 0.5 * std::log(det);
}

ComponentModel::ComponentModel(BvnParams prior, const DoseGrid& doses, ThetaGrid grid)
    : prior_(prior), doses_(doses), grid_(std::move(grid)) {
    doses_.validate();
    const std::size_t n = grid_.size(), nd = doses_.size();
    log_prior_.resize(n);
    log_ratio_.resize(nd);
    risk_.resize(n * nd);
    log_risk_.resize(n * nd);
    log_1m_risk_.resize(n * nd);
    for (std::size_t i = 0; i < nd; ++i) log_ratio_[i] = std::log(doses_.doses[i] / doses_.d_ref);
    for (std::size_t r = 0; r < grid_.n2; ++r) {
        const double t2 = grid_.theta2(r);
        const double slope = std::exp(t2);
        for (std::size_t c = 0; c < grid_.n1; ++c) {
            const std::size_t k = r * grid_.n1 + c;
            const double t1 = grid_.theta1(c);
            log_prior_[k] = bvn_log_pdf(prior_, t1, t2);
            for (std::size_t i = 0; i < nd; ++i) {
                const double eta = t1 + slope * log_ratio_[i];
                risk_[i * n + k] = expit(eta);
                log_risk_[i * n + k] = log_expit(eta);
                log_1m_risk_[i * n + k] = log_expit(-eta);
            }
        }
    }
}

std::shared_ptr<const ComponentModel> ComponentModel::build(const BvnParams& prior, const DoseGrid& doses,
                                                            const GridOptions& opts) {
    return std::make_shared<const ComponentModel>(prior, doses, ThetaGrid::around(prior, opts.n_sd, opts.nodes));
}

std::span<const double> ComponentModel::risk(std::size_t d) const {
    return std::span<const double>(risk_).subspan(d * grid_.size(), grid_.size());
}
std::span<const double> ComponentModel::log_risk(std::size_t d) const {
    return std::span<const double>(log_risk_).subspan(d * grid_.size(), grid_.size());
}
std::span<const double> ComponentModel::log_one_minus_risk(std::size_t d) const {
    return std::span<const double>(log_1m_risk_).subspan(d * grid_.size(), grid_.size());
}

std::vector<DoseData> pool_by_dose(std::span<const CohortOutcome> cohorts) {
    std::map<std::size_t, DoseData> pooled;
    for (const auto& c : cohorts) {
        if (c.n_dlt < 0 || c.n_dlt > c.n_patients) throw DataError("cohort DLT count out of range");
        auto& d = pooled[c.dose_index];
        d.dose_index = c.dose_index;
        d.n += c.n_patients;
        d.r += c.n_dlt;
    }
    std::vector<DoseData> out;
    for (const auto& [k, v] : pooled)
        if (v.n > 0) out.push_back(v);
    return out;
}

ComponentPosterior::ComponentPosterior(std::shared_ptr<const ComponentModel> model, std::vector<double> density,
                                       std::vector<double> row_mass, double log_marginal, std::vector<DoseData> data)
    : model_(std::move(model)), density_(std::move(density)), log_marginal_(log_marginal), data_(std::move(data)) {
    (void)row_mass;
    const auto& g = model_->grid();
    row_cum_.resize(g.size());
    for (std::size_t r = 0; r < g.n2; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < g.n1; ++c) {
            const std::size_t k = r * g.n1 + c;
            s += g.weights[k] * density_[k];
            row_cum_[k] = s;
        }
    }
}

double ComponentPosterior::mean_theta1() const {
    const auto& g = model_->grid();
    double s = 0.0;
    for (std::size_t r = 0; r < g.n2; ++r)
        for (std::size_t c = 0; c < g.n1; ++c) s += g.weights[r * g.n1 + c] * density_[r * g.n1 + c] * g.theta1(c);
    return s;
}

double ComponentPosterior::mean_theta2() const {
    const auto& g = model_->grid();
    double s = 0.0;
    for (std::size_t r = 0; r < g.n2; ++r)
        for (std::size_t c = 0; c < g.n1; ++c) s += g.weights[r * g.n1 + c] * density_[r * g.n1 + c] * g.theta2(r);
    return s;
}

std::array<double, 3> ComponentPosterior::covariance() const {
    const auto& g = model_->grid();
    const double m1 = mean_theta1(), m2 = mean_theta2();
    std::array<double, 3> v{0, 0, 0};
    for (std::size_t r = 0; r < g.n2; ++r)
        for (std::size_t c = 0; c < g.n1; ++c) {
            const double m = g.weights[r * g.n1 + c] * density_[r * g.n1 + c];
            const double d1 = g.theta1(c) - m1, d2 = g.theta2(r) - m2;
            v[0] += m * d1 * d1;
            v[1] += m * d1 * d2;
            v[2] += m * d2 * d2;
        }
    return v;
}

double ComponentPosterior::mean_risk(std::size_t dose) const {
    const auto& g = model_->grid();
    const auto p = model_->risk(dose);
    double s = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) s += g.weights[k] * density_[k] * p[k];
    return s;
}

double ComponentPosterior::second_moment_risk(std::size_t dose) const {
    const auto& g = model_->grid();
    const auto p = model_->risk(dose);
    double s = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) s += g.weights[k] * density_[k] * p[k] * p[k];
    return s;
}

double ComponentPosterior::risk_cdf(std::size_t dose, double c) const {
    if (!(c > 0.0)) return 0.0;
    if (c >= 1.0) return 1.0;
    const auto& g = model_->grid();
    const double L = model_->log_dose_ratio(dose);
    const double lc = logit(c);
    const double h1 = g.step1();
    double total = 0.0;
    for (std::size_t r = 0; r < g.n2; ++r) {
        const double cut = lc - std::exp(g.theta2(r)) * L;
        const double x = (cut - g.lo1) / h1;
        const double* cum = &row_cum_[r * g.n1];
        if (x < 0.0) continue;
        if (x >= double(g.n1 - 1)) {
            total += cum[g.n1 - 1];
            continue;
        }
        const auto i = static_cast<std::size_t>(x);
        const double frac = x - double(i);
        total += cum[i] + frac * (cum[i + 1] - cum[i]);
    }
    return std::clamp(total, 0.0, 1.0);
}

double ComponentPosterior::boundary_mass() const {
    const auto& g = model_->grid();
    double s = 0.0;
    for (std::size_t r = 0; r < g.n2; ++r)
        for (std::size_t c = 0; c < g.n1; ++c) {
            const bool edge = r < 2 || r + 2 >= g.n2 || c < 2 || c + 2 >= g.n1;
            if (edge) s += g.weights[r * g.n1 + c] * density_[r * g.n1 + c];
        }
    return s;
}

ThetaPoint ComponentPosterior::mode() const {
    const auto& g = model_->grid();
    const auto it = std::max_element(density_.begin(), density_.end());
    const auto k = static_cast<std::size_t>(it - density_.begin());
    return {g.theta1(k % g.n1), g.theta2(k / g.n1)};
}

double ComponentPosterior::log_density_at(const ThetaPoint& t) const {
    double v = bvn_log_pdf(model_->prior(), t.theta1, t.theta2);
    const auto& doses = model_->doses();
    for (const auto& d : data_) {
        const double eta = dlt_log_odds(t, doses.doses[d.dose_index], doses.d_ref);
        v += d.r * log_expit(eta) + (d.n - d.r) * log_expit(-eta);
    }
    return v - log_marginal_;
}

namespace {

ComponentPosterior prior_on_grid(std::shared_ptr<const ComponentModel> model) {
    const auto& g = model->grid();
    std::vector<double> density(g.size());
    std::vector<double> row_mass(g.n2, 0.0);
    const auto lp = model->log_prior();
    double total = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        density[k] = std::exp(lp[k]);
        total += g.weights[k] * density[k];
    }
    for (auto& d : density) d /= total;
    return ComponentPosterior(std::move(model), std::move(density), std::move(row_mass), 0.0, {});
}

}  // namespace

ComponentPosterior component_posterior(std::shared_ptr<const ComponentModel> model,
                                       std::span<const CohortOutcome> data, const GridOptions& opts) {
    auto pooled = pool_by_dose(data);
    if (pooled.empty()) return prior_on_grid(std::move(model));
    const auto& doses = model->doses();
    for (const auto& d : pooled)
        if (d.dose_index >= doses.size()) throw DomainError("cohort dose index outside the trial grid");

    for (int attempt = 0;; ++attempt) {
        const auto& g = model->grid();
        std::vector<kernels::LikelihoodTerm> terms;
        for (const auto& d : pooled)
            terms.push_back({model->log_risk(d.dose_index).data(), model->log_one_minus_risk(d.dose_index).data(),
                             double(d.r), double(d.n - d.r)});
        std::vector<double> density(g.size()), row_mass(g.n2);
        const kernels::GridView view{g.n1, g.n2, g.weights.data(), model->log_prior().data()};
        const double log_m = opts.parallel ? kernels::posterior_omp(view, terms, density, row_mass)
                                           : kernels::posterior_serial(view, terms, density, row_mass);
        ComponentPosterior post(model, std::move(density), std::move(row_mass), log_m, pooled);
        if (post.boundary_mass() <= opts.boundary_mass_tol) return post;
        if (attempt >= opts.max_expansions)
            throw NumericError("posterior mass remains on the grid boundary after expansion");
        const double n_sd = opts.n_sd * std::pow(2.0, attempt + 1);
        const std::size_t nodes = (g.n1 - 1) * 2 + 1;
        model = std::make_shared<const ComponentModel>(model->prior(), doses,
                                                       ThetaGrid::around(model->prior(), n_sd, nodes));
    }
}

double posterior_mixture_weight(double w, double log_m_inf, double log_m_weak) {
    if (!(w >= 0.0 && w <= 1.0)) throw DomainError("mixture weight must lie in [0,1]");
    if (w == 0.0) return 0.0;
    if (w == 1.0) return 1.0;
    const double ninf = -std::numeric_limits<double>::infinity();
    if (log_m_inf == ninf && log_m_weak == ninf) throw DataError("data have zero likelihood under both components");
    if (log_m_inf == ninf) return 0.0;
    if (log_m_weak == ninf) return 1.0;
    const double log_odds = std::log(w) - std::log1p(-w) + log_m_inf - log_m_weak;
    return expit(log_odds);
}

MixtureBelief mixture_posterior(const MixtureBelief& prior, std::span<const CohortOutcome> data,
                                const GridOptions& opts) {
    if (!(prior.weight >= 0.0 && prior.weight <= 1.0)) throw DomainError("mixture weight must lie in [0,1]");
    MixtureBelief out;
    out.informative = prior.informative;
    out.weak = prior.weak;
    out.weight = prior.weight;
    if (prior.weight > 0.0) out.post_informative = component_posterior(prior.informative, data, opts);
    if (prior.weight < 1.0) out.post_weak = component_posterior(prior.weak, data, opts);
    const double lmi = out.post_informative ? out.post_informative->log_marginal() : 0.0;
    const double lmw = out.post_weak ? out.post_weak->log_marginal() : 0.0;
    out.posterior_weight = posterior_mixture_weight(prior.weight, lmi, lmw);
    return out;
}

namespace {

template <class F>
double mix(const MixtureBelief& b, F&& f) {
    if (!b.is_posterior()) throw StateError("mixture belief has no posterior attached");
    const double w = *b.posterior_weight;
    double s = 0.0;
    if (w > 0.0) s += w * f(*b.post_informative);
    if (w < 1.0) s += (1.0 - w) * f(*b.post_weak);
    return s;
}

}  // namespace

double MixtureBelief::risk_cdf(std::size_t dose, double c) const {
    return std::clamp(mix(*this, [&](const ComponentPosterior& p) { return p.risk_cdf(dose, c); }), 0.0, 1.0);
}

double MixtureBelief::mean_risk(std::size_t dose) const {
    return mix(*this, [&](const ComponentPosterior& p) { return p.mean_risk(dose); });
}

double MixtureBelief::sd_risk(std::size_t dose) const {
    const double m = mean_risk(dose);
    const double m2 = mix(*this, [&](const ComponentPosterior& p) { return p.second_moment_risk(dose); });
    return std::sqrt(std::max(0.0, m2 - m * m));
}

double MixtureBelief::median_risk(std::size_t dose) const {
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (risk_cdf(dose, expit(mid)) < 0.5)
            lo = mid;
        else
            hi = mid;
    }
    return expit(0.5 * (lo + hi));
}

double MixtureBelief::prob_overdose(std::size_t dose, double cut) const { return 1.0 - risk_cdf(dose, cut); }

ThetaPoint MixtureBelief::mode() const {
    if (!is_posterior()) throw StateError("mixture belief has no posterior attached");
    const double w = *posterior_weight;
    auto log_mix = [&](const ThetaPoint& t) {
        double a = -std::numeric_limits<double>::infinity(), b = a;
        if (w > 0.0) a = std::log(w) + post_informative->log_density_at(t);
        if (w < 1.0) b = std::log1p(-w) + post_weak->log_density_at(t);
        const double m = std::max(a, b);
        return m + std::log(std::exp(a - m) + std::exp(b - m));
    };
    std::vector<ThetaPoint> candidates;
    if (w > 0.0) candidates.push_back(post_informative->mode());
    if (w < 1.0) candidates.push_back(post_weak->mode());
    ThetaPoint best = candidates.front();
    double best_v = log_mix(best);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double v = log_mix(candidates[i]);
        if (v > best_v) {
            best_v = v;
            best = candidates[i];
        }
    }
    return best;
}

PosteriorSummary summarize(const MixtureBelief& posterior, const DoseGrid& grid) {
    if (!posterior.is_posterior()) throw StateError("summarize needs a posterior belief");
    PosteriorSummary s;
    s.posterior_weight = *posterior.posterior_weight;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        DoseSummary d;
        d.dose = grid.doses[i];
        const double below_under = posterior.risk_cdf(i, kUnderdoseCut);
        const double below_over = posterior.risk_cdf(i, kOverdoseCut);
        d.pr_under = below_under;
        d.pr_target = below_over - below_under;
        d.pr_over = 1.0 - below_over;
        d.mean = posterior.mean_risk(i);
        d.sd = posterior.sd_risk(i);
        d.median = posterior.median_risk(i);
        d.pr_dlt = d.mean;
        s.doses.push_back(d);
    }
    return s;
}

BetaMatch ess_moment_match(double mean, double sd) {
    if (!(mean > 0.0 && mean < 1.0)) throw DomainError("mean must lie in (0,1)");
    if (!(sd > 0.0)) throw DomainError("sd must be positive");
    const double v = sd * sd;
    const double bound = mean * (1.0 - mean);
    if (v >= bound) throw DataError("no beta distribution has this mean and sd");
    const double k = bound / v - 1.0;
    return {mean * k, (1.0 - mean) * k, k};
}

}  // namespace escalate
