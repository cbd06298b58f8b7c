#include "escalate/trial_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "escalate/config.hpp"
#include "escalate/errors.hpp"
#include "escalate/seeding.hpp"

namespace escalate {

void TrialConfig::validate(const DoseGrid& doses) const {
    if (cohort_size < 1) throw FieldError("cohort_size", "must be at least 1");
    if (max_cohorts < 1) throw FieldError("max_cohorts", "must be at least 1");
    utilities.validate();
    if (!(fixed_weight >= 0.0 && fixed_weight <= 1.0)) throw FieldError("fixed_weight", "must lie in [0,1]");
    if (!(feasibility_bound > 0.0 && feasibility_bound < 1.0))
        throw FieldError("feasibility_bound", "must lie in (0,1)");
    if (!(overdose_cut > 0.0 && overdose_cut < 1.0)) throw FieldError("overdose_cut", "must lie in (0,1)");
    if (!(max_escalation_factor >= 1.0)) throw FieldError("max_escalation_factor", "must be at least 1");
    if (start_dose && *start_dose >= doses.size()) throw FieldError("start_dose_index", "outside the dose grid");
    if (!(cov_inflation > 0.0)) throw FieldError("cov_inflation", "must be positive");
    if (lambda_reps < 2) throw FieldError("lambda_reps", "must be at least 2");
}

double TrialState::current_weight() const {
    if (!trace.empty()) return trace.back().weight;
    if (config.weight_policy == WeightPolicy::fixed) return config.fixed_weight;
    return config.run_in ? 0.0 : 1.0;
}

const char* to_string(TrialStatus s) {
    switch (s) {
        case TrialStatus::enrolling: return "enrolling";
        case TrialStatus::stopped_early: return "stopped_early";
        case TrialStatus::completed: return "completed";
    }
    return "?";
}

Recommendation overdose_control(const MixtureBelief& posterior, const DoseGrid& grid, double cut, double bound,
                                std::optional<std::size_t> current, double max_escalation_factor) {
    Recommendation r;
    r.prob_overdose.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        r.prob_overdose[i] = posterior.prob_overdose(i, cut);
        if (r.prob_overdose[i] <= bound) r.highest_safe = i;
    }
    r.stop = r.prob_overdose.front() > bound;
    if (r.stop || !r.highest_safe) {
        r.stop = true;
        return r;
    }
    std::size_t pick = *r.highest_safe;
    if (current) {
        const double ceiling = max_escalation_factor * grid.doses[*current] * (1.0 + 1e-12);
        while (pick > *current && grid.doses[pick] > ceiling) --pick;
    }
    r.dose = pick;
    return r;
}

TrialEngine::TrialEngine(DoseGrid grid, BvnParams informative, BvnParams weak, TrialConfig config)
    : grid_(std::move(grid)), informative_(informative), weak_(weak), config_(config) {
    grid_.validate();
    config_.validate(grid_);
    model_inf_ = ComponentModel::build(informative_.inflated(config_.cov_inflation), grid_, config_.grid);
    model_weak_ = ComponentModel::build(weak_.inflated(config_.cov_inflation), grid_, config_.grid);
    animal_prior_ = mixture_posterior(prior_belief(1.0), {}, config_.grid);

    prior_predictive_.resize(grid_.size());
    predictions_.resize(grid_.size());
    for (std::size_t i = 0; i < grid_.size(); ++i) {
        prior_predictive_[i] = animal_prior_.mean_risk(i);
        predictions_[i] = optimal_prediction(prior_predictive_[i], config_.utilities);
    }
    if (config_.start_dose) {
        start_dose_ = *config_.start_dose;
    } else {
        start_dose_ = 0;
        for (std::size_t i = 0; i < grid_.size(); ++i)
            if (animal_prior_.risk_cdf(i, config_.start_safe_risk) >= config_.start_safe_prob) start_dose_ = i;
    }
}

TrialEngine TrialEngine::for_state(const TrialState& s) { return TrialEngine(s.grid, s.informative, s.weak, s.config); }

MixtureBelief TrialEngine::prior_belief(double weight) const {
    MixtureBelief b;
    b.informative = model_inf_;
    b.weak = model_weak_;
    b.weight = weight;
    return b;
}

TrialState TrialEngine::start(std::uint64_t seed) const {
    TrialState s;
    s.grid = grid_;
    s.informative = informative_;
    s.weak = weak_;
    s.config = config_;
    s.seed = seed;
    s.prior_predictive = prior_predictive_;
    s.predictions = predictions_;
    s.modal_theta = {informative_.mu1, informative_.mu2};
    s.next_dose = start_dose_;
    s.audit.push_back({0, "start", "first cohort at " + std::to_string(grid_.doses[start_dose_])});
    return s;
}

MixtureBelief TrialEngine::posterior(const TrialState& s) const {
    return mixture_posterior(prior_belief(s.current_weight()), s.history, config_.grid);
}

PosteriorSummary TrialEngine::summary(const TrialState& s) const { return summarize(posterior(s), grid_); }

Recommendation TrialEngine::recommend_next(const TrialState& s) const {
    if (s.status != TrialStatus::enrolling) throw StateError("trial is no longer enrolling");
    if (s.history.empty()) {
        Recommendation r = overdose_control(posterior(s), grid_, config_.overdose_cut, config_.feasibility_bound,
                                            std::nullopt, config_.max_escalation_factor);
        r.dose = s.next_dose;
        r.stop = false;
        return r;
    }
    return overdose_control(posterior(s), grid_, config_.overdose_cut, config_.feasibility_bound,
                            s.history.back().dose_index, config_.max_escalation_factor);
}

WeightTraceEntry TrialEngine::analysis_weight(const TrialState& s, std::size_t dose) const {
    const std::size_t h = s.history.size();
    WeightTraceEntry e;
    e.cohort = int(h);

    const PredictionRecord rec = prediction_record(s.history);
    const auto T = interesting_doses(s.history, dose);
    e.kappa = kappa(rec, T, config_.utilities);

    if (config_.lambda_mode == LambdaMode::info_time) {
        e.lambda = lambda_info_time(int(h) * config_.cohort_size, config_.max_cohorts * config_.cohort_size);
    } else {
        SdRatioInput in;
        in.prediction = s.predictions[dose];
        in.prob_dlt = dlt_risk(s.modal_theta, grid_.doses[dose], grid_.d_ref);
        in.n_through_h = rec.counts.at(dose).total();
        in.n_before_h = in.n_through_h - s.history.back().n_patients;
        in.cohort_size = config_.cohort_size;
        in.cohorts_left = config_.max_cohorts - int(h);
        in.seed = derive_seed(s.seed, {0x1a3bdaULL, h});
        in.reps = config_.lambda_reps;
        e.lambda = lambda_sd_ratio(in, config_.utilities);
    }

    if (config_.weight_policy == WeightPolicy::fixed) {
        e.weight = config_.fixed_weight;
    } else if (config_.run_in && run_in_active(s.history, h)) {
        e.run_in = true;
        e.weight = 0.0;
    } else {
        e.weight = dynamic_weight(e.kappa, e.lambda);
    }
    return e;
}

void TrialEngine::record_cohort(TrialState& s, std::size_t dose, const std::vector<int>& outcomes,
                                bool override_dose) const {
    if (s.status != TrialStatus::enrolling) throw StateError("trial is no longer enrolling");
    if (dose >= grid_.size()) throw FieldError("dose", "not a grid dose");
    if (int(outcomes.size()) != config_.cohort_size)
        throw FieldError("outcomes", "expected " + std::to_string(config_.cohort_size) + " outcomes");
    for (int y : outcomes)
        if (y != 0 && y != 1) throw FieldError("outcomes", "outcomes must be 0 or 1");
    if (!override_dose && (!s.next_dose || dose != *s.next_dose))
        throw ProtocolError("dose " + std::to_string(grid_.doses[dose]) + " is not the recommended dose");

    // Work on a copy so a numeric failure leaves the caller's state untouched.
    TrialState t = s;
    CohortOutcome c;
    c.dose_index = dose;
    c.n_patients = int(outcomes.size());
    c.n_dlt = int(std::count(outcomes.begin(), outcomes.end(), 1));
    c.outcomes = outcomes;
    c.predictions.assign(outcomes.size(), t.predictions[dose]);
    t.history.push_back(c);

    const int h = t.cohorts_done();
    if (override_dose && (!s.next_dose || dose != *s.next_dose))
        t.audit.push_back({int(t.audit.size()), "override",
                           "cohort " + std::to_string(h) + " dosed at " + std::to_string(grid_.doses[dose])});

    t.trace.push_back(analysis_weight(t, dose));
    const double w = t.trace.back().weight;
    const MixtureBelief post = mixture_posterior(prior_belief(w), t.history, config_.grid);
    t.modal_theta = post.mode();

    std::ostringstream detail;
    detail << "cohort " << h << " dose " << grid_.doses[dose] << " dlt " << c.n_dlt << "/" << c.n_patients
           << " w " << w;
    t.audit.push_back({int(t.audit.size()), "record", detail.str()});

    const Recommendation r = overdose_control(post, grid_, config_.overdose_cut, config_.feasibility_bound, dose,
                                              config_.max_escalation_factor);
    if (r.stop) {
        t.status = TrialStatus::stopped_early;
        t.next_dose.reset();
        t.audit.push_back({int(t.audit.size()), "stop", "lowest dose fails overdose control"});
    } else if (h >= config_.max_cohorts) {
        t.status = TrialStatus::completed;
        t.next_dose.reset();
        t.audit.push_back({int(t.audit.size()), "complete", "maximum number of cohorts reached"});
    } else {
        t.next_dose = r.dose;
    }
    s = std::move(t);
}

std::optional<std::size_t> closest_eligible_dose(const std::vector<double>& medians, const std::vector<bool>& eligible,
                                                 double gamma) {
    std::optional<std::size_t> best;
    double best_gap = 0.0;
    for (std::size_t i = 0; i < medians.size(); ++i) {
        if (!eligible.at(i)) continue;
        const double gap = std::abs(medians[i] - gamma);
        if (!best || gap < best_gap) {
            best = i;
            best_gap = gap;
        }
    }
    return best;
}

std::optional<std::size_t> TrialEngine::select_mtd(const TrialState& s) const {
    if (s.status == TrialStatus::enrolling) throw StateError("trial has not finished");
    if (s.status == TrialStatus::stopped_early) return std::nullopt;
    const MixtureBelief post = posterior(s);
    std::vector<bool> eligible(grid_.size(), false);
    for (const auto& c : s.history) eligible[c.dose_index] = true;
    std::vector<double> medians(grid_.size(), 0.0);
    for (std::size_t i = 0; i < grid_.size(); ++i) {
        if (!eligible[i]) continue;
        eligible[i] = post.prob_overdose(i, config_.overdose_cut) <= config_.feasibility_bound;
        if (eligible[i]) medians[i] = post.median_risk(i);
    }
    return closest_eligible_dose(medians, eligible, grid_.gamma);
}

std::string save_session(const TrialState& s) {
    json audit = json::array();
    for (const auto& a : s.audit) audit.push_back({{"seq", a.seq}, {"action", a.action}, {"detail", a.detail}});
    json j{{"schema_version", kSessionSchemaVersion},
           {"grid", s.grid},
           {"informative", s.informative},
           {"weak", s.weak},
           {"config", s.config},
           {"seed", s.seed},
           {"status", to_string(s.status)},
           {"history", s.history},
           {"trace", s.trace},
           {"prior_predictive", s.prior_predictive},
           {"predictions", s.predictions},
           {"modal_theta", {{"theta1", s.modal_theta.theta1}, {"theta2", s.modal_theta.theta2}}},
           {"next_dose", s.next_dose ? json(*s.next_dose) : json(nullptr)},
           {"audit", audit}};
    return j.dump(1);
}

TrialState load_session(const std::string& document) {
    json j;
    try {
        j = json::parse(document);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("session document is malformed or truncated: ") + e.what());
    }
    if (!j.is_object() || !j.contains("schema_version")) throw MigrationError("session document has no schema_version");
    if (j["schema_version"] != kSessionSchemaVersion)
        throw MigrationError("session schema version " + j["schema_version"].dump() + " is not supported");
    try {
        TrialState s;
        s.grid = j.at("grid").get<DoseGrid>();
        s.informative = j.at("informative").get<BvnParams>();
        s.weak = j.at("weak").get<BvnParams>();
        s.config = j.at("config").get<TrialConfig>();
        s.seed = j.at("seed").get<std::uint64_t>();
        const std::string status = j.at("status").get<std::string>();
        if (status == "enrolling") s.status = TrialStatus::enrolling;
        else if (status == "stopped_early") s.status = TrialStatus::stopped_early;
        else if (status == "completed") s.status = TrialStatus::completed;
        else throw FieldError("status", "unknown status " + status);
        s.history = j.at("history").get<std::vector<CohortOutcome>>();
        s.trace = j.at("trace").get<WeightTrace>();
        s.prior_predictive = j.at("prior_predictive").get<std::vector<double>>();
        s.predictions = j.at("predictions").get<std::vector<int>>();
        s.modal_theta = {j.at("modal_theta").at("theta1").get<double>(), j.at("modal_theta").at("theta2").get<double>()};
        if (!j.at("next_dose").is_null()) s.next_dose = j.at("next_dose").get<std::size_t>();
        for (const auto& a : j.at("audit"))
            s.audit.push_back({a.at("seq").get<int>(), a.at("action").get<std::string>(), a.at("detail").get<std::string>()});
        if (s.predictions.size() != s.grid.size() || s.prior_predictive.size() != s.grid.size())
            throw DataError("session predictions do not match the grid");
        if (s.trace.size() != s.history.size()) throw DataError("session trace does not match the history");
        return s;
    } catch (const json::exception& e) {
        throw DataError(std::string("session document is incomplete: ") + e.what());
    }
}

void write_session_file(const std::filesystem::path& path, const TrialState& s) {
    write_text_file_atomic(path, save_session(s));
}

TrialState read_session_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open session " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return load_session(ss.str());
}

}  // namespace escalate
