#include "escalate/config.hpp"

#include <cstdio>
#include <fcntl.h>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "escalate/errors.hpp"

namespace escalate {

namespace {

template <class T>
T required(const json& j, const char* key) {
    if (!j.is_object()) throw FieldError(key, "expected an object holding this key");
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) throw FieldError(key, "missing");
    try {
        return it->get<T>();
    } catch (const FieldError&) {
        throw;
    } catch (const DataError& e) {
        throw FieldError(key, e.what());
    } catch (const json::exception& e) {
        throw FieldError(key, std::string("wrong type (") + e.what() + ")");
    }
}

template <class T>
void optional_into(const json& j, const char* key, T& out) {
    if (!j.is_object()) return;
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception& e) {
        throw FieldError(key, std::string("wrong type (") + e.what() + ")");
    }
}

}  // namespace

void to_json(json& j, const DoseGrid& g) { j = json{{"doses", g.doses}, {"d_ref", g.d_ref}, {"gamma", g.gamma}}; }

void from_json(const json& j, DoseGrid& g) {
    g.doses = required<std::vector<double>>(j, "doses");
    g.d_ref = required<double>(j, "d_ref");
    optional_into(j, "gamma", g.gamma);
    try {
        g.validate();
    } catch (const DataError& e) {
        throw FieldError("grid", e.what());
    }
}

void to_json(json& j, const AnimalArm& a) {
    j = json{{"dose", a.dose}, {"n_toxic", a.n_toxic}, {"n_nontoxic", a.n_nontoxic}};
}

void from_json(const json& j, AnimalArm& a) {
    a.dose = required<double>(j, "dose");
    a.n_toxic = required<int>(j, "n_toxic");
    a.n_nontoxic = required<int>(j, "n_nontoxic");
}

void to_json(json& j, const AnimalStudy& s) { j = json{{"species_factor", s.species_factor}, {"arms", s.arms}}; }

void from_json(const json& j, AnimalStudy& s) {
    s.species_factor = required<double>(j, "species_factor");
    s.arms = required<std::vector<AnimalArm>>(j, "arms");
    try {
        s.validate();
    } catch (const DataError& e) {
        throw FieldError("arms", e.what());
    }
    if (!(s.species_factor > 0.0)) throw FieldError("species_factor", "must be positive");
}

void to_json(json& j, const BvnParams& b) {
    j = json{{"mu1", b.mu1}, {"mu2", b.mu2}, {"s11", b.s11}, {"s12", b.s12}, {"s22", b.s22}};
}

void from_json(const json& j, BvnParams& b) {
    b.mu1 = required<double>(j, "mu1");
    b.mu2 = required<double>(j, "mu2");
    b.s11 = required<double>(j, "s11");
    b.s12 = required<double>(j, "s12");
    b.s22 = required<double>(j, "s22");
    if (!b.positive_definite()) throw FieldError("s12", "covariance is not positive definite");
}

void to_json(json& j, const BvnRecord& r) {
    to_json(j, r.params);
    j["d_ref"] = r.d_ref;
    j["delta"] = r.delta;
}

void from_json(const json& j, BvnRecord& r) {
    from_json(j, r.params);
    r.d_ref = required<double>(j, "d_ref");
    optional_into(j, "delta", r.delta);
}

void to_json(json& j, const Scenario& s) {
    j = json{{"name", s.name}, {"true_risks", s.true_risks}, {"mtd_index", s.mtd_index}};
}

void from_json(const json& j, Scenario& s) {
    s.name = required<std::string>(j, "name");
    s.true_risks = required<std::vector<double>>(j, "true_risks");
    for (std::size_t i = 0; i < s.true_risks.size(); ++i) {
        const double p = s.true_risks[i];
        if (!(p >= 0.0 && p <= 1.0)) throw FieldError("true_risks", "risk outside [0,1]");
        if (i > 0 && p < s.true_risks[i - 1]) throw FieldError("true_risks", "risks must be non-decreasing");
    }
    s.mtd_index = closest_to_target(s.true_risks, 0.25);
    optional_into(j, "mtd_index", s.mtd_index);
}

void to_json(json& j, const UtilityTable& u) {
    j = json{{"u00", u.u00}, {"u01", u.u01}, {"u10", u.u10}, {"u11", u.u11}};
}

void from_json(const json& j, UtilityTable& u) {
    optional_into(j, "u00", u.u00);
    optional_into(j, "u01", u.u01);
    optional_into(j, "u10", u.u10);
    optional_into(j, "u11", u.u11);
    try {
        u.validate();
    } catch (const DataError& e) {
        throw FieldError("utilities", e.what());
    }
}

void to_json(json& j, const TrialConfig& c) {
    j = json{{"cohort_size", c.cohort_size},
             {"max_cohorts", c.max_cohorts},
             {"utilities", c.utilities},
             {"lambda_mode", c.lambda_mode == LambdaMode::sd_ratio ? "sd_ratio" : "info_time"},
             {"weight_policy", c.weight_policy == WeightPolicy::dynamic ? "dynamic" : "fixed"},
             {"fixed_weight", c.fixed_weight},
             {"run_in", c.run_in},
             {"feasibility_bound", c.feasibility_bound},
             {"overdose_cut", c.overdose_cut},
             {"max_escalation_factor", c.max_escalation_factor},
             {"start_dose_index", c.start_dose ? json(*c.start_dose) : json(nullptr)},
             {"start_safe_risk", c.start_safe_risk},
             {"start_safe_prob", c.start_safe_prob},
             {"cov_inflation", c.cov_inflation},
             {"lambda_reps", c.lambda_reps},
             {"grid_n_sd", c.grid.n_sd},
             {"grid_nodes", c.grid.nodes},
             {"grid_parallel", c.grid.parallel}};
}

void from_json(const json& j, TrialConfig& c) {
    optional_into(j, "cohort_size", c.cohort_size);
    optional_into(j, "max_cohorts", c.max_cohorts);
    if (j.contains("utilities")) c.utilities = required<UtilityTable>(j, "utilities");
    std::string mode = c.lambda_mode == LambdaMode::sd_ratio ? "sd_ratio" : "info_time";
    optional_into(j, "lambda_mode", mode);
    if (mode == "sd_ratio") c.lambda_mode = LambdaMode::sd_ratio;
    else if (mode == "info_time") c.lambda_mode = LambdaMode::info_time;
    else throw FieldError("lambda_mode", "expected sd_ratio or info_time");
    std::string policy = c.weight_policy == WeightPolicy::dynamic ? "dynamic" : "fixed";
    optional_into(j, "weight_policy", policy);
    if (policy == "dynamic") c.weight_policy = WeightPolicy::dynamic;
    else if (policy == "fixed") c.weight_policy = WeightPolicy::fixed;
    else throw FieldError("weight_policy", "expected dynamic or fixed");
    optional_into(j, "fixed_weight", c.fixed_weight);
    optional_into(j, "run_in", c.run_in);
    optional_into(j, "feasibility_bound", c.feasibility_bound);
    optional_into(j, "overdose_cut", c.overdose_cut);
    optional_into(j, "max_escalation_factor", c.max_escalation_factor);
    if (j.contains("start_dose_index") && !j["start_dose_index"].is_null())
        c.start_dose = required<std::size_t>(j, "start_dose_index");
    optional_into(j, "start_safe_risk", c.start_safe_risk);
    optional_into(j, "start_safe_prob", c.start_safe_prob);
    optional_into(j, "cov_inflation", c.cov_inflation);
    optional_into(j, "lambda_reps", c.lambda_reps);
    optional_into(j, "grid_n_sd", c.grid.n_sd);
    optional_into(j, "grid_nodes", c.grid.nodes);
    optional_into(j, "grid_parallel", c.grid.parallel);
}

void to_json(json& j, const CohortOutcome& c) {
    j = json{{"dose_index", c.dose_index},
             {"n_patients", c.n_patients},
             {"n_dlt", c.n_dlt},
             {"outcomes", c.outcomes},
             {"predictions", c.predictions}};
}

void from_json(const json& j, CohortOutcome& c) {
    c.dose_index = required<std::size_t>(j, "dose_index");
    c.n_patients = required<int>(j, "n_patients");
    c.n_dlt = required<int>(j, "n_dlt");
    c.outcomes = required<std::vector<int>>(j, "outcomes");
    c.predictions = required<std::vector<int>>(j, "predictions");
}

void to_json(json& j, const WeightTraceEntry& e) {
    j = json{{"cohort", e.cohort}, {"kappa", e.kappa}, {"lambda", e.lambda}, {"weight", e.weight}, {"run_in", e.run_in}};
}

void from_json(const json& j, WeightTraceEntry& e) {
    e.cohort = required<int>(j, "cohort");
    e.kappa = required<double>(j, "kappa");
    e.lambda = required<double>(j, "lambda");
    e.weight = required<double>(j, "weight");
    e.run_in = required<bool>(j, "run_in");
}

void to_json(json& j, const PosteriorSummary& s) {
    json doses = json::array();
    for (const auto& d : s.doses)
        doses.push_back({{"dose", d.dose},
                         {"median", d.median},
                         {"mean", d.mean},
                         {"sd", d.sd},
                         {"pr_under", d.pr_under},
                         {"pr_target", d.pr_target},
                         {"pr_over", d.pr_over},
                         {"pr_dlt", d.pr_dlt}});
    j = json{{"posterior_weight", s.posterior_weight}, {"doses", doses}};
}

BvnRecord published_dog_prior() { return {{-0.524, 0.147, 0.151, -0.008, 0.001}, 28.0, 0.0}; }

AnimalStudy dog_study() { return {20.0, {{0.1, 1, 29}, {2.7, 17, 13}}}; }

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_text_file_atomic(const std::filesystem::path& path, const std::string& text) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw std::runtime_error("cannot write " + tmp.string());
    std::size_t off = 0;
    while (off < text.size()) {
        const ssize_t n = ::write(fd, text.data() + off, text.size() - off);
        if (n <= 0) {
            ::close(fd);
            throw std::runtime_error("short write to " + tmp.string());
        }
        off += std::size_t(n);
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) throw std::runtime_error("cannot flush " + tmp.string());
    std::filesystem::rename(tmp, path);
}

DesignFile parse_design(const json& j) {
    DesignFile d;
    d.grid = j.contains("grid") ? required<DoseGrid>(j, "grid") : reference_dose_grid();
    if (j.contains("animal_study")) d.study = required<AnimalStudy>(j, "animal_study");
    if (j.contains("informative")) d.informative = required<BvnRecord>(j, "informative");
    if (j.contains("weak")) d.weak = required<BvnParams>(j, "weak");
    if (j.contains("trial")) d.trial = required<TrialConfig>(j, "trial");
    try {
        d.trial.validate(d.grid);
    } catch (const FieldError&) {
        throw;
    } catch (const std::exception& e) {
        throw FieldError("trial", e.what());
    }
    return d;
}

ScenarioFile parse_scenarios(const json& j) {
    ScenarioFile f;
    f.grid = j.contains("grid") ? required<DoseGrid>(j, "grid") : reference_dose_grid();
    f.scenarios = j.contains("scenarios") ? required<std::vector<Scenario>>(j, "scenarios") : scenario_table();
    for (const auto& s : f.scenarios) {
        if (s.true_risks.size() != f.grid.size()) throw FieldError("scenarios", s.name + " has the wrong length");
        if (s.mtd_index >= f.grid.size()) throw FieldError("scenarios", s.name + " mtd_index out of range");
    }
    return f;
}

}  // namespace escalate
