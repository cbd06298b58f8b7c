#include "escalate/sim_harness.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include <omp.h>

#include "escalate/config.hpp"
#include "escalate/errors.hpp"
#include "escalate/seeding.hpp"

namespace escalate {

ProcedureSpec ProcedureSpec::standard(char id, double u01) {
    ProcedureSpec p;
    p.id = id;
    p.utilities = UtilityTable::with_false_alarm_utility(u01);
    switch (id) {
        case 'A': break;
        case 'B': p.run_in = true; break;
        case 'C': p.weight_policy = WeightPolicy::fixed; p.fixed_weight = 0.5; break;
        case 'D': p.weight_policy = WeightPolicy::fixed; p.fixed_weight = 1.0; break;
        case 'E': p.weight_policy = WeightPolicy::fixed; p.fixed_weight = 0.0; break;
        default: throw DataError(std::string("unknown procedure ") + id);
    }
    return p;
}

TrialConfig ProcedureSpec::configure(TrialConfig base) const {
    base.weight_policy = weight_policy;
    base.fixed_weight = fixed_weight;
    base.run_in = run_in;
    base.lambda_mode = lambda_mode;
    base.utilities = utilities;
    return base;
}

std::vector<ProcedureSpec> parse_procedures(const std::string& csv, double u01) {
    std::vector<ProcedureSpec> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.size() != 1) throw DataError("procedure ids are single letters A-E, got '" + tok + "'");
        out.push_back(ProcedureSpec::standard(tok[0], u01));
    }
    if (out.empty()) throw DataError("no procedures given");
    return out;
}

StudyDesign reference_study_design() {
    StudyDesign d;
    d.grid = reference_dose_grid();
    d.informative = published_dog_prior().params;
    d.weak = weakly_informative_prior(d.grid);
    d.base.cohort_size = 3;
    d.base.max_cohorts = 7;
    d.base.start_dose = d.grid.index_of(4.0);
    return d;
}

TrialResult simulate_trial(const TrialEngine& engine, const Scenario& scenario, std::uint64_t seed) {
    const auto& cfg = engine.config();
    if (scenario.true_risks.size() != engine.grid().size()) throw DataError("scenario does not match the dose grid");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    TrialResult r{engine.start(seed), std::nullopt};
    std::vector<int> outcomes(cfg.cohort_size);
    while (r.state.status == TrialStatus::enrolling) {
        const std::size_t dose = *r.state.next_dose;
        for (int& y : outcomes) y = unif(rng) < scenario.true_risks[dose] ? 1 : 0;
        engine.record_cohort(r.state, dose, outcomes);
    }
    r.mtd = engine.select_mtd(r.state);
    return r;
}

const OcCell& OperatingCharacteristics::cell(const std::string& scenario, char procedure) const {
    for (const auto& c : cells)
        if (c.scenario == scenario && c.procedure == procedure) return c;
    throw DataError("no result for " + scenario + " / " + procedure);
}

namespace {

struct ReplicateOutcome {
    int selected = -1;  // -1 stopped early, -2 completed without selection
    std::vector<int> patients;
};

ReplicateOutcome one_replicate(const TrialEngine& engine, const Scenario& s, std::uint64_t seed) {
    const TrialResult t = simulate_trial(engine, s, seed);
    ReplicateOutcome o;
    o.patients.assign(engine.grid().size(), 0);
    for (const auto& c : t.state.history) o.patients[c.dose_index] += c.n_patients;
    if (t.state.status == TrialStatus::stopped_early) o.selected = -1;
    else o.selected = t.mtd ? int(*t.mtd) : -2;
    return o;
}

}  // namespace

OperatingCharacteristics run_study(const StudyDesign& design, const std::vector<Scenario>& scenarios,
                                   const std::vector<ProcedureSpec>& procedures, int n_replicates,
                                   std::uint64_t master_seed, Parallelism par) {
    if (n_replicates < 1) throw DomainError("need at least one replicate");
    const auto t0 = std::chrono::steady_clock::now();
    OperatingCharacteristics oc;
    oc.doses = design.grid.doses;
    const std::size_t nd = design.grid.size();
    oc.threads = par.parallel ? (par.threads > 0 ? par.threads : omp_get_max_threads()) : 1;

    std::vector<TrialEngine> engines;
    engines.reserve(procedures.size());
    for (const auto& p : procedures) engines.emplace_back(design.grid, design.informative, design.weak,
                                                         p.configure(design.base));

    std::vector<ReplicateOutcome> reps(static_cast<std::size_t>(n_replicates));
    for (std::size_t si = 0; si < scenarios.size(); ++si) {
        const Scenario& sc = scenarios[si];
        for (std::size_t pi = 0; pi < procedures.size(); ++pi) {
            const TrialEngine& engine = engines[pi];
            if (par.parallel) {
#pragma omp parallel for schedule(dynamic, 4) num_threads(oc.threads)
                for (int r = 0; r < n_replicates; ++r)
                    reps[r] = one_replicate(engine, sc, derive_seed(master_seed, {si, std::uint64_t(r)}));
            } else {
                for (int r = 0; r < n_replicates; ++r)
                    reps[r] = one_replicate(engine, sc, derive_seed(master_seed, {si, std::uint64_t(r)}));
            }

            OcCell cell;
            cell.scenario = sc.name;
            cell.procedure = procedures[pi].id;
            cell.mtd_index = sc.mtd_index;
            cell.n_replicates = n_replicates;
            cell.pct_selecting.assign(nd, 0.0);
            cell.mean_patients.assign(nd, 0.0);
            std::vector<long> sel(nd, 0), pts(nd, 0);
            long stopped = 0, none = 0;
            for (const auto& o : reps) {
                if (o.selected == -1) ++stopped;
                else if (o.selected == -2) ++none;
                else ++sel[std::size_t(o.selected)];
                for (std::size_t i = 0; i < nd; ++i) pts[i] += o.patients[i];
            }
            const double n = n_replicates;
            cell.pct_stopped_early = 100.0 * double(stopped) / n;
            cell.pct_no_selection = 100.0 * double(none) / n;
            for (std::size_t i = 0; i < nd; ++i) {
                cell.pct_selecting[i] = 100.0 * double(sel[i]) / n;
                cell.mean_patients[i] = double(pts[i]) / n;
            }
            oc.cells.push_back(std::move(cell));
        }
    }
    oc.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return oc;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
}

std::string dose_label(double d) {
    std::ostringstream os;
    os << d;
    return os.str();
}

}  // namespace

void write_report(const OperatingCharacteristics& oc, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ostringstream sel, alloc;
    sel << std::setprecision(12);
    alloc << std::setprecision(12);
    sel << "scenario,procedure,n_replicates,mtd_dose,stopped_early,no_selection";
    alloc << "scenario,procedure,n_replicates";
    for (double d : oc.doses) {
        sel << ",sel_" << dose_label(d);
        alloc << ",n_" << dose_label(d);
    }
    sel << ",pcs\n";
    alloc << ",total\n";
    json plot = {{"doses", oc.doses}, {"seconds", oc.seconds}, {"threads", oc.threads}, {"panels", json::array()}};
    for (const auto& c : oc.cells) {
        sel << c.scenario << ',' << c.procedure << ',' << c.n_replicates << ',' << oc.doses[c.mtd_index] << ','
            << c.pct_stopped_early << ',' << c.pct_no_selection;
        alloc << c.scenario << ',' << c.procedure << ',' << c.n_replicates;
        double total = 0.0;
        for (std::size_t i = 0; i < oc.doses.size(); ++i) {
            sel << ',' << c.pct_selecting[i];
            alloc << ',' << c.mean_patients[i];
            total += c.mean_patients[i];
        }
        sel << ',' << c.pct_correct() << '\n';
        alloc << ',' << total << '\n';
        plot["panels"].push_back({{"scenario", c.scenario},
                                  {"procedure", std::string(1, c.procedure)},
                                  {"mtd_dose", oc.doses[c.mtd_index]},
                                  {"stopped_early", c.pct_stopped_early},
                                  {"no_selection", c.pct_no_selection},
                                  {"selection", c.pct_selecting},
                                  {"allocation", c.mean_patients}});
    }
    write_text_file_atomic(dir / "oc.csv", sel.str());
    write_text_file_atomic(dir / "alloc.csv", alloc.str());
    write_text_file_atomic(dir / "plotdata.json", plot.dump(1));
}

OperatingCharacteristics load_report(const std::filesystem::path& dir) {
    std::ifstream sel(dir / "oc.csv"), alloc(dir / "alloc.csv");
    if (!sel || !alloc) throw DataError("report files missing in " + dir.string());
    OperatingCharacteristics oc;
    std::string line;
    std::getline(sel, line);
    const auto head = split_csv(line);
    for (const auto& h : head)
        if (h.rfind("sel_", 0) == 0) oc.doses.push_back(std::stod(h.substr(4)));
    const std::size_t nd = oc.doses.size();
    while (std::getline(sel, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 7 + nd) throw DataError("malformed oc.csv row: " + line);
        OcCell c;
        c.scenario = f[0];
        c.procedure = f[1].at(0);
        c.n_replicates = std::stoi(f[2]);
        c.mtd_index = std::size_t(std::find(oc.doses.begin(), oc.doses.end(), std::stod(f[3])) - oc.doses.begin());
        c.pct_stopped_early = std::stod(f[4]);
        c.pct_no_selection = std::stod(f[5]);
        for (std::size_t i = 0; i < nd; ++i) c.pct_selecting.push_back(std::stod(f[6 + i]));
        oc.cells.push_back(std::move(c));
    }
    std::getline(alloc, line);
    std::size_t k = 0;
    while (std::getline(alloc, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 4 + nd || k >= oc.cells.size() || f[0] != oc.cells[k].scenario)
            throw DataError("alloc.csv does not match oc.csv");
        for (std::size_t i = 0; i < nd; ++i) oc.cells[k].mean_patients.push_back(std::stod(f[3 + i]));
        ++k;
    }
    if (k != oc.cells.size()) throw DataError("alloc.csv does not match oc.csv");
    return oc;
}

}  // namespace escalate
