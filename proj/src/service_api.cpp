#include "escalate/service_api.hpp"

#include <chrono>
#include <ctime>
#include <fcntl.h>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <sys/file.h>
#include <unistd.h>

#include <httplib.h>

#include "escalate/config.hpp"
#include "escalate/errors.hpp"

namespace escalate {

namespace {

std::string now_iso() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string new_session_id() {
    std::random_device rd;
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (int i = 0; i < 4; ++i) os << std::setw(8) << rd();
    return os.str();
}

bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 64) return false;
    for (char c : id)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
    return true;
}

HttpResponse reply(int status, const json& j) { return {status, j.dump()}; }

HttpResponse error_reply(int status, const std::string& msg, const std::string& field = "") {
    json j{{"error", msg}};
    if (!field.empty()) j["field"] = field;
    return reply(status, j);
}

// Maps engine exceptions onto status codes.
template <class F>
HttpResponse guarded(F&& f) {
    try {
        return f();
    } catch (const FieldError& e) {
        return error_reply(422, e.what(), e.field());
    } catch (const ProtocolError& e) {
        return error_reply(409, e.what());
    } catch (const StateError& e) {
        return error_reply(410, e.what());
    } catch (const DataError& e) {
        return error_reply(422, e.what());
    } catch (const DomainError& e) {
        return error_reply(422, e.what());
    } catch (const json::exception& e) {
        return error_reply(422, std::string("malformed request body: ") + e.what());
    } catch (const std::out_of_range& e) {
        return error_reply(404, e.what());
    } catch (const std::exception& e) {
        return error_reply(500, e.what());
    }
}

json parse_body(const std::string& body) {
    try {
        return json::parse(body.empty() ? "{}" : body);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("request body is not valid JSON: ") + e.what());
    }
}

std::size_t dose_index(const DoseGrid& grid, double dose) {
    try {
        return grid.index_of(dose);
    } catch (const DomainError&) {
        throw FieldError("dose", "not a grid dose");
    }
}

json dose_or_null(const DoseGrid& g, std::optional<std::size_t> i) { return i ? json(g.doses[*i]) : json(nullptr); }

json record_to_json(const SessionRecord& r) {
    json log = json::array();
    for (const auto& e : r.log) log.push_back({{"time", e.time}, {"action", e.action}, {"idempotency_key", e.idempotency_key}});
    return json{{"session_id", r.session_id},
                {"created", r.created},
                {"updated", r.updated},
                {"trial", json::parse(save_session(r.trial))},
                {"log", log},
                {"replies", r.replies}};
}

SessionRecord record_from_json(const json& j) {
    SessionRecord r;
    r.session_id = j.at("session_id").get<std::string>();
    r.created = j.at("created").get<std::string>();
    r.updated = j.at("updated").get<std::string>();
    r.trial = load_session(j.at("trial").dump());
    for (const auto& e : j.at("log"))
        r.log.push_back({e.at("time").get<std::string>(), e.at("action").get<std::string>(),
                         e.at("idempotency_key").get<std::string>()});
    r.replies = j.at("replies").get<std::map<std::string, std::string>>();
    return r;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

SessionStore::SessionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_ / "keys");
}

std::filesystem::path SessionStore::path_of(const std::string& id) const { return dir_ / (id + ".json"); }

bool SessionStore::exists(const std::string& id) const { return valid_id(id) && std::filesystem::exists(path_of(id)); }

std::string SessionStore::raw(const std::string& id) const {
    if (!exists(id)) throw std::out_of_range("unknown session " + id);
    std::ifstream in(path_of(id));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SessionRecord SessionStore::load(const std::string& id) const {
    const std::string text = raw(id);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError("session file is corrupt: " + std::string(e.what()));
    }
    return record_from_json(j);
}

void SessionStore::save(const SessionRecord& r) const {
    write_text_file_atomic(path_of(r.session_id), record_to_json(r).dump(1));
}

std::optional<std::string> SessionStore::session_for_key(const std::string& key) const {
    const auto p = dir_ / "keys" / std::to_string(fnv1a64(key));
    if (!std::filesystem::exists(p)) return std::nullopt;
    std::ifstream in(p);
    std::string id;
    in >> id;
    return id;
}

void SessionStore::bind_key(const std::string& key, const std::string& id) const {
    write_text_file_atomic(dir_ / "keys" / std::to_string(fnv1a64(key)), id);
}

SessionStore::Lock::Lock(const std::filesystem::path& file, bool exclusive) {
    fd_ = ::open(file.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open lock " + file.string());
    if (::flock(fd_, exclusive ? LOCK_EX : LOCK_SH) != 0) {
        ::close(fd_);
        throw std::runtime_error("cannot lock " + file.string());
    }
}

SessionStore::Lock::~Lock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

SessionStore::Lock SessionStore::lock(const std::string& id, bool exclusive) const {
    if (!valid_id(id)) throw std::out_of_range("unknown session " + id);
    return Lock(dir_ / (id + ".lock"), exclusive);
}

TrialService::TrialService(ServiceOptions opts) : opts_(std::move(opts)), store_(opts_.data_dir) {}

BvnFit TrialService::fitted_prior(const AnimalStudy& study, const DoseGrid& grid) {
    const std::uint64_t key = fnv1a64(json{{"study", study}, {"grid", grid}}.dump());
    std::lock_guard<std::mutex> g(fit_mu_);
    if (auto it = fit_cache_.find(key); it != fit_cache_.end()) return it->second;
    const auto cache_file = opts_.data_dir / ("fit-" + std::to_string(key) + ".json");
    if (std::filesystem::exists(cache_file)) {
        const BvnRecord rec = read_json_file(cache_file).get<BvnRecord>();
        BvnFit f{rec.params, rec.delta, 0};
        fit_cache_[key] = f;
        return f;
    }
    const BvnFit f = fit_bvn(percentile_table(study, grid), grid, opts_.fit);
    write_text_file_atomic(cache_file, json(BvnRecord{f.params, grid.d_ref, f.delta}).dump(1));
    fit_cache_[key] = f;
    return f;
}

std::string TrialService::trial_view(const SessionRecord& r, const TrialEngine& engine) const {
    const TrialState& s = r.trial;
    json j{{"session_id", r.session_id},
           {"created", r.created},
           {"updated", r.updated},
           {"status", to_string(s.status)},
           {"cohorts_done", s.cohorts_done()},
           {"max_cohorts", s.config.max_cohorts},
           {"cohort_size", s.config.cohort_size},
           {"current_weight", s.current_weight()},
           {"next_dose", dose_or_null(s.grid, s.next_dose)},
           {"summary", engine.summary(s)},
           {"history", s.history},
           {"trace", s.trace},
           {"log", json::array()}};
    for (const auto& e : r.log) j["log"].push_back({{"time", e.time}, {"action", e.action}});
    if (s.status == TrialStatus::enrolling) {
        const Recommendation rec = engine.recommend_next(s);
        j["recommendation"] = {{"dose", dose_or_null(s.grid, rec.dose)}, {"stop", rec.stop},
                               {"prob_overdose", rec.prob_overdose}};
    } else {
        j["mtd"] = dose_or_null(s.grid, engine.select_mtd(s));
    }
    j["state"] = json::parse(save_session(s));
    return j.dump();
}

HttpResponse TrialService::create_trial(const std::string& body, const std::string& key) {
    return guarded([&]() -> HttpResponse {
        std::lock_guard<std::mutex> g(create_mu_);
        if (!key.empty())
            if (auto id = store_.session_for_key(key); id && store_.exists(*id)) {
                const SessionRecord r = store_.load(*id);
                if (auto it = r.replies.find("create:" + key); it != r.replies.end()) return {201, it->second};
            }

        const json req = parse_body(body);
        const DesignFile design = parse_design(req);
        if (!design.study && !design.informative)
            throw FieldError("animal_study", "either animal_study or informative is required");

        json prior_info;
        BvnParams informative;
        if (design.informative) {
            informative = design.informative->params;
            prior_info = {{"source", "record"}, {"params", informative}, {"delta", design.informative->delta}};
        } else {
            const BvnFit f = fitted_prior(*design.study, design.grid);
            informative = f.params;
            prior_info = {{"source", "fit"}, {"params", informative}, {"delta", f.delta}};
        }
        prior_info["cov_inflation"] = design.trial.cov_inflation;
        const BvnParams weak = design.weak ? *design.weak : weakly_informative_prior(design.grid);
        std::uint64_t seed = fnv1a64(body);
        if (req.contains("seed")) seed = req.at("seed").get<std::uint64_t>();

        const TrialEngine engine(design.grid, informative, weak, design.trial);
        SessionRecord r;
        r.session_id = new_session_id();
        r.created = r.updated = now_iso();
        r.trial = engine.start(seed);
        r.log.push_back({r.created, "create", key});

        const MixtureBelief animal = mixture_posterior(engine.prior_belief(1.0), {}, design.trial.grid);
        std::vector<double> below;
        for (std::size_t i = 0; i < design.grid.size(); ++i)
            below.push_back(animal.risk_cdf(i, design.trial.start_safe_risk));
        json out{{"session_id", r.session_id},
                 {"prior", prior_info},
                 {"prior_summary", summarize(animal, design.grid)},
                 {"pr_below_start_risk", below},
                 {"start_safe_risk", design.trial.start_safe_risk},
                 {"predictions", r.trial.predictions},
                 {"start_dose", dose_or_null(design.grid, r.trial.next_dose)},
                 {"status", to_string(r.trial.status)}};
        const std::string text = out.dump();
        if (!key.empty()) r.replies["create:" + key] = text;
        store_.save(r);
        if (!key.empty()) store_.bind_key(key, r.session_id);
        return {201, text};
    });
}

HttpResponse TrialService::add_cohort(const std::string& id, const std::string& body, const std::string& key) {
    return guarded([&]() -> HttpResponse {
        if (!store_.exists(id)) return error_reply(404, "unknown session " + id);
        auto lk = store_.lock(id, true);
        SessionRecord r = store_.load(id);
        if (!key.empty())
            if (auto it = r.replies.find("cohort:" + key); it != r.replies.end()) return {200, it->second};
        if (r.trial.status != TrialStatus::enrolling) return error_reply(410, "trial is no longer enrolling");

        const json req = parse_body(body);
        if (!req.contains("dose")) throw FieldError("dose", "missing");
        if (!req.contains("outcomes")) throw FieldError("outcomes", "missing");
        const std::size_t dose = dose_index(r.trial.grid, req.at("dose").get<double>());
        std::vector<int> outcomes;
        try {
            outcomes = req.at("outcomes").get<std::vector<int>>();
        } catch (const json::exception&) {
            throw FieldError("outcomes", "expected an array of 0/1");
        }
        if (req.contains("expected_cohort") && req.at("expected_cohort").get<int>() != r.trial.cohorts_done() + 1)
            return error_reply(409, "cohort index is stale; reload the trial");
        const bool override_dose = req.value("override", false);

        const TrialEngine engine = TrialEngine::for_state(r.trial);
        engine.record_cohort(r.trial, dose, outcomes, override_dose);
        r.updated = now_iso();
        r.log.push_back({r.updated, override_dose ? "cohort (override)" : "cohort", key});

        const TrialState& s = r.trial;
        json out{{"session_id", id},
                 {"cohort", s.cohorts_done()},
                 {"trace_entry", s.trace.back()},
                 {"status", to_string(s.status)},
                 {"next_dose", dose_or_null(s.grid, s.next_dose)},
                 {"stop", s.status == TrialStatus::stopped_early},
                 {"summary", engine.summary(s)}};
        if (s.status != TrialStatus::enrolling) out["mtd"] = dose_or_null(s.grid, engine.select_mtd(s));
        const std::string text = out.dump();
        if (!key.empty()) r.replies["cohort:" + key] = text;
        store_.save(r);  // persisted before the reply leaves
        return {200, text};
    });
}

HttpResponse TrialService::whatif(const std::string& id, const std::map<std::string, std::string>& query) {
    return guarded([&]() -> HttpResponse {
        if (!store_.exists(id)) return error_reply(404, "unknown session " + id);
        auto lk = store_.lock(id, false);
        const SessionRecord r = store_.load(id);
        if (r.trial.status != TrialStatus::enrolling) return error_reply(410, "trial is no longer enrolling");
        const TrialEngine engine = TrialEngine::for_state(r.trial);

        auto num = [&](const char* k) -> std::optional<double> {
            const auto it = query.find(k);
            if (it == query.end() || it->second.empty()) return std::nullopt;
            try {
                std::size_t used = 0;
                const double v = std::stod(it->second, &used);
                if (used != it->second.size()) throw std::invalid_argument(k);
                return v;
            } catch (const std::logic_error&) {
                throw FieldError(k, "not a number");
            }
        };
        const int n = int(num("n").value_or(r.trial.config.cohort_size));
        json out{{"session_id", id}, {"non_binding", true}};
        if (n == 0) {
            out["summary"] = engine.summary(r.trial);
            out["next_dose"] = dose_or_null(r.trial.grid, r.trial.next_dose);
            out["weight"] = r.trial.current_weight();
            return reply(200, out);
        }
        const auto dose_v = num("dose");
        if (!dose_v) throw FieldError("dose", "missing");
        const std::size_t dose = dose_index(r.trial.grid, *dose_v);
        const int dlts = int(num("dlts").value_or(0));
        if (dlts < 0 || dlts > n) throw FieldError("dlts", "must lie between 0 and n");
        std::vector<int> outcomes(std::size_t(n), 0);
        std::fill(outcomes.begin(), outcomes.begin() + dlts, 1);

        TrialState hypo = r.trial;
        engine.record_cohort(hypo, dose, outcomes, true);
        out["trace_entry"] = hypo.trace.back();
        out["weight"] = hypo.trace.back().weight;
        out["status"] = to_string(hypo.status);
        out["next_dose"] = dose_or_null(hypo.grid, hypo.next_dose);
        out["summary"] = engine.summary(hypo);
        return reply(200, out);
    });
}

HttpResponse TrialService::get_trial(const std::string& id) {
    return guarded([&]() -> HttpResponse {
        if (!store_.exists(id)) return error_reply(404, "unknown session " + id);
        auto lk = store_.lock(id, false);
        const SessionRecord r = store_.load(id);
        return {200, trial_view(r, TrialEngine::for_state(r.trial))};
    });
}

HttpResponse TrialService::get_trace(const std::string& id) {
    return guarded([&]() -> HttpResponse {
        if (!store_.exists(id)) return error_reply(404, "unknown session " + id);
        auto lk = store_.lock(id, false);
        const SessionRecord r = store_.load(id);
        return reply(200, json{{"session_id", id}, {"trace", r.trial.trace}});
    });
}

HttpResponse TrialService::health() const { return reply(200, json{{"status", "ok"}}); }

void TrialService::mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const HttpResponse& r) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Post("/trials", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, create_trial(req.body, req.get_header_value("Idempotency-Key")));
    });
    server.Post(R"(/trials/([A-Za-z0-9_-]+)/cohorts)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, add_cohort(req.matches[1], req.body, req.get_header_value("Idempotency-Key")));
    });
    server.Get(R"(/trials/([A-Za-z0-9_-]+)/whatif)", [this, send](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> q;
        for (const auto& [k, v] : req.params) q[k] = v;
        send(res, whatif(req.matches[1], q));
    });
    server.Get(R"(/trials/([A-Za-z0-9_-]+)/trace)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, get_trace(req.matches[1]));
    });
    server.Get(R"(/trials/([A-Za-z0-9_-]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, get_trial(req.matches[1]));
    });
}

}  // namespace escalate
