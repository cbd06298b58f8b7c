#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "escalate/animal_prior.hpp"
#include "escalate/trial_engine.hpp"

namespace httplib {
class Server;
}

namespace escalate {

struct HttpResponse {
    int status = 200;
    std::string body;
};

struct SessionLogEntry {
    std::string time;
    std::string action;
    std::string idempotency_key;
};

/// One trial as stored on disk: the engine state plus service bookkeeping.
struct SessionRecord {
    std::string session_id;
    std::string created;
    std::string updated;
    TrialState trial;
    std::vector<SessionLogEntry> log;                 // append-only
    std::map<std::string, std::string> replies;       // idempotency key -> response body
};

/// One JSON document per session under `dir`, replaced atomically. Writers
/// hold an exclusive flock on a sibling lock file; readers a shared one.
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path dir);

    std::filesystem::path path_of(const std::string& id) const;
    bool exists(const std::string& id) const;
    SessionRecord load(const std::string& id) const;  // throws std::out_of_range if absent
    void save(const SessionRecord& r) const;
    /// Raw bytes of the stored document (for state hashing).
    std::string raw(const std::string& id) const;

    std::optional<std::string> session_for_key(const std::string& key) const;
    void bind_key(const std::string& key, const std::string& id) const;

    class Lock {
    public:
        Lock(const std::filesystem::path& file, bool exclusive);
        ~Lock();
        Lock(const Lock&) = delete;
        Lock& operator=(const Lock&) = delete;

    private:
        int fd_ = -1;
    };
    Lock lock(const std::string& id, bool exclusive) const;

private:
    std::filesystem::path dir_;
};

std::uint64_t fnv1a64(const std::string& bytes);

struct ServiceOptions {
    std::filesystem::path data_dir = "sessions";
    FitOptions fit;
};

/// Request handlers independent of the HTTP transport.
class TrialService {
public:
    explicit TrialService(ServiceOptions opts);

    HttpResponse create_trial(const std::string& body, const std::string& idempotency_key = "");
    HttpResponse add_cohort(const std::string& id, const std::string& body, const std::string& idempotency_key = "");
    HttpResponse whatif(const std::string& id, const std::map<std::string, std::string>& query);
    HttpResponse get_trial(const std::string& id);
    HttpResponse get_trace(const std::string& id);
    HttpResponse health() const;

    const SessionStore& store() const { return store_; }

    /// Register all routes on a cpp-httplib server.
    void mount(httplib::Server& server);

private:
    BvnFit fitted_prior(const AnimalStudy& study, const DoseGrid& grid);
    std::string trial_view(const SessionRecord& r, const TrialEngine& engine) const;

    ServiceOptions opts_;
    SessionStore store_;
    std::mutex create_mu_;
    std::mutex fit_mu_;
    std::map<std::uint64_t, BvnFit> fit_cache_;
};

}  // namespace escalate
