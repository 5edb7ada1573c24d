#pragma once

// Control plane: slice lifecycle through a single-writer command core, the
// per-slice runner that drives an eNB/UE endpoint pair, and the JSON
// request/reply envelope shared by the TCP and HTTP front doors.

#include "pvran/pvback.hpp"
#include "pvran/remoting.hpp"
#include "pvran/slicestack.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace pvran::orchestrator {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class SliceState { requested, running, stopping, stopped };

std::string to_string(SliceState state);

struct SliceTraffic {
    std::size_t payload_bytes = 64;
    std::size_t every_n_subframes = 1;
};

struct SliceDescriptor {
    SliceConfig config;
    SliceTraffic traffic;
    SliceState state = SliceState::requested;
    /// Bumped by every restart (set_band).
    std::uint32_t generation = 0;
    std::string last_error;
};

json to_json(const SliceDescriptor& d);
json to_json(const FdmPlan& plan);

class OrchestrationError : public std::runtime_error {
public:
    enum class Errc {
        bad_request,
        unsupported_schema,
        unknown_verb,
        unknown_slice,
        unknown_phy,
        slice_exists,
        invalid_channel,
        fdm_conflict,
        channel_in_use,
        backend_failure,
    };
    OrchestrationError(Errc code, const std::string& what, json detail = json::object())
        : std::runtime_error(what), code_(code), detail_(std::move(detail)) {}
    Errc code() const { return code_; }
    const json& detail() const { return detail_; }

private:
    Errc code_;
    json detail_;
};

std::string to_string(OrchestrationError::Errc code);

/// Parses a create body; throws bad_request / unknown_phy before any backend contact.
SliceDescriptor descriptor_from_json(const json& body);

// ---------------------------------------------------------------------------

struct RunnerOptions {
    SliceConfig config;
    const slicestack::PhyProfile* phy = &slicestack::PhyProfile::phy_a();
    SliceTraffic traffic;
    radio::UeLinkConfig link;
    std::uint64_t report_every = 50;
    remoting::FrontendOptions frontend;
};

struct RunnerStats {
    slicestack::EndpointStats enb;
    slicestack::EndpointStats ue;
};

/// One slice's live stack: an eNB endpoint on a RemoteDevice (INIT through
/// the dispatcher) and a UE endpoint on the radio channel, each on its own thread.
class SliceRunner {
public:
    /// Returns once INIT succeeded and both threads run. The control channel
    /// for the slice must already be open. Throws DeviceError on INIT failure.
    static std::unique_ptr<SliceRunner> start(pvback::Backend& backend, const vchan::RendezvousStore& store,
                                              RunnerOptions options);
    ~SliceRunner();
    SliceRunner(const SliceRunner&) = delete;
    SliceRunner& operator=(const SliceRunner&) = delete;

    /// Graceful stop: both loops end, the frontend sends SHUTDOWN.
    RunnerStats stop();
    /// Ends the eNB loop and drops its channels without SHUTDOWN.
    void kill_frontend();

    RunnerStats stats() const;
    /// Both endpoint threads have returned.
    bool finished() const { return enb_done_ && ue_done_; }
    std::string error() const;

private:
    explicit SliceRunner(RunnerOptions options);

    RunnerOptions options_;
    std::unique_ptr<remoting::RemoteDevice> enb_;
    std::unique_ptr<slicestack::UeDevice> ue_;
    std::atomic<bool> enb_stop_{false};
    std::atomic<bool> ue_stop_{false};
    std::atomic<bool> killed_{false};
    std::atomic<bool> enb_done_{false};
    std::atomic<bool> ue_done_{false};
    std::thread enb_thread_;
    std::thread ue_thread_;
    mutable std::mutex mu_;
    RunnerStats stats_;
    std::string error_;
    bool stopped_ = false;
};

// ---------------------------------------------------------------------------

enum class Verb { create, destroy, list, metrics, set_band };

std::string to_string(Verb verb);
std::optional<Verb> verb_from_string(const std::string& name);

struct SliceMetrics {
    SliceId slice_id;
    SliceState state = SliceState::requested;
    std::string phy_profile;
    int prbs = 0;
    double dl_goodput_bps = 0;
    double ul_goodput_bps = 0;
    double loss_rate = 0;
    double latency_mean_us = 0;
    std::uint64_t frames_received = 0;
    std::uint64_t cross_slice_frames = 0;
    std::uint64_t foreign_samples = 0;
    std::uint64_t underruns = 0;
    std::uint64_t overruns = 0;
    std::size_t ring_high_water = 0;
    std::size_t ring_capacity = 0;
    double achieved_rate = 0;
    std::uint64_t subframes = 0;

    double goodput_bps() const { return dl_goodput_bps + ul_goodput_bps; }
};

struct MetricsSnapshot {
    std::uint64_t seq = 0;
    std::int64_t timestamp_ms = 0;
    std::vector<SliceMetrics> slices;
    std::size_t active_slices = 0;
    FdmPlan plan;
};

json to_json(const MetricsSnapshot& s);

/// Everything a read sees, published whole after every change.
struct View {
    std::uint64_t version = 0;
    std::vector<SliceDescriptor> descriptors;
    MetricsSnapshot metrics;
};

/// Handed to the audit hook after every mutation, from the command thread.
struct AuditView {
    std::vector<SliceDescriptor> descriptors;
    FdmPlan backend_plan;
    std::vector<SliceId> backend_sessions;
};

struct OrchestratorOptions {
    radio::RadioOptions radio;
    vchan::Backing backing = vchan::Backing::memory;
    radio::UeLinkConfig ue_link;
    std::uint64_t report_every = 50;
    /// Reconcile and metrics refresh cadence of the command thread.
    std::chrono::milliseconds refresh_period{100};
    remoting::FrontendOptions frontend;

    OrchestratorOptions() { radio.channels = 4; }
};

struct Reply {
    bool ok = true;
    json body = json::object();
    std::optional<OrchestrationError::Errc> error;
    std::string message;
    json detail = json::object();
};

/// Envelopes: {"schema_version", "verb", "body"} in,
/// {"schema_version", "verb", "status": "ok"|"error", "body" | "error"} out.
json to_json(Verb verb, const Reply& reply);

class Orchestrator {
public:
    explicit Orchestrator(OrchestratorOptions options = {});
    ~Orchestrator();
    Orchestrator(const Orchestrator&) = delete;
    Orchestrator& operator=(const Orchestrator&) = delete;

    /// Mutations queue on the command thread; list and metrics read the published view.
    Reply execute(Verb verb, const json& body);
    /// Full envelope in, full envelope out; never throws on bad input.
    json handle(const json& request);
    json handle_text(const std::string& text);

    std::shared_ptr<const View> view() const;
    void set_audit(std::function<void(const AuditView&)> audit);
    /// Requests accepted so far, in execution order (for replay).
    std::vector<json> command_log() const;

    pvback::Backend& backend() { return *backend_; }
    radio::VirtualRadio& radio() { return *radio_; }
    /// Fault injection: crash the slice's frontend without touching the control plane.
    void kill_frontend(SliceId id);

private:
    struct Job {
        Verb verb;
        json body;
        std::promise<Reply> done;
    };
    struct Entry {
        SliceDescriptor descriptor;
        std::unique_ptr<SliceRunner> runner;
        RunnerStats final_stats;
    };

    void loop();
    Reply run(Verb verb, const json& body);
    json create(const json& body);
    json destroy(const json& body);
    json set_band(const json& body);
    void launch(Entry& e);
    RunnerStats halt(Entry& e);
    void reconcile();
    void publish();
    void audit();
    SliceMetrics metrics_for(const Entry& e) const;

    OrchestratorOptions options_;
    std::shared_ptr<radio::VirtualRadio> radio_;
    vchan::RendezvousStore store_;
    std::unique_ptr<pvback::Backend> backend_;
    std::unique_ptr<remoting::Dispatcher> dispatcher_;

    std::map<SliceId, Entry> entries_;  // command thread only
    std::uint64_t version_ = 0;
    std::shared_ptr<const View> view_;

    std::mutex queue_mu_;
    std::condition_variable queue_cv_;
    std::deque<std::shared_ptr<Job>> queue_;
    bool stopping_ = false;
    std::thread thread_;

    mutable std::mutex log_mu_;
    std::vector<json> log_;
    std::function<void(const AuditView&)> audit_;
    std::vector<SliceId> kill_requests_;
    std::vector<std::shared_ptr<std::promise<void>>> kill_done_;
};

}  // namespace pvran::orchestrator
