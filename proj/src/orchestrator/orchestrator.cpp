#include "pvran/orchestrator.hpp"

#include <algorithm>
#include <set>

namespace pvran::orchestrator {

using Errc = OrchestrationError::Errc;

std::string to_string(SliceState state) {
    switch (state) {
        case SliceState::requested: return "requested";
        case SliceState::running: return "running";
        case SliceState::stopping: return "stopping";
        case SliceState::stopped: return "stopped";
    }
    return "unknown";
}

std::string to_string(OrchestrationError::Errc code) {
    switch (code) {
        case Errc::bad_request: return "bad_request";
        case Errc::unsupported_schema: return "unsupported_schema";
        case Errc::unknown_verb: return "unknown_verb";
        case Errc::unknown_slice: return "unknown_slice";
        case Errc::unknown_phy: return "unknown_phy";
        case Errc::slice_exists: return "slice_exists";
        case Errc::invalid_channel: return "invalid_channel";
        case Errc::fdm_conflict: return "fdm_conflict";
        case Errc::channel_in_use: return "channel_in_use";
        case Errc::backend_failure: return "backend_failure";
    }
    return "unknown";
}

std::string to_string(Verb verb) {
    switch (verb) {
        case Verb::create: return "create";
        case Verb::destroy: return "destroy";
        case Verb::list: return "list";
        case Verb::metrics: return "metrics";
        case Verb::set_band: return "set_band";
    }
    return "unknown";
}

std::optional<Verb> verb_from_string(const std::string& name) {
    for (Verb v : {Verb::create, Verb::destroy, Verb::list, Verb::metrics, Verb::set_band}) {
        if (to_string(v) == name) return v;
    }
    return std::nullopt;
}

namespace {

json band_json(const Band& b) { return {{"lo_hz", b.lo_hz}, {"hi_hz", b.hi_hz}}; }

template <class T>
T field(const json& body, const char* key) {
    if (!body.contains(key)) throw OrchestrationError(Errc::bad_request, std::string("missing field \"") + key + "\"");
    try {
        return body.at(key).get<T>();
    } catch (const json::exception&) {
        throw OrchestrationError(Errc::bad_request, std::string("field \"") + key + "\" has the wrong type");
    }
}

template <class T>
T field_or(const json& body, const char* key, T fallback) {
    return body.contains(key) ? field<T>(body, key) : fallback;
}

void require_object(const json& body) {
    if (!body.is_object()) throw OrchestrationError(Errc::bad_request, "body must be a JSON object");
}

SliceId id_from(const json& body) {
    require_object(body);
    return {field<std::uint32_t>(body, "slice_id")};
}

json conflicts_json(const FdmVerdict& verdict, SliceId newcomer) {
    json out = json::array();
    for (const auto& c : verdict.conflicts) {
        const SliceId other = c.first == newcomer ? c.second : c.first;
        out.push_back({{"slice_id", other.value}, {"kind", to_string(c.kind)}});
    }
    return out;
}

std::string describe_conflicts(const FdmVerdict& verdict, SliceId newcomer) {
    std::string text;
    for (const auto& c : verdict.conflicts) {
        const SliceId other = c.first == newcomer ? c.second : c.first;
        if (!text.empty()) text += "; ";
        text += c.kind == ConflictKind::radio_channel ? "radio channel in use by slice " + std::to_string(other.value)
                                                      : to_string(c.kind) + " band overlaps slice " +
                                                            std::to_string(other.value);
    }
    return text;
}

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

json to_json(const SliceDescriptor& d) {
    const auto& c = d.config;
    json j = {
        {"slice_id", c.slice_id.value},
        {"phy_profile", c.phy_profile_name},
        {"prbs", c.profile.prbs()},
        {"dl_freq_hz", c.dl_freq_hz},
        {"ul_freq_hz", c.ul_freq_hz},
        {"rx_gain_db", c.rx_gain_db},
        {"tx_gain_db", c.tx_gain_db},
        {"radio_channel", c.radio_channel.index},
        {"traffic", {{"payload_bytes", d.traffic.payload_bytes}, {"every_n_subframes", d.traffic.every_n_subframes}}},
        {"state", to_string(d.state)},
        {"generation", d.generation},
    };
    if (c.tx_offset_override) j["tx_offset"] = *c.tx_offset_override;
    if (!d.last_error.empty()) j["last_error"] = d.last_error;
    return j;
}

json to_json(const FdmPlan& plan) {
    json out = json::array();
    for (const auto& e : plan.entries) {
        out.push_back({{"slice_id", e.slice_id.value},
                       {"dl", band_json(e.dl)},
                       {"ul", band_json(e.ul)},
                       {"radio_channel", e.radio_channel.index}});
    }
    return out;
}

json to_json(const MetricsSnapshot& s) {
    json slices = json::array();
    for (const auto& m : s.slices) {
        slices.push_back({
            {"slice_id", m.slice_id.value},
            {"state", to_string(m.state)},
            {"phy_profile", m.phy_profile},
            {"prbs", m.prbs},
            {"goodput_bps", m.goodput_bps()},
            {"dl_goodput_bps", m.dl_goodput_bps},
            {"ul_goodput_bps", m.ul_goodput_bps},
            {"loss_rate", m.loss_rate},
            {"latency_mean_us", m.latency_mean_us},
            {"frames_received", m.frames_received},
            {"cross_slice_frames", m.cross_slice_frames},
            {"foreign_samples", m.foreign_samples},
            {"underruns", m.underruns},
            {"overruns", m.overruns},
            {"ring_high_water", m.ring_high_water},
            {"ring_capacity", m.ring_capacity},
            {"ring_occupancy", m.ring_capacity ? static_cast<double>(m.ring_high_water) / m.ring_capacity : 0.0},
            {"achieved_rate", m.achieved_rate},
            {"subframes", m.subframes},
        });
    }
    return {{"seq", s.seq},
            {"timestamp_ms", s.timestamp_ms},
            {"active_slices", s.active_slices},
            {"plan", to_json(s.plan)},
            {"slices", std::move(slices)}};
}

SliceDescriptor descriptor_from_json(const json& body) {
    require_object(body);
    SliceDescriptor d;
    auto& c = d.config;
    c.slice_id = {field<std::uint32_t>(body, "slice_id")};
    c.phy_profile_name = field_or<std::string>(body, "phy_profile", "phy-a");
    const slicestack::PhyProfile* phy = nullptr;
    try {
        phy = &slicestack::PhyProfile::by_name(c.phy_profile_name);
    } catch (const slicestack::PhyError&) {
        throw OrchestrationError(Errc::unknown_phy, "unknown phy profile \"" + c.phy_profile_name + "\"");
    }
    try {
        c.profile = BandwidthProfile::from_prbs(field_or<int>(body, "prbs", 25));
    } catch (const std::invalid_argument& e) {
        throw OrchestrationError(Errc::bad_request, e.what());
    }
    c.dl_freq_hz = field<std::uint64_t>(body, "dl_freq_hz");
    c.ul_freq_hz = field<std::uint64_t>(body, "ul_freq_hz");
    if (c.dl_freq_hz == 0 || c.ul_freq_hz == 0) throw OrchestrationError(Errc::bad_request, "frequencies must be nonzero");
    c.rx_gain_db = field_or<std::int32_t>(body, "rx_gain_db", 0);
    c.tx_gain_db = field_or<std::int32_t>(body, "tx_gain_db", 0);
    c.radio_channel = {field<std::uint32_t>(body, "radio_channel")};
    if (body.contains("tx_offset")) c.tx_offset_override = field<std::uint64_t>(body, "tx_offset");
    if (body.contains("traffic")) {
        const auto& t = body.at("traffic");
        require_object(t);
        d.traffic.payload_bytes = field_or<std::size_t>(t, "payload_bytes", d.traffic.payload_bytes);
        d.traffic.every_n_subframes = field_or<std::size_t>(t, "every_n_subframes", d.traffic.every_n_subframes);
    }
    if (d.traffic.every_n_subframes &&
        (d.traffic.payload_bytes < 10 || d.traffic.payload_bytes > phy->max_payload)) {
        throw OrchestrationError(Errc::bad_request, "payload_bytes must be within 10.." +
                                                        std::to_string(phy->max_payload) + " for " + phy->name);
    }
    return d;
}

json to_json(Verb verb, const Reply& reply) {
    json out = {{"schema_version", kSchemaVersion}, {"verb", to_string(verb)}};
    if (reply.ok) {
        out["status"] = "ok";
        out["body"] = reply.body;
    } else {
        out["status"] = "error";
        json err = {{"code", reply.error ? to_string(*reply.error) : "bad_request"}, {"message", reply.message}};
        for (auto it = reply.detail.begin(); it != reply.detail.end(); ++it) err[it.key()] = it.value();
        out["error"] = std::move(err);
    }
    return out;
}

// ---------------------------------------------------------------------------

SliceRunner::SliceRunner(RunnerOptions options) : options_(std::move(options)) {}

std::unique_ptr<SliceRunner> SliceRunner::start(pvback::Backend& backend, const vchan::RendezvousStore& store,
                                                RunnerOptions options) {
    std::unique_ptr<SliceRunner> r(new SliceRunner(std::move(options)));
    const auto& cfg = r->options_.config;
    r->enb_ = std::make_unique<remoting::RemoteDevice>(store, cfg, r->options_.frontend);
    r->enb_->find_device();
    try {
        r->ue_ = std::make_unique<slicestack::UeDevice>(backend.radio().attach_ue(cfg.radio_channel, r->options_.link),
                                                         cfg);
        r->ue_->find_device();
    } catch (...) {
        r->enb_->shutdown();
        throw;
    }

    auto endpoint = [&](slicestack::Role role) {
        slicestack::EndpointOptions o;
        o.role = role;
        o.slice_tag = static_cast<std::uint16_t>(cfg.slice_id.value);
        o.phy = r->options_.phy;
        o.traffic.payload_bytes = r->options_.traffic.payload_bytes;
        o.traffic.every_n_subframes = r->options_.traffic.every_n_subframes;
        o.traffic.seed = cfg.slice_id.value * 2 + (role == slicestack::Role::ue ? 1 : 0);
        o.report_every = r->options_.report_every;
        return o;
    };
    auto* self = r.get();
    auto eo = endpoint(slicestack::Role::enb);
    eo.progress = [self](const slicestack::EndpointStats& s) {
        std::lock_guard lk(self->mu_);
        self->stats_.enb = s;
    };
    auto uo = endpoint(slicestack::Role::ue);
    uo.progress = [self](const slicestack::EndpointStats& s) {
        std::lock_guard lk(self->mu_);
        self->stats_.ue = s;
    };

    r->enb_thread_ = std::thread([self, eo] {
        try {
            slicestack::run_endpoint(*self->enb_, eo, &self->enb_stop_);
        } catch (const std::exception& e) {
            std::lock_guard lk(self->mu_);
            self->error_ = std::string("enb: ") + e.what();
        }
        if (self->killed_) self->enb_->abandon();
        self->enb_done_ = true;
    });
    r->ue_thread_ = std::thread([self, uo] {
        try {
            slicestack::run_endpoint(*self->ue_, uo, &self->ue_stop_);
        } catch (const std::exception& e) {
            std::lock_guard lk(self->mu_);
            if (self->error_.empty()) self->error_ = std::string("ue: ") + e.what();
        }
        self->ue_->shutdown();
        self->ue_done_ = true;
    });
    return r;
}

SliceRunner::~SliceRunner() { stop(); }

RunnerStats SliceRunner::stop() {
    if (!stopped_) {
        stopped_ = true;
        ue_stop_ = true;
        enb_stop_ = true;
        if (enb_thread_.joinable()) enb_thread_.join();
        // SHUTDOWN stops the backend session and releases the channel, which
        // wakes a UE still waiting on the downlink.
        if (enb_) enb_->shutdown();
        if (ue_thread_.joinable()) ue_thread_.join();
    }
    return stats();
}

void SliceRunner::kill_frontend() {
    killed_ = true;
    enb_stop_ = true;
}

RunnerStats SliceRunner::stats() const {
    std::lock_guard lk(mu_);
    return stats_;
}

std::string SliceRunner::error() const {
    std::lock_guard lk(mu_);
    return error_;
}

// ---------------------------------------------------------------------------

Orchestrator::Orchestrator(OrchestratorOptions options)
    : options_(std::move(options)), store_(vchan::RendezvousStore::temporary()) {
    radio_ = radio::VirtualRadio::open(options_.radio);
    pvback::SessionOptions so;
    so.backing = options_.backing;
    backend_ = std::make_unique<pvback::Backend>(radio_, store_, so);
    dispatcher_ = std::make_unique<remoting::Dispatcher>(*backend_);
    dispatcher_->start();
    publish();
    thread_ = std::thread([this] { loop(); });
}

Orchestrator::~Orchestrator() {
    {
        std::lock_guard lk(queue_mu_);
        stopping_ = true;
    }
    queue_cv_.notify_all();
    if (thread_.joinable()) thread_.join();
    for (auto& [id, e] : entries_) {
        if (e.runner) e.runner->stop();
        dispatcher_->close_control(id);
    }
    dispatcher_.reset();
    backend_.reset();
}

std::shared_ptr<const View> Orchestrator::view() const { return std::atomic_load(&view_); }

void Orchestrator::set_audit(std::function<void(const AuditView&)> audit) {
    std::lock_guard lk(queue_mu_);
    audit_ = std::move(audit);
}

std::vector<json> Orchestrator::command_log() const {
    std::lock_guard lk(log_mu_);
    return log_;
}

Reply Orchestrator::execute(Verb verb, const json& body) {
    if (verb == Verb::list || verb == Verb::metrics) return run(verb, body);
    auto job = std::make_shared<Job>();
    job->verb = verb;
    job->body = body;
    auto done = job->done.get_future();
    {
        std::lock_guard lk(queue_mu_);
        if (stopping_) {
            Reply r;
            r.ok = false;
            r.error = Errc::backend_failure;
            r.message = "orchestrator is shutting down";
            return r;
        }
        queue_.push_back(job);
    }
    queue_cv_.notify_all();
    return done.get();
}

json Orchestrator::handle(const json& request) {
    Verb verb = Verb::list;
    Reply reply;
    reply.ok = false;
    try {
        require_object(request);
        const int version = field<int>(request, "schema_version");
        if (version != kSchemaVersion) {
            throw OrchestrationError(Errc::unsupported_schema,
                                     "schema_version " + std::to_string(version) + " is not supported");
        }
        const auto name = field<std::string>(request, "verb");
        const auto v = verb_from_string(name);
        if (!v) throw OrchestrationError(Errc::unknown_verb, "unknown verb \"" + name + "\"");
        verb = *v;
        return to_json(verb, execute(verb, request.value("body", json::object())));
    } catch (const OrchestrationError& e) {
        reply.error = e.code();
        reply.message = e.what();
        reply.detail = e.detail();
    }
    json out = to_json(verb, reply);
    if (!request.is_object() || !request.contains("verb") || !request.at("verb").is_string() ||
        !verb_from_string(request.at("verb").get<std::string>())) {
        out.erase("verb");
    }
    return out;
}

json Orchestrator::handle_text(const std::string& text) {
    json request;
    try {
        request = json::parse(text);
    } catch (const json::parse_error& e) {
        Reply r;
        r.ok = false;
        r.error = Errc::bad_request;
        r.message = std::string("malformed JSON: ") + e.what();
        json out = to_json(Verb::list, r);
        out.erase("verb");
        return out;
    }
    return handle(request);
}

void Orchestrator::kill_frontend(SliceId id) {
    auto done = std::make_shared<std::promise<void>>();
    auto f = done->get_future();
    {
        std::lock_guard lk(queue_mu_);
        kill_requests_.push_back(id);
        kill_done_.push_back(done);
    }
    queue_cv_.notify_all();
    f.get();
}

void Orchestrator::loop() {
    auto next_refresh = std::chrono::steady_clock::now() + options_.refresh_period;
    for (;;) {
        std::shared_ptr<Job> job;
        std::vector<SliceId> kills;
        std::vector<std::shared_ptr<std::promise<void>>> kill_done;
        {
            std::unique_lock lk(queue_mu_);
            queue_cv_.wait_until(lk, next_refresh,
                                 [&] { return stopping_ || !queue_.empty() || !kill_requests_.empty(); });
            if (stopping_) break;
            kills.swap(kill_requests_);
            kill_done.swap(kill_done_);
            if (!queue_.empty()) {
                job = queue_.front();
                queue_.pop_front();
            }
        }
        for (auto id : kills) {
            auto it = entries_.find(id);
            if (it != entries_.end() && it->second.runner) it->second.runner->kill_frontend();
        }
        for (auto& d : kill_done) d->set_value();
        if (job) {
            job->done.set_value(run(job->verb, job->body));
            continue;
        }
        if (std::chrono::steady_clock::now() >= next_refresh) {
            reconcile();
            publish();
            next_refresh = std::chrono::steady_clock::now() + options_.refresh_period;
        }
    }
    std::lock_guard lk(queue_mu_);
    for (auto& job : queue_) {
        Reply r;
        r.ok = false;
        r.error = Errc::backend_failure;
        r.message = "orchestrator is shutting down";
        job->done.set_value(r);
    }
    queue_.clear();
    for (auto& d : kill_done_) d->set_value();
    kill_done_.clear();
}

Reply Orchestrator::run(Verb verb, const json& body) {
    Reply reply;
    try {
        switch (verb) {
            case Verb::list: {
                const auto v = view();
                json slices = json::array();
                for (const auto& d : v->descriptors) slices.push_back(to_json(d));
                reply.body = {{"version", v->version}, {"slices", std::move(slices)}};
                return reply;
            }
            case Verb::metrics: reply.body = to_json(view()->metrics); return reply;
            case Verb::create: reply.body = create(body); break;
            case Verb::destroy: reply.body = destroy(body); break;
            case Verb::set_band: reply.body = set_band(body); break;
        }
    } catch (const OrchestrationError& e) {
        reply.ok = false;
        reply.error = e.code();
        reply.message = e.what();
        reply.detail = e.detail();
    }
    {
        std::lock_guard lk(log_mu_);
        log_.push_back({{"schema_version", kSchemaVersion}, {"verb", to_string(verb)}, {"body", body}});
    }
    publish();
    audit();
    return reply;
}

void Orchestrator::launch(Entry& e) {
    auto& d = e.descriptor;
    const auto id = d.config.slice_id;
    dispatcher_->open_control(id);
    RunnerOptions ro;
    ro.config = d.config;
    ro.phy = &slicestack::PhyProfile::by_name(d.config.phy_profile_name);
    ro.traffic = d.traffic;
    ro.link = options_.ue_link;
    ro.report_every = options_.report_every;
    ro.frontend = options_.frontend;
    try {
        e.runner = SliceRunner::start(*backend_, store_, ro);
    } catch (const std::exception& ex) {
        dispatcher_->close_control(id);
        throw OrchestrationError(Errc::backend_failure, std::string("slice start failed: ") + ex.what());
    }
    d.state = SliceState::running;
    d.last_error.clear();
}

RunnerStats Orchestrator::halt(Entry& e) {
    e.descriptor.state = SliceState::stopping;
    RunnerStats stats;
    if (e.runner) {
        stats = e.runner->stop();
        e.runner.reset();
    }
    dispatcher_->close_control(e.descriptor.config.slice_id);
    e.descriptor.state = SliceState::stopped;
    e.final_stats = stats;
    return stats;
}

json Orchestrator::create(const json& body) {
    auto d = descriptor_from_json(body);
    const auto id = d.config.slice_id;
    if (entries_.count(id)) {
        throw OrchestrationError(Errc::slice_exists, "slice " + std::to_string(id.value) + " already exists");
    }
    if (d.config.radio_channel.index >= radio_->channel_count()) {
        throw OrchestrationError(Errc::invalid_channel, "radio channel " + std::to_string(d.config.radio_channel.index) +
                                                            " does not exist");
    }
    const auto verdict = backend_->check(d.config);
    if (!verdict.ok()) {
        const bool only_channel = std::all_of(verdict.conflicts.begin(), verdict.conflicts.end(),
                                              [](const FdmConflict& c) { return c.kind == ConflictKind::radio_channel; });
        throw OrchestrationError(only_channel ? Errc::channel_in_use : Errc::fdm_conflict,
                                 describe_conflicts(verdict, id), {{"conflicts", conflicts_json(verdict, id)}});
    }
    Entry e;
    e.descriptor = d;
    launch(e);  // on failure the descriptor is dropped
    auto [it, _] = entries_.emplace(id, std::move(e));
    return to_json(it->second.descriptor);
}

json Orchestrator::destroy(const json& body) {
    const auto id = id_from(body);
    auto it = entries_.find(id);
    if (it == entries_.end()) throw OrchestrationError(Errc::unknown_slice, "no slice " + std::to_string(id.value));
    const auto stats = halt(it->second);
    auto m = metrics_for(it->second);
    auto d = it->second.descriptor;
    entries_.erase(it);
    json out = to_json(d);
    json counters = to_json(MetricsSnapshot{0, 0, {m}, 0, {}})["slices"][0];
    counters["enb"] = json::parse(slicestack::to_json_line(stats.enb));
    counters["ue"] = json::parse(slicestack::to_json_line(stats.ue));
    out["final"] = std::move(counters);
    return out;
}

json Orchestrator::set_band(const json& body) {
    const auto id = id_from(body);
    auto it = entries_.find(id);
    if (it == entries_.end()) throw OrchestrationError(Errc::unknown_slice, "no slice " + std::to_string(id.value));
    auto& e = it->second;
    auto updated = e.descriptor.config;
    updated.dl_freq_hz = field<std::uint64_t>(body, "dl_freq_hz");
    updated.ul_freq_hz = field<std::uint64_t>(body, "ul_freq_hz");
    if (updated.dl_freq_hz == 0 || updated.ul_freq_hz == 0) {
        throw OrchestrationError(Errc::bad_request, "frequencies must be nonzero");
    }
    const auto verdict = backend_->check(updated, id);
    if (!verdict.ok()) {
        throw OrchestrationError(Errc::fdm_conflict, describe_conflicts(verdict, id),
                                 {{"conflicts", conflicts_json(verdict, id)}});
    }
    // A band change is a restart: stop, retune, start.
    const auto previous = e.descriptor.config;
    halt(e);
    e.descriptor.config = updated;
    e.descriptor.state = SliceState::requested;
    ++e.descriptor.generation;
    try {
        launch(e);
    } catch (const OrchestrationError& ex) {
        e.descriptor.config = previous;
        e.descriptor.last_error = ex.what();
        try {
            launch(e);
        } catch (const OrchestrationError&) {
            e.descriptor.state = SliceState::stopped;
        }
        throw;
    }
    return to_json(e.descriptor);
}

void Orchestrator::reconcile() {
    bool changed = false;
    for (auto& [id, e] : entries_) {
        if (e.descriptor.state != SliceState::running) continue;
        const bool dead = !backend_->has_session(id) || (e.runner && e.runner->finished());
        if (!dead) continue;
        const auto why = e.runner ? e.runner->error() : std::string();
        halt(e);
        e.descriptor.last_error = why.empty() ? "session ended" : why;
        changed = true;
    }
    if (changed) audit();
}

SliceMetrics Orchestrator::metrics_for(const Entry& e) const {
    SliceMetrics m;
    const auto& c = e.descriptor.config;
    m.slice_id = c.slice_id;
    m.state = e.descriptor.state;
    m.phy_profile = c.phy_profile_name;
    m.prbs = c.profile.prbs();
    const auto stats = e.runner ? e.runner->stats() : e.final_stats;
    m.dl_goodput_bps = stats.ue.goodput_bps();
    m.ul_goodput_bps = stats.enb.goodput_bps();
    const double sent = static_cast<double>(stats.ue.frames_received + stats.ue.frames_lost +
                                            stats.enb.frames_received + stats.enb.frames_lost);
    m.loss_rate = sent > 0 ? static_cast<double>(stats.ue.frames_lost + stats.enb.frames_lost) / sent : 0;
    m.frames_received = stats.ue.frames_received + stats.enb.frames_received;
    m.latency_mean_us = m.frames_received
                            ? (stats.ue.latency_mean_us * stats.ue.frames_received +
                               stats.enb.latency_mean_us * stats.enb.frames_received) /
                                  static_cast<double>(m.frames_received)
                            : 0;
    m.cross_slice_frames = stats.ue.cross_slice_frames + stats.enb.cross_slice_frames;
    m.foreign_samples = stats.ue.foreign_samples + stats.enb.foreign_samples;
    m.subframes = stats.enb.subframes;
    if (auto sm = backend_->metrics(c.slice_id)) {
        m.underruns = sm->rx.underruns + sm->tx.underruns;
        m.overruns = sm->rx.overruns + sm->tx.overruns;
        m.ring_high_water = sm->rx_ring_high_water;
        m.ring_capacity = sm->ring_capacity;
        m.achieved_rate = sm->achieved_rate;
    }
    return m;
}

void Orchestrator::publish() {
    auto v = std::make_shared<View>();
    v->version = ++version_;
    v->metrics.seq = v->version;
    v->metrics.timestamp_ms = now_ms();
    std::vector<SliceConfig> running;
    for (const auto& [id, e] : entries_) {
        v->descriptors.push_back(e.descriptor);
        v->metrics.slices.push_back(metrics_for(e));
        if (e.descriptor.state == SliceState::running) running.push_back(e.descriptor.config);
    }
    v->metrics.active_slices = running.size();
    v->metrics.plan = FdmPlan::from_configs(running);
    std::atomic_store(&view_, std::shared_ptr<const View>(std::move(v)));
}

void Orchestrator::audit() {
    std::function<void(const AuditView&)> hook;
    {
        std::lock_guard lk(queue_mu_);
        hook = audit_;
    }
    if (!hook) return;
    AuditView a;
    for (const auto& [id, e] : entries_) a.descriptors.push_back(e.descriptor);
    a.backend_plan = backend_->plan();
    a.backend_sessions = backend_->sessions();
    hook(a);
}

}  // namespace pvran::orchestrator
