#include "pvran/pvback.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <thread>

#include <pthread.h>
#include <sched.h>
#include <sys/prctl.h>

namespace pvran::pvback {

namespace {

using Clock = std::chrono::steady_clock;

void configure_thread(const std::string& name, bool realtime, std::optional<int> core) {
    ::pthread_setname_np(::pthread_self(), name.substr(0, 15).c_str());
    // Sleep-until wakeups are part of the pacing path; default slack is 50 us.
    ::prctl(PR_SET_TIMERSLACK, 1UL, 0, 0, 0);
    if (realtime) {
        sched_param p{};
        p.sched_priority = 10;
        ::pthread_setschedparam(::pthread_self(), SCHED_FIFO, &p);  // best effort
    }
    if (core) {
        cpu_set_t set;
        CPU_ZERO(&set);
        CPU_SET(*core, &set);
        ::pthread_setaffinity_np(::pthread_self(), sizeof(set), &set);  // best effort
    }
}

struct Streamer {
    std::atomic<std::uint64_t> initial{0};
    std::atomic<std::uint64_t> timestamp{0};
    std::atomic<std::uint64_t> iterations{0};
    std::atomic<bool> first_run_done{false};
    std::atomic<std::uint64_t> underruns{0};
    std::atomic<std::uint64_t> overruns{0};
    std::atomic<std::uint64_t> samples{0};
    std::atomic<std::uint64_t> stall_ns{0};

    StreamerSnapshot snapshot() const {
        StreamerSnapshot s;
        s.initial = {initial.load()};
        s.timestamp = {timestamp.load()};
        s.iterations = iterations.load();
        s.first_run_done = first_run_done.load();
        s.underruns = underruns.load();
        s.overruns = overruns.load();
        s.samples = samples.load();
        s.stall_seconds = static_cast<double>(stall_ns.load()) / 1e9;
        return s;
    }
};

void write_all(vchan::StreamChannel& ch, std::span<const std::byte> bytes, Streamer& st) {
    const bool may_stall = ch.buffer_space() < bytes.size();
    const auto t = Clock::now();
    ch.write(bytes);
    if (may_stall) {
        st.stall_ns += static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t).count());
    }
}

}  // namespace

std::array<std::byte, kTimestampHeaderSize> encode_header(const TimestampHeader& header) {
    std::array<std::byte, kTimestampHeaderSize> out{};
    for (int k = 0; k < 4; ++k) out[k] = std::byte((header.magic >> (8 * k)) & 0xff);
    for (int k = 0; k < 8; ++k) out[4 + k] = std::byte((header.timestamp.ticks >> (8 * k)) & 0xff);
    return out;
}

TimestampHeader decode_header(std::span<const std::byte, kTimestampHeaderSize> bytes) {
    TimestampHeader h;
    h.magic = 0;
    for (int k = 0; k < 4; ++k) h.magic |= std::uint32_t(bytes[k]) << (8 * k);
    for (int k = 0; k < 8; ++k) h.timestamp.ticks |= std::uint64_t(bytes[4 + k]) << (8 * k);
    return h;
}

std::string ctrl_path(SliceId id) { return "pv/" + std::to_string(id.value) + "/ctrl"; }
std::string rx_path(SliceId id) { return "pv/" + std::to_string(id.value) + "/rx"; }
std::string tx_path(SliceId id) { return "pv/" + std::to_string(id.value) + "/tx"; }

std::string to_string(SessionError::Errc code) {
    switch (code) {
        case SessionError::Errc::slice_exists: return "slice_exists";
        case SessionError::Errc::unknown_slice: return "unknown_slice";
        case SessionError::Errc::channel_in_use: return "channel_in_use";
        case SessionError::Errc::invalid_channel: return "invalid_channel";
        case SessionError::Errc::fdm_conflict: return "fdm_conflict";
        case SessionError::Errc::setup_failed: return "setup_failed";
    }
    return "unknown";
}

radio::ChannelTuning tuning_for(const SliceConfig& config) {
    radio::ChannelTuning t;
    t.tx_freq_hz = config.dl_freq_hz;
    t.rx_freq_hz = config.ul_freq_hz;
    t.rate = static_cast<double>(config.profile.sample_rate());
    t.rx_gain_db = config.rx_gain_db;
    t.tx_gain_db = config.tx_gain_db;
    t.active = true;
    return t;
}

struct SliceSession::Impl {
    // Written only by retune(); the streamers use fields retune never changes.
    mutable std::mutex config_mu;
    SliceConfig config;
    SessionOptions options;
    std::shared_ptr<radio::VirtualRadio> radio;
    std::optional<vchan::StreamChannel> rx_data;
    std::optional<vchan::StreamChannel> tx_data;

    Streamer rx;
    Streamer tx;
    std::atomic<bool> stopping{false};
    std::atomic<bool> rx_running{false};
    std::atomic<bool> tx_running{false};
    std::atomic<std::int64_t> first_run_wall_ns{0};

    // TX latch: released by the RX first run or by stop.
    std::mutex latch_mu;
    std::condition_variable latch_cv;
    bool latch_open = false;

    mutable std::mutex ledger_mu;
    std::vector<SampleTimestamp> rx_ledger;
    std::vector<SampleTimestamp> tx_ledger;

    std::thread rx_thread;
    std::thread tx_thread;

    std::mutex stop_mu;
    std::optional<SessionMetrics> final_metrics;

    void record(std::vector<SampleTimestamp>& ledger, std::uint64_t tick) {
        if (!options.record_ledger) return;
        std::lock_guard lk(ledger_mu);
        ledger.push_back({tick});
    }

    void open_latch() {
        std::lock_guard lk(latch_mu);
        latch_open = true;
        latch_cv.notify_all();
    }

    void rx_loop() {
        configure_thread("pvb-rx-" + std::to_string(config.slice_id.value), options.realtime_priority, options.rx_core);
        const RadioChannelId ch = config.radio_channel;
        const std::size_t n = samples_per_subframe(config.profile);
        std::vector<std::byte> wire(kTimestampHeaderSize + n * kBytesPerSample);
        const std::span<std::byte> body(wire.data() + kTimestampHeaderSize, n * kBytesPerSample);
        try {
            auto [first, meta] = radio->recv(ch, n);
            const std::uint64_t t0 = meta.timestamp.ticks;
            rx.initial = t0;
            rx.timestamp = t0;
            // Declare the TX stream before the TX streamer may submit anything.
            radio->begin_tx(ch, {t0 + config.effective_tx_offset()});
            first_run_wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                                    Clock::now().time_since_epoch()).count();
            rx.first_run_done = true;
            open_latch();

            const auto header = encode_header({kTimestampMagic, {t0}});
            std::memcpy(wire.data(), header.data(), header.size());
            samples_to_bytes(first, body);
            record(rx_ledger, t0);
            write_all(*rx_data, wire, rx);
            rx.samples += n;

            std::uint64_t ts = t0;
            std::vector<std::byte> silence(body.size());
            while (!stopping) {
                auto [block, m] = radio->recv(ch, n);
                // Stand in silence for every subframe the radio dropped so the
                // stream stays one sample per tick.
                for (std::uint64_t gap = 0; gap < m.dropped / n; ++gap) {
                    ++rx.overruns;
                    ts += n;
                    record(rx_ledger, ts);
                    write_all(*rx_data, silence, rx);
                    rx.samples += n;
                    rx.timestamp = ts;
                    ++rx.iterations;
                }
                ts += n;
                samples_to_bytes(block, body);
                record(rx_ledger, ts);
                write_all(*rx_data, body, rx);
                rx.samples += n;
                rx.timestamp = ts;
                ++rx.iterations;
            }
        } catch (const radio::RadioError&) {
        } catch (const vchan::ChannelError&) {
        }
        rx_running = false;
        open_latch();
    }

    void tx_loop() {
        configure_thread("pvb-tx-" + std::to_string(config.slice_id.value), options.realtime_priority, options.tx_core);
        const RadioChannelId ch = config.radio_channel;
        const std::size_t n = samples_per_subframe(config.profile);
        {
            std::unique_lock lk(latch_mu);
            latch_cv.wait(lk, [&] { return latch_open; });
        }
        if (!rx.first_run_done || stopping) {
            tx_running = false;
            return;
        }
        std::vector<std::byte> wire(n * kBytesPerSample);
        IQBuffer block(n);
        std::uint64_t ts = rx.initial.load() + config.effective_tx_offset();
        bool first = true;
        try {
            while (!stopping) {
                const auto t = Clock::now();
                const std::size_t got = tx_data->read(wire);
                tx.stall_ns += static_cast<std::uint64_t>(
                    std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t).count());
                if (got < wire.size()) break;  // frontend closed mid-subframe
                if (first) {
                    tx.initial = ts;
                    tx.first_run_done = true;
                } else {
                    ts += n;
                    ++tx.iterations;
                }
                tx.timestamp = ts;
                bytes_to_samples(wire, block);
                record(tx_ledger, ts);
                if (!radio->send(ch, block, {ts})) ++tx.underruns;
                tx.samples += n;
                first = false;
            }
        } catch (const radio::RadioError&) {
        } catch (const vchan::ChannelError&) {
        }
        tx_running = false;
    }

    SessionMetrics snapshot() const {
        SessionMetrics m;
        m.slice_id = config.slice_id;
        m.radio_channel = config.radio_channel;
        m.prbs = config.profile.prbs();
        m.rx = rx.snapshot();
        m.tx = tx.snapshot();
        try {
            m.radio_samples_received = radio->counters(config.radio_channel).samples_received;
        } catch (const radio::RadioError&) {
        }
        const auto start = first_run_wall_ns.load();
        if (start != 0) {
            const auto now = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch())
                                 .count();
            const double secs = static_cast<double>(now - start) / 1e9;
            // The first subframe was complete at the first-run instant.
            if (secs > 0 && m.rx.samples > samples_per_subframe(config.profile)) {
                m.achieved_rate =
                    static_cast<double>(m.rx.samples - samples_per_subframe(config.profile)) / secs;
            }
        }
        m.ring_capacity = options.ring_capacity;
        m.rx_ring_high_water = rx_data ? rx_data->write_high_water() : 0;
        m.alive = rx_running && tx_running && !stopping;
        return m;
    }
};

SliceSession::SliceSession(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}

SliceSession::~SliceSession() {
    if (impl_) stop();
}

std::unique_ptr<SliceSession> SliceSession::start(const SliceConfig& config,
                                                  std::shared_ptr<radio::VirtualRadio> radio,
                                                  vchan::RendezvousStore& store, const SessionOptions& options) {
    if (config.radio_channel.index >= radio->channel_count()) {
        throw SessionError(SessionError::Errc::invalid_channel,
                           "radio channel " + std::to_string(config.radio_channel.index) + " does not exist");
    }
    auto impl = std::make_unique<Impl>();
    impl->config = config;
    impl->options = options;
    impl->radio = std::move(radio);
    try {
        impl->rx_data.emplace(vchan::StreamChannel::server_create(store, rx_path(config.slice_id),
                                                                  options.ring_capacity, options.ring_capacity, true,
                                                                  options.backing));
        impl->tx_data.emplace(vchan::StreamChannel::server_create(store, tx_path(config.slice_id),
                                                                  options.ring_capacity, options.ring_capacity, true,
                                                                  options.backing));
        impl->radio->tune(config.radio_channel, tuning_for(config));
    } catch (const std::exception& e) {
        if (impl->rx_data) impl->rx_data->close();
        if (impl->tx_data) impl->tx_data->close();
        throw SessionError(SessionError::Errc::setup_failed, e.what());
    }
    impl->rx_running = true;
    impl->tx_running = true;
    Impl* raw = impl.get();
    impl->rx_thread = std::thread([raw] { raw->rx_loop(); });
    impl->tx_thread = std::thread([raw] { raw->tx_loop(); });
    return std::unique_ptr<SliceSession>(new SliceSession(std::move(impl)));
}

SessionMetrics SliceSession::stop() {
    Impl& s = *impl_;
    std::lock_guard lk(s.stop_mu);
    if (s.final_metrics) return *s.final_metrics;
    s.stopping = true;
    s.open_latch();
    s.rx_data->close();
    s.tx_data->close();
    s.radio->end_tx(s.config.radio_channel);
    s.radio->release(s.config.radio_channel);
    if (s.rx_thread.joinable()) s.rx_thread.join();
    if (s.tx_thread.joinable()) s.tx_thread.join();
    s.final_metrics = s.snapshot();
    s.final_metrics->alive = false;
    return *s.final_metrics;
}

SessionMetrics SliceSession::metrics() const {
    if (impl_->final_metrics) return *impl_->final_metrics;
    return impl_->snapshot();
}

SliceConfig SliceSession::config() const {
    std::lock_guard lk(impl_->config_mu);
    return impl_->config;
}

void SliceSession::retune(const SliceConfig& updated) {
    Impl& s = *impl_;
    std::lock_guard lk(s.config_mu);
    if (updated.profile != s.config.profile || updated.radio_channel != s.config.radio_channel ||
        updated.slice_id != s.config.slice_id) {
        throw SessionError(SessionError::Errc::setup_failed, "profile and radio channel cannot change mid-session");
    }
    s.radio->tune(s.config.radio_channel, tuning_for(updated));
    s.config.dl_freq_hz = updated.dl_freq_hz;
    s.config.ul_freq_hz = updated.ul_freq_hz;
    s.config.rx_gain_db = updated.rx_gain_db;
    s.config.tx_gain_db = updated.tx_gain_db;
}

bool SliceSession::alive() const { return impl_->rx_running && impl_->tx_running && !impl_->stopping; }

std::vector<SampleTimestamp> SliceSession::rx_ledger() const {
    std::lock_guard lk(impl_->ledger_mu);
    return impl_->rx_ledger;
}

std::vector<SampleTimestamp> SliceSession::tx_ledger() const {
    std::lock_guard lk(impl_->ledger_mu);
    return impl_->tx_ledger;
}

Backend::Backend(std::shared_ptr<radio::VirtualRadio> radio, vchan::RendezvousStore& store, SessionOptions defaults)
    : radio_(std::move(radio)), store_(store), defaults_(defaults) {}

Backend::~Backend() {
    std::map<SliceId, std::shared_ptr<SliceSession>> live;
    {
        std::lock_guard lk(mu_);
        live.swap(live_);
    }
    for (auto& [id, s] : live) s->stop();
}

FdmVerdict Backend::check(const SliceConfig& config, std::optional<SliceId> replacing) const {
    std::vector<SliceConfig> configs;
    {
        std::lock_guard lk(mu_);
        for (const auto& [id, s] : live_) {
            if (replacing && id == *replacing) continue;
            configs.push_back(s->config());
        }
    }
    configs.push_back(config);
    return validate_fdm_plan(FdmPlan::from_configs(configs));
}

void Backend::start_session(const SliceConfig& config) {
    std::lock_guard lk(mu_);
    if (live_.count(config.slice_id)) {
        throw SessionError(SessionError::Errc::slice_exists,
                           "slice " + std::to_string(config.slice_id.value) + " already has a session");
    }
    if (config.radio_channel.index >= radio_->channel_count()) {
        throw SessionError(SessionError::Errc::invalid_channel,
                           "radio channel " + std::to_string(config.radio_channel.index) + " does not exist");
    }
    std::vector<SliceConfig> configs;
    for (const auto& [id, s] : live_) {
        if (s->config().radio_channel == config.radio_channel) {
            throw SessionError(SessionError::Errc::channel_in_use,
                               "radio channel " + std::to_string(config.radio_channel.index) + " is used by slice " +
                                   std::to_string(id.value));
        }
        configs.push_back(s->config());
    }
    configs.push_back(config);
    const auto verdict = validate_fdm_plan(FdmPlan::from_configs(configs));
    if (!verdict.ok()) throw SessionError(SessionError::Errc::fdm_conflict, verdict.describe());
    auto session = SliceSession::start(config, radio_, store_, defaults_);
    live_[config.slice_id] = std::move(session);
    finished_.erase(config.slice_id);
}

SessionMetrics Backend::stop_session(SliceId id) {
    std::shared_ptr<SliceSession> s;
    {
        std::lock_guard lk(mu_);
        auto it = live_.find(id);
        if (it == live_.end()) {
            auto f = finished_.find(id);
            if (f != finished_.end()) return f->second;
            throw SessionError(SessionError::Errc::unknown_slice, "no session for slice " + std::to_string(id.value));
        }
        s = it->second;
        live_.erase(it);
    }
    auto final_metrics = s->stop();
    std::lock_guard lk(mu_);
    finished_[id] = final_metrics;
    return final_metrics;
}

void Backend::retune(const SliceConfig& updated) {
    std::shared_ptr<SliceSession> s;
    {
        std::lock_guard lk(mu_);
        auto it = live_.find(updated.slice_id);
        if (it == live_.end()) {
            throw SessionError(SessionError::Errc::unknown_slice,
                               "no session for slice " + std::to_string(updated.slice_id.value));
        }
        s = it->second;
    }
    const auto verdict = check(updated, updated.slice_id);
    if (!verdict.ok()) throw SessionError(SessionError::Errc::fdm_conflict, verdict.describe());
    s->retune(updated);
}

bool Backend::has_session(SliceId id) const {
    std::lock_guard lk(mu_);
    return live_.count(id) != 0;
}

std::vector<SliceId> Backend::sessions() const {
    std::lock_guard lk(mu_);
    std::vector<SliceId> out;
    for (const auto& [id, s] : live_) out.push_back(id);
    return out;
}

std::optional<SliceConfig> Backend::config(SliceId id) const {
    std::lock_guard lk(mu_);
    auto it = live_.find(id);
    if (it == live_.end()) return std::nullopt;
    return it->second->config();
}

std::optional<SessionMetrics> Backend::metrics(SliceId id) const {
    std::shared_ptr<SliceSession> s = session(id);
    if (!s) return std::nullopt;
    return s->metrics();
}

std::vector<SessionMetrics> Backend::all_metrics() const {
    std::vector<std::shared_ptr<SliceSession>> live;
    {
        std::lock_guard lk(mu_);
        for (const auto& [id, s] : live_) live.push_back(s);
    }
    std::vector<SessionMetrics> out;
    for (const auto& s : live) out.push_back(s->metrics());
    return out;
}

FdmPlan Backend::plan() const {
    std::vector<SliceConfig> configs;
    std::lock_guard lk(mu_);
    for (const auto& [id, s] : live_) configs.push_back(s->config());
    return FdmPlan::from_configs(configs);
}

std::shared_ptr<SliceSession> Backend::session(SliceId id) const {
    std::lock_guard lk(mu_);
    auto it = live_.find(id);
    return it == live_.end() ? nullptr : it->second;
}

}  // namespace pvran::pvback
