#include "pvran/bench.hpp"

#include "pvran/pubsub.hpp"
#include "pvran/remoting.hpp"
#include "pvran/slicestack.hpp"

#include <pthread.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <thread>

namespace pvran::bench {

using Clock = std::chrono::steady_clock;

std::string to_string(TransportKind kind) {
    return kind == TransportKind::shm_vchan ? "shm_vchan" : "pubsub_socket";
}

TransportKind transport_from_string(const std::string& name) {
    if (name == "shm" || name == "shm_vchan") return TransportKind::shm_vchan;
    if (name == "pubsub" || name == "pubsub_socket") return TransportKind::pubsub_socket;
    throw BenchError("unknown transport \"" + name + "\"");
}

LatencyStats LatencyStats::from_samples(std::vector<double> us, std::size_t msg_bytes) {
    LatencyStats s;
    s.msg_bytes = msg_bytes;
    s.samples = us.size();
    if (us.empty()) return s;
    std::sort(us.begin(), us.end());
    auto rank = [&](double q) {
        const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(us.size())));
        return us[std::clamp<std::size_t>(k, 1, us.size()) - 1];
    };
    s.min_us = us.front();
    s.max_us = us.back();
    s.median_us = rank(0.5);
    s.p99_us = rank(0.99);
    s.mean_us = std::accumulate(us.begin(), us.end(), 0.0) / static_cast<double>(us.size());
    return s;
}

json to_json(const LatencyStats& s) {
    return {{"samples", s.samples}, {"min_us", s.min_us},   {"median_us", s.median_us}, {"p99_us", s.p99_us},
            {"max_us", s.max_us},   {"mean_us", s.mean_us}, {"msg_bytes", s.msg_bytes}};
}

json to_json(TransportKind kind, const LatencyStats& s) {
    auto j = to_json(s);
    j["record"] = "latency";
    j["transport"] = to_string(kind);
    return j;
}

namespace {

class Link {
public:
    virtual ~Link() = default;
    virtual void send(std::span<const std::byte> message) = 0;
    virtual void recv(std::span<std::byte> out) = 0;
};

class ShmLink final : public Link {
public:
    explicit ShmLink(std::size_t capacity)
        : store_(vchan::RendezvousStore::temporary()),
          tx_(vchan::StreamChannel::server_create(store_, "bench/latency", capacity, capacity, true,
                                                  vchan::Backing::file)),
          rx_(vchan::StreamChannel::client_connect(store_, store_.local_server_id(), "bench/latency")) {}

    void send(std::span<const std::byte> message) override { tx_.write(message); }
    void recv(std::span<std::byte> out) override {
        if (rx_.read(out) != out.size()) throw BenchError("shared-memory channel closed mid-message");
    }

private:
    vchan::RendezvousStore store_;
    vchan::StreamChannel tx_;
    vchan::StreamChannel rx_;
};

class PubSubLink final : public Link {
public:
    PubSubLink() : sub_(pub_.port()) {
        if (!pub_.wait_subscribers(1, std::chrono::seconds(5))) throw BenchError("subscriber never joined");
    }

    void send(std::span<const std::byte> message) override { pub_.send(message); }
    void recv(std::span<std::byte> out) override {
        const auto m = sub_.recv();
        if (m.size() != out.size()) throw BenchError("pub-sub message size changed in transit");
        std::memcpy(out.data(), m.data(), m.size());
    }

private:
    pubsub::Publisher pub_;
    pubsub::Subscriber sub_;
};

std::int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch()).count();
}

void name_thread(const char* name) { ::pthread_setname_np(::pthread_self(), name); }

void try_fifo(int priority) {
    sched_param p{};
    p.sched_priority = priority;
    ::pthread_setschedparam(::pthread_self(), SCHED_FIFO, &p);
}

}  // namespace

LatencyStats latency_oneway(TransportKind kind, const LatencyOptions& options) {
    if (options.iters < 1000) throw BenchError("at least 1000 iterations are required");
    if (options.msg_bytes == 0) throw BenchError("message size must be positive");
    std::unique_ptr<Link> link;
    try {
        if (kind == TransportKind::shm_vchan) {
            link = std::make_unique<ShmLink>(options.ring_capacity);
        } else {
            link = std::make_unique<PubSubLink>();
        }
    } catch (const BenchError&) {
        throw;
    } catch (const std::exception& e) {
        throw BenchError(to_string(kind) + " setup failed: " + e.what());
    }

    const std::size_t total = options.warmup + options.iters;
    const bool stamp_in_head = options.msg_bytes >= sizeof(std::int64_t);
    std::atomic<std::int64_t> side_stamp{0};
    std::atomic<std::uint64_t> delivered{0};
    std::vector<double> samples;
    samples.reserve(options.iters);
    std::string failure;

    std::thread consumer([&] {
        name_thread("lat-consumer");
        std::vector<std::byte> buf(options.msg_bytes);
        try {
            for (std::size_t k = 0; k < total; ++k) {
                link->recv(buf);
                const auto arrived = now_ns();
                std::int64_t sent;
                if (stamp_in_head) {
                    std::memcpy(&sent, buf.data(), sizeof sent);
                } else {
                    sent = side_stamp.load();
                }
                if (k >= options.warmup) samples.push_back(static_cast<double>(arrived - sent) / 1000.0);
                delivered.store(k + 1);
                delivered.notify_one();
            }
        } catch (const std::exception& e) {
            failure = e.what();
            delivered.store(total);
            delivered.notify_one();
        }
    });
    std::thread producer([&] {
        name_thread("lat-producer");
        std::vector<std::byte> msg(options.msg_bytes);
        for (std::size_t k = 0; k < msg.size(); ++k) msg[k] = std::byte(k * 31 + 7);
        for (std::size_t k = 0; k < total; ++k) {
            // One message in flight: wait for the previous delivery.
            for (auto d = delivered.load(); d < k; d = delivered.load()) delivered.wait(d);
            if (delivered.load() >= total) break;
            const auto t = now_ns();
            if (stamp_in_head) {
                std::memcpy(msg.data(), &t, sizeof t);
            } else {
                side_stamp.store(t);
            }
            link->send(msg);
        }
    });
    producer.join();
    consumer.join();
    if (!failure.empty()) throw BenchError(to_string(kind) + ": " + failure);
    return LatencyStats::from_samples(std::move(samples), options.msg_bytes);
}

json to_json(const CompareReport& r) {
    return {{"record", "compare"},
            {"baseline", to_string(r.baseline)},
            {"other", to_string(r.other)},
            {"msg_bytes", r.baseline_stats.msg_bytes},
            {"baseline_stats", to_json(r.baseline_stats)},
            {"other_stats", to_json(r.other_stats)},
            {"ratio", r.ratio}};
}

CompareReport compare_transports(const LatencyOptions& options, TransportKind baseline, TransportKind other) {
    CompareReport r;
    r.baseline = baseline;
    r.other = other;
    r.baseline_stats = latency_oneway(baseline, options);
    r.other_stats = latency_oneway(other, options);
    r.ratio = r.baseline_stats.mean_us > 0 ? r.other_stats.mean_us / r.baseline_stats.mean_us : 0;
    return r;
}

json to_json(const CapacityEstimate& c) {
    return {{"record", "capacity"},          {"transport", to_string(c.kind)}, {"prbs", c.prbs},
            {"subframe_period_us", c.subframe_period_us}, {"mean_us", c.mean_us},
            {"round_cost_us", c.round_cost_us}, {"n_max", c.n_max},            {"methodology", c.methodology}};
}

CapacityEstimate capacity_estimate(const BandwidthProfile& profile, TransportKind kind, const LatencyStats& measured) {
    if (measured.msg_bytes != bytes_per_subframe(profile)) {
        throw BenchError("latency was measured at " + std::to_string(measured.msg_bytes) + " bytes, not the " +
                         std::to_string(bytes_per_subframe(profile)) + "-byte subframe of " +
                         std::to_string(profile.prbs()) + " PRB");
    }
    if (measured.mean_us <= 0) throw BenchError("latency mean must be positive");
    CapacityEstimate c;
    c.kind = kind;
    c.prbs = profile.prbs();
    c.mean_us = measured.mean_us;
    c.round_cost_us = 2 * measured.mean_us;
    c.n_max = static_cast<std::uint64_t>(std::floor(c.subframe_period_us / c.round_cost_us));
    c.methodology =
        "derived bound: each slice moves one rx and one tx subframe per 1 ms subframe over the transport; "
        "n_max = floor(1000 us / (2 x measured mean one-way latency)); not a measured slice count";
    return c;
}

// ---------------------------------------------------------------------------

std::map<int, ThreadCpu> sample_threads() {
    std::map<int, ThreadCpu> out;
    const long ticks = ::sysconf(_SC_CLK_TCK);
    for (const auto& entry : std::filesystem::directory_iterator("/proc/self/task")) {
        int tid = 0;
        try {
            tid = std::stoi(entry.path().filename().string());
        } catch (const std::exception&) {
            continue;
        }
        ThreadCpu t;
        std::ifstream comm(entry.path() / "comm");
        std::getline(comm, t.name);
        std::ifstream sched(entry.path() / "schedstat");
        unsigned long long on_cpu_ns = 0;
        if (sched >> on_cpu_ns) {
            t.cpu_seconds = static_cast<double>(on_cpu_ns) / 1e9;
        } else {
            std::ifstream stat(entry.path() / "stat");
            std::string line;
            std::getline(stat, line);
            const auto close = line.rfind(')');
            if (close == std::string::npos) continue;
            std::istringstream rest(line.substr(close + 2));
            std::string field;
            unsigned long long utime = 0, stime = 0;
            for (int k = 3; k <= 15 && rest >> field; ++k) {
                if (k == 14) utime = std::stoull(field);
                if (k == 15) stime = std::stoull(field);
            }
            t.cpu_seconds = static_cast<double>(utime + stime) / static_cast<double>(ticks);
        }
        out[tid] = t;
    }
    return out;
}

json to_json(const StreamResult& r) {
    json threads = json::array();
    for (const auto& t : r.threads) {
        threads.push_back({{"name", t.name}, {"cpu_seconds", t.cpu_seconds}, {"percent", t.percent}});
    }
    return {{"record", "stream"},
            {"prbs", r.prbs},
            {"seconds", r.seconds},
            {"paced", r.paced},
            {"subframes", r.subframes},
            {"expected_rate", r.expected_rate},
            {"achieved_rate", r.achieved_rate},
            {"rate_error", r.rate_error()},
            {"backend_rate", r.backend_rate},
            {"rx_overruns", r.rx_overruns},
            {"tx_underruns", r.tx_underruns},
            {"underruns", r.underruns()},
            {"frames_sent", r.frames_sent},
            {"backend_cpu_percent", r.backend_cpu_percent},
            {"threads", std::move(threads)}};
}

StreamResult sustained_stream_test(const StreamOptions& options) {
    const auto subframes = static_cast<std::uint64_t>(std::llround(options.seconds * 1000));
    if (subframes <= options.settle_subframes + 1) throw BenchError("stream window shorter than the settle time");

    radio::RadioOptions ro;
    ro.channels = 1;
    ro.fast_clock = !options.paced;
    auto radio = radio::VirtualRadio::open(ro);
    auto store = vchan::RendezvousStore::temporary();
    pvback::SessionOptions so;
    so.backing = vchan::Backing::file;
    so.realtime_priority = options.realtime;
    pvback::Backend backend(radio, store, so);
    remoting::Dispatcher dispatcher(backend);
    dispatcher.start();

    SliceConfig cfg;
    cfg.slice_id = {1};
    cfg.profile = options.profile;
    cfg.dl_freq_hz = 595'000'000;
    cfg.ul_freq_hz = 545'000'000;
    dispatcher.open_control(cfg.slice_id);
    remoting::RemoteDevice device(store, cfg);
    device.find_device();

    const std::size_t n = samples_per_subframe(cfg.profile);
    std::vector<std::pair<std::uint64_t, Clock::time_point>> marks;
    marks.reserve(subframes + 1);
    slicestack::EndpointOptions eo;
    eo.role = slicestack::Role::enb;
    eo.slice_tag = 1;
    eo.subframes = subframes;
    eo.report_every = 1;
    eo.progress = [&](const slicestack::EndpointStats& s) { marks.emplace_back(s.subframes, Clock::now()); };

    const auto before = sample_threads();
    const auto wall0 = Clock::now();
    slicestack::EndpointStats stats;
    std::string failure;
    std::thread frontend([&] {
        name_thread("fe-enb");
        if (options.realtime) try_fifo(10);
        try {
            stats = slicestack::run_endpoint(device, eo);
        } catch (const std::exception& e) {
            failure = e.what();
        }
    });
    frontend.join();
    const auto wall = std::chrono::duration<double>(Clock::now() - wall0).count();
    const auto after = sample_threads();
    const auto metrics = backend.metrics(cfg.slice_id);
    device.shutdown();
    dispatcher.close_control(cfg.slice_id);
    if (!failure.empty()) throw BenchError("stream endpoint failed: " + failure);

    StreamResult r;
    r.prbs = cfg.profile.prbs();
    r.seconds = options.seconds;
    r.paced = options.paced;
    r.subframes = stats.subframes;
    r.frames_sent = stats.frames_sent;
    r.expected_rate = static_cast<double>(cfg.profile.sample_rate());
    // Completed-subframe marks: one per subframe, the last one is the final report.
    if (marks.size() > options.settle_subframes + 1) {
        const auto& a = marks[options.settle_subframes];
        const auto& b = marks[marks.size() - 2];
        const double dt = std::chrono::duration<double>(b.second - a.second).count();
        if (dt > 0) r.achieved_rate = static_cast<double>((b.first - a.first) * n) / dt;
    }
    if (metrics) {
        r.backend_rate = metrics->achieved_rate;
        r.rx_overruns = metrics->rx.overruns;
        r.tx_underruns = metrics->tx.underruns;
    }
    for (const auto& [tid, t] : after) {
        ThreadCpu d = t;
        if (auto it = before.find(tid); it != before.end()) d.cpu_seconds -= it->second.cpu_seconds;
        d.percent = wall > 0 ? 100.0 * d.cpu_seconds / wall : 0;
        if (d.name.rfind("pvb-", 0) == 0) r.backend_cpu_percent += d.percent;
        r.threads.push_back(d);
    }
    std::sort(r.threads.begin(), r.threads.end(), [](const ThreadCpu& x, const ThreadCpu& y) { return x.name < y.name; });
    return r;
}

// ---------------------------------------------------------------------------

namespace {

struct Row {
    std::string record, subject;
    double value;
    std::string unit;
};

std::vector<Row> summary_rows(const json& r) {
    const auto kind = r.value("record", std::string("?"));
    std::vector<Row> rows;
    if (kind == "latency") {
        const auto subject = r.value("transport", std::string()) + "@" + std::to_string(r.value("msg_bytes", 0)) + "B";
        rows.push_back({kind, subject + " mean", r.value("mean_us", 0.0), "us"});
        rows.push_back({kind, subject + " median", r.value("median_us", 0.0), "us"});
        rows.push_back({kind, subject + " p99", r.value("p99_us", 0.0), "us"});
    } else if (kind == "compare") {
        rows.push_back({kind,
                        r.value("other", std::string()) + "/" + r.value("baseline", std::string()) + "@" +
                            std::to_string(r.value("msg_bytes", 0)) + "B",
                        r.value("ratio", 0.0), "x"});
    } else if (kind == "capacity") {
        rows.push_back({kind, r.value("transport", std::string()) + "@" + std::to_string(r.value("prbs", 0)) + "PRB",
                        static_cast<double>(r.value("n_max", 0)), "slices"});
    } else if (kind == "stream") {
        const auto subject = std::to_string(r.value("prbs", 0)) + "PRB";
        rows.push_back({kind, subject + " rate", r.value("achieved_rate", 0.0), "sps"});
        rows.push_back({kind, subject + " underruns", static_cast<double>(r.value("underruns", 0)), "count"});
        rows.push_back({kind, subject + " backend cpu", r.value("backend_cpu_percent", 0.0), "%"});
    } else {
        rows.push_back({kind, "", 0, ""});
    }
    return rows;
}

}  // namespace

std::string format_report(const std::vector<json>& records, const std::string& generated_at) {
    std::ostringstream out;
    out << json{{"report", "pvran-bench"}, {"schema_version", 1}, {"generated_at", generated_at}}.dump() << '\n';
    for (const auto& r : records) out << r.dump() << '\n';
    char line[160];
    std::snprintf(line, sizeof line, "# %-10s %-36s %16s %s\n", "record", "subject", "value", "unit");
    out << line;
    for (const auto& r : records) {
        for (const auto& row : summary_rows(r)) {
            std::snprintf(line, sizeof line, "# %-10s %-36s %16.3f %s\n", row.record.c_str(), row.subject.c_str(),
                          row.value, row.unit.c_str());
            out << line;
        }
    }
    return out.str();
}

void emit_report(const std::vector<json>& records, const std::filesystem::path& path) {
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw BenchError("cannot write report to " + path.string());
    f << format_report(records, stamp);
    if (!f.flush()) throw BenchError("cannot write report to " + path.string());
}

}  // namespace pvran::bench
