// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Pass a criterion name (or several) to run only those.

#include "pvran/bench.hpp"
#include "pvran/orchestrator.hpp"
#include "pvran/remoting.hpp"
#include "pvran/slicestack.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

using namespace pvran;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr int kCompareRuns = 5;
constexpr std::size_t kCompareBytes = 30720;
constexpr std::size_t kCompareIters = 10000;
constexpr double kMinRatio = 3.0;
constexpr double kCompareBudgetS = 120;
constexpr double kMedianBoundUs = 50;
constexpr std::uint64_t kLedgerSubframes = 10000;
constexpr double kLedgerBudgetS = 60;
constexpr double kStreamSeconds = 10;
constexpr double kRateTolerance = 1e-3;
constexpr double kSliceSeconds = 10;
constexpr double kLeakageBoundDb = -40;
constexpr std::size_t kRingBytes = 12 * 1024 * 1024;
constexpr int kPingPongs = 100000;
constexpr auto kWatchdog = 1s;
constexpr int kFuzzCommands = 200;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 3) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(precision);
    s << v;
    return s.str();
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// Hypervisor steal ticks from /proc/stat, for context on paced runs.
long steal_ticks() {
    std::ifstream f("/proc/stat");
    std::string cpu;
    long v[8] = {};
    f >> cpu;
    for (auto& x : v) f >> x;
    return v[7];
}

// ---------------------------------------------------------------------------

// Shared between the two transport criteria.
std::vector<bench::CompareReport> g_compare;
double g_compare_seconds = 0;

void run_compare() {
    if (!g_compare.empty()) return;
    bench::LatencyOptions o;
    o.msg_bytes = kCompareBytes;
    o.iters = kCompareIters;
    const auto t0 = Clock::now();
    for (int k = 0; k < kCompareRuns; ++k) g_compare.push_back(bench::compare_transports(o));
    g_compare_seconds = seconds_since(t0);
}

Outcome transport_ordering() {
    run_compare();
    int ordered = 0;
    double min_ratio = 1e300;
    std::string ratios;
    for (const auto& r : g_compare) {
        if (r.baseline_stats.mean_us < r.other_stats.mean_us && r.ratio >= kMinRatio) ++ordered;
        min_ratio = std::min(min_ratio, r.ratio);
        ratios += (ratios.empty() ? "" : ",") + fmt(r.ratio, 2);
    }
    const bool pass = ordered == kCompareRuns && g_compare_seconds < kCompareBudgetS;
    return {pass, std::to_string(ordered) + "/" + std::to_string(kCompareRuns) + " runs ordered with ratio >= " +
                      fmt(kMinRatio, 1) + " (ratios " + ratios + "; shm mean " +
                      fmt(g_compare.front().baseline_stats.mean_us, 2) + " us, pubsub mean " +
                      fmt(g_compare.front().other_stats.mean_us, 2) + " us); " + fmt(g_compare_seconds, 1) + " s"};
}

Outcome latency_bound() {
    run_compare();
    double worst = 0;
    for (const auto& r : g_compare) worst = std::max(worst, r.baseline_stats.median_us);
    return {worst < kMedianBoundUs, "worst shm median over " + std::to_string(g_compare.size()) + " runs " +
                                        fmt(worst, 2) + " us (bound " + fmt(kMedianBoundUs, 0) + " us)"};
}

// ---------------------------------------------------------------------------

struct Stack {
    vchan::RendezvousStore store = vchan::RendezvousStore::temporary();
    std::shared_ptr<radio::VirtualRadio> radio;
    std::unique_ptr<pvback::Backend> backend;
    std::unique_ptr<remoting::Dispatcher> dispatcher;

    Stack(std::shared_ptr<radio::VirtualRadio> r, bool ledger) : radio(std::move(r)) {
        pvback::SessionOptions so;
        so.backing = vchan::Backing::memory;
        so.record_ledger = ledger;
        backend = std::make_unique<pvback::Backend>(radio, store, so);
        dispatcher = std::make_unique<remoting::Dispatcher>(*backend);
        dispatcher->start();
    }
    ~Stack() {
        dispatcher.reset();
        backend.reset();
    }
};

// One ledger run; returns an empty string on success, else what went wrong.
std::string ledger_run(int prbs, std::uint64_t expected_offset) {
    radio::RadioOptions ro;
    ro.channels = 1;
    ro.fast_clock = true;
    ro.epoch_tick = 987'654;
    Stack st(radio::VirtualRadio::open(ro), true);
    SliceConfig cfg;
    cfg.slice_id = {1};
    cfg.profile = BandwidthProfile::from_prbs(prbs);
    cfg.dl_freq_hz = 595'000'000;
    cfg.ul_freq_hz = 545'000'000;
    st.dispatcher->open_control(cfg.slice_id);
    remoting::RemoteDevice dev(st.store, cfg);
    slicestack::Trx trx(dev);
    trx.set_record_ledger(true);
    slicestack::EndpointOptions o;
    o.subframes = kLedgerSubframes;
    o.traffic.every_n_subframes = 0;
    slicestack::run_endpoint(trx, o);

    auto session = st.backend->session(cfg.slice_id);
    if (!session) return std::to_string(prbs) + " PRB: no session";
    const auto deadline = Clock::now() + 10s;
    while (session->tx_ledger().size() < kLedgerSubframes && Clock::now() < deadline) std::this_thread::sleep_for(2ms);
    const auto brx = session->rx_ledger();
    const auto btx = session->tx_ledger();
    const auto& frx = trx.rx_ledger();
    const auto& ftx = trx.tx_ledger();
    if (frx.size() < kLedgerSubframes || ftx.size() < kLedgerSubframes || brx.size() < kLedgerSubframes ||
        btx.size() < kLedgerSubframes) {
        return std::to_string(prbs) + " PRB: short ledger";
    }
    const std::uint64_t n = samples_per_subframe(cfg.profile);
    for (std::size_t k = 0; k < kLedgerSubframes; ++k) {
        if (!(frx[k] == brx[k]) || !(ftx[k] == btx[k])) {
            return std::to_string(prbs) + " PRB: ledgers differ at subframe " + std::to_string(k);
        }
        if (k > 0 && (brx[k].ticks - brx[k - 1].ticks != n || btx[k].ticks - btx[k - 1].ticks != n)) {
            return std::to_string(prbs) + " PRB: gap at subframe " + std::to_string(k);
        }
    }
    if (btx[0].ticks - brx[0].ticks != expected_offset) {
        return std::to_string(prbs) + " PRB: first TX - first RX = " + std::to_string(btx[0].ticks - brx[0].ticks);
    }
    return {};
}

Outcome timestamp_sync() {
    const auto t0 = Clock::now();
    // 30640 ticks at 7.68 Msps; the same 3.99 ms at 15.36 Msps.
    std::string err = ledger_run(25, 30640);
    if (err.empty()) err = ledger_run(50, 61280);
    const double secs = seconds_since(t0);
    if (!err.empty()) return {false, err};
    return {secs < kLedgerBudgetS, "1e4 subframes at 25 and 50 PRB identical element-wise, first TX - first RX = "
                                   "30640 / 61280; " + fmt(secs, 1) + " s"};
}

// ---------------------------------------------------------------------------

std::vector<bench::StreamResult> g_stream;
long g_stream_steal = 0;

void run_streams() {
    if (!g_stream.empty()) return;
    const long s0 = steal_ticks();
    for (int prbs : {25, 50}) {
        bench::StreamOptions o;
        o.profile = BandwidthProfile::from_prbs(prbs);
        o.seconds = kStreamSeconds;
        o.paced = true;
        g_stream.push_back(bench::sustained_stream_test(o));
    }
    g_stream_steal = steal_ticks() - s0;
}

Outcome sustained_rate() {
    run_streams();
    bool pass = true;
    std::string detail;
    for (const auto& r : g_stream) {
        const bool ok = r.underruns() == 0 && std::abs(r.rate_error()) <= kRateTolerance;
        pass = pass && ok;
        detail += std::to_string(r.prbs) + " PRB: " + fmt(r.achieved_rate / 1e6, 4) + " Msps (" +
                  fmt(r.rate_error() * 100, 4) + "%), underruns " + std::to_string(r.underruns()) + " (rx " +
                  std::to_string(r.rx_overruns) + ", late tx " + std::to_string(r.tx_underruns) + "); ";
    }
    detail += "host steal during runs " + std::to_string(g_stream_steal * 1000 / ::sysconf(_SC_CLK_TCK)) + " ms";
    return {pass, detail};
}

Outcome cpu_scaling() {
    run_streams();
    const double c25 = g_stream[0].backend_cpu_percent, c50 = g_stream[1].backend_cpu_percent;
    const bool measured = c25 > 0 && c50 > 0;
    return {measured, "backend cpu " + fmt(c25, 2) + "% at 25 PRB, " + fmt(c50, 2) + "% at 50 PRB, x" +
                          fmt(measured ? c50 / c25 : 0, 2) + (measured && c50 < 2 * c25 ? " (sub-linear)" : " (not sub-linear)") +
                          "; reported only"};
}

// ---------------------------------------------------------------------------

orchestrator::json slice_body(std::uint32_t id, std::uint64_t dl_mhz, std::uint64_t ul_mhz, std::uint32_t channel,
                              const std::string& phy) {
    return {{"slice_id", id},
            {"phy_profile", phy},
            {"prbs", 25},
            {"dl_freq_hz", dl_mhz * 1'000'000},
            {"ul_freq_hz", ul_mhz * 1'000'000},
            {"radio_channel", channel}};
}

Outcome whole_stack_slicing() {
    orchestrator::OrchestratorOptions o;
    o.radio.fast_clock = false;
    o.refresh_period = 100ms;
    orchestrator::Orchestrator core(o);
    const auto a = core.execute(orchestrator::Verb::create, slice_body(1, 595, 545, 0, "phy-a"));
    const auto b = core.execute(orchestrator::Verb::create, slice_body(2, 580, 530, 1, "phy-b"));
    if (!a.ok || !b.ok) return {false, "create failed: " + a.message + " " + b.message};

    // Goodput must be positive at every sample once the first reports are in.
    const auto t0 = Clock::now();
    int samples = 0, starved = 0;
    std::this_thread::sleep_for(1s);
    while (seconds_since(t0) < kSliceSeconds) {
        const auto v = core.view();
        for (std::uint32_t id : {1u, 2u}) {
            bool positive = false;
            for (const auto& m : v->metrics.slices) {
                if (m.slice_id.value == id && m.state == orchestrator::SliceState::running && m.dl_goodput_bps > 0 &&
                    m.ul_goodput_bps > 0) {
                    positive = true;
                }
            }
            ++samples;
            if (!positive) ++starved;
        }
        std::this_thread::sleep_for(500ms);
    }
    std::uint64_t cross = 0, foreign = 0;
    std::string goodput;
    bool sent = true;
    for (std::uint32_t id : {1u, 2u}) {
        const auto r = core.execute(orchestrator::Verb::destroy, {{"slice_id", id}});
        if (!r.ok) return {false, "destroy failed: " + r.message};
        const auto& f = r.body.at("final");
        for (const char* side : {"enb", "ue"}) {
            cross += f.at(side).at("cross_slice_frames").get<std::uint64_t>();
            foreign += f.at(side).at("foreign_samples").get<std::uint64_t>();
            sent = sent && f.at(side).at("frames_received").get<std::uint64_t>() > 0;
            goodput += std::string(goodput.empty() ? "" : ", ") + "s" + std::to_string(id) + "/" + side + " " +
                       fmt(f.at(side).at("goodput_bps").get<double>() / 1e3, 1) + " kbit/s";
        }
    }
    const bool pass = starved == 0 && sent && cross == 0 && foreign == 0;
    return {pass, "595 MHz phy-a + 580 MHz phy-b for " + fmt(seconds_since(t0), 1) + " s: " + goodput + "; " +
                      std::to_string(starved) + "/" + std::to_string(samples) + " samples without goodput, cross-slice " +
                      std::to_string(cross) + ", foreign samples " + std::to_string(foreign)};
}

// ---------------------------------------------------------------------------

IQBuffer tone_iq(std::size_t n, double freq, double rate, std::uint64_t first) {
    IQBuffer b(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double ph = 2 * std::numbers::pi * freq * static_cast<double>(first + k) / rate;
        b[k] = {static_cast<std::int16_t>(std::lround(8000 * std::cos(ph))),
                static_cast<std::int16_t>(std::lround(8000 * std::sin(ph)))};
    }
    return b;
}

double power(std::span<const IQSample> v) {
    double p = 0;
    for (auto s : v) p += double(s.i) * s.i + double(s.q) * s.q;
    return p / static_cast<double>(v.size());
}

// Tone on one slice's downlink; in-band power on its UE against what the other UE hears.
double leakage_db(std::uint32_t from, double tone_hz) {
    radio::RadioOptions o;
    o.channels = 2;
    o.fast_clock = true;
    o.medium.kind = radio::MediumKind::wideband_fdm;
    o.medium.wideband_rate = 30.72e6;
    o.medium.dl_center_hz = 587'500'000;
    o.medium.ul_center_hz = 537'500'000;
    auto r = radio::VirtualRadio::open(o);
    const std::uint64_t dl[2] = {595'000'000, 580'000'000};
    for (std::uint32_t k = 0; k < 2; ++k) {
        radio::ChannelTuning t;
        t.tx_freq_hz = dl[k];
        t.rx_freq_hz = dl[k] - 50'000'000;
        t.rate = 7.68e6;
        r->tune({k}, t);
    }
    auto ue0 = r->attach_ue({0});
    auto ue1 = r->attach_ue({1});
    const std::size_t n = 7680;
    for (std::uint64_t k = 0; k < 4; ++k) r->send({from}, tone_iq(n, tone_hz, 7.68e6, k * n), {k * n});
    auto& own = from == 0 ? ue0 : ue1;
    auto& other = from == 0 ? ue1 : ue0;
    own->recv(n);
    other->recv(n);
    const double p_own = power(own->recv(2 * n).first);
    const double p_other = power(other->recv(2 * n).first);
    return 10 * std::log10(std::max(p_other, 1e-12) / p_own);
}

Outcome fdm_isolation() {
    double worst = -1e300;
    std::string detail;
    for (std::uint32_t from : {0u, 1u}) {
        for (double tone : {-3.0e6, -1.1e6, 0.0, 1.1e6, 3.0e6}) {
            worst = std::max(worst, leakage_db(from, tone));
        }
    }
    return {worst <= kLeakageBoundDb, "5 MHz slices at 595/580 MHz, tones at 0, +/-1.1, +/-3 MHz both ways: worst "
                                      "cross-leakage " + fmt(worst, 1) + " dB (bound " + fmt(kLeakageBoundDb, 0) +
                                          " dB)"};
}

// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::uint64_t h, std::span<const std::byte> data) {
    for (auto b : data) {
        h ^= std::to_integer<std::uint64_t>(b);
        h *= 0x100000001b3ull;
    }
    return h;
}
constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ull;

bool pump(vchan::StreamChannel& tx, vchan::StreamChannel& rx, std::size_t total, std::uint32_t seed) {
    std::uint64_t sent = kFnvBasis, received = kFnvBasis;
    std::size_t received_bytes = 0;
    std::thread consumer([&] {
        std::mt19937 rng(seed + 1);
        std::uniform_int_distribution<std::size_t> sz(1, 70000);
        std::vector<std::byte> buf(70000);
        while (received_bytes < total) {
            const std::size_t got = rx.read(std::span(buf.data(), std::min(sz(rng), total - received_bytes)));
            received = fnv1a(received, std::span(buf.data(), got));
            received_bytes += got;
        }
    });
    std::mt19937 rng(seed);
    std::uniform_int_distribution<std::size_t> sz(1, 90000);
    std::vector<std::byte> buf(90000);
    std::size_t written = 0;
    bool ok = true;
    while (written < total) {
        const std::size_t n = std::min(sz(rng), total - written);
        for (std::size_t k = 0; k < n; ++k) buf[k] = std::byte(rng() & 0xff);
        ok = ok && tx.write(std::span(buf.data(), n)) == n;
        sent = fnv1a(sent, std::span(buf.data(), n));
        written += n;
    }
    consumer.join();
    return ok && received_bytes == total && sent == received;
}

Outcome ring_correctness() {
    int digests = 0, matched = 0;
    for (auto backing : {vchan::Backing::file, vchan::Backing::memory}) {
        auto store = vchan::RendezvousStore::temporary("dom0");
        auto server = vchan::StreamChannel::server_create(store, "pv/1/rx", vchan::kDefaultRingCapacity,
                                                          vchan::kDefaultRingCapacity, true, backing);
        auto client = vchan::StreamChannel::client_connect(store, "dom0", "pv/1/rx");
        matched += pump(server, client, kRingBytes, 1234);
        matched += pump(client, server, kRingBytes, 99);
        digests += 2;
    }

    // Push the u32 ring counters past 2^32.
    bool counters_ok = true;
    {
        auto store = vchan::RendezvousStore::temporary("dom0");
        auto server = vchan::StreamChannel::server_create(store, "pv/1/wrap", vchan::kDefaultRingCapacity,
                                                          vchan::kDefaultRingCapacity, false, vchan::Backing::memory);
        auto client = vchan::StreamChannel::client_connect(store, "dom0", "pv/1/wrap", false);
        std::vector<std::byte> a(vchan::kDefaultRingCapacity - 12345), b(a.size());
        const std::uint64_t rounds = (1ull << 32) / a.size() + 3;
        for (std::uint64_t r = 0; r < rounds && counters_ok; ++r) {
            a.front() = std::byte(r & 0xff);
            a.back() = std::byte(~r & 0xff);
            counters_ok = server.write(a) == a.size() && client.read(b) == b.size() && b.front() == a.front() &&
                          b.back() == a.back();
        }
    }

    auto store = vchan::RendezvousStore::temporary("dom0");
    auto server = vchan::StreamChannel::server_create(store, "pv/1/ping", vchan::kDefaultRingCapacity,
                                                      vchan::kDefaultRingCapacity, true, vchan::Backing::file);
    auto client = vchan::StreamChannel::client_connect(store, "dom0", "pv/1/ping");
    std::atomic<int> progress{0};
    std::atomic<bool> done{false}, fired{false};
    std::thread watchdog([&] {
        int last = -1;
        auto changed = Clock::now();
        while (!done) {
            std::this_thread::sleep_for(10ms);
            const int now = progress.load();
            if (now != last) {
                last = now;
                changed = Clock::now();
            } else if (Clock::now() - changed > kWatchdog) {
                fired = true;
                server.close();
                client.close();
                return;
            }
        }
    });
    std::thread echo([&] {
        std::array<std::byte, 8> buf{};
        try {
            for (int k = 0; k < kPingPongs; ++k) {
                client.read(buf);
                client.write(buf);
            }
        } catch (const vchan::ChannelError&) {
        }
    });
    bool echoed = true;
    try {
        std::array<std::byte, 8> msg{}, reply{};
        for (int k = 0; k < kPingPongs && echoed; ++k) {
            std::memcpy(msg.data(), &k, sizeof k);
            server.write(msg);
            server.read(reply);
            echoed = reply == msg;
            progress.store(k + 1);
        }
    } catch (const vchan::ChannelError&) {
    }
    done = true;
    echo.join();
    watchdog.join();

    const bool pass = matched == digests && counters_ok && echoed && !fired && progress == kPingPongs;
    return {pass, std::to_string(matched) + "/" + std::to_string(digests) + " digests of " +
                      std::to_string(kRingBytes >> 20) + " MiB equal (file and memory, both directions), u32 "
                      "counter wrap " + (counters_ok ? "ok" : "corrupt") + ", " + std::to_string(progress.load()) +
                      " ping-pongs, watchdog " + (fired ? "fired" : "quiet")};
}

// ---------------------------------------------------------------------------

std::set<std::uint32_t> running_ids(const std::vector<orchestrator::SliceDescriptor>& ds) {
    std::set<std::uint32_t> out;
    for (const auto& d : ds) {
        if (d.state == orchestrator::SliceState::running) out.insert(d.config.slice_id.value);
    }
    return out;
}

// Pairwise band and channel check over the running descriptors.
bool plan_safe(const std::vector<orchestrator::SliceDescriptor>& ds) {
    std::vector<const SliceConfig*> run;
    for (const auto& d : ds) {
        if (d.state == orchestrator::SliceState::running) run.push_back(&d.config);
    }
    for (std::size_t a = 0; a < run.size(); ++a) {
        for (std::size_t b = a + 1; b < run.size(); ++b) {
            const auto& x = *run[a];
            const auto& y = *run[b];
            const double half = (static_cast<double>(x.profile.sample_rate()) + y.profile.sample_rate()) / 2;
            if (std::abs(double(x.dl_freq_hz) - double(y.dl_freq_hz)) < half) return false;
            if (std::abs(double(x.ul_freq_hz) - double(y.ul_freq_hz)) < half) return false;
            if (x.radio_channel == y.radio_channel) return false;
        }
    }
    return true;
}

Outcome plan_safety() {
    orchestrator::OrchestratorOptions o;
    o.radio.fast_clock = true;
    o.refresh_period = 20ms;
    o.report_every = 20;
    orchestrator::Orchestrator core(o);
    std::size_t audits = 0, unsafe = 0, unaccounted = 0;
    core.set_audit([&](const orchestrator::AuditView& a) {
        ++audits;
        if (!plan_safe(a.descriptors) || !validate_fdm_plan(a.backend_plan).ok()) ++unsafe;
        std::set<std::uint32_t> sessions;
        for (auto id : a.backend_sessions) sessions.insert(id.value);
        if (sessions != running_ids(a.descriptors)) ++unaccounted;
    });
    std::mt19937 rng(7);
    const std::uint64_t grid[] = {560, 566, 572, 580, 588, 595, 600, 610};
    int accepted = 0;
    for (int k = 0; k < kFuzzCommands; ++k) {
        const std::uint32_t id = 1 + rng() % 6;
        const auto dl = grid[rng() % 8];
        const auto ul = grid[rng() % 8] - 50;
        orchestrator::Reply r;
        switch (rng() % 3) {
            case 0:
                r = core.execute(orchestrator::Verb::create,
                                 slice_body(id, dl, ul, rng() % 4, rng() % 2 ? "phy-a" : "phy-b"));
                break;
            case 1: r = core.execute(orchestrator::Verb::destroy, {{"slice_id", id}}); break;
            default:
                r = core.execute(orchestrator::Verb::set_band,
                                 {{"slice_id", id}, {"dl_freq_hz", dl * 1'000'000}, {"ul_freq_hz", ul * 1'000'000}});
        }
        accepted += r.ok;
    }
    const bool pass = audits == kFuzzCommands && unsafe == 0 && unaccounted == 0;
    return {pass, std::to_string(kFuzzCommands) + " commands (" + std::to_string(accepted) + " accepted), " +
                      std::to_string(audits) + " audits, " + std::to_string(unsafe) + " unsafe plans, " +
                      std::to_string(unaccounted) + " with unaccounted sessions"};
}

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {"transport-ordering", transport_ordering}, {"latency-bound", latency_bound},
        {"timestamp-sync", timestamp_sync},         {"sustained-rate", sustained_rate},
        {"whole-stack-slicing", whole_stack_slicing}, {"fdm-isolation", fdm_isolation},
        {"ring-correctness", ring_correctness},     {"plan-safety", plan_safety},
        {"cpu-scaling", cpu_scaling},
    };
    std::set<std::string> only(argv + 1, argv + argc);
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.name)) continue;
        Outcome o;
        const auto t0 = Clock::now();
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << fmt(seconds_since(t0), 1)
                  << " s]" << std::endl;
    }
    return failed ? 1 : 0;
}
