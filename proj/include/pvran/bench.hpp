#pragma once

// Measurement harness: one-way transport latency (shared-memory channel vs a
// socket pub-sub baseline), slice-capacity estimates derived from it,
// sustained paced streaming through the full pipeline, and report files.

#include "pvran/iqcore.hpp"

#include "json.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvran::bench {

using json = nlohmann::json;

class BenchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TransportKind { shm_vchan, pubsub_socket };

std::string to_string(TransportKind kind);
/// Accepts "shm", "shm_vchan", "pubsub", "pubsub_socket".
TransportKind transport_from_string(const std::string& name);

struct LatencyStats {
    std::size_t samples = 0;
    double min_us = 0;
    double median_us = 0;
    double p99_us = 0;
    double max_us = 0;
    double mean_us = 0;
    /// Message size the samples were taken at.
    std::size_t msg_bytes = 0;

    /// Order statistics use nearest-rank on the sorted samples.
    static LatencyStats from_samples(std::vector<double> us, std::size_t msg_bytes = 0);
};

json to_json(const LatencyStats& s);
/// Report record: the stats plus "record": "latency" and the transport.
json to_json(TransportKind kind, const LatencyStats& s);

struct LatencyOptions {
    std::size_t msg_bytes = 30720;
    std::size_t iters = 10000;
    std::size_t warmup = 1000;
    /// Ring size for the shared-memory channel.
    std::size_t ring_capacity = std::size_t{1} << 20;
};

/// One producer thread stamps the monotonic clock into each message and
/// sends it; one consumer thread takes the delta on arrival. One message is
/// in flight at a time, so the figure is transit latency, not queueing.
LatencyStats latency_oneway(TransportKind kind, const LatencyOptions& options);

struct CompareReport {
    TransportKind baseline = TransportKind::shm_vchan;
    TransportKind other = TransportKind::pubsub_socket;
    LatencyStats baseline_stats;
    LatencyStats other_stats;
    /// other mean / baseline mean.
    double ratio = 0;
};

json to_json(const CompareReport& r);

/// Runs `baseline` then `other`, never concurrently.
CompareReport compare_transports(const LatencyOptions& options, TransportKind baseline = TransportKind::shm_vchan,
                                 TransportKind other = TransportKind::pubsub_socket);

struct CapacityEstimate {
    TransportKind kind = TransportKind::shm_vchan;
    int prbs = 25;
    double subframe_period_us = 1000;
    double mean_us = 0;
    /// One subframe write plus one subframe read per slice per subframe.
    double round_cost_us = 0;
    std::uint64_t n_max = 0;
    std::string methodology;
};

json to_json(const CapacityEstimate& c);

/// n_max = floor(subframe_period / (2 x mean one-way latency)). Throws
/// BenchError unless `measured` was taken at the profile's subframe size.
CapacityEstimate capacity_estimate(const BandwidthProfile& profile, TransportKind kind, const LatencyStats& measured);

struct ThreadCpu {
    std::string name;
    double cpu_seconds = 0;
    double percent = 0;  // of one core over the window
};

struct StreamOptions {
    BandwidthProfile profile = BandwidthProfile::from_prbs(25);
    double seconds = 10;
    /// Wall-clock pacing; false runs the radio on its fast clock.
    bool paced = true;
    /// Subframes ignored at the start of the rate window.
    std::uint64_t settle_subframes = 200;
    /// SCHED_FIFO for the backend streamers and the frontend thread, when permitted.
    bool realtime = true;
};

struct StreamResult {
    int prbs = 25;
    double seconds = 0;
    bool paced = true;
    std::uint64_t subframes = 0;
    double expected_rate = 0;
    /// Samples per wall-clock second delivered to the slice stack.
    double achieved_rate = 0;
    /// Backend rx streamer's own rate figure.
    double backend_rate = 0;
    /// Subframes the radio dropped before the backend read them.
    std::uint64_t rx_overruns = 0;
    /// TX subframes that reached the radio after their air time.
    std::uint64_t tx_underruns = 0;
    std::uint64_t frames_sent = 0;
    std::vector<ThreadCpu> threads;
    /// Backend streamer threads (rx + tx) combined, percent of one core.
    double backend_cpu_percent = 0;

    std::uint64_t underruns() const { return rx_overruns + tx_underruns; }
    double rate_error() const { return expected_rate ? achieved_rate / expected_rate - 1 : 0; }
};

json to_json(const StreamResult& r);

/// radio -> pvback -> vchan -> remoting frontend -> slice stack endpoint,
/// one slice, for `seconds`.
StreamResult sustained_stream_test(const StreamOptions& options);

/// Per-thread CPU time of this process, keyed by thread id.
std::map<int, ThreadCpu> sample_threads();

/// Header line, one JSON line per record, then a fixed-width summary table.
/// Only the header's generated_at field varies between emissions of equal results.
void emit_report(const std::vector<json>& records, const std::filesystem::path& path);
std::string format_report(const std::vector<json>& records, const std::string& generated_at);

}  // namespace pvran::bench
