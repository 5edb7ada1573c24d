#pragma once

// Backend half of the virtualization layer: per-slice RX/TX streamers that
// move one subframe per iteration between a radio channel and the slice's
// data channels, synchronized by a single in-band timestamp header.

#include "pvran/iqcore.hpp"
#include "pvran/radiodev.hpp"
#include "pvran/vchan.hpp"

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvran::pvback {

/// "PVTS" as little-endian bytes.
inline constexpr std::uint32_t kTimestampMagic = 0x53545650;
inline constexpr std::size_t kTimestampHeaderSize = 12;

/// First 12 bytes ever written to a slice's rx channel: magic u32, ticks u64.
struct TimestampHeader {
    std::uint32_t magic = kTimestampMagic;
    SampleTimestamp timestamp;
};

std::array<std::byte, kTimestampHeaderSize> encode_header(const TimestampHeader& header);
TimestampHeader decode_header(std::span<const std::byte, kTimestampHeaderSize> bytes);

std::string ctrl_path(SliceId id);
std::string rx_path(SliceId id);
std::string tx_path(SliceId id);

struct StreamerSnapshot {
    SampleTimestamp initial;
    /// Tick of the most recent subframe; initial + iterations * samples_per_subframe.
    SampleTimestamp timestamp;
    /// Subframes moved after the first run.
    std::uint64_t iterations = 0;
    bool first_run_done = false;
    std::uint64_t underruns = 0;
    std::uint64_t overruns = 0;
    std::uint64_t samples = 0;  // samples moved, including silence
    double stall_seconds = 0;   // time blocked on the data channel
};

struct SessionMetrics {
    SliceId slice_id;
    RadioChannelId radio_channel;
    int prbs = 0;
    StreamerSnapshot rx;
    StreamerSnapshot tx;
    std::uint64_t radio_samples_received = 0;
    /// rx samples per wall-clock second since the first run.
    double achieved_rate = 0;
    std::size_t rx_ring_high_water = 0;
    std::size_t ring_capacity = 0;
    bool alive = false;
};

struct SessionOptions {
    std::size_t ring_capacity = vchan::kDefaultRingCapacity;
    vchan::Backing backing = vchan::Backing::file;
    bool record_ledger = false;
    bool realtime_priority = false;
    std::optional<int> rx_core;
    std::optional<int> tx_core;
};

class SessionError : public std::runtime_error {
public:
    enum class Errc { slice_exists, unknown_slice, channel_in_use, invalid_channel, fdm_conflict, setup_failed };
    SessionError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

std::string to_string(SessionError::Errc code);

radio::ChannelTuning tuning_for(const SliceConfig& config);

class SliceSession {
public:
    /// Creates the rx/tx data channels, tunes the radio channel and spawns
    /// the streamers. The TX streamer stays parked until the RX first run.
    static std::unique_ptr<SliceSession> start(const SliceConfig& config, std::shared_ptr<radio::VirtualRadio> radio,
                                               vchan::RendezvousStore& store, const SessionOptions& options = {});
    ~SliceSession();
    SliceSession(const SliceSession&) = delete;
    SliceSession& operator=(const SliceSession&) = delete;

    /// Signals and joins both streamers, closes the channels and releases the
    /// radio channel. Idempotent: later calls return the same counters.
    SessionMetrics stop();
    SessionMetrics metrics() const;
    SliceConfig config() const;
    bool alive() const;
    /// Applies new frequencies and gains. Profile and radio channel are fixed
    /// for the life of a session.
    void retune(const SliceConfig& updated);

    /// Timestamps of every subframe moved; empty unless record_ledger.
    std::vector<SampleTimestamp> rx_ledger() const;
    std::vector<SampleTimestamp> tx_ledger() const;

private:
    struct Impl;
    explicit SliceSession(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

/// Owns the live sessions and the FDM plan they form.
class Backend {
public:
    Backend(std::shared_ptr<radio::VirtualRadio> radio, vchan::RendezvousStore& store, SessionOptions defaults = {});
    ~Backend();

    /// Verdict for adding `config` to the live plan (minus `replacing`).
    FdmVerdict check(const SliceConfig& config, std::optional<SliceId> replacing = std::nullopt) const;
    void start_session(const SliceConfig& config);
    SessionMetrics stop_session(SliceId id);
    /// Applies a changed tuning to a running session after re-validating the plan.
    void retune(const SliceConfig& updated);

    bool has_session(SliceId id) const;
    std::vector<SliceId> sessions() const;
    std::optional<SliceConfig> config(SliceId id) const;
    std::optional<SessionMetrics> metrics(SliceId id) const;
    std::vector<SessionMetrics> all_metrics() const;
    FdmPlan plan() const;
    std::shared_ptr<SliceSession> session(SliceId id) const;

    radio::VirtualRadio& radio() { return *radio_; }
    std::shared_ptr<radio::VirtualRadio> radio_ptr() const { return radio_; }
    vchan::RendezvousStore& store() { return store_; }
    const SessionOptions& options() const { return defaults_; }

private:
    std::shared_ptr<radio::VirtualRadio> radio_;
    vchan::RendezvousStore& store_;
    SessionOptions defaults_;
    mutable std::mutex mu_;
    std::map<SliceId, std::shared_ptr<SliceSession>> live_;
    std::map<SliceId, SessionMetrics> finished_;
};

}  // namespace pvran::pvback
