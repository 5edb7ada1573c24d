#pragma once

// Toy slice stacks that run above the device API: two framed PHYs with
// preamble sync and CRC, a trx wrapper that keeps the frontend timestamp
// ledger, and a subframe-synchronous endpoint loop for either side of a link.

#include "pvran/device_api.hpp"
#include "pvran/radiodev.hpp"

#include <atomic>
#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace pvran::slicestack {

enum class Modulation { qpsk, bpsk };

class PhyError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct PhyProfile {
    std::string name;
    Modulation modulation = Modulation::qpsk;
    std::size_t samples_per_symbol = 4;
    /// Unit-magnitude preamble symbols.
    std::vector<std::complex<float>> preamble;
    std::size_t max_payload = 256;
    float amplitude = 8000;

    std::size_t bits_per_symbol() const { return modulation == Modulation::qpsk ? 2 : 1; }
    /// Samples a frame with `payload_len` payload bytes occupies on air.
    std::size_t frame_samples(std::size_t payload_len) const;

    static const PhyProfile& phy_a();  // QPSK, 4 samples/symbol, 32-symbol preamble
    static const PhyProfile& phy_b();  // BPSK, 8 samples/symbol, 64-symbol preamble
    /// Throws PhyError for names other than "phy-a" and "phy-b".
    static const PhyProfile& by_name(const std::string& name);
};

/// seq u32, length u16, payload, CRC-32 over the preceding bytes; all LE.
struct Frame {
    std::uint32_t seq = 0;
    std::vector<std::byte> payload;

    friend bool operator==(const Frame&, const Frame&) = default;
};

inline constexpr std::size_t kFrameOverhead = 4 + 2 + 4;

/// CRC-32 (reflected 0x04C11DB7, the zlib / IEEE 802.3 variant).
std::uint32_t crc32(std::span<const std::byte> bytes);
std::vector<std::byte> frame_bytes(const Frame& frame);
/// Inverse of frame_bytes; nullopt unless the length and CRC check out.
std::optional<Frame> parse_frame(std::span<const std::byte> bytes);

/// Preamble then frame bits, rectangular pulses of samples_per_symbol.
IQBuffer modulate(const PhyProfile& phy, const Frame& frame);

struct DecodedFrame {
    Frame frame;
    SampleTimestamp start;  // tick of the first preamble sample
    std::size_t samples = 0;
    std::size_t nonzero_samples = 0;
    float correlation = 0;
};

struct DemodCounters {
    std::uint64_t samples = 0;
    std::uint64_t candidates = 0;    // energy onsets examined
    std::uint64_t sync_failures = 0; // onsets without a matching preamble
    std::uint64_t crc_failures = 0;
    std::uint64_t frames = 0;
    /// Nonzero samples the receiver moved past without decoding a frame there.
    std::uint64_t unclaimed_nonzero = 0;
};

/// Streaming receiver: feed contiguous sample blocks, collect CRC-clean frames.
class Demodulator {
public:
    explicit Demodulator(const PhyProfile& phy);

    /// `first` is the tick of samples[0]; blocks must be contiguous.
    void push(std::span<const IQSample> samples, SampleTimestamp first);
    /// Frames completed so far, in order.
    std::vector<DecodedFrame> take();
    const DemodCounters& counters() const { return counters_; }

    /// Normalized preamble correlation threshold.
    static constexpr float kSyncThreshold = 0.6f;

private:
    void scan();
    std::optional<std::size_t> onset(std::size_t from) const;
    float correlate(std::size_t at, std::complex<float>& phase) const;
    std::vector<std::byte> slice_bytes(std::size_t at, std::complex<float> phase, std::size_t first_bit,
                                       std::size_t count) const;
    std::size_t nonzero(std::size_t from, std::size_t to) const;
    void account(std::size_t to);

    const PhyProfile& phy_;
    std::vector<std::complex<float>> template_;  // preamble waveform, unit symbols
    float template_energy_ = 0;
    std::vector<IQSample> buf_;
    std::uint64_t buf_tick_ = 0;
    bool started_ = false;
    std::size_t scan_ = 0;      // next onset search position
    std::size_t accounted_ = 0; // samples before this are classified
    std::vector<DecodedFrame> ready_;
    DemodCounters counters_;
};

/// One-shot demodulation of a complete sample run.
std::vector<DecodedFrame> demodulate(const PhyProfile& phy, std::span<const IQSample> samples,
                                     SampleTimestamp first = {});

struct TrxState {
    SampleTimestamp next_rx;
    SampleTimestamp next_tx;
    BandwidthProfile profile = BandwidthProfile::from_prbs(25);
    bool started = false;
};

/// trx read/write over the device API. The first read fixes t0; after that
/// both timestamps advance locally by the samples moved.
class Trx {
public:
    explicit Trx(DeviceApi& device);

    std::string start();
    std::pair<IQBuffer, SampleTimestamp> read(std::size_t n);
    void write(std::span<const IQSample> samples, SampleTimestamp at);
    const TrxState& state() const { return state_; }
    DeviceApi& device() { return device_; }

    void set_record_ledger(bool on) { record_ = on; }
    const std::vector<SampleTimestamp>& rx_ledger() const { return rx_ledger_; }
    const std::vector<SampleTimestamp>& tx_ledger() const { return tx_ledger_; }

private:
    DeviceApi& device_;
    TrxState state_;
    bool record_ = false;
    std::vector<SampleTimestamp> rx_ledger_;
    std::vector<SampleTimestamp> tx_ledger_;
};

/// UE-side binding of the device API onto a radio channel's UE endpoint.
/// Its transmit stream starts one tx offset after the first received tick.
class UeDevice final : public DeviceApi {
public:
    UeDevice(std::unique_ptr<radio::UeEndpoint> endpoint, SliceConfig config);

    std::string find_device() override;
    bool established() const override { return established_; }
    const SliceConfig& config() const override { return config_; }

    std::uint64_t set_rx_freq(std::uint64_t hz) override { return hz; }
    std::uint64_t set_tx_freq(std::uint64_t hz) override { return hz; }
    std::int32_t set_rx_gain(std::int32_t db) override { return db; }
    std::int32_t set_tx_gain(std::int32_t db) override { return db; }
    std::uint64_t set_rate(std::uint64_t samples_per_second) override { return samples_per_second; }
    void set_time_source(const std::string&) override {}

    std::pair<IQBuffer, SampleTimestamp> recv(std::size_t n) override;
    void send(std::span<const IQSample> samples, SampleTimestamp at) override;
    void shutdown() override;

    radio::UeEndpoint& endpoint() { return *endpoint_; }

private:
    std::unique_ptr<radio::UeEndpoint> endpoint_;
    SliceConfig config_;
    bool established_ = false;
    bool rx_started_ = false;
    SampleTimestamp next_tx_;
};

enum class Role { enb, ue };

std::string to_string(Role role);

struct TrafficConfig {
    std::size_t payload_bytes = 64;
    /// One frame every this many subframes; 0 sends nothing.
    std::size_t every_n_subframes = 1;
    std::uint64_t seed = 1;
};

struct EndpointStats;

struct EndpointOptions {
    Role role = Role::enb;
    std::uint16_t slice_tag = 0;
    const PhyProfile* phy = &PhyProfile::phy_a();
    TrafficConfig traffic;
    /// Subframes to run; 0 runs until stopped or the stream ends.
    std::uint64_t subframes = 0;
    /// Emit a stats line every this many subframes (0: only at the end).
    std::uint64_t report_every = 0;
    std::ostream* report = nullptr;
    /// Called with the running totals every report_every subframes.
    std::function<void(const EndpointStats&)> progress;
};

struct EndpointStats {
    Role role = Role::enb;
    std::uint16_t slice_tag = 0;
    std::string phy;
    std::uint64_t subframes = 0;
    std::uint64_t samples = 0;
    double device_seconds = 0;
    std::uint64_t frames_sent = 0;
    std::uint64_t payload_bytes_sent = 0;
    std::uint64_t frames_received = 0;
    std::uint64_t payload_bytes_received = 0;
    /// Decoded frames carrying another slice's tag.
    std::uint64_t cross_slice_frames = 0;
    /// Frames missing from the received sequence numbers.
    std::uint64_t frames_lost = 0;
    /// Nonzero received samples not explained by a decoded frame of this slice.
    std::uint64_t foreign_samples = 0;
    double latency_mean_us = 0;
    double latency_max_us = 0;
    bool ended_by_stream = false;
    std::string end_reason;

    double goodput_bps() const;
    double offered_bps() const;
    double loss_rate() const;
};

std::string to_json_line(const EndpointStats& stats);

/// Payload layout: slice tag u16, tx tick u64, then seeded filler bytes.
std::vector<std::byte> make_payload(std::uint16_t tag, std::uint64_t tx_tick, std::uint32_t seq, std::size_t size,
                                    std::uint64_t seed);

/// Drives one side of a slice link: one trx read, frame decode and one trx
/// write per subframe. Returns when `subframes` ran, `stop` is set, or the
/// stream ends (partial stats, ended_by_stream set).
EndpointStats run_endpoint(Trx& trx, const EndpointOptions& options, const std::atomic<bool>* stop = nullptr);
EndpointStats run_endpoint(DeviceApi& device, const EndpointOptions& options, const std::atomic<bool>* stop = nullptr);

}  // namespace pvran::slicestack
