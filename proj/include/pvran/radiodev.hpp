#pragma once

// Simulated multi-channel SDR and its medium.
//
// Each radio channel has a base-station side (driven by pvback) and an
// optional UE endpoint. Samples the BS sends appear on the downlink; samples
// the UE sends appear on the uplink the BS receives. Device time is counted
// in ticks at the channel's sample rate.
//
// Clock modes:
//  - paced: availability follows a monotonic wall clock anchored at open().
//  - fast: no wall time. A reader waits only until every active transmitter
//    it can hear has declared (begin_tx / send) that nothing earlier than the
//    requested range is still to come. A UE reader is additionally bounded by
//    its channel's BS receive cursor, which acts as device time.

#include "pvran/iqcore.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace pvran::radio {

enum class MediumKind { ideal_loopback, wideband_fdm };

struct MediumMode {
    MediumKind kind = MediumKind::ideal_loopback;
    // Wideband only. A channel's downlink offset is tx_freq - dl_center_hz
    // and its uplink offset is rx_freq - ul_center_hz.
    double wideband_rate = 0;
    std::uint64_t dl_center_hz = 0;
    std::uint64_t ul_center_hz = 0;
    std::size_t num_taps = 127;
};

struct ChannelTuning {
    std::uint64_t rx_freq_hz = 0;  // uplink, heard by the BS
    std::uint64_t tx_freq_hz = 0;  // downlink, sent by the BS
    double rate = 0;
    std::int32_t rx_gain_db = 0;
    std::int32_t tx_gain_db = 0;
    bool active = false;
};

struct RxMetadata {
    SampleTimestamp timestamp;
    bool overflow = false;
    std::uint64_t dropped = 0;  // samples skipped before this block; a multiple of the block size
};

struct RadioOptions {
    std::size_t channels = 2;
    double master_clock_rate = 30.72e6;
    MediumMode medium;
    bool fast_clock = false;
    std::uint64_t epoch_tick = 0;
    /// How far (in samples) a reader may lag the clock before an overflow.
    std::size_t buffer_depth = std::size_t{1} << 19;
    /// Channels tuned at open; lets open() reject an impossible band plan.
    std::vector<std::pair<RadioChannelId, ChannelTuning>> presets;
};

struct ChannelCounters {
    std::uint64_t samples_received = 0;
    std::uint64_t samples_sent = 0;
    std::uint64_t late_packets = 0;
    std::uint64_t late_samples = 0;
    std::uint64_t overflows = 0;
    std::uint64_t dropped_samples = 0;
};

struct UeLinkConfig {
    /// One-way medium latency in samples, applied in both directions.
    std::uint64_t latency_samples = 0;
    /// AWGN relative to each received block's signal power. None = noiseless.
    std::optional<double> snr_db;
    std::uint64_t seed = 1;
};

class RadioError : public std::runtime_error {
public:
    enum class Errc { invalid_medium, invalid_channel, channel_inactive, released, empty_buffer, band_outside_wideband,
                      ue_attached };
    RadioError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

class UeEndpoint;
struct RadioState;

class VirtualRadio {
public:
    static std::shared_ptr<VirtualRadio> open(const RadioOptions& options);
    ~VirtualRadio();

    std::size_t channel_count() const;
    bool fast_clock() const;
    const MediumMode& medium() const;

    /// Activates the channel with the given tuning (active flag is implied).
    void tune(RadioChannelId ch, ChannelTuning tuning);
    ChannelTuning tuning(RadioChannelId ch) const;
    /// Deactivates the channel and wakes every caller blocked on it.
    void release(RadioChannelId ch);

    /// Blocks until n samples are available; returns them with the tick of
    /// the first one. Silence when nothing was transmitted.
    std::pair<IQBuffer, RxMetadata> recv(RadioChannelId ch, std::size_t n);
    /// Schedules samples on the downlink at tick `at`. Returns false (and
    /// counts a late packet, dropping the samples) if `at` is already past.
    bool send(RadioChannelId ch, std::span<const IQSample> samples, SampleTimestamp at);
    /// Declares the first tick the BS will transmit at; fast-clock readers
    /// wait on the declared stream from then on.
    void begin_tx(RadioChannelId ch, SampleTimestamp first);
    void end_tx(RadioChannelId ch);

    /// Current device time of the channel: the wall-clock tick when paced,
    /// the BS receive cursor in fast-clock mode.
    SampleTimestamp now(RadioChannelId ch) const;
    ChannelCounters counters(RadioChannelId ch) const;

    /// Attaches the single UE of a channel. Throws ue_attached if one exists.
    std::unique_ptr<UeEndpoint> attach_ue(RadioChannelId ch, UeLinkConfig link = {});

    /// Appends every block the BS receives on `ch` to <prefix>.iq (raw
    /// interleaved little-endian i16) and writes <prefix>.txt on the first block.
    void enable_capture(RadioChannelId ch, const std::filesystem::path& prefix);

private:
    explicit VirtualRadio(std::shared_ptr<RadioState> state);
    std::shared_ptr<RadioState> state_;
};

/// UE side of one radio channel. Mirrors the BS calls on the opposite link.
class UeEndpoint {
public:
    ~UeEndpoint();
    UeEndpoint(const UeEndpoint&) = delete;
    UeEndpoint& operator=(const UeEndpoint&) = delete;

    RadioChannelId channel() const { return channel_; }
    std::pair<IQBuffer, RxMetadata> recv(std::size_t n);
    bool send(std::span<const IQSample> samples, SampleTimestamp at);
    void begin_tx(SampleTimestamp first);
    void end_tx();
    SampleTimestamp now() const;
    ChannelCounters counters() const;

private:
    friend class VirtualRadio;
    UeEndpoint(std::shared_ptr<RadioState> state, RadioChannelId ch, std::uint64_t generation);
    std::shared_ptr<RadioState> state_;
    RadioChannelId channel_;
    std::uint64_t generation_;
};

}  // namespace pvran::radio
