#pragma once

// Domain types shared by every pvran module: sample wire format, LTE
// bandwidth profiles, timestamp arithmetic and FDM plan validation.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pvran {

/// One complex baseband sample in ADC units. Serialized as I then Q,
/// each a little-endian int16, for 4 bytes total.
struct IQSample {
    std::int16_t i = 0;
    std::int16_t q = 0;

    friend bool operator==(const IQSample&, const IQSample&) = default;
};

inline constexpr std::size_t kBytesPerSample = 4;

std::array<std::byte, kBytesPerSample> serialize(IQSample s);
IQSample deserialize_sample(std::span<const std::byte, kBytesPerSample> bytes);

/// Bulk conversions between a sample run and its wire bytes.
/// `out` must hold exactly kBytesPerSample * samples.size() bytes.
void samples_to_bytes(std::span<const IQSample> samples, std::span<std::byte> out);
void bytes_to_samples(std::span<const std::byte> bytes, std::span<IQSample> out);

using IQBuffer = std::vector<IQSample>;

inline std::size_t byte_length(const IQBuffer& buf) { return kBytesPerSample * buf.size(); }

/// Sample count since the radio epoch, at the channel's sample rate.
struct SampleTimestamp {
    std::uint64_t ticks = 0;

    friend auto operator<=>(const SampleTimestamp&, const SampleTimestamp&) = default;
    SampleTimestamp operator+(std::uint64_t n) const { return {ticks + n}; }
    SampleTimestamp& operator+=(std::uint64_t n) {
        ticks += n;
        return *this;
    }
};

class ProfileError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// LTE channel bandwidth in PRBs. Only 25, 50 and 100 are supported.
class BandwidthProfile {
public:
    static BandwidthProfile from_prbs(int prbs);

    int prbs() const { return prbs_; }
    std::uint64_t samples_per_subframe() const;
    /// Samples per second; always samples_per_subframe() * 1000.
    std::uint64_t sample_rate() const { return samples_per_subframe() * 1000; }

    friend bool operator==(const BandwidthProfile&, const BandwidthProfile&) = default;

private:
    explicit BandwidthProfile(int prbs) : prbs_(prbs) {}
    int prbs_;
};

std::uint64_t samples_per_subframe(const BandwidthProfile& profile);
std::uint64_t bytes_per_subframe(const BandwidthProfile& profile);
/// Fronthaul bit rate in bits/s for 16+16 bit samples.
std::uint64_t required_link_rate(const BandwidthProfile& profile);
/// Lead of the first TX timestamp over the first RX timestamp, in samples.
/// 30640 at 25 PRB, scaled with the sample rate for the wider profiles.
std::uint64_t tx_offset(const BandwidthProfile& profile);

struct SliceId {
    std::uint32_t value = 0;
    friend auto operator<=>(const SliceId&, const SliceId&) = default;
};

struct RadioChannelId {
    std::uint32_t index = 0;
    friend auto operator<=>(const RadioChannelId&, const RadioChannelId&) = default;
};

struct SliceConfig {
    SliceId slice_id;
    BandwidthProfile profile = BandwidthProfile::from_prbs(25);
    std::uint64_t dl_freq_hz = 0;
    std::uint64_t ul_freq_hz = 0;
    std::int32_t rx_gain_db = 0;
    std::int32_t tx_gain_db = 0;
    RadioChannelId radio_channel;
    std::string phy_profile_name = "phy-a";
    /// Overrides tx_offset(profile) when set.
    std::optional<std::uint64_t> tx_offset_override;

    std::uint64_t effective_tx_offset() const {
        return tx_offset_override.value_or(tx_offset(profile));
    }

    friend bool operator==(const SliceConfig&, const SliceConfig&) = default;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat `key = value` text, one field per line, `#` comments. See
/// docs/slice-config.md for the key list.
SliceConfig parse_slice_config(std::string_view text);
SliceConfig load_slice_config(const std::string& path);
std::string format_slice_config(const SliceConfig& config);

/// Half-open frequency interval [lo_hz, hi_hz).
struct Band {
    std::uint64_t lo_hz = 0;
    std::uint64_t hi_hz = 0;

    static Band centered(std::uint64_t center_hz, std::uint64_t width_hz);
    bool overlaps(const Band& other) const { return lo_hz < other.hi_hz && other.lo_hz < hi_hz; }
    friend bool operator==(const Band&, const Band&) = default;
};

struct FdmEntry {
    SliceId slice_id;
    Band dl;
    Band ul;
    RadioChannelId radio_channel;
};

struct FdmPlan {
    std::vector<FdmEntry> entries;

    /// Band edges are center +/- sample_rate/2.
    static FdmEntry entry_for(const SliceConfig& config);
    static FdmPlan from_configs(std::span<const SliceConfig> configs);
};

enum class ConflictKind { downlink, uplink, radio_channel };

struct FdmConflict {
    SliceId first;
    SliceId second;
    ConflictKind kind;
    friend bool operator==(const FdmConflict&, const FdmConflict&) = default;
};

struct FdmVerdict {
    std::vector<FdmConflict> conflicts;
    bool ok() const { return conflicts.empty(); }
    std::string describe() const;
};

/// Reports every pair of entries whose DL bands overlap, whose UL bands
/// overlap, or that share a radio channel. Pairs are ordered (lower id first).
FdmVerdict validate_fdm_plan(const FdmPlan& plan);

std::string to_string(ConflictKind kind);

}  // namespace pvran
