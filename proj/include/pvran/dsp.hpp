#pragma once

// FDM channelization kernels for the wideband medium.
//
// Every kernel exists twice: `serial::` is the plain reference loop and
// `parallel::` is the OpenMP version used at run time. Both evaluate each
// output element with the same arithmetic in the same order, so their
// results are bit-identical.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace pvran::dsp {

using cf32 = std::complex<float>;

inline constexpr std::size_t kDefaultTaps = 127;
/// Low-pass cutoff as a fraction of the channel sample rate.
inline constexpr double kCutoffFraction = 0.45;

class BandError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Blackman-windowed sinc low-pass with unity DC gain. `num_taps` must be odd.
std::vector<float> design_lowpass(std::size_t num_taps, double cutoff_hz, double sample_rate_hz);

namespace serial {
/// Zero-stuff by `factor` and filter (gain `factor`). out.size() must be
/// in.size() * factor + taps.size() - 1 (full convolution).
void interpolate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps, std::span<cf32> out);
/// out[j] = sum_k taps[k] * in[j * factor + k]. in.size() must be at least
/// (out.size() - 1) * factor + taps.size().
void decimate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps, std::span<cf32> out);
/// data[n] *= exp(j 2 pi cycles_per_sample (first_index + n)).
void rotate(std::span<cf32> data, double cycles_per_sample, std::uint64_t first_index);
}  // namespace serial

namespace parallel {
void interpolate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps, std::span<cf32> out);
void decimate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps, std::span<cf32> out);
void rotate(std::span<cf32> data, double cycles_per_sample, std::uint64_t first_index);
}  // namespace parallel

/// Placement of one channel inside the wideband medium.
struct ChannelSlot {
    double offset_hz = 0;      // channel center minus wideband center
    double channel_rate = 0;   // channel samples/s
    double wideband_rate = 0;  // medium samples/s

    /// Throws BandError unless the rate divides the wideband rate and
    /// |offset| + channel_rate/2 <= wideband_rate/2.
    void validate() const;
    std::size_t factor() const;
};

/// The default 127-tap filter for a slot (cutoff 0.45 x channel rate).
std::vector<float> slot_filter(const ChannelSlot& slot, std::size_t num_taps = kDefaultTaps);

/// Interpolates `baseband` (channel ticks starting at `first_tick`) to the
/// wideband rate and shifts it to the slot offset. Element m of the result
/// sits at wideband tick first_tick * factor + m - (taps - 1) / 2.
std::vector<cf32> mix_up(std::span<const cf32> baseband, const ChannelSlot& slot, std::span<const float> taps,
                         std::uint64_t first_tick = 0);

/// Wideband range needed to produce `count` channel samples from `first_tick`:
/// starts at wideband tick first_tick * factor - (taps - 1) / 2.
std::size_t mix_down_input_length(std::size_t count, std::size_t factor, std::size_t num_taps);

/// Shifts the slot down to baseband, low-pass filters and decimates.
/// `wideband` must start at first_tick * factor - (taps - 1) / 2 and hold
/// mix_down_input_length(count, ...) samples.
std::vector<cf32> mix_down(std::span<const cf32> wideband, const ChannelSlot& slot, std::span<const float> taps,
                           std::uint64_t first_tick, std::size_t count);

}  // namespace pvran::dsp
