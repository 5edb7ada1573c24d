#include "pvran/dsp.hpp"

#include <cmath>
#include <numbers>

namespace pvran::dsp {

namespace {

inline cf32 phasor(double cycles_per_sample, std::uint64_t index) {
    // Reduce in double before trig so large tick counts keep full phase precision.
    const double whole = cycles_per_sample * static_cast<double>(index);
    const double frac = whole - std::floor(whole);
    const double phase = 2.0 * std::numbers::pi * frac;
    return {static_cast<float>(std::cos(phase)), static_cast<float>(std::sin(phase))};
}

inline cf32 interpolate_one(std::span<const cf32> in, std::size_t factor, std::span<const float> taps,
                            std::size_t m) {
    // up[i * factor] = in[i]; out[m] = factor * sum_k taps[k] * up[m - k].
    const std::size_t n_taps = taps.size();
    const std::size_t i_hi = std::min(m / factor, in.size() - 1);
    const std::size_t i_lo = m + 1 >= n_taps ? (m + 1 - n_taps + factor - 1) / factor : 0;
    float re = 0, im = 0;
    for (std::size_t i = i_lo; i <= i_hi && i_lo <= i_hi; ++i) {
        const float h = taps[m - i * factor];
        re += h * in[i].real();
        im += h * in[i].imag();
    }
    const auto g = static_cast<float>(factor);
    return {g * re, g * im};
}

inline cf32 decimate_one(std::span<const cf32> in, std::size_t factor, std::span<const float> taps, std::size_t j) {
    const cf32* x = in.data() + j * factor;
    float re = 0, im = 0;
    for (std::size_t k = 0; k < taps.size(); ++k) {
        re += taps[k] * x[k].real();
        im += taps[k] * x[k].imag();
    }
    return {re, im};
}

void check_interpolate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps,
                       std::span<cf32> out) {
    if (factor == 0 || taps.empty()) throw std::invalid_argument("interpolate: bad factor or taps");
    if (in.empty()) {
        if (out.size() != taps.size() - 1) throw std::invalid_argument("interpolate: output size");
        return;
    }
    if (out.size() != in.size() * factor + taps.size() - 1) throw std::invalid_argument("interpolate: output size");
}

void check_decimate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps,
                    std::span<const cf32> out) {
    if (factor == 0 || taps.empty()) throw std::invalid_argument("decimate: bad factor or taps");
    if (!out.empty() && in.size() < (out.size() - 1) * factor + taps.size()) {
        throw std::invalid_argument("decimate: input too short");
    }
}

}  // namespace

std::vector<float> design_lowpass(std::size_t num_taps, double cutoff_hz, double sample_rate_hz) {
    if (num_taps % 2 == 0 || num_taps < 3) throw std::invalid_argument("design_lowpass: num_taps must be odd >= 3");
    if (cutoff_hz <= 0 || cutoff_hz >= sample_rate_hz / 2) throw std::invalid_argument("design_lowpass: cutoff");
    const double fc = cutoff_hz / sample_rate_hz;
    const double mid = static_cast<double>(num_taps - 1) / 2.0;
    std::vector<double> h(num_taps);
    double sum = 0;
    for (std::size_t k = 0; k < num_taps; ++k) {
        const double x = static_cast<double>(k) - mid;
        const double sinc = x == 0 ? 2 * fc : std::sin(2 * std::numbers::pi * fc * x) / (std::numbers::pi * x);
        const double w = 0.42 - 0.5 * std::cos(2 * std::numbers::pi * k / (num_taps - 1)) +
                         0.08 * std::cos(4 * std::numbers::pi * k / (num_taps - 1));
        h[k] = sinc * w;
        sum += h[k];
    }
    std::vector<float> out(num_taps);
    for (std::size_t k = 0; k < num_taps; ++k) out[k] = static_cast<float>(h[k] / sum);
    return out;
}

namespace serial {

void interpolate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps, std::span<cf32> out) {
    check_interpolate(in, factor, taps, out);
    if (in.empty()) return;
    for (std::size_t m = 0; m < out.size(); ++m) out[m] = interpolate_one(in, factor, taps, m);
}

void decimate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps, std::span<cf32> out) {
    check_decimate(in, factor, taps, out);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = decimate_one(in, factor, taps, j);
}

void rotate(std::span<cf32> data, double cycles_per_sample, std::uint64_t first_index) {
    for (std::size_t n = 0; n < data.size(); ++n) data[n] *= phasor(cycles_per_sample, first_index + n);
}

}  // namespace serial

namespace parallel {

void interpolate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps, std::span<cf32> out) {
    check_interpolate(in, factor, taps, out);
    if (in.empty()) return;
    const auto n = static_cast<std::int64_t>(out.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t m = 0; m < n; ++m) {
        out[static_cast<std::size_t>(m)] = interpolate_one(in, factor, taps, static_cast<std::size_t>(m));
    }
}

void decimate(std::span<const cf32> in, std::size_t factor, std::span<const float> taps, std::span<cf32> out) {
    check_decimate(in, factor, taps, out);
    const auto n = static_cast<std::int64_t>(out.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(j)] = decimate_one(in, factor, taps, static_cast<std::size_t>(j));
    }
}

void rotate(std::span<cf32> data, double cycles_per_sample, std::uint64_t first_index) {
    const auto n = static_cast<std::int64_t>(data.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < n; ++k) {
        data[static_cast<std::size_t>(k)] *= phasor(cycles_per_sample, first_index + static_cast<std::uint64_t>(k));
    }
}

}  // namespace parallel

void ChannelSlot::validate() const {
    if (channel_rate <= 0 || wideband_rate <= 0) throw BandError("channel and wideband rates must be positive");
    const double ratio = wideband_rate / channel_rate;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1) {
        throw BandError("channel rate must divide the wideband rate");
    }
    if (std::abs(offset_hz) + channel_rate / 2 > wideband_rate / 2 + 1e-6) {
        throw BandError("channel band lies outside the wideband medium");
    }
}

std::size_t ChannelSlot::factor() const { return static_cast<std::size_t>(std::llround(wideband_rate / channel_rate)); }

std::vector<float> slot_filter(const ChannelSlot& slot, std::size_t num_taps) {
    slot.validate();
    return design_lowpass(num_taps, kCutoffFraction * slot.channel_rate, slot.wideband_rate);
}

std::vector<cf32> mix_up(std::span<const cf32> baseband, const ChannelSlot& slot, std::span<const float> taps,
                         std::uint64_t first_tick) {
    slot.validate();
    const std::size_t d = slot.factor();
    std::vector<cf32> out(baseband.empty() ? 0 : baseband.size() * d + taps.size() - 1);
    if (baseband.empty()) return out;
    parallel::interpolate(baseband, d, taps, out);
    const std::uint64_t half = (taps.size() - 1) / 2;
    // Wideband index of out[0]; phases use absolute ticks so blocks add coherently.
    const std::uint64_t start = first_tick * d - half;
    parallel::rotate(out, slot.offset_hz / slot.wideband_rate, start);
    return out;
}

std::size_t mix_down_input_length(std::size_t count, std::size_t factor, std::size_t num_taps) {
    return count == 0 ? 0 : (count - 1) * factor + num_taps;
}

std::vector<cf32> mix_down(std::span<const cf32> wideband, const ChannelSlot& slot, std::span<const float> taps,
                           std::uint64_t first_tick, std::size_t count) {
    slot.validate();
    const std::size_t d = slot.factor();
    const std::size_t need = mix_down_input_length(count, d, taps.size());
    if (wideband.size() < need) throw std::invalid_argument("mix_down: wideband input too short");
    std::vector<cf32> shifted(wideband.begin(), wideband.begin() + static_cast<std::ptrdiff_t>(need));
    const std::uint64_t half = (taps.size() - 1) / 2;
    parallel::rotate(shifted, -slot.offset_hz / slot.wideband_rate, first_tick * d - half);
    std::vector<cf32> out(count);
    parallel::decimate(shifted, d, taps, out);
    return out;
}

}  // namespace pvran::dsp
