#include "doctest.h"
#include "pvran/dsp.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace pvran::dsp;

namespace {

std::vector<cf32> random_signal(std::size_t n, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> d(-1000.f, 1000.f);
    std::vector<cf32> v(n);
    for (auto& x : v) x = {d(rng), d(rng)};
    return v;
}

// Sum of tones strictly inside +/-0.35 of the channel rate.
std::vector<cf32> bandlimited(std::size_t n, double rate, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> f(-0.35 * rate, 0.35 * rate);
    std::uniform_real_distribution<double> ph(0, 2 * std::numbers::pi);
    std::vector<std::complex<double>> acc(n);
    for (int tone = 0; tone < 6; ++tone) {
        const double freq = f(rng), phase = ph(rng);
        for (std::size_t k = 0; k < n; ++k) acc[k] += std::polar(1000.0, 2 * std::numbers::pi * freq * k / rate + phase);
    }
    std::vector<cf32> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = {float(acc[k].real()), float(acc[k].imag())};
    return out;
}

std::vector<cf32> tone(std::size_t n, double freq, double rate, double amplitude = 1000.0) {
    std::vector<cf32> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto v = std::polar(amplitude, 2 * std::numbers::pi * freq * k / rate);
        out[k] = {float(v.real()), float(v.imag())};
    }
    return out;
}

double power(std::span<const cf32> v) {
    double p = 0;
    for (auto x : v) p += std::norm(std::complex<double>(x));
    return p / static_cast<double>(v.size());
}

double db(double ratio) { return 10 * std::log10(ratio); }

}  // namespace

TEST_CASE("lowpass design: odd length, symmetric, unity DC gain") {
    const auto h = design_lowpass(127, 0.45 * 7.68e6, 30.72e6);
    REQUIRE(h.size() == 127);
    double sum = 0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        sum += h[k];
        CHECK(h[k] == doctest::Approx(h[h.size() - 1 - k]).epsilon(1e-6));
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    CHECK_THROWS(design_lowpass(128, 1e6, 30.72e6));
    CHECK_THROWS(design_lowpass(127, 20e6, 30.72e6));
}

TEST_CASE("interpolate matches zero-stuff plus direct convolution") {
    const auto x = random_signal(300, 1);
    const auto h = design_lowpass(31, 0.45, 4.0);
    const std::size_t d = 4;
    std::vector<std::complex<double>> up(x.size() * d);
    for (std::size_t i = 0; i < x.size(); ++i) up[i * d] = x[i];
    std::vector<cf32> got(x.size() * d + h.size() - 1);
    serial::interpolate(x, d, h, got);
    for (std::size_t m = 0; m < got.size(); ++m) {
        std::complex<double> ref = 0;
        for (std::size_t k = 0; k < h.size(); ++k) {
            if (m >= k && m - k < up.size()) ref += double(h[k]) * up[m - k];
        }
        ref *= double(d);
        REQUIRE(std::abs(std::complex<double>(got[m]) - ref) < 1e-2);
    }
}

TEST_CASE("decimate matches filter-then-pick") {
    const auto x = random_signal(2000, 2);
    const auto h = design_lowpass(63, 0.45, 3.0);
    const std::size_t d = 3, n = (x.size() - h.size()) / d + 1;
    std::vector<cf32> got(n);
    serial::decimate(x, d, h, got);
    for (std::size_t j = 0; j < n; ++j) {
        std::complex<double> ref = 0;
        for (std::size_t k = 0; k < h.size(); ++k) ref += double(h[k]) * std::complex<double>(x[j * d + k]);
        REQUIRE(std::abs(std::complex<double>(got[j]) - ref) < 1e-2);
    }
}

TEST_CASE("rotate applies the absolute-index phasor") {
    auto v = std::vector<cf32>(1000, cf32{1, 0});
    const double f = 0.123456;
    const std::uint64_t first = 5'000'000'000ull;
    serial::rotate(v, f, first);
    for (std::size_t n = 0; n < v.size(); ++n) {
        const long double cycles = static_cast<long double>(f) * static_cast<long double>(first + n);
        const long double frac = cycles - std::floor(cycles);
        const auto ref = std::polar(1.0, static_cast<double>(2 * std::numbers::pi_v<long double> * frac));
        REQUIRE(std::abs(std::complex<double>(v[n]) - ref) < 1e-5);
    }
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
    const auto x = random_signal(5000, 3);
    const auto h = design_lowpass(127, 0.45 * 7.68e6, 30.72e6);
    for (std::size_t d : {1u, 2u, 4u}) {
        std::vector<cf32> a(x.size() * d + h.size() - 1), b(a.size());
        serial::interpolate(x, d, h, a);
        parallel::interpolate(x, d, h, b);
        REQUIRE(a == b);
        const std::size_t n = (x.size() - h.size()) / d + 1;
        std::vector<cf32> c(n), e(n);
        serial::decimate(x, d, h, c);
        parallel::decimate(x, d, h, e);
        REQUIRE(c == e);
    }
    auto r1 = x, r2 = x;
    serial::rotate(r1, -0.2441, 987654321);
    parallel::rotate(r2, -0.2441, 987654321);
    CHECK(r1 == r2);
}

TEST_CASE("offset 0, equal rates, passthrough filter is the identity") {
    const auto x = random_signal(4096, 4);
    const ChannelSlot slot{0.0, 7.68e6, 7.68e6};
    const std::vector<float> taps{1.0f};
    const auto up = mix_up(x, slot, taps, 10);
    CHECK(up == x);
    const auto down = mix_down(up, slot, taps, 10, x.size());
    CHECK(down == x);
}

TEST_CASE("mix_down inverts mix_up within -40 dB") {
    const double rate = 7.68e6, wide = 30.72e6;
    for (double offset : {-7.5e6, 0.0, 2.5e6, 7.5e6}) {
        const ChannelSlot slot{offset, rate, wide};
        const auto taps = slot_filter(slot);
        const auto x = bandlimited(6000, rate, 5);
        const std::uint64_t t0 = 1000;
        const auto up = mix_up(x, slot, taps, t0);
        // Skip filter transients: start 100 channel samples in, stop 100 early.
        const std::size_t skip = 100, count = x.size() - 2 * skip;
        const std::size_t d = slot.factor();
        const std::span<const cf32> window(up.data() + skip * d, up.size() - skip * d);
        const auto back = mix_down(window, slot, taps, t0 + skip, count);
        double err = 0, sig = 0;
        for (std::size_t j = 0; j < count; ++j) {
            err += std::norm(std::complex<double>(back[j]) - std::complex<double>(x[skip + j]));
            sig += std::norm(std::complex<double>(x[skip + j]));
        }
        INFO("offset " << offset);
        CHECK(db(err / sig) <= -40.0);
    }
}

TEST_CASE("two 5 MHz slices 15 MHz apart: cross-leakage at most -40 dB") {
    const double rate = 7.68e6, wide = 30.72e6;
    const ChannelSlot a{-7.5e6, rate, wide}, b{7.5e6, rate, wide};
    const auto taps = slot_filter(a);
    for (double f : {-2.0e6, 0.3e6, 2.2e6}) {
        const auto x = tone(8000, f, rate);
        const auto up = mix_up(x, a, taps, 500);
        const std::size_t skip = 200, count = 7000;
        const std::span<const cf32> window(up.data() + skip * 4, up.size() - skip * 4);
        const auto own = mix_down(window, a, taps, 500 + skip, count);
        const auto other = mix_down(window, b, taps, 500 + skip, count);
        INFO("tone " << f);
        CHECK(db(power(other) / power(own)) <= -40.0);
    }
}

TEST_CASE("band outside the wideband medium is rejected") {
    CHECK_THROWS_AS(ChannelSlot({14e6, 7.68e6, 30.72e6}).validate(), BandError);
    CHECK_THROWS_AS(ChannelSlot({0, 7e6, 30.72e6}).validate(), BandError);
    CHECK_NOTHROW(ChannelSlot({11.52e6, 7.68e6, 30.72e6}).validate());
}
