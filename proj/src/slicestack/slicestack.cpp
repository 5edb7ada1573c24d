#include "pvran/slicestack.hpp"

#include "json.hpp"
#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace pvran::slicestack {

namespace {

using cf = std::complex<float>;

std::vector<cf> make_preamble(Modulation m, std::size_t length, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::vector<cf> out(length);
    const float r = 1.0f / std::sqrt(2.0f);
    for (auto& s : out) {
        const auto bits = rng();
        if (m == Modulation::qpsk) {
            s = {(bits & 1) ? -r : r, (bits & 2) ? -r : r};
        } else {
            s = {(bits & 1) ? -1.0f : 1.0f, 0.0f};
        }
    }
    return out;
}

cf symbol_for(Modulation m, std::uint8_t b0, std::uint8_t b1) {
    if (m == Modulation::bpsk) return {b0 ? -1.0f : 1.0f, 0.0f};
    const float r = 1.0f / std::sqrt(2.0f);
    return {b0 ? -r : r, b1 ? -r : r};
}

std::int16_t to_i16(float v) { return static_cast<std::int16_t>(std::lround(std::clamp(v, -32768.0f, 32767.0f))); }

void put_le(std::vector<std::byte>& out, std::uint64_t v, int bytes) {
    for (int k = 0; k < bytes; ++k) out.push_back(std::byte((v >> (8 * k)) & 0xff));
}

std::uint64_t get_le(std::span<const std::byte> in, std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int k = 0; k < bytes; ++k) v |= std::uint64_t(in[at + k]) << (8 * k);
    return v;
}

std::size_t symbols_for_bytes(const PhyProfile& phy, std::size_t bytes) {
    return (bytes * 8 + phy.bits_per_symbol() - 1) / phy.bits_per_symbol();
}

}  // namespace

std::size_t PhyProfile::frame_samples(std::size_t payload_len) const {
    return (preamble.size() + symbols_for_bytes(*this, kFrameOverhead + payload_len)) * samples_per_symbol;
}

const PhyProfile& PhyProfile::phy_a() {
    static const PhyProfile p{"phy-a", Modulation::qpsk, 4, make_preamble(Modulation::qpsk, 32, 0xA11CE), 256, 8000};
    return p;
}

const PhyProfile& PhyProfile::phy_b() {
    static const PhyProfile p{"phy-b", Modulation::bpsk, 8, make_preamble(Modulation::bpsk, 64, 0xB0B), 64, 8000};
    return p;
}

const PhyProfile& PhyProfile::by_name(const std::string& name) {
    if (name == "phy-a") return phy_a();
    if (name == "phy-b") return phy_b();
    throw PhyError("unknown PHY profile '" + name + "' (expected phy-a or phy-b)");
}

std::uint32_t crc32(std::span<const std::byte> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::byte> frame_bytes(const Frame& frame) {
    std::vector<std::byte> out;
    out.reserve(kFrameOverhead + frame.payload.size());
    put_le(out, frame.seq, 4);
    put_le(out, frame.payload.size(), 2);
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    put_le(out, crc32(out), 4);
    return out;
}

std::optional<Frame> parse_frame(std::span<const std::byte> bytes) {
    if (bytes.size() < kFrameOverhead) return std::nullopt;
    const auto len = static_cast<std::size_t>(get_le(bytes, 4, 2));
    if (bytes.size() != kFrameOverhead + len) return std::nullopt;
    if (crc32(bytes.first(6 + len)) != static_cast<std::uint32_t>(get_le(bytes, 6 + len, 4))) return std::nullopt;
    Frame f;
    f.seq = static_cast<std::uint32_t>(get_le(bytes, 0, 4));
    f.payload.assign(bytes.begin() + 6, bytes.begin() + 6 + static_cast<std::ptrdiff_t>(len));
    return f;
}

IQBuffer modulate(const PhyProfile& phy, const Frame& frame) {
    if (frame.payload.size() > phy.max_payload) {
        throw PhyError(phy.name + " carries at most " + std::to_string(phy.max_payload) + " payload bytes");
    }
    const auto bytes = frame_bytes(frame);
    const std::size_t sps = phy.samples_per_symbol;
    IQBuffer out;
    out.reserve(phy.frame_samples(frame.payload.size()));
    auto emit = [&](cf s) {
        const IQSample v{to_i16(s.real() * phy.amplitude), to_i16(s.imag() * phy.amplitude)};
        out.insert(out.end(), sps, v);
    };
    for (auto s : phy.preamble) emit(s);
    const std::size_t bits = bytes.size() * 8;
    auto bit = [&](std::size_t k) -> std::uint8_t {
        if (k >= bits) return 0;
        return static_cast<std::uint8_t>((std::to_integer<unsigned>(bytes[k / 8]) >> (k % 8)) & 1);
    };
    const std::size_t bps = phy.bits_per_symbol();
    for (std::size_t k = 0; k < bits; k += bps) emit(symbol_for(phy.modulation, bit(k), bps == 2 ? bit(k + 1) : 0));
    return out;
}

// ---------------------------------------------------------------------------
// Demodulator

Demodulator::Demodulator(const PhyProfile& phy) : phy_(phy) {
    for (auto s : phy.preamble) template_.insert(template_.end(), phy.samples_per_symbol, s);
    for (auto s : template_) template_energy_ += std::norm(s);
}

void Demodulator::push(std::span<const IQSample> samples, SampleTimestamp first) {
    if (!started_) {
        started_ = true;
        buf_tick_ = first.ticks;
    }
    buf_.insert(buf_.end(), samples.begin(), samples.end());
    counters_.samples += samples.size();
    scan();
    // Keep only what is not yet classified.
    if (accounted_ > 0) {
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(accounted_));
        buf_tick_ += accounted_;
        scan_ -= accounted_;
        accounted_ = 0;
    }
}

std::vector<DecodedFrame> Demodulator::take() {
    std::vector<DecodedFrame> out;
    out.swap(ready_);
    return out;
}

std::size_t Demodulator::nonzero(std::size_t from, std::size_t to) const {
    std::size_t n = 0;
    for (std::size_t k = from; k < to; ++k) n += (buf_[k].i != 0 || buf_[k].q != 0);
    return n;
}

void Demodulator::account(std::size_t to) {
    if (to <= accounted_) return;
    counters_.unclaimed_nonzero += nonzero(accounted_, to);
    accounted_ = to;
}

std::optional<std::size_t> Demodulator::onset(std::size_t from) const {
    const std::size_t sps = phy_.samples_per_symbol;
    if (buf_.size() < from + sps) return std::nullopt;
    // A full symbol carries amplitude^2 per sample; trigger at a quarter of that.
    const double threshold = 0.25 * sps * double(phy_.amplitude) * phy_.amplitude;
    auto energy = [&](std::size_t k) { return double(buf_[k].i) * buf_[k].i + double(buf_[k].q) * buf_[k].q; };
    double window = 0;
    for (std::size_t k = from; k < from + sps; ++k) window += energy(k);
    for (std::size_t i = from;; ++i) {
        if (window > threshold) return i;
        if (i + sps >= buf_.size()) return std::nullopt;
        window += energy(i + sps) - energy(i);
    }
}

float Demodulator::correlate(std::size_t at, cf& phase) const {
    cf acc{0, 0};
    float ex = 0;
    for (std::size_t k = 0; k < template_.size(); ++k) {
        const cf x{float(buf_[at + k].i), float(buf_[at + k].q)};
        acc += x * std::conj(template_[k]);
        ex += std::norm(x);
    }
    if (ex <= 0) return 0;
    const float mag = std::abs(acc);
    phase = mag > 0 ? acc / mag : cf{1, 0};
    return mag / std::sqrt(ex * template_energy_);
}

std::vector<std::byte> Demodulator::slice_bytes(std::size_t at, cf phase, std::size_t first_bit,
                                                std::size_t count) const {
    const std::size_t sps = phy_.samples_per_symbol;
    const std::size_t bps = phy_.bits_per_symbol();
    std::vector<std::byte> out(count);
    const cf derotate = std::conj(phase);
    for (std::size_t b = 0; b < count * 8; b += bps) {
        const std::size_t sym = (first_bit + b) / bps;
        const std::size_t base = at + (phy_.preamble.size() + sym) * sps;
        cf sum{0, 0};
        for (std::size_t k = 0; k < sps; ++k) sum += cf{float(buf_[base + k].i), float(buf_[base + k].q)};
        sum *= derotate;
        const unsigned b0 = sum.real() < 0;
        out[b / 8] |= std::byte(b0 << (b % 8));
        if (bps == 2 && b + 1 < count * 8) {
            const unsigned b1 = sum.imag() < 0;
            out[(b + 1) / 8] |= std::byte(b1 << ((b + 1) % 8));
        }
    }
    return out;
}

void Demodulator::scan() {
    const std::size_t sps = phy_.samples_per_symbol;
    const std::size_t longest = phy_.frame_samples(phy_.max_payload);
    for (;;) {
        const auto i = onset(scan_);
        if (!i) {
            // Windows not yet complete stay unclassified.
            const std::size_t settled = buf_.size() >= sps ? buf_.size() - sps + 1 : 0;
            scan_ = std::max(scan_, settled);
            account(scan_);
            return;
        }
        const std::size_t lo = std::max(accounted_, *i >= sps / 2 ? *i - sps / 2 : 0);
        const std::size_t hi = *i + sps;
        // Decide only once the longest possible frame is buffered.
        if (buf_.size() < hi + longest) {
            scan_ = *i;
            account(lo);
            return;
        }
        ++counters_.candidates;
        std::size_t best_at = lo;
        float best = -1;
        cf best_phase{1, 0};
        for (std::size_t o = lo; o <= hi; ++o) {
            cf ph;
            const float rho = correlate(o, ph);
            if (rho > best) {
                best = rho;
                best_at = o;
                best_phase = ph;
            }
        }
        if (best < kSyncThreshold) {
            ++counters_.sync_failures;
            scan_ = *i + sps;
            continue;
        }
        const auto header = slice_bytes(best_at, best_phase, 0, 6);
        const auto len = static_cast<std::size_t>(get_le(header, 4, 2));
        if (len > phy_.max_payload) {
            ++counters_.crc_failures;
            scan_ = *i + sps;
            continue;
        }
        auto parsed = parse_frame(slice_bytes(best_at, best_phase, 0, kFrameOverhead + len));
        if (!parsed) {
            ++counters_.crc_failures;
            scan_ = *i + sps;
            continue;
        }
        DecodedFrame f;
        f.frame = std::move(*parsed);
        f.start = {buf_tick_ + best_at};
        f.samples = phy_.frame_samples(len);
        f.correlation = best;
        account(best_at);
        f.nonzero_samples = nonzero(best_at, best_at + f.samples);
        accounted_ = best_at + f.samples;
        scan_ = accounted_;
        ++counters_.frames;
        ready_.push_back(std::move(f));
    }
}

std::vector<DecodedFrame> demodulate(const PhyProfile& phy, std::span<const IQSample> samples, SampleTimestamp first) {
    Demodulator d(phy);
    d.push(samples, first);
    // Flush with silence so frames near the end are decided.
    const IQBuffer tail(phy.frame_samples(phy.max_payload) + 2 * phy.samples_per_symbol);
    d.push(tail, first + samples.size());
    return d.take();
}

// ---------------------------------------------------------------------------
// Trx

Trx::Trx(DeviceApi& device) : device_(device) { state_.profile = device.config().profile; }

std::string Trx::start() {
    state_.started = false;
    return device_.find_device();
}

std::pair<IQBuffer, SampleTimestamp> Trx::read(std::size_t n) {
    auto [block, ts] = device_.recv(n);
    if (!state_.started) {
        state_.started = true;
        state_.next_tx = ts + device_.config().effective_tx_offset();
    }
    state_.next_rx = ts + n;
    if (record_) rx_ledger_.push_back(ts);
    return {std::move(block), ts};
}

void Trx::write(std::span<const IQSample> samples, SampleTimestamp at) {
    if (!state_.started || at != state_.next_tx) {
        throw DeviceError(DeviceError::Errc::out_of_sequence,
                          "trx write at tick " + std::to_string(at.ticks) + " expected " +
                              std::to_string(state_.next_tx.ticks));
    }
    device_.send(samples, at);
    if (record_) tx_ledger_.push_back(at);
    state_.next_tx = at + samples.size();
}

// ---------------------------------------------------------------------------
// UeDevice

UeDevice::UeDevice(std::unique_ptr<radio::UeEndpoint> endpoint, SliceConfig config)
    : endpoint_(std::move(endpoint)), config_(std::move(config)) {}

std::string UeDevice::find_device() {
    established_ = true;
    return "ue-sim";
}

std::pair<IQBuffer, SampleTimestamp> UeDevice::recv(std::size_t n) {
    if (!established_) throw DeviceError(DeviceError::Errc::not_established, "recv before find_device");
    try {
        auto [block, meta] = endpoint_->recv(n);
        if (!rx_started_) {
            rx_started_ = true;
            next_tx_ = meta.timestamp + config_.effective_tx_offset();
            endpoint_->begin_tx(next_tx_);
        }
        return {std::move(block), meta.timestamp};
    } catch (const radio::RadioError& e) {
        throw DeviceError(DeviceError::Errc::end_of_stream, e.what());
    }
}

void UeDevice::send(std::span<const IQSample> samples, SampleTimestamp at) {
    if (!rx_started_ || at != next_tx_) {
        throw DeviceError(DeviceError::Errc::out_of_sequence,
                          "send at tick " + std::to_string(at.ticks) + " does not continue the transmit stream");
    }
    try {
        endpoint_->send(samples, at);
    } catch (const radio::RadioError& e) {
        throw DeviceError(DeviceError::Errc::end_of_stream, e.what());
    }
    next_tx_ = next_tx_ + samples.size();
}

void UeDevice::shutdown() {
    if (!established_) return;
    established_ = false;
    try {
        endpoint_->end_tx();
    } catch (const radio::RadioError&) {
    }
}

// ---------------------------------------------------------------------------
// Endpoint

std::string to_string(Role role) { return role == Role::enb ? "enb" : "ue"; }

double EndpointStats::goodput_bps() const {
    return device_seconds > 0 ? static_cast<double>(payload_bytes_received) * 8 / device_seconds : 0;
}

double EndpointStats::offered_bps() const {
    return device_seconds > 0 ? static_cast<double>(payload_bytes_sent) * 8 / device_seconds : 0;
}

double EndpointStats::loss_rate() const {
    const auto expected = frames_received + frames_lost;
    return expected ? static_cast<double>(frames_lost) / static_cast<double>(expected) : 0;
}

std::string to_json_line(const EndpointStats& s) {
    nlohmann::json j;
    j["time"] = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    j["role"] = to_string(s.role);
    j["slice_tag"] = s.slice_tag;
    j["phy"] = s.phy;
    j["subframes"] = s.subframes;
    j["device_seconds"] = s.device_seconds;
    j["frames_sent"] = s.frames_sent;
    j["frames_received"] = s.frames_received;
    j["frames_lost"] = s.frames_lost;
    j["cross_slice_frames"] = s.cross_slice_frames;
    j["foreign_samples"] = s.foreign_samples;
    j["goodput_bps"] = s.goodput_bps();
    j["offered_bps"] = s.offered_bps();
    j["loss_rate"] = s.loss_rate();
    j["latency_mean_us"] = s.latency_mean_us;
    j["latency_max_us"] = s.latency_max_us;
    if (!s.end_reason.empty()) j["end_reason"] = s.end_reason;
    return j.dump();
}

std::vector<std::byte> make_payload(std::uint16_t tag, std::uint64_t tx_tick, std::uint32_t seq, std::size_t size,
                                    std::uint64_t seed) {
    if (size < 10) throw PhyError("payload must hold at least the 10-byte tag and tick");
    std::vector<std::byte> out;
    out.reserve(size);
    put_le(out, tag, 2);
    put_le(out, tx_tick, 8);
    std::mt19937_64 rng(seed ^ (std::uint64_t(tag) << 48) ^ seq);
    while (out.size() < size) out.push_back(std::byte(rng() & 0xff));
    return out;
}

EndpointStats run_endpoint(DeviceApi& device, const EndpointOptions& options, const std::atomic<bool>* stop) {
    Trx trx(device);
    return run_endpoint(trx, options, stop);
}

EndpointStats run_endpoint(Trx& trx, const EndpointOptions& options, const std::atomic<bool>* stop) {
    const PhyProfile& phy = *options.phy;
    const auto& traffic = options.traffic;
    if (traffic.every_n_subframes && (traffic.payload_bytes < 10 || traffic.payload_bytes > phy.max_payload)) {
        throw PhyError("payload size " + std::to_string(traffic.payload_bytes) + " outside 10.." +
                       std::to_string(phy.max_payload) + " for " + phy.name);
    }
    const auto& config = trx.device().config();
    const std::size_t n = samples_per_subframe(config.profile);
    if (traffic.every_n_subframes && phy.frame_samples(traffic.payload_bytes) > n) {
        throw PhyError("a frame does not fit in one subframe");
    }
    const double rate = static_cast<double>(config.profile.sample_rate());

    EndpointStats st;
    st.role = options.role;
    st.slice_tag = options.slice_tag;
    st.phy = phy.name;
    Demodulator demod(phy);
    IQBuffer tx(n);
    std::uint32_t seq = 0;
    std::optional<std::uint32_t> first_seq;
    std::uint32_t last_seq = 0;
    std::uint64_t foreign_nonzero = 0;
    double latency_sum = 0;

    auto finish_counts = [&] {
        st.foreign_samples = demod.counters().unclaimed_nonzero + foreign_nonzero;
        st.frames_lost = first_seq ? (last_seq - *first_seq + 1) - st.frames_received : 0;
        st.latency_mean_us = st.frames_received ? latency_sum / static_cast<double>(st.frames_received) : 0;
        st.device_seconds = static_cast<double>(st.samples) / rate;
    };

    try {
        if (!trx.device().established()) trx.start();
        while (options.subframes == 0 || st.subframes < options.subframes) {
            if (stop && stop->load()) {
                st.end_reason = "stopped";
                break;
            }
            auto [rx, ts] = trx.read(n);
            st.samples += n;
            demod.push(rx, ts);
            for (auto& f : demod.take()) {
                const bool ours = f.frame.payload.size() >= 10 &&
                                  get_le(f.frame.payload, 0, 2) == options.slice_tag;
                if (!ours) {
                    ++st.cross_slice_frames;
                    foreign_nonzero += f.nonzero_samples;
                    continue;
                }
                ++st.frames_received;
                st.payload_bytes_received += f.frame.payload.size();
                if (!first_seq) first_seq = f.frame.seq;
                last_seq = std::max(last_seq, f.frame.seq);
                const auto sent_at = get_le(f.frame.payload, 2, 8);
                const double us = (static_cast<double>(f.start.ticks) - static_cast<double>(sent_at)) / rate * 1e6;
                latency_sum += us;
                st.latency_max_us = std::max(st.latency_max_us, us);
            }

            std::fill(tx.begin(), tx.end(), IQSample{});
            const auto at = trx.state().next_tx;
            if (traffic.every_n_subframes && st.subframes % traffic.every_n_subframes == 0) {
                Frame f{seq, make_payload(options.slice_tag, at.ticks, seq, traffic.payload_bytes, traffic.seed)};
                const auto wave = modulate(phy, f);
                std::copy(wave.begin(), wave.end(), tx.begin());
                ++seq;
                ++st.frames_sent;
                st.payload_bytes_sent += f.payload.size();
            }
            trx.write(tx, at);
            ++st.subframes;

            if (options.report_every && st.subframes % options.report_every == 0) {
                finish_counts();
                if (options.report) *options.report << to_json_line(st) << '\n';
                if (options.progress) options.progress(st);
            }
        }
        if (st.end_reason.empty()) st.end_reason = "completed";
    } catch (const DeviceError& e) {
        if (e.code() != DeviceError::Errc::end_of_stream) throw;
        st.ended_by_stream = true;
        st.end_reason = e.what();
    }
    finish_counts();
    if (options.report) *options.report << to_json_line(st) << '\n';
    if (options.progress) options.progress(st);
    return st;
}

}  // namespace pvran::slicestack
