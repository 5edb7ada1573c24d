#include "pvran/radiodev.hpp"

#include "pvran/dsp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

namespace pvran::radio {

namespace {

using Clock = std::chrono::steady_clock;
using dsp::cf32;

// Wideband positions are (tick - epoch + kBiasTicks) * factor so that the
// filter's leading half never indexes below zero.
constexpr std::uint64_t kBiasTicks = 64;
// Paced waits sleep until this close to the deadline, then spin.
constexpr auto kSpin = std::chrono::microseconds(50);

std::int16_t saturate(double v) {
    return static_cast<std::int16_t>(std::clamp(std::nearbyint(v), -32768.0, 32767.0));
}

IQSample add_iq(IQSample a, IQSample b) {
    return {saturate(double(a.i) + b.i), saturate(double(a.q) + b.q)};
}

cf32 add_cf(cf32 a, cf32 b) { return a + b; }

// Sliding window of samples addressed by absolute tick. Slots below base()
// are gone; writes past base() + capacity push the window forward.
template <class T>
class Timeline {
public:
    Timeline() = default;
    explicit Timeline(std::size_t capacity) : buf_(std::bit_ceil(capacity)), mask_(buf_.size() - 1) {}

    std::uint64_t base() const { return base_; }
    bool empty_storage() const { return buf_.empty(); }

    void advance_to(std::uint64_t tick) {
        if (tick <= base_) return;
        const std::uint64_t stop = std::min<std::uint64_t>(tick, base_ + buf_.size());
        for (std::uint64_t t = base_; t < stop; ++t) buf_[t & mask_] = T{};
        base_ = tick;
    }

    void reset(std::uint64_t tick) {
        std::fill(buf_.begin(), buf_.end(), T{});
        base_ = tick;
    }

    struct AddResult {
        std::uint64_t late = 0;
        std::uint64_t evicted = 0;
    };

    template <class Add>
    AddResult add(std::uint64_t first, std::span<const T> samples, Add add_fn) {
        AddResult r;
        const std::uint64_t end = first + samples.size();
        if (end > base_ + buf_.size()) {
            const std::uint64_t nb = end - buf_.size();
            r.evicted = nb - base_;
            advance_to(nb);
        }
        for (std::size_t k = 0; k < samples.size(); ++k) {
            const std::uint64_t t = first + k;
            if (t < base_) {
                ++r.late;
                continue;
            }
            T& slot = buf_[t & mask_];
            slot = add_fn(slot, samples[k]);
        }
        return r;
    }

    void copy(std::uint64_t first, std::span<T> out) const {
        for (std::size_t k = 0; k < out.size(); ++k) {
            const std::uint64_t t = first + k;
            out[k] = (t >= base_ && t < base_ + buf_.size()) ? buf_[t & mask_] : T{};
        }
    }

private:
    std::vector<T> buf_;
    std::uint64_t mask_ = 0;
    std::uint64_t base_ = 0;
};

struct Reader {
    bool started = false;
    std::uint64_t cursor = 0;
};

struct Transmitter {
    bool active = false;
    std::uint64_t horizon = 0;
};

struct Domain {
    std::mutex mu;
    std::condition_variable cv;
};

void add_awgn(std::span<IQSample> block, double snr_db, std::mt19937_64& rng) {
    if (block.empty()) return;
    double power = 0;
    for (const auto& s : block) power += double(s.i) * s.i + double(s.q) * s.q;
    power /= static_cast<double>(block.size());
    if (power == 0) return;
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0) / 2.0);
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& s : block) {
        s.i = saturate(s.i + noise(rng));
        s.q = saturate(s.q + noise(rng));
    }
}

}  // namespace

struct Channel {
    Domain* domain = nullptr;
    ChannelTuning tuning;
    bool active = false;
    std::uint64_t generation = 0;
    std::uint64_t fast_time = 0;

    Reader bs_rx;  // uplink reader
    Reader ue_rx;  // downlink reader
    Transmitter bs_tx;
    Transmitter ue_tx;

    bool ue_attached = false;
    UeLinkConfig link;
    std::mt19937_64 dl_rng;
    std::mt19937_64 ul_rng;

    Timeline<IQSample> dl;
    Timeline<IQSample> ul;
    std::vector<float> taps;  // wideband filter for the tuned rate

    ChannelCounters bs;
    ChannelCounters ue;

    std::optional<std::filesystem::path> capture_prefix;
    std::ofstream capture;

    std::uint64_t latency() const { return ue_attached ? link.latency_samples : 0; }
};

struct RadioState {
    RadioOptions opt;
    Clock::time_point epoch_wall = Clock::now();
    std::vector<std::unique_ptr<Domain>> domains;
    std::vector<std::unique_ptr<Channel>> channels;
    Timeline<cf32> dl_wide;
    Timeline<cf32> ul_wide;

    bool wideband() const { return opt.medium.kind == MediumKind::wideband_fdm; }
    bool paced() const { return !opt.fast_clock; }
    std::uint64_t half() const { return (opt.medium.num_taps - 1) / 2; }

    Channel& chan(RadioChannelId id) {
        if (id.index >= channels.size()) {
            throw RadioError(RadioError::Errc::invalid_channel, "radio channel " + std::to_string(id.index) +
                                                                    " does not exist");
        }
        return *channels[id.index];
    }

    static std::uint64_t rate_of(const Channel& c) { return static_cast<std::uint64_t>(std::llround(c.tuning.rate)); }

    std::uint64_t wall_tick(const Channel& c) const {
        const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - epoch_wall).count();
        const auto elapsed = static_cast<unsigned __int128>(std::max<std::int64_t>(ns, 0));
        return opt.epoch_tick + static_cast<std::uint64_t>(elapsed * rate_of(c) / 1'000'000'000u);
    }

    Clock::time_point wall_of(const Channel& c, std::uint64_t tick) const {
        if (tick <= opt.epoch_tick) return epoch_wall;
        const auto d = static_cast<unsigned __int128>(tick - opt.epoch_tick) * 1'000'000'000u;
        const auto r = rate_of(c);
        const auto ns = static_cast<std::int64_t>((d + r - 1) / r);
        return epoch_wall + std::chrono::nanoseconds(ns);
    }

    std::uint64_t factor(const Channel& c) const {
        return static_cast<std::uint64_t>(std::llround(opt.medium.wideband_rate / c.tuning.rate));
    }

    /// Channel-unit medium tick used as mix_up/mix_down first_tick.
    std::uint64_t medium_tick(std::uint64_t tick) const { return tick - opt.epoch_tick + kBiasTicks; }

    dsp::ChannelSlot dl_slot(const ChannelTuning& t) const {
        return {static_cast<double>(t.tx_freq_hz) - static_cast<double>(opt.medium.dl_center_hz), t.rate,
                opt.medium.wideband_rate};
    }
    dsp::ChannelSlot ul_slot(const ChannelTuning& t) const {
        return {static_cast<double>(t.rx_freq_hz) - static_cast<double>(opt.medium.ul_center_hz), t.rate,
                opt.medium.wideband_rate};
    }

    /// First wideband index a reader of [c, c + n) on channel `ch` needs.
    std::int64_t need_start(const Channel& ch, std::uint64_t c) const {
        return static_cast<std::int64_t>(medium_tick(c) * factor(ch)) - static_cast<std::int64_t>(half());
    }
    /// Last wideband index (inclusive) that affects [c, c + n).
    std::int64_t need_end(const Channel& ch, std::uint64_t c, std::size_t n) const {
        return static_cast<std::int64_t>(medium_tick(c + n - 1) * factor(ch)) + static_cast<std::int64_t>(half());
    }
    /// First wideband index a transmitter whose next send is at `horizon` can touch.
    std::int64_t contribution_start(const Channel& ch, std::uint64_t horizon) const {
        return static_cast<std::int64_t>(medium_tick(horizon + ch.latency()) * factor(ch)) -
               static_cast<std::int64_t>(half());
    }

    std::uint64_t guard_ticks(const Channel& ch) const {
        if (!wideband()) return 0;
        const auto d = factor(ch);
        return (2 * half() + d - 1) / d + 1;
    }

    /// Device time to start a newly activated reader at in fast-clock mode.
    std::uint64_t fast_start(const Channel& ch) const {
        std::uint64_t t = ch.fast_time;
        if (!wideband()) return t;
        for (const auto& other : channels) {
            if (!other->active || !other->bs_rx.started || other.get() == &ch) continue;
            const auto pos = (other->bs_rx.cursor - opt.epoch_tick) * factor(*other);
            const auto mine = (pos + factor(ch) - 1) / factor(ch) + opt.epoch_tick;
            t = std::max(t, mine);
        }
        return t;
    }

    void reclaim_wide(Timeline<cf32>& tl, bool uplink) {
        std::optional<std::int64_t> lowest;
        for (const auto& c : channels) {
            const Reader& r = uplink ? c->bs_rx : c->ue_rx;
            const bool reading = uplink ? (c->active && r.started) : (c->ue_attached && r.started);
            if (!reading) continue;
            const auto s = need_start(*c, r.cursor);
            lowest = lowest ? std::min(*lowest, s) : s;
        }
        if (lowest && *lowest > 0) tl.advance_to(static_cast<std::uint64_t>(*lowest));
    }

    void check_live(const Channel& c, std::uint64_t generation) const {
        if (c.generation != generation) throw RadioError(RadioError::Errc::released, "radio channel released");
        if (!c.active) throw RadioError(RadioError::Errc::channel_inactive, "radio channel is not active");
    }

    // Blocks until ready() holds. Paced mode waits for the wall clock to pass
    // `tick` instead.
    template <class Ready>
    void wait(std::unique_lock<std::mutex>& lk, Channel& c, std::uint64_t generation, std::uint64_t tick,
              Ready ready) {
        for (;;) {
            check_live(c, generation);
            if (paced()) {
                const auto when = wall_of(c, tick);
                const auto now = Clock::now();
                if (now >= when) return;
                if (when - now > kSpin) {
                    c.domain->cv.wait_until(lk, when - kSpin);
                    continue;
                }
                lk.unlock();
                while (Clock::now() < when) std::this_thread::yield();
                lk.lock();
            } else {
                if (ready()) return;
                c.domain->cv.wait_for(lk, std::chrono::milliseconds(50));
            }
        }
    }

    void notify(Channel& c) {
        if (wideband()) {
            for (auto& d : domains) d->cv.notify_all();
        } else {
            c.domain->cv.notify_all();
        }
    }

    std::pair<IQBuffer, RxMetadata> receive(Channel& c, std::uint64_t generation, bool bs_side, std::size_t n);
    bool transmit(Channel& c, std::uint64_t generation, bool bs_side, std::span<const IQSample> samples,
                  SampleTimestamp at);
    void write_capture(Channel& c, std::span<const IQSample> block, std::uint64_t tick);
};

std::pair<IQBuffer, RxMetadata> RadioState::receive(Channel& c, std::uint64_t generation, bool bs_side,
                                                   std::size_t n) {
    if (n == 0) throw RadioError(RadioError::Errc::empty_buffer, "recv of zero samples");
    std::unique_lock lk(c.domain->mu);
    check_live(c, generation);
    Reader& r = bs_side ? c.bs_rx : c.ue_rx;
    auto& tl = bs_side ? c.ul : c.dl;
    auto& wide = bs_side ? ul_wide : dl_wide;
    ChannelCounters& counters = bs_side ? c.bs : c.ue;

    if (!r.started) {
        r.started = true;
        r.cursor = paced() ? wall_tick(c) : fast_start(c);
        if (!wideband()) tl.advance_to(r.cursor);
    }

    RxMetadata meta;
    std::uint64_t target = r.cursor;
    if (paced()) {
        const auto now = wall_tick(c);
        if (now > r.cursor + n + opt.buffer_depth) target = now - n;
    }
    if (!wideband()) {
        target = std::max(target, tl.base());
    } else if (need_start(c, target) < static_cast<std::int64_t>(wide.base())) {
        const auto d = factor(c);
        const auto pos = (wide.base() + half() + d - 1) / d;  // medium_tick giving need_start >= base
        target = std::max(target, pos + opt.epoch_tick - kBiasTicks);
    }
    if (target > r.cursor) {
        // Whole blocks only, so a consumer can stand in silence block by block.
        target = r.cursor + (target - r.cursor + n - 1) / n * n;
        meta.overflow = true;
        meta.dropped = target - r.cursor;
        ++counters.overflows;
        counters.dropped_samples += meta.dropped;
        r.cursor = target;
    }

    const std::uint64_t start = r.cursor;
    wait(lk, c, generation, start + n + guard_ticks(c), [&] {
        if (!bs_side && c.bs_rx.started && c.bs_rx.cursor < start + n) return false;
        const auto heard = [&](const Channel& tx_chan) -> const Transmitter& {
            return bs_side ? tx_chan.ue_tx : tx_chan.bs_tx;
        };
        if (!wideband()) {
            const Transmitter& t = heard(c);
            return !t.active || t.horizon + c.latency() >= start + n;
        }
        const auto end = need_end(c, start, n);
        for (const auto& other : channels) {
            const Transmitter& t = heard(*other);
            if (t.active && contribution_start(*other, t.horizon) <= end) return false;
        }
        return true;
    });

    IQBuffer out(n);
    if (!wideband()) {
        tl.copy(start, out);
        tl.advance_to(start + n);
    } else {
        const auto d = factor(c);
        const auto first = static_cast<std::uint64_t>(need_start(c, start));
        std::vector<cf32> span_in(dsp::mix_down_input_length(n, d, c.taps.size()));
        wide.copy(first, span_in);
        const auto slot = bs_side ? ul_slot(c.tuning) : dl_slot(c.tuning);
        const auto base = dsp::mix_down(span_in, slot, c.taps, medium_tick(start), n);
        for (std::size_t k = 0; k < n; ++k) out[k] = {saturate(base[k].real()), saturate(base[k].imag())};
    }
    r.cursor = start + n;
    if (bs_side) c.fast_time = std::max(c.fast_time, r.cursor);
    if (wideband()) reclaim_wide(wide, bs_side);

    if (c.ue_attached && c.link.snr_db) add_awgn(out, *c.link.snr_db, bs_side ? c.ul_rng : c.dl_rng);
    counters.samples_received += n;
    meta.timestamp = {start};
    if (bs_side && c.capture_prefix) write_capture(c, out, start);
    notify(c);
    return {std::move(out), meta};
}

bool RadioState::transmit(Channel& c, std::uint64_t generation, bool bs_side, std::span<const IQSample> samples,
                          SampleTimestamp at) {
    if (samples.empty()) throw RadioError(RadioError::Errc::empty_buffer, "send of zero samples");
    std::unique_lock lk(c.domain->mu);
    check_live(c, generation);
    ChannelCounters& counters = bs_side ? c.bs : c.ue;
    Transmitter& tx = bs_side ? c.bs_tx : c.ue_tx;
    const Reader& peer = bs_side ? c.ue_rx : c.bs_rx;
    const std::uint64_t placed = at.ticks + c.latency();

    bool late = false;
    if (paced()) {
        late = at.ticks < wall_tick(c);
    } else if (!wideband()) {
        late = peer.started && placed < peer.cursor;
    } else {
        late = at.ticks + kBiasTicks < opt.epoch_tick ||
               contribution_start(c, at.ticks) < static_cast<std::int64_t>((bs_side ? dl_wide : ul_wide).base());
    }
    if (tx.active) tx.horizon = std::max(tx.horizon, at.ticks + samples.size());
    if (late) {
        ++counters.late_packets;
        counters.late_samples += samples.size();
        notify(c);
        return false;
    }

    if (!wideband()) {
        const bool heard = bs_side ? c.ue_attached : true;
        if (heard) {
            auto& tl = bs_side ? c.dl : c.ul;
            const auto r = tl.add(placed, samples, add_iq);
            counters.late_samples += r.late;
        }
    } else {
        std::vector<cf32> base(samples.size());
        for (std::size_t k = 0; k < samples.size(); ++k) base[k] = {float(samples[k].i), float(samples[k].q)};
        const auto slot = bs_side ? dl_slot(c.tuning) : ul_slot(c.tuning);
        const auto contribution = dsp::mix_up(base, slot, c.taps, medium_tick(placed));
        auto& wide = bs_side ? dl_wide : ul_wide;
        const auto first = static_cast<std::uint64_t>(contribution_start(c, at.ticks));
        const auto r = wide.add(first, std::span<const cf32>(contribution), add_cf);
        counters.late_samples += r.late;
    }
    counters.samples_sent += samples.size();
    notify(c);
    return true;
}

void RadioState::write_capture(Channel& c, std::span<const IQSample> block, std::uint64_t tick) {
    if (!c.capture.is_open()) {
        std::ofstream side(c.capture_prefix->string() + ".txt");
        side << "format = ci16_le\n"
             << "sample_rate = " << rate_of(c) << "\n"
             << "center_frequency_hz = " << c.tuning.rx_freq_hz << "\n"
             << "start_tick = " << tick << "\n";
        c.capture.open(c.capture_prefix->string() + ".iq", std::ios::binary | std::ios::trunc);
    }
    std::vector<std::byte> bytes(block.size() * kBytesPerSample);
    samples_to_bytes(block, bytes);
    c.capture.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::shared_ptr<VirtualRadio> VirtualRadio::open(const RadioOptions& options) {
    if (options.channels == 0) throw RadioError(RadioError::Errc::invalid_medium, "radio needs at least one channel");
    if (options.master_clock_rate <= 0) throw RadioError(RadioError::Errc::invalid_medium, "bad master clock rate");
    if (options.buffer_depth == 0) throw RadioError(RadioError::Errc::invalid_medium, "buffer depth must be > 0");
    auto state = std::make_shared<RadioState>();
    state->opt = options;
    const auto& m = options.medium;
    if (m.kind == MediumKind::wideband_fdm) {
        if (m.wideband_rate <= 0) throw RadioError(RadioError::Errc::invalid_medium, "wideband rate must be > 0");
        if (m.num_taps < 3 || m.num_taps % 2 == 0 || (m.num_taps - 1) / 2 > kBiasTicks) {
            throw RadioError(RadioError::Errc::invalid_medium, "filter taps must be odd, 3..129");
        }
        state->domains.push_back(std::make_unique<Domain>());
        // Sized for the narrowest supported channel (7.68 Msps).
        const auto max_factor = static_cast<std::size_t>(std::ceil(m.wideband_rate / 7.68e6));
        state->dl_wide = Timeline<cf32>(2 * options.buffer_depth * max_factor);
        state->ul_wide = Timeline<cf32>(2 * options.buffer_depth * max_factor);
    }
    for (std::size_t k = 0; k < options.channels; ++k) {
        auto c = std::make_unique<Channel>();
        if (m.kind == MediumKind::ideal_loopback) {
            state->domains.push_back(std::make_unique<Domain>());
            c->dl = Timeline<IQSample>(2 * options.buffer_depth);
            c->ul = Timeline<IQSample>(2 * options.buffer_depth);
        }
        c->domain = state->domains.back().get();
        c->fast_time = options.epoch_tick;
        state->channels.push_back(std::move(c));
    }
    std::shared_ptr<VirtualRadio> radio(new VirtualRadio(state));
    for (const auto& [ch, tuning] : options.presets) radio->tune(ch, tuning);
    return radio;
}

VirtualRadio::VirtualRadio(std::shared_ptr<RadioState> state) : state_(std::move(state)) {}
VirtualRadio::~VirtualRadio() {
    for (std::size_t k = 0; k < state_->channels.size(); ++k) release({static_cast<std::uint32_t>(k)});
}

std::size_t VirtualRadio::channel_count() const { return state_->channels.size(); }
bool VirtualRadio::fast_clock() const { return state_->opt.fast_clock; }
const MediumMode& VirtualRadio::medium() const { return state_->opt.medium; }

void VirtualRadio::tune(RadioChannelId ch, ChannelTuning tuning) {
    auto& s = *state_;
    Channel& c = s.chan(ch);
    if (!(tuning.rate > 0)) throw RadioError(RadioError::Errc::invalid_medium, "channel rate must be > 0");
    std::vector<float> taps;
    if (s.wideband()) {
        try {
            s.dl_slot(tuning).validate();
            s.ul_slot(tuning).validate();
            taps = dsp::slot_filter(s.dl_slot(tuning), s.opt.medium.num_taps);
        } catch (const dsp::BandError& e) {
            throw RadioError(RadioError::Errc::band_outside_wideband, e.what());
        }
    }
    std::unique_lock lk(c.domain->mu);
    const bool rate_changed = c.active && std::llround(c.tuning.rate) != std::llround(tuning.rate);
    const bool was_active = c.active;
    tuning.active = true;
    c.tuning = tuning;
    c.taps = std::move(taps);
    c.active = true;
    if (!was_active || rate_changed) {
        c.bs_rx = {};
        c.bs_tx = {};
        if (!s.wideband()) {
            const auto start = s.paced() ? s.wall_tick(c) : c.fast_time;
            c.dl.reset(start);
            c.ul.reset(start);
        }
    }
    s.notify(c);
}

ChannelTuning VirtualRadio::tuning(RadioChannelId ch) const {
    Channel& c = state_->chan(ch);
    std::lock_guard lk(c.domain->mu);
    return c.tuning;
}

void VirtualRadio::release(RadioChannelId ch) {
    Channel& c = state_->chan(ch);
    std::lock_guard lk(c.domain->mu);
    c.active = false;
    c.tuning.active = false;
    ++c.generation;
    c.bs_rx = {};
    c.ue_rx = {};
    c.bs_tx = {};
    c.ue_tx = {};
    c.ue_attached = false;
    if (c.capture.is_open()) c.capture.close();
    c.capture_prefix.reset();
    state_->notify(c);
}

std::pair<IQBuffer, RxMetadata> VirtualRadio::recv(RadioChannelId ch, std::size_t n) {
    Channel& c = state_->chan(ch);
    std::uint64_t gen;
    {
        std::lock_guard lk(c.domain->mu);
        gen = c.generation;
    }
    return state_->receive(c, gen, true, n);
}

bool VirtualRadio::send(RadioChannelId ch, std::span<const IQSample> samples, SampleTimestamp at) {
    Channel& c = state_->chan(ch);
    std::uint64_t gen;
    {
        std::lock_guard lk(c.domain->mu);
        gen = c.generation;
    }
    return state_->transmit(c, gen, true, samples, at);
}

void VirtualRadio::begin_tx(RadioChannelId ch, SampleTimestamp first) {
    Channel& c = state_->chan(ch);
    std::lock_guard lk(c.domain->mu);
    state_->check_live(c, c.generation);
    c.bs_tx.active = true;
    c.bs_tx.horizon = first.ticks;
    state_->notify(c);
}

void VirtualRadio::end_tx(RadioChannelId ch) {
    Channel& c = state_->chan(ch);
    std::lock_guard lk(c.domain->mu);
    c.bs_tx.active = false;
    state_->notify(c);
}

SampleTimestamp VirtualRadio::now(RadioChannelId ch) const {
    Channel& c = state_->chan(ch);
    std::lock_guard lk(c.domain->mu);
    if (state_->paced()) return {c.active ? state_->wall_tick(c) : state_->opt.epoch_tick};
    return {c.bs_rx.started ? c.bs_rx.cursor : c.fast_time};
}

ChannelCounters VirtualRadio::counters(RadioChannelId ch) const {
    Channel& c = state_->chan(ch);
    std::lock_guard lk(c.domain->mu);
    return c.bs;
}

std::unique_ptr<UeEndpoint> VirtualRadio::attach_ue(RadioChannelId ch, UeLinkConfig link) {
    auto& s = *state_;
    Channel& c = s.chan(ch);
    std::lock_guard lk(c.domain->mu);
    s.check_live(c, c.generation);
    if (c.ue_attached) throw RadioError(RadioError::Errc::ue_attached, "channel already has a UE");
    c.ue_attached = true;
    c.link = link;
    c.dl_rng.seed(link.seed * 2 + 1);
    c.ul_rng.seed(link.seed * 2 + 2);
    c.ue = {};
    c.ue_tx = {};
    c.ue_rx.started = true;
    if (s.paced()) {
        c.ue_rx.cursor = s.wall_tick(c);
    } else {
        c.ue_rx.cursor = c.bs_rx.started ? c.bs_rx.cursor : s.fast_start(c);
    }
    if (!s.wideband()) c.dl.reset(c.ue_rx.cursor);
    s.notify(c);
    return std::unique_ptr<UeEndpoint>(new UeEndpoint(state_, ch, c.generation));
}

void VirtualRadio::enable_capture(RadioChannelId ch, const std::filesystem::path& prefix) {
    Channel& c = state_->chan(ch);
    std::lock_guard lk(c.domain->mu);
    if (c.capture.is_open()) c.capture.close();
    c.capture_prefix = prefix;
}

UeEndpoint::UeEndpoint(std::shared_ptr<RadioState> state, RadioChannelId ch, std::uint64_t generation)
    : state_(std::move(state)), channel_(ch), generation_(generation) {}

UeEndpoint::~UeEndpoint() {
    Channel& c = state_->chan(channel_);
    std::lock_guard lk(c.domain->mu);
    if (c.generation != generation_) return;
    c.ue_attached = false;
    c.ue_rx = {};
    c.ue_tx = {};
    state_->notify(c);
}

std::pair<IQBuffer, RxMetadata> UeEndpoint::recv(std::size_t n) {
    return state_->receive(state_->chan(channel_), generation_, false, n);
}

bool UeEndpoint::send(std::span<const IQSample> samples, SampleTimestamp at) {
    return state_->transmit(state_->chan(channel_), generation_, false, samples, at);
}

void UeEndpoint::begin_tx(SampleTimestamp first) {
    Channel& c = state_->chan(channel_);
    std::lock_guard lk(c.domain->mu);
    state_->check_live(c, generation_);
    c.ue_tx.active = true;
    c.ue_tx.horizon = first.ticks;
    state_->notify(c);
}

void UeEndpoint::end_tx() {
    Channel& c = state_->chan(channel_);
    std::lock_guard lk(c.domain->mu);
    if (c.generation != generation_) return;
    c.ue_tx.active = false;
    state_->notify(c);
}

SampleTimestamp UeEndpoint::now() const {
    Channel& c = state_->chan(channel_);
    std::lock_guard lk(c.domain->mu);
    if (state_->paced()) return {state_->wall_tick(c)};
    return {c.ue_rx.cursor};
}

ChannelCounters UeEndpoint::counters() const {
    Channel& c = state_->chan(channel_);
    std::lock_guard lk(c.domain->mu);
    return c.ue;
}

}  // namespace pvran::radio
