#include "doctest.h"
#include "pvran/pvback.hpp"

#include <cstring>
#include <thread>

using namespace pvran;
using namespace pvran::pvback;
using namespace std::chrono_literals;

namespace {

constexpr std::size_t kSf = 7680;
constexpr std::size_t kSfBytes = kSf * 4;

SliceConfig slice(std::uint32_t id, std::uint32_t channel, std::uint64_t dl = 595'000'000,
                  std::uint64_t ul = 545'000'000) {
    SliceConfig c;
    c.slice_id = {id};
    c.profile = BandwidthProfile::from_prbs(25);
    c.dl_freq_hz = dl;
    c.ul_freq_hz = ul;
    c.radio_channel = {channel};
    return c;
}

std::shared_ptr<radio::VirtualRadio> fast_radio(std::uint64_t epoch = 0, std::size_t channels = 2) {
    radio::RadioOptions o;
    o.channels = channels;
    o.fast_clock = true;
    o.epoch_tick = epoch;
    return radio::VirtualRadio::open(o);
}

SessionOptions ledger_options() {
    SessionOptions o;
    o.record_ledger = true;
    o.backing = vchan::Backing::memory;
    return o;
}

std::vector<std::byte> read_exact(vchan::StreamChannel& ch, std::size_t n) {
    std::vector<std::byte> out(n);
    REQUIRE(ch.read(out) == n);
    return out;
}

std::uint64_t le64(const std::byte* p) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= std::uint64_t(p[k]) << (8 * k);
    return v;
}

template <class Pred>
bool eventually(Pred pred, std::chrono::milliseconds limit = 5000ms) {
    const auto deadline = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred()) return true;
        std::this_thread::sleep_for(2ms);
    }
    return pred();
}

IQBuffer ramp(std::size_t n, int start) {
    IQBuffer b(n);
    for (std::size_t k = 0; k < n; ++k) {
        const int v = (start + static_cast<int>(k)) % 30000;
        b[k] = {static_cast<std::int16_t>(v), static_cast<std::int16_t>(-v)};
    }
    return b;
}

}  // namespace

TEST_CASE("timestamp header is PVTS then a little-endian tick count") {
    const auto bytes = encode_header({kTimestampMagic, {0x0102030405060708ull}});
    const char magic[] = "PVTS";
    CHECK(std::memcmp(bytes.data(), magic, 4) == 0);
    CHECK(bytes[4] == std::byte{0x08});
    CHECK(bytes[11] == std::byte{0x01});
    const auto back = decode_header(bytes);
    CHECK(back.magic == kTimestampMagic);
    CHECK(back.timestamp.ticks == 0x0102030405060708ull);
}

TEST_CASE("channel paths follow the slice id") {
    CHECK(ctrl_path({7}) == "pv/7/ctrl");
    CHECK(rx_path({7}) == "pv/7/rx");
    CHECK(tx_path({7}) == "pv/7/tx");
}

TEST_CASE("rx stream opens with one header and continues with raw subframes") {
    auto store = vchan::RendezvousStore::temporary();
    auto radio = fast_radio(1'000'000);
    auto session = SliceSession::start(slice(1, 0), radio, store, ledger_options());
    auto rx = vchan::StreamChannel::client_connect(store, "0", rx_path({1}));

    REQUIRE(rx.wait_readable(kTimestampHeaderSize + kSfBytes, std::chrono::steady_clock::now() + 5s));
    const auto first = read_exact(rx, kTimestampHeaderSize + kSfBytes);
    const auto header = decode_header(std::span<const std::byte, kTimestampHeaderSize>(first.data(), 12));
    CHECK(header.magic == kTimestampMagic);
    CHECK(header.timestamp.ticks == 1'000'000);

    // Later subframes carry no header: exactly bytes_per_subframe each.
    for (int k = 0; k < 3; ++k) {
        const auto body = read_exact(rx, kSfBytes);
        CHECK(body.size() == kSfBytes);
    }

    const auto ledger = session->rx_ledger();
    REQUIRE(ledger.size() >= 4);
    // Subframe k starts at the first tick plus k subframe lengths.
    for (std::size_t k = 0; k < 4; ++k) CHECK(ledger[k].ticks == 1'000'000 + k * kSf);
    CHECK(ledger[3].ticks == 1'023'040);

    const auto m = session->metrics();
    CHECK(m.rx.initial.ticks == 1'000'000);
    CHECK(m.rx.timestamp.ticks == m.rx.initial.ticks + m.rx.iterations * kSf);
    session->stop();
}

TEST_CASE("tx streamer stays parked until the rx first run") {
    auto store = vchan::RendezvousStore::temporary();
    auto radio = fast_radio(500);
    radio->tune({0}, tuning_for(slice(1, 0)));
    auto ue = radio->attach_ue({0});
    // A declared but silent UE transmitter holds back the BS receive path.
    ue->begin_tx({500});

    auto session = SliceSession::start(slice(1, 0), radio, store, ledger_options());
    auto tx = vchan::StreamChannel::client_connect(store, "0", tx_path({1}));
    const auto data = ramp(kSf, 1);
    std::vector<std::byte> wire(kSfBytes);
    samples_to_bytes(data, wire);
    tx.write(wire);

    std::this_thread::sleep_for(100ms);
    auto m = session->metrics();
    CHECK_FALSE(m.rx.first_run_done);
    CHECK_FALSE(m.tx.first_run_done);
    CHECK(radio->counters({0}).samples_sent == 0);
    CHECK(session->tx_ledger().empty());

    ue->send(ramp(kSf, 5), {500});
    ue->end_tx();
    CHECK(eventually([&] { return session->metrics().tx.first_run_done; }));
    const auto tx_ledger = session->tx_ledger();
    REQUIRE_FALSE(tx_ledger.empty());
    CHECK(tx_ledger[0].ticks == 500 + 30640);
    CHECK(session->metrics().tx.initial.ticks == 31'140);
    session->stop();
}

TEST_CASE("samples written to tx reach the UE at rx time plus the tx offset") {
    auto store = vchan::RendezvousStore::temporary();
    auto radio = fast_radio(0);
    radio->tune({0}, tuning_for(slice(1, 0)));
    auto ue = radio->attach_ue({0});
    auto session = SliceSession::start(slice(1, 0), radio, store, ledger_options());
    auto rx = vchan::StreamChannel::client_connect(store, "0", rx_path({1}));
    auto tx = vchan::StreamChannel::client_connect(store, "0", tx_path({1}));

    const auto first = read_exact(rx, kTimestampHeaderSize + kSfBytes);
    const std::uint64_t t0 = le64(first.data() + 4);
    const auto data = ramp(kSf, 11);
    std::vector<std::byte> wire(kSfBytes);
    samples_to_bytes(data, wire);
    tx.write(wire);
    // A second subframe extends the downlink past the block the UE reads last.
    tx.write(wire);

    // Keep the rx stream drained so the backend keeps advancing device time.
    std::atomic<bool> done{false};
    std::thread drain([&] {
        std::vector<std::byte> buf(kSfBytes);
        try {
            while (!done) rx.read(buf);
        } catch (const vchan::ChannelError&) {
        }
    });

    const std::uint64_t expect = t0 + tx_offset(BandwidthProfile::from_prbs(25));
    // Collect the UE downlink from the block holding `expect` onward.
    IQBuffer joined;
    std::uint64_t at = 0;
    for (;;) {
        auto [block, meta] = ue->recv(kSf);
        if (meta.timestamp.ticks + kSf <= expect) continue;
        if (joined.empty()) at = meta.timestamp.ticks;
        joined.insert(joined.end(), block.begin(), block.end());
        if (joined.size() >= (expect - at) + kSf) break;
    }
    const std::size_t lead = expect - at;
    for (std::size_t k = 0; k < lead; ++k) CHECK(joined[k] == IQSample{});
    for (std::size_t k = 0; k < kSf; ++k) REQUIRE(joined[lead + k] == data[k]);

    done = true;
    session->stop();
    drain.join();
    CHECK(session->metrics().tx.underruns == 0);
}

TEST_CASE("stop is idempotent and ends the frontend streams") {
    auto store = vchan::RendezvousStore::temporary();
    auto radio = fast_radio();
    auto session = SliceSession::start(slice(1, 0), radio, store, ledger_options());
    auto rx = vchan::StreamChannel::client_connect(store, "0", rx_path({1}));
    auto tx = vchan::StreamChannel::client_connect(store, "0", tx_path({1}));
    CHECK(eventually([&] { return session->alive() && session->metrics().rx.first_run_done; }));

    std::atomic<bool> ended{false};
    std::thread reader([&] {
        std::vector<std::byte> buf(kSfBytes);
        try {
            for (;;) {
                if (rx.read(buf) < buf.size()) break;
            }
        } catch (const vchan::ChannelError&) {
        }
        ended = true;
    });

    const auto a = session->stop();
    const auto b = session->stop();
    CHECK_FALSE(a.alive);
    CHECK(a.rx.samples == b.rx.samples);
    CHECK(a.rx.iterations == b.rx.iterations);
    CHECK(a.tx.samples == b.tx.samples);
    CHECK_FALSE(session->alive());
    reader.join();
    CHECK(ended);
    CHECK_FALSE(store.is_published("0", rx_path({1})));
}

TEST_CASE("backend rejects duplicate slices, busy channels, bad channels and FDM conflicts") {
    auto store = vchan::RendezvousStore::temporary();
    auto radio = fast_radio(0, 3);
    SessionOptions o;
    o.backing = vchan::Backing::memory;
    Backend backend(radio, store, o);

    backend.start_session(slice(1, 0, 595'000'000, 545'000'000));
    CHECK(backend.has_session({1}));

    auto code_of = [&](const SliceConfig& c) {
        try {
            backend.start_session(c);
        } catch (const SessionError& e) {
            return e.code();
        }
        FAIL("start_session accepted an invalid slice");
        return SessionError::Errc::setup_failed;
    };
    CHECK(code_of(slice(1, 1, 610'000'000, 560'000'000)) == SessionError::Errc::slice_exists);
    CHECK(code_of(slice(2, 0, 610'000'000, 560'000'000)) == SessionError::Errc::channel_in_use);
    CHECK(code_of(slice(2, 9, 610'000'000, 560'000'000)) == SessionError::Errc::invalid_channel);
    // 2 MHz apart with 7.68 MHz wide bands: the downlinks overlap.
    CHECK(code_of(slice(2, 1, 597'000'000, 560'000'000)) == SessionError::Errc::fdm_conflict);

    CHECK(backend.check(slice(2, 1, 610'000'000, 560'000'000)).ok());
    backend.start_session(slice(2, 1, 610'000'000, 560'000'000));
    CHECK(backend.sessions().size() == 2);
    CHECK(backend.plan().entries.size() == 2);

    const auto m1 = backend.stop_session({1});
    const auto m2 = backend.stop_session({1});
    CHECK(m1.rx.samples == m2.rx.samples);
    CHECK_FALSE(backend.has_session({1}));
    CHECK_THROWS_AS(backend.stop_session({42}), SessionError);

    // Channel 0 is free again.
    backend.start_session(slice(3, 0, 625'000'000, 575'000'000));
    CHECK(backend.has_session({3}));
}

TEST_CASE("retune applies new frequencies after checking the plan") {
    auto store = vchan::RendezvousStore::temporary();
    auto radio = fast_radio(0, 2);
    SessionOptions o;
    o.backing = vchan::Backing::memory;
    Backend backend(radio, store, o);
    backend.start_session(slice(1, 0, 595'000'000, 545'000'000));
    backend.start_session(slice(2, 1, 610'000'000, 560'000'000));

    auto moved = slice(1, 0, 625'000'000, 575'000'000);
    backend.retune(moved);
    CHECK(backend.config({1})->dl_freq_hz == 625'000'000);
    CHECK(radio->tuning({0}).tx_freq_hz == 625'000'000);
    CHECK(radio->tuning({0}).rx_freq_hz == 575'000'000);

    auto clash = slice(1, 0, 611'000'000, 575'000'000);
    CHECK_THROWS_AS(backend.retune(clash), SessionError);
    CHECK(backend.config({1})->dl_freq_hz == 625'000'000);
}

TEST_CASE("paced overruns are replaced by silence and timestamps stay contiguous") {
    auto store = vchan::RendezvousStore::temporary();
    radio::RadioOptions ro;
    ro.channels = 1;
    ro.buffer_depth = 16384;
    auto radio = radio::VirtualRadio::open(ro);
    auto session = SliceSession::start(slice(1, 0), radio, store, ledger_options());
    auto rx = vchan::StreamChannel::client_connect(store, "0", rx_path({1}));

    // Leave the ring full long enough for the radio to drop samples.
    std::this_thread::sleep_for(150ms);
    std::vector<std::byte> buf(kSfBytes);
    read_exact(rx, kTimestampHeaderSize);
    const auto until = std::chrono::steady_clock::now() + 100ms;
    while (std::chrono::steady_clock::now() < until) rx.read(buf);
    const auto m = session->stop();

    CHECK(m.rx.overruns > 0);
    CHECK(m.rx.timestamp.ticks == m.rx.initial.ticks + m.rx.iterations * kSf);
    const auto ledger = session->rx_ledger();
    REQUIRE(ledger.size() > 2);
    for (std::size_t k = 1; k < ledger.size(); ++k) REQUIRE(ledger[k].ticks - ledger[k - 1].ticks == kSf);
}
