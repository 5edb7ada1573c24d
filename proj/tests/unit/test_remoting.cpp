#include "doctest.h"
#include "pvran/remoting.hpp"

#include <random>
#include <set>
#include <type_traits>

using namespace pvran;
using namespace pvran::remoting;
using namespace std::chrono_literals;

namespace {

constexpr std::size_t kSf = 7680;

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

std::vector<std::byte> bytes(std::initializer_list<int> v) {
    std::vector<std::byte> out;
    for (int b : v) out.push_back(std::byte(b));
    return out;
}

struct Rig {
    vchan::RendezvousStore store = vchan::RendezvousStore::temporary();
    std::shared_ptr<radio::VirtualRadio> radio;
    std::unique_ptr<pvback::Backend> backend;
    std::unique_ptr<Dispatcher> dispatcher;

    explicit Rig(std::size_t channels = 2) {
        radio::RadioOptions o;
        o.channels = channels;
        o.fast_clock = true;
        radio = radio::VirtualRadio::open(o);
        pvback::SessionOptions so;
        so.backing = vchan::Backing::memory;
        backend = std::make_unique<pvback::Backend>(radio, store, so);
        dispatcher = std::make_unique<Dispatcher>(*backend);
    }

    ~Rig() {
        dispatcher.reset();
        backend.reset();
    }

    RemoteDevice device(const SliceConfig& c) {
        dispatcher->open_control(c.slice_id);
        return RemoteDevice(store, c);
    }
};

// Writes raw frames to a control channel and reads whole replies back.
struct RawControl {
    vchan::StreamChannel ch;

    RawControl(const vchan::RendezvousStore& store, SliceId id)
        : ch(vchan::StreamChannel::client_connect(store, "0", pvback::ctrl_path(id))) {}

    void send(std::span<const std::byte> frame) { ch.write(frame); }

    ControlMessage reply() {
        REQUIRE(ch.wait_readable(kHeaderSize, std::chrono::steady_clock::now() + 5s));
        std::vector<std::byte> buf(kHeaderSize);
        ch.read(buf);
        const auto h = peek_header(buf);
        buf.resize(kHeaderSize + h.payload_len);
        if (h.payload_len) {
            REQUIRE(ch.wait_readable(h.payload_len, std::chrono::steady_clock::now() + 5s));
            ch.read(std::span<std::byte>(buf).subspan(kHeaderSize));
        }
        // Replies to unknown opcodes echo them, so no opcode validation here.
        ControlMessage m{h.opcode, h.correlation_id, h.status, {}};
        m.payload.assign(buf.begin() + kHeaderSize, buf.end());
        return m;
    }
};

template <class Pred>
bool eventually(Pred pred, std::chrono::milliseconds limit = 5000ms) {
    const auto deadline = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred()) return true;
        std::this_thread::sleep_for(2ms);
    }
    return pred();
}

// Written against the device API only; runs unchanged on either binding.
std::pair<SampleTimestamp, SampleTimestamp> two_blocks(DeviceApi& dev) {
    dev.find_device();
    auto [a, ta] = dev.recv(kSf);
    auto [b, tb] = dev.recv(kSf);
    dev.send(a, ta + dev.config().effective_tx_offset());
    return {ta, tb};
}

}  // namespace

TEST_CASE("INIT with no payload encodes to a 12-byte little-endian header") {
    const auto frame = encode(make_request(Opcode::init, 1));
    CHECK(frame == bytes({1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
    const auto reply = encode(make_reply(make_request(Opcode::set_rate, 0x01020304), Status::out_of_range));
    CHECK(reply == bytes({0x87, 0, 4, 3, 2, 1, 7, 0, 0, 0, 0, 0}));
}

TEST_CASE("SET_RX_FREQ with a u64 payload round-trips") {
    const auto m = make_request(Opcode::set_rx_freq, 42, encode_u64(595'000'000));
    const auto frame = encode(m);
    CHECK(frame.size() == 20);
    const auto back = decode(frame);
    CHECK(back == m);
    CHECK(decode_u64(back.payload) == 595'000'000);
    CHECK(decode_i32(encode_i32(-7)) == -7);
}

TEST_CASE("decode reports truncation, unknown opcodes and length mismatches") {
    auto code = [](std::span<const std::byte> b) {
        try {
            decode(b);
        } catch (const CodecError& e) {
            return e.code();
        }
        FAIL("decode accepted a malformed frame");
        return CodecError::Errc::bad_payload;
    };
    CHECK(code(bytes({1, 0, 1, 0, 0})) == CodecError::Errc::truncated);
    CHECK(code(bytes({9, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0})) == CodecError::Errc::unknown_opcode);
    CHECK(code(bytes({0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0})) == CodecError::Errc::unknown_opcode);
    CHECK(code(bytes({1, 0, 1, 0, 0, 0, 0, 0, 4, 0, 0, 0, 1, 2})) == CodecError::Errc::truncated);
    CHECK(code(bytes({1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 2})) == CodecError::Errc::length_mismatch);
    CHECK(code(bytes({1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1})) == CodecError::Errc::payload_too_large);
}

TEST_CASE("decode is total over arbitrary bytes and inverts encode") {
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> byte(0, 255);
    for (int trial = 0; trial < 20000; ++trial) {
        std::vector<std::byte> buf(static_cast<std::size_t>(rng() % 40));
        for (auto& b : buf) b = std::byte(byte(rng));
        // Bias half the trials toward plausible headers so the payload paths run.
        if (trial % 2 && buf.size() >= kHeaderSize) {
            buf[0] = std::byte((1 + rng() % 8) | (rng() % 2 ? kReplyBit : 0));
            buf[1] = std::byte{0};
            const auto len = static_cast<std::uint32_t>(rng() % 2 ? buf.size() - kHeaderSize : rng() % 40);
            for (int k = 0; k < 4; ++k) buf[8 + k] = std::byte((len >> (8 * k)) & 0xff);
        }
        try {
            const auto m = decode(buf);
            REQUIRE(encode(m) == buf);
        } catch (const CodecError&) {
        }
    }
    for (int trial = 0; trial < 2000; ++trial) {
        ControlMessage m;
        m.opcode = static_cast<std::uint16_t>((1 + rng() % 8) | (rng() % 2 ? kReplyBit : 0));
        m.correlation_id = static_cast<std::uint32_t>(rng());
        m.status = static_cast<std::uint16_t>(rng() % 9);
        m.payload.resize(rng() % 300);
        for (auto& b : m.payload) b = std::byte(byte(rng));
        REQUIRE(decode(encode(m)) == m);
    }
}

TEST_CASE("slice config payload round-trips") {
    auto c = slice(3, 1, 610'000'000, 560'000'000);
    c.profile = BandwidthProfile::from_prbs(50);
    c.rx_gain_db = 12;
    c.tx_gain_db = -3;
    c.tx_offset_override = 61'280;
    c.phy_profile_name = "phy-b";
    CHECK(decode_config(encode_config(c)) == c);
    auto p = encode_config(c);
    p.pop_back();
    CHECK_THROWS_AS(decode_config(p), CodecError);
}

TEST_CASE("stub table covers the whole device API") {
    const std::vector<std::string> api = {"find_device", "established", "config",          "set_rx_freq",
                                          "set_tx_freq", "set_rx_gain", "set_tx_gain",     "set_rate",
                                          "recv",        "send",        "set_time_source", "shutdown"};
    std::set<std::string> names;
    for (const auto& e : stub_table()) {
        CHECK(names.insert(e.function).second);
        CHECK((e.kind == StubKind::forward) == e.opcode.has_value());
    }
    CHECK(names == std::set<std::string>(api.begin(), api.end()));
}

TEST_CASE("device API bindings are interchangeable") {
    static_assert(std::is_base_of_v<DeviceApi, RemoteDevice>);
    static_assert(std::is_base_of_v<DeviceApi, LocalDevice>);

    Rig rig;
    rig.dispatcher->start();
    auto remote = rig.device(slice(1, 0));
    LocalDevice local(rig.radio, slice(2, 1, 610'000'000, 560'000'000));
    const auto [r0, r1] = two_blocks(remote);
    const auto [l0, l1] = two_blocks(local);
    CHECK(r1.ticks == r0.ticks + kSf);
    CHECK(l1.ticks == l0.ticks + kSf);
    CHECK(local.find_device() == "X310-sim");
}

TEST_CASE("INIT establishes a session and SHUTDOWN removes it") {
    Rig rig;
    rig.dispatcher->start();
    auto dev = rig.device(slice(1, 0));
    CHECK_FALSE(dev.established());
    CHECK(dev.find_device() == "X310-sim");
    CHECK(dev.established());
    CHECK(rig.backend->sessions().size() == 1);

    dev.set_record_ledger(true);
    const auto [first, t0] = dev.recv(kSf);
    const auto [second, t1] = dev.recv(kSf);
    CHECK(t1.ticks == t0.ticks + kSf);

    CHECK(dev.set_rx_freq(595'000'000) == 595'000'000);
    CHECK(rig.radio->tuning({0}).rx_freq_hz == 595'000'000);
    CHECK(dev.set_tx_freq(596'000'000) == 596'000'000);
    CHECK(rig.backend->config({1})->dl_freq_hz == 596'000'000);
    CHECK(dev.set_rate(7'680'000) == 7'680'000);
    CHECK(dev.set_rx_gain(40) == 31);
    CHECK(dev.set_tx_gain(-5) == 0);
    CHECK(dev.set_tx_gain(20) == 20);
    CHECK(rig.radio->tuning({0}).tx_gain_db == 20);
    CHECK(dev.find_device() == "X310-sim");

    try {
        dev.set_rate(1'000'000);
        FAIL("rate outside the profile was accepted");
    } catch (const DeviceError& e) {
        CHECK(e.code() == DeviceError::Errc::rejected);
        CHECK(e.status() == static_cast<std::uint16_t>(Status::out_of_range));
    }
    CHECK_THROWS_AS(dev.set_tx_freq(0), DeviceError);

    dev.shutdown();
    CHECK_FALSE(dev.established());
    CHECK(rig.backend->sessions().empty());
    CHECK_FALSE(rig.store.is_published("0", pvback::rx_path({1})));
    CHECK_FALSE(rig.store.is_published("0", pvback::tx_path({1})));
}

TEST_CASE("a second INIT for a live slice gets an error status") {
    Rig rig;
    rig.dispatcher->start();
    auto dev = rig.device(slice(1, 0));
    dev.find_device();
    const auto reply = dev.call(Opcode::init, encode_config(slice(1, 1, 610'000'000, 560'000'000)), 2s);
    CHECK(reply.status == static_cast<std::uint16_t>(Status::slice_exists));
    CHECK(rig.backend->sessions().size() == 1);
}

TEST_CASE("an overlapping band is rejected with the FDM conflict status") {
    Rig rig;
    rig.dispatcher->start();
    auto a = rig.device(slice(1, 0, 595'000'000, 545'000'000));
    auto b = rig.device(slice(2, 1, 598'000'000, 560'000'000));
    a.find_device();
    try {
        b.find_device();
        FAIL("overlapping slice was accepted");
    } catch (const DeviceError& e) {
        CHECK(e.code() == DeviceError::Errc::rejected);
        CHECK(e.status() == static_cast<std::uint16_t>(Status::fdm_conflict));
    }
    CHECK_FALSE(b.established());
    CHECK(rig.backend->sessions().size() == 1);
}

TEST_CASE("unknown opcodes and malformed frames get error replies and serving continues") {
    Rig rig;
    rig.dispatcher->open_control({1});
    rig.dispatcher->start();
    RawControl raw(rig.store, {1});

    raw.send(bytes({99, 0, 5, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
    auto r = raw.reply();
    CHECK(r.correlation_id == 5);
    CHECK(r.status == static_cast<std::uint16_t>(Status::unknown_opcode));

    // A reply opcode sent as a request.
    raw.send(encode({static_cast<std::uint16_t>(kReplyBit | 2), 6, 0, {}}));
    CHECK(raw.reply().status == static_cast<std::uint16_t>(Status::unknown_opcode));

    // SET with the wrong payload width.
    raw.send(encode(make_request(Opcode::set_rx_freq, 7, bytes({1, 2, 3}))));
    r = raw.reply();
    CHECK(r.status == static_cast<std::uint16_t>(Status::not_established));

    raw.send(encode(make_request(Opcode::init, 8, bytes({1, 2, 3}))));
    CHECK(raw.reply().status == static_cast<std::uint16_t>(Status::bad_request));

    // INIT naming another slice's id on this control channel.
    raw.send(encode(make_request(Opcode::init, 9, encode_config(slice(2, 0)))));
    CHECK(raw.reply().status == static_cast<std::uint16_t>(Status::bad_request));

    raw.send(encode(make_request(Opcode::init, 10, encode_config(slice(1, 0)))));
    r = raw.reply();
    CHECK(r.status == 0);
    CHECK(r.opcode == (kReplyBit | 1));

    raw.send(encode(make_request(Opcode::set_rx_freq, 11, bytes({1, 2, 3}))));
    CHECK(raw.reply().status == static_cast<std::uint16_t>(Status::bad_request));
    raw.send(encode(make_request(Opcode::find, 12)));
    CHECK(raw.reply().status == 0);
}

TEST_CASE("set calls before INIT fail") {
    Rig rig;
    rig.dispatcher->start();
    auto dev = rig.device(slice(1, 0));
    try {
        dev.set_tx_gain(10);
        FAIL("set on an unestablished handle succeeded");
    } catch (const DeviceError& e) {
        CHECK(e.code() == DeviceError::Errc::not_established);
    }
    CHECK_THROWS_AS(dev.recv(kSf), DeviceError);

    const auto reply = dev.call(Opcode::set_tx_gain, encode_i32(10), 2s);
    CHECK(reply.status == static_cast<std::uint16_t>(Status::not_established));
}

TEST_CASE("INIT with no backend times out") {
    auto store = vchan::RendezvousStore::temporary();
    FrontendOptions o;
    o.init_timeout = 150ms;
    RemoteDevice dev(store, slice(1, 0), o);
    const auto t = std::chrono::steady_clock::now();
    try {
        dev.find_device();
        FAIL("INIT without a backend succeeded");
    } catch (const DeviceError& e) {
        CHECK(e.code() == DeviceError::Errc::timeout);
    }
    CHECK(std::chrono::steady_clock::now() - t >= 150ms);

    // A control channel with nobody serving it also times out.
    Rig rig;
    rig.dispatcher->open_control({1});
    RemoteDevice idle(rig.store, slice(1, 0), o);
    try {
        idle.find_device();
        FAIL("INIT without a dispatcher loop succeeded");
    } catch (const DeviceError& e) {
        CHECK(e.code() == DeviceError::Errc::timeout);
    }
}

TEST_CASE("every request gets exactly one reply with its correlation id") {
    Rig rig;
    rig.dispatcher->open_control({1});
    rig.dispatcher->start();
    RawControl raw(rig.store, {1});

    std::mt19937 rng(11);
    std::uint32_t next = 1;
    std::set<std::uint32_t> answered;
    for (int round = 0; round < 60; ++round) {
        std::set<std::uint32_t> outstanding;
        const int batch = 1 + static_cast<int>(rng() % 6);
        for (int k = 0; k < batch; ++k) {
            ControlMessage m;
            m.opcode = static_cast<std::uint16_t>(rng() % 12);
            m.correlation_id = next++;
            switch (m.opcode) {
                case 1: m.payload = encode_config(slice(1, 0)); break;
                case 3: case 4: case 7: m.payload = encode_u64(rng() % 2 ? 7'680'000 : 600'000'000); break;
                case 5: case 6: m.payload = encode_i32(static_cast<std::int32_t>(rng() % 50) - 10); break;
                default: break;
            }
            raw.send(encode(m));
            outstanding.insert(m.correlation_id);
        }
        while (!outstanding.empty()) {
            const auto r = raw.reply();
            CHECK(r.is_reply());
            REQUIRE(outstanding.erase(r.correlation_id) == 1);
            REQUIRE(answered.insert(r.correlation_id).second);
        }
        CHECK(raw.ch.data_ready() == 0);
    }
    CHECK(answered.size() == next - 1);
}

TEST_CASE("a frontend that disconnects loses its session and can INIT again") {
    Rig rig;
    rig.dispatcher->start();
    rig.dispatcher->open_control({1});
    {
        // INIT, then drop the control channel without SHUTDOWN.
        RawControl raw(rig.store, {1});
        raw.send(encode(make_request(Opcode::init, 1, encode_config(slice(1, 0)))));
        CHECK(raw.reply().status == 0);
        CHECK(rig.backend->has_session({1}));
    }
    CHECK(eventually([&] { return !rig.backend->has_session({1}); }));

    RemoteDevice again(rig.store, slice(1, 0));
    REQUIRE(eventually([&] { return rig.store.is_published("0", pvback::ctrl_path({1})); }));
    CHECK(again.find_device() == "X310-sim");
    auto [b, t] = again.recv(kSf);
    CHECK(b.size() == kSf);
}

TEST_CASE("sends must continue the transmit stream") {
    Rig rig;
    rig.dispatcher->start();
    auto dev = rig.device(slice(1, 0));
    dev.find_device();
    IQBuffer block(kSf);
    CHECK_THROWS_AS(dev.send(block, {0}), DeviceError);
    auto [rx, t0] = dev.recv(kSf);
    const auto first = t0 + tx_offset(BandwidthProfile::from_prbs(25));
    try {
        dev.send(block, first + 1);
        FAIL("a gap in the transmit stream was accepted");
    } catch (const DeviceError& e) {
        CHECK(e.code() == DeviceError::Errc::out_of_sequence);
    }
    dev.send(block, first);
    dev.send(block, first + kSf);
    CHECK(eventually([&] { return rig.backend->metrics({1})->tx.iterations >= 1; }));
    CHECK(rig.backend->metrics({1})->tx.initial == first);
}

TEST_CASE("local binding tunes on find and checks sequence") {
    radio::RadioOptions o;
    o.channels = 1;
    o.fast_clock = true;
    o.epoch_tick = 100;
    auto radio = radio::VirtualRadio::open(o);
    LocalDevice dev(radio, slice(1, 0));
    CHECK_THROWS_AS(dev.recv(kSf), DeviceError);
    dev.find_device();
    CHECK(radio->tuning({0}).tx_freq_hz == 595'000'000);
    auto [a, t0] = dev.recv(kSf);
    CHECK(t0.ticks == 100);
    IQBuffer block(kSf);
    CHECK_THROWS_AS(dev.send(block, t0), DeviceError);
    dev.send(block, t0 + 30640);
    CHECK(radio->counters({0}).samples_sent == kSf);
    CHECK(dev.set_rx_gain(99) == 31);
    dev.shutdown();
    CHECK_FALSE(radio->tuning({0}).active);
}
