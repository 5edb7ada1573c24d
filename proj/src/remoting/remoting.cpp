#include "pvran/remoting.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <type_traits>

namespace pvran {

std::string to_string(DeviceError::Errc code) {
    switch (code) {
        case DeviceError::Errc::timeout: return "timeout";
        case DeviceError::Errc::rejected: return "rejected";
        case DeviceError::Errc::not_established: return "not_established";
        case DeviceError::Errc::protocol_mismatch: return "protocol_mismatch";
        case DeviceError::Errc::end_of_stream: return "end_of_stream";
        case DeviceError::Errc::out_of_sequence: return "out_of_sequence";
        case DeviceError::Errc::codec: return "codec";
    }
    return "unknown";
}

}  // namespace pvran

namespace pvran::remoting {

namespace {

using Clock = std::chrono::steady_clock;

void put(std::vector<std::byte>& out, std::uint64_t v, int bytes) {
    for (int k = 0; k < bytes; ++k) out.push_back(std::byte((v >> (8 * k)) & 0xff));
}

std::uint64_t get(std::span<const std::byte> in, std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int k = 0; k < bytes; ++k) v |= std::uint64_t(in[at + k]) << (8 * k);
    return v;
}

std::vector<std::byte> text_payload(std::string_view s) {
    std::vector<std::byte> out(s.size());
    std::memcpy(out.data(), s.data(), s.size());
    return out;
}

std::string payload_text(std::span<const std::byte> p) {
    return std::string(reinterpret_cast<const char*>(p.data()), p.size());
}

Status status_for(pvback::SessionError::Errc code) {
    switch (code) {
        case pvback::SessionError::Errc::slice_exists: return Status::slice_exists;
        case pvback::SessionError::Errc::channel_in_use: return Status::channel_in_use;
        case pvback::SessionError::Errc::fdm_conflict: return Status::fdm_conflict;
        case pvback::SessionError::Errc::invalid_channel: return Status::out_of_range;
        case pvback::SessionError::Errc::unknown_slice: return Status::not_established;
        case pvback::SessionError::Errc::setup_failed: return Status::setup_failed;
    }
    return Status::setup_failed;
}

void write_fully(vchan::StreamChannel& ch, std::span<const std::byte> bytes) {
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto n = ch.write(bytes.subspan(done));
        done += n;
        if (n == 0) std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
}

bool gain_opcode(Opcode op) { return op == Opcode::set_rx_gain || op == Opcode::set_tx_gain; }

}  // namespace

std::string to_string(Status status) {
    switch (status) {
        case Status::ok: return "ok";
        case Status::bad_request: return "bad_request";
        case Status::unknown_opcode: return "unknown_opcode";
        case Status::not_established: return "not_established";
        case Status::fdm_conflict: return "fdm_conflict";
        case Status::channel_in_use: return "channel_in_use";
        case Status::slice_exists: return "slice_exists";
        case Status::out_of_range: return "out_of_range";
        case Status::setup_failed: return "setup_failed";
    }
    return "status_" + std::to_string(static_cast<int>(status));
}

std::string to_string(Opcode op) {
    switch (op) {
        case Opcode::init: return "INIT";
        case Opcode::find: return "FIND";
        case Opcode::set_rx_freq: return "SET_RX_FREQ";
        case Opcode::set_tx_freq: return "SET_TX_FREQ";
        case Opcode::set_rx_gain: return "SET_RX_GAIN";
        case Opcode::set_tx_gain: return "SET_TX_GAIN";
        case Opcode::set_rate: return "SET_RATE";
        case Opcode::shutdown: return "SHUTDOWN";
    }
    return "OPCODE_" + std::to_string(static_cast<int>(op));
}

bool valid_opcode(std::uint16_t opcode) {
    const std::uint16_t base = opcode & ~kReplyBit;
    return (opcode & ~(kReplyBit | 0x0f)) == 0 && base >= 1 && base <= 8;
}

ControlMessage make_request(Opcode op, std::uint32_t correlation_id, std::vector<std::byte> payload) {
    return {static_cast<std::uint16_t>(op), correlation_id, 0, std::move(payload)};
}

ControlMessage make_reply(const ControlMessage& request, Status status, std::vector<std::byte> payload) {
    return {static_cast<std::uint16_t>(request.opcode | kReplyBit), request.correlation_id,
            static_cast<std::uint16_t>(status), std::move(payload)};
}

std::vector<std::byte> encode(const ControlMessage& msg) {
    if (msg.payload.size() > kMaxPayload) {
        throw CodecError(CodecError::Errc::payload_too_large,
                         "payload of " + std::to_string(msg.payload.size()) + " bytes exceeds the frame limit");
    }
    std::vector<std::byte> out;
    out.reserve(kHeaderSize + msg.payload.size());
    put(out, msg.opcode, 2);
    put(out, msg.correlation_id, 4);
    put(out, msg.status, 2);
    put(out, msg.payload.size(), 4);
    out.insert(out.end(), msg.payload.begin(), msg.payload.end());
    return out;
}

FrameHeader peek_header(std::span<const std::byte> bytes) {
    if (bytes.size() < kHeaderSize) {
        throw CodecError(CodecError::Errc::truncated,
                         "frame of " + std::to_string(bytes.size()) + " bytes is shorter than the header");
    }
    FrameHeader h;
    h.opcode = static_cast<std::uint16_t>(get(bytes, 0, 2));
    h.correlation_id = static_cast<std::uint32_t>(get(bytes, 2, 4));
    h.status = static_cast<std::uint16_t>(get(bytes, 6, 2));
    h.payload_len = static_cast<std::uint32_t>(get(bytes, 8, 4));
    return h;
}

ControlMessage decode(std::span<const std::byte> frame) {
    const FrameHeader h = peek_header(frame);
    if (!valid_opcode(h.opcode)) {
        throw CodecError(CodecError::Errc::unknown_opcode, "unknown opcode " + std::to_string(h.opcode));
    }
    if (h.payload_len > kMaxPayload) {
        throw CodecError(CodecError::Errc::payload_too_large,
                         "declared payload of " + std::to_string(h.payload_len) + " bytes exceeds the frame limit");
    }
    const std::size_t want = kHeaderSize + h.payload_len;
    if (frame.size() < want) {
        throw CodecError(CodecError::Errc::truncated, "frame declares " + std::to_string(h.payload_len) +
                                                          " payload bytes but holds " +
                                                          std::to_string(frame.size() - kHeaderSize));
    }
    if (frame.size() > want) {
        throw CodecError(CodecError::Errc::length_mismatch,
                         std::to_string(frame.size() - want) + " bytes trail the declared payload");
    }
    ControlMessage m{h.opcode, h.correlation_id, h.status, {}};
    m.payload.assign(frame.begin() + kHeaderSize, frame.end());
    return m;
}

std::vector<std::byte> encode_u64(std::uint64_t v) {
    std::vector<std::byte> out;
    put(out, v, 8);
    return out;
}

std::vector<std::byte> encode_i32(std::int32_t v) {
    std::vector<std::byte> out;
    put(out, static_cast<std::uint32_t>(v), 4);
    return out;
}

std::uint64_t decode_u64(std::span<const std::byte> payload) {
    if (payload.size() != 8) throw CodecError(CodecError::Errc::bad_payload, "expected an 8-byte u64 payload");
    return get(payload, 0, 8);
}

std::int32_t decode_i32(std::span<const std::byte> payload) {
    if (payload.size() != 4) throw CodecError(CodecError::Errc::bad_payload, "expected a 4-byte i32 payload");
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(payload, 0, 4)));
}

// slice_id u32, prbs u16, dl u64, ul u64, rx_gain i32, tx_gain i32,
// radio_channel u32, has_override u8, tx_offset u64, name_len u16, name.
std::vector<std::byte> encode_config(const SliceConfig& config) {
    std::vector<std::byte> out;
    put(out, config.slice_id.value, 4);
    put(out, static_cast<std::uint16_t>(config.profile.prbs()), 2);
    put(out, config.dl_freq_hz, 8);
    put(out, config.ul_freq_hz, 8);
    put(out, static_cast<std::uint32_t>(config.rx_gain_db), 4);
    put(out, static_cast<std::uint32_t>(config.tx_gain_db), 4);
    put(out, config.radio_channel.index, 4);
    put(out, config.tx_offset_override ? 1 : 0, 1);
    put(out, config.tx_offset_override.value_or(0), 8);
    put(out, config.phy_profile_name.size(), 2);
    const auto name = text_payload(config.phy_profile_name);
    out.insert(out.end(), name.begin(), name.end());
    return out;
}

SliceConfig decode_config(std::span<const std::byte> payload) {
    constexpr std::size_t fixed = 4 + 2 + 8 + 8 + 4 + 4 + 4 + 1 + 8 + 2;
    if (payload.size() < fixed) throw CodecError(CodecError::Errc::bad_payload, "slice config payload truncated");
    const auto name_len = get(payload, fixed - 2, 2);
    if (payload.size() != fixed + name_len) {
        throw CodecError(CodecError::Errc::bad_payload, "slice config name length does not match payload");
    }
    SliceConfig c;
    c.slice_id = {static_cast<std::uint32_t>(get(payload, 0, 4))};
    try {
        c.profile = BandwidthProfile::from_prbs(static_cast<int>(get(payload, 4, 2)));
    } catch (const ProfileError& e) {
        throw CodecError(CodecError::Errc::bad_payload, e.what());
    }
    c.dl_freq_hz = get(payload, 6, 8);
    c.ul_freq_hz = get(payload, 14, 8);
    c.rx_gain_db = static_cast<std::int32_t>(static_cast<std::uint32_t>(get(payload, 22, 4)));
    c.tx_gain_db = static_cast<std::int32_t>(static_cast<std::uint32_t>(get(payload, 26, 4)));
    c.radio_channel = {static_cast<std::uint32_t>(get(payload, 30, 4))};
    const bool has_override = get(payload, 34, 1) != 0;
    const auto offset = get(payload, 35, 8);
    if (has_override) c.tx_offset_override = offset;
    c.phy_profile_name = payload_text(payload.subspan(fixed));
    return c;
}

const std::vector<StubEntry>& stub_table() {
    static const std::vector<StubEntry> table = {
        {"find_device", StubKind::forward, Opcode::init},
        {"established", StubKind::local_null, std::nullopt},
        {"config", StubKind::local_null, std::nullopt},
        {"set_rx_freq", StubKind::forward, Opcode::set_rx_freq},
        {"set_tx_freq", StubKind::forward, Opcode::set_tx_freq},
        {"set_rx_gain", StubKind::forward, Opcode::set_rx_gain},
        {"set_tx_gain", StubKind::forward, Opcode::set_tx_gain},
        {"set_rate", StubKind::forward, Opcode::set_rate},
        {"set_time_source", StubKind::local_null, std::nullopt},
        {"recv", StubKind::stream, std::nullopt},
        {"send", StubKind::stream, std::nullopt},
        {"shutdown", StubKind::forward, Opcode::shutdown},
    };
    return table;
}

// ---------------------------------------------------------------------------
// RemoteDevice

RemoteDevice::RemoteDevice(const vchan::RendezvousStore& store, SliceConfig config, FrontendOptions options)
    : store_(store), config_(std::move(config)), options_(std::move(options)) {}

RemoteDevice::~RemoteDevice() {
    try {
        shutdown();
    } catch (const std::exception&) {
    }
}

void RemoteDevice::require_established(const char* what) const {
    if (!established_) {
        throw DeviceError(DeviceError::Errc::not_established, std::string(what) + " before find_device succeeded");
    }
}

ControlMessage RemoteDevice::exchange(const ControlMessage& request, std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    const auto path = pvback::ctrl_path(config_.slice_id);
    while (!ctrl_) {
        try {
            if (store_.is_published(options_.server_id, path)) {
                ctrl_.emplace(vchan::StreamChannel::client_connect(store_, options_.server_id, path));
                break;
            }
        } catch (const vchan::ChannelError&) {
        }
        if (Clock::now() >= deadline) {
            throw DeviceError(DeviceError::Errc::timeout, "no backend serves " + path);
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }

    try {
        const auto frame = encode(request);
        ctrl_->write(frame);
        for (;;) {
            if (!ctrl_->wait_readable(kHeaderSize, deadline)) {
                throw DeviceError(DeviceError::Errc::timeout, to_string(request.base_opcode()) + " got no reply");
            }
            std::vector<std::byte> buf(kHeaderSize);
            ctrl_->read(buf);
            const auto h = peek_header(buf);
            if (h.payload_len > kMaxPayload) {
                throw DeviceError(DeviceError::Errc::protocol_mismatch, "reply declares an oversized payload");
            }
            buf.resize(kHeaderSize + h.payload_len);
            if (h.payload_len > 0) {
                if (!ctrl_->wait_readable(h.payload_len, deadline)) {
                    throw DeviceError(DeviceError::Errc::timeout, "reply payload did not arrive");
                }
                ctrl_->read(std::span<std::byte>(buf).subspan(kHeaderSize));
            }
            auto reply = decode(buf);
            // A reply to an earlier request that timed out; keep waiting for ours.
            if (reply.correlation_id < request.correlation_id) continue;
            if (reply.correlation_id != request.correlation_id || !reply.is_reply()) {
                throw DeviceError(DeviceError::Errc::protocol_mismatch,
                                  "reply correlation id " + std::to_string(reply.correlation_id) + " does not match " +
                                      std::to_string(request.correlation_id));
            }
            return reply;
        }
    } catch (const CodecError& e) {
        throw DeviceError(DeviceError::Errc::codec, e.what());
    } catch (const vchan::ChannelError& e) {
        ctrl_.reset();
        throw DeviceError(DeviceError::Errc::end_of_stream, e.what());
    }
}

ControlMessage RemoteDevice::call(Opcode op, std::vector<std::byte> payload, std::chrono::milliseconds timeout) {
    return exchange(make_request(op, next_correlation_++, std::move(payload)), timeout);
}

std::string RemoteDevice::find_device() {
    if (established_) {
        const auto reply = call(Opcode::find, {}, options_.set_timeout);
        if (reply.status != 0) {
            throw DeviceError(DeviceError::Errc::rejected, "FIND failed: " + to_string(Status(reply.status)),
                              reply.status);
        }
        return payload_text(reply.payload);
    }
    const auto reply = call(Opcode::init, encode_config(config_), options_.init_timeout);
    if (reply.status != 0) {
        throw DeviceError(DeviceError::Errc::rejected,
                          "INIT rejected: " + to_string(Status(reply.status)) + ": " + payload_text(reply.payload),
                          reply.status);
    }
    try {
        rx_.emplace(vchan::StreamChannel::client_connect(store_, options_.server_id, pvback::rx_path(config_.slice_id)));
        tx_.emplace(vchan::StreamChannel::client_connect(store_, options_.server_id, pvback::tx_path(config_.slice_id)));
    } catch (const vchan::ChannelError& e) {
        rx_.reset();
        tx_.reset();
        throw DeviceError(DeviceError::Errc::protocol_mismatch, std::string("data channels missing after INIT: ") +
                                                                     e.what());
    }
    established_ = true;
    rx_started_ = false;
    return payload_text(reply.payload);
}

namespace {

template <class T>
T checked_reply(const ControlMessage& reply, Opcode op) {
    if (reply.status != 0) {
        throw DeviceError(DeviceError::Errc::rejected, to_string(op) + " rejected: " + to_string(Status(reply.status)),
                          reply.status);
    }
    try {
        if constexpr (std::is_same_v<T, std::uint64_t>) {
            return decode_u64(reply.payload);
        } else {
            return decode_i32(reply.payload);
        }
    } catch (const CodecError& e) {
        throw DeviceError(DeviceError::Errc::codec, e.what());
    }
}

}  // namespace

std::uint64_t RemoteDevice::set_rx_freq(std::uint64_t hz) {
    require_established("set_rx_freq");
    const auto v = checked_reply<std::uint64_t>(call(Opcode::set_rx_freq, encode_u64(hz), options_.set_timeout),
                                                Opcode::set_rx_freq);
    config_.ul_freq_hz = v;
    return v;
}

std::uint64_t RemoteDevice::set_tx_freq(std::uint64_t hz) {
    require_established("set_tx_freq");
    const auto v = checked_reply<std::uint64_t>(call(Opcode::set_tx_freq, encode_u64(hz), options_.set_timeout),
                                                Opcode::set_tx_freq);
    config_.dl_freq_hz = v;
    return v;
}

std::int32_t RemoteDevice::set_rx_gain(std::int32_t db) {
    require_established("set_rx_gain");
    const auto v = checked_reply<std::int32_t>(call(Opcode::set_rx_gain, encode_i32(db), options_.set_timeout),
                                               Opcode::set_rx_gain);
    config_.rx_gain_db = v;
    return v;
}

std::int32_t RemoteDevice::set_tx_gain(std::int32_t db) {
    require_established("set_tx_gain");
    const auto v = checked_reply<std::int32_t>(call(Opcode::set_tx_gain, encode_i32(db), options_.set_timeout),
                                               Opcode::set_tx_gain);
    config_.tx_gain_db = v;
    return v;
}

std::uint64_t RemoteDevice::set_rate(std::uint64_t samples_per_second) {
    require_established("set_rate");
    return checked_reply<std::uint64_t>(call(Opcode::set_rate, encode_u64(samples_per_second), options_.set_timeout),
                                        Opcode::set_rate);
}

std::pair<IQBuffer, SampleTimestamp> RemoteDevice::recv(std::size_t n) {
    require_established("recv");
    try {
        if (!rx_started_) {
            std::array<std::byte, pvback::kTimestampHeaderSize> raw{};
            if (rx_->read(raw) < raw.size()) throw DeviceError(DeviceError::Errc::end_of_stream, "rx stream ended");
            const auto header = pvback::decode_header(raw);
            if (header.magic != pvback::kTimestampMagic) {
                throw DeviceError(DeviceError::Errc::protocol_mismatch, "rx stream does not start with a timestamp");
            }
            next_rx_ = header.timestamp;
            next_tx_ = next_rx_ + config_.effective_tx_offset();
            rx_started_ = true;
        }
        scratch_.resize(n * kBytesPerSample);
        if (rx_->read(scratch_) < scratch_.size()) {
            throw DeviceError(DeviceError::Errc::end_of_stream, "rx stream ended mid-block");
        }
    } catch (const vchan::ChannelError& e) {
        throw DeviceError(DeviceError::Errc::end_of_stream, e.what());
    }
    IQBuffer out(n);
    bytes_to_samples(scratch_, out);
    const SampleTimestamp at = next_rx_;
    next_rx_ = next_rx_ + n;
    if (record_ledger_) rx_ledger_.push_back(at);
    return {std::move(out), at};
}

void RemoteDevice::send(std::span<const IQSample> samples, SampleTimestamp at) {
    require_established("send");
    if (!rx_started_ || at != next_tx_) {
        throw DeviceError(DeviceError::Errc::out_of_sequence,
                          "send at tick " + std::to_string(at.ticks) + " does not continue the transmit stream");
    }
    scratch_.resize(samples.size() * kBytesPerSample);
    samples_to_bytes(samples, scratch_);
    try {
        tx_->write(scratch_);
    } catch (const vchan::ChannelError& e) {
        throw DeviceError(DeviceError::Errc::end_of_stream, e.what());
    }
    if (record_ledger_) tx_ledger_.push_back(at);
    next_tx_ = next_tx_ + samples.size();
}

void RemoteDevice::abandon() {
    established_ = false;
    shutdown();
}

void RemoteDevice::shutdown() {
    if (established_) {
        established_ = false;
        try {
            call(Opcode::shutdown, {}, options_.set_timeout);
        } catch (const DeviceError&) {
        }
    }
    if (rx_) rx_->close();
    if (tx_) tx_->close();
    if (ctrl_) ctrl_->close();
    rx_.reset();
    tx_.reset();
    ctrl_.reset();
}

// ---------------------------------------------------------------------------
// LocalDevice

LocalDevice::LocalDevice(std::shared_ptr<radio::VirtualRadio> radio, SliceConfig config)
    : radio_(std::move(radio)), config_(std::move(config)) {}

LocalDevice::~LocalDevice() {
    try {
        shutdown();
    } catch (const std::exception&) {
    }
}

void LocalDevice::require_established(const char* what) const {
    if (!established_) {
        throw DeviceError(DeviceError::Errc::not_established, std::string(what) + " before find_device succeeded");
    }
}

void LocalDevice::retune() { radio_->tune(config_.radio_channel, pvback::tuning_for(config_)); }

std::string LocalDevice::find_device() {
    if (!established_) {
        if (config_.radio_channel.index >= radio_->channel_count()) {
            throw DeviceError(DeviceError::Errc::rejected, "radio channel does not exist",
                              static_cast<std::uint16_t>(Status::out_of_range));
        }
        retune();
        established_ = true;
        rx_started_ = false;
    }
    return kDeviceType;
}

std::uint64_t LocalDevice::set_rx_freq(std::uint64_t hz) {
    require_established("set_rx_freq");
    if (hz == 0) throw DeviceError(DeviceError::Errc::rejected, "zero frequency", std::uint16_t(Status::out_of_range));
    config_.ul_freq_hz = hz;
    retune();
    return hz;
}

std::uint64_t LocalDevice::set_tx_freq(std::uint64_t hz) {
    require_established("set_tx_freq");
    if (hz == 0) throw DeviceError(DeviceError::Errc::rejected, "zero frequency", std::uint16_t(Status::out_of_range));
    config_.dl_freq_hz = hz;
    retune();
    return hz;
}

std::int32_t LocalDevice::set_rx_gain(std::int32_t db) {
    require_established("set_rx_gain");
    config_.rx_gain_db = std::clamp(db, kMinGainDb, kMaxGainDb);
    retune();
    return config_.rx_gain_db;
}

std::int32_t LocalDevice::set_tx_gain(std::int32_t db) {
    require_established("set_tx_gain");
    config_.tx_gain_db = std::clamp(db, kMinGainDb, kMaxGainDb);
    retune();
    return config_.tx_gain_db;
}

std::uint64_t LocalDevice::set_rate(std::uint64_t samples_per_second) {
    require_established("set_rate");
    if (samples_per_second != config_.profile.sample_rate()) {
        throw DeviceError(DeviceError::Errc::rejected, "rate differs from the slice profile",
                          std::uint16_t(Status::out_of_range));
    }
    return samples_per_second;
}

std::pair<IQBuffer, SampleTimestamp> LocalDevice::recv(std::size_t n) {
    require_established("recv");
    try {
        auto [block, meta] = radio_->recv(config_.radio_channel, n);
        if (!rx_started_) {
            rx_started_ = true;
            next_tx_ = meta.timestamp + config_.effective_tx_offset();
            radio_->begin_tx(config_.radio_channel, next_tx_);
        }
        next_rx_ = meta.timestamp + n;
        return {std::move(block), meta.timestamp};
    } catch (const radio::RadioError& e) {
        throw DeviceError(DeviceError::Errc::end_of_stream, e.what());
    }
}

void LocalDevice::send(std::span<const IQSample> samples, SampleTimestamp at) {
    require_established("send");
    if (!rx_started_ || at != next_tx_) {
        throw DeviceError(DeviceError::Errc::out_of_sequence,
                          "send at tick " + std::to_string(at.ticks) + " does not continue the transmit stream");
    }
    try {
        radio_->send(config_.radio_channel, samples, at);
    } catch (const radio::RadioError& e) {
        throw DeviceError(DeviceError::Errc::end_of_stream, e.what());
    }
    next_tx_ = next_tx_ + samples.size();
}

void LocalDevice::shutdown() {
    if (!established_) return;
    established_ = false;
    radio_->end_tx(config_.radio_channel);
    radio_->release(config_.radio_channel);
}

// ---------------------------------------------------------------------------
// Dispatcher

struct Dispatcher::Control {
    SliceId id;
    std::optional<vchan::StreamChannel> channel;
    std::vector<std::byte> pending;
};

Dispatcher::Dispatcher(pvback::Backend& backend) : backend_(backend) {}

Dispatcher::~Dispatcher() {
    stop();
    std::lock_guard lk(mu_);
    for (auto& [id, c] : controls_) {
        if (c->channel) c->channel->close();
    }
}

void Dispatcher::open_control(SliceId id) {
    auto c = std::make_unique<Control>();
    c->id = id;
    c->channel.emplace(vchan::StreamChannel::server_create(backend_.store(), pvback::ctrl_path(id),
                                                           vchan::kDefaultRingCapacity, vchan::kDefaultRingCapacity,
                                                           false, backend_.options().backing));
    std::lock_guard lk(mu_);
    if (controls_.count(id)) {
        c->channel->close();
        throw vchan::ChannelError(vchan::Errc::path_collision, pvback::ctrl_path(id));
    }
    controls_[id] = std::move(c);
}

void Dispatcher::close_control(SliceId id) {
    std::unique_ptr<Control> c;
    {
        std::lock_guard lk(mu_);
        auto it = controls_.find(id);
        if (it == controls_.end()) return;
        c = std::move(it->second);
        controls_.erase(it);
    }
    if (c->channel) c->channel->close();
    if (backend_.has_session(id)) backend_.stop_session(id);
}

bool Dispatcher::has_control(SliceId id) const {
    std::lock_guard lk(mu_);
    return controls_.count(id) != 0;
}

void Dispatcher::start() {
    if (running_.exchange(true)) return;
    thread_ = std::thread([this] { loop(); });
}

void Dispatcher::stop() {
    running_ = false;
    if (thread_.joinable()) thread_.join();
}

void Dispatcher::loop() {
    while (running_) {
        bool busy = false;
        {
            std::lock_guard lk(mu_);
            for (auto& [id, c] : controls_) busy = poll(*c) || busy;
        }
        if (!busy) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
}

void Dispatcher::reopen(Control& c) {
    if (c.channel) c.channel->close();
    c.channel.reset();
    c.pending.clear();
    c.channel.emplace(vchan::StreamChannel::server_create(backend_.store(), pvback::ctrl_path(c.id),
                                                          vchan::kDefaultRingCapacity, vchan::kDefaultRingCapacity,
                                                          false, backend_.options().backing));
}

bool Dispatcher::poll(Control& c) {
    auto& ch = *c.channel;
    bool busy = false;
    try {
        const auto ready = ch.data_ready();
        if (ready > 0) {
            const auto old = c.pending.size();
            c.pending.resize(old + ready);
            c.pending.resize(old + ch.read(std::span<std::byte>(c.pending).subspan(old)));
            busy = true;
        }
        while (c.pending.size() >= kHeaderSize) {
            const auto h = peek_header(c.pending);
            std::size_t frame_len = kHeaderSize + h.payload_len;
            if (h.payload_len > kMaxPayload) {
                // No way to find the next frame boundary: answer and drop the buffer.
                frame_len = c.pending.size();
            } else if (c.pending.size() < frame_len) {
                break;
            }
            const auto reply = dispatch_bytes(c.id, std::span<const std::byte>(c.pending).first(frame_len));
            c.pending.erase(c.pending.begin(), c.pending.begin() + static_cast<std::ptrdiff_t>(frame_len));
            write_fully(ch, encode(reply));
        }
        if (ch.peer_closed() && ch.data_ready() == 0) {
            // The frontend went away: its session goes with it.
            if (backend_.has_session(c.id)) backend_.stop_session(c.id);
            reopen(c);
            busy = true;
        }
    } catch (const vchan::ChannelError&) {
        if (backend_.has_session(c.id)) backend_.stop_session(c.id);
        reopen(c);
        busy = true;
    }
    return busy;
}

ControlMessage Dispatcher::dispatch_bytes(SliceId owner, std::span<const std::byte> frame) {
    FrameHeader h;
    try {
        h = peek_header(frame);
    } catch (const CodecError&) {
        ++served_;
        return {kReplyBit, 0, static_cast<std::uint16_t>(Status::bad_request), text_payload("truncated frame")};
    }
    try {
        return dispatch(owner, decode(frame));
    } catch (const CodecError& e) {
        ++served_;
        const Status s = e.code() == CodecError::Errc::unknown_opcode ? Status::unknown_opcode : Status::bad_request;
        return {static_cast<std::uint16_t>(h.opcode | kReplyBit), h.correlation_id, static_cast<std::uint16_t>(s),
                text_payload(e.what())};
    }
}

ControlMessage Dispatcher::dispatch(SliceId owner, const ControlMessage& request) {
    ++served_;
    if (!valid_opcode(request.opcode) || request.is_reply()) {
        return make_reply(request, Status::unknown_opcode, text_payload("not a request opcode"));
    }
    const Opcode op = request.base_opcode();
    try {
        switch (op) {
            case Opcode::init: {
                const SliceConfig config = decode_config(request.payload);
                if (config.slice_id != owner) {
                    return make_reply(request, Status::bad_request,
                                      text_payload("config is for slice " + std::to_string(config.slice_id.value)));
                }
                backend_.start_session(config);
                return make_reply(request, Status::ok, text_payload(kDeviceType));
            }
            case Opcode::find:
                if (!backend_.has_session(owner)) return make_reply(request, Status::not_established);
                return make_reply(request, Status::ok, text_payload(kDeviceType));
            case Opcode::shutdown:
                if (!backend_.has_session(owner)) return make_reply(request, Status::not_established);
                backend_.stop_session(owner);
                return make_reply(request, Status::ok);
            default: break;
        }

        auto current = backend_.config(owner);
        if (!current) return make_reply(request, Status::not_established);
        SliceConfig updated = *current;
        if (gain_opcode(op)) {
            const auto db = std::clamp(decode_i32(request.payload), kMinGainDb, kMaxGainDb);
            (op == Opcode::set_rx_gain ? updated.rx_gain_db : updated.tx_gain_db) = db;
            backend_.retune(updated);
            return make_reply(request, Status::ok, encode_i32(db));
        }
        const auto value = decode_u64(request.payload);
        if (op == Opcode::set_rate) {
            if (value != updated.profile.sample_rate()) return make_reply(request, Status::out_of_range);
            return make_reply(request, Status::ok, encode_u64(value));
        }
        if (value == 0) return make_reply(request, Status::out_of_range);
        (op == Opcode::set_rx_freq ? updated.ul_freq_hz : updated.dl_freq_hz) = value;
        backend_.retune(updated);
        return make_reply(request, Status::ok, encode_u64(value));
    } catch (const CodecError& e) {
        return make_reply(request, Status::bad_request, text_payload(e.what()));
    } catch (const pvback::SessionError& e) {
        return make_reply(request, status_for(e.code()), text_payload(e.what()));
    } catch (const std::exception& e) {
        return make_reply(request, Status::setup_failed, text_payload(e.what()));
    }
}

}  // namespace pvran::remoting
