#pragma once

// API remoting: control-message codec, the frontend stubs that forward
// device-API calls to the backend, a direct local binding of the same API,
// and the backend dispatcher serving every slice's control channel.

#include "pvran/device_api.hpp"
#include "pvran/pvback.hpp"
#include "pvran/radiodev.hpp"
#include "pvran/vchan.hpp"

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace pvran::remoting {

enum class Opcode : std::uint16_t {
    init = 1,
    find = 2,
    set_rx_freq = 3,
    set_tx_freq = 4,
    set_rx_gain = 5,
    set_tx_gain = 6,
    set_rate = 7,
    shutdown = 8,
};

inline constexpr std::uint16_t kReplyBit = 128;
inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::size_t kMaxPayload = 64 * 1024;
inline constexpr const char* kDeviceType = "X310-sim";

enum class Status : std::uint16_t {
    ok = 0,
    bad_request = 1,
    unknown_opcode = 2,
    not_established = 3,
    fdm_conflict = 4,
    channel_in_use = 5,
    slice_exists = 6,
    out_of_range = 7,
    setup_failed = 8,
};

std::string to_string(Status status);
std::string to_string(Opcode op);

/// Wire frame: opcode u16, correlation_id u32, status u16, payload_len u32
/// (all little-endian), then payload_len bytes.
struct ControlMessage {
    std::uint16_t opcode = 0;
    std::uint32_t correlation_id = 0;
    std::uint16_t status = 0;
    std::vector<std::byte> payload;

    bool is_reply() const { return (opcode & kReplyBit) != 0; }
    Opcode base_opcode() const { return static_cast<Opcode>(opcode & ~kReplyBit); }
    friend bool operator==(const ControlMessage&, const ControlMessage&) = default;
};

class CodecError : public std::runtime_error {
public:
    enum class Errc { truncated, unknown_opcode, length_mismatch, payload_too_large, bad_payload };
    CodecError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

bool valid_opcode(std::uint16_t opcode);
ControlMessage make_request(Opcode op, std::uint32_t correlation_id, std::vector<std::byte> payload = {});
ControlMessage make_reply(const ControlMessage& request, Status status, std::vector<std::byte> payload = {});

std::vector<std::byte> encode(const ControlMessage& msg);
/// Decodes exactly one frame; the buffer must hold nothing else.
ControlMessage decode(std::span<const std::byte> frame);

struct FrameHeader {
    std::uint16_t opcode = 0;
    std::uint32_t correlation_id = 0;
    std::uint16_t status = 0;
    std::uint32_t payload_len = 0;
};
/// Parses the fixed header only; validates nothing but the length.
FrameHeader peek_header(std::span<const std::byte> bytes);

std::vector<std::byte> encode_u64(std::uint64_t v);
std::vector<std::byte> encode_i32(std::int32_t v);
std::uint64_t decode_u64(std::span<const std::byte> payload);
std::int32_t decode_i32(std::span<const std::byte> payload);
std::vector<std::byte> encode_config(const SliceConfig& config);
SliceConfig decode_config(std::span<const std::byte> payload);

enum class StubKind { forward, stream, local_null };

struct StubEntry {
    std::string function;
    StubKind kind;
    std::optional<Opcode> opcode;
};

/// How the frontend handles each device-API function.
const std::vector<StubEntry>& stub_table();

struct FrontendOptions {
    std::string server_id = "0";
    std::chrono::milliseconds init_timeout{5000};
    std::chrono::milliseconds set_timeout{1000};
};

/// Frontend stubs: control calls become control messages, samples move over
/// the slice's rx/tx data channels. The rx timestamp arrives once, in a
/// header before the first samples; every later tick is computed locally.
class RemoteDevice final : public DeviceApi {
public:
    RemoteDevice(const vchan::RendezvousStore& store, SliceConfig config, FrontendOptions options = {});
    ~RemoteDevice() override;

    std::string find_device() override;
    bool established() const override { return established_; }
    const SliceConfig& config() const override { return config_; }

    std::uint64_t set_rx_freq(std::uint64_t hz) override;
    std::uint64_t set_tx_freq(std::uint64_t hz) override;
    std::int32_t set_rx_gain(std::int32_t db) override;
    std::int32_t set_tx_gain(std::int32_t db) override;
    std::uint64_t set_rate(std::uint64_t samples_per_second) override;
    void set_time_source(const std::string&) override {}

    std::pair<IQBuffer, SampleTimestamp> recv(std::size_t n) override;
    void send(std::span<const IQSample> samples, SampleTimestamp at) override;
    void shutdown() override;
    /// Drops the channels without SHUTDOWN, the way a crashed frontend would.
    void abandon();

    /// Timestamps this frontend computed for every recv / send, in order.
    const std::vector<SampleTimestamp>& rx_ledger() const { return rx_ledger_; }
    const std::vector<SampleTimestamp>& tx_ledger() const { return tx_ledger_; }
    void set_record_ledger(bool on) { record_ledger_ = on; }

    /// Sends an arbitrary request and waits for its reply (used by tests).
    ControlMessage call(Opcode op, std::vector<std::byte> payload, std::chrono::milliseconds timeout);

private:
    ControlMessage exchange(const ControlMessage& request, std::chrono::milliseconds timeout);
    void require_established(const char* what) const;

    const vchan::RendezvousStore& store_;
    SliceConfig config_;
    FrontendOptions options_;
    std::optional<vchan::StreamChannel> ctrl_;
    std::optional<vchan::StreamChannel> rx_;
    std::optional<vchan::StreamChannel> tx_;
    bool established_ = false;
    std::uint32_t next_correlation_ = 1;

    bool rx_started_ = false;
    SampleTimestamp next_rx_;
    SampleTimestamp next_tx_;
    std::vector<std::byte> scratch_;
    bool record_ledger_ = false;
    std::vector<SampleTimestamp> rx_ledger_;
    std::vector<SampleTimestamp> tx_ledger_;
};

/// Direct in-process binding of the device API onto a radio channel.
class LocalDevice final : public DeviceApi {
public:
    LocalDevice(std::shared_ptr<radio::VirtualRadio> radio, SliceConfig config);
    ~LocalDevice() override;

    std::string find_device() override;
    bool established() const override { return established_; }
    const SliceConfig& config() const override { return config_; }

    std::uint64_t set_rx_freq(std::uint64_t hz) override;
    std::uint64_t set_tx_freq(std::uint64_t hz) override;
    std::int32_t set_rx_gain(std::int32_t db) override;
    std::int32_t set_tx_gain(std::int32_t db) override;
    std::uint64_t set_rate(std::uint64_t samples_per_second) override;
    void set_time_source(const std::string&) override {}

    std::pair<IQBuffer, SampleTimestamp> recv(std::size_t n) override;
    void send(std::span<const IQSample> samples, SampleTimestamp at) override;
    void shutdown() override;

private:
    void require_established(const char* what) const;
    void retune();

    std::shared_ptr<radio::VirtualRadio> radio_;
    SliceConfig config_;
    bool established_ = false;
    bool rx_started_ = false;
    SampleTimestamp next_rx_;
    SampleTimestamp next_tx_;
};

/// Gains the backend accepts; requests outside are clamped.
inline constexpr std::int32_t kMinGainDb = 0;
inline constexpr std::int32_t kMaxGainDb = 31;

/// Serves every slice's control channel from one loop and hands session
/// lifecycle to the backend.
class Dispatcher {
public:
    explicit Dispatcher(pvback::Backend& backend);
    ~Dispatcher();
    Dispatcher(const Dispatcher&) = delete;
    Dispatcher& operator=(const Dispatcher&) = delete;

    /// Publishes "pv/<id>/ctrl" so a frontend for that slice can connect.
    void open_control(SliceId id);
    /// Unpublishes the control channel and stops the slice's session.
    void close_control(SliceId id);
    bool has_control(SliceId id) const;

    void start();
    void stop();

    /// Handles one request on behalf of `owner`'s control channel.
    ControlMessage dispatch(SliceId owner, const ControlMessage& request);
    /// Handles raw frame bytes, replying even when they do not decode.
    ControlMessage dispatch_bytes(SliceId owner, std::span<const std::byte> frame);

    std::uint64_t requests_served() const { return served_.load(); }

private:
    struct Control;
    void loop();
    bool poll(Control& c);
    void reopen(Control& c);

    pvback::Backend& backend_;
    mutable std::mutex mu_;
    std::map<SliceId, std::unique_ptr<Control>> controls_;
    std::atomic<bool> running_{false};
    std::thread thread_;
    std::atomic<std::uint64_t> served_{0};
};

}  // namespace pvran::remoting
