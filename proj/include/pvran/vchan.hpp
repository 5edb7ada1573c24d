#pragma once

// Inter-domain stream channels: a rendezvous store publishing ring
// credentials, and bi-directional byte streams built from two
// single-producer/single-consumer rings in a shared region with futex
// doorbells.
//
// Shared region layout (little-endian, 64-byte header):
//
//   off  size  field
//     0   4    magic "PVCH"
//     4   2    version (1)
//     6   2    creator role (0 = server)
//     8   4    server read-ring offset      (client -> server bytes)
//    12   4    server read-ring capacity
//    16   4    server write-ring offset     (server -> client bytes)
//    20   4    server write-ring capacity
//    24   4    read-ring head counter offset
//    28   4    read-ring tail counter offset
//    32   4    write-ring head counter offset
//    36   4    write-ring tail counter offset
//    40   4    control block offset (doorbells, closed flags)
//    44  20    reserved, zero
//
// Counters are free-running u32 byte counts; a ring holds head - tail
// bytes and is full when that equals its capacity.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pvran::vchan {

inline constexpr std::size_t kHeaderSize = 64;
inline constexpr std::uint32_t kMagic = 0x48435650;  // "PVCH" little-endian
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kDefaultRingCapacity = 256 * 1024;
/// Two 100 PRB subframes.
inline constexpr std::size_t kMinRingCapacity = 2 * 122880;

enum class Errc {
    path_collision,
    unknown_path,
    invalid_capacity,
    credential_mismatch,
    allocation_failed,
    peer_closed,
    end_of_stream,
    channel_closed,
    concurrent_use,
    timeout,
};

std::string_view to_string(Errc code);

class ChannelError : public std::runtime_error {
public:
    ChannelError(Errc code, const std::string& what);
    Errc code() const { return code_; }

private:
    Errc code_;
};

enum class Role : std::uint16_t { server = 0, client = 1 };
enum class Backing { file, memory };

struct RingCredentials {
    std::string ring_ref;
    std::uint32_t doorbell_port = 0;
    /// Capacities from the server's point of view.
    std::uint32_t read_ring_capacity = 0;
    std::uint32_t write_ring_capacity = 0;
    Backing backing = Backing::file;

    std::string to_text() const;
    static RingCredentials from_text(std::string_view text);
    friend bool operator==(const RingCredentials&, const RingCredentials&) = default;
};

/// Directory of published credentials: `<root>/<server_id>/<escaped path>`,
/// one small text file each. Region files for file-backed channels live
/// next to them under `<root>/<server_id>/regions/`.
class RendezvousStore {
public:
    explicit RendezvousStore(std::filesystem::path root, std::string local_server_id = "0");

    /// A fresh store under /dev/shm (or the temp dir) that removes itself on destruction.
    static RendezvousStore temporary(std::string local_server_id = "0");

    RendezvousStore(RendezvousStore&&) noexcept;
    RendezvousStore& operator=(RendezvousStore&&) noexcept;
    RendezvousStore(const RendezvousStore&) = delete;
    RendezvousStore& operator=(const RendezvousStore&) = delete;
    ~RendezvousStore();

    const std::string& local_server_id() const { return server_id_; }
    const std::filesystem::path& root() const { return root_; }

    void publish(std::string_view path, const RingCredentials& creds);
    RingCredentials lookup(std::string_view server_id, std::string_view path) const;
    bool is_published(std::string_view server_id, std::string_view path) const;
    void unpublish(std::string_view path);
    std::filesystem::path region_path(std::string_view path) const;

private:
    std::filesystem::path entry_path(std::string_view server_id, std::string_view path) const;

    std::filesystem::path root_;
    std::string server_id_;
    bool owns_root_ = false;
};

class Region;

/// One endpoint of a bi-directional byte stream. Each direction is an SPSC
/// ring: at most one thread may write and one thread may read an endpoint
/// at a time; overlapping calls on the same direction throw concurrent_use.
/// close() may be called from any thread and wakes blocked peers.
class StreamChannel {
public:
    static StreamChannel server_create(RendezvousStore& store, std::string_view path, std::size_t read_capacity,
                                       std::size_t write_capacity, bool blocking,
                                       Backing backing = Backing::file);
    static StreamChannel client_connect(const RendezvousStore& store, std::string_view server_id,
                                        std::string_view path, bool blocking = true);

    StreamChannel(StreamChannel&&) noexcept;
    StreamChannel& operator=(StreamChannel&&) noexcept;
    StreamChannel(const StreamChannel&) = delete;
    StreamChannel& operator=(const StreamChannel&) = delete;
    ~StreamChannel();

    /// Blocking: enqueues every byte, waiting for the consumer as needed.
    /// Non-blocking: enqueues what fits and returns that count (maybe 0).
    std::size_t write(std::span<const std::byte> bytes);

    /// Blocking: fills `out` completely unless the peer closes first, in
    /// which case the drained remainder is returned (short count).
    /// Non-blocking: returns min(out.size(), data_ready()).
    /// Throws end_of_stream when the peer has closed and nothing is left.
    std::size_t read(std::span<std::byte> out);

    /// Waits until at least `n` bytes are readable. Returns false on timeout.
    bool wait_readable(std::size_t n, std::chrono::steady_clock::time_point deadline);

    std::size_t data_ready() const;
    std::size_t buffer_space() const;
    std::size_t write_high_water() const;

    /// Marks this endpoint closed and posts every doorbell. Idempotent.
    void close();
    bool is_closed() const;
    bool peer_closed() const;

    Role role() const;
    bool blocking() const;
    void set_blocking(bool blocking);
    std::size_t read_capacity() const;
    std::size_t write_capacity() const;
    const RingCredentials& credentials() const;

private:
    struct Impl;
    explicit StreamChannel(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

/// Parsed view of a region header, for tooling and tests.
struct RegionHeader {
    std::uint32_t magic = 0;
    std::uint16_t version = 0;
    std::uint16_t role = 0;
    std::uint32_t read_off = 0, read_cap = 0, write_off = 0, write_cap = 0;
    std::uint32_t read_head_off = 0, read_tail_off = 0, write_head_off = 0, write_tail_off = 0;
    std::uint32_t control_off = 0;
};

RegionHeader parse_region_header(std::span<const std::byte> first_64_bytes);

}  // namespace pvran::vchan
