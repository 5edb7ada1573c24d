#include "pvran/vchan.hpp"

#include <fcntl.h>
#include <linux/futex.h>
#include <sys/mman.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <charconv>
#include <climits>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>

namespace pvran::vchan {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::path_collision: return "path_collision";
        case Errc::unknown_path: return "unknown_path";
        case Errc::invalid_capacity: return "invalid_capacity";
        case Errc::credential_mismatch: return "credential_mismatch";
        case Errc::allocation_failed: return "allocation_failed";
        case Errc::peer_closed: return "peer_closed";
        case Errc::end_of_stream: return "end_of_stream";
        case Errc::channel_closed: return "channel_closed";
        case Errc::concurrent_use: return "concurrent_use";
        case Errc::timeout: return "timeout";
    }
    return "unknown";
}

ChannelError::ChannelError(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

// ---------------------------------------------------------------------------
// Credentials and rendezvous store

std::string RingCredentials::to_text() const {
    std::ostringstream os;
    os << "ring_ref = " << ring_ref << '\n'
       << "doorbell_port = " << doorbell_port << '\n'
       << "read_ring_capacity = " << read_ring_capacity << '\n'
       << "write_ring_capacity = " << write_ring_capacity << '\n'
       << "backing = " << (backing == Backing::file ? "file" : "memory") << '\n';
    return os.str();
}

RingCredentials RingCredentials::from_text(std::string_view text) {
    RingCredentials c;
    int seen = 0;
    auto num = [](std::string_view v) {
        std::uint32_t out = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || p != v.data() + v.size()) {
            throw ChannelError(Errc::credential_mismatch, "bad number in credentials: " + std::string(v));
        }
        return out;
    };
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 3);
        if (key == "ring_ref") {
            c.ring_ref = value;
        } else if (key == "doorbell_port") {
            c.doorbell_port = num(value);
        } else if (key == "read_ring_capacity") {
            c.read_ring_capacity = num(value);
        } else if (key == "write_ring_capacity") {
            c.write_ring_capacity = num(value);
        } else if (key == "backing") {
            if (value != "file" && value != "memory") {
                throw ChannelError(Errc::credential_mismatch, "unknown backing " + value);
            }
            c.backing = value == "file" ? Backing::file : Backing::memory;
        } else {
            continue;
        }
        ++seen;
    }
    if (seen != 5) throw ChannelError(Errc::credential_mismatch, "incomplete credentials");
    return c;
}

namespace {

std::string escape_path(std::string_view path) {
    std::string out;
    for (char ch : path) {
        if (ch == '/') {
            out += "%2F";
        } else if (ch == '%') {
            out += "%25";
        } else {
            out += ch;
        }
    }
    return out;
}

fs::path default_temp_root() {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    const fs::path base = fs::exists("/dev/shm") ? fs::path("/dev/shm") : fs::temp_directory_path();
    return base / ("pvran-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" +
                   std::to_string(rd() & 0xffff));
}

}  // namespace

RendezvousStore::RendezvousStore(fs::path root, std::string local_server_id)
    : root_(std::move(root)), server_id_(std::move(local_server_id)) {
    fs::create_directories(root_ / server_id_ / "regions");
}

RendezvousStore RendezvousStore::temporary(std::string local_server_id) {
    RendezvousStore s(default_temp_root(), std::move(local_server_id));
    s.owns_root_ = true;
    return s;
}

RendezvousStore::RendezvousStore(RendezvousStore&& o) noexcept
    : root_(std::move(o.root_)), server_id_(std::move(o.server_id_)), owns_root_(o.owns_root_) {
    o.owns_root_ = false;
}

RendezvousStore& RendezvousStore::operator=(RendezvousStore&& o) noexcept {
    if (this != &o) {
        if (owns_root_) {
            std::error_code ec;
            fs::remove_all(root_, ec);
        }
        root_ = std::move(o.root_);
        server_id_ = std::move(o.server_id_);
        owns_root_ = o.owns_root_;
        o.owns_root_ = false;
    }
    return *this;
}

RendezvousStore::~RendezvousStore() {
    if (owns_root_) {
        std::error_code ec;
        fs::remove_all(root_, ec);
    }
}

fs::path RendezvousStore::entry_path(std::string_view server_id, std::string_view path) const {
    return root_ / std::string(server_id) / escape_path(path);
}

fs::path RendezvousStore::region_path(std::string_view path) const {
    return root_ / server_id_ / "regions" / (escape_path(path) + ".ring");
}

void RendezvousStore::publish(std::string_view path, const RingCredentials& creds) {
    const fs::path final_path = entry_path(server_id_, path);
    const fs::path tmp = final_path.string() + ".tmp" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw ChannelError(Errc::allocation_failed, "cannot write " + tmp.string());
        out << creds.to_text();
    }
    // link() is the atomic publish-once step.
    const int rc = ::link(tmp.c_str(), final_path.c_str());
    const int err = errno;
    ::unlink(tmp.c_str());
    if (rc != 0) {
        if (err == EEXIST) throw ChannelError(Errc::path_collision, std::string(path));
        throw ChannelError(Errc::allocation_failed, "publish " + std::string(path) + ": " + std::strerror(err));
    }
}

RingCredentials RendezvousStore::lookup(std::string_view server_id, std::string_view path) const {
    std::ifstream in(entry_path(server_id, path));
    if (!in) {
        throw ChannelError(Errc::unknown_path, std::string(server_id) + ":" + std::string(path));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return RingCredentials::from_text(ss.str());
}

bool RendezvousStore::is_published(std::string_view server_id, std::string_view path) const {
    return fs::exists(entry_path(server_id, path));
}

void RendezvousStore::unpublish(std::string_view path) {
    std::error_code ec;
    fs::remove(entry_path(server_id_, path), ec);
}

// ---------------------------------------------------------------------------
// Shared region

namespace {

constexpr std::uint32_t kReadHeadOff = 64;
constexpr std::uint32_t kReadTailOff = 128;
constexpr std::uint32_t kWriteHeadOff = 192;
constexpr std::uint32_t kWriteTailOff = 256;
constexpr std::uint32_t kControlOff = 320;
// Control block: one doorbell line per ring, then closed flags.
constexpr std::uint32_t kReadBellOff = kControlOff;
constexpr std::uint32_t kWriteBellOff = kControlOff + 64;
constexpr std::uint32_t kClosedOff = kControlOff + 128;
constexpr std::uint32_t kRingsOff = 4096;

struct BellWords {
    std::uint32_t data_seq;
    std::uint32_t data_waiters;
    std::uint32_t space_seq;
    std::uint32_t space_waiters;
};

void put_u32(std::byte* p, std::uint32_t v) { std::memcpy(p, &v, 4); }
void put_u16(std::byte* p, std::uint16_t v) { std::memcpy(p, &v, 2); }
std::uint32_t get_u32(const std::byte* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}
std::uint16_t get_u16(const std::byte* p) {
    std::uint16_t v;
    std::memcpy(&v, p, 2);
    return v;
}

void futex_wait(std::uint32_t* addr, std::uint32_t expected, std::chrono::nanoseconds timeout) {
    timespec ts{};
    ts.tv_sec = static_cast<time_t>(timeout.count() / 1'000'000'000);
    ts.tv_nsec = static_cast<long>(timeout.count() % 1'000'000'000);
    ::syscall(SYS_futex, addr, FUTEX_WAIT, expected, &ts, nullptr, 0);
}

void futex_wake_all(std::uint32_t* addr) { ::syscall(SYS_futex, addr, FUTEX_WAKE, INT_MAX, nullptr, nullptr, 0); }

bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, std::shared_ptr<Region>>& memory_registry() {
    static std::map<std::string, std::shared_ptr<Region>> r;
    return r;
}

}  // namespace

/// A mapped shared region. File-backed regions are unlinked by their creator.
class Region {
public:
    Region(std::byte* base, std::size_t size, std::string file) : base_(base), size_(size), file_(std::move(file)) {}
    ~Region() { ::munmap(base_, size_); }
    Region(const Region&) = delete;
    Region& operator=(const Region&) = delete;

    std::byte* base() const { return base_; }
    std::size_t size() const { return size_; }
    const std::string& file() const { return file_; }

    static std::shared_ptr<Region> create_memory(std::size_t size) {
        void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED | MAP_ANONYMOUS, -1, 0);
        if (p == MAP_FAILED) throw ChannelError(Errc::allocation_failed, "anonymous mmap");
        return std::make_shared<Region>(static_cast<std::byte*>(p), size, std::string{});
    }

    static std::shared_ptr<Region> create_file(const std::string& path, std::size_t size) {
        const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_EXCL, 0600);
        if (fd < 0) {
            throw ChannelError(errno == EEXIST ? Errc::path_collision : Errc::allocation_failed,
                               "create region " + path + ": " + std::strerror(errno));
        }
        if (::ftruncate(fd, static_cast<off_t>(size)) != 0) {
            const int err = errno;
            ::close(fd);
            ::unlink(path.c_str());
            throw ChannelError(Errc::allocation_failed, "ftruncate: " + std::string(std::strerror(err)));
        }
        void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
        ::close(fd);
        if (p == MAP_FAILED) {
            ::unlink(path.c_str());
            throw ChannelError(Errc::allocation_failed, "mmap " + path);
        }
        return std::make_shared<Region>(static_cast<std::byte*>(p), size, path);
    }

    static std::shared_ptr<Region> open_file(const std::string& path) {
        const int fd = ::open(path.c_str(), O_RDWR);
        if (fd < 0) throw ChannelError(Errc::credential_mismatch, "cannot open region " + path);
        const off_t size = ::lseek(fd, 0, SEEK_END);
        if (size < static_cast<off_t>(kRingsOff)) {
            ::close(fd);
            throw ChannelError(Errc::credential_mismatch, "region too small: " + path);
        }
        void* p = ::mmap(nullptr, static_cast<std::size_t>(size), PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
        ::close(fd);
        if (p == MAP_FAILED) throw ChannelError(Errc::credential_mismatch, "mmap " + path);
        return std::make_shared<Region>(static_cast<std::byte*>(p), static_cast<std::size_t>(size), std::string{});
    }

private:
    std::byte* base_;
    std::size_t size_;
    std::string file_;
};

RegionHeader parse_region_header(std::span<const std::byte> b) {
    if (b.size() < kHeaderSize) throw ChannelError(Errc::credential_mismatch, "short header");
    RegionHeader h;
    h.magic = get_u32(&b[0]);
    h.version = get_u16(&b[4]);
    h.role = get_u16(&b[6]);
    h.read_off = get_u32(&b[8]);
    h.read_cap = get_u32(&b[12]);
    h.write_off = get_u32(&b[16]);
    h.write_cap = get_u32(&b[20]);
    h.read_head_off = get_u32(&b[24]);
    h.read_tail_off = get_u32(&b[28]);
    h.write_head_off = get_u32(&b[32]);
    h.write_tail_off = get_u32(&b[36]);
    h.control_off = get_u32(&b[40]);
    return h;
}

// ---------------------------------------------------------------------------
// Stream channel

namespace {

/// Endpoint-local view of one ring inside the region.
struct RingView {
    std::byte* data = nullptr;
    std::uint32_t capacity = 0;
    std::uint32_t* head = nullptr;
    std::uint32_t* tail = nullptr;
    BellWords* bell = nullptr;

    std::uint32_t load_head() const { return std::atomic_ref(*head).load(std::memory_order_acquire); }
    std::uint32_t load_tail() const { return std::atomic_ref(*tail).load(std::memory_order_acquire); }
    std::size_t used() const { return load_head() - load_tail(); }
};

void post(std::uint32_t& seq, std::uint32_t& waiters) {
    std::atomic_ref(seq).fetch_add(1, std::memory_order_seq_cst);
    if (std::atomic_ref(waiters).load(std::memory_order_seq_cst) != 0) futex_wake_all(&seq);
}

/// Blocks on `seq` until `ready()` holds. Returns false when the deadline passes.
template <typename Pred>
bool wait_on(std::uint32_t& seq, std::uint32_t& waiters, Pred ready, std::optional<Clock::time_point> deadline) {
    constexpr auto kSlice = std::chrono::milliseconds(50);
    while (true) {
        const std::uint32_t seen = std::atomic_ref(seq).load(std::memory_order_seq_cst);
        if (ready()) return true;
        std::chrono::nanoseconds budget = kSlice;
        if (deadline) {
            const auto now = Clock::now();
            if (now >= *deadline) return false;
            budget = std::min<std::chrono::nanoseconds>(budget, *deadline - now);
        }
        std::atomic_ref(waiters).fetch_add(1, std::memory_order_seq_cst);
        if (!ready()) futex_wait(&seq, seen, budget);
        std::atomic_ref(waiters).fetch_sub(1, std::memory_order_seq_cst);
    }
}

class BusyGuard {
public:
    explicit BusyGuard(std::atomic<bool>& flag) : flag_(flag) {
        if (flag_.exchange(true, std::memory_order_acquire)) {
            throw ChannelError(Errc::concurrent_use, "ring direction already in use by another thread");
        }
    }
    ~BusyGuard() { flag_.store(false, std::memory_order_release); }
    BusyGuard(const BusyGuard&) = delete;
    BusyGuard& operator=(const BusyGuard&) = delete;

private:
    std::atomic<bool>& flag_;
};

}  // namespace

struct StreamChannel::Impl {
    Role role = Role::server;
    bool blocking = true;
    std::shared_ptr<Region> region;
    RingView in;   // this endpoint consumes
    RingView out;  // this endpoint produces
    std::uint32_t* my_closed = nullptr;
    std::uint32_t* peer_closed = nullptr;
    RingCredentials creds;
    RendezvousStore* store = nullptr;  // server only, for unpublish
    std::string path;
    std::atomic<bool> reading{false};
    std::atomic<bool> writing{false};
    std::atomic<std::size_t> high_water{0};
    std::atomic<bool> closed_local{false};

    bool self_closed() const { return std::atomic_ref(*my_closed).load(std::memory_order_acquire) != 0; }
    bool other_closed() const { return std::atomic_ref(*peer_closed).load(std::memory_order_acquire) != 0; }

    void bind(Role r, const RegionHeader& h) {
        std::byte* base = region->base();
        RingView server_read{base + h.read_off, h.read_cap, reinterpret_cast<std::uint32_t*>(base + h.read_head_off),
                             reinterpret_cast<std::uint32_t*>(base + h.read_tail_off),
                             reinterpret_cast<BellWords*>(base + kReadBellOff)};
        RingView server_write{base + h.write_off, h.write_cap,
                              reinterpret_cast<std::uint32_t*>(base + h.write_head_off),
                              reinterpret_cast<std::uint32_t*>(base + h.write_tail_off),
                              reinterpret_cast<BellWords*>(base + kWriteBellOff)};
        auto* flags = reinterpret_cast<std::uint32_t*>(base + kClosedOff);
        role = r;
        if (r == Role::server) {
            in = server_read;
            out = server_write;
            my_closed = &flags[0];
            peer_closed = &flags[1];
        } else {
            in = server_write;
            out = server_read;
            my_closed = &flags[1];
            peer_closed = &flags[0];
        }
    }

    void post_all() {
        post(in.bell->space_seq, in.bell->space_waiters);
        post(in.bell->data_seq, in.bell->data_waiters);
        post(out.bell->space_seq, out.bell->space_waiters);
        post(out.bell->data_seq, out.bell->data_waiters);
    }
};

StreamChannel::StreamChannel(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
StreamChannel::StreamChannel(StreamChannel&&) noexcept = default;
StreamChannel& StreamChannel::operator=(StreamChannel&& o) noexcept {
    if (this != &o) {
        if (impl_) close();
        impl_ = std::move(o.impl_);
    }
    return *this;
}

StreamChannel::~StreamChannel() {
    if (impl_) close();
}

StreamChannel StreamChannel::server_create(RendezvousStore& store, std::string_view path, std::size_t read_capacity,
                                           std::size_t write_capacity, bool blocking, Backing backing) {
    if (!is_pow2(read_capacity) || !is_pow2(write_capacity)) {
        throw ChannelError(Errc::invalid_capacity, "ring capacities must be powers of two");
    }
    if (read_capacity < kMinRingCapacity || write_capacity < kMinRingCapacity) {
        throw ChannelError(Errc::invalid_capacity, "ring capacity below two 100 PRB subframes");
    }
    if (read_capacity > (1u << 30) || write_capacity > (1u << 30)) {
        throw ChannelError(Errc::invalid_capacity, "ring capacity above 1 GiB");
    }
    if (store.is_published(store.local_server_id(), path)) {
        throw ChannelError(Errc::path_collision, std::string(path));
    }
    const std::size_t size = kRingsOff + read_capacity + write_capacity;

    auto impl = std::make_unique<Impl>();
    RingCredentials creds;
    creds.doorbell_port = kControlOff;
    creds.read_ring_capacity = static_cast<std::uint32_t>(read_capacity);
    creds.write_ring_capacity = static_cast<std::uint32_t>(write_capacity);
    creds.backing = backing;
    if (backing == Backing::file) {
        creds.ring_ref = store.region_path(path).string();
        impl->region = Region::create_file(creds.ring_ref, size);
    } else {
        static std::atomic<std::uint64_t> next_id{0};
        creds.ring_ref = "mem:" + std::to_string(::getpid()) + ":" + std::to_string(next_id++);
        impl->region = Region::create_memory(size);
    }
    // Fresh mmap pages are zero-filled, so counters and flags start at 0.
    std::byte* b = impl->region->base();
    put_u32(b + 0, kMagic);
    put_u16(b + 4, kVersion);
    put_u16(b + 6, static_cast<std::uint16_t>(Role::server));
    put_u32(b + 8, kRingsOff);
    put_u32(b + 12, static_cast<std::uint32_t>(read_capacity));
    put_u32(b + 16, static_cast<std::uint32_t>(kRingsOff + read_capacity));
    put_u32(b + 20, static_cast<std::uint32_t>(write_capacity));
    put_u32(b + 24, kReadHeadOff);
    put_u32(b + 28, kReadTailOff);
    put_u32(b + 32, kWriteHeadOff);
    put_u32(b + 36, kWriteTailOff);
    put_u32(b + 40, kControlOff);

    impl->bind(Role::server, parse_region_header({b, kHeaderSize}));
    impl->blocking = blocking;
    impl->creds = creds;
    impl->store = &store;
    impl->path = std::string(path);

    if (backing == Backing::memory) {
        std::lock_guard lock(registry_mutex());
        memory_registry()[creds.ring_ref] = impl->region;
    }
    try {
        store.publish(path, creds);
    } catch (...) {
        if (backing == Backing::file) ::unlink(creds.ring_ref.c_str());
        std::lock_guard lock(registry_mutex());
        memory_registry().erase(creds.ring_ref);
        throw;
    }
    return StreamChannel(std::move(impl));
}

StreamChannel StreamChannel::client_connect(const RendezvousStore& store, std::string_view server_id,
                                            std::string_view path, bool blocking) {
    const RingCredentials creds = store.lookup(server_id, path);
    auto impl = std::make_unique<Impl>();
    if (creds.backing == Backing::file) {
        impl->region = Region::open_file(creds.ring_ref);
    } else {
        std::lock_guard lock(registry_mutex());
        const auto it = memory_registry().find(creds.ring_ref);
        if (it == memory_registry().end()) {
            throw ChannelError(Errc::credential_mismatch, "memory region not in this process: " + creds.ring_ref);
        }
        impl->region = it->second;
    }
    const RegionHeader h = parse_region_header({impl->region->base(), kHeaderSize});
    if (h.magic != kMagic || h.version != kVersion || h.read_cap != creds.read_ring_capacity ||
        h.write_cap != creds.write_ring_capacity || h.control_off != creds.doorbell_port ||
        h.write_off + h.write_cap > impl->region->size()) {
        throw ChannelError(Errc::credential_mismatch, "region header does not match credentials for " +
                                                          std::string(path));
    }
    impl->bind(Role::client, h);
    impl->blocking = blocking;
    impl->creds = creds;
    impl->path = std::string(path);
    return StreamChannel(std::move(impl));
}

std::size_t StreamChannel::write(std::span<const std::byte> bytes) {
    Impl& s = *impl_;
    BusyGuard guard(s.writing);
    RingView& r = s.out;
    const std::uint32_t mask = r.capacity - 1;
    std::size_t done = 0;
    while (done < bytes.size()) {
        if (s.self_closed()) throw ChannelError(Errc::channel_closed, s.path);
        if (s.other_closed()) throw ChannelError(Errc::peer_closed, s.path);
        const std::uint32_t head = std::atomic_ref(*r.head).load(std::memory_order_relaxed);
        const std::size_t free = r.capacity - (head - r.load_tail());
        if (free == 0) {
            if (!s.blocking) break;
            wait_on(r.bell->space_seq, r.bell->space_waiters,
                    [&] { return r.used() < r.capacity || s.self_closed() || s.other_closed(); }, std::nullopt);
            continue;
        }
        const std::size_t n = std::min(free, bytes.size() - done);
        const std::size_t idx = head & mask;
        const std::size_t first = std::min(n, r.capacity - idx);
        std::memcpy(r.data + idx, bytes.data() + done, first);
        if (n > first) std::memcpy(r.data, bytes.data() + done + first, n - first);
        std::atomic_ref(*r.head).store(head + static_cast<std::uint32_t>(n), std::memory_order_release);
        post(r.bell->data_seq, r.bell->data_waiters);
        done += n;
        const std::size_t occupancy = r.capacity - free + n;
        std::size_t hw = s.high_water.load(std::memory_order_relaxed);
        while (occupancy > hw && !s.high_water.compare_exchange_weak(hw, occupancy, std::memory_order_relaxed)) {
        }
    }
    return done;
}

std::size_t StreamChannel::read(std::span<std::byte> out) {
    Impl& s = *impl_;
    BusyGuard guard(s.reading);
    RingView& r = s.in;
    const std::uint32_t mask = r.capacity - 1;
    std::size_t done = 0;
    while (done < out.size()) {
        if (s.self_closed()) throw ChannelError(Errc::channel_closed, s.path);
        const std::uint32_t tail = std::atomic_ref(*r.tail).load(std::memory_order_relaxed);
        const std::size_t avail = r.load_head() - tail;
        if (avail == 0) {
            // Peer's final head store happens before its closed flag, so an
            // empty ring after observing the flag is truly drained.
            if (s.other_closed() && r.load_head() == tail) {
                if (done > 0) return done;
                throw ChannelError(Errc::end_of_stream, s.path);
            }
            if (!s.blocking) break;
            wait_on(r.bell->data_seq, r.bell->data_waiters,
                    [&] { return r.used() > 0 || s.self_closed() || s.other_closed(); }, std::nullopt);
            continue;
        }
        const std::size_t n = std::min(avail, out.size() - done);
        const std::size_t idx = tail & mask;
        const std::size_t first = std::min(n, r.capacity - idx);
        std::memcpy(out.data() + done, r.data + idx, first);
        if (n > first) std::memcpy(out.data() + done + first, r.data, n - first);
        std::atomic_ref(*r.tail).store(tail + static_cast<std::uint32_t>(n), std::memory_order_release);
        post(r.bell->space_seq, r.bell->space_waiters);
        done += n;
    }
    return done;
}

bool StreamChannel::wait_readable(std::size_t n, Clock::time_point deadline) {
    Impl& s = *impl_;
    RingView& r = s.in;
    const bool ok = wait_on(
        r.bell->data_seq, r.bell->data_waiters,
        [&] { return r.used() >= n || s.self_closed() || s.other_closed(); }, deadline);
    if (!ok) return false;
    if (r.used() >= n) return true;
    if (s.self_closed()) throw ChannelError(Errc::channel_closed, s.path);
    throw ChannelError(Errc::end_of_stream, s.path);
}

std::size_t StreamChannel::data_ready() const { return impl_->in.used(); }

std::size_t StreamChannel::buffer_space() const { return impl_->out.capacity - impl_->out.used(); }

std::size_t StreamChannel::write_high_water() const { return impl_->high_water.load(std::memory_order_relaxed); }

void StreamChannel::close() {
    Impl& s = *impl_;
    std::atomic_ref(*s.my_closed).store(1, std::memory_order_seq_cst);
    s.post_all();
    if (s.closed_local.exchange(true)) return;
    if (s.role == Role::server) {
        if (s.store) s.store->unpublish(s.path);
        if (s.creds.backing == Backing::file) {
            ::unlink(s.creds.ring_ref.c_str());
        } else {
            std::lock_guard lock(registry_mutex());
            memory_registry().erase(s.creds.ring_ref);
        }
    }
}

bool StreamChannel::is_closed() const { return impl_->self_closed(); }
bool StreamChannel::peer_closed() const { return impl_->other_closed(); }
Role StreamChannel::role() const { return impl_->role; }
bool StreamChannel::blocking() const { return impl_->blocking; }
void StreamChannel::set_blocking(bool blocking) { impl_->blocking = blocking; }
std::size_t StreamChannel::read_capacity() const { return impl_->in.capacity; }
std::size_t StreamChannel::write_capacity() const { return impl_->out.capacity; }
const RingCredentials& StreamChannel::credentials() const { return impl_->creds; }

}  // namespace pvran::vchan
