#include "pvran/pubsub.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

namespace pvran::pubsub {

namespace {

constexpr std::size_t kFrameHeader = 9;

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

bool write_all(int fd, const std::byte* p, std::size_t n) {
    while (n) {
        const ssize_t put = ::send(fd, p, n, MSG_NOSIGNAL);
        if (put < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        p += put;
        n -= static_cast<std::size_t>(put);
    }
    return true;
}

bool read_all(int fd, std::byte* p, std::size_t n) {
    while (n) {
        const ssize_t got = ::recv(fd, p, n, 0);
        if (got == 0) return false;
        if (got < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        p += got;
        n -= static_cast<std::size_t>(got);
    }
    return true;
}

void put_header(std::byte* h, std::uint8_t flags, std::uint64_t len) {
    h[0] = std::byte(flags);
    for (int k = 0; k < 8; ++k) h[1 + k] = std::byte(len >> (8 * (7 - k)));
}

std::uint64_t get_len(const std::byte* h) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v = (v << 8) | std::to_integer<std::uint64_t>(h[1 + k]);
    return v;
}

void no_delay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

struct Publisher::Peer {
    int fd = -1;
    std::vector<std::string> prefixes;
    std::vector<std::byte> pending;  // partial inbound frame
};

Publisher::Publisher(std::uint16_t port) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw PubSubError(sys_error("socket"));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(port);
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) < 0 || ::listen(listen_fd_, 8) < 0) {
        const auto msg = sys_error("bind");
        ::close(listen_fd_);
        throw PubSubError(msg);
    }
    socklen_t len = sizeof a;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&a), &len);
    port_ = ntohs(a.sin_port);
    wake_fd_ = ::eventfd(0, EFD_NONBLOCK);
    if (wake_fd_ < 0) {
        ::close(listen_fd_);
        throw PubSubError(sys_error("eventfd"));
    }
    io_ = std::thread([this] { io_loop(); });
}

Publisher::~Publisher() {
    {
        std::lock_guard lk(mu_);
        stopping_ = true;
    }
    const std::uint64_t one = 1;
    [[maybe_unused]] auto r = ::write(wake_fd_, &one, sizeof one);
    io_.join();
    ::close(wake_fd_);
    ::close(listen_fd_);
}

void Publisher::send(std::span<const std::byte> message) {
    {
        std::lock_guard lk(mu_);
        mailbox_.emplace_back(message.begin(), message.end());
    }
    const std::uint64_t one = 1;
    [[maybe_unused]] auto r = ::write(wake_fd_, &one, sizeof one);
}

bool Publisher::wait_subscribers(std::size_t n, std::chrono::milliseconds timeout) {
    std::unique_lock lk(mu_);
    return cv_.wait_for(lk, timeout, [&] { return subscribed_ >= n; });
}

void Publisher::io_loop() {
    std::vector<Peer> peers;
    std::vector<pollfd> fds;
    for (;;) {
        fds.clear();
        fds.push_back({wake_fd_, POLLIN, 0});
        fds.push_back({listen_fd_, POLLIN, 0});
        for (const auto& p : peers) fds.push_back({p.fd, POLLIN, 0});
        if (::poll(fds.data(), fds.size(), -1) < 0 && errno != EINTR) break;

        if (fds[1].revents & POLLIN) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd >= 0) {
                no_delay(fd);
                peers.push_back({fd, {}, {}});
            }
        }
        // Subscription frames from peers.
        for (std::size_t k = 0; k < peers.size(); ++k) {
            if (!(fds[2 + k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
            auto& p = peers[k];
            std::byte buf[512];
            const ssize_t got = ::recv(p.fd, buf, sizeof buf, 0);
            if (got <= 0) {
                ::close(p.fd);
                p.fd = -1;
                continue;
            }
            p.pending.insert(p.pending.end(), buf, buf + got);
            while (p.pending.size() >= kFrameHeader) {
                const auto len = get_len(p.pending.data());
                if (p.pending.size() < kFrameHeader + len) break;
                if (std::to_integer<std::uint8_t>(p.pending[0]) == kFlagSubscribe) {
                    std::string prefix(len, '\0');
                    std::memcpy(prefix.data(), p.pending.data() + kFrameHeader, len);
                    p.prefixes.push_back(std::move(prefix));
                    {
                        std::lock_guard lk(mu_);
                        ++subscribed_;
                    }
                    cv_.notify_all();
                }
                p.pending.erase(p.pending.begin(), p.pending.begin() + static_cast<std::ptrdiff_t>(kFrameHeader + len));
            }
        }
        std::erase_if(peers, [](const Peer& p) { return p.fd < 0; });

        std::deque<std::vector<std::byte>> out;
        bool stop = false;
        if (fds[0].revents & POLLIN) {
            std::uint64_t v;
            [[maybe_unused]] auto r = ::read(wake_fd_, &v, sizeof v);
            std::lock_guard lk(mu_);
            out.swap(mailbox_);
            stop = stopping_;
        }
        for (const auto& m : out) {
            std::byte head[kFrameHeader];
            put_header(head, kFlagMessage, m.size());
            for (auto& p : peers) {
                const bool match = std::any_of(p.prefixes.begin(), p.prefixes.end(), [&](const std::string& pre) {
                    return pre.size() <= m.size() && std::memcmp(pre.data(), m.data(), pre.size()) == 0;
                });
                if (!match) continue;
                if (!write_all(p.fd, head, sizeof head) || !write_all(p.fd, m.data(), m.size())) {
                    ::close(p.fd);
                    p.fd = -1;
                }
            }
            std::erase_if(peers, [](const Peer& p) { return p.fd < 0; });
        }
        if (stop) break;
    }
    for (auto& p : peers) ::close(p.fd);
}

// ---------------------------------------------------------------------------

Subscriber::Subscriber(std::uint16_t port, std::string prefix) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw PubSubError(sys_error("socket"));
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(port);
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) < 0) {
        const auto msg = sys_error("connect");
        ::close(fd_);
        throw PubSubError(msg);
    }
    no_delay(fd_);
    std::vector<std::byte> sub(kFrameHeader + prefix.size());
    put_header(sub.data(), kFlagSubscribe, prefix.size());
    std::memcpy(sub.data() + kFrameHeader, prefix.data(), prefix.size());
    if (!write_all(fd_, sub.data(), sub.size())) {
        ::close(fd_);
        throw PubSubError(sys_error("subscribe"));
    }
    io_ = std::thread([this] { io_loop(); });
}

Subscriber::~Subscriber() {
    ::shutdown(fd_, SHUT_RDWR);
    io_.join();
    ::close(fd_);
}

void Subscriber::io_loop() {
    std::byte head[kFrameHeader];
    while (read_all(fd_, head, sizeof head)) {
        std::vector<std::byte> body(get_len(head));
        if (!read_all(fd_, body.data(), body.size())) break;
        {
            std::lock_guard lk(mu_);
            inbox_.push_back(std::move(body));
        }
        cv_.notify_one();
    }
    {
        std::lock_guard lk(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

std::vector<std::byte> Subscriber::recv() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !inbox_.empty() || closed_; });
    if (inbox_.empty()) throw PubSubError("publisher closed the connection");
    auto m = std::move(inbox_.front());
    inbox_.pop_front();
    return m;
}

}  // namespace pvran::pubsub
