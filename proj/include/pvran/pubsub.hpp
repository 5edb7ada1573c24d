#pragma once

// Local publish-subscribe over TCP loopback, built the way the common
// message-queue libraries do it: the application thread hands each message
// to a background I/O thread through a mailbox, the I/O thread owns the
// sockets, and the subscriber's I/O thread queues inbound messages for the
// application thread. Frames are flags u8 + length u64 BE + body.

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pvran::pubsub {

class PubSubError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kFlagMessage = 0x00;
inline constexpr std::uint8_t kFlagSubscribe = 0x01;

class Publisher {
public:
    /// Binds 127.0.0.1:`port` (0 picks one).
    explicit Publisher(std::uint16_t port = 0);
    ~Publisher();
    Publisher(const Publisher&) = delete;
    Publisher& operator=(const Publisher&) = delete;

    std::uint16_t port() const { return port_; }
    /// Copies the message into the mailbox; delivery is asynchronous.
    /// Messages published before a subscription arrives are not delivered.
    void send(std::span<const std::byte> message);
    /// Waits until `n` peers have subscribed. False on timeout.
    bool wait_subscribers(std::size_t n, std::chrono::milliseconds timeout);

private:
    struct Peer;
    void io_loop();

    int listen_fd_ = -1;
    int wake_fd_ = -1;
    std::uint16_t port_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::vector<std::byte>> mailbox_;
    std::size_t subscribed_ = 0;
    bool stopping_ = false;
    std::thread io_;
};

class Subscriber {
public:
    /// Connects and subscribes to every message whose body starts with `prefix`.
    Subscriber(std::uint16_t port, std::string prefix = {});
    ~Subscriber();
    Subscriber(const Subscriber&) = delete;
    Subscriber& operator=(const Subscriber&) = delete;

    /// Blocks for the next message. Throws PubSubError once the publisher is gone.
    std::vector<std::byte> recv();

private:
    void io_loop();

    int fd_ = -1;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::vector<std::byte>> inbox_;
    bool closed_ = false;
    std::thread io_;
};

}  // namespace pvran::pubsub
