#pragma once

// Network front doors of the orchestrator: length-prefixed JSON request/reply
// over TCP and an HTTP/JSON gateway with a server-sent metrics stream.

#include "pvran/orchestrator.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace pvran::orchestrator {

inline constexpr std::uint16_t kDefaultReqRepPort = 5555;
inline constexpr std::uint16_t kDefaultHttpPort = 8080;
/// Largest request body the TCP server accepts.
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 20;

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Port from an environment variable, or `fallback` when unset. Throws NetError if malformed.
std::uint16_t port_from_env(const char* name, std::uint16_t fallback);

/// 4-byte big-endian length + UTF-8 JSON body.
std::string encode_frame(const std::string& body);

class ReqRepServer {
public:
    /// Binds immediately (port 0 picks a free one). Throws NetError on bind failure.
    ReqRepServer(Orchestrator& core, const std::string& bind_addr, std::uint16_t port);
    ~ReqRepServer();
    ReqRepServer(const ReqRepServer&) = delete;
    ReqRepServer& operator=(const ReqRepServer&) = delete;

    std::uint16_t port() const { return port_; }
    void stop();
    std::uint64_t requests_served() const { return served_; }

private:
    void accept_loop();
    void serve(int fd);

    Orchestrator& core_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{true};
    std::atomic<std::uint64_t> served_{0};
    std::thread acceptor_;
    std::mutex mu_;
    std::list<std::thread> workers_;
    std::list<int> open_fds_;
};

class ReqRepClient {
public:
    ReqRepClient(const std::string& host, std::uint16_t port,
                 std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));
    ~ReqRepClient();
    ReqRepClient(const ReqRepClient&) = delete;
    ReqRepClient& operator=(const ReqRepClient&) = delete;

    json request(const json& message);
    /// Sends raw bytes as one frame body; used to probe malformed input.
    json request_text(const std::string& body);
    json call(Verb verb, const json& body = json::object());

private:
    int fd_ = -1;
};

class HttpGateway {
public:
    HttpGateway(Orchestrator& core, const std::string& bind_addr, std::uint16_t port,
                std::chrono::milliseconds event_period = std::chrono::milliseconds(500));
    ~HttpGateway();
    HttpGateway(const HttpGateway&) = delete;
    HttpGateway& operator=(const HttpGateway&) = delete;

    std::uint16_t port() const { return port_; }
    void stop();

private:
    Orchestrator& core_;
    std::unique_ptr<httplib::Server> server_;
    std::uint16_t port_ = 0;
    std::chrono::milliseconds event_period_;
    std::atomic<bool> running_{true};
    std::thread thread_;
};

/// HTTP status for an error code (400/404/409/500).
int http_status(OrchestrationError::Errc code);

}  // namespace pvran::orchestrator
