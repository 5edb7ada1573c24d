#include "pvran/orchestrator_net.hpp"

#include "httplib.h"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

namespace pvran::orchestrator {

namespace {

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

bool read_exact(int fd, char* out, std::size_t n) {
    while (n) {
        const ssize_t got = ::recv(fd, out, n, 0);
        if (got == 0) return false;
        if (got < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        out += got;
        n -= static_cast<std::size_t>(got);
    }
    return true;
}

bool write_all(int fd, const std::string& data) {
    const char* p = data.data();
    std::size_t n = data.size();
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

std::uint32_t read_be32(const char* p) {
    return (std::uint32_t(std::uint8_t(p[0])) << 24) | (std::uint32_t(std::uint8_t(p[1])) << 16) |
           (std::uint32_t(std::uint8_t(p[2])) << 8) | std::uint32_t(std::uint8_t(p[3]));
}

json error_envelope(OrchestrationError::Errc code, const std::string& message) {
    Reply r;
    r.ok = false;
    r.error = code;
    r.message = message;
    json out = to_json(Verb::list, r);
    out.erase("verb");
    return out;
}

}  // namespace

std::uint16_t port_from_env(const char* name, std::uint16_t fallback) {
    const char* v = std::getenv(name);
    if (!v || !*v) return fallback;
    char* end = nullptr;
    const long p = std::strtol(v, &end, 10);
    if (*end != '\0' || p < 0 || p > 65535) throw NetError(std::string(name) + " is not a port number: " + v);
    return static_cast<std::uint16_t>(p);
}

std::string encode_frame(const std::string& body) {
    const auto n = static_cast<std::uint32_t>(body.size());
    std::string out(4, '\0');
    out[0] = static_cast<char>(n >> 24);
    out[1] = static_cast<char>(n >> 16);
    out[2] = static_cast<char>(n >> 8);
    out[3] = static_cast<char>(n);
    return out + body;
}

// ---------------------------------------------------------------------------

ReqRepServer::ReqRepServer(Orchestrator& core, const std::string& bind_addr, std::uint16_t port) : core_(core) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw NetError(sys_error("socket"));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, bind_addr.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw NetError("bad bind address " + bind_addr);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0) {
        const auto msg = sys_error("bind " + bind_addr + ":" + std::to_string(port));
        ::close(listen_fd_);
        throw NetError(msg);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
}

ReqRepServer::~ReqRepServer() { stop(); }

void ReqRepServer::stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::list<std::thread> workers;
    {
        std::lock_guard lk(mu_);
        for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
        workers.swap(workers_);
    }
    for (auto& t : workers) t.join();
}

void ReqRepServer::accept_loop() {
    while (running_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) continue;
            return;
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        std::lock_guard lk(mu_);
        if (!running_) {
            ::close(fd);
            return;
        }
        open_fds_.push_back(fd);
        workers_.emplace_back([this, fd] { serve(fd); });
    }
}

void ReqRepServer::serve(int fd) {
    char head[4];
    while (running_ && read_exact(fd, head, 4)) {
        const auto n = read_be32(head);
        if (n > kMaxFrameBytes) {
            // The stream cannot be resynchronized after an oversized frame.
            write_all(fd, encode_frame(error_envelope(OrchestrationError::Errc::bad_request,
                                                      "frame of " + std::to_string(n) + " bytes exceeds the limit")
                                           .dump()));
            break;
        }
        std::string body(n, '\0');
        if (!read_exact(fd, body.data(), n)) break;
        const auto reply = core_.handle_text(body);
        ++served_;
        if (!write_all(fd, encode_frame(reply.dump()))) break;
    }
    std::lock_guard lk(mu_);
    open_fds_.remove(fd);
    ::close(fd);
}

// ---------------------------------------------------------------------------

ReqRepClient::ReqRepClient(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
        throw NetError("cannot resolve " + host);
    }
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0 || ::connect(fd_, res->ai_addr, res->ai_addrlen) < 0) {
        const auto msg = sys_error("connect " + host + ":" + std::to_string(port));
        ::freeaddrinfo(res);
        if (fd_ >= 0) ::close(fd_);
        throw NetError(msg);
    }
    ::freeaddrinfo(res);
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    timeval tv{};
    tv.tv_sec = timeout.count() / 1000;
    tv.tv_usec = (timeout.count() % 1000) * 1000;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

ReqRepClient::~ReqRepClient() {
    if (fd_ >= 0) ::close(fd_);
}

json ReqRepClient::request_text(const std::string& body) {
    if (!write_all(fd_, encode_frame(body))) throw NetError(sys_error("send"));
    char head[4];
    if (!read_exact(fd_, head, 4)) throw NetError("connection closed before the reply");
    std::string reply(read_be32(head), '\0');
    if (!read_exact(fd_, reply.data(), reply.size())) throw NetError("connection closed mid-reply");
    return json::parse(reply);
}

json ReqRepClient::request(const json& message) { return request_text(message.dump()); }

json ReqRepClient::call(Verb verb, const json& body) {
    return request({{"schema_version", kSchemaVersion}, {"verb", to_string(verb)}, {"body", body}});
}

// ---------------------------------------------------------------------------

int http_status(OrchestrationError::Errc code) {
    using E = OrchestrationError::Errc;
    switch (code) {
        case E::unknown_slice: return 404;
        case E::slice_exists:
        case E::fdm_conflict:
        case E::channel_in_use: return 409;
        case E::backend_failure: return 500;
        default: return 400;
    }
}

namespace {

void respond(httplib::Response& res, Verb verb, const Reply& reply, int ok_status = 200) {
    res.status = reply.ok ? ok_status : http_status(reply.error.value_or(OrchestrationError::Errc::bad_request));
    res.set_content(to_json(verb, reply).dump(), "application/json");
}

Reply parse_body(const std::string& text, json& out) {
    Reply r;
    try {
        out = text.empty() ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        r.ok = false;
        r.error = OrchestrationError::Errc::bad_request;
        r.message = std::string("malformed JSON: ") + e.what();
    }
    return r;
}

}  // namespace

HttpGateway::HttpGateway(Orchestrator& core, const std::string& bind_addr, std::uint16_t port,
                         std::chrono::milliseconds event_period)
    : core_(core), server_(std::make_unique<httplib::Server>()), event_period_(event_period) {
    auto& s = *server_;
    s.Get("/api/slices", [this](const httplib::Request&, httplib::Response& res) {
        respond(res, Verb::list, core_.execute(Verb::list, json::object()));
    });
    s.Post("/api/slices", [this](const httplib::Request& req, httplib::Response& res) {
        json body;
        auto bad = parse_body(req.body, body);
        if (!bad.ok) return respond(res, Verb::create, bad);
        respond(res, Verb::create, core_.execute(Verb::create, body), 201);
    });
    s.Delete(R"(/api/slices/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
        const json body = {{"slice_id", std::stoul(req.matches[1].str())}};
        respond(res, Verb::destroy, core_.execute(Verb::destroy, body));
    });
    s.Put(R"(/api/slices/(\d+)/band)", [this](const httplib::Request& req, httplib::Response& res) {
        json body;
        auto bad = parse_body(req.body, body);
        if (!bad.ok) return respond(res, Verb::set_band, bad);
        if (!body.is_object()) body = json::object();
        body["slice_id"] = std::stoul(req.matches[1].str());
        respond(res, Verb::set_band, core_.execute(Verb::set_band, body));
    });
    s.Get("/api/metrics", [this](const httplib::Request&, httplib::Response& res) {
        respond(res, Verb::metrics, core_.execute(Verb::metrics, json::object()));
    });
    s.Get("/api/events", [this](const httplib::Request&, httplib::Response& res) {
        res.set_header("Cache-Control", "no-cache");
        auto next = std::make_shared<std::chrono::steady_clock::time_point>(std::chrono::steady_clock::now());
        res.set_chunked_content_provider("text/event-stream", [this, next](std::size_t, httplib::DataSink& sink) {
            while (running_ && std::chrono::steady_clock::now() < *next) {
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
            if (!running_) return false;
            *next += event_period_;
            const auto v = core_.view();
            const std::string event = "event: metrics\nid: " + std::to_string(v->metrics.seq) +
                                      "\ndata: " + to_json(v->metrics).dump() + "\n\n";
            return sink.write(event.data(), event.size());
        });
    });

    if (port == 0) {
        const int p = s.bind_to_any_port(bind_addr);
        if (p < 0) throw NetError("http bind " + bind_addr + " failed");
        port_ = static_cast<std::uint16_t>(p);
    } else {
        if (!s.bind_to_port(bind_addr, port)) throw NetError("http bind " + bind_addr + ":" + std::to_string(port) + " failed");
        port_ = port;
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

HttpGateway::~HttpGateway() { stop(); }

void HttpGateway::stop() {
    if (!running_.exchange(false)) return;
    server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace pvran::orchestrator
