#include "clockwork/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace clockwork {

namespace {

std::string errno_text(const std::string& what) {
    return what + ": " + std::strerror(errno);
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

std::pair<std::string, std::uint16_t> split_address(const std::string& address) {
    auto colon = address.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
        throw NetError("address '" + address + "' is not host:port");
    }
    unsigned long port = 0;
    try {
        std::size_t used = 0;
        port = std::stoul(address.substr(colon + 1), &used);
        if (used != address.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw NetError("address '" + address + "' has a bad port");
    }
    if (port > 65535) throw NetError("address '" + address + "' has a bad port");
    return {address.substr(0, colon), static_cast<std::uint16_t>(port)};
}

// -------------------------------------------------------------- Connection

Connection::Connection(int fd) : fd_(fd) {
    set_nodelay(fd_);
}

Connection::~Connection() {
    close();
}

Connection::Connection(Connection&& other) noexcept
    : fd_(other.fd_),
      send_mutex_(std::move(other.send_mutex_)),
      buffer_(std::move(other.buffer_)),
      consumed_(other.consumed_) {
    other.fd_ = -1;
    other.send_mutex_ = std::make_unique<std::mutex>();
}

Connection& Connection::operator=(Connection&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        send_mutex_ = std::move(other.send_mutex_);
        buffer_ = std::move(other.buffer_);
        consumed_ = other.consumed_;
        other.fd_ = -1;
        other.send_mutex_ = std::make_unique<std::mutex>();
    }
    return *this;
}

void Connection::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Connection Connection::connect(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &found);
    if (rc != 0) throw NetError("resolve " + host + ": " + ::gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(found, ::freeaddrinfo);
    std::string last_error = "no addresses";
    for (addrinfo* ai = found; ai != nullptr; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            last_error = errno_text("socket");
            continue;
        }
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) return Connection(fd);
        last_error = errno_text("connect");
        ::close(fd);
    }
    throw NetError("connect " + host + ":" + std::to_string(port) + ": " + last_error);
}

void Connection::send(const Message& message) {
    std::lock_guard<std::mutex> lock(*send_mutex_);
    if (fd_ < 0) throw NetError("send on closed connection");
    scratch_.clear();
    encode_message(message, scratch_);
    std::size_t sent = 0;
    while (sent < scratch_.size()) {
        ssize_t n = ::send(fd_, scratch_.data() + sent, scratch_.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw NetError(errno_text("send"));
        }
        sent += static_cast<std::size_t>(n);
    }
}

std::optional<Message> Connection::receive() {
    if (fd_ < 0) return std::nullopt;
    for (;;) {
        std::span<const std::uint8_t> pending(buffer_.data() + consumed_, buffer_.size() - consumed_);
        if (auto size = complete_frame_size(pending)) {
            Message message = decode_message(pending.first(*size));
            consumed_ += *size;
            if (consumed_ == buffer_.size()) {
                buffer_.clear();
                consumed_ = 0;
            }
            return message;
        }
        if (consumed_ > 0) {
            buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(consumed_));
            consumed_ = 0;
        }
        std::uint8_t chunk[64 * 1024];
        ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            return std::nullopt;
        }
        if (n == 0) {
            if (!buffer_.empty()) {
                throw ProtocolError(ProtocolError::Kind::Truncated, "stream closed mid-frame");
            }
            return std::nullopt;
        }
        buffer_.insert(buffer_.end(), chunk, chunk + n);
    }
}

void Connection::shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

// ---------------------------------------------------------------- Listener

Listener::Listener(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* found = nullptr;
    const char* node = host.empty() || host == "*" ? nullptr : host.c_str();
    int rc = ::getaddrinfo(node, std::to_string(port).c_str(), &hints, &found);
    if (rc != 0) throw NetError("resolve " + host + ": " + ::gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(found, ::freeaddrinfo);

    fd_ = ::socket(found->ai_family, found->ai_socktype, found->ai_protocol);
    if (fd_ < 0) throw NetError(errno_text("socket"));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, found->ai_addr, found->ai_addrlen) != 0 || ::listen(fd_, 16) != 0) {
        std::string error = errno_text("bind " + host + ":" + std::to_string(port));
        ::close(fd_);
        throw NetError(error);
    }
    sockaddr_storage bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    if (bound.ss_family == AF_INET6) {
        port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port);
    } else {
        port_ = ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
    }
}

Listener::~Listener() {
    shutdown();
    ::close(fd_);
}

std::optional<Connection> Listener::accept() {
    while (!closed_) {
        int fd = ::accept(fd_, nullptr, nullptr);
        if (fd >= 0) return Connection(fd);
        if (errno == EINTR) continue;
        return std::nullopt;
    }
    return std::nullopt;
}

void Listener::shutdown() {
    if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
}

// ------------------------------------------------------------ WorkerServer

WorkerServer::WorkerServer(std::shared_ptr<const ModelCatalog> catalog, WorkerConfig config,
                           const std::string& host, std::uint16_t port, ClockSource clock)
    : catalog_(std::move(catalog)),
      config_(std::move(config)),
      clock_(clock),
      listener_(host, port) {
    config_.keep_result_log = true;
}

WorkerServer::~WorkerServer() {
    stop();
}

void WorkerServer::start(bool once) {
    thread_ = std::thread([this, once] { serve(once); });
}

void WorkerServer::serve(bool once) {
    while (!stopping_) {
        auto connection = listener_.accept();
        if (!connection) break;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            if (stopping_) break;
            active_ = &*connection;
        }
        serve_session(*connection);
        {
            std::lock_guard<std::mutex> lock(mutex_);
            active_ = nullptr;
        }
        sessions_++;
        if (once) break;
    }
}

void WorkerServer::serve_session(Connection& connection) {
    RealtimeRuntime runtime(clock_);
    Worker worker(runtime, catalog_, config_, [&connection](const ActionResult& result) {
        try {
            connection.send(result);
        } catch (const NetError&) {
            // controller went away; the read loop notices
        }
    });
    try {
        connection.send(worker.handshake());
    } catch (const NetError&) {
        return;
    }
    runtime.start();
    try {
        while (auto message = connection.receive()) {
            if (auto* action = std::get_if<Action>(&*message)) {
                runtime.post([&worker, a = std::move(*action)] { worker.on_action(a); });
            }
        }
    } catch (const ProtocolError&) {
        // drop the session on a corrupt stream
    }
    runtime.stop();
    std::lock_guard<std::mutex> lock(mutex_);
    last_results_ = worker.result_log();
}

void WorkerServer::stop() {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        stopping_ = true;
        if (active_ != nullptr) active_->shutdown();
    }
    listener_.shutdown();
    if (thread_.joinable()) thread_.join();
}

std::vector<ActionResult> WorkerServer::last_results() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_results_;
}

}  // namespace clockwork
