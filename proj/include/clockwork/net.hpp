#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "clockwork/profiles.hpp"
#include "clockwork/protocol.hpp"
#include "clockwork/runtime.hpp"
#include "clockwork/worker.hpp"

namespace clockwork {

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// "host:port"; throws NetError when malformed.
std::pair<std::string, std::uint16_t> split_address(const std::string& address);

// One framed TCP stream. send() may be called from any thread; receive()
// from one reader thread at a time.
class Connection {
public:
    Connection() = default;
    explicit Connection(int fd);
    ~Connection();
    Connection(Connection&& other) noexcept;
    Connection& operator=(Connection&& other) noexcept;
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;

    static Connection connect(const std::string& host, std::uint16_t port);

    bool open() const { return fd_ >= 0; }

    // Throws NetError when the peer is gone.
    void send(const Message& message);
    // nullopt on orderly close or after shutdown(); ProtocolError on bad frames.
    std::optional<Message> receive();
    // Unblocks a pending receive() on another thread.
    void shutdown();

private:
    void close();

    int fd_ = -1;
    std::unique_ptr<std::mutex> send_mutex_ = std::make_unique<std::mutex>();
    std::vector<std::uint8_t> buffer_;
    std::size_t consumed_ = 0;
    std::vector<std::uint8_t> scratch_;
};

class Listener {
public:
    // Port 0 picks an ephemeral port.
    Listener(const std::string& host, std::uint16_t port);
    ~Listener();
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    std::uint16_t port() const { return port_; }
    // nullopt once shutdown() has been called.
    std::optional<Connection> accept();
    void shutdown();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> closed_{false};
};

// Hosts one emulated Worker behind a listening socket. Each accepted
// controller session gets a fresh Worker; sessions are served one at a time.
class WorkerServer {
public:
    WorkerServer(std::shared_ptr<const ModelCatalog> catalog, WorkerConfig config,
                 const std::string& host = "127.0.0.1", std::uint16_t port = 0,
                 ClockSource clock = ClockSource::Monotonic);
    ~WorkerServer();
    WorkerServer(const WorkerServer&) = delete;
    WorkerServer& operator=(const WorkerServer&) = delete;

    std::uint16_t port() const { return listener_.port(); }

    // Serves sessions on a background thread until stop(), or until the
    // first session ends when `once` is set.
    void start(bool once = false);
    // Blocking variant of start().
    void serve(bool once = false);
    void stop();

    // Results of the most recent finished session.
    std::vector<ActionResult> last_results() const;
    std::uint64_t sessions() const { return sessions_; }

private:
    void serve_session(Connection& connection);

    std::shared_ptr<const ModelCatalog> catalog_;
    WorkerConfig config_;
    ClockSource clock_;
    Listener listener_;
    std::thread thread_;
    std::atomic<bool> stopping_{false};
    std::atomic<std::uint64_t> sessions_{0};
    mutable std::mutex mutex_;
    Connection* active_ = nullptr;
    std::vector<ActionResult> last_results_;
};

}  // namespace clockwork
