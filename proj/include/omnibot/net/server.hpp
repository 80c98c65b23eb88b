#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "omnibot/net/hub.hpp"

namespace omnibot::net {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8081;
};

/// Parses "host:port" (port may be 0 for an ephemeral port). Throws
/// std::invalid_argument.
Endpoint parse_endpoint(std::string_view text);

/// OMNIBOT_BIND if set and non-empty, else 127.0.0.1:8081.
Endpoint default_endpoint();

struct ServerOptions {
  Endpoint bind;
  std::optional<Endpoint> ws_bind;
  /// Sim seconds per wall second; 0 steps as fast as possible.
  double realtime_factor = 1.0;
  /// Stop stepping (and let wait() return) once the run has ended.
  bool exit_when_finished = false;
  /// Hold the engine until this many clients have connected.
  int wait_for_clients = 0;
  /// Telemetry messages queued per client before new ones are dropped.
  std::size_t telemetry_capacity = 64;
};

/// Line-protocol TCP server plus optional WebSocket gateway around one
/// ControlHub. One engine thread, one reader and one writer per client.
class Server {
 public:
  Server(ControlHub& hub, ServerOptions options);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the listeners and starts the engine. Throws std::runtime_error
  /// on bind failure.
  void start();
  /// Stops accepting, closes every client and joins all threads.
  void stop();
  /// Blocks until the engine loop ends (run finished with
  /// exit_when_finished, or stop()).
  void wait();
  /// As wait(), giving up after `timeout`. Returns true if the loop ended.
  bool wait_for(std::chrono::milliseconds timeout);

  std::uint16_t port() const { return port_; }
  std::uint16_t ws_port() const { return ws_port_; }
  int clients_connected() const { return clients_.load(); }

 private:
  struct Connection;

  void accept_loop();
  void engine_loop();
  void serve_tcp(std::shared_ptr<Connection> c);
  void serve_ws(std::shared_ptr<Connection> c);
  void write_loop(std::shared_ptr<Connection> c);
  void add_connection(int fd, bool websocket);
  void reap_connections();

  ControlHub& hub_;
  ServerOptions options_;
  int listen_fd_ = -1;
  int ws_listen_fd_ = -1;
  int wake_pipe_[2] = {-1, -1};
  std::uint16_t port_ = 0;
  std::uint16_t ws_port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<int> clients_{0};
  std::thread accept_thread_;
  std::thread engine_thread_;
  std::mutex conn_mutex_;
  std::vector<std::shared_ptr<Connection>> connections_;
  std::mutex done_mutex_;
  std::condition_variable done_cv_;
  bool engine_done_ = false;
  bool started_ = false;
  bool stopped_ = false;
};

}  // namespace omnibot::net
