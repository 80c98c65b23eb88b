#include "omnibot/net/server.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include <fmt/core.h>

#include "omnibot/net/codec.hpp"

namespace omnibot::net {

namespace {

constexpr std::size_t kMaxHandshakeBytes = 16 * 1024;

bool send_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

bool send_all(int fd, const std::string& s) { return send_all(fd, s.data(), s.size()); }

/// Reads exactly n bytes; false on EOF or error.
bool read_exact(int fd, char* out, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::recv(fd, out, n, 0);
    if (k == 0) return false;
    if (k < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    out += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

int open_listener(const Endpoint& ep, std::uint16_t& bound_port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE | AI_NUMERICSERV;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw std::runtime_error(fmt::format("cannot resolve {}: {}", ep.host, gai_strerror(rc)));
  }
  int fd = -1;
  std::string last_error = "no usable address";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 16) == 0) break;
    last_error = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) {
    throw std::runtime_error(fmt::format("cannot bind {}:{}: {}", ep.host, ep.port, last_error));
  }
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  if (addr.ss_family == AF_INET) {
    bound_port = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  } else {
    bound_port = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
  }
  return fd;
}

std::string ws_frame(std::uint8_t opcode, std::string_view payload) {
  std::string f;
  f.push_back(static_cast<char>(0x80 | opcode));
  const std::size_t n = payload.size();
  if (n < 126) {
    f.push_back(static_cast<char>(n));
  } else if (n <= 0xffff) {
    f.push_back(static_cast<char>(126));
    f.push_back(static_cast<char>(n >> 8));
    f.push_back(static_cast<char>(n & 0xff));
  } else {
    f.push_back(static_cast<char>(127));
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  }
  f.append(payload);
  return f;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

/// Value of the Sec-WebSocket-Key header, empty if absent or not an
/// upgrade request.
std::string handshake_key(const std::string& request) {
  std::string key;
  bool upgrade = false;
  std::size_t pos = request.find("\r\n");
  if (pos == std::string::npos || request.compare(0, 4, "GET ") != 0) return {};
  while (pos != std::string::npos) {
    const std::size_t start = pos + 2;
    const std::size_t end = request.find("\r\n", start);
    if (end == std::string::npos || end == start) break;
    const std::string_view header(request.data() + start, end - start);
    const std::size_t colon = header.find(':');
    if (colon != std::string_view::npos) {
      const std::string name = lower(trim(header.substr(0, colon)));
      const std::string value = trim(header.substr(colon + 1));
      if (name == "sec-websocket-key") key = value;
      if (name == "upgrade" && lower(value) == "websocket") upgrade = true;
    }
    pos = end;
  }
  return upgrade ? key : std::string{};
}

}  // namespace

Endpoint parse_endpoint(std::string_view text) {
  const std::size_t colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size()) {
    throw std::invalid_argument(fmt::format("bad address '{}', expected host:port", text));
  }
  std::string host(text.substr(0, colon));
  if (host.size() > 2 && host.front() == '[' && host.back() == ']') {
    host = host.substr(1, host.size() - 2);
  }
  const std::string port_text(text.substr(colon + 1));
  char* end = nullptr;
  errno = 0;
  const long port = std::strtol(port_text.c_str(), &end, 10);
  if (errno != 0 || *end != '\0' || port < 0 || port > 65535) {
    throw std::invalid_argument(fmt::format("bad port in '{}'", text));
  }
  return {host, static_cast<std::uint16_t>(port)};
}

Endpoint default_endpoint() {
  if (const char* env = std::getenv("OMNIBOT_BIND"); env && *env) return parse_endpoint(env);
  return {};
}

struct Server::Connection {
  int fd = -1;
  bool websocket = false;
  std::shared_ptr<Outbox> outbox;
  std::uint64_t session = 0;
  std::thread reader;
  std::thread writer;
  std::atomic<bool> done{false};
};

Server::Server(ControlHub& hub, ServerOptions options)
    : hub_(hub), options_(std::move(options)) {}

Server::~Server() { stop(); }

void Server::start() {
  if (started_) return;
  listen_fd_ = open_listener(options_.bind, port_);
  if (options_.ws_bind) {
    try {
      ws_listen_fd_ = open_listener(*options_.ws_bind, ws_port_);
    } catch (...) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw;
    }
  }
  if (::pipe2(wake_pipe_, O_CLOEXEC) != 0) throw std::runtime_error("pipe failed");
  started_ = true;
  accept_thread_ = std::thread([this] { accept_loop(); });
  engine_thread_ = std::thread([this] { engine_loop(); });
}

void Server::stop() {
  if (!started_ || stopped_) return;
  stopped_ = true;
  stopping_ = true;
  const char b = 1;
  [[maybe_unused]] const auto w = ::write(wake_pipe_[1], &b, 1);
  if (accept_thread_.joinable()) accept_thread_.join();
  if (engine_thread_.joinable()) engine_thread_.join();
  std::vector<std::shared_ptr<Connection>> conns;
  {
    std::lock_guard lock(conn_mutex_);
    conns.swap(connections_);
  }
  for (auto& c : conns) {
    ::shutdown(c->fd, SHUT_RDWR);
    if (c->outbox) c->outbox->close();
  }
  for (auto& c : conns) {
    if (c->reader.joinable()) c->reader.join();
    if (c->writer.joinable()) c->writer.join();
    ::close(c->fd);
  }
  for (int fd : {listen_fd_, ws_listen_fd_, wake_pipe_[0], wake_pipe_[1]}) {
    if (fd >= 0) ::close(fd);
  }
  listen_fd_ = ws_listen_fd_ = wake_pipe_[0] = wake_pipe_[1] = -1;
}

void Server::wait() {
  std::unique_lock lock(done_mutex_);
  done_cv_.wait(lock, [this] { return engine_done_; });
}

bool Server::wait_for(std::chrono::milliseconds timeout) {
  std::unique_lock lock(done_mutex_);
  return done_cv_.wait_for(lock, timeout, [this] { return engine_done_; });
}

void Server::engine_loop() {
  using clock = std::chrono::steady_clock;
  const double dt = hub_.dt_control();
  auto base = clock::now();
  std::uint64_t ticks_since_base = 0;
  while (!stopping_) {
    if (clients_.load() < options_.wait_for_clients) {
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
      base = clock::now();
      ticks_since_base = 0;
      continue;
    }
    const bool stepped = hub_.step();
    if (!stepped) {
      if (options_.exit_when_finished) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
      base = clock::now();
      ticks_since_base = 0;
      continue;
    }
    ++ticks_since_base;
    if (options_.realtime_factor > 0.0) {
      const auto target =
          base + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(
                     static_cast<double>(ticks_since_base) * dt / options_.realtime_factor));
      std::this_thread::sleep_until(target);
    }
  }
  {
    std::lock_guard lock(done_mutex_);
    engine_done_ = true;
  }
  done_cv_.notify_all();
}

void Server::accept_loop() {
  std::vector<pollfd> fds{{wake_pipe_[0], POLLIN, 0}, {listen_fd_, POLLIN, 0}};
  if (ws_listen_fd_ >= 0) fds.push_back({ws_listen_fd_, POLLIN, 0});
  while (!stopping_) {
    const int rc = ::poll(fds.data(), fds.size(), 500);
    if (rc < 0 && errno != EINTR) break;
    reap_connections();
    if (rc <= 0) continue;
    if (fds[0].revents) break;
    for (std::size_t i = 1; i < fds.size(); ++i) {
      if (!(fds[i].revents & POLLIN)) continue;
      const int fd = ::accept4(fds[i].fd, nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      add_connection(fd, fds[i].fd == ws_listen_fd_);
    }
  }
}

void Server::add_connection(int fd, bool websocket) {
  auto c = std::make_shared<Connection>();
  c->fd = fd;
  c->websocket = websocket;
  std::lock_guard lock(conn_mutex_);
  if (stopping_) {
    ::close(fd);
    return;
  }
  connections_.push_back(c);
  if (websocket) {
    c->reader = std::thread([this, c] { serve_ws(c); });
  } else {
    c->outbox = std::make_shared<Outbox>(options_.telemetry_capacity);
    c->session = hub_.open_session(c->outbox);
    ++clients_;
    c->writer = std::thread([this, c] { write_loop(c); });
    c->reader = std::thread([this, c] { serve_tcp(c); });
  }
}

void Server::reap_connections() {
  std::vector<std::shared_ptr<Connection>> finished;
  {
    std::lock_guard lock(conn_mutex_);
    auto it = std::partition(connections_.begin(), connections_.end(),
                             [](const auto& c) { return !c->done.load(); });
    finished.assign(it, connections_.end());
    connections_.erase(it, connections_.end());
  }
  for (auto& c : finished) {
    if (c->reader.joinable()) c->reader.join();
    if (c->writer.joinable()) c->writer.join();
    ::close(c->fd);
  }
}

void Server::write_loop(std::shared_ptr<Connection> c) {
  while (auto m = c->outbox->pop_wait()) {
    bool ok = true;
    if (c->websocket) {
      switch (m->kind) {
        case Outbox::Kind::text:
          ok = send_all(c->fd, ws_frame(0x1, m->data));
          break;
        case Outbox::Kind::pong:
          ok = send_all(c->fd, ws_frame(0xA, m->data));
          break;
        case Outbox::Kind::close:
          send_all(c->fd, ws_frame(0x8, m->data));
          ok = false;
          break;
      }
    } else {
      m->data.push_back('\n');
      ok = send_all(c->fd, m->data);
    }
    if (!ok) break;
  }
  c->outbox->close();
  ::shutdown(c->fd, SHUT_RDWR);
}

void Server::serve_tcp(std::shared_ptr<Connection> c) {
  std::string line;
  bool overflow = false;
  char buf[8192];
  while (true) {
    const ssize_t n = ::recv(c->fd, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    for (ssize_t i = 0; i < n; ++i) {
      const char ch = buf[i];
      if (ch == '\n') {
        if (!line.empty() && line.back() == '\r' && !overflow) line.pop_back();
        hub_.handle_line(c->session, line);
        line.clear();
        overflow = false;
      } else if (line.size() <= kMaxLineBytes) {
        line.push_back(ch);
      } else {
        overflow = true;
      }
    }
  }
  hub_.close_session(c->session);
  --clients_;
  c->outbox->close();
  if (c->writer.joinable()) c->writer.join();
  c->done = true;
}

void Server::serve_ws(std::shared_ptr<Connection> c) {
  std::string request;
  char buf[1024];
  while (request.find("\r\n\r\n") == std::string::npos) {
    const ssize_t n = ::recv(c->fd, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0 || request.size() > kMaxHandshakeBytes) {
      c->done = true;
      return;
    }
    request.append(buf, static_cast<std::size_t>(n));
  }
  const std::string key = handshake_key(request);
  if (key.empty()) {
    send_all(c->fd, "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
    c->done = true;
    return;
  }
  if (!send_all(c->fd, "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n"
                       "Connection: Upgrade\r\nSec-WebSocket-Accept: " +
                           websocket_accept_key(key) + "\r\n\r\n")) {
    c->done = true;
    return;
  }
  {
    std::lock_guard lock(conn_mutex_);
    c->outbox = std::make_shared<Outbox>(options_.telemetry_capacity);
    c->session = hub_.open_session(c->outbox);
    ++clients_;
    c->writer = std::thread([this, c] { write_loop(c); });
  }

  std::string message;
  while (true) {
    unsigned char hdr[2];
    if (!read_exact(c->fd, reinterpret_cast<char*>(hdr), 2)) break;
    const bool fin = hdr[0] & 0x80;
    const std::uint8_t opcode = hdr[0] & 0x0f;
    const bool masked = hdr[1] & 0x80;
    std::uint64_t len = hdr[1] & 0x7f;
    if (len == 126) {
      unsigned char ext[2];
      if (!read_exact(c->fd, reinterpret_cast<char*>(ext), 2)) break;
      len = (std::uint64_t{ext[0]} << 8) | ext[1];
    } else if (len == 127) {
      unsigned char ext[8];
      if (!read_exact(c->fd, reinterpret_cast<char*>(ext), 8)) break;
      len = 0;
      for (unsigned char b : ext) len = (len << 8) | b;
    }
    if (!masked || len > kMaxLineBytes + 1 || message.size() + len > kMaxLineBytes + 1) {
      c->outbox->push_reply(std::string("\x03\xea", 2), Outbox::Kind::close);
      break;
    }
    unsigned char mask[4];
    if (!read_exact(c->fd, reinterpret_cast<char*>(mask), 4)) break;
    std::string payload(len, '\0');
    if (len > 0 && !read_exact(c->fd, payload.data(), len)) break;
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= static_cast<char>(mask[i % 4]);

    if (opcode == 0x8) {
      c->outbox->push_reply(payload.substr(0, std::min<std::size_t>(payload.size(), 2)),
                            Outbox::Kind::close);
      break;
    }
    if (opcode == 0x9) {
      c->outbox->push_reply(payload, Outbox::Kind::pong);
      continue;
    }
    if (opcode == 0xA) continue;
    if (opcode == 0x1 || opcode == 0x2 || opcode == 0x0) {
      message += payload;
      if (!fin) continue;
      while (!message.empty() && (message.back() == '\n' || message.back() == '\r')) {
        message.pop_back();
      }
      hub_.handle_line(c->session, message);
      message.clear();
      continue;
    }
    c->outbox->push_reply(std::string("\x03\xea", 2), Outbox::Kind::close);
    break;
  }
  hub_.close_session(c->session);
  --clients_;
  c->outbox->close();
  if (c->writer.joinable()) c->writer.join();
  c->done = true;
}

}  // namespace omnibot::net
