#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "omnibot/scenario.hpp"
#include "omnibot/sim.hpp"

namespace omnibot::net {

/// Longest accepted request line, excluding the newline.
inline constexpr std::size_t kMaxLineBytes = 1 << 20;

/// Outgoing messages of one session. Replies are never dropped; telemetry
/// is dropped (and counted) once `telemetry_capacity` telemetry messages
/// are waiting, so a slow reader never blocks the engine.
class Outbox {
 public:
  enum class Kind { text, pong, close };

  struct Message {
    std::string data;
    bool telemetry = false;
    Kind kind = Kind::text;
  };

  explicit Outbox(std::size_t telemetry_capacity = 64) : capacity_(telemetry_capacity) {}

  void push_reply(std::string line, Kind kind = Kind::text);
  bool push_telemetry(std::string line);
  /// Blocks until a message is queued or the outbox is closed and drained.
  std::optional<Message> pop_wait();
  std::optional<Message> try_pop();
  void close();
  bool closed() const;
  std::uint64_t dropped() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Message> queue_;
  std::size_t capacity_;
  std::size_t telemetry_queued_ = 0;
  std::uint64_t dropped_ = 0;
  bool closed_ = false;
};

struct HubOptions {
  std::optional<std::uint64_t> watchdog_ticks;
  std::size_t telemetry_capacity = 64;
};

/// Protocol endpoint shared by all sessions: turns request lines into
/// engine commands or snapshot reads, and fans telemetry out after each
/// engine tick. Transport-agnostic; the server feeds it lines.
class ControlHub {
 public:
  ControlHub(Scenario scenario, HubOptions options = {});

  std::uint64_t open_session(std::shared_ptr<Outbox> outbox);
  void close_session(std::uint64_t session);

  /// Produces exactly one reply, pushes it to the session's outbox and
  /// returns it. Never throws for any input.
  std::string handle_line(std::uint64_t session, std::string_view line);

  /// One engine tick followed by telemetry fan-out. Returns the engine's
  /// step result.
  bool step();

  bool finished() const;
  std::uint64_t control_ticks() const;
  double dt_control() const { return dt_control_; }
  std::string trace_csv() const;
  sim::RunSummary summary() const;
  std::vector<sim::ScheduledCommand> applied_commands() const;
  std::uint64_t dropped(std::uint64_t session) const;

 private:
  struct Session {
    std::shared_ptr<Outbox> outbox;
    std::string client;
    std::uint64_t period_ticks = 0;  // 0 = not subscribed
    std::uint64_t telemetry_seq = 0;
  };

  nlohmann::ordered_json dispatch(std::uint64_t session, const std::string& op,
                                  const nlohmann::ordered_json& req);
  nlohmann::ordered_json telemetry_body() const;

  mutable std::mutex mutex_;
  sim::Engine engine_;
  double dt_control_;
  std::array<drivetrain::PidGains, 3> gains_;
  std::map<std::uint64_t, Session> sessions_;
  std::uint64_t next_session_ = 1;
};

/// Serializes with invalid UTF-8 replaced, so any echoed value is safe.
std::string dump_line(const nlohmann::ordered_json& j);

}  // namespace omnibot::net
