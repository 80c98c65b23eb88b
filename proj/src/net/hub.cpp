#include "omnibot/net/hub.hpp"

#include <cmath>
#include <exception>

#include "omnibot/net/codec.hpp"
#include "omnibot/sensors.hpp"

namespace omnibot::net {

namespace {

using json = nlohmann::ordered_json;
using ojson = json;

constexpr double kPi = 3.14159265358979323846;

/// A request that cannot be served; becomes an error reply.
struct RequestError {
  std::string reason;
  std::string message;
};

ojson error_reply(const json& seq, std::string_view reason, std::string_view message) {
  return {{"op", "error"}, {"seq", seq}, {"reason", reason}, {"message", message}};
}

double number_field(const json& req, const char* key, std::optional<double> fallback = {}) {
  const auto it = req.find(key);
  if (it == req.end()) {
    if (fallback) return *fallback;
    throw RequestError{"bad_request", std::string("missing field '") + key + "'"};
  }
  if (!it->is_number()) {
    throw RequestError{"bad_request", std::string("field '") + key + "' must be a number"};
  }
  const double v = it->get<double>();
  if (!std::isfinite(v)) {
    throw RequestError{"range", std::string("field '") + key + "' must be finite"};
  }
  return v;
}

std::size_t wheel_field(const json& req) {
  const auto it = req.find("wheel");
  if (it == req.end()) throw RequestError{"bad_request", "missing field 'wheel'"};
  if (!it->is_number_integer()) throw RequestError{"bad_request", "'wheel' must be an integer"};
  const auto w = it->get<std::int64_t>();
  if (w < 0 || w > 2) throw RequestError{"range", "wheel must be 0, 1 or 2"};
  return static_cast<std::size_t>(w);
}

ojson gains_json(std::size_t wheel, const drivetrain::PidGains& g) {
  return {{"wheel", wheel}, {"kp", g.kp}, {"ki", g.ki}, {"kd", g.kd}};
}

ojson pose_json(const Pose& p) {
  return {{"x_mm", p.x * 1000.0}, {"y_mm", p.y * 1000.0}, {"theta_deg", p.theta * 180.0 / kPi}};
}

ojson command_json(const controllers::VelocityCommand& c) {
  return {{"vx", c.vx_mm_s}, {"vy", c.vy_mm_s}, {"omega", c.omega_deg_s}};
}

ojson scene_json(const WorldScene& scene) {
  json obstacles = ojson::array();
  for (const auto& o : scene.obstacles) {
    if (const auto* c = std::get_if<Circle>(&o)) {
      obstacles.push_back({{"type", "circle"},
                           {"cx_mm", c->center.x() * 1000.0},
                           {"cy_mm", c->center.y() * 1000.0},
                           {"r_mm", c->radius * 1000.0}});
    } else {
      const auto& s = std::get<Segment>(o);
      obstacles.push_back({{"type", "segment"},
                           {"x1_mm", s.p1.x() * 1000.0},
                           {"y1_mm", s.p1.y() * 1000.0},
                           {"x2_mm", s.p2.x() * 1000.0},
                           {"y2_mm", s.p2.y() * 1000.0},
                           {"thickness_mm", s.thickness * 1000.0}});
    }
  }
  json lines = ojson::array();
  for (const auto& l : scene.floor_lines) {
    json pts = ojson::array();
    for (const auto& v : l.vertices) pts.push_back({v.x() * 1000.0, v.y() * 1000.0});
    lines.push_back({{"width_mm", l.width_m * 1000.0}, {"points_mm", pts}});
  }
  const Bounds& b = scene.bounds;
  return {{"bounds_mm", {b.x0 * 1000.0, b.y0 * 1000.0, b.x1 * 1000.0, b.y1 * 1000.0}},
          {"spawn", pose_json(scene.spawn)},
          {"obstacles", obstacles},
          {"lines", lines}};
}

ojson robot_json(const RobotParams& r) {
  json mounts = ojson::array();
  for (double a : r.mount_angles_rad) mounts.push_back(a * 180.0 / kPi);
  return {{"wheel_radius_mm", r.wheel_radius_m * 1000.0},
          {"wheel_distance_mm", r.wheel_distance_m * 1000.0},
          {"mount_angles_deg", mounts},
          {"gear_ratio", r.gear_ratio},
          {"body_radius_mm", r.body_radius_m * 1000.0},
          {"max_speed_mm_s", r.max_speed_m_s * 1000.0},
          {"max_omega_deg_s", r.max_omega_rad_s * 180.0 / kPi}};
}

}  // namespace

std::string dump_line(const nlohmann::ordered_json& j) {
  return j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

void Outbox::push_reply(std::string line, Kind kind) {
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    queue_.push_back({std::move(line), false, kind});
  }
  cv_.notify_one();
}

bool Outbox::push_telemetry(std::string line) {
  {
    std::lock_guard lock(mutex_);
    if (closed_) return false;
    if (telemetry_queued_ >= capacity_) {
      ++dropped_;
      return false;
    }
    queue_.push_back({std::move(line), true, Kind::text});
    ++telemetry_queued_;
  }
  cv_.notify_one();
  return true;
}

std::optional<Outbox::Message> Outbox::pop_wait() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return closed_ || !queue_.empty(); });
  if (queue_.empty()) return std::nullopt;
  Message m = std::move(queue_.front());
  queue_.pop_front();
  if (m.telemetry) --telemetry_queued_;
  return m;
}

std::optional<Outbox::Message> Outbox::try_pop() {
  std::lock_guard lock(mutex_);
  if (queue_.empty()) return std::nullopt;
  Message m = std::move(queue_.front());
  queue_.pop_front();
  if (m.telemetry) --telemetry_queued_;
  return m;
}

void Outbox::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool Outbox::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

std::uint64_t Outbox::dropped() const {
  std::lock_guard lock(mutex_);
  return dropped_;
}

ControlHub::ControlHub(Scenario scenario, HubOptions options)
    : engine_(scenario, sim::EngineOptions{options.watchdog_ticks}),
      dt_control_(scenario.dt_control_s),
      gains_(scenario.gains) {}

std::uint64_t ControlHub::open_session(std::shared_ptr<Outbox> outbox) {
  std::lock_guard lock(mutex_);
  const std::uint64_t id = next_session_++;
  Session s;
  s.outbox = std::move(outbox);
  sessions_[id] = std::move(s);
  return id;
}

void ControlHub::close_session(std::uint64_t session) {
  std::lock_guard lock(mutex_);
  sessions_.erase(session);
}

std::string ControlHub::handle_line(std::uint64_t session, std::string_view line) {
  ojson reply;
  json seq = nullptr;
  if (line.size() > kMaxLineBytes) {
    reply = error_reply(seq, "too_long", "line exceeds 1 MiB");
  } else {
    json req = json::parse(line, nullptr, false);
    if (req.is_discarded()) {
      reply = error_reply(seq, "parse", "line is not valid JSON");
    } else if (!req.is_object()) {
      reply = error_reply(seq, "bad_request", "message must be a JSON object");
    } else {
      if (const auto it = req.find("seq"); it != req.end()) seq = *it;
      const auto op = req.find("op");
      if (op == req.end() || !op->is_string()) {
        reply = error_reply(seq, "bad_request", "missing string field 'op'");
      } else {
        try {
          std::lock_guard lock(mutex_);
          const ojson body = dispatch(session, op->get<std::string>(), req);
          reply = {{"op", body.at("op")}, {"seq", seq}};
          for (const auto& [k, v] : body.items()) {
            if (k != "op") reply[k] = v;
          }
        } catch (const RequestError& e) {
          reply = error_reply(seq, e.reason, e.message);
        } catch (const std::exception& e) {
          reply = error_reply(seq, "bad_request", e.what());
        }
      }
    }
  }
  std::string out = dump_line(reply);
  std::shared_ptr<Outbox> box;
  {
    std::lock_guard lock(mutex_);
    if (const auto it = sessions_.find(session); it != sessions_.end()) box = it->second.outbox;
  }
  if (box) box->push_reply(out);
  return out;
}

ojson ControlHub::dispatch(std::uint64_t session, const std::string& op, const json& req) {
  const auto sit = sessions_.find(session);
  Session* sess = sit == sessions_.end() ? nullptr : &sit->second;

  if (op == "hello") {
    if (const auto it = req.find("client"); it != req.end() && it->is_string() && sess) {
      sess->client = it->get<std::string>();
    }
    const Scenario& sc = engine_.scenario();
    return {{"op", "ack"},
            {"payload",
             {{"server", "omnibot"},
              {"protocol", 1},
              {"session", session},
              {"controller", to_string(engine_.state().controller)},
              {"dt_control_s", sc.dt_control_s},
              {"camera", {{"width", sc.sensors.camera_width_px},
                          {"height", sc.sensors.camera_height_px()}}},
              {"scene", scene_json(sc.scene)},
              {"robot", robot_json(sc.robot)}}}};
  }
  if (op == "set_velocity") {
    controllers::VelocityCommand c{number_field(req, "vx", 0.0), number_field(req, "vy", 0.0),
                                   number_field(req, "omega", 0.0)};
    engine_.enqueue(sim::SetVelocity{c});
    return {{"op", "ack"}};
  }
  if (op == "get_distances") {
    const auto f = engine_.peek_sensors();
    json volts = ojson::array();
    json dists = ojson::array();
    for (const auto& r : f.ir) {
      volts.push_back(r.voltage_v);
      dists.push_back(r.distance_m * 1000.0);
    }
    return {{"op", "ack"},
            {"payload", {{"ir", volts}, {"distance_mm", dists}, {"sensor_seq", f.seq}}}};
  }
  if (op == "get_bumper") {
    const auto f = engine_.peek_sensors();
    return {{"op", "ack"}, {"payload", {{"bumper", f.bumper}, {"sensor_seq", f.seq}}}};
  }
  if (op == "get_frame") {
    const auto f = engine_.peek_sensors();
    ojson line = nullptr;
    if (f.line.found) line = f.line.x_px;
    return {{"op", "frame"},
            {"payload",
             {{"width", f.camera.width_px},
              {"height", f.camera.height_px},
              {"format", "pgm"},
              {"encoding", "base64"},
              {"data", base64_encode(sensors::encode_pgm(f.camera))},
              {"line_x_px", line},
              {"sensor_seq", f.seq}}}};
  }
  if (op == "set_pid") {
    const std::size_t wheel = wheel_field(req);
    drivetrain::PidGains g{number_field(req, "kp"), number_field(req, "ki"),
                           number_field(req, "kd", 0.0)};
    if (!drivetrain::valid(g)) throw RequestError{"invalid_gain", "gains must be >= 0"};
    gains_[wheel] = g;
    engine_.enqueue(sim::SetPid{wheel, g});
    return {{"op", "ack"}, {"payload", gains_json(wheel, g)}};
  }
  if (op == "get_pid") {
    if (req.contains("wheel")) {
      const std::size_t wheel = wheel_field(req);
      return {{"op", "ack"}, {"payload", gains_json(wheel, gains_[wheel])}};
    }
    json all = ojson::array();
    for (std::size_t w = 0; w < 3; ++w) all.push_back(gains_json(w, gains_[w]));
    return {{"op", "ack"}, {"payload", {{"wheels", all}}}};
  }
  if (op == "select_controller") {
    const auto it = req.find("controller");
    if (it == req.end() || !it->is_string()) {
      throw RequestError{"bad_request", "missing string field 'controller'"};
    }
    ControllerKind k;
    try {
      k = parse_controller(it->get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw RequestError{"range", e.what()};
    }
    engine_.enqueue(sim::SelectController{k});
    return {{"op", "ack"}, {"payload", {{"controller", to_string(k)}}}};
  }
  if (op == "reset") {
    engine_.enqueue(sim::Reset{});
    return {{"op", "ack"}};
  }
  if (op == "subscribe_telemetry") {
    const double rate = number_field(req, "rate_hz");
    if (!sess) throw RequestError{"bad_request", "no session"};
    if (rate == 0.0) {
      sess->period_ticks = 0;
      return {{"op", "ack"}, {"payload", {{"period_ticks", 0}}}};
    }
    if (rate < 1.0 || rate > 100.0) throw RequestError{"range", "rate_hz must be in [1, 100]"};
    const double period = std::round(1.0 / (rate * dt_control_));
    sess->period_ticks = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(period));
    return {{"op", "ack"},
            {"payload",
             {{"period_ticks", sess->period_ticks},
              {"rate_hz", 1.0 / (static_cast<double>(sess->period_ticks) * dt_control_)}}}};
  }
  if (op == "telemetry" || op == "frame" || op == "ack" || op == "error") {
    throw RequestError{"unsupported_op", "'" + op + "' is server-to-client only"};
  }
  throw RequestError{"unknown_op", "unknown op '" + op + "'"};
}

ojson ControlHub::telemetry_body() const {
  const auto& trace = engine_.trace();
  const auto& r = trace.back();
  json wheels = ojson::array();
  for (const auto& w : r.wheels) {
    wheels.push_back({{"setpoint_rad_s", w.setpoint_rad_s},
                      {"speed_rad_s", w.speed_rad_s},
                      {"current_a", w.current_a},
                      {"voltage_v", w.voltage_v}});
  }
  return {{"tick", r.tick},
          {"time_s", r.time_s},
          {"pose", pose_json(r.pose)},
          {"twist",
           {{"vx", r.twist.vx * 1000.0},
            {"vy", r.twist.vy * 1000.0},
            {"omega", r.twist.omega * 180.0 / kPi}}},
          {"wheels", wheels},
          {"ir", r.ir_v},
          {"bumper", r.bumper},
          {"cmd", command_json(r.command)},
          {"controller", to_string(engine_.state().controller)},
          {"reason", r.reason}};
}

bool ControlHub::step() {
  std::lock_guard lock(mutex_);
  const bool stepped = engine_.step();
  if (!stepped || engine_.trace().empty()) return stepped;
  const std::uint64_t tick = engine_.control_ticks();
  ojson body;
  for (auto& [id, s] : sessions_) {
    if (s.period_ticks == 0 || tick % s.period_ticks != 0) continue;
    if (body.is_null()) body = telemetry_body();
    body["dropped"] = s.outbox->dropped();
    ojson msg{{"op", "telemetry"}, {"seq", ++s.telemetry_seq}, {"payload", body}};
    s.outbox->push_telemetry(dump_line(msg));
  }
  return stepped;
}

bool ControlHub::finished() const {
  std::lock_guard lock(mutex_);
  return engine_.finished();
}

std::uint64_t ControlHub::control_ticks() const {
  std::lock_guard lock(mutex_);
  return engine_.control_ticks();
}

std::string ControlHub::trace_csv() const {
  std::lock_guard lock(mutex_);
  return sim::trace_csv(engine_.trace());
}

sim::RunSummary ControlHub::summary() const {
  std::lock_guard lock(mutex_);
  return engine_.summary();
}

std::vector<sim::ScheduledCommand> ControlHub::applied_commands() const {
  std::lock_guard lock(mutex_);
  return engine_.applied_commands();
}

std::uint64_t ControlHub::dropped(std::uint64_t session) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session);
  return it == sessions_.end() ? 0 : it->second.outbox->dropped();
}

}  // namespace omnibot::net
