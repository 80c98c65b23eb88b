#include "omnibot/scenario.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "omnibot/kinematics.hpp"

namespace omnibot {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kMaxPhysicsStep = 0.002;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

struct Entry {
  int line = 0;
  std::string key;
  std::string_view value;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ScenarioError(ScenarioError::Kind::parse, line, key, msg);
  }

  std::vector<double> numbers() const {
    std::vector<double> out;
    for (auto word : split_words(value)) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
      if (ec != std::errc{} || ptr != word.data() + word.size() || !std::isfinite(v)) {
        fail(fmt::format("'{}' is not a finite number", word));
      }
      out.push_back(v);
    }
    return out;
  }

  std::vector<double> numbers(std::size_t count) const {
    auto v = numbers();
    if (v.size() != count) fail(fmt::format("expected {} number(s), got {}", count, v.size()));
    return v;
  }

  double number() const { return numbers(1)[0]; }

  std::string word() const {
    const auto words = split_words(value);
    if (words.size() != 1) fail("expected a single word");
    return std::string(words[0]);
  }

  std::uint64_t unsigned_integer() const {
    const std::string w = word();
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc{} || ptr != w.data() + w.size()) fail("expected an unsigned integer");
    return v;
  }

  int integer() const {
    const double v = number();
    if (v != std::floor(v) || std::abs(v) > 1e9) fail("expected an integer");
    return static_cast<int>(v);
  }

  bool boolean() const {
    const std::string w = word();
    if (w == "true" || w == "1") return true;
    if (w == "false" || w == "0") return false;
    fail("expected true or false");
  }
};

using Handler = std::function<void(const Entry&, Scenario&)>;

struct Section {
  std::map<std::string, Handler, std::less<>> keys;
  std::set<std::string, std::less<>> repeatable;
};


template <typename F>
Handler number_into(F&& accessor) {
  return [accessor](const Entry& e, Scenario& s) { accessor(s) = e.number(); };
}

struct ParseFlags {
  bool have_bounds = false;
  bool have_spawn = false;
  bool have_controller = false;
  bool have_duration = false;
  bool allow_constant_mismatch = false;
};

std::map<std::string, Section, std::less<>> make_sections(ParseFlags& flags) {
  std::map<std::string, Section, std::less<>> sections;

  Section& scene = sections["scene"];
  scene.keys["bounds"] = [&flags](const Entry& e, Scenario& s) {
    const auto v = e.numbers(4);
    s.scene.bounds = {v[0], v[1], v[2], v[3]};
    flags.have_bounds = true;
  };
  scene.keys["spawn"] = [&flags](const Entry& e, Scenario& s) {
    const auto v = e.numbers(3);
    s.scene.spawn = {v[0], v[1], normalize_angle(v[2] * kDegToRad)};
    flags.have_spawn = true;
  };
  scene.keys["circle"] = [](const Entry& e, Scenario& s) {
    const auto v = e.numbers(3);
    if (v[2] <= 0.0) e.fail("circle radius must be > 0");
    s.scene.obstacles.emplace_back(Circle{{v[0], v[1]}, v[2]});
  };
  scene.keys["segment"] = [](const Entry& e, Scenario& s) {
    const auto v = e.numbers(5);
    if (v[4] <= 0.0) e.fail("segment thickness must be > 0");
    s.scene.obstacles.emplace_back(Segment{{v[0], v[1]}, {v[2], v[3]}, v[4]});
  };
  scene.keys["line"] = [](const Entry& e, Scenario& s) {
    const auto v = e.numbers();
    if (v.size() < 5 || v.size() % 2 == 0) e.fail("expected width followed by at least two x y vertices");
    if (v[0] <= 0.0) e.fail("line width must be > 0");
    FloorLine line;
    line.width_m = v[0];
    for (std::size_t i = 1; i + 1 < v.size(); i += 2) line.vertices.emplace_back(v[i], v[i + 1]);
    s.scene.floor_lines.push_back(std::move(line));
  };
  scene.repeatable = {"circle", "segment", "line"};

  Section& robot = sections["robot"];
  robot.keys["wheel_radius_m"] = number_into([](Scenario& s) -> double& { return s.robot.wheel_radius_m; });
  robot.keys["wheel_distance_m"] = number_into([](Scenario& s) -> double& { return s.robot.wheel_distance_m; });
  robot.keys["gear_ratio"] = number_into([](Scenario& s) -> double& { return s.robot.gear_ratio; });
  robot.keys["mass_kg"] = number_into([](Scenario& s) -> double& { return s.robot.mass_kg; });
  robot.keys["inertia_z_kg_m2"] = number_into([](Scenario& s) -> double& { return s.robot.inertia_z_kg_m2; });
  robot.keys["max_speed_m_s"] = number_into([](Scenario& s) -> double& { return s.robot.max_speed_m_s; });
  robot.keys["max_omega_rad_s"] = number_into([](Scenario& s) -> double& { return s.robot.max_omega_rad_s; });
  robot.keys["body_radius_m"] = number_into([](Scenario& s) -> double& { return s.robot.body_radius_m; });
  robot.keys["mount_angles_rad"] = [](const Entry& e, Scenario& s) {
    const auto v = e.numbers(3);
    for (int i = 0; i < 3; ++i) s.robot.mount_angles_rad[i] = v[i];
  };
  robot.keys["mount_angles_deg"] = [](const Entry& e, Scenario& s) {
    const auto v = e.numbers(3);
    for (int i = 0; i < 3; ++i) s.robot.mount_angles_rad[i] = v[i] * kDegToRad;
  };

  Section& run = sections["run"];
  run.keys["controller"] = [&flags](const Entry& e, Scenario& s) {
    try {
      s.controller = parse_controller(e.word());
    } catch (const std::invalid_argument& ex) {
      e.fail(ex.what());
    }
    flags.have_controller = true;
  };
  run.keys["duration_s"] = [&flags](const Entry& e, Scenario& s) {
    s.duration_s = e.number();
    flags.have_duration = true;
  };
  run.keys["dt_physics_s"] = number_into([](Scenario& s) -> double& { return s.dt_physics_s; });
  run.keys["dt_control_s"] = number_into([](Scenario& s) -> double& { return s.dt_control_s; });
  run.keys["seed"] = [](const Entry& e, Scenario& s) { s.seed = e.unsigned_integer(); };

  Section& motor = sections["motor"];
  motor.keys["resistance_ohm"] = number_into([](Scenario& s) -> double& { return s.motor.resistance_ohm; });
  motor.keys["inductance_h"] = number_into([](Scenario& s) -> double& { return s.motor.inductance_h; });
  motor.keys["back_emf_v_s_rad"] = number_into([](Scenario& s) -> double& { return s.motor.back_emf_v_s_rad; });
  motor.keys["torque_nm_a"] = number_into([](Scenario& s) -> double& { return s.motor.torque_nm_a; });
  motor.keys["rotor_inertia_kg_m2"] = number_into([](Scenario& s) -> double& { return s.motor.rotor_inertia_kg_m2; });
  motor.keys["viscous_friction_nm_s"] = number_into([](Scenario& s) -> double& { return s.motor.viscous_friction_nm_s; });
  motor.keys["max_voltage_v"] = number_into([](Scenario& s) -> double& { return s.motor.max_voltage_v; });
  motor.keys["allow_constant_mismatch"] = [&flags](const Entry& e, Scenario&) {
    flags.allow_constant_mismatch = e.boolean();
  };

  Section& pid = sections["pid"];
  pid.keys["kp"] = [](const Entry& e, Scenario& s) { for (auto& g : s.gains) g.kp = e.number(); };
  pid.keys["ki"] = [](const Entry& e, Scenario& s) { for (auto& g : s.gains) g.ki = e.number(); };
  pid.keys["kd"] = [](const Entry& e, Scenario& s) { for (auto& g : s.gains) g.kd = e.number(); };
  pid.keys["integral_limit"] = number_into([](Scenario& s) -> double& { return s.pid_integral_limit; });
  for (int w = 0; w < 3; ++w) {
    pid.keys[fmt::format("wheel{}", w)] = [w](const Entry& e, Scenario& s) {
      const auto v = e.numbers(3);
      s.gains[w] = {v[0], v[1], v[2]};
    };
  }

  Section& sensors = sections["sensors"];
  sensors.keys["ir_max_range_m"] = number_into([](Scenario& s) -> double& { return s.sensors.ir_max_range_m; });
  sensors.keys["ir_noise_v"] = number_into([](Scenario& s) -> double& { return s.sensors.ir_noise_v; });
  sensors.keys["camera_noise"] = number_into([](Scenario& s) -> double& { return s.sensors.camera_noise; });
  sensors.keys["camera_width"] = [](const Entry& e, Scenario& s) { s.sensors.camera_width_px = e.integer(); };
  sensors.keys["camera_cadence_ticks"] = [](const Entry& e, Scenario& s) {
    s.sensors.camera_cadence_ticks = e.integer();
  };

  Section& lf = sections["line_follow"];
  lf.keys["dead_band_px"] = number_into([](Scenario& s) -> double& { return s.line_follow.dead_band_px; });
  lf.keys["forward_mm_s"] = number_into([](Scenario& s) -> double& { return s.line_follow.forward_mm_s; });
  lf.keys["turn_deg_s"] = number_into([](Scenario& s) -> double& { return s.line_follow.turn_deg_s; });
  lf.keys["lost_line"] = [](const Entry& e, Scenario& s) {
    const std::string w = e.word();
    if (w == "stop") {
      s.line_follow.lost_line_policy = controllers::LostLinePolicy::stop;
    } else if (w == "rotate_search") {
      s.line_follow.lost_line_policy = controllers::LostLinePolicy::rotate_search;
    } else {
      e.fail("expected stop or rotate_search");
    }
  };
  return sections;
}

[[noreturn]] void invalid(const std::string& field, const std::string& msg) {
  throw ScenarioError(ScenarioError::Kind::validation, 0, field, msg);
}

}  // namespace

std::string_view to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::external: return "external";
    case ControllerKind::line_follow: return "line_follow";
    case ControllerKind::avoid_obstacles: return "avoid_obstacles";
  }
  return "external";
}

ControllerKind parse_controller(std::string_view name) {
  if (name == "external") return ControllerKind::external;
  if (name == "line_follow") return ControllerKind::line_follow;
  if (name == "avoid_obstacles") return ControllerKind::avoid_obstacles;
  throw std::invalid_argument(fmt::format("unknown controller '{}'", name));
}

int Scenario::substeps() const {
  return static_cast<int>(std::llround(dt_control_s / dt_physics_s));
}

drivetrain::DrivetrainConfig Scenario::drivetrain_config() const {
  drivetrain::DrivetrainConfig cfg;
  cfg.robot = robot;
  cfg.motor = motor;
  cfg.gains = gains;
  cfg.integral_limit = pid_integral_limit;
  return cfg;
}

ScenarioError::ScenarioError(Kind kind, int line, std::string field, const std::string& message)
    : std::runtime_error(
          fmt::format("{}{}{}: {}", kind == Kind::parse ? "parse error" : "invalid scenario",
                      line > 0 ? fmt::format(" at line {}", line) : std::string(),
                      field.empty() ? std::string() : fmt::format(" [{}]", field), message)),
      kind_(kind),
      line_(line),
      field_(std::move(field)) {}

void validate(const Scenario& s) {
  const Bounds& b = s.scene.bounds;
  if (!(b.x0 < b.x1 && b.y0 < b.y1)) invalid("bounds", "bounds must satisfy x0 < x1 and y0 < y1");

  try {
    validate(s.robot);
    kinematics::make_jacobian(s.robot);
  } catch (const std::invalid_argument& e) {
    invalid("robot", e.what());
  }
  try {
    drivetrain::validate(s.motor);
  } catch (const std::invalid_argument& e) {
    invalid("motor", e.what());
  }
  for (std::size_t w = 0; w < 3; ++w) {
    if (!drivetrain::valid(s.gains[w])) invalid("pid", fmt::format("wheel {} gains must be >= 0", w));
  }
  if (!(s.pid_integral_limit > 0.0)) invalid("integral_limit", "integral_limit must be > 0");

  const Vec2 spawn = s.scene.spawn.position();
  if (!b.contains(spawn)) invalid("spawn", "spawn outside bounds");
  for (const auto& c : surface_contacts(spawn, s.scene)) {
    if (c.signed_distance <= 0.0) invalid("spawn", "spawn inside obstacle");
  }
  if (point_obstacle_distance(spawn, s.scene) <= s.robot.body_radius_m) {
    invalid("spawn", "spawn overlaps obstacle (robot footprint in contact)");
  }
  for (const auto& line : s.scene.floor_lines) {
    if (line.vertices.size() < 2) invalid("line", "floor line needs at least two vertices");
    if (!(line.width_m > 0.0)) invalid("line", "floor line width must be > 0");
  }

  if (!(s.duration_s > 0.0)) invalid("duration_s", "duration_s must be > 0");
  if (!(s.dt_physics_s > 0.0 && s.dt_physics_s <= kMaxPhysicsStep)) {
    invalid("dt_physics_s", "dt_physics_s must be in (0, 0.002]");
  }
  if (!(s.dt_control_s > 0.0)) invalid("dt_control_s", "dt_control_s must be > 0");
  const double ratio = s.dt_control_s / s.dt_physics_s;
  if (ratio < 0.5 || std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
    invalid("dt_control_s", "dt_control_s must be an integer multiple of dt_physics_s");
  }

  if (s.sensors.camera_width_px != 320 && s.sensors.camera_width_px != 640) {
    invalid("camera_width", "camera_width must be 320 or 640");
  }
  if (s.sensors.camera_cadence_ticks < 1) invalid("camera_cadence_ticks", "must be >= 1");
  if (!(s.sensors.ir_max_range_m > 0.0)) invalid("ir_max_range_m", "must be > 0");
  if (s.sensors.ir_noise_v < 0.0 || s.sensors.camera_noise < 0.0) invalid("sensors", "noise must be >= 0");
  try {
    controllers::validate(s.line_follow);
  } catch (const std::invalid_argument& e) {
    invalid("line_follow", e.what());
  }
}

Scenario load_scenario(std::string_view text) {
  ParseFlags flags;
  const auto sections = make_sections(flags);
  Scenario s;
  const Section* current = nullptr;
  std::string current_name;
  std::set<std::string> seen;

  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string_view line = trim(raw);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ScenarioError(ScenarioError::Kind::parse, line_no, "", "unterminated section header");
      current_name = std::string(trim(line.substr(1, line.size() - 2)));
      const auto it = sections.find(current_name);
      if (it == sections.end()) {
        throw ScenarioError(ScenarioError::Kind::parse, line_no, current_name, "unknown section");
      }
      current = &it->second;
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ScenarioError(ScenarioError::Kind::parse, line_no, "", "expected 'key = value'");
    }
    Entry entry{line_no, std::string(trim(line.substr(0, eq))), trim(line.substr(eq + 1))};
    if (current == nullptr) entry.fail("key outside of any section");
    const auto handler = current->keys.find(entry.key);
    if (handler == current->keys.end()) entry.fail(fmt::format("unknown key in [{}]", current_name));
    const std::string qualified = current_name + "." + entry.key;
    if (!current->repeatable.contains(entry.key) && !seen.insert(qualified).second) {
      entry.fail("duplicate key");
    }
    if (entry.value.empty()) entry.fail("missing value");
    try {
      handler->second(entry, s);
    } catch (const std::invalid_argument& e) {
      entry.fail(e.what());
    }
  }

  if (!flags.have_bounds) invalid("bounds", "missing [scene] bounds");
  if (!flags.have_spawn) invalid("spawn", "missing [scene] spawn");
  if (!flags.have_controller) invalid("controller", "missing [run] controller");
  if (!flags.have_duration) invalid("duration_s", "missing [run] duration_s");
  if (!flags.allow_constant_mismatch && s.motor.back_emf_v_s_rad != s.motor.torque_nm_a) {
    invalid("motor", "back_emf_v_s_rad must equal torque_nm_a (set allow_constant_mismatch = true to override)");
  }
  s.line_follow.width_px = s.sensors.camera_width_px;
  validate(s);
  return s;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Scenario load_scenario_file(const std::filesystem::path& path) {
  return load_scenario(read_text_file(path));
}

}  // namespace omnibot
