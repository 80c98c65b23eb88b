#include "support.hpp"

#include <fstream>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "omnibot/net/hub.hpp"

namespace omnibot::testing {

std::vector<sim::ScheduledCommand> shipped_commands(const std::string& name) {
  std::ifstream in(scenario_path(name));
  if (!in) throw std::runtime_error("cannot open " + name);
  std::vector<sim::ScheduledCommand> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(sim::scheduled_command_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

namespace {

using nlohmann::json;

bool matches(const json& expected, const json& actual) {
  if (expected.is_string() && expected.get<std::string>() == "*") return true;
  if (expected.is_object()) {
    if (!actual.is_object() || expected.size() != actual.size()) return false;
    for (const auto& [k, v] : expected.items()) {
      if (!actual.contains(k) || !matches(v, actual.at(k))) return false;
    }
    return true;
  }
  if (expected.is_array()) {
    if (!actual.is_array() || expected.size() != actual.size()) return false;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (!matches(expected[i], actual[i])) return false;
    }
    return true;
  }
  if (expected.is_number() && actual.is_number()) {
    return expected.get<double>() == actual.get<double>();
  }
  return expected == actual;
}

}  // namespace

TranscriptResult run_transcript(const std::filesystem::path& transcript, const Scenario& scenario,
                                std::ostream* record) {
  TranscriptResult result;
  std::ifstream in(transcript);
  if (!in) {
    result.failures.push_back("cannot open " + transcript.string());
    return result;
  }
  net::ControlHub hub(scenario);
  auto box = std::make_shared<net::Outbox>();
  const auto session = hub.open_session(box);
  std::vector<std::string> pending;
  std::size_t next = 0;
  auto collect = [&] {
    while (auto m = box->try_pop()) pending.push_back(m->data);
    if (record) {
      for (; next < pending.size(); ++next) *record << "< " << pending[next] << "\n";
    }
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    const std::string body = line.size() > 2 ? line.substr(2) : "";
    if (line.empty() || line[0] == '#') {
      if (record) *record << line << "\n";
    } else if (line[0] == '>') {
      if (record) *record << line << "\n";
      const json req = json::parse(body, nullptr, false);
      if (req.is_object() && req.contains("op") && req["op"].is_string()) {
        result.request_ops.insert(req["op"].get<std::string>());
      }
      hub.handle_line(session, body);
      collect();
    } else if (line[0] == '=') {
      if (record) *record << line << "\n";
      for (int k = std::stoi(body); k > 0; --k) hub.step();
      collect();
    } else if (line[0] == '<') {
      if (record) continue;
      if (next >= pending.size()) {
        result.failures.push_back(where + "no message for " + body);
        continue;
      }
      const json actual = json::parse(pending[next], nullptr, false);
      if (actual.is_discarded() || !matches(json::parse(body), actual)) {
        result.failures.push_back(where + "expected " + body + "\n  actual " + pending[next]);
      } else {
        result.reply_ops.insert(actual.at("op").get<std::string>());
        ++result.exchanged;
      }
      ++next;
    } else {
      result.failures.push_back(where + "unrecognized transcript line");
    }
  }
  if (!record && next < pending.size()) {
    result.failures.push_back("unexpected extra message: " + pending[next]);
  }
  return result;
}

}  // namespace omnibot::testing
