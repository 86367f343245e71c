#include "famguard/log.hpp"

#include <iostream>
#include <mutex>

namespace famguard::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink = [](const nlohmann::json& record) { std::cerr << record.dump() << '\n'; };
  return sink;
}

void emit(std::string_view level, std::string_view event, nlohmann::json fields) {
  nlohmann::json record = nlohmann::json::object();
  record["level"] = level;
  record["event"] = event;
  if (fields.is_object()) {
    for (auto& [key, value] : fields.items()) record[key] = std::move(value);
  }
  std::lock_guard lock(sink_mutex());
  if (current_sink()) current_sink()(record);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

void warn(std::string_view event, nlohmann::json fields) { emit("warn", event, std::move(fields)); }

void info(std::string_view event, nlohmann::json fields) { emit("info", event, std::move(fields)); }

}  // namespace famguard::log
