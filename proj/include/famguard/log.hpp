#pragma once

#include <functional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace famguard::log {

/// Receives one JSON object per record. The default sink writes a JSON line to stderr.
using Sink = std::function<void(const nlohmann::json&)>;

/// Replaces the process-wide sink and returns the previous one. Thread-safe.
Sink set_sink(Sink sink);

/// Emits {"level":"warn","event":event, ...fields}.
void warn(std::string_view event, nlohmann::json fields = nlohmann::json::object());

void info(std::string_view event, nlohmann::json fields = nlohmann::json::object());

}  // namespace famguard::log
