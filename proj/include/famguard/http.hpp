#pragma once

#include <chrono>
#include <memory>
#include <semaphore>
#include <string>

#include <json.hpp>

namespace famguard {

/// Minimal JSON-over-HTTP client shared by the remote model, extractor, and embedding clients.
///
/// Opens a fresh connection per request, so one instance can be used from many threads.
/// At most `max_concurrency` requests are in flight at once.
class HttpJsonClient {
 public:
  struct Options {
    std::chrono::milliseconds timeout{30000};
    int max_concurrency = 8;
  };

  /// `base_url` is "http://host[:port][/prefix]". Throws UsageError on anything else.
  explicit HttpJsonClient(std::string base_url, Options options);
  explicit HttpJsonClient(std::string base_url) : HttpJsonClient(std::move(base_url), Options{}) {}

  /// Throws TransportError (no response or non-2xx status) or ProtocolError (body is not JSON).
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;
  nlohmann::json get(const std::string& path) const;

  const std::string& base_url() const noexcept { return base_url_; }

 private:
  nlohmann::json send(const std::string& method, const std::string& path, const nlohmann::json* body) const;

  std::string base_url_;
  std::string host_;
  int port_ = 80;
  std::string prefix_;
  Options options_;
  std::shared_ptr<std::counting_semaphore<>> slots_;
};

}  // namespace famguard
