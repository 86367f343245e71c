#include "famguard/http.hpp"

#include <httplib.h>

#include "famguard/errors.hpp"

namespace famguard {

HttpJsonClient::HttpJsonClient(std::string base_url, Options options)
    : base_url_(std::move(base_url)), options_(options) {
  static constexpr std::string_view kScheme = "http://";
  if (base_url_.rfind(kScheme, 0) != 0) {
    throw UsageError("endpoint URL must start with http://, got \"" + base_url_ + "\"");
  }
  std::string rest = base_url_.substr(kScheme.size());
  const auto slash = rest.find('/');
  if (slash != std::string::npos) {
    prefix_ = rest.substr(slash);
    rest.resize(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }
  const auto colon = rest.rfind(':');
  if (colon != std::string::npos) {
    try {
      port_ = std::stoi(rest.substr(colon + 1));
    } catch (const std::exception&) {
      throw UsageError("bad port in endpoint URL \"" + base_url_ + "\"");
    }
    rest.resize(colon);
  }
  if (rest.empty()) throw UsageError("missing host in endpoint URL \"" + base_url_ + "\"");
  host_ = rest;
  slots_ = std::make_shared<std::counting_semaphore<>>(std::max(1, options_.max_concurrency));
}

nlohmann::json HttpJsonClient::post(const std::string& path, const nlohmann::json& body) const {
  return send("POST", path, &body);
}

nlohmann::json HttpJsonClient::get(const std::string& path) const { return send("GET", path, nullptr); }

nlohmann::json HttpJsonClient::send(const std::string& method, const std::string& path,
                                    const nlohmann::json* body) const {
  slots_->acquire();
  struct Release {
    std::counting_semaphore<>* s;
    ~Release() { s->release(); }
  } release{slots_.get()};

  httplib::Client cli(host_, port_);
  const auto secs = options_.timeout.count() / 1000;
  const auto usecs = (options_.timeout.count() % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);

  const std::string target = prefix_ + path;
  httplib::Result res = body ? cli.Post(target, body->dump(), "application/json") : cli.Get(target);
  if (!res) {
    throw TransportError(method + " " + base_url_ + path + " failed: " + httplib::to_string(res.error()), 0);
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError(method + " " + base_url_ + path + " returned HTTP " + std::to_string(res->status),
                         res->status);
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(method + " " + base_url_ + path + ": response is not JSON: " + e.what());
  }
}

}  // namespace famguard
