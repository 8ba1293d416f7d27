#include "bikelab/http.hpp"

#include <httplib.h>

namespace bikelab::http {

namespace {

httplib::Client make_client(const std::string& base_url, int timeout_seconds) {
  httplib::Client cli(base_url);
  cli.set_connection_timeout(timeout_seconds, 0);
  cli.set_read_timeout(timeout_seconds, 0);
  cli.set_write_timeout(timeout_seconds, 0);
  return cli;
}

Response convert(const httplib::Result& res) {
  if (!res) return {};
  return {res->status, res->body};
}

}  // namespace

Response post(const std::string& base_url, const std::string& path, const std::string& body,
              const std::string& content_type, int timeout_seconds,
              const std::string& bearer_token) {
  auto cli = make_client(base_url, timeout_seconds);
  httplib::Headers headers;
  if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
  return convert(cli.Post(path, headers, body, content_type));
}

Response get(const std::string& base_url, const std::string& path, int timeout_seconds) {
  auto cli = make_client(base_url, timeout_seconds);
  return convert(cli.Get(path));
}

json post_json(const std::string& base_url, const std::string& path, const json& body,
               ErrorCode code, int timeout_seconds, const std::string& bearer_token) {
  Response r = post(base_url, path, body.dump(), "application/json", timeout_seconds, bearer_token);
  if (r.status == 0) throw Error(code, "no response from " + base_url + path);
  if (r.status < 200 || r.status >= 300) {
    throw Error(code, base_url + path + " returned HTTP " + std::to_string(r.status) + ": " +
                          r.body.substr(0, 200));
  }
  try {
    return json::parse(r.body);
  } catch (const json::exception& e) {
    throw Error(code, base_url + path + " returned invalid JSON: " + e.what());
  }
}

}  // namespace bikelab::http
