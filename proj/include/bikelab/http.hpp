#pragma once
// Thin JSON-over-HTTP client shared by the remote backend, embedder, judge and
// image-edit clients.

#include <string>

#include "bikelab/core.hpp"

namespace bikelab::http {

struct Response {
  int status = 0;
  std::string body;
};

/// `base_url` is scheme://host[:port]. Returns status 0 on transport failure.
Response post(const std::string& base_url, const std::string& path, const std::string& body,
              const std::string& content_type = "application/json", int timeout_seconds = 60,
              const std::string& bearer_token = {});
Response get(const std::string& base_url, const std::string& path, int timeout_seconds = 60);

/// POSTs `body` and returns the parsed reply; non-2xx or transport failure
/// throws Error(`code`).
json post_json(const std::string& base_url, const std::string& path, const json& body,
               ErrorCode code, int timeout_seconds = 60, const std::string& bearer_token = {});

}  // namespace bikelab::http
