#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "crs/cli.hpp"
#include "crs/errors.hpp"

namespace crs::cli {

HttpJsonClient::HttpJsonClient(std::string endpoint, std::string bearer_token)
    : endpoint_(std::move(endpoint)), token_(std::move(bearer_token)) {
  if (!endpoint_.starts_with("http://") && !endpoint_.starts_with("https://"))
    throw ValidationError("endpoint must be an http(s) URL: " + endpoint_);
}

std::string HttpJsonClient::complete(const protocol::CompletionRequest& request) {
  const auto scheme_end = endpoint_.find("://") + 3;
  const auto path_start = endpoint_.find('/', scheme_end);
  const std::string base = endpoint_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);

  httplib::Client client(base);
  client.set_connection_timeout(30);
  client.set_read_timeout(300);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  nlohmann::json body{{"prompt", request.prompt},
                      {"temperature", request.decoding.temperature},
                      {"top_p", request.decoding.top_p},
                      {"max_tokens", request.decoding.max_tokens},
                      {"seed", request.decoding.seed ? nlohmann::json(*request.decoding.seed)
                                                     : nlohmann::json()}};
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) throw protocol::TransportError("request failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw protocol::TransportError("HTTP " + std::to_string(res->status));
  try {
    return nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw protocol::TransportError(std::string("unreadable reply: ") + e.what());
  }
}

}  // namespace crs::cli
