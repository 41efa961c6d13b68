// Copyright 2026 The CTS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// JSON-over-HTTP scoring client.
//
//   POST <base>/logprobs   {"context_ids": [..], "start": s, "end": e}
//                       -> {"logprobs_bits": [..]}
//                          (a JSON array of requests gets an array back)
//   POST <base>/tokenize   {"text": "..."}
//                       -> {"ids": [..], "offsets": [[b, e], ..]}
//
// Scoring only: no sampling parameters are ever sent.

#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cts/backend.hpp"
#include "cts/errors.hpp"

namespace cts {

struct HttpBackendConfig {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::optional<std::string> bearer_token;
  std::size_t max_in_flight = 8;
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{100};
  std::chrono::seconds timeout{60};
  bool natural_log = false;  // server reports ln P; converted to bits here
  std::optional<TokenId> bos_token;  // prepended so position 0 can be scored
  std::size_t vocab_size = 0;        // 0 = unchecked
};

class HttpBackend final : public LogprobBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config)
      : config_(std::move(config)), in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, config_.max_in_flight))) {
    split_url();
  }

  const HttpBackendConfig& config() const noexcept { return config_; }

  std::vector<Token> tokenize(std::string_view text) const override {
    if (text.empty()) return {};
    nlohmann::json body = {{"text", std::string(text)}};
    nlohmann::json reply = post("/tokenize", body);
    try {
      const auto& ids = reply.at("ids");
      const auto& offsets = reply.at("offsets");
      if (!ids.is_array() || !offsets.is_array() || ids.size() != offsets.size()) {
        throw BackendError(BackendErrorKind::kProtocol, "tokenize response ids/offsets mismatch");
      }
      std::vector<Token> tokens;
      tokens.reserve(ids.size());
      std::size_t expect = 0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        auto b = offsets[i].at(0).get<std::size_t>();
        auto e = offsets[i].at(1).get<std::size_t>();
        if (b != expect || e <= b || e > text.size()) {
          throw BackendError(BackendErrorKind::kProtocol, "tokenize offsets do not tile the input text");
        }
        tokens.push_back({TokenId{ids[i].get<std::uint32_t>()}, b, e - b});
        expect = e;
      }
      if (expect != text.size()) {
        throw BackendError(BackendErrorKind::kProtocol, "tokenize offsets do not cover the input text");
      }
      return tokens;
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(BackendErrorKind::kProtocol, std::string("malformed tokenize response: ") + e.what());
    }
  }

  LogprobResponse logprobs(const LogprobRequest& request) const override {
    validate_request(request, *this);
    nlohmann::json reply = post("/logprobs", encode(request));
    return decode(reply, request.end - request.start);
  }

  std::vector<LogprobResponse> logprobs_batch(std::span<const LogprobRequest> requests) const override {
    if (requests.empty()) return {};
    nlohmann::json body = nlohmann::json::array();
    for (const auto& r : requests) {
      validate_request(r, *this);
      body.push_back(encode(r));
    }
    nlohmann::json reply = post("/logprobs", body);
    if (!reply.is_array() || reply.size() != requests.size()) {
      throw BackendError(BackendErrorKind::kProtocol, "batch response does not match the number of requests");
    }
    std::vector<LogprobResponse> out;
    out.reserve(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
      out.push_back(decode(reply[i], requests[i].end - requests[i].start));
    }
    return out;
  }

  bool scores_first_position() const override { return config_.bos_token.has_value(); }

  std::size_t vocab_size() const override { return config_.vocab_size; }

  std::string describe() const override { return "http(" + config_.base_url + ")"; }

 private:
  struct Slot {
    explicit Slot(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
    ~Slot() { sem.release(); }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;
    std::counting_semaphore<>& sem;
  };

  nlohmann::json encode(const LogprobRequest& r) const {
    std::vector<std::uint32_t> ids;
    ids.reserve(r.context.size() + 1);
    std::size_t shift = 0;
    if (config_.bos_token) {
      ids.push_back(config_.bos_token->value);
      shift = 1;
    }
    for (TokenId t : r.context) ids.push_back(t.value);
    return {{"context_ids", ids}, {"start", r.start + shift}, {"end", r.end + shift}};
  }

  LogprobResponse decode(const nlohmann::json& reply, std::size_t expected) const {
    auto it = reply.find("logprobs_bits");
    if (it == reply.end() || !it->is_array()) {
      throw BackendError(BackendErrorKind::kProtocol, "response has no logprobs_bits array");
    }
    if (it->size() != expected) {
      throw BackendError(BackendErrorKind::kProtocol, "response has " + std::to_string(it->size()) +
                                                          " logprobs, expected " + std::to_string(expected));
    }
    LogprobResponse out;
    out.logprobs_bits.reserve(expected);
    for (const auto& v : *it) {
      if (!v.is_number()) throw BackendError(BackendErrorKind::kProtocol, "non-numeric logprob in response");
      double lp = v.get<double>();
      if (config_.natural_log) lp /= std::log(2.0);
      if (!std::isfinite(lp) || lp > 0.0) {
        throw BackendError(BackendErrorKind::kProtocol, "logprob out of range: " + v.dump());
      }
      out.logprobs_bits.push_back(lp);
    }
    return out;
  }

  nlohmann::json post(const std::string& endpoint, const nlohmann::json& body) const {
    const std::string payload = body.dump();
    const std::string path = prefix_ + endpoint;
    auto backoff = config_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= std::max(1, config_.max_attempts); ++attempt) {
      {
        Slot slot(in_flight_);
        httplib::Client client(host_);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        client.set_write_timeout(config_.timeout);
        if (config_.bearer_token) client.set_bearer_token_auth(*config_.bearer_token);
        auto res = client.Post(path, payload, "application/json");
        if (!res) {
          last_error = "transport failure: " + httplib::to_string(res.error());
        } else if (res->status == 429 || res->status >= 500) {
          last_error = "server returned HTTP " + std::to_string(res->status);
        } else if (res->status != 200) {
          throw BackendError(BackendErrorKind::kProtocol,
                             "server rejected request with HTTP " + std::to_string(res->status) + ": " + res->body);
        } else {
          try {
            return nlohmann::json::parse(res->body);
          } catch (const nlohmann::json::parse_error& e) {
            throw BackendError(BackendErrorKind::kProtocol, std::string("response is not JSON: ") + e.what());
          }
        }
      }
      if (attempt < config_.max_attempts) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
    }
    throw BackendError(BackendErrorKind::kTransport, "POST " + host_ + path + " failed after " +
                                                         std::to_string(std::max(1, config_.max_attempts)) +
                                                         " attempts: " + last_error);
  }

  void split_url() {
    const std::string& url = config_.base_url;
    std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("backend URL '" + url + "' has no scheme");
    if (url.compare(0, scheme, "http") != 0) {
      throw ConfigError("backend URL '" + url + "': only http:// is supported");
    }
    std::size_t slash = url.find('/', scheme + 3);
    host_ = url.substr(0, slash);
    prefix_ = slash == std::string::npos ? "" : url.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  HttpBackendConfig config_;
  std::string host_;
  std::string prefix_;
  mutable std::counting_semaphore<> in_flight_;
};

}  // namespace cts
