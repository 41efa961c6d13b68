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

// Closed-vocabulary bigram language model read from a JSON table:
//
//   {"vocabulary": ["A", "B", " "],
//    "table": {"START": {"A": 0.5, "B": 0.5},
//              "A": {"B": 1.0}, ...}}
//
// Every vocabulary entry and START must have a row; tokens missing from a
// row have probability 0. Tokenization is greedy longest match.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cts/backend.hpp"
#include "cts/errors.hpp"

namespace cts {

inline constexpr std::string_view kStartKey = "START";

class ToyLmSpec {
 public:
  using Table = std::map<std::string, std::map<std::string, double>>;

  static constexpr double kRowTolerance = 1e-9;

  ToyLmSpec(std::vector<std::string> vocabulary, const Table& table) : vocabulary_(std::move(vocabulary)) {
    if (vocabulary_.empty()) throw ConfigError("toy vocabulary is empty");
    for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
      const std::string& tok = vocabulary_[i];
      if (tok.empty()) throw ConfigError("toy vocabulary contains an empty token");
      if (tok == kStartKey) throw ConfigError("'START' is reserved and cannot be a vocabulary token");
      if (!index_.emplace(tok, static_cast<std::uint32_t>(i)).second) {
        throw ConfigError("duplicate toy vocabulary token '" + tok + "'");
      }
      max_token_bytes_ = std::max(max_token_bytes_, tok.size());
    }
    const std::size_t v = vocabulary_.size();
    probs_.assign((v + 1) * v, 0.0);
    logprobs_.assign((v + 1) * v, kNegInf);
    for (const auto& [prev, row] : table) {
      std::size_t r = 0;
      if (prev != kStartKey) {
        auto it = index_.find(prev);
        if (it == index_.end()) throw ConfigError("table row '" + prev + "' is not a vocabulary token");
        r = it->second + 1;
      }
      double sum = 0.0;
      for (const auto& [tok, p] : row) {
        auto it = index_.find(tok);
        if (it == index_.end()) throw ConfigError("row '" + prev + "' names unknown token '" + tok + "'");
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probability out of [0,1] in row '" + prev + "'");
        probs_[r * v + it->second] = p;
        logprobs_[r * v + it->second] = p > 0.0 ? std::log2(p) : kNegInf;
        sum += p;
      }
      if (std::abs(sum - 1.0) > kRowTolerance) {
        throw ConfigError("row '" + prev + "' sums to " + std::to_string(sum) + ", expected 1");
      }
    }
    if (!table.contains(std::string(kStartKey))) throw ConfigError("table has no START row");
    for (const auto& tok : vocabulary_) {
      if (!table.contains(tok)) throw ConfigError("table has no row for token '" + tok + "'");
    }
  }

  static ToyLmSpec from_json(const nlohmann::json& j) {
    try {
      return ToyLmSpec(j.at("vocabulary").get<std::vector<std::string>>(), j.at("table").get<Table>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid toy LM spec: ") + e.what());
    }
  }

  static ToyLmSpec load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open toy LM spec '" + path.string() + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("toy LM spec '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["vocabulary"] = vocabulary_;
    nlohmann::ordered_json table = nlohmann::ordered_json::object();
    const std::size_t v = vocabulary_.size();
    for (std::size_t r = 0; r <= v; ++r) {
      nlohmann::ordered_json row = nlohmann::ordered_json::object();
      for (std::size_t c = 0; c < v; ++c) {
        if (probs_[r * v + c] > 0.0) row[vocabulary_[c]] = probs_[r * v + c];
      }
      table[r == 0 ? std::string(kStartKey) : vocabulary_[r - 1]] = std::move(row);
    }
    j["table"] = std::move(table);
    return j;
  }

  const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }
  std::size_t size() const noexcept { return vocabulary_.size(); }
  std::size_t max_token_bytes() const noexcept { return max_token_bytes_; }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return TokenId{it->second};
  }

  // P(token | prev); prev = nullopt means START.
  double probability(std::optional<TokenId> prev, TokenId token) const {
    return probs_[row(prev) * vocabulary_.size() + token.value];
  }

  double logprob_bits(std::optional<TokenId> prev, TokenId token) const {
    return logprobs_[row(prev) * vocabulary_.size() + token.value];
  }

 private:
  std::size_t row(std::optional<TokenId> prev) const { return prev ? prev->value + 1 : 0; }

  std::vector<std::string> vocabulary_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<double> probs_;     // (|V|+1) x |V|, row 0 = START
  std::vector<double> logprobs_;  // same layout, log2
  std::size_t max_token_bytes_ = 0;
};

// Immutable after construction, so one instance can be shared across threads.
class ToyBackend final : public LogprobBackend {
 public:
  explicit ToyBackend(ToyLmSpec spec) : spec_(std::move(spec)) {}

  const ToyLmSpec& spec() const noexcept { return spec_; }

  std::vector<Token> tokenize(std::string_view text) const override {
    std::vector<Token> tokens;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t len = longest_match(text, pos);
      if (len == 0) {
        std::size_t stop = pos + 1;
        while (stop < text.size() && longest_match(text, stop) == 0) ++stop;
        while (stop < text.size() && (static_cast<unsigned char>(text[stop]) & 0xC0) == 0x80) ++stop;
        throw BackendError(BackendErrorKind::kUnknownToken, "text at byte " + std::to_string(pos) +
                                                                " is outside the toy vocabulary: '" +
                                                                std::string(text.substr(pos, stop - pos)) + "'");
      }
      tokens.push_back({*spec_.find(text.substr(pos, len)), pos, len});
      pos += len;
    }
    return tokens;
  }

  LogprobResponse logprobs(const LogprobRequest& request) const override {
    validate_request(request, *this);
    LogprobResponse response;
    response.logprobs_bits.reserve(request.end - request.start);
    for (std::size_t t = request.start; t < request.end; ++t) {
      std::optional<TokenId> prev;
      if (t > 0) prev = request.context[t - 1];
      response.logprobs_bits.push_back(spec_.logprob_bits(prev, request.context[t]));
    }
    return response;
  }

  // The START row acts as the begin-of-sequence context.
  bool scores_first_position() const override { return true; }

  std::size_t vocab_size() const override { return spec_.size(); }

  std::string describe() const override { return "toy(" + std::to_string(spec_.size()) + " tokens)"; }

 private:
  std::size_t longest_match(std::string_view text, std::size_t pos) const {
    std::size_t max_len = std::min(spec_.max_token_bytes(), text.size() - pos);
    for (std::size_t len = max_len; len > 0; --len) {
      if (spec_.find(text.substr(pos, len))) return len;
    }
    return 0;
  }

  ToyLmSpec spec_;
};

}  // namespace cts
