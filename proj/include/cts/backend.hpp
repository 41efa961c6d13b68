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

// The log-probability contract every scoring model implements.
//
// All log probabilities are base 2. A backend maps a token context to
// log2 P(context[t] | context[0..t)) for each t in a requested span.

#pragma once

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cts/errors.hpp"

namespace cts {

struct TokenId {
  std::uint32_t value = 0;

  auto operator<=>(const TokenId&) const = default;
};

// A token and the byte range of its surface text within the tokenized string.
struct Token {
  TokenId id;
  std::size_t offset = 0;
  std::size_t length = 0;

  std::string_view span(std::string_view text) const { return text.substr(offset, length); }

  bool operator==(const Token&) const = default;
};

struct LogprobRequest {
  std::vector<TokenId> context;
  std::size_t start = 0;  // half-open [start, end)
  std::size_t end = 0;
};

struct LogprobResponse {
  std::vector<double> logprobs_bits;

  bool operator==(const LogprobResponse&) const = default;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

// PPL = 2^(-log2 P) = 1/P. Zero probability maps to +inf.
inline double ppl_of(double logprob_bits) {
  if (logprob_bits == kNegInf) return kPosInf;
  return std::exp2(-logprob_bits);
}

inline std::vector<TokenId> token_ids(std::span<const Token> tokens) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const Token& t : tokens) ids.push_back(t.id);
  return ids;
}

class LogprobBackend {
 public:
  virtual ~LogprobBackend() = default;

  virtual std::vector<Token> tokenize(std::string_view text) const = 0;

  virtual LogprobResponse logprobs(const LogprobRequest& request) const = 0;

  // Default: one call per request. Remote backends override to batch.
  virtual std::vector<LogprobResponse> logprobs_batch(std::span<const LogprobRequest> requests) const {
    std::vector<LogprobResponse> out;
    out.reserve(requests.size());
    for (const auto& r : requests) out.push_back(logprobs(r));
    return out;
  }

  // Whether position 0 can be scored, i.e. the backend supplies its own
  // begin-of-sequence context.
  virtual bool scores_first_position() const = 0;

  // 0 when the vocabulary size is not known to the client.
  virtual std::size_t vocab_size() const = 0;

  virtual std::string describe() const = 0;
};

inline void validate_request(const LogprobRequest& request, const LogprobBackend& backend) {
  const std::size_t n = request.context.size();
  if (!(request.start < request.end && request.end <= n)) {
    throw BackendError(BackendErrorKind::kInvalidRequest,
                       "invalid target span [" + std::to_string(request.start) + ", " +
                           std::to_string(request.end) + ") for context of length " + std::to_string(n));
  }
  if (request.start == 0 && !backend.scores_first_position()) {
    throw BackendError(BackendErrorKind::kInvalidRequest,
                       "position 0 has no predictive context and the backend has no begin-of-sequence token");
  }
  if (std::size_t v = backend.vocab_size(); v != 0) {
    for (TokenId id : request.context) {
      if (id.value >= v) {
        throw BackendError(BackendErrorKind::kInvalidRequest,
                           "token id " + std::to_string(id.value) + " outside vocabulary of size " + std::to_string(v));
      }
    }
  }
}

}  // namespace cts
