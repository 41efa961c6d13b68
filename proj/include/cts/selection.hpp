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

// Selection configuration, segmentation and rank-based top-alpha selection.
// Everything here is a pure function of its arguments.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cts/backend.hpp"
#include "cts/errors.hpp"

namespace cts {

enum class ScoreSpace { kPplDiff, kBitsDiff };
enum class SelectionScope { kGlobal, kPerSegment };
// Which earlier-segment tokens precede segment j in per-segment scoring.
enum class PrefixMode { kCompressed, kOriginal };

inline constexpr std::string_view kDefaultConditionTemplate = "The correct answer is: {answer}\n";

inline std::string to_string(ScoreSpace s) { return s == ScoreSpace::kPplDiff ? "ppl-diff" : "bits-diff"; }
inline std::string to_string(SelectionScope s) { return s == SelectionScope::kGlobal ? "global" : "per-segment"; }
inline std::string to_string(PrefixMode m) { return m == PrefixMode::kCompressed ? "compressed" : "original"; }

inline ScoreSpace parse_score_space(std::string_view s) {
  if (s == "ppl-diff" || s == "ppl_diff") return ScoreSpace::kPplDiff;
  if (s == "bits-diff" || s == "bits_diff") return ScoreSpace::kBitsDiff;
  throw ConfigError("unknown score space '" + std::string(s) + "'");
}

inline SelectionScope parse_scope(std::string_view s) {
  if (s == "global") return SelectionScope::kGlobal;
  if (s == "per-segment" || s == "per_segment") return SelectionScope::kPerSegment;
  throw ConfigError("unknown selection scope '" + std::string(s) + "'");
}

inline PrefixMode parse_prefix_mode(std::string_view s) {
  if (s == "compressed") return PrefixMode::kCompressed;
  if (s == "original") return PrefixMode::kOriginal;
  throw ConfigError("unknown prefix mode '" + std::string(s) + "'");
}

struct SelectionConfig {
  double alpha = 1.0;
  bool conditional = true;
  std::string condition_template = std::string(kDefaultConditionTemplate);
  std::size_t segment_budget = 512;
  std::size_t boundary_slack = 32;
  ScoreSpace score_space = ScoreSpace::kPplDiff;
  SelectionScope selection_scope = SelectionScope::kGlobal;
  PrefixMode prefix_mode = PrefixMode::kCompressed;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("ratio must be in (0, 1], got " + std::to_string(alpha));
    if (segment_budget < 1) throw ConfigError("segment budget must be at least 1");
    if (boundary_slack >= segment_budget) throw ConfigError("boundary slack must be smaller than the segment budget");
    // An empty template is the zero-condition case and is allowed.
    if (conditional && !condition_template.empty() &&
        condition_template.find("{answer}") == std::string::npos) {
      throw ConfigError("condition template must contain the {answer} placeholder");
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["alpha"] = alpha;
    j["conditional"] = conditional;
    j["condition_template"] = condition_template;
    j["segment_budget"] = segment_budget;
    j["boundary_slack"] = boundary_slack;
    j["score_space"] = to_string(score_space);
    j["selection_scope"] = to_string(selection_scope);
    j["prefix_mode"] = to_string(prefix_mode);
    return j;
  }

  bool operator==(const SelectionConfig&) const = default;
};

struct TokenScoreRow {
  std::size_t position = 0;
  TokenId token;
  std::string span;
  double ppl_uncond = 1.0;
  double ppl_cond = 1.0;
  double score = 0.0;

  bool operator==(const TokenScoreRow&) const = default;
};

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t ordinal = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const Segment&) const = default;
};

struct SelectionResult {
  double threshold = 0.0;  // lowest kept score
  std::vector<bool> kept_mask;
  std::size_t kept_count = 0;

  bool operator==(const SelectionResult&) const = default;
};

// max(1, round_half_up(alpha * n)), clamped to n. The 1e-9 nudge makes
// products such as 0.15 * 10 that land just under .5 round as exact halves.
inline std::size_t retained_count(double alpha, std::size_t n) {
  if (n == 0) return 0;
  double k = std::floor(alpha * static_cast<double>(n) + 0.5 + 1e-9);
  auto count = static_cast<std::size_t>(std::max(1.0, k));
  return std::min(count, n);
}

// Score for one token. Two infinite perplexities carry no measurable shift
// and score 0.
inline double token_score(double ppl_uncond, double ppl_cond, ScoreSpace space) {
  if (std::isinf(ppl_uncond) && std::isinf(ppl_cond)) return 0.0;
  if (space == ScoreSpace::kPplDiff) return ppl_uncond - ppl_cond;
  return std::log2(ppl_uncond) - std::log2(ppl_cond);
}

// True when a span ends in ASCII whitespace or sentence punctuation.
inline bool is_boundary_span(std::string_view span) {
  if (span.empty()) return false;
  switch (span.back()) {
    case ' ': case '\t': case '\n': case '\r': case '\f': case '\v':
    case '.': case '!': case '?': case ';': case ':':
      return true;
    default:
      return false;
  }
}

// Cuts [0, n) into segments of at most segment_budget tokens. A cut that
// would fall mid-sentence moves back (by at most boundary_slack tokens) to
// just after the nearest boundary span; with no candidate the cut is forced.
template <class Spans>
std::vector<Segment> segment_thinking(const Spans& spans, const SelectionConfig& config) {
  const std::size_t n = std::size(spans);
  std::vector<Segment> segments;
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t end = n;
    if (n - begin > config.segment_budget) {
      const std::size_t hard = begin + config.segment_budget;
      const std::size_t floor = std::max(begin + 1, hard - std::min(config.boundary_slack, config.segment_budget - 1));
      end = hard;
      for (std::size_t cut = hard; cut >= floor; --cut) {
        if (is_boundary_span(std::string_view(spans[cut - 1]))) {
          end = cut;
          break;
        }
      }
    }
    segments.push_back({begin, end, segments.size()});
    begin = end;
  }
  return segments;
}

namespace detail {

// Marks the top `count` rows of [begin, end) by (score desc, position asc).
// Returns the lowest kept score.
inline double keep_top(std::span<const TokenScoreRow> rows, std::size_t begin, std::size_t end, std::size_t count,
                       std::vector<bool>& mask) {
  std::vector<std::size_t> order(end - begin);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = begin + i;
  auto better = [&](std::size_t a, std::size_t b) {
    if (rows[a].score != rows[b].score) return rows[a].score > rows[b].score;
    return rows[a].position < rows[b].position;
  };
  auto nth = order.begin() + static_cast<std::ptrdiff_t>(count);
  std::nth_element(order.begin(), nth - 1, order.end(), better);
  double lowest = kPosInf;
  for (auto it = order.begin(); it != nth; ++it) {
    mask[*it] = true;
    lowest = std::min(lowest, rows[*it].score);
  }
  return lowest;
}

}  // namespace detail

inline SelectionResult select_tokens(std::span<const TokenScoreRow> rows, std::span<const Segment> segments,
                                     const SelectionConfig& config) {
  if (rows.empty()) throw Error("select_tokens: no rows");
  SelectionResult result;
  result.kept_mask.assign(rows.size(), false);
  if (config.selection_scope == SelectionScope::kGlobal || segments.empty()) {
    std::size_t k = retained_count(config.alpha, rows.size());
    result.threshold = detail::keep_top(rows, 0, rows.size(), k, result.kept_mask);
    result.kept_count = k;
    return result;
  }
  result.threshold = kPosInf;
  for (const Segment& s : segments) {
    if (s.end > rows.size() || s.begin >= s.end) throw Error("select_tokens: segment outside rows");
    std::size_t k = retained_count(config.alpha, s.size());
    result.threshold = std::min(result.threshold, detail::keep_top(rows, s.begin, s.end, k, result.kept_mask));
    result.kept_count += k;
  }
  return result;
}

}  // namespace cts
