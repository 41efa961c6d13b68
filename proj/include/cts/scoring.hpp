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

// Conditional token scoring and compression of a single instance.
//
// Each thinking token i gets two perplexities from the same backend:
//
//   ppl_uncond = PPL(thk_i | thk_<i)
//   ppl_cond   = PPL(thk_i | condition, thk_<i)
//
// where the condition is the rendered template (by default the answer).
// The score is their difference, in perplexity or in bits. The thinking
// text is tokenized once and the same ids appear verbatim in both contexts,
// so position i refers to the same token on both sides.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cts/backend.hpp"
#include "cts/dataset.hpp"
#include "cts/errors.hpp"
#include "cts/selection.hpp"

namespace cts {

// Substitutes every {answer} and {problem}; other text is literal.
inline std::string render_condition(std::string_view tmpl, const CotInstance& instance) {
  std::string out;
  out.reserve(tmpl.size() + instance.answer.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    if (tmpl.compare(pos, 8, "{answer}") == 0) {
      out += instance.answer;
      pos += 8;
    } else if (tmpl.compare(pos, 9, "{problem}") == 0) {
      out += instance.problem;
      pos += 9;
    } else {
      out.push_back(tmpl[pos++]);
    }
  }
  return out;
}

struct ScoringContexts {
  std::vector<Token> thinking_tokens;
  std::vector<TokenId> condition_ids;  // empty when unconditional
  std::vector<TokenId> uncond;         // thinking ids
  std::vector<TokenId> cond;           // condition ids ++ thinking ids
  std::size_t uncond_offset = 0;
  std::size_t cond_offset = 0;

  std::size_t thinking_size() const noexcept { return thinking_tokens.size(); }
};

inline ScoringContexts build_contexts(const CotInstance& instance, const SelectionConfig& config,
                                      const LogprobBackend& backend) {
  config.validate();
  ScoringContexts ctx;
  ctx.thinking_tokens = backend.tokenize(instance.thinking);
  if (ctx.thinking_tokens.empty()) throw Error("instance '" + instance.id + "' has empty thinking");
  ctx.uncond = token_ids(ctx.thinking_tokens);
  if (config.conditional && !config.condition_template.empty()) {
    ctx.condition_ids = token_ids(backend.tokenize(render_condition(config.condition_template, instance)));
  }
  ctx.cond.reserve(ctx.condition_ids.size() + ctx.uncond.size());
  ctx.cond = ctx.condition_ids;
  ctx.cond.insert(ctx.cond.end(), ctx.uncond.begin(), ctx.uncond.end());
  ctx.cond_offset = ctx.condition_ids.size();
  return ctx;
}

namespace detail {

inline BackendError annotate(const BackendError& e, const std::string& id, std::size_t begin, std::size_t end) {
  return BackendError(e.kind(), "instance '" + id + "' positions [" + std::to_string(begin) + ", " +
                                    std::to_string(end) + "): " + e.what());
}

inline std::vector<double> checked(LogprobResponse&& response, std::size_t expected) {
  if (response.logprobs_bits.size() != expected) {
    throw BackendError(BackendErrorKind::kProtocol, "backend returned " +
                                                        std::to_string(response.logprobs_bits.size()) +
                                                        " logprobs, expected " + std::to_string(expected));
  }
  return std::move(response.logprobs_bits);
}

// Scores thinking tokens [begin, end) given `prefix` thinking ids preceding
// them (all earlier tokens, or only the kept ones) and the condition ids.
inline void score_range(const CotInstance& instance, const SelectionConfig& config, const LogprobBackend& backend,
                        const ScoringContexts& ctx, std::span<const TokenId> prefix, std::size_t begin,
                        std::size_t end, std::vector<TokenScoreRow>& rows) {
  const std::size_t len = end - begin;
  std::vector<LogprobRequest> requests;
  LogprobRequest uncond;
  uncond.context.reserve(prefix.size() + len);
  uncond.context.assign(prefix.begin(), prefix.end());
  uncond.context.insert(uncond.context.end(), ctx.uncond.begin() + static_cast<std::ptrdiff_t>(begin),
                        ctx.uncond.begin() + static_cast<std::ptrdiff_t>(end));
  uncond.start = prefix.size();
  uncond.end = prefix.size() + len;
  requests.push_back(std::move(uncond));
  const bool conditional = config.conditional;
  if (conditional) {
    LogprobRequest cond;
    cond.context = ctx.condition_ids;
    cond.context.insert(cond.context.end(), requests[0].context.begin(), requests[0].context.end());
    cond.start = ctx.condition_ids.size() + prefix.size();
    cond.end = cond.start + len;
    requests.push_back(std::move(cond));
  }

  std::vector<LogprobResponse> responses;
  std::vector<double> lp_uncond, lp_cond;
  try {
    responses = backend.logprobs_batch(requests);
    if (responses.size() != requests.size()) {
      throw BackendError(BackendErrorKind::kProtocol, "backend returned " + std::to_string(responses.size()) +
                                                          " responses for " + std::to_string(requests.size()) +
                                                          " requests");
    }
    lp_uncond = checked(std::move(responses[0]), len);
    if (conditional) lp_cond = checked(std::move(responses[1]), len);
  } catch (const BackendError& e) {
    throw annotate(e, instance.id, begin, end);
  }

  for (std::size_t i = 0; i < len; ++i) {
    const Token& tok = ctx.thinking_tokens[begin + i];
    TokenScoreRow row;
    row.position = begin + i;
    row.token = tok.id;
    row.span = std::string(tok.span(instance.thinking));
    row.ppl_uncond = ppl_of(lp_uncond[i]);
    if (conditional) {
      row.ppl_cond = ppl_of(lp_cond[i]);
      row.score = token_score(row.ppl_uncond, row.ppl_cond, config.score_space);
    } else {
      // Unconditional baseline: rank by raw perplexity, high surprise kept.
      row.ppl_cond = row.ppl_uncond;
      row.score = row.ppl_uncond;
    }
    rows.push_back(std::move(row));
  }
}

}  // namespace detail

// One row per thinking token from a single pass over the whole thinking.
inline std::vector<TokenScoreRow> score_tokens(const CotInstance& instance, const SelectionConfig& config,
                                               const LogprobBackend& backend, const ScoringContexts& ctx) {
  std::vector<TokenScoreRow> rows;
  rows.reserve(ctx.thinking_size());
  detail::score_range(instance, config, backend, ctx, {}, 0, ctx.thinking_size(), rows);
  return rows;
}

inline std::vector<TokenScoreRow> score_tokens(const CotInstance& instance, const SelectionConfig& config,
                                               const LogprobBackend& backend) {
  return score_tokens(instance, config, backend, build_contexts(instance, config, backend));
}

struct CompressionOutcome {
  CompressedInstance compressed;
  std::vector<TokenScoreRow> rows;
  std::vector<Segment> segments;
  SelectionResult selection;
};

inline CompressedInstance materialize(const CotInstance& instance, const SelectionConfig& config,
                                      std::span<const Token> tokens, const SelectionResult& selection) {
  CompressedInstance out;
  out.id = instance.id;
  out.problem = instance.problem;
  out.answer = instance.answer;
  out.extras = instance.extras;
  out.nominal_ratio = config.alpha;
  out.kept_count = selection.kept_count;
  out.original_count = tokens.size();
  out.actual_ratio = static_cast<double>(out.kept_count) / static_cast<double>(out.original_count);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (selection.kept_mask[i]) out.compressed_thinking += tokens[i].span(instance.thinking);
  }
  return out;
}

// Scores, selects and materializes one instance. In per-segment scope the
// segments are processed in order and segment j is scored after the kept
// tokens of segments < j (or all of them, with PrefixMode::kOriginal).
inline CompressionOutcome compress_instance(const CotInstance& instance, const SelectionConfig& config,
                                            const LogprobBackend& backend) {
  ScoringContexts ctx = build_contexts(instance, config, backend);
  CompressionOutcome outcome;
  const std::size_t n = ctx.thinking_size();

  if (config.selection_scope == SelectionScope::kGlobal) {
    outcome.rows = score_tokens(instance, config, backend, ctx);
    outcome.segments = {Segment{0, n, 0}};
    outcome.selection = select_tokens(outcome.rows, {}, config);
  } else {
    std::vector<std::string_view> spans;
    spans.reserve(n);
    for (const Token& t : ctx.thinking_tokens) spans.push_back(t.span(instance.thinking));
    outcome.segments = segment_thinking(spans, config);
    outcome.rows.reserve(n);
    std::vector<TokenId> prefix;
    for (const Segment& seg : outcome.segments) {
      detail::score_range(instance, config, backend, ctx, prefix, seg.begin, seg.end, outcome.rows);
      SelectionConfig one = config;
      one.selection_scope = SelectionScope::kGlobal;
      std::span<const TokenScoreRow> seg_rows(outcome.rows.data() + seg.begin, seg.size());
      SelectionResult local = select_tokens(seg_rows, {}, one);
      for (std::size_t i = 0; i < seg.size(); ++i) {
        if (config.prefix_mode == PrefixMode::kOriginal || local.kept_mask[i]) prefix.push_back(ctx.uncond[seg.begin + i]);
      }
    }
    outcome.selection = select_tokens(outcome.rows, outcome.segments, config);
  }
  outcome.compressed = materialize(instance, config, ctx.thinking_tokens, outcome.selection);
  return outcome;
}

}  // namespace cts
