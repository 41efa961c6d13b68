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

// Training-ready artifacts: SFT prompt/completion pairs, compression
// prompts for curating the reference-model corpus, and the reference-model
// training rows built from externally compressed steps.

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cts/dataset.hpp"
#include "cts/errors.hpp"

namespace cts {

using WarningSink = std::function<void(const std::string&)>;

struct SftRecord {
  std::string prompt;
  std::string completion;

  bool operator==(const SftRecord&) const = default;
};

struct RmPromptRecord {
  std::string source_id;
  std::string instruction;

  bool operator==(const RmPromptRecord&) const = default;
};

// An externally compressed version of an example's reasoning steps.
struct RmResponse {
  std::string source_id;
  std::string compressed_steps;
  std::size_t line = 0;
};

struct RmTrainingRow {
  std::string source_id;
  std::string instruction_context;
  std::string target;
  bool flagged = false;  // target is not a word subsequence of the steps

  bool operator==(const RmTrainingRow&) const = default;
};

inline constexpr std::string_view kSftInstruction = "Given the following problem, solve it step by step.";

inline constexpr std::string_view kRmPromptHead =
    "Compress the given reasoning steps to short expressions, and such that you (Deepseek) can understand "
    "reasoning and reconstruct it as close as possible to the original.\n"
    "Unlike the usual text compression, I need you to comply with the 5 conditions below:\n"
    "\n"
    "1. You can ONLY remove unimportant words.\n"
    "2. Do not reorder the original words.\n"
    "3. Do not change the original words.\n"
    "4. Do not use abbreviations or emojis.\n"
    "5. Do not add new words or symbols.\n"
    "\n"
    "Compress the origin aggressively by removing words only. Compress the origin as short as you can, while "
    "retaining as much information as possible.\n"
    "If you understand, please compress the following reasoning steps:\n"
    "\n";

inline constexpr std::string_view kRmPromptTail =
    "\n"
    "\n"
    "The compressed reasoning steps are:";

// Layout: instruction, blank line, QUESTION line, blank line, think block,
// blank line, final answer.
inline SftRecord emit_sft(const CompressedInstance& instance, const WarningSink& warn = {}) {
  if (instance.compressed_thinking.empty()) {
    throw Error("instance '" + instance.id + "' has empty compressed thinking");
  }
  if (instance.answer.empty() && warn) warn("instance '" + instance.id + "' has an empty answer");
  SftRecord record;
  record.prompt.reserve(kSftInstruction.size() + instance.problem.size() + 16);
  record.prompt += kSftInstruction;
  record.prompt += "\n\nQUESTION: ";
  record.prompt += instance.problem;
  record.prompt += "\n";
  record.completion += "\n<think>\n";
  record.completion += instance.compressed_thinking;
  record.completion += "\n</think>\n\n";
  record.completion += instance.answer;
  return record;
}

inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out += lines[i];
  }
  return out;
}

inline std::string render_rm_prompt(const std::vector<std::string>& reasoning_steps) {
  std::string out(kRmPromptHead);
  out += join_lines(reasoning_steps);
  out += kRmPromptTail;
  return out;
}

inline RmPromptRecord emit_rm_prompt(const RmCorpusExample& example) {
  if (example.reasoning_steps.empty()) throw Error("example '" + example.id + "' has no reasoning steps");
  return {example.id, render_rm_prompt(example.reasoning_steps)};
}

template <std::ranges::input_range R>
std::vector<RmPromptRecord> emit_rm_prompts(R&& examples) {
  std::vector<RmPromptRecord> out;
  for (const RmCorpusExample& e : examples) out.push_back(emit_rm_prompt(e));
  return out;
}

inline std::string render_rm_instruction(std::string_view question, std::string_view answer) {
  std::string out = "For a problem ";
  out += question;
  out += ", the following reasoning steps are important to get the answer ";
  out += answer;
  out += "\n";
  return out;
}

inline std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t b = text.find_first_not_of(" \t\n\r\f\v", pos);
    if (b == std::string_view::npos) break;
    std::size_t e = text.find_first_of(" \t\n\r\f\v", b);
    if (e == std::string_view::npos) e = text.size();
    words.push_back(text.substr(b, e - b));
    pos = e;
  }
  return words;
}

// True when the whitespace-delimited words of `compressed` occur, in order,
// among the words of `original`.
inline bool is_word_subsequence(std::string_view original, std::string_view compressed) {
  auto source = split_words(original);
  std::size_t i = 0;
  for (std::string_view w : split_words(compressed)) {
    while (i < source.size() && source[i] != w) ++i;
    if (i == source.size()) return false;
    ++i;
  }
  return true;
}

inline RmResponse decode_rm_response(const Json& object, std::size_t line) {
  RmResponse r;
  r.line = line;
  r.source_id = detail::require_string(object, "source_id");
  auto it = object.find("compressed_steps");
  if (it == object.end()) throw std::invalid_argument("missing field 'compressed_steps'");
  if (it->is_string()) {
    r.compressed_steps = it->get<std::string>();
  } else if (it->is_array()) {
    r.compressed_steps = join_lines(it->get<std::vector<std::string>>());
  } else {
    throw std::invalid_argument("field 'compressed_steps' must be a string or array of strings");
  }
  return r;
}

struct RmRowsResult {
  std::vector<RmTrainingRow> rows;
  std::vector<RecordError> errors;
};

// Joins examples with responses by source_id, in example order. Examples
// without a response are skipped; responses naming an unknown or repeated
// source_id are errors.
template <std::ranges::input_range Examples>
RmRowsResult build_rm_training_rows(Examples&& examples, const std::vector<RmResponse>& responses) {
  RmRowsResult result;
  std::map<std::string, const RmResponse*> by_id;
  for (const RmResponse& r : responses) {
    if (!by_id.emplace(r.source_id, &r).second) {
      result.errors.push_back({r.line, r.source_id, "duplicate source_id '" + r.source_id + "'"});
    }
  }
  std::set<std::string> seen;
  for (const RmCorpusExample& e : examples) {
    seen.insert(e.id);
    auto it = by_id.find(e.id);
    if (it == by_id.end()) continue;
    RmTrainingRow row;
    row.source_id = e.id;
    row.instruction_context = render_rm_instruction(e.question, e.answer);
    row.target = it->second->compressed_steps;
    row.flagged = !is_word_subsequence(join_lines(e.reasoning_steps), row.target);
    result.rows.push_back(std::move(row));
  }
  for (const RmResponse& r : responses) {
    if (!seen.contains(r.source_id)) {
      result.errors.push_back({r.line, r.source_id, "source_id '" + r.source_id + "' matches no example"});
    }
  }
  return result;
}

inline Json to_json(const SftRecord& r) {
  Json j;
  j["prompt"] = r.prompt;
  j["completion"] = r.completion;
  return j;
}

inline Json to_json(const RmPromptRecord& r) {
  Json j;
  j["source_id"] = r.source_id;
  j["instruction"] = r.instruction;
  return j;
}

inline Json to_json(const RmTrainingRow& r) {
  Json j;
  j["source_id"] = r.source_id;
  j["instruction_context"] = r.instruction_context;
  j["target"] = r.target;
  j["flagged"] = r.flagged;
  return j;
}

}  // namespace cts
