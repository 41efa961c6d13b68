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

// JSON Lines dataset I/O for chain-of-thought records.
//
// Readers are single-pass streams that hold one line at a time. Writers go
// through AtomicFileWriter: data lands in "<path>.partial" and is renamed
// over the destination only on commit(), so a failed or interrupted run
// never leaves a truncated file behind.

#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ranges>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cts/errors.hpp"

namespace cts {

using Json = nlohmann::ordered_json;

// One training record: problem, thinking (without <think> delimiters) and
// final answer. Unmapped input keys ride along in `extras`.
struct CotInstance {
  std::string id;
  std::string problem;
  std::string thinking;
  std::string answer;
  Json extras = Json::object();
  std::size_t line = 0;

  bool operator==(const CotInstance&) const = default;
};

struct CompressedInstance {
  std::string id;
  std::string problem;
  std::string compressed_thinking;
  std::string answer;
  double nominal_ratio = 1.0;
  double actual_ratio = 1.0;
  std::size_t kept_count = 0;
  std::size_t original_count = 0;
  Json extras = Json::object();

  bool operator==(const CompressedInstance&) const = default;
};

// A curated (question, answer, concise steps) example for the reference
// model's training corpus.
struct RmCorpusExample {
  std::string id;
  std::string question;
  std::string answer;
  std::vector<std::string> reasoning_steps;

  bool operator==(const RmCorpusExample&) const = default;
};

// Maps the logical fields onto the key names used by a particular file.
struct FieldSchema {
  std::string id = "id";
  std::string problem = "problem";
  std::string thinking = "thinking";
  std::string answer = "answer";

  // Parses "problem=question,thinking=cot"; unspecified fields keep defaults.
  static FieldSchema parse(std::string_view text) {
    FieldSchema schema;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t comma = text.find(',', pos);
      if (comma == std::string_view::npos) comma = text.size();
      std::string_view item = text.substr(pos, comma - pos);
      pos = comma + 1;
      if (item.empty()) continue;
      std::size_t eq = item.find('=');
      if (eq == std::string_view::npos || eq == 0 || eq + 1 == item.size()) {
        throw ConfigError("schema entry '" + std::string(item) + "' is not field=key");
      }
      std::string_view field = item.substr(0, eq);
      std::string key(item.substr(eq + 1));
      if (field == "id") {
        schema.id = key;
      } else if (field == "problem") {
        schema.problem = key;
      } else if (field == "thinking") {
        schema.thinking = key;
      } else if (field == "answer") {
        schema.answer = key;
      } else {
        throw ConfigError("unknown schema field '" + std::string(field) + "'");
      }
    }
    return schema;
  }

  bool operator==(const FieldSchema&) const = default;
};

enum class ReadMode { kLenient, kStrict };

struct RecordError {
  std::size_t line = 0;
  std::string id;
  std::string message;
};

namespace detail {

inline bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

inline const std::string& require_string(const Json& object, const std::string& key) {
  auto it = object.find(key);
  if (it == object.end()) throw std::invalid_argument("missing field '" + key + "'");
  if (!it->is_string()) throw std::invalid_argument("field '" + key + "' is not a string");
  return it->get_ref<const std::string&>();
}

inline std::size_t require_count(const Json& object, const std::string& key) {
  auto it = object.find(key);
  if (it == object.end()) throw std::invalid_argument("missing field '" + key + "'");
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<long long>() >= 0)) {
    throw std::invalid_argument("field '" + key + "' is not a non-negative integer");
  }
  return it->get<std::size_t>();
}

inline double require_number(const Json& object, const std::string& key) {
  auto it = object.find(key);
  if (it == object.end()) throw std::invalid_argument("missing field '" + key + "'");
  if (!it->is_number()) throw std::invalid_argument("field '" + key + "' is not a number");
  return it->get<double>();
}

// Record id from `key`, or "line:<n>" when the key is absent.
inline std::string record_id(const Json& object, const std::string& key, std::size_t line) {
  auto it = object.find(key);
  if (it == object.end() || it->is_null()) return "line:" + std::to_string(line);
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return it->dump();
  throw std::invalid_argument("field '" + key + "' is not a string or integer");
}

inline Json collect_extras(const Json& object, std::initializer_list<std::string_view> consumed) {
  Json extras = Json::object();
  for (const auto& [key, value] : object.items()) {
    bool used = false;
    for (std::string_view c : consumed) used = used || key == c;
    if (!used) extras[key] = value;
  }
  return extras;
}

}  // namespace detail

// Streams parsed JSON objects out of a JSONL file, one line at a time.
// Blank lines are skipped but still counted for line numbering.
class JsonlReader {
 public:
  struct Line {
    std::size_t number = 0;
    Json value;
    std::string error;  // non-empty when the line failed to parse
  };

  explicit JsonlReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open '" + path.string() + "' for reading");
  }

  std::optional<Line> next() {
    std::string text;
    while (std::getline(in_, text)) {
      ++line_number_;
      if (!text.empty() && text.back() == '\r') text.pop_back();
      if (detail::is_blank(text)) continue;
      Line line;
      line.number = line_number_;
      try {
        line.value = Json::parse(text);
        if (!line.value.is_object()) {
          line.error = "line is not a JSON object";
        }
      } catch (const Json::parse_error& e) {
        line.error = std::string("malformed JSON: ") + e.what();
      }
      return line;
    }
    if (in_.bad()) throw IoError("read failure on '" + path_.string() + "'");
    return std::nullopt;
  }

  std::size_t line_number() const noexcept { return line_number_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_number_ = 0;
};

// Typed record stream. `Decode` turns (object, line) into a T or throws
// std::invalid_argument / nlohmann exceptions for field-level problems.
// Lenient mode records the error and moves on; strict mode throws
// DatasetError at the first bad line.
template <class T, class Decode>
class RecordReader {
 public:
  RecordReader(const std::filesystem::path& path, Decode decode, ReadMode mode)
      : lines_(path), decode_(std::move(decode)), mode_(mode) {}

  std::optional<T> next() {
    while (auto line = lines_.next()) {
      std::string message = line->error;
      std::string id;
      if (message.empty()) {
        try {
          return decode_(line->value, line->number);
        } catch (const std::invalid_argument& e) {
          message = e.what();
        } catch (const Json::exception& e) {
          message = e.what();
        }
        if (auto it = line->value.find("id"); it != line->value.end() && it->is_string()) {
          id = it->template get<std::string>();
        }
      }
      if (mode_ == ReadMode::kStrict) throw DatasetError(line->number, message);
      errors_.push_back({line->number, id.empty() ? "line:" + std::to_string(line->number) : id, message});
    }
    return std::nullopt;
  }

  const std::vector<RecordError>& errors() const noexcept { return errors_; }

  // Returns and clears the errors accumulated since the last call.
  std::vector<RecordError> take_errors() { return std::exchange(errors_, {}); }

  std::size_t line_number() const noexcept { return lines_.line_number(); }

 private:
  JsonlReader lines_;
  Decode decode_;
  ReadMode mode_;
  std::vector<RecordError> errors_;
};

inline CotInstance decode_cot(const Json& object, std::size_t line, const FieldSchema& schema) {
  CotInstance instance;
  instance.id = detail::record_id(object, schema.id, line);
  instance.problem = detail::require_string(object, schema.problem);
  instance.thinking = detail::require_string(object, schema.thinking);
  instance.answer = detail::require_string(object, schema.answer);
  instance.extras = detail::collect_extras(object, {schema.id, schema.problem, schema.thinking, schema.answer});
  instance.line = line;
  return instance;
}

inline constexpr std::string_view kCompressedKeys[] = {
    "id",           "problem",   "compressed_thinking", "answer", "nominal_ratio", "actual_ratio",
    "kept_count", "original_count"};

inline CompressedInstance decode_compressed(const Json& object, std::size_t line) {
  CompressedInstance record;
  record.id = detail::record_id(object, "id", line);
  record.problem = detail::require_string(object, "problem");
  record.compressed_thinking = detail::require_string(object, "compressed_thinking");
  record.answer = detail::require_string(object, "answer");
  record.nominal_ratio = detail::require_number(object, "nominal_ratio");
  record.actual_ratio = detail::require_number(object, "actual_ratio");
  record.kept_count = detail::require_count(object, "kept_count");
  record.original_count = detail::require_count(object, "original_count");
  record.extras = detail::collect_extras(object, {kCompressedKeys[0], kCompressedKeys[1], kCompressedKeys[2],
                                                  kCompressedKeys[3], kCompressedKeys[4], kCompressedKeys[5],
                                                  kCompressedKeys[6], kCompressedKeys[7]});
  return record;
}

// {"id"?, "question", "answer", "reasoning_steps": [..] | "..."}; a string
// of steps is split on newlines.
inline RmCorpusExample decode_rm_example(const Json& object, std::size_t line) {
  RmCorpusExample example;
  example.id = detail::record_id(object, "id", line);
  example.question = detail::require_string(object, "question");
  example.answer = detail::require_string(object, "answer");
  auto it = object.find("reasoning_steps");
  if (it == object.end()) throw std::invalid_argument("missing field 'reasoning_steps'");
  if (it->is_array()) {
    for (const auto& step : *it) {
      if (!step.is_string()) throw std::invalid_argument("reasoning_steps entries must be strings");
      example.reasoning_steps.push_back(step.get<std::string>());
    }
  } else if (it->is_string()) {
    std::string_view all = it->get_ref<const std::string&>();
    std::size_t pos = 0;
    while (pos <= all.size()) {
      std::size_t nl = all.find('\n', pos);
      if (nl == std::string_view::npos) nl = all.size();
      if (nl > pos) example.reasoning_steps.emplace_back(all.substr(pos, nl - pos));
      pos = nl + 1;
    }
  } else {
    throw std::invalid_argument("field 'reasoning_steps' must be an array or string");
  }
  if (example.reasoning_steps.empty()) throw std::invalid_argument("reasoning_steps is empty");
  return example;
}

inline auto read_dataset(const std::filesystem::path& path, FieldSchema schema = {},
                         ReadMode mode = ReadMode::kLenient) {
  auto decode = [schema = std::move(schema)](const Json& object, std::size_t line) {
    return decode_cot(object, line, schema);
  };
  return RecordReader<CotInstance, decltype(decode)>(path, std::move(decode), mode);
}

inline auto read_compressed_dataset(const std::filesystem::path& path, ReadMode mode = ReadMode::kLenient) {
  return RecordReader<CompressedInstance, decltype(&decode_compressed)>(path, &decode_compressed, mode);
}

inline auto read_rm_corpus(const std::filesystem::path& path, ReadMode mode = ReadMode::kLenient) {
  return RecordReader<RmCorpusExample, decltype(&decode_rm_example)>(path, &decode_rm_example, mode);
}

// Writes to "<path>.partial" and renames on commit(). Destruction without
// commit removes the partial file.
class AtomicFileWriter {
 public:
  explicit AtomicFileWriter(std::filesystem::path path)
      : path_(std::move(path)), temp_(path_.string() + ".partial") {
    out_.open(temp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open '" + temp_.string() + "' for writing");
  }

  AtomicFileWriter(const AtomicFileWriter&) = delete;
  AtomicFileWriter& operator=(const AtomicFileWriter&) = delete;

  ~AtomicFileWriter() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(temp_, ec);
    }
  }

  void write(std::string_view bytes) {
    out_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out_) throw IoError("write failure on '" + temp_.string() + "'");
  }

  void commit() {
    out_.flush();
    out_.close();
    if (!out_) throw IoError("cannot finalize '" + temp_.string() + "'");
    std::error_code ec;
    std::filesystem::rename(temp_, path_, ec);
    if (ec) throw IoError("cannot rename '" + temp_.string() + "' to '" + path_.string() + "': " + ec.message());
    committed_ = true;
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

inline std::string to_jsonl_line(const Json& value) {
  std::string line = value.dump(-1, ' ', false, Json::error_handler_t::strict);
  line.push_back('\n');
  return line;
}

inline Json to_json(const CompressedInstance& record) {
  Json object = Json::object();
  object["id"] = record.id;
  object["problem"] = record.problem;
  object["compressed_thinking"] = record.compressed_thinking;
  object["answer"] = record.answer;
  object["nominal_ratio"] = record.nominal_ratio;
  object["actual_ratio"] = record.actual_ratio;
  object["kept_count"] = record.kept_count;
  object["original_count"] = record.original_count;
  for (const auto& [key, value] : record.extras.items()) {
    if (!object.contains(key)) object[key] = value;
  }
  return object;
}

class JsonlWriter {
 public:
  explicit JsonlWriter(std::filesystem::path path) : file_(std::move(path)) {}

  void write(const Json& value) {
    file_.write(to_jsonl_line(value));
    ++count_;
  }

  std::size_t commit() {
    file_.commit();
    return count_;
  }

  std::size_t count() const noexcept { return count_; }

 private:
  AtomicFileWriter file_;
  std::size_t count_ = 0;
};

// Key order is fixed: the eight CompressedInstance fields, then extras in
// their original order.
template <std::ranges::input_range R>
  requires std::convertible_to<std::ranges::range_reference_t<R>, const CompressedInstance&>
std::size_t write_dataset(R&& records, const std::filesystem::path& path) {
  JsonlWriter writer(path);
  for (const CompressedInstance& record : records) writer.write(to_json(record));
  return writer.commit();
}

}  // namespace cts
