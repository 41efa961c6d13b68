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

// Dataset-level orchestration: streaming compression with a bounded worker
// pool, score dumps, run reports, dataset statistics and the 2x2 ablation
// grid (conditional on/off x standard/tuned reference model).
//
// Records are read in chunks of `chunk_size`; each chunk is scored by up to
// `workers` threads and written back in input order by the calling thread,
// so output bytes do not depend on the worker count.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "cts/backend.hpp"
#include "cts/dataset.hpp"
#include "cts/errors.hpp"
#include "cts/scoring.hpp"
#include "cts/selection.hpp"

namespace cts {

struct RunReport {
  std::size_t instances_total = 0;
  std::size_t instances_ok = 0;
  std::size_t instances_failed = 0;
  double mean_actual_ratio = 0.0;           // kept_tokens_total / original_tokens_total
  double instance_mean_actual_ratio = 0.0;  // mean of per-instance ratios
  double stdev_actual_ratio = 0.0;          // population stdev of per-instance ratios
  std::size_t original_tokens_total = 0;
  std::size_t kept_tokens_total = 0;
  double wall_time_seconds = 0.0;
  bool interrupted = false;
  Json config_echo = Json::object();
  std::vector<RecordError> errors;

  Json to_json() const {
    Json j;
    j["instances_total"] = instances_total;
    j["instances_ok"] = instances_ok;
    j["instances_failed"] = instances_failed;
    j["mean_actual_ratio"] = mean_actual_ratio;
    j["instance_mean_actual_ratio"] = instance_mean_actual_ratio;
    j["stdev_actual_ratio"] = stdev_actual_ratio;
    j["original_tokens_total"] = original_tokens_total;
    j["kept_tokens_total"] = kept_tokens_total;
    j["wall_time_seconds"] = wall_time_seconds;
    j["interrupted"] = interrupted;
    j["config_echo"] = config_echo;
    Json errs = Json::array();
    for (const auto& e : errors) errs.push_back({{"line", e.line}, {"id", e.id}, {"message", e.message}});
    j["errors"] = std::move(errs);
    return j;
  }
};

// Accumulates per-instance ratios; Welford for the variance.
class RatioAccumulator {
 public:
  void add(std::size_t kept, std::size_t original) {
    kept_ += kept;
    original_ += original;
    double r = original ? static_cast<double>(kept) / static_cast<double>(original) : 0.0;
    ++n_;
    double delta = r - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (r - mean_);
  }

  void fill(RunReport& report) const {
    report.kept_tokens_total = kept_;
    report.original_tokens_total = original_;
    report.mean_actual_ratio = original_ ? static_cast<double>(kept_) / static_cast<double>(original_) : 0.0;
    report.instance_mean_actual_ratio = mean_;
    report.stdev_actual_ratio = n_ ? std::sqrt(m2_ / static_cast<double>(n_)) : 0.0;
  }

 private:
  std::size_t n_ = 0, kept_ = 0, original_ = 0;
  double mean_ = 0.0, m2_ = 0.0;
};

enum class RunStatus {
  kOk,
  kInstanceFailures,    // a record failed and the run was not lenient
  kBackendUnreachable,  // transport errors persisted through retries
  kInterrupted,
};

struct RunOutcome {
  RunReport report;
  RunStatus status = RunStatus::kOk;
  std::string message;  // first fatal error, if any
};

struct Progress {
  std::size_t processed = 0;
  std::size_t failed = 0;
};

struct PipelineOptions {
  std::filesystem::path input;
  std::optional<std::filesystem::path> output;      // compressed dataset
  std::optional<std::filesystem::path> score_dump;  // per-token rows
  bool dump_kept = true;                            // include "kept" in the dump
  FieldSchema schema;
  SelectionConfig config;
  std::size_t workers = 1;
  std::size_t chunk_size = 0;  // 0 = 16 * workers
  bool lenient = false;
  const std::atomic<bool>* cancel = nullptr;
  std::function<void(const Progress&)> progress;
  Json extra_echo = Json::object();
};

inline Json score_row_json(const std::string& instance_id, const TokenScoreRow& row, std::optional<bool> kept) {
  Json j;
  j["instance_id"] = instance_id;
  j["position"] = row.position;
  j["span"] = row.span;
  // Infinite perplexities serialize as null.
  j["ppl_uncond"] = row.ppl_uncond;
  j["ppl_cond"] = row.ppl_cond;
  j["score"] = row.score;
  if (kept) j["kept"] = *kept;
  return j;
}

namespace detail {

struct InstanceFailure {
  std::string message;
  bool transport = false;
};

using InstanceResult = std::variant<CompressionOutcome, InstanceFailure>;

inline InstanceResult run_one(const CotInstance& instance, const SelectionConfig& config,
                              const LogprobBackend& backend) {
  try {
    return compress_instance(instance, config, backend);
  } catch (const BackendError& e) {
    return InstanceFailure{e.what(), e.kind() == BackendErrorKind::kTransport};
  } catch (const std::exception& e) {
    return InstanceFailure{e.what(), false};
  }
}

inline void run_chunk(const std::vector<CotInstance>& chunk, const SelectionConfig& config,
                      const LogprobBackend& backend, std::size_t workers, std::vector<InstanceResult>& results) {
  results.assign(chunk.size(), InstanceFailure{});
  workers = std::clamp<std::size_t>(workers, 1, chunk.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < chunk.size(); ++i) results[i] = run_one(chunk[i], config, backend);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < chunk.size(); i = next++) results[i] = run_one(chunk[i], config, backend);
    });
  }
}

}  // namespace detail

inline Json echo_config(const PipelineOptions& options, const LogprobBackend& backend) {
  Json j = options.config.to_json();
  j["backend"] = backend.describe();
  j["workers"] = options.workers;
  j["lenient"] = options.lenient;
  j["input"] = options.input.string();
  j["output"] = options.output ? Json(options.output->string()) : Json(nullptr);
  j["schema"] = {{"id", options.schema.id},
                 {"problem", options.schema.problem},
                 {"thinking", options.schema.thinking},
                 {"answer", options.schema.answer}};
  for (const auto& [k, v] : options.extra_echo.items()) j[k] = v;
  return j;
}

// Compresses (and/or score-dumps) a whole dataset. Output files appear only
// when the run finishes with RunStatus::kOk. I/O problems throw IoError.
inline RunOutcome run_compress(const PipelineOptions& options, const LogprobBackend& backend) {
  options.config.validate();
  const auto started = std::chrono::steady_clock::now();
  RunOutcome outcome;
  RunReport& report = outcome.report;
  report.config_echo = echo_config(options, backend);

  auto reader = read_dataset(options.input, options.schema, ReadMode::kLenient);
  std::optional<JsonlWriter> out;
  if (options.output) out.emplace(*options.output);
  std::optional<JsonlWriter> dump;
  if (options.score_dump) dump.emplace(*options.score_dump);

  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  const std::size_t chunk_size = options.chunk_size ? options.chunk_size : 16 * workers;
  RatioAccumulator ratios;
  std::vector<CotInstance> chunk;
  std::vector<detail::InstanceResult> results;
  bool done = false;

  auto fail = [&](RecordError error, RunStatus status) {
    ++report.instances_failed;
    if (outcome.message.empty()) outcome.message = error.message;
    report.errors.push_back(std::move(error));
    if (status != RunStatus::kOk || !options.lenient) {
      outcome.status = status == RunStatus::kOk ? RunStatus::kInstanceFailures : status;
      done = true;
    }
  };

  while (!done) {
    if (options.cancel && options.cancel->load()) {
      outcome.status = RunStatus::kInterrupted;
      report.interrupted = true;
      break;
    }
    chunk.clear();
    std::vector<RecordError> read_errors;
    while (chunk.size() < chunk_size) {
      auto instance = reader.next();
      for (auto& e : reader.take_errors()) read_errors.push_back(std::move(e));
      if (!instance) break;
      if (instance->thinking.empty()) {
        read_errors.push_back({instance->line, instance->id, "thinking is empty"});
        continue;
      }
      chunk.push_back(std::move(*instance));
    }
    report.instances_total += chunk.size() + read_errors.size();
    for (auto& e : read_errors) {
      fail(std::move(e), RunStatus::kOk);
      if (done) break;
    }
    if (done) break;
    if (chunk.empty()) break;

    detail::run_chunk(chunk, options.config, backend, workers, results);
    for (std::size_t i = 0; i < chunk.size() && !done; ++i) {
      if (auto* failure = std::get_if<detail::InstanceFailure>(&results[i])) {
        fail({chunk[i].line, chunk[i].id, failure->message},
             failure->transport ? RunStatus::kBackendUnreachable : RunStatus::kOk);
        continue;
      }
      auto& result = std::get<CompressionOutcome>(results[i]);
      ++report.instances_ok;
      ratios.add(result.compressed.kept_count, result.compressed.original_count);
      if (out) out->write(to_json(result.compressed));
      if (dump) {
        for (const auto& row : result.rows) {
          std::optional<bool> kept;
          if (options.dump_kept) kept = result.selection.kept_mask[row.position];
          dump->write(score_row_json(chunk[i].id, row, kept));
        }
      }
    }
    if (options.progress) options.progress({report.instances_ok + report.instances_failed, report.instances_failed});
  }

  ratios.fill(report);
  if (outcome.status == RunStatus::kOk) {
    if (out) out->commit();
    if (dump) dump->commit();
  }
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return outcome;
}

// The four ablation variants: {conditional} x {tuned reference model}.
struct AblationMode {
  bool conditional = false;
  bool tuned = false;

  std::string name() const {
    if (!conditional && !tuned) return "base";
    if (conditional && !tuned) return "conditional";
    if (!conditional && tuned) return "rm-tuned";
    return "cts";
  }
};

inline constexpr AblationMode kAblationModes[] = {{false, false}, {true, false}, {false, true}, {true, true}};

struct AblationEntry {
  AblationMode mode;
  RunOutcome outcome;
  std::filesystem::path output;
};

// Runs the four modes over the same input; outputs go to
// <dir>/<mode>.jsonl. Stops at the first mode that does not finish cleanly.
inline std::vector<AblationEntry> run_ablation(PipelineOptions options, const LogprobBackend& standard,
                                               const LogprobBackend& tuned, const std::filesystem::path& dir) {
  std::vector<AblationEntry> entries;
  for (const AblationMode& mode : kAblationModes) {
    PipelineOptions run = options;
    run.config.conditional = mode.conditional;
    run.output = dir / (mode.name() + ".jsonl");
    run.score_dump.reset();
    run.extra_echo["ablation_mode"] = mode.name();
    AblationEntry entry{mode, run_compress(run, mode.tuned ? tuned : standard), *run.output};
    bool ok = entry.outcome.status == RunStatus::kOk;
    entries.push_back(std::move(entry));
    if (!ok) break;
  }
  return entries;
}

inline std::string ablation_table(const std::vector<AblationEntry>& entries) {
  std::string out = "mode\tconditional\ttuned_rm\tmean_actual_ratio\tkept_tokens_total\toriginal_tokens_total\n";
  for (const auto& e : entries) {
    char ratio[32];
    std::snprintf(ratio, sizeof ratio, "%.6f", e.outcome.report.mean_actual_ratio);
    out += e.mode.name() + "\t" + (e.mode.conditional ? "yes" : "no") + "\t" + (e.mode.tuned ? "yes" : "no") + "\t" +
           ratio + "\t" + std::to_string(e.outcome.report.kept_tokens_total) + "\t" +
           std::to_string(e.outcome.report.original_tokens_total) + "\n";
  }
  return out;
}

struct DatasetStats {
  std::size_t records = 0;
  std::size_t compressed_records = 0;
  std::size_t raw_records = 0;
  std::size_t malformed = 0;
  std::size_t thinking_bytes_total = 0;
  RunReport ratios;  // only the ratio/token fields are filled

  Json to_json() const {
    Json j;
    j["records"] = records;
    j["compressed_records"] = compressed_records;
    j["raw_records"] = raw_records;
    j["malformed"] = malformed;
    j["thinking_bytes_total"] = thinking_bytes_total;
    j["original_tokens_total"] = ratios.original_tokens_total;
    j["kept_tokens_total"] = ratios.kept_tokens_total;
    j["mean_actual_ratio"] = ratios.mean_actual_ratio;
    j["instance_mean_actual_ratio"] = ratios.instance_mean_actual_ratio;
    j["stdev_actual_ratio"] = ratios.stdev_actual_ratio;
    return j;
  }
};

// Streams a dataset once. Compressed records contribute their kept/original
// counts; raw records contribute thinking bytes and, when a backend is
// given, their thinking token counts as original tokens.
inline DatasetStats dataset_stats(const std::filesystem::path& path, const FieldSchema& schema = {},
                                  const LogprobBackend* backend = nullptr) {
  DatasetStats stats;
  RatioAccumulator ratios;
  JsonlReader reader(path);
  std::size_t raw_tokens = 0;
  while (auto line = reader.next()) {
    ++stats.records;
    if (!line->error.empty()) {
      ++stats.malformed;
      continue;
    }
    try {
      if (line->value.contains("compressed_thinking")) {
        CompressedInstance c = decode_compressed(line->value, line->number);
        ++stats.compressed_records;
        stats.thinking_bytes_total += c.compressed_thinking.size();
        ratios.add(c.kept_count, c.original_count);
      } else {
        CotInstance c = decode_cot(line->value, line->number, schema);
        ++stats.raw_records;
        stats.thinking_bytes_total += c.thinking.size();
        if (backend) raw_tokens += backend->tokenize(c.thinking).size();
      }
    } catch (const std::invalid_argument&) {
      ++stats.malformed;
    } catch (const Json::exception&) {
      ++stats.malformed;
    } catch (const Error&) {
      ++stats.malformed;
    }
  }
  ratios.fill(stats.ratios);
  stats.ratios.original_tokens_total += raw_tokens;
  return stats;
}

}  // namespace cts
