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

// cts: command-line front end.
//
//   cts compress --input in.jsonl --output out.jsonl --ratio 0.7 --backend toy:spec.json
//   cts score    --input in.jsonl --output scores.jsonl --backend http:http://host:8000
//   cts emit sft|rm-prompts|rm-rows ...
//   cts ablate   --input in.jsonl --output-dir dir --ratio 0.8 --backend ... --tuned-backend ...
//   cts stats    --input out.jsonl
//
// Settings resolve as: flag > --config file > environment > default.
// Data goes to files; progress and summaries go to stderr.
//
// Exit codes: 0 ok, 1 record failures (without --lenient), 2 usage or
// configuration error, 3 backend unreachable, 4 I/O error, 130 interrupted.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cts/cts.hpp"
#include "cts/http_backend.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRecordFailures = 1;
constexpr int kExitUsage = 2;
constexpr int kExitBackend = 3;
constexpr int kExitIo = 4;
constexpr int kExitInterrupted = 130;

std::atomic<bool> g_cancel{false};

extern "C" void on_interrupt(int) { g_cancel.store(true); }

using cts::Json;

// Every tunable with its default. Layers are merged over this.
Json default_settings() {
  Json j;
  j["ratio"] = nullptr;
  j["conditional"] = true;
  j["condition_template"] = std::string(cts::kDefaultConditionTemplate);
  j["segment_budget"] = 512;
  j["boundary_slack"] = 32;
  j["scope"] = "global";
  j["score_space"] = "ppl-diff";
  j["prefix_mode"] = "compressed";
  j["backend"] = nullptr;
  j["tuned_backend"] = nullptr;
  j["workers"] = 1;
  j["lenient"] = false;
  j["schema"] = "";
  j["bos_id"] = nullptr;
  j["backend_nats"] = false;
  j["max_in_flight"] = 8;
  j["retries"] = 4;
  return j;
}

void merge(Json& into, const Json& layer, const std::string& origin) {
  for (const auto& [key, value] : layer.items()) {
    std::string k = key;
    for (char& c : k) {
      if (c == '-') c = '_';
    }
    if (!into.contains(k)) throw cts::ConfigError(origin + ": unknown setting '" + key + "'");
    into[k] = value;
  }
}

struct Cli {
  // Raw flag values; only those the user actually passed are layered in.
  std::string input, output, output_dir, report, config, responses, score_dump;
  bool print_report = false;
  double ratio = 0;
  bool conditional = true;
  std::string condition_template;
  std::size_t segment_budget = 0, boundary_slack = 0, workers = 0, max_in_flight = 0;
  int retries = 0;
  std::string scope, score_space, prefix_mode, backend, tuned_backend, schema;
  bool lenient = false, backend_nats = false;
  unsigned bos_id = 0;

  std::vector<std::pair<CLI::Option*, std::string>> tracked;
  Json layer = Json::object();

  void collect() {
    for (auto& [opt, key] : tracked) {
      if (opt->count() == 0) continue;
      if (key == "ratio") layer[key] = ratio;
      else if (key == "conditional") layer[key] = conditional;
      else if (key == "condition_template") layer[key] = condition_template;
      else if (key == "segment_budget") layer[key] = segment_budget;
      else if (key == "boundary_slack") layer[key] = boundary_slack;
      else if (key == "workers") layer[key] = workers;
      else if (key == "max_in_flight") layer[key] = max_in_flight;
      else if (key == "retries") layer[key] = retries;
      else if (key == "scope") layer[key] = scope;
      else if (key == "score_space") layer[key] = score_space;
      else if (key == "prefix_mode") layer[key] = prefix_mode;
      else if (key == "backend") layer[key] = backend;
      else if (key == "tuned_backend") layer[key] = tuned_backend;
      else if (key == "schema") layer[key] = schema;
      else if (key == "lenient") layer[key] = lenient;
      else if (key == "backend_nats") layer[key] = backend_nats;
      else if (key == "bos_id") layer[key] = bos_id;
    }
  }
};

void add_selection_flags(CLI::App* app, Cli& cli) {
  auto track = [&](CLI::Option* opt, const std::string& key) { cli.tracked.emplace_back(opt, key); };
  track(app->add_option("--ratio", cli.ratio, "Retention ratio alpha in (0, 1]"), "ratio");
  track(app->add_flag("--conditional,!--no-conditional", cli.conditional,
                      "Condition scores on the answer (default) or rank by raw perplexity"),
        "conditional");
  track(app->add_option("--condition-template", cli.condition_template,
                        "Condition text; {answer} and {problem} are substituted"),
        "condition_template");
  track(app->add_option("--segment-budget", cli.segment_budget, "Max thinking tokens per segment"), "segment_budget");
  track(app->add_option("--boundary-slack", cli.boundary_slack, "Tokens a segment cut may move back"),
        "boundary_slack");
  track(app->add_option("--scope", cli.scope, "global | per-segment"), "scope");
  track(app->add_option("--score-space", cli.score_space, "ppl-diff | bits-diff"), "score_space");
  track(app->add_option("--prefix-mode", cli.prefix_mode,
                        "Per-segment context from earlier segments: compressed | original"),
        "prefix_mode");
}

void add_backend_flags(CLI::App* app, Cli& cli) {
  auto track = [&](CLI::Option* opt, const std::string& key) { cli.tracked.emplace_back(opt, key); };
  track(app->add_option("--backend", cli.backend, "toy:<spec.json> | http:<url> (env CTS_BACKEND_URL)"), "backend");
  track(app->add_option("--bos-id", cli.bos_id, "Begin-of-sequence id prepended for HTTP backends"), "bos_id");
  track(app->add_flag("--backend-nats", cli.backend_nats, "HTTP backend reports natural-log probabilities"),
        "backend_nats");
  track(app->add_option("--max-in-flight", cli.max_in_flight, "Concurrent HTTP requests"), "max_in_flight");
  track(app->add_option("--retries", cli.retries, "HTTP attempts per request"), "retries");
}

void add_run_flags(CLI::App* app, Cli& cli) {
  auto track = [&](CLI::Option* opt, const std::string& key) { cli.tracked.emplace_back(opt, key); };
  app->add_option("--input", cli.input, "Input JSONL")->required();
  track(app->add_option("--workers", cli.workers, "Scoring threads"), "workers");
  track(app->add_flag("--lenient", cli.lenient, "Skip failed records instead of aborting"), "lenient");
  track(app->add_option("--schema", cli.schema, "Field mapping, e.g. problem=question,thinking=cot"), "schema");
  app->add_option("--report", cli.report, "Write the run report JSON here");
  app->add_option("--config", cli.config, "JSON settings file");
  app->add_flag("--print-report", cli.print_report, "Print the final report JSON to stdout");
}

Json resolve_settings(const Cli& cli) {
  Json settings = default_settings();
  Json env = Json::object();
  if (const char* url = std::getenv("CTS_BACKEND_URL"); url && *url) env["backend"] = std::string("http:") + url;
  merge(settings, env, "environment");
  if (!cli.config.empty()) {
    std::ifstream in(cli.config);
    if (!in) throw cts::IoError("cannot open config file '" + cli.config + "'");
    Json file;
    try {
      file = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw cts::ConfigError("config file '" + cli.config + "': " + e.what());
    }
    if (!file.is_object()) throw cts::ConfigError("config file '" + cli.config + "' is not a JSON object");
    merge(settings, file, "config file");
  }
  merge(settings, cli.layer, "command line");
  return settings;
}

cts::SelectionConfig selection_from(const Json& s) {
  try {
    cts::SelectionConfig c;
    if (s["ratio"].is_null()) throw cts::ConfigError("--ratio is required");
    c.alpha = s["ratio"].get<double>();
    c.conditional = s["conditional"].get<bool>();
    c.condition_template = s["condition_template"].get<std::string>();
    c.segment_budget = s["segment_budget"].get<std::size_t>();
    c.boundary_slack = s["boundary_slack"].get<std::size_t>();
    c.selection_scope = cts::parse_scope(s["scope"].get<std::string>());
    c.score_space = cts::parse_score_space(s["score_space"].get<std::string>());
    c.prefix_mode = cts::parse_prefix_mode(s["prefix_mode"].get<std::string>());
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw cts::ConfigError(std::string("bad setting type: ") + e.what());
  }
}

std::unique_ptr<cts::LogprobBackend> make_backend(const Json& spec, const Json& s) {
  if (spec.is_null()) throw cts::ConfigError("no backend: pass --backend or set CTS_BACKEND_URL");
  std::string text = spec.get<std::string>();
  if (text.rfind("toy:", 0) == 0) {
    return std::make_unique<cts::ToyBackend>(cts::ToyLmSpec::load(text.substr(4)));
  }
  if (text.rfind("http:", 0) == 0) {
    std::string url = text.substr(5);
    if (url.rfind("//", 0) == 0) url = "http:" + url;
    cts::HttpBackendConfig config;
    config.base_url = url;
    if (const char* token = std::getenv("CTS_BACKEND_TOKEN"); token && *token) config.bearer_token = token;
    config.natural_log = s["backend_nats"].get<bool>();
    config.max_in_flight = s["max_in_flight"].get<std::size_t>();
    config.max_attempts = s["retries"].get<int>();
    if (!s["bos_id"].is_null()) config.bos_token = cts::TokenId{s["bos_id"].get<std::uint32_t>()};
    return std::make_unique<cts::HttpBackend>(config);
  }
  throw cts::ConfigError("backend '" + text + "' must start with toy: or http:");
}

cts::FieldSchema schema_from(const Json& s) { return cts::FieldSchema::parse(s["schema"].get<std::string>()); }

void write_json_file(const std::string& path, const Json& value) {
  cts::AtomicFileWriter file(path);
  file.write(value.dump(2) + "\n");
  file.commit();
}

void print_summary(const std::string& label, const cts::RunReport& r) {
  std::cerr << label << ": " << r.instances_ok << "/" << r.instances_total << " ok, " << r.instances_failed
            << " failed, kept " << r.kept_tokens_total << "/" << r.original_tokens_total << " tokens (ratio "
            << r.mean_actual_ratio << "), " << r.wall_time_seconds << " s\n";
  for (const auto& e : r.errors) std::cerr << "  line " << e.line << " [" << e.id << "]: " << e.message << "\n";
}

int status_code(cts::RunStatus status) {
  switch (status) {
    case cts::RunStatus::kOk: return kExitOk;
    case cts::RunStatus::kInstanceFailures: return kExitRecordFailures;
    case cts::RunStatus::kBackendUnreachable: return kExitBackend;
    case cts::RunStatus::kInterrupted: return kExitInterrupted;
  }
  return kExitRecordFailures;
}

cts::PipelineOptions pipeline_options(const Cli& cli, const Json& s) {
  cts::PipelineOptions options;
  options.input = cli.input;
  options.schema = schema_from(s);
  options.config = selection_from(s);
  options.workers = s["workers"].get<std::size_t>();
  if (options.workers == 0) throw cts::ConfigError("--workers must be at least 1");
  options.lenient = s["lenient"].get<bool>();
  options.cancel = &g_cancel;
  options.progress = [](const cts::Progress& p) {
    std::cerr << "\rprocessed " << p.processed << " (" << p.failed << " failed)" << std::flush;
  };
  return options;
}

int finish_run(const Cli& cli, const std::string& label, const cts::RunOutcome& outcome) {
  std::cerr << "\n";
  print_summary(label, outcome.report);
  Json report = outcome.report.to_json();
  if (!cli.report.empty()) write_json_file(cli.report, report);
  if (cli.print_report) std::cout << report.dump(2) << "\n";
  if (outcome.status == cts::RunStatus::kInstanceFailures && outcome.report.instances_failed > 0) {
    std::cerr << "aborted: " << outcome.message << "\n";
  } else if (outcome.status == cts::RunStatus::kBackendUnreachable) {
    std::cerr << "backend unreachable: " << outcome.message << "\n";
  } else if (outcome.status == cts::RunStatus::kInterrupted) {
    std::cerr << "interrupted; partial outputs removed\n";
  }
  return status_code(outcome.status);
}

int cmd_compress(const Cli& cli) {
  Json s = resolve_settings(cli);
  cts::PipelineOptions options = pipeline_options(cli, s);
  if (cli.output.empty()) throw cts::ConfigError("--output is required");
  options.output = cli.output;
  if (!cli.score_dump.empty()) options.score_dump = cli.score_dump;
  auto backend = make_backend(s["backend"], s);
  return finish_run(cli, "compress", cts::run_compress(options, *backend));
}

int cmd_score(const Cli& cli) {
  Json s = resolve_settings(cli);
  cts::PipelineOptions options = pipeline_options(cli, s);
  if (cli.output.empty()) throw cts::ConfigError("--output is required");
  options.score_dump = cli.output;
  options.dump_kept = false;
  auto backend = make_backend(s["backend"], s);
  return finish_run(cli, "score", cts::run_compress(options, *backend));
}

int cmd_ablate(const Cli& cli) {
  Json s = resolve_settings(cli);
  cts::PipelineOptions options = pipeline_options(cli, s);
  if (cli.output_dir.empty()) throw cts::ConfigError("--output-dir is required");
  if (s["tuned_backend"].is_null()) throw cts::ConfigError("--tuned-backend is required");
  auto standard = make_backend(s["backend"], s);
  auto tuned = make_backend(s["tuned_backend"], s);
  std::filesystem::create_directories(cli.output_dir);
  auto entries = cts::run_ablation(options, *standard, *tuned, cli.output_dir);
  std::cerr << "\n";
  Json reports = Json::object();
  int code = kExitOk;
  for (const auto& e : entries) {
    print_summary(e.mode.name(), e.outcome.report);
    reports[e.mode.name()] = e.outcome.report.to_json();
    if (code == kExitOk) code = status_code(e.outcome.status);
  }
  std::string table = cts::ablation_table(entries);
  {
    cts::AtomicFileWriter file(std::filesystem::path(cli.output_dir) / "ablation.tsv");
    file.write(table);
    file.commit();
  }
  std::cerr << table;
  if (!cli.report.empty()) write_json_file(cli.report, reports);
  if (cli.print_report) std::cout << reports.dump(2) << "\n";
  return code;
}

template <class Reader>
bool report_read_errors(Reader& reader, bool lenient) {
  bool any = false;
  for (const auto& e : reader.take_errors()) {
    std::cerr << "line " << e.line << " [" << e.id << "]: " << e.message << "\n";
    any = true;
  }
  return any && !lenient;
}

int cmd_emit(const std::string& target, const Cli& cli) {
  if (cli.output.empty()) throw cts::ConfigError("--output is required");
  bool failed = false;
  cts::JsonlWriter out(cli.output);
  if (target == "sft") {
    auto reader = cts::read_compressed_dataset(cli.input);
    auto warn = [](const std::string& w) { std::cerr << "warning: " << w << "\n"; };
    while (auto record = reader.next()) {
      try {
        out.write(cts::to_json(cts::emit_sft(*record, warn)));
      } catch (const cts::Error& e) {
        std::cerr << e.what() << "\n";
        failed = failed || !cli.lenient;
      }
    }
    failed = report_read_errors(reader, cli.lenient) || failed;
  } else if (target == "rm-prompts") {
    auto reader = cts::read_rm_corpus(cli.input);
    while (auto example = reader.next()) {
      try {
        out.write(cts::to_json(cts::emit_rm_prompt(*example)));
      } catch (const cts::Error& e) {
        std::cerr << e.what() << "\n";
        failed = failed || !cli.lenient;
      }
    }
    failed = report_read_errors(reader, cli.lenient) || failed;
  } else if (target == "rm-rows") {
    if (cli.responses.empty()) throw cts::ConfigError("--responses is required for rm-rows");
    std::vector<cts::RmResponse> responses;
    cts::RecordReader<cts::RmResponse, decltype(&cts::decode_rm_response)> rr(cli.responses,
                                                                             &cts::decode_rm_response,
                                                                             cts::ReadMode::kLenient);
    while (auto r = rr.next()) responses.push_back(std::move(*r));
    failed = report_read_errors(rr, cli.lenient);
    auto reader = cts::read_rm_corpus(cli.input);
    std::vector<cts::RmCorpusExample> examples;
    while (auto e = reader.next()) examples.push_back(std::move(*e));
    failed = report_read_errors(reader, cli.lenient) || failed;
    auto result = cts::build_rm_training_rows(examples, responses);
    std::size_t flagged = 0;
    for (const auto& row : result.rows) {
      out.write(cts::to_json(row));
      flagged += row.flagged ? 1 : 0;
    }
    if (flagged) std::cerr << "warning: " << flagged << " responses are not word subsequences of their steps\n";
    if (!result.errors.empty()) {
      std::cerr << "mismatched responses:";
      for (const auto& e : result.errors) std::cerr << " " << e.id;
      std::cerr << "\n";
      for (const auto& e : result.errors) std::cerr << "  line " << e.line << ": " << e.message << "\n";
      failed = true;
    }
  } else {
    std::cerr << "unknown emit target '" << target << "' (expected sft, rm-prompts or rm-rows)\n";
    return kExitUsage;
  }
  if (failed) return kExitRecordFailures;
  std::size_t n = out.commit();
  std::cerr << "emit " << target << ": " << n << " records\n";
  return kExitOk;
}

int cmd_stats(const Cli& cli) {
  Json s = resolve_settings(cli);
  std::unique_ptr<cts::LogprobBackend> backend;
  if (!s["backend"].is_null()) backend = make_backend(s["backend"], s);
  cts::DatasetStats stats = cts::dataset_stats(cli.input, schema_from(s), backend.get());
  Json j = stats.to_json();
  std::cerr << "records " << stats.records << " (compressed " << stats.compressed_records << ", raw "
            << stats.raw_records << ", malformed " << stats.malformed << "), kept " << stats.ratios.kept_tokens_total
            << "/" << stats.ratios.original_tokens_total << " tokens, ratio " << stats.ratios.mean_actual_ratio
            << "\n";
  if (!cli.report.empty()) write_json_file(cli.report, j);
  if (cli.print_report) std::cout << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional token selection for chain-of-thought training data"};
  app.require_subcommand(1);
  Cli cli;

  auto* compress = app.add_subcommand("compress", "Compress the thinking field of a dataset");
  add_run_flags(compress, cli);
  add_selection_flags(compress, cli);
  add_backend_flags(compress, cli);
  compress->add_option("--output", cli.output, "Compressed JSONL");
  compress->add_option("--score-dump", cli.score_dump, "Also write per-token scores here");

  auto* score = app.add_subcommand("score", "Write per-token scores without compressing");
  add_run_flags(score, cli);
  add_selection_flags(score, cli);
  add_backend_flags(score, cli);
  score->add_option("--output", cli.output, "Score dump JSONL");

  auto* ablate = app.add_subcommand("ablate", "Run the four conditional/reference-model variants");
  add_run_flags(ablate, cli);
  add_selection_flags(ablate, cli);
  add_backend_flags(ablate, cli);
  ablate->add_option("--output-dir", cli.output_dir, "Directory for per-mode outputs")->required();
  cli.tracked.emplace_back(ablate->add_option("--tuned-backend", cli.tuned_backend, "Backend for the tuned RM"),
                           "tuned_backend");

  auto* emit = app.add_subcommand("emit", "Render training corpora");
  emit->require_subcommand(1);
  std::string emit_target;
  for (const char* name : {"sft", "rm-prompts", "rm-rows"}) {
    auto* sub = emit->add_subcommand(name);
    sub->add_option("--input", cli.input, "Input JSONL")->required();
    sub->add_option("--output", cli.output, "Output JSONL")->required();
    sub->add_flag("--lenient", cli.lenient, "Skip bad records");
    if (std::string(name) == "rm-rows") {
      sub->add_option("--responses", cli.responses, "Compressed-steps responses JSONL")->required();
    }
    sub->callback([&emit_target, name] { emit_target = name; });
  }

  auto* stats = app.add_subcommand("stats", "Summarize a raw or compressed dataset");
  stats->add_option("--input", cli.input, "Input JSONL")->required();
  stats->add_option("--report", cli.report, "Write the stats JSON here");
  stats->add_option("--config", cli.config, "JSON settings file");
  stats->add_flag("--print-report", cli.print_report, "Print the stats JSON to stdout");
  add_backend_flags(stats, cli);
  cli.tracked.emplace_back(stats->add_option("--schema", cli.schema, "Field mapping"), "schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  std::signal(SIGINT, on_interrupt);
  std::signal(SIGTERM, on_interrupt);
  cli.collect();
  try {
    if (*compress) return cmd_compress(cli);
    if (*score) return cmd_score(cli);
    if (*ablate) return cmd_ablate(cli);
    if (*emit) return cmd_emit(emit_target, cli);
    if (*stats) return cmd_stats(cli);
  } catch (const cts::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cts::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const cts::BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return e.retriable() ? kExitBackend : kExitRecordFailures;
  } catch (const cts::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitRecordFailures;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
