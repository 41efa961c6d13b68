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

// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cts/cts.hpp"
#include "support/oracle.hpp"
#include "support/test_util.hpp"

namespace {

using namespace cts;
using testing::data_dir;
using testing::OracleConfig;
using testing::OracleModel;
using testing::read_file;
using testing::TempDir;

const std::vector<double> kSweep = {0.5, 0.6, 0.7, 0.8, 0.9};
const std::vector<const char*> kSpecs = {"toy_spec.json", "tuned_spec.json", "uniform_spec.json"};

struct Check {
  bool ok = true;
  std::string detail;

  void fail(const std::string& why) {
    if (ok) detail = why;
    ok = false;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<CotInstance> load_corpus(const std::filesystem::path& p) {
  std::vector<CotInstance> out;
  auto reader = read_dataset(p, {}, ReadMode::kStrict);
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

SelectionConfig to_config(const OracleConfig& o) {
  SelectionConfig c;
  c.alpha = o.alpha_percent / 100.0;
  c.conditional = o.conditional;
  c.condition_template = o.condition_template;
  c.segment_budget = o.segment_budget;
  c.boundary_slack = o.boundary_slack;
  c.score_space = o.bits_diff ? ScoreSpace::kBitsDiff : ScoreSpace::kPplDiff;
  c.selection_scope = o.per_segment ? SelectionScope::kPerSegment : SelectionScope::kGlobal;
  c.prefix_mode = o.original_prefix ? PrefixMode::kOriginal : PrefixMode::kCompressed;
  return c;
}

// The serialized record the oracle predicts for `inst`.
std::string oracle_line(const OracleModel& m, const CotInstance& inst, const OracleConfig& oc) {
  auto o = testing::oracle_compress(m, {inst.id, inst.problem, inst.thinking, inst.answer}, oc);
  CompressedInstance c;
  c.id = inst.id;
  c.problem = inst.problem;
  c.compressed_thinking = o.compressed_thinking;
  c.answer = inst.answer;
  c.nominal_ratio = oc.alpha_percent / 100.0;
  c.kept_count = o.kept;
  c.original_count = o.original;
  c.actual_ratio = static_cast<double>(o.kept) / static_cast<double>(o.original);
  c.extras = inst.extras;
  return to_jsonl_line(to_json(c));
}

int run_cli(const std::string& args) {
  std::string cmd = "'" + std::string(CTS_CLI_PATH) + "' " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Check oracle_equivalence() {
  Check c;
  auto started = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20260301);
  auto vocab = testing::char_vocabulary();
  std::uniform_int_distribution<std::size_t> len(5, 20);
  std::uniform_int_distribution<int> percent(1, 100), budget(2, 8);
  std::bernoulli_distribution coin(0.5);
  const char* templates[] = {"The correct answer is: {answer}\n", "ANS: {answer} ", "{problem} {answer}", ""};
  std::size_t compared = 0;
  for (int i = 0; i < 200 && c.ok; ++i) {
    OracleModel model{vocab, testing::random_table(vocab, rng)};
    ToyBackend backend(testing::spec_from_oracle(model));
    OracleConfig oc;
    oc.alpha_percent = percent(rng);
    oc.conditional = i % 10 != 0;
    oc.condition_template = templates[i % 4];
    oc.bits_diff = coin(rng);
    oc.per_segment = i % 3 == 0;
    oc.original_prefix = coin(rng);
    oc.segment_budget = static_cast<std::size_t>(budget(rng));
    oc.boundary_slack = std::uniform_int_distribution<std::size_t>(0, oc.segment_budget - 1)(rng);
    CotInstance inst;
    inst.id = "o" + std::to_string(i);
    inst.problem = "p" + std::to_string(i);
    inst.answer = std::to_string(i * 37 % 1000);
    inst.thinking = testing::tie_free_text(vocab, len(rng), rng);
    std::string got = to_jsonl_line(to_json(compress_instance(inst, to_config(oc), backend).compressed));
    std::string want = oracle_line(model, inst, oc);
    if (got != want) c.fail("instance " + inst.id + " differs: got " + got + " want " + want);
    ++compared;
  }
  double s = seconds_since(started);
  if (s >= 10.0) c.fail("took " + fmt("%.2f", s) + " s");
  if (c.ok) c.detail = std::to_string(compared) + " instances identical in " + fmt("%.3f", s) + " s";
  return c;
}

Check score_formula() {
  Check c;
  ToyLmSpec::Table t;
  t["START"] = {{"a", 0.25}, {"b", 0.25}, {"c", 0.25}, {"Z", 0.25}};
  t["Z"] = {{"a", 0.5}, {"b", 0.25}, {"c", 0.125}, {"Z", 0.125}};
  t["a"] = {{"a", 0.125}, {"b", 0.5}, {"c", 0.25}, {"Z", 0.125}};
  t["b"] = {{"a", 0.5}, {"b", 0.125}, {"c", 0.125}, {"Z", 0.25}};
  t["c"] = {{"a", 0.2}, {"b", 0.3}, {"c", 0.1}, {"Z", 0.4}};
  ToyBackend backend(ToyLmSpec({"a", "b", "c", "Z"}, t));

  struct Case {
    std::string thinking, answer, tmpl;
    std::vector<double> expect;  // worked out from the table above
  };
  std::vector<Case> cases = {
      // a|START vs a|Z: 4 - 2.
      {"abc", "Z", "{answer}", {2.0, 0.0, 0.0}},
      // b|START vs b|Z: 4 - 4; then a|b both sides.
      {"ba", "Z", "{answer}", {0.0, 0.0}},
      // condition "ZZ": c|START vs c|Z: 4 - 8.
      {"cab", "Z", "{answer}{answer}", {-4.0, 0.0, 0.0}},
      // condition "c": a|START vs a|c: 4 - 5; Z|a both sides.
      {"aZ", "c", "{answer}", {-1.0, 0.0}},
      // condition "cb": b|START vs b|b: 4 - 8.
      {"bc", "cb", "{answer}", {-4.0, 0.0}},
  };
  std::size_t checked = 0;
  for (const auto& k : cases) {
    CotInstance inst;
    inst.id = k.thinking;
    inst.thinking = k.thinking;
    inst.answer = k.answer;
    SelectionConfig cfg;
    cfg.condition_template = k.tmpl;
    auto rows = score_tokens(inst, cfg, backend);
    if (rows.size() != k.expect.size()) {
      c.fail("'" + k.thinking + "' produced " + std::to_string(rows.size()) + " rows");
      continue;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double by_hand_diff = rows[i].ppl_uncond - rows[i].ppl_cond;
      if (std::abs(rows[i].score - k.expect[i]) > 1e-12 || std::abs(by_hand_diff - k.expect[i]) > 1e-12) {
        c.fail("'" + k.thinking + "' token " + std::to_string(i) + ": r=" + fmt("%.17g", rows[i].score) +
               " expected " + fmt("%.17g", k.expect[i]));
      }
      ++checked;
    }
  }
  if (c.ok) c.detail = std::to_string(checked) + " token scores match the hand-computed values";
  return c;
}

Check ratio_fidelity() {
  Check c;
  TempDir dir;
  std::mt19937_64 rng(20260404);
  auto vocab = testing::char_vocabulary();
  OracleModel model{vocab, testing::random_table(vocab, rng)};
  ToyBackend backend(testing::spec_from_oracle(model));
  testing::write_synthetic_corpus(dir / "in.jsonl", vocab, 1000, 20, 200, 77);

  // Unconditional perplexity ranks tie-free text without ties under a
  // table of distinct probabilities; confirm it.
  SelectionConfig probe;
  probe.conditional = false;
  for (const auto& inst : load_corpus(dir / "in.jsonl")) {
    auto rows = score_tokens(inst, probe, backend);
    std::set<double> distinct;
    for (const auto& r : rows) distinct.insert(r.score);
    if (distinct.size() != rows.size()) {
      c.fail("instance " + inst.id + " has tied scores");
      return c;
    }
  }
  std::string worst;
  for (bool conditional : {false, true}) {
    for (double alpha : kSweep) {
      PipelineOptions o;
      o.input = dir / "in.jsonl";
      o.config.alpha = alpha;
      o.config.conditional = conditional;
      o.workers = 4;
      auto outcome = run_compress(o, backend);
      double actual = outcome.report.mean_actual_ratio;
      if (outcome.status != RunStatus::kOk || outcome.report.instances_ok != 1000) {
        c.fail("run failed at alpha " + fmt("%.1f", alpha));
      } else if (std::abs(actual - alpha) > 0.02) {
        c.fail("alpha " + fmt("%.1f", alpha) + " gave " + fmt("%.4f", actual));
      }
      if (conditional) worst += fmt(" %.1f", alpha) + fmt("->%.4f", actual);
    }
  }
  if (c.ok) c.detail = "1000 instances, nominal->actual" + worst;
  return c;
}

bool kept_subset(const std::vector<bool>& small, const std::vector<bool>& big) {
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[i] && !big[i]) return false;
  }
  return true;
}

Check identity_and_nesting() {
  Check c;
  TempDir dir;
  std::size_t identity = 0, nested = 0;
  std::vector<std::filesystem::path> fixtures = {data_dir() / "corpus.jsonl"};
  auto vocab = testing::char_vocabulary();
  testing::write_synthetic_corpus(dir / "synthetic.jsonl", vocab, 100, 5, 120, 3);
  std::mt19937_64 rng(5);
  OracleModel chars{vocab, testing::random_table(vocab, rng)};

  auto each = [&](const ToyBackend& backend, const std::filesystem::path& path) {
    for (const auto& inst : load_corpus(path)) {
      for (bool conditional : {true, false}) {
        SelectionConfig cfg;
        cfg.conditional = conditional;
        cfg.alpha = 1.0;
        auto full = compress_instance(inst, cfg, backend);
        if (full.compressed.compressed_thinking != inst.thinking) c.fail("alpha 1 changed " + inst.id);
        ++identity;
        std::vector<bool> previous;
        auto rows = full.rows;
        for (auto it = kSweep.rbegin(); it != kSweep.rend(); ++it) {
          cfg.alpha = *it;
          auto sel = select_tokens(rows, {}, cfg);
          if (!previous.empty() && !kept_subset(sel.kept_mask, previous)) {
            c.fail("kept sets not nested for " + inst.id + " at alpha " + fmt("%.1f", *it));
          }
          // The library path selects the same set as selecting on the fixed rows.
          if (compress_instance(inst, cfg, backend).selection.kept_mask != sel.kept_mask) {
            c.fail("compress_instance and fixed-score selection disagree for " + inst.id);
          }
          previous = sel.kept_mask;
        }
        ++nested;
      }
    }
  };
  for (const char* spec : kSpecs) {
    ToyBackend backend(testing::spec_from_oracle(testing::oracle_from_file(data_dir() / spec)));
    for (const auto& f : fixtures) each(backend, f);
  }
  each(ToyBackend(testing::spec_from_oracle(chars)), dir / "synthetic.jsonl");

  // The CLI path as well: alpha 1 output carries the thinking through.
  std::string out = (dir / "identity.jsonl").string();
  if (run_cli("compress --input '" + (data_dir() / "corpus.jsonl").string() + "' --output '" + out +
              "' --ratio 1.0 --backend 'toy:" + (data_dir() / "toy_spec.json").string() + "'") != 0) {
    c.fail("cli run at ratio 1.0 failed");
  } else {
    auto reader = read_compressed_dataset(out, ReadMode::kStrict);
    auto inputs = load_corpus(data_dir() / "corpus.jsonl");
    std::size_t i = 0;
    while (auto r = reader.next()) {
      if (i >= inputs.size() || r->compressed_thinking != inputs[i].thinking) c.fail("cli identity mismatch");
      ++i;
    }
  }
  if (c.ok) {
    c.detail = std::to_string(identity) + " identity runs, " + std::to_string(nested) + " nested sweeps";
  }
  return c;
}

Check conditional_off() {
  Check c;
  TempDir dir;
  auto vocab = testing::char_vocabulary();
  testing::write_synthetic_corpus(dir / "synthetic.jsonl", vocab, 200, 5, 150, 11);
  std::mt19937_64 rng(13);
  OracleModel chars{vocab, testing::random_table(vocab, rng)};

  std::vector<std::pair<OracleModel, std::filesystem::path>> fixtures;
  for (const char* spec : kSpecs) fixtures.push_back({testing::oracle_from_file(data_dir() / spec), data_dir() / "corpus.jsonl"});
  fixtures.push_back({chars, dir / "synthetic.jsonl"});

  std::size_t files = 0;
  for (const auto& [model, path] : fixtures) {
    ToyBackend backend(testing::spec_from_oracle(model));
    for (int percent : {50, 70, 90}) {
      for (bool per_segment : {false, true}) {
        OracleConfig oc;
        oc.alpha_percent = percent;
        oc.conditional = false;
        oc.per_segment = per_segment;
        oc.segment_budget = 16;
        oc.boundary_slack = 4;
        std::string want;
        for (const auto& inst : load_corpus(path)) want += oracle_line(model, inst, oc);
        PipelineOptions o;
        o.input = path;
        o.output = dir / "got.jsonl";
        o.config = to_config(oc);
        o.config.condition_template = std::string(kDefaultConditionTemplate);
        auto outcome = run_compress(o, backend);
        if (outcome.status != RunStatus::kOk) {
          c.fail("run failed: " + outcome.message);
        } else if (read_file(dir / "got.jsonl") != want) {
          c.fail("output differs from the perplexity baseline for " + path.filename().string() + " at " +
                 std::to_string(percent) + "%");
        }
        ++files;
      }
    }
  }
  if (c.ok) c.detail = std::to_string(files) + " output files byte-identical to the perplexity baseline";
  return c;
}

Check golden_files() {
  Check c;
  TempDir dir;
  std::string sft = (dir / "sft.jsonl").string(), rm = (dir / "rm.jsonl").string();
  if (run_cli("emit sft --input '" + (data_dir() / "compressed.jsonl").string() + "' --output '" + sft + "'") != 0 ||
      run_cli("emit rm-prompts --input '" + (data_dir() / "rm_corpus.jsonl").string() + "' --output '" + rm + "'") != 0) {
    c.fail("emit command failed");
    return c;
  }
  if (read_file(sft) != read_file(data_dir() / "golden" / "sft.jsonl")) c.fail("sft.jsonl differs");
  if (read_file(rm) != read_file(data_dir() / "golden" / "rm_prompts.jsonl")) c.fail("rm_prompts.jsonl differs");

  auto reader = read_compressed_dataset(data_dir() / "compressed.jsonl", ReadMode::kStrict);
  auto first = reader.next();
  SftRecord r = emit_sft(*first);
  if (r.prompt + r.completion != read_file(data_dir() / "golden" / "sft_c1.txt")) c.fail("sft_c1.txt differs");
  auto rm_reader = read_rm_corpus(data_dir() / "rm_corpus.jsonl", ReadMode::kStrict);
  if (emit_rm_prompt(*rm_reader.next()).instruction != read_file(data_dir() / "golden" / "rm_prompt_r1.txt")) {
    c.fail("rm_prompt_r1.txt differs");
  }
  if (c.ok) c.detail = "4 golden files byte-identical";
  return c;
}

Check determinism() {
  Check c;
  TempDir dir;
  auto vocab = testing::oracle_from_file(data_dir() / "toy_spec.json").vocabulary;
  testing::write_synthetic_corpus(dir / "in.jsonl", vocab, 500, 20, 300, 500);
  std::string base = "compress --input '" + (dir / "in.jsonl").string() + "' --ratio 0.7 --backend 'toy:" +
                     (data_dir() / "toy_spec.json").string() + "'";
  for (int w : {1, 4}) {
    std::string out = (dir / ("w" + std::to_string(w) + ".jsonl")).string();
    if (run_cli(base + " --workers " + std::to_string(w) + " --output '" + out + "'") != 0) {
      c.fail("run with " + std::to_string(w) + " workers failed");
      return c;
    }
  }
  std::string one = read_file(dir / "w1.jsonl"), four = read_file(dir / "w4.jsonl");
  std::size_t n = std::count(one.begin(), one.end(), '\n');
  if (n != 500) c.fail("expected 500 records, got " + std::to_string(n));
  if (one != four) c.fail("outputs differ");
  if (c.ok) c.detail = "500 records, " + std::to_string(one.size()) + " bytes identical";
  return c;
}

Check throughput() {
  Check c;
  TempDir dir;
  auto vocab = testing::char_vocabulary();
  std::mt19937_64 rng(8);
  OracleModel model{vocab, testing::random_table(vocab, rng)};
  testing::write_file(dir / "spec.json",
                      nlohmann::json({{"vocabulary", model.vocabulary}, {"table", model.table}}).dump());
  testing::write_synthetic_corpus(dir / "in.jsonl", vocab, 1000, 180, 220, 9);
  auto started = std::chrono::steady_clock::now();
  int code = run_cli("compress --input '" + (dir / "in.jsonl").string() + "' --output '" +
                     (dir / "out.jsonl").string() + "' --ratio 0.7 --workers 1 --backend 'toy:" +
                     (dir / "spec.json").string() + "' --report '" + (dir / "r.json").string() + "'");
  double s = seconds_since(started);
  if (code != 0) {
    c.fail("exit code " + std::to_string(code));
    return c;
  }
  auto report = Json::parse(read_file(dir / "r.json"));
  if (report["instances_ok"] != 1000) c.fail("not all instances compressed");
  if (s >= 60.0) c.fail("took " + fmt("%.2f", s) + " s");
  if (c.ok) {
    c.detail = "1000 instances, " + std::to_string(report["original_tokens_total"].get<std::size_t>()) +
               " tokens in " + fmt("%.2f", s) + " s";
  }
  return c;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Check()> run;
  };
  std::vector<Criterion> criteria = {
      {"oracle equivalence", oracle_equivalence},
      {"score formula", score_formula},
      {"ratio fidelity", ratio_fidelity},
      {"identity and nesting", identity_and_nesting},
      {"conditional-off reduction", conditional_off},
      {"template golden files", golden_files},
      {"determinism under parallelism", determinism},
      {"throughput", throughput},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check result;
    try {
      result = criteria[i].run();
    } catch (const std::exception& e) {
      result.fail(std::string("exception: ") + e.what());
    }
    failures += result.ok ? 0 : 1;
    std::cout << (result.ok ? "PASS" : "FAIL") << " criterion " << (i + 1) << " " << criteria[i].name << ": "
              << result.detail << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures;
}
