// Command-line entry point: one subcommand per pipeline stage.
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ttpmap/config.hpp"
#include "ttpmap/error.hpp"
#include "ttpmap/pipeline.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::string> ttps;
  std::string output;
};

void add_common(CLI::App* cmd, Common& c, bool with_output) {
  cmd->add_option("-c,--config", c.config_path, "Config file (TOML-style key = value)")->required()->check(
      CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set retrieval.k=10")->take_all();
  cmd->add_option("--ttp", c.ttps, "Restrict the technique catalog to these ids")->take_all();
  if (with_output) cmd->add_option("-o,--output", c.output, "Output path (defaults to the run directory)");
}

ttpmap::Config load_config(const Common& c) {
  try {
    auto cfg = ttpmap::Config::load(c.config_path);
    for (const auto& o : c.overrides) cfg.set(o);
    return cfg;
  } catch (const ttpmap::Error& e) {
    throw ttpmap::StageError("config", e.what());
  }
}

ttpmap::CommandOptions options_from(const Common& c) {
  ttpmap::CommandOptions o;
  o.config_path = c.config_path;
  o.ttps = c.ttps;
  if (!c.output.empty()) o.output = c.output;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute MITRE ATT&CK techniques to functions of decompiled binaries"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ttpmap::kToolVersion);

  Common common;
  std::string export_path, candidates_path, dot_path, ablation;
  bool resume = false, allow_skew = false;

  auto* ingest = app.add_subcommand("ingest", "Load, deduplicate and graph a binary export");
  add_common(ingest, common, true);
  ingest->add_option("export", export_path, "Binary export (JSON)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--dot", dot_path, "Write the condensed call graph as Graphviz DOT");

  auto* rename = app.add_subcommand("rename", "Recover function names and summaries bottom-up");
  add_common(rename, common, true);
  rename->add_option("export", export_path, "Binary export (JSON)")->required()->check(CLI::ExistingFile);
  rename->add_flag("--resume", resume, "Continue from the checkpoint in the run directory");
  rename->add_option("--dot", dot_path, "Write the condensed call graph as Graphviz DOT");

  auto* guidelines = app.add_subcommand("guidelines", "Synthesize per-technique reasoning guidelines");
  add_common(guidelines, common, false);
  guidelines->add_flag("--resume", resume, "Keep guidelines already in the store");
  guidelines->add_flag("--allow-version-skew", allow_skew, "Accept stored guidelines from another ATT&CK version");

  auto* retrieve = app.add_subcommand("retrieve", "Select candidate function/technique pairs");
  add_common(retrieve, common, false);
  retrieve->add_option("export", export_path, "Renamed binary export")->required()->check(CLI::ExistingFile);

  auto add_analysis_flags = [&](CLI::App* cmd) {
    cmd->add_option("--ablation", ablation, "Disable a stage: no_explorer or no_guideline")
        ->check(CLI::IsMember({"no_explorer", "no_guideline"}));
    cmd->add_flag("--allow-version-skew", allow_skew, "Accept guidelines from another ATT&CK version");
  };

  auto* analyze = app.add_subcommand("analyze", "Analyze candidate pairs with the exploring agent");
  add_common(analyze, common, false);
  analyze->add_option("export", export_path, "Renamed binary export")->required()->check(CLI::ExistingFile);
  analyze->add_option("candidates", candidates_path, "Candidate dump from retrieve")
      ->required()
      ->check(CLI::ExistingFile);
  add_analysis_flags(analyze);

  auto* run = app.add_subcommand("run", "Retrieve and analyze in one pass");
  add_common(run, common, false);
  run->add_option("export", export_path, "Renamed binary export")->required()->check(CLI::ExistingFile);
  add_analysis_flags(run);

  ttpmap::EvalInputs eval_in;
  std::vector<std::string> reports, truths;
  std::string annotations, binary_path, eval_out;
  auto* eval = app.add_subcommand("eval", "Score analysis reports against annotations");
  eval->add_option("--report", reports, "Analysis report (report.json); repeatable")->required()->check(
      CLI::ExistingFile);
  eval->add_option("--ground-truth", truths, "Binary-level truth {reported, validated}; one per report")
      ->check(CLI::ExistingFile);
  eval->add_option("--annotations", annotations, "Function-level labels")->check(CLI::ExistingFile);
  eval->add_option("--binary", binary_path, "Export listing the evaluated functions")->check(CLI::ExistingFile);
  eval->add_option("--ttp", eval_in.ttps, "Techniques forming the instances")->take_all();
  eval->add_option("-o,--output", eval_out, "Write <output>.txt and <output>.json");

  auto* stats = app.add_subcommand("stats", "Stage counts and reduction of a candidate dump");
  stats->add_option("candidates", candidates_path, "Candidate dump")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  const char* stage_name = app.get_subcommands().front()->get_name().c_str();
  try {
    ttpmap::Summary summary;
    auto opts = [&] {
      auto o = options_from(common);
      o.resume = resume;
      o.allow_version_skew = allow_skew;
      if (!ablation.empty()) o.ablation = ablation;
      if (!dot_path.empty()) o.dot = dot_path;
      return o;
    };
    if (*ingest) {
      summary = ttpmap::cmd_ingest(load_config(common), export_path, opts());
    } else if (*rename) {
      summary = ttpmap::cmd_rename(load_config(common), export_path, opts());
    } else if (*guidelines) {
      summary = ttpmap::cmd_guidelines(load_config(common), opts());
    } else if (*retrieve) {
      summary = ttpmap::cmd_retrieve(load_config(common), export_path, opts());
    } else if (*analyze) {
      summary = ttpmap::cmd_analyze(load_config(common), export_path, candidates_path, opts());
    } else if (*run) {
      summary = ttpmap::cmd_run(load_config(common), export_path, opts());
    } else if (*eval) {
      eval_in.reports.assign(reports.begin(), reports.end());
      eval_in.ground_truths.assign(truths.begin(), truths.end());
      if (!annotations.empty()) eval_in.annotations = annotations;
      if (!binary_path.empty()) eval_in.binary = binary_path;
      if (!eval_out.empty()) eval_in.output = eval_out;
      summary = ttpmap::cmd_eval(eval_in);
    } else if (*stats) {
      summary = ttpmap::cmd_stats(candidates_path);
    }
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const ttpmap::StageError& e) {
    std::cerr << "ttpmap " << stage_name << ": error in stage '" << e.stage() << "': " << e.detail() << "\n";
    return e.stage() == "config" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "ttpmap " << stage_name << ": " << e.what() << "\n";
    return 1;
  }
}
