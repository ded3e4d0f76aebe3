// jjtls: command-line front end for the simulate, detect, infer, correlate and
// report stages. Exit codes: 0 success, 1 validation error, 2 numerical failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "jjtls/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using jjtls::pipeline::PipelineConfig;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

using StageFn = void (*)(const PipelineConfig&, const fs::path&);

void add_stage(CLI::App& app, const char* name, const char* help, Common& common, StageFn fn,
               StageFn& chosen) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("-c,--config", common.config, "pipeline config file")->required();
  sub->add_option("-o,--out", common.out, "output directory")->required();
  sub->add_option("-s,--seed", common.seed, "root seed; overrides the config `seed`");
  sub->add_option("-j,--threads", common.threads, "worker threads")->check(CLI::Range(1u, 256u));
  sub->callback([fn, &chosen] { chosen = fn; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detection and statistics of junction defects from flux-tuned resonator sweeps"};
  app.set_version_flag("--version", jjtls::pipeline::kVersion);
  bool schema = false;
  app.add_flag("--schema", schema, "print every input and output file format, then exit");
  app.require_subcommand(0, 1);

  Common common;
  StageFn chosen = nullptr;
  namespace pl = jjtls::pipeline;
  add_stage(app, "simulate", "curve-follow a synthetic scenario and write trace CSVs", common,
            pl::run_simulate, chosen);
  add_stage(app, "detect", "fit traces, calibrate the threshold and find defect events", common,
            pl::run_detect, chosen);
  add_stage(app, "infer", "posterior for the defect count and the density estimate", common,
            pl::run_infer, chosen);
  add_stage(app, "correlate", "treatment statistics and morphology regression", common,
            pl::run_correlate, chosen);
  add_stage(app, "report", "summarise completed stages and write the run manifest", common,
            pl::run_report, chosen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (schema) {
    std::cout << pl::schema_text();
    return 0;
  }
  if (!chosen) {
    std::cerr << app.help();
    return 1;
  }

  try {
    jjtls::worker_threads() = common.threads;
    auto cfg = PipelineConfig::load(common.config);
    if (common.seed) cfg.seed = common.seed;
    chosen(cfg, common.out);
    return 0;
  } catch (const jjtls::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const jjtls::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
