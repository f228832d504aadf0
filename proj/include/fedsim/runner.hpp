#pragma once

#include <filesystem>
#include <string>

#include "fedsim/assemble.hpp"
#include "fedsim/pipeline.hpp"
#include "fedsim/summary.hpp"

namespace fedsim::run {

struct RunResult {
    std::filesystem::path run_dir;
    ServerResult server;
    obs::RunSummary summary;
};

/// Resolves the run directory: FEDSIM_OUTPUT_DIR wins over cfg.output_dir.
std::filesystem::path resolve_run_dir(const cfg::ExperimentConfig& cfg);

/// "client,class_0,...,class_{C-1}" header plus one per-client count row.
std::string distribution_csv(const std::vector<std::vector<uint64_t>>& distribution);

/// Runs the plan in its configured execution mode and writes the artifacts
/// (config.echo, events.jsonl, checkpoint_final.params, summary.json,
/// summary.txt, and distribution.csv when enabled) into the run directory.
/// Aborting runs leave their partial events.jsonl behind for postmortems.
RunResult run_experiment(const cfg::ExperimentPlan& plan);

/// Mode drivers behind run_experiment's dispatch; exposed for tests.
ServerResult run_sequential(const cfg::ExperimentPlan& plan, obs::EventLog& log);
ServerResult run_concurrent(const cfg::ExperimentPlan& plan, obs::EventLog& log);
// Defined in nodes.cpp: fork+socketpair workers / TCP nodes.
ServerResult run_multiprocess(const cfg::ExperimentPlan& plan, obs::EventLog& log,
                              const std::filesystem::path& run_dir);
ServerResult run_distributed(const cfg::ExperimentPlan& plan, obs::EventLog& log,
                             const std::filesystem::path& run_dir);

}  // namespace fedsim::run
