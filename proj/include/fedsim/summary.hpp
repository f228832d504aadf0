#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fedsim::obs {

/// Everything in here is recomputed from the run directory's artifacts
/// (events.jsonl + config.echo); nothing is carried over from the live run.
struct RunSummary {
    nlohmann::json config_echo;
    uint64_t rounds_completed = 0;  // aggregate event count
    std::optional<double> final_accuracy;
    std::optional<double> final_mean_loss;
    /// Index c from the last evaluate's "acc_class_c" metric; absent classes
    /// stay unset.
    std::vector<std::optional<double>> per_class_accuracy;
    /// Mean of the "personal_accuracy" metric over client_stop events
    /// (personalized runs only).
    std::optional<double> avg_client_accuracy;
    std::optional<uint64_t> peak_rss_kb;  // from the closing node_down event
    uint64_t total_wall_us = 0;
    std::optional<uint64_t> total_virtual_time;
    std::map<std::string, uint64_t> event_counts;
};

/// Pure function of the files in run_dir. A malformed event file fails with
/// the first bad line named ("events.jsonl:<n>: ...").
RunSummary summarize(const std::filesystem::path& run_dir);

nlohmann::json summary_to_json(const RunSummary& s);
std::string summary_to_text(const RunSummary& s);

/// Writes summary.json and summary.txt into run_dir.
void write_summary_files(const std::filesystem::path& run_dir, const RunSummary& s);

/// Per-round accuracy deltas plus, when both runs kept final checkpoints,
/// the max-abs parameter divergence.
std::string compare_runs(const std::filesystem::path& run_a, const std::filesystem::path& run_b);

}  // namespace fedsim::obs
