#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fedsim/assemble.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/nodes.hpp"
#include "fedsim/runner.hpp"
#include "fedsim/summary.hpp"
#include "fedsim/transport.hpp"

using namespace fedsim;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config \"" + path + "\"");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

cfg::ExperimentConfig load_config(const std::string& path,
                                  const std::optional<std::string>& mode,
                                  const std::optional<uint64_t>& seed) {
    cfg::ExperimentConfig c = cfg::parse_config(read_file(path));
    if (mode && *mode != c.mode.type) c.mode = cfg::ModuleRefCfg{*mode};
    if (seed) c.seed = *seed;
    return c;
}

int cmd_run(const std::string& config, const std::optional<std::string>& mode,
            const std::optional<uint64_t>& seed) {
    auto plan = cfg::assemble(load_config(config, mode, seed));
    auto res = run::run_experiment(plan);
    std::cout << "run complete: " << res.run_dir.string() << "\n"
              << "rounds completed: " << res.summary.rounds_completed << "\n";
    if (res.summary.final_accuracy)
        std::cout << "final accuracy: " << *res.summary.final_accuracy << "\n";
    if (res.server.target_reached) std::cout << "target accuracy reached\n";
    return 0;
}

int cmd_validate(const std::string& config) {
    cfg::assemble(cfg::parse_config(read_file(config)));
    std::cout << "ok\n";
    return 0;
}

int cmd_partition_report(const std::string& config) {
    auto plan = cfg::assemble(cfg::parse_config(read_file(config)));
    std::cout << run::distribution_csv(plan.distribution);
    return 0;
}

int cmd_report(const std::string& run_dir) {
    auto summary = obs::summarize(run_dir);
    obs::write_summary_files(run_dir, summary);
    std::cout << obs::summary_to_text(summary);
    return 0;
}

int cmd_compare(const std::string& run_a, const std::string& run_b) {
    std::cout << obs::compare_runs(run_a, run_b);
    return 0;
}

int cmd_node(const std::string& listen, uint32_t capacity, const std::string& workdir,
             bool once) {
    auto [host, port] = net::split_address(listen);
    return net::serve_node(host, port, net::NodeOptions{capacity, workdir}, once);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedsim: a modular federated-learning experiment framework"};
    app.require_subcommand(1);

    std::string config, run_dir, run_a, run_b, listen, workdir = ".";
    std::optional<std::string> mode;
    std::optional<uint64_t> seed;
    uint32_t capacity = 64;
    bool once = false;

    auto* run = app.add_subcommand("run", "run an experiment to completion");
    run->add_option("--config", config, "experiment config (JSON)")->required();
    run->add_option("--mode", mode, "override the execution mode by name");
    run->add_option("--seed", seed, "override the global seed");

    auto* validate = app.add_subcommand("validate", "parse and resolve a config, then stop");
    validate->add_option("--config", config, "experiment config (JSON)")->required();

    auto* part = app.add_subcommand("partition-report",
                                    "print the client x class distribution as CSV");
    part->add_option("--config", config, "experiment config (JSON)")->required();

    auto* report = app.add_subcommand("report", "recompute and print a run's summary");
    report->add_option("run_dir", run_dir, "run directory")->required();

    auto* compare = app.add_subcommand("compare", "diff two runs' accuracy and checkpoints");
    compare->add_option("run_a", run_a, "first run directory")->required();
    compare->add_option("run_b", run_b, "second run directory")->required();

    auto* node = app.add_subcommand("node", "serve as a distributed-mode worker node");
    node->add_option("--listen", listen, "host:port to accept the main process on")->required();
    node->add_option("--capacity", capacity, "most clients this node will host");
    node->add_option("--workdir", workdir, "where node artifacts are written");
    node->add_flag("--once", once, "exit after one session");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config, mode, seed);
        if (validate->parsed()) return cmd_validate(config);
        if (part->parsed()) return cmd_partition_report(config);
        if (report->parsed()) return cmd_report(run_dir);
        if (compare->parsed()) return cmd_compare(run_a, run_b);
        if (node->parsed()) return cmd_node(listen, capacity, workdir, once);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
