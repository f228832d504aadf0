#include "fedsim/summary.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fedsim/errors.hpp"
#include "fedsim/events.hpp"
#include "fedsim/params.hpp"

namespace fedsim::obs {

using nlohmann::json;

namespace {

std::vector<EventRecord> read_events(const std::filesystem::path& run_dir) {
    auto path = run_dir / "events.jsonl";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeAbort("cannot open " + path.string());
    std::vector<EventRecord> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw RuntimeAbort("events.jsonl:" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

json read_config_echo(const std::filesystem::path& run_dir) {
    auto path = run_dir / "config.echo";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeAbort("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return json::parse(buf.str());
    } catch (const std::exception& e) {
        throw RuntimeAbort("config.echo: " + std::string(e.what()));
    }
}

std::string module_type(const json& ref) {
    if (ref.is_string()) return ref.get<std::string>();
    if (ref.is_object() && ref.contains("type") && ref["type"].is_string())
        return ref["type"].get<std::string>();
    return "?";
}

std::map<uint64_t, double> accuracy_by_round(const std::vector<EventRecord>& events) {
    std::map<uint64_t, double> out;
    for (const auto& e : events)
        if (e.event == Event::evaluate && e.round) out[*e.round] = e.metrics.at("accuracy");
    return out;
}

}  // namespace

RunSummary summarize(const std::filesystem::path& run_dir) {
    RunSummary s;
    s.config_echo = read_config_echo(run_dir);
    auto events = read_events(run_dir);

    const EventRecord* last_eval = nullptr;
    double personal_sum = 0.0;
    uint64_t personal_n = 0;
    for (const auto& e : events) {
        ++s.event_counts[event_name(e.event)];
        s.total_wall_us = std::max(s.total_wall_us, e.wall_time_us);
        if (e.virtual_time)
            s.total_virtual_time = std::max(s.total_virtual_time.value_or(0), *e.virtual_time);
        switch (e.event) {
            case Event::aggregate:
                ++s.rounds_completed;
                break;
            case Event::evaluate:
                last_eval = &e;
                break;
            case Event::client_stop:
                if (auto it = e.metrics.find("personal_accuracy"); it != e.metrics.end()) {
                    personal_sum += it->second;
                    ++personal_n;
                }
                break;
            case Event::node_down:
                if (auto it = e.metrics.find("peak_rss_kb"); it != e.metrics.end())
                    s.peak_rss_kb = static_cast<uint64_t>(it->second);
                break;
            default:
                break;
        }
    }
    if (last_eval) {
        s.final_accuracy = last_eval->metrics.at("accuracy");
        s.final_mean_loss = last_eval->metrics.at("mean_loss");
        for (const auto& [key, value] : last_eval->metrics) {
            if (key.rfind("acc_class_", 0) != 0) continue;
            size_t idx = std::stoul(key.substr(10));
            if (s.per_class_accuracy.size() <= idx) s.per_class_accuracy.resize(idx + 1);
            s.per_class_accuracy[idx] = value;
        }
    }
    if (personal_n) s.avg_client_accuracy = personal_sum / static_cast<double>(personal_n);
    return s;
}

json summary_to_json(const RunSummary& s) {
    json j;
    j["config"] = s.config_echo;
    j["rounds_completed"] = s.rounds_completed;
    j["final_accuracy"] = s.final_accuracy ? json(*s.final_accuracy) : json(nullptr);
    j["final_mean_loss"] = s.final_mean_loss ? json(*s.final_mean_loss) : json(nullptr);
    json per_class = json::array();
    for (const auto& v : s.per_class_accuracy) per_class.push_back(v ? json(*v) : json(nullptr));
    j["per_class_accuracy"] = std::move(per_class);
    j["avg_client_accuracy"] =
        s.avg_client_accuracy ? json(*s.avg_client_accuracy) : json(nullptr);
    j["peak_rss_kb"] = s.peak_rss_kb ? json(*s.peak_rss_kb) : json(nullptr);
    j["total_wall_us"] = s.total_wall_us;
    j["total_virtual_time"] = s.total_virtual_time ? json(*s.total_virtual_time) : json(nullptr);
    j["event_counts"] = s.event_counts;
    return j;
}

std::string summary_to_text(const RunSummary& s) {
    std::ostringstream out;
    auto opt_pct = [](const std::optional<double>& v) {
        if (!v) return std::string("n/a");
        char buf[32];
        snprintf(buf, sizeof buf, "%.4f", *v);
        return std::string(buf);
    };
    out << "fedsim run summary\n";
    out << "------------------\n";
    out << "aggregator:       " << module_type(s.config_echo.value("server", json::object())
                                                   .value("aggregator", json("?")))
        << "\n";
    out << "mode:             " << module_type(s.config_echo.value("client_manager", json::object())
                                                   .value("mode", json("?")))
        << "\n";
    out << "clients:          "
        << s.config_echo.value("client_manager", json::object()).value("client_count", 0) << "\n";
    out << "rounds completed: " << s.rounds_completed << "\n";
    out << "final accuracy:   " << opt_pct(s.final_accuracy) << "\n";
    out << "final mean loss:  " << opt_pct(s.final_mean_loss) << "\n";
    out << "per-class acc:    ";
    if (s.per_class_accuracy.empty()) {
        out << "n/a";
    } else {
        for (size_t i = 0; i < s.per_class_accuracy.size(); ++i)
            out << (i ? " " : "") << opt_pct(s.per_class_accuracy[i]);
    }
    out << "\n";
    out << "avg client acc:   " << opt_pct(s.avg_client_accuracy) << "\n";
    out << "total wall time:  " << s.total_wall_us << " us\n";
    out << "total virtual:    ";
    if (s.total_virtual_time) out << *s.total_virtual_time << " slices";
    else out << "n/a";
    out << "\n";
    out << "peak rss:         ";
    if (s.peak_rss_kb) out << *s.peak_rss_kb << " kB";
    else out << "n/a";
    out << "\n";
    out << "events:           ";
    size_t i = 0;
    for (const auto& [name, count] : s.event_counts)
        out << (i++ ? ", " : "") << name << "=" << count;
    out << "\n";
    return out.str();
}

void write_summary_files(const std::filesystem::path& run_dir, const RunSummary& s) {
    {
        std::ofstream out(run_dir / "summary.json", std::ios::binary | std::ios::trunc);
        out << summary_to_json(s).dump(2) << "\n";
        if (!out) throw RuntimeAbort("cannot write summary.json");
    }
    {
        std::ofstream out(run_dir / "summary.txt", std::ios::binary | std::ios::trunc);
        out << summary_to_text(s);
        if (!out) throw RuntimeAbort("cannot write summary.txt");
    }
}

std::string compare_runs(const std::filesystem::path& run_a, const std::filesystem::path& run_b) {
    auto acc_a = accuracy_by_round(read_events(run_a));
    auto acc_b = accuracy_by_round(read_events(run_b));

    std::ostringstream out;
    out << "round  acc_a     acc_b     delta\n";
    for (const auto& [round, a] : acc_a) {
        auto it = acc_b.find(round);
        if (it == acc_b.end()) continue;
        char buf[96];
        snprintf(buf, sizeof buf, "%-6" PRIu64 " %-9.4f %-9.4f %+.6f\n", round, a, it->second,
                 it->second - a);
        out << buf;
    }
    size_t only_a = 0, only_b = 0;
    for (const auto& [round, _] : acc_a)
        if (!acc_b.count(round)) ++only_a;
    for (const auto& [round, _] : acc_b)
        if (!acc_a.count(round)) ++only_b;
    if (only_a || only_b)
        out << "(" << only_a << " rounds only in a, " << only_b << " only in b)\n";

    auto ck_a = run_a / "checkpoint_final.params";
    auto ck_b = run_b / "checkpoint_final.params";
    if (std::filesystem::exists(ck_a) && std::filesystem::exists(ck_b)) {
        auto load = [](const std::filesystem::path& p) {
            std::ifstream in(p, std::ios::binary);
            std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
            return learn::deserialize(bytes);
        };
        auto pa = load(ck_a), pb = load(ck_b);
        if (!pa.same_shape(pb) || pa.size() != pb.size()) {
            out << "max param divergence: shapes differ\n";
        } else {
            double max_div = 0.0;
            for (size_t i = 0; i < pa.size(); ++i)
                max_div = std::max(max_div, std::fabs(pa.values[i] - pb.values[i]));
            char buf[64];
            snprintf(buf, sizeof buf, "max param divergence: %.17g\n", max_div);
            out << buf;
        }
    } else {
        out << "max param divergence: n/a (checkpoints missing)\n";
    }
    return out.str();
}

}  // namespace fedsim::obs
