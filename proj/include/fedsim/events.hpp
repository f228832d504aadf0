#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

namespace fedsim::obs {

enum class Event {
    activation,
    publish,
    deliver,
    aggregate,
    evaluate,
    client_start,
    client_stop,
    node_up,
    node_down,
    warning,
};

const char* event_name(Event e);
Event event_from_name(const std::string& name);  // ConfigError on unknown

/// One line of events.jsonl. Field rules: aggregate carries round and a
/// "participants" metric; evaluate carries round plus "accuracy" and
/// "mean_loss" metrics; publish/deliver carry topic.
struct EventRecord {
    uint32_t schema_version = 1;
    uint64_t wall_time_us = 0;
    std::optional<uint64_t> virtual_time;  // slices; null outside sequential
    Event event = Event::warning;
    std::optional<uint64_t> round;  // aggregation version where relevant
    std::optional<uint32_t> client_id;
    std::optional<std::string> topic;
    std::optional<std::string> detail;
    std::map<std::string, double> metrics;
};

/// RuntimeAbort when a record breaks the per-event field rules.
void validate_record(const EventRecord& rec);

nlohmann::json record_to_json(const EventRecord& rec);
/// Strict: unknown keys, wrong types, or a foreign schema_version are errors.
EventRecord record_from_json(const nlohmann::json& j);

/// Serialized JSONL sink shared by every emitter in a run. Lines are written
/// atomically under one lock and flushed immediately; any write failure
/// aborts the experiment. With normalize, wall_time_us is forced to zero so
/// equal-seed runs produce byte-identical files.
class EventLog {
public:
    EventLog(const std::filesystem::path& path, bool normalize);
    EventLog(std::ostream& out, bool normalize);  // non-owning, for tests

    /// Stamps wall time (unless the record carries one), validates, writes.
    void emit(EventRecord rec);
    uint64_t count(Event e) const;
    bool normalized() const { return normalize_; }

private:
    void write_line(const EventRecord& rec);

    std::ofstream owned_;
    std::ostream* out_ = nullptr;
    bool normalize_ = false;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
    mutable std::mutex mu_;
    std::map<Event, uint64_t> counts_;
};

}  // namespace fedsim::obs
