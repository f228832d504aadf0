#include "fedsim/events.hpp"

#include "fedsim/errors.hpp"

namespace fedsim::obs {

using nlohmann::json;

namespace {

constexpr const char* kNames[] = {"activation", "publish",      "deliver",     "aggregate",
                                  "evaluate",   "client_start", "client_stop", "node_up",
                                  "node_down",  "warning"};

}  // namespace

const char* event_name(Event e) { return kNames[static_cast<size_t>(e)]; }

Event event_from_name(const std::string& name) {
    for (size_t i = 0; i < std::size(kNames); ++i)
        if (name == kNames[i]) return static_cast<Event>(i);
    throw ConfigError("unknown event kind \"" + name + "\"");
}

void validate_record(const EventRecord& rec) {
    auto need_metric = [&](const char* key) {
        if (!rec.metrics.count(key))
            throw RuntimeAbort(std::string(event_name(rec.event)) + " event missing metric \"" +
                               key + "\"");
    };
    switch (rec.event) {
        case Event::aggregate:
            if (!rec.round) throw RuntimeAbort("aggregate event missing version");
            need_metric("participants");
            break;
        case Event::evaluate:
            if (!rec.round) throw RuntimeAbort("evaluate event missing version");
            need_metric("accuracy");
            need_metric("mean_loss");
            break;
        case Event::publish:
        case Event::deliver:
            if (!rec.topic)
                throw RuntimeAbort(std::string(event_name(rec.event)) + " event missing topic");
            break;
        default:
            break;
    }
}

json record_to_json(const EventRecord& rec) {
    json j;
    j["schema_version"] = rec.schema_version;
    j["wall_time_us"] = rec.wall_time_us;
    j["virtual_time"] = rec.virtual_time ? json(*rec.virtual_time) : json(nullptr);
    j["event"] = event_name(rec.event);
    if (rec.round) j["round"] = *rec.round;
    if (rec.client_id) j["client_id"] = *rec.client_id;
    if (rec.topic) j["topic"] = *rec.topic;
    if (rec.detail) j["detail"] = *rec.detail;
    if (!rec.metrics.empty()) j["metrics"] = rec.metrics;
    return j;
}

EventRecord record_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("event record: expected object, found " +
                                          std::string(j.type_name()));
    EventRecord rec;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const json& v = it.value();
        auto want = [&](bool ok, const char* type) {
            if (!ok)
                throw ConfigError("event record key \"" + key + "\": expected " + type +
                                  ", found " + v.type_name());
        };
        if (key == "schema_version") {
            want(v.is_number_unsigned(), "unsigned integer");
            rec.schema_version = v.get<uint32_t>();
        } else if (key == "wall_time_us") {
            want(v.is_number_unsigned(), "unsigned integer");
            rec.wall_time_us = v.get<uint64_t>();
        } else if (key == "virtual_time") {
            want(v.is_number_unsigned() || v.is_null(), "unsigned integer or null");
            if (!v.is_null()) rec.virtual_time = v.get<uint64_t>();
        } else if (key == "event") {
            want(v.is_string(), "string");
            rec.event = event_from_name(v.get<std::string>());
        } else if (key == "round") {
            want(v.is_number_unsigned(), "unsigned integer");
            rec.round = v.get<uint64_t>();
        } else if (key == "client_id") {
            want(v.is_number_unsigned(), "unsigned integer");
            rec.client_id = v.get<uint32_t>();
        } else if (key == "topic") {
            want(v.is_string(), "string");
            rec.topic = v.get<std::string>();
        } else if (key == "detail") {
            want(v.is_string(), "string");
            rec.detail = v.get<std::string>();
        } else if (key == "metrics") {
            want(v.is_object(), "object");
            for (auto mit = v.begin(); mit != v.end(); ++mit) {
                if (!mit.value().is_number())
                    throw ConfigError("event record metric \"" + mit.key() +
                                      "\": expected number, found " + mit.value().type_name());
                rec.metrics[mit.key()] = mit.value().get<double>();
            }
        } else {
            throw ConfigError("event record: unknown key \"" + key + "\"");
        }
    }
    if (!j.contains("event")) throw ConfigError("event record: missing \"event\"");
    if (rec.schema_version != 1)
        throw ConfigError("event record: unsupported schema_version " +
                          std::to_string(rec.schema_version));
    validate_record(rec);
    return rec;
}

EventLog::EventLog(const std::filesystem::path& path, bool normalize) : normalize_(normalize) {
    owned_.open(path, std::ios::binary | std::ios::trunc);
    if (!owned_) throw RuntimeAbort("cannot open event log " + path.string());
    out_ = &owned_;
}

EventLog::EventLog(std::ostream& out, bool normalize) : out_(&out), normalize_(normalize) {}

void EventLog::emit(EventRecord rec) {
    if (normalize_) {
        rec.wall_time_us = 0;
    } else if (rec.wall_time_us == 0) {
        rec.wall_time_us = static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                                     std::chrono::steady_clock::now() - start_)
                                                     .count());
    }
    validate_record(rec);
    write_line(rec);
}

void EventLog::write_line(const EventRecord& rec) {
    std::string line = record_to_json(rec).dump();
    std::lock_guard lock(mu_);
    (*out_) << line << '\n';
    out_->flush();
    if (!*out_) throw RuntimeAbort("event log write failed; aborting the experiment");
    ++counts_[rec.event];
}

uint64_t EventLog::count(Event e) const {
    std::lock_guard lock(mu_);
    auto it = counts_.find(e);
    return it == counts_.end() ? 0 : it->second;
}

}  // namespace fedsim::obs
