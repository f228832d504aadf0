#include "fedsim/config.hpp"

#include <algorithm>

#include "fedsim/errors.hpp"
#include "fedsim/jsonio.hpp"

namespace fedsim::cfg {

using nlohmann::json;

namespace {

ModuleRefCfg parse_module_ref(const std::string& path, const json* v, const char* dflt) {
    ModuleRefCfg ref;
    ref.type = dflt;
    if (!v) return ref;
    if (v->is_string()) {
        ref.type = v->get<std::string>();
        if (ref.type.empty()) throw ConfigError(path + ": module name must be non-empty");
        return ref;
    }
    if (!v->is_object()) jsonio::type_error(path, "module reference (string or object)", *v);
    if (!v->contains("type")) throw ConfigError(path + ".type: required key is missing");
    const json& t = (*v)["type"];
    if (!t.is_string()) jsonio::type_error(path + ".type", "string", t);
    ref.type = t.get<std::string>();
    if (ref.type.empty()) throw ConfigError(path + ".type: module name must be non-empty");
    for (auto it = v->begin(); it != v->end(); ++it)
        if (it.key() != "type") ref.params[it.key()] = it.value();
    return ref;
}

json module_ref_json(const ModuleRefCfg& ref) {
    if (ref.params.empty()) return ref.type;
    json out = ref.params;
    out["type"] = ref.type;
    return out;
}

data::PartitionSpec parse_partition(const std::string& path, const json* v, uint64_t global_seed) {
    data::PartitionSpec spec;
    spec.variant = data::IidPartition{};
    spec.seed = global_seed;
    if (!v) return spec;

    std::string variant;
    if (v->is_string()) {
        variant = v->get<std::string>();
        if (variant == "iid") return spec;
        if (variant != "dirichlet" && variant != "explicit")
            throw ConfigError(path + ": unknown variant \"" + variant +
                              "\"; valid: dirichlet, explicit, iid");
        throw ConfigError(path + ": variant \"" + variant +
                          "\" needs parameters; write it as an object");
    }

    jsonio::Obj p(path, *v);
    variant = p.str("variant", "iid");
    spec.seed = p.u64("seed", global_seed);
    if (variant == "iid") {
        p.done();
    } else if (variant == "dirichlet") {
        double beta = p.num("beta", 0.5);
        if (beta <= 0.0) throw ConfigError(path + ".beta: must be positive");
        p.done();
        spec.variant = data::DirichletPartition{beta};
    } else if (variant == "explicit") {
        const json* a = p.opt("assignments");
        p.done();
        if (!a) throw ConfigError(path + ".assignments: required key is missing");
        if (!a->is_array()) jsonio::type_error(path + ".assignments", "array", *a);
        data::ExplicitPartition ex;
        for (size_t i = 0; i < a->size(); ++i) {
            const json& client = (*a)[i];
            std::string cpath = path + ".assignments[" + std::to_string(i) + "]";
            if (!client.is_array()) jsonio::type_error(cpath, "array of [class, count] pairs", client);
            std::vector<std::pair<uint16_t, uint32_t>> pairs;
            for (size_t k = 0; k < client.size(); ++k) {
                const json& pr = client[k];
                std::string ppath = cpath + "[" + std::to_string(k) + "]";
                if (!pr.is_array() || pr.size() != 2 || !pr[0].is_number_unsigned() ||
                    !pr[1].is_number_unsigned())
                    jsonio::type_error(ppath, "[class, count] pair of unsigned integers", pr);
                uint64_t cls = pr[0].get<uint64_t>(), cnt = pr[1].get<uint64_t>();
                if (cls > UINT16_MAX) throw ConfigError(ppath + ": class exceeds 65535");
                if (cnt > UINT32_MAX) throw ConfigError(ppath + ": count exceeds u32 range");
                pairs.emplace_back(static_cast<uint16_t>(cls), static_cast<uint32_t>(cnt));
            }
            ex.assignments.push_back(std::move(pairs));
        }
        spec.variant = std::move(ex);
    } else {
        throw ConfigError(path + ".variant: unknown variant \"" + variant +
                          "\"; valid: dirichlet, explicit, iid");
    }
    return spec;
}

json partition_json(const data::PartitionSpec& spec) {
    json out = json::object();
    out["seed"] = spec.seed;
    if (std::holds_alternative<data::IidPartition>(spec.variant)) {
        out["variant"] = "iid";
    } else if (const auto* d = std::get_if<data::DirichletPartition>(&spec.variant)) {
        out["variant"] = "dirichlet";
        out["beta"] = d->beta;
    } else {
        const auto& ex = std::get<data::ExplicitPartition>(spec.variant);
        out["variant"] = "explicit";
        json a = json::array();
        for (const auto& client : ex.assignments) {
            json row = json::array();
            for (const auto& [cls, cnt] : client) row.push_back(json::array({cls, cnt}));
            a.push_back(std::move(row));
        }
        out["assignments"] = std::move(a);
    }
    return out;
}

std::vector<ProfileGroupCfg> parse_profiles(const std::string& path, const json* v) {
    std::vector<ProfileGroupCfg> out;
    if (!v) return out;
    if (!v->is_array()) jsonio::type_error(path, "array", *v);
    for (size_t i = 0; i < v->size(); ++i) {
        jsonio::Obj p(path + "[" + std::to_string(i) + "]", (*v)[i]);
        ProfileGroupCfg g;
        g.count = p.u32_pos("count", 1);
        g.speed_factor = p.num("speed_factor", 1.0);
        g.base_train_cost = p.u32_pos("base_train_cost", 1);
        if (p.has("stop_after_updates")) g.stop_after_updates = p.u32_pos("stop_after_updates", 1);
        else p.opt("stop_after_updates");
        p.done();
        if (g.speed_factor <= 0.0 || g.speed_factor > 1.0)
            throw ConfigError(p.path() + ".speed_factor: must be in (0, 1]");
        out.push_back(g);
    }
    return out;
}

json profiles_json(const std::vector<ProfileGroupCfg>& profiles) {
    json out = json::array();
    for (const auto& g : profiles) {
        json row = {{"count", g.count},
                    {"speed_factor", g.speed_factor},
                    {"base_train_cost", g.base_train_cost}};
        if (g.stop_after_updates) row["stop_after_updates"] = *g.stop_after_updates;
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return parse_config(doc);
}

ExperimentConfig parse_config(const json& doc) {
    jsonio::Obj top("config", doc);
    ExperimentConfig cfg;

    // global comes first: later defaults (partition seed) follow its seed.
    if (const json* g = top.opt("global")) {
        jsonio::Obj o("global", *g);
        cfg.seed = o.u64("seed", 0);
        cfg.rounds = o.u32_pos("rounds", 20);
        cfg.output_dir = o.str("output_dir", "runs");
        cfg.slice_wall_us = o.u64("slice_wall_us", 0);
        cfg.max_activations = o.u64("max_activations", 10'000'000);
        o.done();
        if (cfg.max_activations == 0) throw ConfigError("global.max_activations: must be positive");
        if (cfg.output_dir.empty()) throw ConfigError("global.output_dir: must be non-empty");
    }

    if (const json* s = top.opt("server")) {
        jsonio::Obj o("server", *s);
        cfg.scheduler = parse_module_ref("server.scheduler", o.opt("scheduler"), "random");
        cfg.aggregator = parse_module_ref("server.aggregator", o.opt("aggregator"), "fedavg");
        if (o.has("target_accuracy")) {
            double t = o.num("target_accuracy", 0.0);
            if (t < 0.0 || t > 1.0)
                throw ConfigError("server.target_accuracy: must be a fraction in [0, 1]");
            cfg.target_accuracy = t;
        } else {
            o.opt("target_accuracy");
        }
        cfg.await_grace_us = o.u64("await_grace_us", 10'000'000);
        o.done();
    }

    if (const json* c = top.opt("client")) {
        jsonio::Obj o("client", *c);
        cfg.trainer = parse_module_ref("client.trainer", o.opt("trainer"), "sgd");
        cfg.model = parse_module_ref("client.model", o.opt("model"), "softmax");
        cfg.profiles = parse_profiles("client.profiles", o.opt("profiles"));
        o.done();
    }

    if (const json* m = top.opt("client_manager")) {
        jsonio::Obj o("client_manager", *m);
        cfg.mode = parse_module_ref("client_manager.mode", o.opt("mode"), "sequential");
        cfg.client_count = o.u32_pos("client_count", 1);
        o.done();
    }

    cfg.queue = parse_module_ref("queue", top.opt("queue"), "memory");

    if (const json* b = top.opt("benchmark")) {
        jsonio::Obj o("benchmark", *b);
        cfg.dataset = parse_module_ref("benchmark.dataset", o.opt("dataset"), "synthetic");
        cfg.partition = parse_partition("benchmark.partition", o.opt("partition"), cfg.seed);
        cfg.preload = o.boolean("preload", false);
        cfg.io_latency_us = o.u64("io_latency_us", 0);
        o.done();
    } else {
        cfg.partition.seed = cfg.seed;
    }

    if (const json* l = top.opt("logging")) {
        jsonio::Obj o("logging", *l);
        cfg.log_level = o.str("level", "info");
        cfg.emit_distribution = o.boolean("emit_distribution", false);
        cfg.normalize = o.boolean("normalize", false);
        o.done();
        static const char* levels[] = {"debug", "info", "warning", "error"};
        if (std::find_if(std::begin(levels), std::end(levels),
                         [&](const char* s) { return cfg.log_level == s; }) == std::end(levels))
            throw ConfigError("logging.level: unknown level \"" + cfg.log_level +
                              "\"; valid: debug, error, info, warning");
    }

    try {
        top.done();
    } catch (const ConfigError& e) {
        // Surface "unknown section" language for top-level typos.
        std::string msg = e.what();
        auto pos = msg.find("unknown key");
        if (pos != std::string::npos) msg.replace(pos, 11, "unknown section");
        pos = msg.find("valid keys");
        if (pos != std::string::npos) msg.replace(pos, 10, "valid sections");
        throw ConfigError(msg);
    }

    if (!cfg.profiles.empty()) {
        uint64_t total = 0;
        for (const auto& g : cfg.profiles) total += g.count;
        if (total != cfg.client_count)
            throw ConfigError("client.profiles: group counts sum to " + std::to_string(total) +
                              " but client_manager.client_count is " +
                              std::to_string(cfg.client_count));
    }
    return cfg;
}

json serialize_config(const ExperimentConfig& cfg) {
    json doc;
    doc["global"] = {{"seed", cfg.seed},
                     {"rounds", cfg.rounds},
                     {"output_dir", cfg.output_dir},
                     {"slice_wall_us", cfg.slice_wall_us},
                     {"max_activations", cfg.max_activations}};
    json server = {{"scheduler", module_ref_json(cfg.scheduler)},
                   {"aggregator", module_ref_json(cfg.aggregator)},
                   {"await_grace_us", cfg.await_grace_us}};
    if (cfg.target_accuracy) server["target_accuracy"] = *cfg.target_accuracy;
    doc["server"] = std::move(server);
    doc["client"] = {{"trainer", module_ref_json(cfg.trainer)},
                     {"model", module_ref_json(cfg.model)},
                     {"profiles", profiles_json(cfg.profiles)}};
    doc["client_manager"] = {{"mode", module_ref_json(cfg.mode)},
                             {"client_count", cfg.client_count}};
    doc["queue"] = module_ref_json(cfg.queue);
    doc["benchmark"] = {{"dataset", module_ref_json(cfg.dataset)},
                        {"partition", partition_json(cfg.partition)},
                        {"preload", cfg.preload},
                        {"io_latency_us", cfg.io_latency_us}};
    doc["logging"] = {{"level", cfg.log_level},
                      {"emit_distribution", cfg.emit_distribution},
                      {"normalize", cfg.normalize}};
    return doc;
}

std::string config_to_text(const ExperimentConfig& cfg) {
    return serialize_config(cfg).dump(2) + "\n";
}

void override_mode(json& doc, const std::string& mode) {
    if (!doc.is_object()) jsonio::type_error("config", "object", doc);
    json& section = doc["client_manager"];
    if (!section.is_object() && !section.is_null())
        jsonio::type_error("client_manager", "object", section);
    section["mode"] = mode;
}

void override_seed(json& doc, uint64_t seed) {
    if (!doc.is_object()) jsonio::type_error("config", "object", doc);
    json& section = doc["global"];
    if (!section.is_object() && !section.is_null()) jsonio::type_error("global", "object", section);
    section["seed"] = seed;
}

}  // namespace fedsim::cfg
