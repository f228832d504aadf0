#include "fedsim/jsonio.hpp"

#include <sstream>

namespace fedsim::jsonio {

void type_error(const std::string& path, const char* expected, const nlohmann::json& j) {
    throw ConfigError(path + ": expected " + expected + ", found " + j.type_name());
}

Obj::Obj(std::string path, const nlohmann::json& j) : path_(std::move(path)), j_(&j) {
    if (!j.is_object()) type_error(path_, "object", j);
}

bool Obj::has(const char* key) const { return j_->contains(key); }

const nlohmann::json* Obj::opt(const char* key) {
    known_.insert(key);
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
}

const nlohmann::json& Obj::require(const char* key) {
    const nlohmann::json* v = opt(key);
    if (!v) throw ConfigError(sub(key) + ": required key is missing");
    return *v;
}

uint64_t Obj::u64(const char* key, uint64_t dflt) {
    const nlohmann::json* v = opt(key);
    if (!v) return dflt;
    if (!v->is_number_unsigned()) type_error(sub(key), "unsigned integer", *v);
    return v->get<uint64_t>();
}

uint64_t Obj::u64_req(const char* key) {
    const nlohmann::json& v = require(key);
    if (!v.is_number_unsigned()) type_error(sub(key), "unsigned integer", v);
    return v.get<uint64_t>();
}

uint32_t Obj::u32_pos(const char* key, uint32_t dflt) {
    const nlohmann::json* v = opt(key);
    if (!v) return dflt;
    if (!v->is_number_unsigned()) type_error(sub(key), "positive integer", *v);
    uint64_t raw = v->get<uint64_t>();
    if (raw < 1 || raw > UINT32_MAX)
        throw ConfigError(sub(key) + ": expected positive integer <= " +
                          std::to_string(UINT32_MAX) + ", found " + std::to_string(raw));
    return static_cast<uint32_t>(raw);
}

double Obj::num(const char* key, double dflt) {
    const nlohmann::json* v = opt(key);
    if (!v) return dflt;
    if (!v->is_number()) type_error(sub(key), "number", *v);
    return v->get<double>();
}

double Obj::num_req(const char* key) {
    const nlohmann::json& v = require(key);
    if (!v.is_number()) type_error(sub(key), "number", v);
    return v.get<double>();
}

bool Obj::boolean(const char* key, bool dflt) {
    const nlohmann::json* v = opt(key);
    if (!v) return dflt;
    if (!v->is_boolean()) type_error(sub(key), "boolean", *v);
    return v->get<bool>();
}

std::string Obj::str(const char* key, const std::string& dflt) {
    const nlohmann::json* v = opt(key);
    if (!v) return dflt;
    if (!v->is_string()) type_error(sub(key), "string", *v);
    return v->get<std::string>();
}

std::string Obj::str_req(const char* key) {
    const nlohmann::json& v = require(key);
    if (!v.is_string()) type_error(sub(key), "string", v);
    return v.get<std::string>();
}

void Obj::done() const {
    std::vector<std::string> extras;
    for (auto it = j_->begin(); it != j_->end(); ++it)
        if (!known_.count(it.key())) extras.push_back(it.key());
    if (extras.empty()) return;
    std::ostringstream msg;
    msg << path_ << ": unknown key";
    if (extras.size() > 1) msg << "s";
    msg << " ";
    for (size_t i = 0; i < extras.size(); ++i) msg << (i ? ", " : "") << "`" << extras[i] << "`";
    msg << "; valid keys: ";
    size_t i = 0;
    for (const auto& k : known_) msg << (i++ ? ", " : "") << k;
    throw ConfigError(msg.str());
}

}  // namespace fedsim::jsonio
