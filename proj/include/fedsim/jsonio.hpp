#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "fedsim/errors.hpp"

namespace fedsim::jsonio {

/// Strict reader over one JSON object. Every getter records its key; done()
/// rejects anything not asked for, listing the valid keys. All errors are
/// ConfigError with the dotted path of the offending value.
class Obj {
public:
    Obj(std::string path, const nlohmann::json& j);

    bool has(const char* key) const;
    /// Marks key as known and returns it if present, else nullptr.
    const nlohmann::json* opt(const char* key);

    uint64_t u64(const char* key, uint64_t dflt);
    uint64_t u64_req(const char* key);
    /// Positive (>= 1) unsigned integer.
    uint32_t u32_pos(const char* key, uint32_t dflt);
    double num(const char* key, double dflt);
    double num_req(const char* key);
    bool boolean(const char* key, bool dflt);
    std::string str(const char* key, const std::string& dflt);
    std::string str_req(const char* key);

    /// Unknown keys -> ConfigError naming them and the valid set.
    void done() const;
    const std::string& path() const { return path_; }
    std::string sub(const char* key) const { return path_ + "." + key; }

private:
    const nlohmann::json& require(const char* key);
    std::string path_;
    const nlohmann::json* j_;
    std::set<std::string> known_;
};

/// "expected <what>, found <actual type>" config error for value j at path.
[[noreturn]] void type_error(const std::string& path, const char* expected,
                             const nlohmann::json& j);

}  // namespace fedsim::jsonio
