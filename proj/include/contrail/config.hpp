#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace contrail {

// Flat `key = value` text. '#' starts a comment; blank lines are ignored;
// values may be wrapped in double quotes. Reading a key marks it used so
// callers can reject typos with require_all_used().
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text);
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    // Throws BadConfig naming any key never read.
    void require_all_used() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

} // namespace contrail
