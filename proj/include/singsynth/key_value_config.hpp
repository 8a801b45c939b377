#pragma once

// Flat "key = value" run-config files. '#' starts a comment; blank lines are
// ignored; later assignments override earlier ones.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace singsynth {

class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    // Applies "key=value" overrides.
    void apply_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    void set(const std::string& key, double value);
    void set(const std::string& key, std::int64_t value);
    void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
    void set(const std::string& key, std::uint64_t value);
    void set(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::int64_t get_int64(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Throws InvalidInput naming the first key not in `known`.
    void check_known(const std::set<std::string>& known) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }
    std::string to_string() const;

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace singsynth
