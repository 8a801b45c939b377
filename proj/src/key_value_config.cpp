#include "singsynth/key_value_config.hpp"

#include "singsynth/common.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace singsynth {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw InvalidInput("config key '" + key + "': cannot parse '" + text + "' as a number");
    }
    return value;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
    KeyValueConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw InvalidInput(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw InvalidInput(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        cfg.entries_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open config file " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.string());
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write config file " + path.string());
    }
    out << to_string();
}

void KeyValueConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty()) {
        throw InvalidInput("override '" + assignment + "' is not of the form key=value");
    }
    entries_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

void KeyValueConfig::set(const std::string& key, double value) { entries_[key] = format_double(value); }
void KeyValueConfig::set(const std::string& key, std::int64_t value) { entries_[key] = std::to_string(value); }
void KeyValueConfig::set(const std::string& key, std::uint64_t value) { entries_[key] = std::to_string(value); }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) {
        return fallback;
    }
    return parse_number<double>(key, it->second);
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : parse_number<int>(key, it->second);
}

std::int64_t KeyValueConfig::get_int64(const std::string& key, std::int64_t fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : parse_number<std::int64_t>(key, it->second);
}

std::uint64_t KeyValueConfig::get_uint64(const std::string& key, std::uint64_t fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : parse_number<std::uint64_t>(key, it->second);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) {
        return fallback;
    }
    if (it->second == "true" || it->second == "1") {
        return true;
    }
    if (it->second == "false" || it->second == "0") {
        return false;
    }
    throw InvalidInput("config key '" + key + "': expected true/false, got '" + it->second + "'");
}

void KeyValueConfig::check_known(const std::set<std::string>& known) const {
    for (const auto& [key, value] : entries_) {
        if (!known.count(key)) {
            throw InvalidInput("unknown config key '" + key + "'");
        }
    }
}

std::string KeyValueConfig::to_string() const {
    std::ostringstream os;
    for (const auto& [key, value] : entries_) {
        os << key << " = " << value << '\n';
    }
    return os.str();
}

}  // namespace singsynth
