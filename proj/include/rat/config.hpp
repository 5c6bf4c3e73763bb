#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rat/error.hpp"

namespace rat {

/// key = value configuration, one pair per line. Blank lines and lines
/// starting with # are ignored; whitespace around keys and values is
/// trimmed. Every lookup error names the offending key, and consumption is
/// tracked so unrecognized keys can be rejected wholesale.
class KvConfig {
  public:
    KvConfig() = default;

    static KvConfig parse_string(const std::string& text, const std::string& origin = "config") {
        KvConfig cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string stripped = strip(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos)
                throw ConfigError(concat(origin, ":", line_no, ": expected key = value, got '",
                                         stripped, "'"));
            const std::string key = strip(stripped.substr(0, eq));
            const std::string value = strip(stripped.substr(eq + 1));
            if (key.empty())
                throw ConfigError(concat(origin, ":", line_no, ": empty key"));
            if (!cfg.values_.emplace(key, value).second)
                throw ConfigError(concat(origin, ": duplicate key '", key, "'"));
        }
        return cfg;
    }

    static KvConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError(concat("config: cannot open ", path));
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key) {
        const auto it = values_.find(key);
        if (it == values_.end())
            throw ConfigError(concat(origin_, ": missing required key '", key, "'"));
        consumed_.insert(key);
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& fallback) {
        return has(key) ? get_string(key) : fallback;
    }

    std::uint64_t get_u64(const std::string& key) { return parse_u64(key, get_string(key)); }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        return has(key) ? get_u64(key) : fallback;
    }

    double get_double(const std::string& key) { return parse_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) {
        return has(key) ? get_double(key) : fallback;
    }

    bool get_bool(const std::string& key) {
        const std::string v = get_string(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError(
            concat(origin_, ": key '", key, "' expects true/false/1/0, got '", v, "'"));
    }
    bool get_bool(const std::string& key, bool fallback) {
        return has(key) ? get_bool(key) : fallback;
    }

    /// Throws if any key was never consumed, naming the first offender.
    void reject_unconsumed() const {
        for (const auto& [key, value] : values_)
            if (consumed_.count(key) == 0)
                throw ConfigError(concat(origin_, ": unknown key '", key, "'"));
    }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& [key, value] : values_) out.push_back(key);
        return out;
    }

  private:
    static std::string strip(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    std::uint64_t parse_u64(const std::string& key, const std::string& v) const {
        if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError(concat(origin_, ": key '", key,
                                     "' expects an unsigned integer, got '", v, "'"));
        try {
            return std::stoull(v);
        } catch (const std::exception&) {
            throw ConfigError(
                concat(origin_, ": key '", key, "' value '", v, "' is out of range"));
        }
    }

    double parse_double(const std::string& key, const std::string& v) const {
        std::size_t used = 0;
        double out = 0.0;
        try {
            out = std::stod(v, &used);
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != v.size() || v.empty())
            throw ConfigError(
                concat(origin_, ": key '", key, "' expects a number, got '", v, "'"));
        return out;
    }

    std::string origin_ = "config";
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

}  // namespace rat
