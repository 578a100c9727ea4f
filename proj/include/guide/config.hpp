#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "guide/common.hpp"

namespace guide {

// Flat `key = value` configuration text. `#` starts a comment; keys are
// single tokens; unknown keys are rejected by the consumer via check_known.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        require(is.is_open(), ErrorCode::IoError, "cannot open config: " + path.string());
        std::stringstream ss;
        ss << is.rdbuf();
        return from_string(ss.str(), path.string());
    }

    static KeyValueConfig from_string(const std::string& text, const std::string& origin = "<string>") {
        KeyValueConfig cfg;
        std::istringstream is(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            require(eq != std::string::npos, ErrorCode::ConfigError,
                    origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" + trimmed + "'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string val = trim(trimmed.substr(eq + 1));
            require(!key.empty(), ErrorCode::ConfigError, origin + ":" + std::to_string(line_no) + ": empty key");
            cfg.values_[key] = val;
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& val) { values_[key] = val; }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string get_required(const std::string& key) const {
        const auto it = values_.find(key);
        require(it != values_.end(), ErrorCode::ConfigError, "missing required config key '" + key + "'");
        return it->second;
    }

    long long get_int(const std::string& key, long long fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_int(it->second, key);
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_double(it->second, key);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "off" || v == "no") return false;
        fail(ErrorCode::ConfigError, "key '" + key + "': expected a boolean, got '" + v + "'");
    }

    std::vector<long long> get_int_list(const std::string& key, const std::vector<long long>& fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<long long> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            const std::string t = trim(tok);
            require(!t.empty(), ErrorCode::ConfigError, "key '" + key + "': empty list element");
            out.push_back(parse_int(t, key));
        }
        require(!out.empty(), ErrorCode::ConfigError, "key '" + key + "': empty list");
        return out;
    }

    std::vector<std::string> get_string_list(const std::string& key,
                                             const std::vector<std::string>& fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<std::string> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            const std::string t = trim(tok);
            require(!t.empty(), ErrorCode::ConfigError, "key '" + key + "': empty list element");
            out.push_back(t);
        }
        require(!out.empty(), ErrorCode::ConfigError, "key '" + key + "': empty list");
        return out;
    }

    void check_known(const std::set<std::string>& known) const {
        for (const auto& [key, value] : values_)
            require(known.count(key) > 0, ErrorCode::ConfigError, "unknown config key '" + key + "'");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
        while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
        return s.substr(b, e - b);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace guide
