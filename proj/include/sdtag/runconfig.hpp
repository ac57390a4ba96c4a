#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "sdtag/errors.hpp"

namespace sdtag {

// Flat "key = value" run configuration with dotted hierarchical keys
// ("gen-scenes.count = 100"). '#' starts a comment; blank lines are skipped.
// Serialization is canonical (keys sorted), so resolved configs are diffable.
class RunConfig {
public:
    static RunConfig parse(const std::string& text) {
        RunConfig out;
        std::istringstream in(text);
        std::string line;
        std::size_t offset = 0;
        while (std::getline(in, line)) {
            const std::size_t line_start = offset;
            offset += line.size() + 1;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string stripped = trim(line);
            if (stripped.empty()) continue;
            auto eq = stripped.find('=');
            if (eq == std::string::npos) {
                throw ParseError("config line has no '='", line_start);
            }
            const std::string key = trim(stripped.substr(0, eq));
            const std::string value = trim(stripped.substr(eq + 1));
            if (key.empty()) throw ParseError("config line has an empty key", line_start);
            out.values_[key] = value;
        }
        return out;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ContractError("cannot open config: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ContractError("config: no key " + key);
        return it->second;
    }

    std::string get_or(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::int64_t get_int(const std::string& key) const {
        const std::string& v = get(key);
        std::int64_t out = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size()) {
            throw ContractError("config: key " + key + " is not an integer: " + v);
        }
        return out;
    }

    double get_double(const std::string& key) const {
        const std::string& v = get(key);
        try {
            std::size_t used = 0;
            const double out = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ContractError("config: key " + key + " is not a number: " + v);
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
        if (v == "false" || v == "off" || v == "no" || v == "0") return false;
        throw ContractError("config: key " + key + " is not a boolean: " + v);
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    std::string serialized() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            out += k;
            out += " = ";
            out += v;
            out += '\n';
        }
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace sdtag
