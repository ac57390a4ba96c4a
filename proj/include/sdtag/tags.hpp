#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sdtag/errors.hpp"
#include "sdtag/jsonw.hpp"

namespace sdtag {

// Ordered list of unique (key, value) pairs, canonicalized by ascending key.
class TagSet {
public:
    TagSet() = default;
    explicit TagSet(std::vector<std::pair<std::string, std::string>> pairs) {
        for (auto& kv : pairs) set(kv.first, kv.second);
    }

    // Inserts or overwrites; keeps pairs sorted by key.
    void set(const std::string& key, const std::string& value) {
        auto it = std::lower_bound(pairs_.begin(), pairs_.end(), key,
                                   [](const auto& kv, const std::string& k) { return kv.first < k; });
        if (it != pairs_.end() && it->first == key) {
            it->second = value;
        } else {
            pairs_.insert(it, {key, value});
        }
    }

    bool has(const std::string& key) const {
        auto it = std::lower_bound(pairs_.begin(), pairs_.end(), key,
                                   [](const auto& kv, const std::string& k) { return kv.first < k; });
        return it != pairs_.end() && it->first == key;
    }

    const std::string& get(const std::string& key) const {
        auto it = std::lower_bound(pairs_.begin(), pairs_.end(), key,
                                   [](const auto& kv, const std::string& k) { return kv.first < k; });
        if (it == pairs_.end() || it->first != key) throw ContractError("tagset: no key " + key);
        return it->second;
    }

    const std::vector<std::pair<std::string, std::string>>& pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }
    bool empty() const { return pairs_.empty(); }

    bool operator==(const TagSet& o) const { return pairs_ == o.pairs_; }
    bool operator!=(const TagSet& o) const { return !(*this == o); }
    bool operator<(const TagSet& o) const { return pairs_ < o.pairs_; }

    // Canonical JSON form: [["k","v"],...] with keys ascending.
    std::string to_json() const {
        std::string out = "[";
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            if (i) out += ',';
            out += '[';
            jsonw::append_string(out, pairs_[i].first);
            out += ',';
            jsonw::append_string(out, pairs_[i].second);
            out += ']';
        }
        out += ']';
        return out;
    }

private:
    std::vector<std::pair<std::string, std::string>> pairs_;
};

// Matchers for tag keys that carry no map semantics (names, import IDs, ...).
class RelevanceConfig {
public:
    RelevanceConfig() = default;
    RelevanceConfig(std::vector<std::string> exact_keys, std::vector<std::string> prefixes)
        : exact_(std::move(exact_keys)), prefixes_(std::move(prefixes)) {
        std::sort(exact_.begin(), exact_.end());
        exact_.erase(std::unique(exact_.begin(), exact_.end()), exact_.end());
    }

    // One matcher per line; a trailing '*' marks a prefix; '#' starts a comment.
    static RelevanceConfig parse(const std::string& text) {
        std::vector<std::string> exact, prefixes;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            auto e = line.find_last_not_of(" \t\r");
            std::string m = line.substr(b, e - b + 1);
            if (m.back() == '*') {
                prefixes.push_back(m.substr(0, m.size() - 1));
            } else {
                exact.push_back(m);
            }
        }
        return RelevanceConfig(std::move(exact), std::move(prefixes));
    }

    static RelevanceConfig load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ContractError("cannot open relevance config: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool is_irrelevant(const std::string& key) const {
        if (std::binary_search(exact_.begin(), exact_.end(), key)) return true;
        for (const auto& p : prefixes_) {
            if (key.compare(0, p.size(), p) == 0) return true;
        }
        return false;
    }

    const std::vector<std::string>& exact_keys() const { return exact_; }
    const std::vector<std::string>& prefixes() const { return prefixes_; }
    std::size_t matcher_count() const { return exact_.size() + prefixes_.size(); }

private:
    std::vector<std::string> exact_;
    std::vector<std::string> prefixes_;
};

// Drops irrelevant keys; canonical order is preserved by construction.
inline TagSet relevant_subset(const TagSet& tags, const RelevanceConfig& cfg) {
    TagSet out;
    for (const auto& kv : tags.pairs()) {
        if (!cfg.is_irrelevant(kv.first)) out.set(kv.first, kv.second);
    }
    return out;
}

}  // namespace sdtag
