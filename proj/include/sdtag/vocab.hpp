#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdtag/errors.hpp"
#include "sdtag/tags.hpp"

namespace sdtag {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;

// Word-level tokenizer: lowercase, split on whitespace and on : = _ -
// (delimiters are dropped). Tagsets are keyword lists, not sentences, so
// subword modeling is deliberately skipped.
inline std::vector<std::string> word_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        const bool delim = std::isspace(c) || c == ':' || c == '=' || c == '_' || c == '-';
        if (delim) {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += static_cast<char>(std::tolower(c));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

class Vocabulary {
public:
    Vocabulary() {
        for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add_token(t);
    }

    int add_token(const std::string& t) {
        auto it = ids_.find(t);
        if (it != ids_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        ids_.emplace(t, id);
        tokens_.push_back(t);
        return id;
    }

    int id(const std::string& t) const {
        auto it = ids_.find(t);
        return it == ids_.end() ? kUnkId : it->second;
    }

    bool contains(const std::string& t) const { return ids_.count(t) != 0; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }

private:
    std::unordered_map<std::string, int> ids_;
    std::vector<std::string> tokens_;
};

// Top (max_size - 4) tokens by frequency, ties broken lexicographically.
inline Vocabulary build_vocab(const std::vector<TagSet>& corpus, std::size_t max_size) {
    if (corpus.empty()) throw ContractError("build_vocab: empty corpus");
    if (max_size < 5) throw ContractError("build_vocab: max_size must exceed the 4 reserved ids");
    std::map<std::string, std::size_t> freq;
    for (const auto& t : corpus) {
        for (const auto& [k, v] : t.pairs()) {
            for (const auto& w : word_tokens(k)) ++freq[w];
            for (const auto& w : word_tokens(v)) ++freq[w];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [tok, n] : items) {
        if (vocab.size() >= max_size) break;
        vocab.add_token(tok);
    }
    return vocab;
}

// [CLS], then per tag in key order: key tokens, value tokens, [SEP];
// truncated to max_len. Never empty.
inline std::vector<int> tokenize_tagset(const TagSet& tags, const Vocabulary& vocab,
                                        std::size_t max_len) {
    if (max_len < 1) throw ContractError("tokenize_tagset: max_len must be >= 1");
    std::vector<int> ids = {kClsId};
    for (const auto& [k, v] : tags.pairs()) {
        for (const auto& w : word_tokens(k)) ids.push_back(vocab.id(w));
        for (const auto& w : word_tokens(v)) ids.push_back(vocab.id(w));
        ids.push_back(kSepId);
    }
    if (ids.size() > max_len) ids.resize(max_len);
    return ids;
}

}  // namespace sdtag
