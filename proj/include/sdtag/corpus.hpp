#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sdtag/errors.hpp"
#include "sdtag/frame.hpp"
#include "sdtag/rng.hpp"
#include "sdtag/tags.hpp"

namespace sdtag {

// All unique non-empty tagsets, indexed by their relevant subset.
struct TagsetCorpus {
    std::vector<TagSet> tagsets;
    // canonical relevant-subset JSON -> indices into tagsets
    std::map<std::string, std::vector<std::size_t>> index;
};

inline TagsetCorpus build_corpus(const std::vector<TagSet>& raw, const RelevanceConfig& cfg) {
    TagsetCorpus corpus;
    std::set<std::string> seen;
    for (const auto& t : raw) {
        if (t.empty()) continue;
        std::string full = t.to_json();
        if (!seen.insert(full).second) continue;
        corpus.index[relevant_subset(t, cfg).to_json()].push_back(corpus.tagsets.size());
        corpus.tagsets.push_back(t);
    }
    return corpus;
}

inline TagsetCorpus build_corpus_from_frames(const std::vector<SdFrame>& frames,
                                             const RelevanceConfig& cfg) {
    std::vector<TagSet> raw;
    for (const auto& f : frames) {
        for (const auto& e : f.elements) raw.push_back(e.tags);
    }
    return build_corpus(raw, cfg);
}

struct TagPair {
    TagSet anchor;
    TagSet positive;
};

// Draws pairs_per_tagset (anchor, positive) pairs per relevant-subset bucket,
// uniformly with replacement. With rel_tag_cl disabled (the ablation), tags
// are stripped to their relevant subset and each pair is (t, t).
inline std::vector<TagPair> sample_positive_pairs(const TagsetCorpus& corpus,
                                                  std::size_t pairs_per_tagset, bool rel_tag_cl,
                                                  std::uint64_t seed) {
    if (corpus.tagsets.empty()) throw ContractError("sample_positive_pairs: empty corpus");
    Rng rng(seed);
    std::vector<TagPair> out;
    out.reserve(corpus.index.size() * pairs_per_tagset);
    for (const auto& [key, bucket] : corpus.index) {
        for (std::size_t k = 0; k < pairs_per_tagset; ++k) {
            if (rel_tag_cl) {
                const TagSet& a = corpus.tagsets[bucket[rng.below(bucket.size())]];
                const TagSet& p = corpus.tagsets[bucket[rng.below(bucket.size())]];
                out.push_back({a, p});
            } else {
                // Key is already the canonical relevant subset of the bucket.
                nlohmann::json j = nlohmann::json::parse(key);
                TagSet stripped;
                for (const auto& kv : j) stripped.set(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
                out.push_back({stripped, stripped});
            }
        }
    }
    return out;
}

struct ContrastiveBatch {
    std::vector<TagSet> anchors;
    std::vector<TagSet> positives;
    std::size_t size() const { return anchors.size(); }
};

// Shuffles pairs then first-fit packs them so no two pairs in a batch share a
// relevant subset; batches with fewer than 2 pairs are dropped.
inline std::vector<ContrastiveBatch> make_batches(const std::vector<TagPair>& pairs,
                                                  const RelevanceConfig& cfg, std::size_t batch_size,
                                                  std::uint64_t seed) {
    if (batch_size < 2) throw ContractError("make_batches: batch size must be >= 2");
    std::vector<std::string> subset_keys(pairs.size());
    std::set<std::string> distinct;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        subset_keys[i] = relevant_subset(pairs[i].anchor, cfg).to_json();
        distinct.insert(subset_keys[i]);
    }
    if (distinct.size() < 2) {
        throw ContractError("make_batches: need at least 2 distinct relevant subsets");
    }

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<ContrastiveBatch> batches;
    std::vector<std::set<std::string>> used;
    for (std::size_t idx : order) {
        const std::string& key = subset_keys[idx];
        std::size_t slot = batches.size();
        for (std::size_t b = 0; b < batches.size(); ++b) {
            if (batches[b].size() < batch_size && !used[b].count(key)) {
                slot = b;
                break;
            }
        }
        if (slot == batches.size()) {
            batches.emplace_back();
            used.emplace_back();
        }
        batches[slot].anchors.push_back(pairs[idx].anchor);
        batches[slot].positives.push_back(pairs[idx].positive);
        used[slot].insert(key);
    }
    std::vector<ContrastiveBatch> out;
    for (auto& b : batches) {
        if (b.size() >= 2) out.push_back(std::move(b));
    }
    return out;
}

// ---- Corpus JSONL (one tagset per line as [[k,v],...]) ----

inline void save_corpus(const std::string& path, const TagsetCorpus& corpus) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open for writing: " + path);
    for (const auto& t : corpus.tagsets) f << t.to_json() << '\n';
}

inline std::vector<TagSet> load_tagsets(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open corpus file: " + path);
    std::vector<TagSet> out;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(f, line)) {
        std::size_t line_start = offset;
        offset += line.size() + 1;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_array()) throw ParseError("malformed tagset JSON", line_start);
        TagSet t;
        try {
            for (const auto& kv : j) t.set(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(std::string("bad tagset JSON: ") + ex.what(), line_start);
        }
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace sdtag
