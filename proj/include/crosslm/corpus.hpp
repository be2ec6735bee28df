#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crosslm/subword.hpp"

namespace crosslm {

struct LanguageInfo {
    int32_t id = 0;
    std::string name;
    uint64_t sentence_count = 0;  // n_i
};

// Registered languages with dense ids and per-corpus sentence counts.
class LanguageSet {
public:
    // Registers a language; names must be unique. Returns the new id.
    int32_t add(const std::string& name, uint64_t sentence_count);
    void set_sentence_count(int32_t id, uint64_t n);
    int32_t size() const { return static_cast<int32_t>(entries_.size()); }
    const LanguageInfo& entry(int32_t id) const;
    int32_t id_of(const std::string& name) const;  // -1 when absent
    std::vector<uint64_t> sizes() const;

private:
    std::vector<LanguageInfo> entries_;
};

// Monolingual sentences of one language as token-id sequences.
struct SentenceStore {
    int32_t language = 0;
    std::vector<std::vector<int32_t>> sentences;
    uint64_t total_tokens = 0;

    bool empty() const { return sentences.empty(); }
};

// Line-aligned sentence pairs between two languages.
struct ParallelStore {
    int32_t src_language = 0;
    int32_t tgt_language = 0;
    std::vector<std::pair<std::vector<int32_t>, std::vector<int32_t>>> pairs;
    uint64_t dropped = 0;  // pairs removed because one side encoded to empty

    bool empty() const { return pairs.empty(); }
};

// Builds a store from encoded sentences (used by generators and tests).
SentenceStore make_store(int32_t language,
                         std::vector<std::vector<int32_t>> sentences);

// Reads a one-sentence-per-line UTF-8 file and BPE-encodes every line.
// Blank lines are skipped; order is preserved. Invalid UTF-8 is reported
// with its line number.
SentenceStore load_monolingual(const std::string& path, int32_t language,
                               const MergeTable& merges, const Vocabulary& vocab);

// Reads two line-aligned files into pairs. A line-count mismatch is fatal;
// pairs where either side encodes to empty are dropped and counted.
ParallelStore load_parallel(const std::string& src_path, const std::string& tgt_path,
                            int32_t src_language, int32_t tgt_language,
                            const MergeTable& merges, const Vocabulary& vocab);

// Exact token occurrence counts over the listed stores, indexed by token
// id; ids never seen have count 0.
std::vector<uint64_t> token_frequencies(const std::vector<const SentenceStore*>& stores,
                                        int32_t vocab_size);

}  // namespace crosslm
