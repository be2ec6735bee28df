#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace crosslm {

// Special token ids occupy the first five slots of every vocabulary.
enum SpecialToken : int32_t {
    kPad = 0,
    kUnk = 1,
    kMask = 2,
    kBos = 3,
    kEos = 4,
};
constexpr int32_t kNumSpecials = 5;
extern const char* const kSpecialNames[kNumSpecials];

// Marker appended to every non-final sub-word of a segmented word.
extern const std::string kContinuation;

// Ordered list of learned merges; rank equals list position.
class MergeTable {
public:
    void add(const std::string& left, const std::string& right);
    size_t size() const { return merges_.size(); }
    // Rank of a pair, or -1 when the pair was never merged.
    int64_t rank(const std::string& left, const std::string& right) const;
    const std::pair<std::string, std::string>& merge(size_t i) const {
        return merges_[i];
    }

    void save(const std::string& path) const;
    static MergeTable load(const std::string& path);

private:
    std::vector<std::pair<std::string, std::string>> merges_;
    std::unordered_map<std::string, int64_t> rank_;  // "left\x01right" -> rank
};

class Vocabulary {
public:
    Vocabulary();

    // Adds a token with its corpus count; rejects duplicates.
    int32_t add(const std::string& token, uint64_t count);
    int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
    const std::string& token(int32_t id) const;
    // Id of a token, or kUnk when absent.
    int32_t id(const std::string& token) const;
    bool contains(const std::string& token) const;
    uint64_t count(int32_t id) const { return counts_[static_cast<size_t>(id)]; }
    static bool is_special(int32_t id) { return id < kNumSpecials; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::vector<uint64_t> counts_;
    std::unordered_map<std::string, int32_t> index_;
};

// Splits a line into whitespace-separated words. Throws on invalid UTF-8.
std::vector<std::string> split_words(const std::string& line);

// Splits a word into UTF-8 code point strings. Throws on invalid UTF-8.
std::vector<std::string> utf8_chars(const std::string& word);

// Greedy most-frequent-pair merging over a sentence sample. Stops early
// when no pair occurs at least twice. Ties break lexicographically on
// (left, right).
MergeTable learn_bpe(const std::vector<std::string>& sentences, size_t num_merges);

// Segments one word: merges applied in rank order until none applies,
// then the continuation marker is attached to all non-final pieces.
std::vector<std::string> apply_bpe_word(const std::string& word, const MergeTable& merges);

// Segments every word of a whitespace-tokenized sentence.
std::vector<std::string> apply_bpe(const std::string& sentence, const MergeTable& merges);

// Tokens with count >= min_count, sorted by descending count then
// lexicographically, with the special tokens prepended.
Vocabulary build_vocab(const std::unordered_map<std::string, uint64_t>& counts,
                       uint64_t min_count);

// Sub-word ids of a sentence; pieces missing from the vocabulary map to UNK.
std::vector<int32_t> encode_sentence(const std::string& sentence,
                                     const MergeTable& merges,
                                     const Vocabulary& vocab);

// Inverse of encoding: continuation markers joined, PAD skipped, other
// specials rendered by name.
std::string decode(const std::vector<int32_t>& ids, const Vocabulary& vocab);

}  // namespace crosslm
