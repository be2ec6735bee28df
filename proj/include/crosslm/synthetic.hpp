#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crosslm {

// Settings for the cipher-language corpus generator. Language A is sampled
// from a seeded order-2 grammar; language B applies a token-level bijection
// to fresh samples of the same grammar, with `anchor_fraction` of the token
// types shared verbatim (spelled as digits, like numerals in real text).
struct SyntheticConfig {
    int32_t vocab_size = 200;       // content token types per language
    int32_t sentences = 20000;      // monolingual sentences per side
    int32_t heldout_sentences = 2000;
    int32_t parallel_sentences = 5000;
    int32_t labeled_train = 2000;   // per language
    int32_t labeled_test = 1000;
    double anchor_fraction = 0.1;
    std::string cipher_mode = "bijective";  // bijective | identity
    uint64_t seed = 1;
    int32_t min_len = 8;
    int32_t max_len = 16;
    int32_t branching = 6;          // grammar support size per context
    int32_t label_margin = 2;       // min |polarity sum| of labeled sentences

    void validate() const;
};

struct SyntheticPair {
    std::vector<std::string> mono_a, mono_b;
    std::vector<std::string> heldout_a, heldout_b;
    std::vector<std::string> parallel_a, parallel_b;  // line-aligned translations
    std::vector<std::pair<std::string, std::string>> dictionary;  // non-anchor types
    std::vector<std::string> anchors;  // types shared verbatim
    std::vector<std::string> cls_train_a, cls_test_a;  // "label<TAB>sentence"
    std::vector<std::string> cls_train_b, cls_test_b;
};

SyntheticPair make_synthetic_pair(const SyntheticConfig& cfg);

// Writes the generated corpus under `outdir` with fixed file names:
// mono.{a,b}.txt, heldout.{a,b}.txt, parallel.{a,b}.txt, dict.tsv,
// anchors.txt, cls.{train,test}.{a,b}.tsv.
void write_synthetic(const SyntheticPair& data, const std::string& outdir);

// Low-resource trio: a small language, a related language sampled from the
// same grammar with `overlap_fraction` of its types spelled identically,
// and an unrelated language from an independent grammar with a disjoint
// inventory.
struct LowResourceConfig {
    int32_t vocab_size = 150;
    int32_t low_sentences = 2000;
    int32_t helper_sentences = 12000;
    int32_t heldout_sentences = 1000;
    double overlap_fraction = 0.4;
    uint64_t seed = 1;
    int32_t min_len = 8;
    int32_t max_len = 16;
    int32_t branching = 6;
};

struct LowResourceTexts {
    std::vector<std::string> low_train, low_heldout, related, distant;
};

LowResourceTexts make_low_resource_texts(const LowResourceConfig& cfg);

}  // namespace crosslm
