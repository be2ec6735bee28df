#include "crosslm/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "crosslm/common.hpp"
#include "crosslm/rng.hpp"

namespace crosslm {

namespace {

// Order-2 grammar over type indices 0..V-1. Transition supports and
// weights are derived by hashing, so the grammar is a pure function of its
// seed and never materializes a V^2 table.
class Grammar {
public:
    Grammar(uint64_t seed, int32_t vocab, int32_t branching)
        : seed_(seed), vocab_(vocab), branching_(branching) {}

    int32_t next_token(int32_t prev2, int32_t prev1, Rng& rng) const {
        // sentinel context value vocab_ stands for "sentence start"
        const uint64_t ctx = static_cast<uint64_t>(prev2 + 1) *
                                 static_cast<uint64_t>(vocab_ + 1) +
                             static_cast<uint64_t>(prev1 + 1);
        // candidate j has weight 1/(j+1); duplicates just re-weight
        double total = 0.0;
        for (int32_t j = 0; j < branching_; ++j) total += 1.0 / (j + 1.0);
        double u = rng.uniform() * total;
        int32_t j = 0;
        for (; j + 1 < branching_; ++j) {
            u -= 1.0 / (j + 1.0);
            if (u < 0.0) break;
        }
        return static_cast<int32_t>(
            derive_seed(seed_, ctx * 64 + static_cast<uint64_t>(j)) %
            static_cast<uint64_t>(vocab_));
    }

    std::vector<int32_t> sentence(int32_t min_len, int32_t max_len, Rng& rng) const {
        const int32_t len =
            min_len + static_cast<int32_t>(rng.uniform_int(
                          static_cast<uint64_t>(max_len - min_len + 1)));
        std::vector<int32_t> out;
        out.reserve(static_cast<size_t>(len));
        int32_t prev2 = -1, prev1 = -1;
        for (int32_t i = 0; i < len; ++i) {
            const int32_t t = next_token(prev2, prev1, rng);
            out.push_back(t);
            prev2 = prev1;
            prev1 = t;
        }
        return out;
    }

private:
    uint64_t seed_;
    int32_t vocab_;
    int32_t branching_;
};

// Pronounceable spellings: index encoded as consonant-vowel syllables from
// a per-language consonant inventory, guaranteeing disjoint inventories.
std::string spell(int32_t index, const std::string& consonants) {
    static const std::string vowels = "aeiou";
    const int32_t base = static_cast<int32_t>(consonants.size() * vowels.size());
    std::string word;
    int32_t v = index;
    do {
        const int32_t digit = v % base;
        word.insert(0, {consonants[static_cast<size_t>(digit) / vowels.size()],
                        vowels[static_cast<size_t>(digit) % vowels.size()]});
        v /= base;
    } while (v > 0);
    // fixed width keeps all spellings two syllables long
    while (word.size() < 4)
        word.insert(0, {consonants[0], vowels[0]});
    return word;
}

std::string join_tokens(const std::vector<int32_t>& sentence,
                        const std::vector<std::string>& spelling) {
    std::string line;
    for (size_t i = 0; i < sentence.size(); ++i) {
        if (i) line += ' ';
        line += spelling[static_cast<size_t>(sentence[i])];
    }
    return line;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    CLX_CHECK(out.good(), "cannot write: ", path);
    for (const auto& line : lines) out << line << '\n';
}

}  // namespace

void SyntheticConfig::validate() const {
    CLX_CHECK(vocab_size >= 20, "synthetic: vocab_size must be >= 20");
    CLX_CHECK(anchor_fraction >= 0.0 && anchor_fraction < 1.0,
              "synthetic: anchor_fraction outside [0, 1)");
    CLX_CHECK(cipher_mode == "bijective" || cipher_mode == "identity",
              "synthetic: cipher_mode must be 'bijective' or 'identity'");
    CLX_CHECK(sentences >= 1 && min_len >= 2 && max_len >= min_len,
              "synthetic: bad sentence geometry");
    CLX_CHECK(branching >= 2, "synthetic: branching must be >= 2");
}

SyntheticPair make_synthetic_pair(const SyntheticConfig& cfg) {
    cfg.validate();
    const int32_t V = cfg.vocab_size;
    Grammar grammar(derive_seed(cfg.seed, 0x6), V, cfg.branching);

    // anchor selection: a seeded subset of type indices, spelled as digits
    const int32_t n_anchors =
        static_cast<int32_t>(std::llround(cfg.anchor_fraction * V));
    std::vector<int32_t> indices(static_cast<size_t>(V));
    std::iota(indices.begin(), indices.end(), 0);
    Rng anchor_rng(derive_seed(cfg.seed, 0xA));
    anchor_rng.shuffle(std::span<int32_t>(indices));
    std::vector<bool> is_anchor(static_cast<size_t>(V), false);
    for (int32_t i = 0; i < n_anchors; ++i)
        is_anchor[static_cast<size_t>(indices[static_cast<size_t>(i)])] = true;

    std::vector<std::string> spell_a(static_cast<size_t>(V));
    std::vector<std::string> spell_b(static_cast<size_t>(V));
    int32_t anchor_ordinal = 0;
    for (int32_t i = 0; i < V; ++i) {
        if (is_anchor[static_cast<size_t>(i)]) {
            spell_a[static_cast<size_t>(i)] = std::to_string(anchor_ordinal++);
            spell_b[static_cast<size_t>(i)] = spell_a[static_cast<size_t>(i)];
        } else {
            spell_a[static_cast<size_t>(i)] = spell(i, "bcdfghjklm");
            spell_b[static_cast<size_t>(i)] =
                cfg.cipher_mode == "identity" ? spell(i, "bcdfghjklm")
                                              : spell(i, "npqrstvwxz");
        }
    }

    SyntheticPair out;
    for (int32_t i = 0; i < V; ++i) {
        if (is_anchor[static_cast<size_t>(i)]) {
            out.anchors.push_back(spell_a[static_cast<size_t>(i)]);
        } else {
            out.dictionary.emplace_back(spell_a[static_cast<size_t>(i)],
                                        spell_b[static_cast<size_t>(i)]);
        }
    }

    auto sample_lines = [&](uint64_t key, int32_t n,
                            const std::vector<std::string>& spelling) {
        Rng rng(derive_seed(cfg.seed, key));
        std::vector<std::string> lines;
        lines.reserve(static_cast<size_t>(n));
        for (int32_t i = 0; i < n; ++i)
            lines.push_back(
                join_tokens(grammar.sentence(cfg.min_len, cfg.max_len, rng), spelling));
        return lines;
    };

    out.mono_a = sample_lines(0x10, cfg.sentences, spell_a);
    out.mono_b = sample_lines(0x11, cfg.sentences, spell_b);
    out.heldout_a = sample_lines(0x12, cfg.heldout_sentences, spell_a);
    out.heldout_b = sample_lines(0x13, cfg.heldout_sentences, spell_b);

    {
        // true translations: one abstract sentence spelled in both languages
        Rng rng(derive_seed(cfg.seed, 0x14));
        for (int32_t i = 0; i < cfg.parallel_sentences; ++i) {
            const auto sentence = grammar.sentence(cfg.min_len, cfg.max_len, rng);
            out.parallel_a.push_back(join_tokens(sentence, spell_a));
            out.parallel_b.push_back(join_tokens(sentence, spell_b));
        }
    }

    // labeled task: polarity of a sentence under a seeded +-1 type map,
    // a property the cipher preserves by construction
    std::vector<int32_t> polarity(static_cast<size_t>(V));
    for (int32_t i = 0; i < V; ++i)
        polarity[static_cast<size_t>(i)] =
            (derive_seed(cfg.seed, 0x7000 + static_cast<uint64_t>(i)) & 1) ? 1 : -1;

    auto labeled_lines = [&](uint64_t key, int32_t n,
                             const std::vector<std::string>& spelling) {
        Rng rng(derive_seed(cfg.seed, key));
        std::vector<std::string> lines;
        int32_t quota_pos = n / 2, quota_neg = n - n / 2;
        int64_t attempts = 0;
        while (quota_pos + quota_neg > 0) {
            CLX_CHECK(++attempts < int64_t{100} * n,
                      "synthetic: label margin ", cfg.label_margin,
                      " rejects too many sentences");
            const auto sentence = grammar.sentence(cfg.min_len, cfg.max_len, rng);
            int32_t score = 0;
            for (int32_t t : sentence) score += polarity[static_cast<size_t>(t)];
            if (std::abs(score) < cfg.label_margin) continue;
            if (score > 0 && quota_pos > 0) {
                --quota_pos;
                lines.push_back("pos\t" + join_tokens(sentence, spelling));
            } else if (score < 0 && quota_neg > 0) {
                --quota_neg;
                lines.push_back("neg\t" + join_tokens(sentence, spelling));
            }
        }
        return lines;
    };

    out.cls_train_a = labeled_lines(0x20, cfg.labeled_train, spell_a);
    out.cls_test_a = labeled_lines(0x21, cfg.labeled_test, spell_a);
    out.cls_train_b = labeled_lines(0x22, cfg.labeled_train, spell_b);
    out.cls_test_b = labeled_lines(0x23, cfg.labeled_test, spell_b);
    return out;
}

void write_synthetic(const SyntheticPair& data, const std::string& outdir) {
    std::filesystem::create_directories(outdir);
    const std::filesystem::path dir(outdir);
    write_lines((dir / "mono.a.txt").string(), data.mono_a);
    write_lines((dir / "mono.b.txt").string(), data.mono_b);
    write_lines((dir / "heldout.a.txt").string(), data.heldout_a);
    write_lines((dir / "heldout.b.txt").string(), data.heldout_b);
    write_lines((dir / "parallel.a.txt").string(), data.parallel_a);
    write_lines((dir / "parallel.b.txt").string(), data.parallel_b);
    write_lines((dir / "anchors.txt").string(), data.anchors);
    std::vector<std::string> dict_lines;
    for (const auto& [a, b] : data.dictionary) dict_lines.push_back(a + "\t" + b);
    write_lines((dir / "dict.tsv").string(), dict_lines);
    write_lines((dir / "cls.train.a.tsv").string(), data.cls_train_a);
    write_lines((dir / "cls.test.a.tsv").string(), data.cls_test_a);
    write_lines((dir / "cls.train.b.tsv").string(), data.cls_train_b);
    write_lines((dir / "cls.test.b.tsv").string(), data.cls_test_b);
}

LowResourceTexts make_low_resource_texts(const LowResourceConfig& cfg) {
    CLX_CHECK(cfg.vocab_size >= 20, "low_resource: vocab_size must be >= 20");
    CLX_CHECK(cfg.overlap_fraction >= 0.0 && cfg.overlap_fraction <= 1.0,
              "low_resource: overlap_fraction outside [0, 1]");
    const int32_t V = cfg.vocab_size;
    Grammar shared_grammar(derive_seed(cfg.seed, 0x31), V, cfg.branching);
    Grammar distant_grammar(derive_seed(cfg.seed, 0x32), V, cfg.branching);

    // the related language shares `overlap_fraction` of the low-resource
    // inventory verbatim and respells the rest
    const int32_t n_shared =
        static_cast<int32_t>(std::llround(cfg.overlap_fraction * V));
    std::vector<int32_t> indices(static_cast<size_t>(V));
    std::iota(indices.begin(), indices.end(), 0);
    Rng overlap_rng(derive_seed(cfg.seed, 0x33));
    overlap_rng.shuffle(std::span<int32_t>(indices));

    std::vector<std::string> spell_low(static_cast<size_t>(V));
    std::vector<std::string> spell_related(static_cast<size_t>(V));
    std::vector<std::string> spell_distant(static_cast<size_t>(V));
    for (int32_t i = 0; i < V; ++i) {
        spell_low[static_cast<size_t>(i)] = spell(i, "bcdfgh");
        spell_related[static_cast<size_t>(i)] = spell(i, "jklmnp");
        spell_distant[static_cast<size_t>(i)] = spell(i, "qrstvw");
    }
    for (int32_t k = 0; k < n_shared; ++k) {
        const auto i = static_cast<size_t>(indices[static_cast<size_t>(k)]);
        spell_related[i] = spell_low[i];
    }

    auto sample = [&](const Grammar& grammar, uint64_t key, int32_t n,
                      const std::vector<std::string>& spelling) {
        Rng rng(derive_seed(cfg.seed, key));
        std::vector<std::string> lines;
        lines.reserve(static_cast<size_t>(n));
        for (int32_t i = 0; i < n; ++i)
            lines.push_back(join_tokens(
                grammar.sentence(cfg.min_len, cfg.max_len, rng), spelling));
        return lines;
    };

    LowResourceTexts out;
    out.low_train = sample(shared_grammar, 0x40, cfg.low_sentences, spell_low);
    out.low_heldout = sample(shared_grammar, 0x41, cfg.heldout_sentences, spell_low);
    out.related = sample(shared_grammar, 0x42, cfg.helper_sentences, spell_related);
    out.distant = sample(distant_grammar, 0x43, cfg.helper_sentences, spell_distant);
    return out;
}

}  // namespace crosslm
