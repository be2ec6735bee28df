#include "crosslm/subword.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "crosslm/common.hpp"

namespace crosslm {

const char* const kSpecialNames[kNumSpecials] = {"<pad>", "<unk>", "<mask>",
                                                 "<bos>", "<eos>"};
const std::string kContinuation = "@@";

namespace {
std::string pair_key(const std::string& left, const std::string& right) {
    return left + '\x01' + right;
}
}  // namespace

void MergeTable::add(const std::string& left, const std::string& right) {
    const std::string key = pair_key(left, right);
    CLX_CHECK(rank_.find(key) == rank_.end(), "merge table: duplicate pair '",
              left, " ", right, "'");
    rank_[key] = static_cast<int64_t>(merges_.size());
    merges_.emplace_back(left, right);
}

int64_t MergeTable::rank(const std::string& left, const std::string& right) const {
    auto it = rank_.find(pair_key(left, right));
    return it == rank_.end() ? -1 : it->second;
}

void MergeTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    CLX_CHECK(out.good(), "cannot write codes file: ", path);
    for (const auto& [left, right] : merges_) out << left << ' ' << right << '\n';
}

MergeTable MergeTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read codes file: ", path);
    MergeTable table;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto sp = line.find(' ');
        CLX_CHECK(sp != std::string::npos && sp > 0 && sp + 1 < line.size(),
                  "codes file ", path, " line ", lineno, ": expected 'left right'");
        table.add(line.substr(0, sp), line.substr(sp + 1));
    }
    return table;
}

Vocabulary::Vocabulary() {
    for (int32_t i = 0; i < kNumSpecials; ++i) {
        tokens_.push_back(kSpecialNames[i]);
        counts_.push_back(0);
        index_[kSpecialNames[i]] = i;
    }
}

int32_t Vocabulary::add(const std::string& token, uint64_t count) {
    CLX_CHECK(index_.find(token) == index_.end(), "vocabulary: duplicate token '",
              token, "'");
    int32_t id = static_cast<int32_t>(tokens_.size());
    tokens_.push_back(token);
    counts_.push_back(count);
    index_[token] = id;
    return id;
}

const std::string& Vocabulary::token(int32_t id) const {
    CLX_CHECK(id >= 0 && id < size(), "vocabulary: id ", id, " out of range [0, ",
              size(), ")");
    return tokens_[static_cast<size_t>(id)];
}

int32_t Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
    return index_.find(token) != index_.end();
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    CLX_CHECK(out.good(), "cannot write vocab file: ", path);
    for (size_t i = 0; i < tokens_.size(); ++i)
        out << tokens_[i] << '\t' << counts_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read vocab file: ", path);
    Vocabulary vocab;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        CLX_CHECK(tab != std::string::npos, "vocab file ", path, " line ", lineno,
                  ": expected 'token<TAB>count'");
        const std::string token = line.substr(0, tab);
        const uint64_t count = std::stoull(line.substr(tab + 1));
        if (lineno <= kNumSpecials) {
            CLX_CHECK(token == kSpecialNames[lineno - 1], "vocab file ", path,
                      ": line ", lineno, " must be special token ",
                      kSpecialNames[lineno - 1]);
            continue;
        }
        vocab.add(token, count);
    }
    CLX_CHECK(lineno >= kNumSpecials, "vocab file ", path,
              ": missing special tokens");
    return vocab;
}

std::vector<std::string> utf8_chars(const std::string& word) {
    std::vector<std::string> chars;
    size_t i = 0;
    while (i < word.size()) {
        const unsigned char c = static_cast<unsigned char>(word[i]);
        size_t len;
        if (c < 0x80)
            len = 1;
        else if ((c >> 5) == 0x6)
            len = 2;
        else if ((c >> 4) == 0xe)
            len = 3;
        else if ((c >> 3) == 0x1e)
            len = 4;
        else
            fail("invalid UTF-8 lead byte 0x", std::hex, int(c));
        CLX_CHECK(i + len <= word.size(), "truncated UTF-8 sequence");
        for (size_t k = 1; k < len; ++k) {
            const unsigned char cont = static_cast<unsigned char>(word[i + k]);
            CLX_CHECK((cont >> 6) == 0x2, "invalid UTF-8 continuation byte");
        }
        chars.push_back(word.substr(i, len));
        i += len;
    }
    return chars;
}

std::vector<std::string> split_words(const std::string& line) {
    std::vector<std::string> words;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' ||
                                   line[i] == '\r'))
            ++i;
        size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' &&
               line[i] != '\r')
            ++i;
        if (i > start) words.push_back(line.substr(start, i - start));
    }
    for (const auto& w : words) utf8_chars(w);  // validate
    return words;
}

MergeTable learn_bpe(const std::vector<std::string>& sentences, size_t num_merges) {
    CLX_CHECK(!sentences.empty(), "learn_bpe: empty sample");
    CLX_CHECK(num_merges >= 1, "learn_bpe: num_merges must be >= 1");

    // Word-type counts; merging operates on types, not corpus tokens.
    std::unordered_map<std::string, uint64_t> word_counts;
    for (const auto& sentence : sentences)
        for (const auto& word : split_words(sentence)) ++word_counts[word];
    CLX_CHECK(!word_counts.empty(), "learn_bpe: sample contains no words");

    std::vector<std::vector<std::string>> segmentations;
    std::vector<uint64_t> counts;
    segmentations.reserve(word_counts.size());
    for (const auto& [word, count] : word_counts) {
        segmentations.push_back(utf8_chars(word));
        counts.push_back(count);
    }

    MergeTable table;
    for (size_t round = 0; round < num_merges; ++round) {
        // std::map keys are ordered, which fixes the lexicographic tie-break.
        std::map<std::pair<std::string, std::string>, uint64_t> pair_counts;
        for (size_t w = 0; w < segmentations.size(); ++w) {
            const auto& seg = segmentations[w];
            for (size_t i = 0; i + 1 < seg.size(); ++i)
                pair_counts[{seg[i], seg[i + 1]}] += counts[w];
        }
        std::pair<std::string, std::string> best;
        uint64_t best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count) {
                best = pair;
                best_count = count;
            }
        }
        if (best_count < 2) break;
        table.add(best.first, best.second);

        const std::string merged = best.first + best.second;
        for (auto& seg : segmentations) {
            if (seg.size() < 2) continue;
            std::vector<std::string> next;
            next.reserve(seg.size());
            size_t i = 0;
            while (i < seg.size()) {
                if (i + 1 < seg.size() && seg[i] == best.first &&
                    seg[i + 1] == best.second) {
                    next.push_back(merged);
                    i += 2;
                } else {
                    next.push_back(seg[i]);
                    ++i;
                }
            }
            seg = std::move(next);
        }
    }
    return table;
}

std::vector<std::string> apply_bpe_word(const std::string& word,
                                        const MergeTable& merges) {
    std::vector<std::string> symbols = utf8_chars(word);
    while (symbols.size() > 1) {
        // Lowest-ranked applicable pair merges first, all occurrences at once.
        int64_t best_rank = -1;
        size_t best_pos = 0;
        for (size_t i = 0; i + 1 < symbols.size(); ++i) {
            int64_t r = merges.rank(symbols[i], symbols[i + 1]);
            if (r >= 0 && (best_rank < 0 || r < best_rank)) {
                best_rank = r;
                best_pos = i;
            }
        }
        if (best_rank < 0) break;
        const std::string left = symbols[best_pos];
        const std::string right = symbols[best_pos + 1];
        const std::string merged = left + right;
        std::vector<std::string> next;
        next.reserve(symbols.size());
        size_t i = 0;
        while (i < symbols.size()) {
            if (i + 1 < symbols.size() && symbols[i] == left &&
                symbols[i + 1] == right) {
                next.push_back(merged);
                i += 2;
            } else {
                next.push_back(symbols[i]);
                ++i;
            }
        }
        symbols = std::move(next);
    }
    for (size_t i = 0; i + 1 < symbols.size(); ++i) symbols[i] += kContinuation;
    return symbols;
}

std::vector<std::string> apply_bpe(const std::string& sentence,
                                   const MergeTable& merges) {
    std::vector<std::string> pieces;
    for (const auto& word : split_words(sentence)) {
        auto sub = apply_bpe_word(word, merges);
        pieces.insert(pieces.end(), sub.begin(), sub.end());
    }
    return pieces;
}

Vocabulary build_vocab(const std::unordered_map<std::string, uint64_t>& counts,
                       uint64_t min_count) {
    std::vector<std::pair<std::string, uint64_t>> kept;
    for (const auto& [token, count] : counts) {
        if (count < min_count) continue;
        bool special = false;
        for (const char* name : kSpecialNames)
            if (token == name) special = true;
        if (!special) kept.emplace_back(token, count);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [token, count] : kept) vocab.add(token, count);
    CLX_CHECK(vocab.size() > kNumSpecials,
              "build_vocab: no token passes min_count ", min_count);
    return vocab;
}

std::vector<int32_t> encode_sentence(const std::string& sentence,
                                     const MergeTable& merges,
                                     const Vocabulary& vocab) {
    std::vector<int32_t> ids;
    for (const auto& piece : apply_bpe(sentence, merges))
        ids.push_back(vocab.id(piece));
    return ids;
}

std::string decode(const std::vector<int32_t>& ids, const Vocabulary& vocab) {
    std::string out;
    bool continuing = false;
    for (int32_t id : ids) {
        if (id == kPad) continue;
        const std::string& tok = vocab.token(id);
        if (!out.empty() && !continuing) out += ' ';
        if (tok.size() > kContinuation.size() &&
            tok.compare(tok.size() - kContinuation.size(), kContinuation.size(),
                        kContinuation) == 0 &&
            !Vocabulary::is_special(id)) {
            out += tok.substr(0, tok.size() - kContinuation.size());
            continuing = true;
        } else {
            out += tok;
            continuing = false;
        }
    }
    return out;
}

}  // namespace crosslm
