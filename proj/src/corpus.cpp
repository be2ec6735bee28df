#include "crosslm/corpus.hpp"

#include <fstream>

#include "crosslm/common.hpp"

namespace crosslm {

int32_t LanguageSet::add(const std::string& name, uint64_t sentence_count) {
    CLX_CHECK(!name.empty(), "language name must be nonempty");
    CLX_CHECK(id_of(name) < 0, "duplicate language name '", name, "'");
    CLX_CHECK(sentence_count >= 1, "language '", name,
              "' registered with empty corpus");
    LanguageInfo info;
    info.id = static_cast<int32_t>(entries_.size());
    info.name = name;
    info.sentence_count = sentence_count;
    entries_.push_back(info);
    return info.id;
}

void LanguageSet::set_sentence_count(int32_t id, uint64_t n) {
    CLX_CHECK(id >= 0 && id < size(), "language id ", id, " out of range");
    CLX_CHECK(n >= 1, "language '", entries_[id].name, "': zero corpus size");
    entries_[static_cast<size_t>(id)].sentence_count = n;
}

const LanguageInfo& LanguageSet::entry(int32_t id) const {
    CLX_CHECK(id >= 0 && id < size(), "language id ", id, " out of range");
    return entries_[static_cast<size_t>(id)];
}

int32_t LanguageSet::id_of(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e.id;
    return -1;
}

std::vector<uint64_t> LanguageSet::sizes() const {
    std::vector<uint64_t> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.sentence_count);
    return out;
}

SentenceStore make_store(int32_t language,
                         std::vector<std::vector<int32_t>> sentences) {
    SentenceStore store;
    store.language = language;
    store.sentences = std::move(sentences);
    for (const auto& s : store.sentences) {
        CLX_CHECK(!s.empty(), "store may not contain an empty sentence");
        store.total_tokens += s.size();
    }
    return store;
}

SentenceStore load_monolingual(const std::string& path, int32_t language,
                               const MergeTable& merges, const Vocabulary& vocab) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read corpus file: ", path);
    SentenceStore store;
    store.language = language;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::vector<int32_t> ids;
        try {
            ids = encode_sentence(line, merges, vocab);
        } catch (const std::exception& e) {
            fail(path, " line ", lineno, ": ", e.what());
        }
        if (ids.empty()) continue;  // blank line
        store.total_tokens += ids.size();
        store.sentences.push_back(std::move(ids));
    }
    return store;
}

ParallelStore load_parallel(const std::string& src_path, const std::string& tgt_path,
                            int32_t src_language, int32_t tgt_language,
                            const MergeTable& merges, const Vocabulary& vocab) {
    std::ifstream src_in(src_path, std::ios::binary);
    CLX_CHECK(src_in.good(), "cannot read corpus file: ", src_path);
    std::ifstream tgt_in(tgt_path, std::ios::binary);
    CLX_CHECK(tgt_in.good(), "cannot read corpus file: ", tgt_path);

    std::vector<std::string> src_lines, tgt_lines;
    std::string line;
    while (std::getline(src_in, line)) src_lines.push_back(line);
    while (std::getline(tgt_in, line)) tgt_lines.push_back(line);
    CLX_CHECK(src_lines.size() == tgt_lines.size(), "line-count mismatch ",
              src_lines.size(), " vs ", tgt_lines.size());

    ParallelStore store;
    store.src_language = src_language;
    store.tgt_language = tgt_language;
    for (size_t i = 0; i < src_lines.size(); ++i) {
        std::vector<int32_t> src_ids, tgt_ids;
        try {
            src_ids = encode_sentence(src_lines[i], merges, vocab);
            tgt_ids = encode_sentence(tgt_lines[i], merges, vocab);
        } catch (const std::exception& e) {
            fail(src_path, "/", tgt_path, " line ", i + 1, ": ", e.what());
        }
        if (src_ids.empty() || tgt_ids.empty()) {
            ++store.dropped;
            continue;
        }
        store.pairs.emplace_back(std::move(src_ids), std::move(tgt_ids));
    }
    return store;
}

std::vector<uint64_t> token_frequencies(const std::vector<const SentenceStore*>& stores,
                                        int32_t vocab_size) {
    CLX_CHECK(!stores.empty(), "token_frequencies: no stores given");
    std::vector<uint64_t> freqs(static_cast<size_t>(vocab_size), 0);
    for (const SentenceStore* store : stores) {
        for (const auto& sentence : store->sentences) {
            for (int32_t id : sentence) {
                CLX_CHECK(id >= 0 && id < vocab_size, "token id ", id,
                          " outside vocabulary of size ", vocab_size);
                ++freqs[static_cast<size_t>(id)];
            }
        }
    }
    return freqs;
}

}  // namespace crosslm
