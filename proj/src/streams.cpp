#include "crosslm/streams.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "crosslm/common.hpp"
#include "crosslm/subword.hpp"

namespace crosslm {

const char* objective_name(Objective o) {
    switch (o) {
        case Objective::CLM: return "clm";
        case Objective::MLM: return "mlm";
        case Objective::TLM: return "tlm";
    }
    return "?";
}

Batch::Batch(int32_t rows_, int32_t len_, Objective objective_) {
    rows = rows_;
    len = len_;
    objective = objective_;
    attention_mode = objective == Objective::CLM ? AttentionMode::Causal
                                                 : AttentionMode::Bidirectional;
    const size_t n = static_cast<size_t>(rows) * static_cast<size_t>(len);
    tokens.assign(n, kPad);
    positions.assign(n, 0);
    languages.assign(n, 0);
    targets.assign(n, kIgnore);
    pad_mask.assign(n, 0);
}

namespace {
constexpr char kBatchMagic[4] = {'C', 'L', 'X', 'B'};
constexpr uint32_t kBatchVersion = 1;

template <class T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    CLX_CHECK(in.good(), "batch file truncated");
}
}  // namespace

void Batch::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    CLX_CHECK(out.good(), "cannot write batch file: ", path);
    out.write(kBatchMagic, 4);
    write_pod(out, kBatchVersion);
    write_pod(out, rows);
    write_pod(out, len);
    const int32_t obj = static_cast<int32_t>(objective);
    const int32_t mode = static_cast<int32_t>(attention_mode);
    write_pod(out, obj);
    write_pod(out, mode);
    const size_t n = tokens.size();
    out.write(reinterpret_cast<const char*>(tokens.data()), n * 4);
    out.write(reinterpret_cast<const char*>(positions.data()), n * 4);
    out.write(reinterpret_cast<const char*>(languages.data()), n * 4);
    out.write(reinterpret_cast<const char*>(targets.data()), n * 4);
    out.write(reinterpret_cast<const char*>(pad_mask.data()), n);
    CLX_CHECK(out.good(), "write failed: ", path);
}

Batch Batch::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read batch file: ", path);
    char magic[4];
    in.read(magic, 4);
    CLX_CHECK(in.good() && std::equal(magic, magic + 4, kBatchMagic),
              "not a batch file: ", path);
    uint32_t version;
    read_pod(in, version);
    CLX_CHECK(version == kBatchVersion, "batch file version ", version,
              " unsupported");
    int32_t rows, len, obj, mode;
    read_pod(in, rows);
    read_pod(in, len);
    read_pod(in, obj);
    read_pod(in, mode);
    Batch batch(rows, len, static_cast<Objective>(obj));
    batch.attention_mode = static_cast<AttentionMode>(mode);
    const size_t n = static_cast<size_t>(rows) * static_cast<size_t>(len);
    in.read(reinterpret_cast<char*>(batch.tokens.data()), n * 4);
    in.read(reinterpret_cast<char*>(batch.positions.data()), n * 4);
    in.read(reinterpret_cast<char*>(batch.languages.data()), n * 4);
    in.read(reinterpret_cast<char*>(batch.targets.data()), n * 4);
    in.read(reinterpret_cast<char*>(batch.pad_mask.data()), n);
    CLX_CHECK(in.good(), "batch file truncated: ", path);
    return batch;
}

uint64_t build_stream(const SentenceStore& store, StreamCursor& cursor,
                      int32_t stream_len, std::vector<int32_t>& out) {
    CLX_CHECK(!store.empty(), "build_stream: empty store");
    out.resize(static_cast<size_t>(stream_len));
    uint64_t epochs_crossed = 0;
    for (int32_t i = 0; i < stream_len; ++i) {
        const auto& sentence = store.sentences[cursor.sentence];
        if (cursor.offset < sentence.size()) {
            out[static_cast<size_t>(i)] = sentence[cursor.offset];
            ++cursor.offset;
        } else {
            out[static_cast<size_t>(i)] = kEos;
            cursor.offset = 0;
            ++cursor.sentence;
            if (cursor.sentence == store.sentences.size()) {
                cursor.sentence = 0;
                ++cursor.epochs;
                ++epochs_crossed;
            }
        }
    }
    return epochs_crossed;
}

Batch next_mono_batch(const std::vector<const SentenceStore*>& stores,
                      std::vector<StreamCursor>& cursors,
                      const LanguageDistribution& dist, Objective objective,
                      int32_t batch_size, int32_t stream_len, Rng& rng) {
    CLX_CHECK(!stores.empty(), "next_mono_batch: no stores");
    CLX_CHECK(stores.size() == cursors.size() && stores.size() == dist.q.size(),
              "next_mono_batch: stores/cursors/distribution size mismatch");
    CLX_CHECK(objective == Objective::CLM || objective == Objective::MLM,
              "next_mono_batch: objective must be CLM or MLM");

    const int32_t pick = sample_language(dist, rng);
    const SentenceStore& store = *stores[static_cast<size_t>(pick)];
    StreamCursor& cursor = cursors[static_cast<size_t>(pick)];

    Batch batch(batch_size, stream_len, objective);
    std::vector<int32_t> stream;
    for (int32_t b = 0; b < batch_size; ++b) {
        build_stream(store, cursor, stream_len, stream);
        for (int32_t t = 0; t < stream_len; ++t) {
            const size_t i = batch.idx(b, t);
            batch.tokens[i] = stream[static_cast<size_t>(t)];
            batch.positions[i] = t;
            batch.languages[i] = store.language;
            batch.pad_mask[i] = 1;
        }
    }
    return batch;
}

TlmBatcher::TlmBatcher(const ParallelStore& pairs, int32_t token_budget,
                       int32_t max_row_len, uint64_t seed)
    : pairs_(&pairs), token_budget_(token_budget), seed_(seed) {
    CLX_CHECK(!pairs.empty(), "TlmBatcher: empty parallel store");
    CLX_CHECK(token_budget >= 1, "TlmBatcher: token budget must be positive");

    std::vector<size_t> index;
    for (size_t i = 0; i < pairs.pairs.size(); ++i) {
        if (tlm_row_len(pairs.pairs[i].first, pairs.pairs[i].second) > max_row_len) {
            ++skipped_;
            continue;
        }
        index.push_back(i);
    }
    CLX_CHECK(!index.empty(), "TlmBatcher: every pair exceeds max row length ",
              max_row_len);
    std::stable_sort(index.begin(), index.end(), [&](size_t a, size_t b) {
        return tlm_row_len(pairs.pairs[a].first, pairs.pairs[a].second) <
               tlm_row_len(pairs.pairs[b].first, pairs.pairs[b].second);
    });

    // Greedy packing in sorted order; a bucket never goes over budget unless
    // it holds a single oversize pair.
    std::vector<size_t> bucket;
    int64_t used = 0;
    for (size_t i : index) {
        const int64_t row = tlm_row_len(pairs.pairs[i].first, pairs.pairs[i].second);
        if (!bucket.empty() && used + row > token_budget_) {
            buckets_.push_back(std::move(bucket));
            bucket.clear();
            used = 0;
        }
        bucket.push_back(i);
        used += row;
    }
    if (!bucket.empty()) buckets_.push_back(std::move(bucket));
    reshuffle();
}

void TlmBatcher::reshuffle() {
    order_.resize(buckets_.size());
    std::iota(order_.begin(), order_.end(), size_t{0});
    Rng rng(derive_seed(seed_, epoch_));
    rng.shuffle(std::span<size_t>(order_));
}

void TlmBatcher::restore(uint64_t epoch, size_t position) {
    CLX_CHECK(position <= buckets_.size(), "TlmBatcher: bad restore position");
    epoch_ = epoch;
    position_ = position;
    reshuffle();
}

Batch TlmBatcher::next() {
    if (position_ >= order_.size()) {
        position_ = 0;
        ++epoch_;
        reshuffle();
    }
    const auto& bucket = buckets_[order_[position_]];
    ++position_;

    int32_t max_len = 0;
    for (size_t i : bucket) {
        max_len = std::max(
            max_len, tlm_row_len(pairs_->pairs[i].first, pairs_->pairs[i].second));
    }

    Batch batch(static_cast<int32_t>(bucket.size()), max_len, Objective::TLM);
    for (size_t r = 0; r < bucket.size(); ++r) {
        const auto& [src, tgt] = pairs_->pairs[bucket[r]];
        const int32_t b = static_cast<int32_t>(r);
        int32_t t = 0;
        auto put = [&](int32_t token, int32_t position, int32_t language) {
            const size_t i = batch.idx(b, t);
            batch.tokens[i] = token;
            batch.positions[i] = position;
            batch.languages[i] = language;
            batch.pad_mask[i] = 1;
            ++t;
        };
        int32_t pos = 0;
        put(kBos, pos++, pairs_->src_language);
        for (int32_t id : src) put(id, pos++, pairs_->src_language);
        put(kEos, pos++, pairs_->src_language);
        pos = 0;  // target segment positions reset
        put(kBos, pos++, pairs_->tgt_language);
        for (int32_t id : tgt) put(id, pos++, pairs_->tgt_language);
        put(kEos, pos++, pairs_->tgt_language);
        // Remaining cells stay PAD with position 0; they carry the row's
        // target language id and pad_mask 0.
        for (; t < max_len; ++t)
            batch.languages[batch.idx(b, t)] = pairs_->tgt_language;
    }
    return batch;
}

}  // namespace crosslm
