#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crosslm/corpus.hpp"
#include "crosslm/rng.hpp"
#include "crosslm/sampling.hpp"

namespace crosslm {

enum class Objective { CLM, MLM, TLM };
enum class AttentionMode { Causal, Bidirectional };

const char* objective_name(Objective o);

// One rectangular training step: token/position/language/target grids plus
// a pad mask, all [rows x len] row-major.
struct Batch {
    static constexpr int32_t kIgnore = -1;

    int32_t rows = 0;
    int32_t len = 0;
    AttentionMode attention_mode = AttentionMode::Bidirectional;
    Objective objective = Objective::MLM;
    std::vector<int32_t> tokens;
    std::vector<int32_t> positions;
    std::vector<int32_t> languages;
    std::vector<int32_t> targets;   // kIgnore where no supervision
    std::vector<uint8_t> pad_mask;  // 1 = real cell, 0 = padding

    Batch() = default;
    Batch(int32_t rows, int32_t len, Objective objective);

    size_t idx(int32_t b, int32_t t) const {
        return static_cast<size_t>(b) * static_cast<size_t>(len) +
               static_cast<size_t>(t);
    }
    int32_t& token(int32_t b, int32_t t) { return tokens[idx(b, t)]; }
    int32_t token(int32_t b, int32_t t) const { return tokens[idx(b, t)]; }

    // Debug dump: versioned binary container, header then the five grids.
    void save(const std::string& path) const;
    static Batch load(const std::string& path);
};

// Read position over the virtual sequence "sentence EOS sentence EOS ..."
// of one store; wraps at corpus end.
struct StreamCursor {
    size_t sentence = 0;
    size_t offset = 0;    // within sentence; == sentence length means EOS
    uint64_t epochs = 0;  // completed passes over the corpus
};

// Fills `out` with exactly `stream_len` consecutive tokens starting at the
// cursor, EOS between sentences, wrapping at corpus end. Returns the number
// of epoch boundaries crossed.
uint64_t build_stream(const SentenceStore& store, StreamCursor& cursor,
                      int32_t stream_len, std::vector<int32_t>& out);

// Samples one language from `dist` and fills every row with a stream of
// that language. Streams are always full, so the pad mask is all true.
Batch next_mono_batch(const std::vector<const SentenceStore*>& stores,
                      std::vector<StreamCursor>& cursors,
                      const LanguageDistribution& dist, Objective objective,
                      int32_t batch_size, int32_t stream_len, Rng& rng);

// Length-bucketed batches over a parallel store. Rows are
// [BOS src EOS BOS tgt EOS] with positions restarting at the target
// segment. Buckets are packed greedily from pairs sorted by row length
// under the token budget; bucket order is reshuffled every epoch from
// (seed, epoch), so the iteration state is just (epoch, position).
class TlmBatcher {
public:
    TlmBatcher(const ParallelStore& pairs, int32_t token_budget,
               int32_t max_row_len, uint64_t seed);

    Batch next();

    size_t bucket_count() const { return buckets_.size(); }
    uint64_t skipped_too_long() const { return skipped_; }
    uint64_t epoch() const { return epoch_; }
    size_t position() const { return position_; }
    void restore(uint64_t epoch, size_t position);

private:
    const ParallelStore* pairs_;
    int32_t token_budget_;
    std::vector<std::vector<size_t>> buckets_;  // pair indices per bucket
    std::vector<size_t> order_;                 // bucket visit order this epoch
    uint64_t seed_;
    uint64_t skipped_ = 0;
    uint64_t epoch_ = 0;
    size_t position_ = 0;

    void reshuffle();
};

// Full row length of a pair, delimiters included.
inline int32_t tlm_row_len(const std::vector<int32_t>& src,
                           const std::vector<int32_t>& tgt) {
    return static_cast<int32_t>(src.size() + tgt.size()) + 4;
}

}  // namespace crosslm
