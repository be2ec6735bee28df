#include "crosslm/streams.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "crosslm/subword.hpp"

using namespace crosslm;

namespace {
// token ids >= kNumSpecials so nothing collides with specials
SentenceStore store_of(int32_t lang, std::vector<std::vector<int32_t>> sents) {
    return make_store(lang, std::move(sents));
}
}  // namespace

TEST_CASE("build_stream lays out sentences with EOS separators and wraps") {
    SentenceStore store = store_of(0, {{10, 11, 12}, {20, 21}});
    StreamCursor cursor;
    std::vector<int32_t> out;
    const auto epochs = build_stream(store, cursor, 8, out);
    // s1 + EOS + s2 + EOS + first token of s1 again
    CHECK(out == std::vector<int32_t>{10, 11, 12, kEos, 20, 21, kEos, 10});
    CHECK(epochs == 1);
    CHECK(cursor.epochs == 1);
}

TEST_CASE("a long sentence is cut and resumed, not dropped") {
    std::vector<int32_t> big(300);
    for (int i = 0; i < 300; ++i) big[static_cast<size_t>(i)] = 10 + i;
    SentenceStore store = store_of(0, {big});
    StreamCursor cursor;
    std::vector<int32_t> out;
    build_stream(store, cursor, 256, out);
    CHECK(out.front() == 10);
    CHECK(out.back() == 10 + 255);
    build_stream(store, cursor, 256, out);
    CHECK(out.front() == 10 + 256);  // resumes at token 256
}

TEST_CASE("consecutive streams cover the corpus without gap or overlap") {
    SentenceStore store = store_of(0, {{10, 11}, {12, 13, 14}, {15}});
    StreamCursor cursor;
    std::vector<int32_t> a, b;
    build_stream(store, cursor, 4, a);
    build_stream(store, cursor, 4, b);
    CHECK(a == std::vector<int32_t>{10, 11, kEos, 12});
    CHECK(b == std::vector<int32_t>{13, 14, kEos, 15});
}

TEST_CASE("next_mono_batch fills homogeneous full rows") {
    SentenceStore s0 = store_of(0, {{10, 11, 12}});
    SentenceStore s1 = store_of(1, {{20, 21}});
    std::vector<const SentenceStore*> stores = {&s0, &s1};
    std::vector<StreamCursor> cursors(2);
    const auto dist = language_probs({1, 1}, 0.7);
    Rng rng(3);
    Batch batch = next_mono_batch(stores, cursors, dist, Objective::MLM, 4, 6, rng);

    CHECK(batch.rows == 4);
    CHECK(batch.len == 6);
    CHECK(batch.attention_mode == AttentionMode::Bidirectional);
    const int32_t lang = batch.languages[0];
    for (int32_t b = 0; b < batch.rows; ++b)
        for (int32_t t = 0; t < batch.len; ++t) {
            const size_t i = batch.idx(b, t);
            CHECK(batch.languages[i] == lang);
            CHECK(batch.pad_mask[i] == 1);
            CHECK(batch.positions[i] == t);
        }
}

TEST_CASE("single language means every batch is that language") {
    SentenceStore s0 = store_of(0, {{10, 11, 12}});
    std::vector<const SentenceStore*> stores = {&s0};
    std::vector<StreamCursor> cursors(1);
    const auto dist = language_probs({1}, 0.7);
    Rng rng(9);
    for (int i = 0; i < 5; ++i) {
        Batch batch =
            next_mono_batch(stores, cursors, dist, Objective::CLM, 2, 4, rng);
        CHECK(batch.languages[0] == 0);
        CHECK(batch.attention_mode == AttentionMode::Causal);
    }
}

TEST_CASE("language choice follows the smoothed distribution") {
    SentenceStore s0 = store_of(0, {{10}});
    SentenceStore s1 = store_of(1, {{20}});
    std::vector<const SentenceStore*> stores = {&s0, &s1};
    std::vector<StreamCursor> cursors(2);
    const auto dist = language_probs({900, 100}, 0.5);  // [0.75, 0.25]
    Rng rng(41);
    int64_t lang0 = 0;
    const int64_t n = 10000;
    for (int64_t i = 0; i < n; ++i) {
        Batch batch = next_mono_batch(stores, cursors, dist, Objective::MLM, 1, 4, rng);
        if (batch.languages[0] == 0) ++lang0;
    }
    const double frac = static_cast<double>(lang0) / static_cast<double>(n);
    CHECK(frac > 0.73);
    CHECK(frac < 0.77);
}

TEST_CASE("TLM rows reset positions at the target segment") {
    ParallelStore pairs;
    pairs.src_language = 0;
    pairs.tgt_language = 1;
    pairs.pairs.push_back({{10, 11, 12}, {20, 21}});
    TlmBatcher batcher(pairs, 100, 512, 7);
    Batch batch = batcher.next();

    REQUIRE(batch.rows == 1);
    REQUIRE(batch.len == 9);  // 3+2 tokens + 4 delimiters
    const std::vector<int32_t> want_tokens = {kBos, 10, 11, 12, kEos,
                                              kBos, 20, 21, kEos};
    const std::vector<int32_t> want_positions = {0, 1, 2, 3, 4, 0, 1, 2, 3};
    const std::vector<int32_t> want_langs = {0, 0, 0, 0, 0, 1, 1, 1, 1};
    for (int32_t t = 0; t < batch.len; ++t) {
        CHECK(batch.tokens[batch.idx(0, t)] == want_tokens[t]);
        CHECK(batch.positions[batch.idx(0, t)] == want_positions[t]);
        CHECK(batch.languages[batch.idx(0, t)] == want_langs[t]);
        CHECK(batch.pad_mask[batch.idx(0, t)] == 1);
    }
    CHECK(batch.objective == Objective::TLM);
}

TEST_CASE("positions reset exactly once per TLM row") {
    ParallelStore pairs;
    pairs.src_language = 0;
    pairs.tgt_language = 1;
    Rng lens(5);
    for (int i = 0; i < 40; ++i) {
        std::vector<int32_t> src(1 + lens.uniform_int(12), 10);
        std::vector<int32_t> tgt(1 + lens.uniform_int(12), 20);
        pairs.pairs.push_back({src, tgt});
    }
    TlmBatcher batcher(pairs, 120, 512, 19);
    for (int iter = 0; iter < 10; ++iter) {
        Batch batch = batcher.next();
        for (int32_t b = 0; b < batch.rows; ++b) {
            int resets = 0;
            int32_t prev = -1;
            for (int32_t t = 0; t < batch.len; ++t) {
                if (!batch.pad_mask[batch.idx(b, t)]) break;
                const int32_t p = batch.positions[batch.idx(b, t)];
                if (t > 0 && p <= prev) {
                    ++resets;
                    CHECK(p == 0);
                }
                prev = p;
            }
            CHECK(resets == 1);
        }
    }
}

TEST_CASE("TLM bucketing groups similar lengths under the budget") {
    ParallelStore pairs;
    pairs.src_language = 0;
    pairs.tgt_language = 1;
    // row lengths (with delimiters): 6, 6, 24
    pairs.pairs.push_back({{10}, {11}});
    pairs.pairs.push_back({{12}, {13}});
    pairs.pairs.push_back({std::vector<int32_t>(10, 14), std::vector<int32_t>(10, 15)});
    TlmBatcher batcher(pairs, 13, 512, 3);

    CHECK(batcher.bucket_count() == 2);
    std::vector<int32_t> row_counts;
    for (int i = 0; i < 2; ++i) row_counts.push_back(batcher.next().rows);
    std::sort(row_counts.begin(), row_counts.end());
    // the two short pairs share a batch; the long pair is alone
    CHECK(row_counts == std::vector<int32_t>{1, 2});
}

TEST_CASE("non-pad cells stay within the token budget for multi-row batches") {
    ParallelStore pairs;
    pairs.src_language = 0;
    pairs.tgt_language = 1;
    Rng lens(13);
    for (int i = 0; i < 100; ++i) {
        std::vector<int32_t> src(1 + lens.uniform_int(20), 10);
        std::vector<int32_t> tgt(1 + lens.uniform_int(20), 20);
        pairs.pairs.push_back({src, tgt});
    }
    const int32_t budget = 96;
    TlmBatcher batcher(pairs, budget, 512, 5);
    for (size_t i = 0; i < batcher.bucket_count(); ++i) {
        Batch batch = batcher.next();
        int64_t non_pad = 0;
        for (uint8_t m : batch.pad_mask) non_pad += m;
        CHECK(non_pad <= budget);
    }
}

TEST_CASE("pairs longer than the row cap are skipped and counted") {
    ParallelStore pairs;
    pairs.src_language = 0;
    pairs.tgt_language = 1;
    pairs.pairs.push_back({{10}, {11}});
    pairs.pairs.push_back({std::vector<int32_t>(300, 10), std::vector<int32_t>(300, 20)});
    TlmBatcher batcher(pairs, 4000, 512, 3);
    CHECK(batcher.skipped_too_long() == 1);
}

TEST_CASE("an oversize single pair is batched alone") {
    ParallelStore pairs;
    pairs.src_language = 0;
    pairs.tgt_language = 1;
    pairs.pairs.push_back({{10}, {11}});  // row len 6
    pairs.pairs.push_back({std::vector<int32_t>(8, 10), std::vector<int32_t>(8, 20)});
    TlmBatcher batcher(pairs, 10, 512, 3);  // 20 > budget, still emitted alone
    REQUIRE(batcher.bucket_count() == 2);
    bool saw_single_oversize = false;
    for (int i = 0; i < 2; ++i) {
        Batch batch = batcher.next();
        if (batch.rows == 1 && batch.len == 20) saw_single_oversize = true;
    }
    CHECK(saw_single_oversize);
}

TEST_CASE("PAD cells carry position 0, the target language and pad_mask 0") {
    ParallelStore pairs;
    pairs.src_language = 3;
    pairs.tgt_language = 5;
    pairs.pairs.push_back({{10}, {11}});
    pairs.pairs.push_back({{10, 12}, {11, 13}});
    TlmBatcher batcher(pairs, 100, 512, 3);
    Batch batch = batcher.next();
    REQUIRE(batch.rows == 2);
    bool saw_pad = false;
    for (int32_t b = 0; b < batch.rows; ++b)
        for (int32_t t = 0; t < batch.len; ++t) {
            const size_t i = batch.idx(b, t);
            if (batch.pad_mask[i]) continue;
            saw_pad = true;
            CHECK(batch.tokens[i] == kPad);
            CHECK(batch.positions[i] == 0);
            CHECK(batch.languages[i] == 5);
            CHECK(batch.targets[i] == Batch::kIgnore);
        }
    CHECK(saw_pad);
}

TEST_CASE("batch production is bit-identical under a fixed seed") {
    SentenceStore s0 = store_of(0, {{10, 11, 12}, {13, 14}});
    SentenceStore s1 = store_of(1, {{20, 21}});
    const auto dist = language_probs({2, 1}, 0.7);
    auto run = [&]() {
        std::vector<const SentenceStore*> stores = {&s0, &s1};
        std::vector<StreamCursor> cursors(2);
        Rng rng(99);
        std::vector<Batch> batches;
        for (int i = 0; i < 10; ++i)
            batches.push_back(
                next_mono_batch(stores, cursors, dist, Objective::MLM, 3, 5, rng));
        return batches;
    };
    const auto a = run();
    const auto b = run();
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].tokens == b[i].tokens);
        CHECK(a[i].languages == b[i].languages);
    }
}

TEST_CASE("batch dump round-trips through the binary container") {
    ParallelStore pairs;
    pairs.src_language = 0;
    pairs.tgt_language = 1;
    pairs.pairs.push_back({{10, 11}, {12}});
    TlmBatcher batcher(pairs, 50, 512, 3);
    Batch batch = batcher.next();
    const auto path =
        (std::filesystem::temp_directory_path() / "clx_batch.bin").string();
    batch.save(path);
    Batch loaded = Batch::load(path);
    CHECK(loaded.rows == batch.rows);
    CHECK(loaded.len == batch.len);
    CHECK(loaded.tokens == batch.tokens);
    CHECK(loaded.positions == batch.positions);
    CHECK(loaded.languages == batch.languages);
    CHECK(loaded.targets == batch.targets);
    CHECK(loaded.pad_mask == batch.pad_mask);
    CHECK(loaded.objective == batch.objective);
    CHECK(loaded.attention_mode == batch.attention_mode);
    std::remove(path.c_str());
}
