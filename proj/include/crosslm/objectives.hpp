#pragma once

#include <cstdint>

#include "crosslm/rng.hpp"
#include "crosslm/sampling.hpp"
#include "crosslm/streams.hpp"

namespace crosslm {

// Per-batch corruption bookkeeping: selected = masked + randomized + kept.
struct CorruptionReport {
    uint64_t selected = 0;
    uint64_t masked = 0;
    uint64_t randomized = 0;
    uint64_t kept = 0;
    uint64_t rows_without_targets = 0;

    CorruptionReport& operator+=(const CorruptionReport& other);
};

// Corrupts one row in place. Eligible cells are non-pad, non-special
// positions; round(rate * eligible) of them are drawn without replacement
// with probability proportional to the subsample weight of the token they
// hold. A selected cell keeps its original token as target and the input
// becomes MASK (p=0.8), a uniform random non-special token (p=0.1), or
// stays unchanged (p=0.1).
CorruptionReport corrupt_row(Batch& batch, int32_t row,
                             const SubsampleWeights& weights, double rate,
                             int32_t vocab_size, Rng rng);

// MLM corruption over every row; per-row generators are derived from one
// base seed drawn from `rng`, so rows corrupt independently.
CorruptionReport apply_mlm(Batch& batch, const SubsampleWeights& weights,
                           double rate, int32_t vocab_size, Rng& rng);

// Same corruption applied jointly over both segments of a TLM batch;
// delimiters are ineligible like every special token.
CorruptionReport apply_tlm(Batch& batch, const SubsampleWeights& weights,
                           double rate, int32_t vocab_size, Rng& rng);

// Next-token targets: targets[b,t] = tokens[b,t+1], last column ignored.
void clm_targets(Batch& batch);

}  // namespace crosslm
