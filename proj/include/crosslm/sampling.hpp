#pragma once

#include <cstdint>
#include <vector>

#include "crosslm/rng.hpp"

namespace crosslm {

// Smoothed multinomial over languages: q_i = p_i^alpha / sum_j p_j^alpha
// with p_i the corpus-size shares. alpha < 1 shifts mass toward
// low-resource languages.
struct LanguageDistribution {
    double alpha = 1.0;
    std::vector<double> q;
};

LanguageDistribution language_probs(const std::vector<uint64_t>& sizes, double alpha);

int32_t sample_language(const LanguageDistribution& dist, Rng& rng);

// Per-token-id selection weight, 1/sqrt(count) for corpus tokens and 0 for
// special tokens and tokens never seen.
struct SubsampleWeights {
    std::vector<double> weight;  // indexed by token id

    double operator[](int32_t id) const { return weight[static_cast<size_t>(id)]; }
    size_t size() const { return weight.size(); }
};

SubsampleWeights subsample_weights(const std::vector<uint64_t>& freqs);

}  // namespace crosslm
