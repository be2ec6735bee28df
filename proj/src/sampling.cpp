#include "crosslm/sampling.hpp"

#include <cmath>

#include "crosslm/common.hpp"
#include "crosslm/subword.hpp"

namespace crosslm {

LanguageDistribution language_probs(const std::vector<uint64_t>& sizes, double alpha) {
    CLX_CHECK(!sizes.empty(), "language_probs: no languages");
    CLX_CHECK(alpha > 0.0 && alpha <= 1.0, "language_probs: alpha ", alpha,
              " outside (0, 1]");
    uint64_t total = 0;
    for (uint64_t n : sizes) {
        CLX_CHECK(n >= 1, "language_probs: zero corpus size");
        total += n;
    }
    LanguageDistribution dist;
    dist.alpha = alpha;
    dist.q.resize(sizes.size());
    double norm = 0.0;
    for (size_t i = 0; i < sizes.size(); ++i) {
        const double p = static_cast<double>(sizes[i]) / static_cast<double>(total);
        dist.q[i] = std::pow(p, alpha);
        norm += dist.q[i];
    }
    for (double& qi : dist.q) qi /= norm;
    return dist;
}

int32_t sample_language(const LanguageDistribution& dist, Rng& rng) {
    return static_cast<int32_t>(rng.categorical(dist.q));
}

SubsampleWeights subsample_weights(const std::vector<uint64_t>& freqs) {
    CLX_CHECK(!freqs.empty(), "subsample_weights: empty frequency table");
    SubsampleWeights weights;
    weights.weight.resize(freqs.size(), 0.0);
    for (size_t id = 0; id < freqs.size(); ++id) {
        if (id < static_cast<size_t>(kNumSpecials)) continue;
        if (freqs[id] == 0) continue;
        weights.weight[id] = 1.0 / std::sqrt(static_cast<double>(freqs[id]));
    }
    return weights;
}

}  // namespace crosslm
