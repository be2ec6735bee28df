#include "crosslm/objectives.hpp"

#include <cmath>
#include <vector>

#include "crosslm/common.hpp"
#include "crosslm/subword.hpp"

namespace crosslm {

CorruptionReport& CorruptionReport::operator+=(const CorruptionReport& other) {
    selected += other.selected;
    masked += other.masked;
    randomized += other.randomized;
    kept += other.kept;
    rows_without_targets += other.rows_without_targets;
    return *this;
}

CorruptionReport corrupt_row(Batch& batch, int32_t row,
                             const SubsampleWeights& weights, double rate,
                             int32_t vocab_size, Rng rng) {
    CLX_CHECK(rate >= 0.0 && rate <= 1.0, "corruption rate ", rate,
              " outside [0, 1]");
    CLX_CHECK(vocab_size > kNumSpecials, "vocabulary has no corpus tokens");

    std::vector<int32_t> eligible;
    for (int32_t t = 0; t < batch.len; ++t) {
        const size_t i = batch.idx(row, t);
        if (!batch.pad_mask[i]) continue;
        if (Vocabulary::is_special(batch.tokens[i])) continue;
        eligible.push_back(t);
    }

    CorruptionReport report;
    if (eligible.empty()) {
        report.rows_without_targets = 1;
        return report;
    }

    size_t want = static_cast<size_t>(
        std::llround(rate * static_cast<double>(eligible.size())));

    // Sequential weighted draws without replacement; zero-weight cells are
    // never selectable, which can cap the draw count below `want`.
    std::vector<double> w(eligible.size());
    double total = 0.0;
    for (size_t k = 0; k < eligible.size(); ++k) {
        w[k] = weights[batch.tokens[batch.idx(row, eligible[k])]];
        total += w[k];
    }
    std::vector<int32_t> picked;
    while (picked.size() < want && total > 0.0) {
        double u = rng.uniform() * total;
        double acc = 0.0;
        size_t chosen = eligible.size();
        for (size_t k = 0; k < eligible.size(); ++k) {
            if (w[k] <= 0.0) continue;
            acc += w[k];
            if (u < acc) {
                chosen = k;
                break;
            }
        }
        if (chosen == eligible.size()) {  // numeric edge: take last positive
            for (size_t k = eligible.size(); k-- > 0;) {
                if (w[k] > 0.0) {
                    chosen = k;
                    break;
                }
            }
        }
        if (chosen == eligible.size()) break;
        picked.push_back(eligible[chosen]);
        total -= w[chosen];
        w[chosen] = 0.0;
    }

    if (picked.empty()) {
        report.rows_without_targets = 1;
        return report;
    }

    for (int32_t t : picked) {
        const size_t i = batch.idx(row, t);
        batch.targets[i] = batch.tokens[i];
        ++report.selected;
        const double u = rng.uniform();
        if (u < 0.8) {
            batch.tokens[i] = kMask;
            ++report.masked;
        } else if (u < 0.9) {
            batch.tokens[i] = kNumSpecials + static_cast<int32_t>(rng.uniform_int(
                                  static_cast<uint64_t>(vocab_size - kNumSpecials)));
            ++report.randomized;
        } else {
            ++report.kept;
        }
    }
    return report;
}

namespace {
CorruptionReport corrupt_batch(Batch& batch, const SubsampleWeights& weights,
                               double rate, int32_t vocab_size, Rng& rng) {
    const uint64_t base = rng.next_u64();
    CorruptionReport report;
    for (int32_t b = 0; b < batch.rows; ++b) {
        report += corrupt_row(batch, b, weights, rate, vocab_size,
                              Rng(derive_seed(base, static_cast<uint64_t>(b))));
    }
    return report;
}
}  // namespace

CorruptionReport apply_mlm(Batch& batch, const SubsampleWeights& weights,
                           double rate, int32_t vocab_size, Rng& rng) {
    CLX_CHECK(batch.objective == Objective::MLM || batch.objective == Objective::TLM,
              "apply_mlm: batch objective must be MLM or TLM");
    return corrupt_batch(batch, weights, rate, vocab_size, rng);
}

CorruptionReport apply_tlm(Batch& batch, const SubsampleWeights& weights,
                           double rate, int32_t vocab_size, Rng& rng) {
    CLX_CHECK(batch.objective == Objective::TLM, "apply_tlm: not a TLM batch");
    return corrupt_batch(batch, weights, rate, vocab_size, rng);
}

void clm_targets(Batch& batch) {
    CLX_CHECK(batch.objective == Objective::CLM, "clm_targets: not a CLM batch");
    CLX_CHECK(batch.attention_mode == AttentionMode::Causal,
              "clm_targets: CLM batch must be causal");
    for (int32_t b = 0; b < batch.rows; ++b) {
        for (int32_t t = 0; t < batch.len; ++t) {
            const size_t i = batch.idx(b, t);
            if (t + 1 < batch.len && batch.pad_mask[i] &&
                batch.pad_mask[batch.idx(b, t + 1)]) {
                batch.targets[i] = batch.tokens[batch.idx(b, t + 1)];
            } else {
                batch.targets[i] = Batch::kIgnore;
            }
        }
    }
}

}  // namespace crosslm
