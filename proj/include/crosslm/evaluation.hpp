#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crosslm/corpus.hpp"
#include "crosslm/model.hpp"
#include "crosslm/streams.hpp"
#include "crosslm/training.hpp"

namespace crosslm {

// CLM: exp(mean NLL) over every next-token target of the held-out streams.
// MLM: pseudo-perplexity over a fixed seeded 15% masked subset; the same
// seed always selects the same positions.
double perplexity(const Model<float>& model, const SentenceStore& heldout,
                  Objective objective, int32_t stream_len, uint64_t seed,
                  double mask_rate = 0.15);

struct TranslationDictionary {
    std::vector<std::pair<std::string, std::string>> pairs;

    // File format: "src<TAB>tgt" per line.
    static TranslationDictionary load(const std::string& path);
};

struct AlignmentReport {
    double mean_cosine = 0.0;
    double mean_l2 = 0.0;
    uint64_t pairs_used = 0;
    uint64_t pairs_skipped = 0;  // either side absent as a single vocab token
};

// Cosine and L2 between token-table rows of word translation pairs.
AlignmentReport alignment_metrics(const Model<float>& model, const Vocabulary& vocab,
                                  const TranslationDictionary& dict);

struct WordSimilarityGold {
    std::vector<std::tuple<std::string, std::string, double>> triples;

    // File format: "w1<TAB>w2<TAB>score" per line.
    static WordSimilarityGold load(const std::string& path);
};

struct WordSimilarityReport {
    double pearson_r = 0.0;
    uint64_t used = 0;
    uint64_t skipped = 0;
};

// Pearson correlation between model cosine similarities and human scores.
WordSimilarityReport word_similarity(const Model<float>& model,
                                     const Vocabulary& vocab,
                                     const WordSimilarityGold& gold);

// Labeled sentences for classification; labels are dense indices with the
// names recorded.
struct LabeledSet {
    int32_t language = 0;
    std::vector<std::string> label_names;  // sorted; index = label id
    std::vector<std::pair<int32_t, std::vector<int32_t>>> items;

    // File format: "label<TAB>sentence" per line.
    static LabeledSet load(const std::string& path, int32_t language,
                           const MergeTable& merges, const Vocabulary& vocab);
};

struct FinetunePlan {
    int64_t steps = 400;
    int64_t warmup = 40;
    double peak_lr = 1e-4;
    int32_t batch_size = 16;
    int32_t max_len = 64;
    double clip_norm = 5.0;
    uint64_t seed = 1;
};

struct TransferResult {
    double train_lang_accuracy = 0.0;  // held-out split of the tuning language
    double other_lang_accuracy = 0.0;  // zero-shot language
};

// Attaches a classifier head, fine-tunes every parameter on train_a, then
// reports accuracy on held-out A and on B (never seen labeled). The model
// is fine-tuned in place.
TransferResult zero_shot_transfer(Model<float>& model, const LabeledSet& train_a,
                                  const LabeledSet& test_a, const LabeledSet& test_b,
                                  const FinetunePlan& plan);

// Accuracy of an already fine-tuned model on one labeled set.
double classification_accuracy(const Model<float>& model, const LabeledSet& data,
                               int32_t max_len);

struct LowResourceResult {
    double low_alone = 0.0;
    double low_plus_distant = 0.0;
    double low_plus_related = 0.0;
    double low_plus_both = 0.0;
    std::vector<std::string> table_lines;
};

// Trains matched-size models on (low), (low+distant), (low+related) and
// (low+both) and evaluates perplexity on the low-resource held-out set.
LowResourceResult low_resource_ppl_experiment(
    const SentenceStore& low_train, const SentenceStore& low_heldout,
    const SentenceStore& related, const SentenceStore& distant,
    const ModelConfig& model_cfg, const TrainPlan& plan);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace crosslm
