#include "crosslm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "crosslm/common.hpp"
#include "crosslm/subword.hpp"
#include "crosslm/training.hpp"

namespace crosslm {

namespace {

// Held-out text as fixed-length rows: the virtual token sequence
// (sentence EOS sentence EOS ...) chunked once, last chunk padded.
std::vector<Batch> heldout_batches(const SentenceStore& store, Objective objective,
                                   int32_t stream_len, int32_t rows_per_batch) {
    std::vector<int32_t> flat;
    flat.reserve(store.total_tokens + store.sentences.size());
    for (const auto& s : store.sentences) {
        flat.insert(flat.end(), s.begin(), s.end());
        flat.push_back(kEos);
    }
    const size_t n_chunks =
        (flat.size() + static_cast<size_t>(stream_len) - 1) /
        static_cast<size_t>(stream_len);

    std::vector<Batch> batches;
    size_t chunk = 0;
    while (chunk < n_chunks) {
        const int32_t rows = static_cast<int32_t>(
            std::min<size_t>(rows_per_batch, n_chunks - chunk));
        Batch batch(rows, stream_len, objective);
        for (int32_t b = 0; b < rows; ++b) {
            const size_t base = (chunk + b) * static_cast<size_t>(stream_len);
            for (int32_t t = 0; t < stream_len; ++t) {
                const size_t src = base + static_cast<size_t>(t);
                const size_t i = batch.idx(b, t);
                if (src < flat.size()) {
                    batch.tokens[i] = flat[src];
                    batch.positions[i] = t;
                    batch.languages[i] = store.language;
                    batch.pad_mask[i] = 1;
                } else {
                    batch.languages[i] = store.language;
                }
            }
        }
        batches.push_back(std::move(batch));
        chunk += static_cast<size_t>(rows);
    }
    return batches;
}

// Sum of NLL and target count for one prepared batch.
std::pair<double, int64_t> batch_nll(const Model<float>& model, const Batch& batch) {
    std::vector<int32_t> target_rows, target_ids;
    for (size_t i = 0; i < batch.targets.size(); ++i) {
        if (batch.targets[i] == Batch::kIgnore) continue;
        target_rows.push_back(static_cast<int32_t>(i));
        target_ids.push_back(batch.targets[i]);
    }
    if (target_rows.empty()) return {0.0, 0};
    Tensor<float> hidden = model.forward(nullptr, batch);
    Tensor<float> picked = gather_rows<float>(nullptr, hidden, target_rows);
    Tensor<float> logits = model.lm_logits(nullptr, picked);
    const float mean = softmax_cross_entropy<float>(nullptr, logits, target_ids).item();
    return {static_cast<double>(mean) * static_cast<double>(target_ids.size()),
            static_cast<int64_t>(target_ids.size())};
}

}  // namespace

double perplexity(const Model<float>& model, const SentenceStore& heldout,
                  Objective objective, int32_t stream_len, uint64_t seed,
                  double mask_rate) {
    CLX_CHECK(!heldout.empty(), "perplexity: empty held-out store");
    CLX_CHECK(objective == Objective::CLM || objective == Objective::MLM,
              "perplexity: objective must be CLM or MLM");

    std::vector<Batch> batches =
        heldout_batches(heldout, objective, stream_len, 32);
    double total_nll = 0.0;
    int64_t total_targets = 0;
    Rng mask_rng(derive_seed(seed, 0x5EED));  // fixed mask per (store, seed)

    for (Batch& batch : batches) {
        if (objective == Objective::CLM) {
            clm_targets(batch);
        } else {
            // pseudo-perplexity mask: a seeded `mask_rate` subset of the
            // eligible cells, every selected input replaced by MASK
            for (int32_t b = 0; b < batch.rows; ++b) {
                std::vector<int32_t> eligible;
                for (int32_t t = 0; t < batch.len; ++t) {
                    const size_t i = batch.idx(b, t);
                    if (!batch.pad_mask[i]) continue;
                    if (Vocabulary::is_special(batch.tokens[i])) continue;
                    eligible.push_back(t);
                }
                const size_t want = static_cast<size_t>(std::llround(
                    mask_rate * static_cast<double>(eligible.size())));
                // partial Fisher-Yates: first `want` entries form the draw
                for (size_t k = 0; k < want; ++k) {
                    const size_t j =
                        k + static_cast<size_t>(mask_rng.uniform_int(
                                static_cast<uint64_t>(eligible.size() - k)));
                    std::swap(eligible[k], eligible[j]);
                    const size_t i = batch.idx(b, eligible[k]);
                    batch.targets[i] = batch.tokens[i];
                    batch.tokens[i] = kMask;
                }
            }
        }
        auto [nll, count] = batch_nll(model, batch);
        total_nll += nll;
        total_targets += count;
    }
    CLX_CHECK(total_targets > 0, "perplexity: no targets in held-out data");
    return std::exp(total_nll / static_cast<double>(total_targets));
}

TranslationDictionary TranslationDictionary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read dictionary: ", path);
    TranslationDictionary dict;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        CLX_CHECK(tab != std::string::npos, "dictionary ", path, " line ", lineno,
                  ": expected 'src<TAB>tgt'");
        dict.pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    CLX_CHECK(!dict.pairs.empty(), "dictionary ", path, " is empty");
    return dict;
}

namespace {
double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

std::span<const float> embedding_row(const Model<float>& model, int32_t id) {
    const int64_t d = model.cfg.dim;
    return model.tok_emb.data().subspan(static_cast<size_t>(id) * d,
                                        static_cast<size_t>(d));
}

double cosine(std::span<const float> a, std::span<const float> b) {
    const double na = std::sqrt(dot(a, a));
    const double nb = std::sqrt(dot(b, b));
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}
}  // namespace

AlignmentReport alignment_metrics(const Model<float>& model, const Vocabulary& vocab,
                                  const TranslationDictionary& dict) {
    AlignmentReport report;
    double cos_sum = 0.0, l2_sum = 0.0;
    for (const auto& [src, tgt] : dict.pairs) {
        // multi-token words are skipped: only single vocabulary entries count
        if (!vocab.contains(src) || !vocab.contains(tgt)) {
            ++report.pairs_skipped;
            continue;
        }
        const auto a = embedding_row(model, vocab.id(src));
        const auto b = embedding_row(model, vocab.id(tgt));
        cos_sum += cosine(a, b);
        double d2 = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
            d2 += diff * diff;
        }
        l2_sum += std::sqrt(d2);
        ++report.pairs_used;
    }
    CLX_CHECK(report.pairs_used > 0, "alignment: no dictionary pair usable");
    report.mean_cosine = cos_sum / static_cast<double>(report.pairs_used);
    report.mean_l2 = l2_sum / static_cast<double>(report.pairs_used);
    return report;
}

WordSimilarityGold WordSimilarityGold::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read word-similarity file: ", path);
    WordSimilarityGold gold;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos
                                                : line.find('\t', t1 + 1);
        CLX_CHECK(t1 != std::string::npos && t2 != std::string::npos,
                  "word-similarity ", path, " line ", lineno,
                  ": expected 'w1<TAB>w2<TAB>score'");
        gold.triples.emplace_back(line.substr(0, t1),
                                  line.substr(t1 + 1, t2 - t1 - 1),
                                  std::stod(line.substr(t2 + 1)));
    }
    return gold;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    CLX_CHECK(a.size() == b.size() && a.size() >= 2,
              "pearson: needs two equal-length series of length >= 2");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    CLX_CHECK(va > 0.0 && vb > 0.0, "pearson: zero variance in a series");
    return cov / std::sqrt(va * vb);
}

WordSimilarityReport word_similarity(const Model<float>& model,
                                     const Vocabulary& vocab,
                                     const WordSimilarityGold& gold) {
    std::vector<double> model_scores, human_scores;
    WordSimilarityReport report;
    for (const auto& [w1, w2, score] : gold.triples) {
        if (!vocab.contains(w1) || !vocab.contains(w2)) {
            ++report.skipped;
            continue;
        }
        model_scores.push_back(cosine(embedding_row(model, vocab.id(w1)),
                                      embedding_row(model, vocab.id(w2))));
        human_scores.push_back(score);
    }
    CLX_CHECK(model_scores.size() >= 2, "word_similarity: fewer than 2 usable triples");
    report.used = model_scores.size();
    report.pearson_r = pearson(model_scores, human_scores);
    return report;
}

LabeledSet LabeledSet::load(const std::string& path, int32_t language,
                            const MergeTable& merges, const Vocabulary& vocab) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read labeled file: ", path);
    LabeledSet set;
    set.language = language;
    std::vector<std::pair<std::string, std::vector<int32_t>>> raw;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        CLX_CHECK(tab != std::string::npos, "labeled file ", path, " line ", lineno,
                  ": expected 'label<TAB>sentence'");
        auto ids = encode_sentence(line.substr(tab + 1), merges, vocab);
        CLX_CHECK(!ids.empty(), "labeled file ", path, " line ", lineno,
                  ": empty sentence");
        raw.emplace_back(line.substr(0, tab), std::move(ids));
    }
    CLX_CHECK(!raw.empty(), "labeled file ", path, " is empty");
    for (const auto& [label, ids] : raw)
        if (std::find(set.label_names.begin(), set.label_names.end(), label) ==
            set.label_names.end())
            set.label_names.push_back(label);
    std::sort(set.label_names.begin(), set.label_names.end());
    for (auto& [label, ids] : raw) {
        const auto it =
            std::find(set.label_names.begin(), set.label_names.end(), label);
        set.items.emplace_back(
            static_cast<int32_t>(it - set.label_names.begin()), std::move(ids));
    }
    return set;
}

namespace {

// Classification row: [BOS sentence EOS], truncated, padded to max_len.
Batch classification_batch(const std::vector<const std::vector<int32_t>*>& sentences,
                           int32_t language, int32_t max_len) {
    Batch batch(static_cast<int32_t>(sentences.size()), max_len, Objective::MLM);
    for (size_t b = 0; b < sentences.size(); ++b) {
        const auto& s = *sentences[b];
        std::vector<int32_t> row;
        row.push_back(kBos);
        for (int32_t id : s) {
            if (static_cast<int32_t>(row.size()) >= max_len - 1) break;
            row.push_back(id);
        }
        row.push_back(kEos);
        for (size_t t = 0; t < row.size(); ++t) {
            const size_t i = batch.idx(static_cast<int32_t>(b),
                                       static_cast<int32_t>(t));
            batch.tokens[i] = row[t];
            batch.positions[i] = static_cast<int32_t>(t);
            batch.languages[i] = language;
            batch.pad_mask[i] = 1;
        }
        for (size_t t = row.size(); t < static_cast<size_t>(max_len); ++t)
            batch.languages[batch.idx(static_cast<int32_t>(b),
                                      static_cast<int32_t>(t))] = language;
    }
    return batch;
}

}  // namespace

double classification_accuracy(const Model<float>& model, const LabeledSet& data,
                               int32_t max_len) {
    CLX_CHECK(model.has_classifier(), "accuracy: model has no classifier head");
    int64_t correct = 0;
    const int32_t chunk = 64;
    for (size_t start = 0; start < data.items.size(); start += chunk) {
        const size_t end = std::min(data.items.size(), start + chunk);
        std::vector<const std::vector<int32_t>*> sentences;
        for (size_t i = start; i < end; ++i) sentences.push_back(&data.items[i].second);
        Batch batch = classification_batch(sentences, data.language, max_len);
        Tensor<float> hidden = model.forward(nullptr, batch);
        Tensor<float> rep = model.sentence_representation(nullptr, hidden,
                                                          batch.rows, batch.len);
        Tensor<float> logits = model.classify(nullptr, rep);
        const auto lv = logits.data();
        const int64_t classes = logits.cols();
        for (size_t i = start; i < end; ++i) {
            const float* row = lv.data() + (i - start) * classes;
            int32_t arg = 0;
            for (int64_t c = 1; c < classes; ++c)
                if (row[c] > row[arg]) arg = static_cast<int32_t>(c);
            if (arg == data.items[i].first) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.items.size());
}

TransferResult zero_shot_transfer(Model<float>& model, const LabeledSet& train_a,
                                  const LabeledSet& test_a, const LabeledSet& test_b,
                                  const FinetunePlan& plan) {
    CLX_CHECK(train_a.label_names == test_a.label_names &&
                  train_a.label_names == test_b.label_names,
              "zero_shot_transfer: label sets differ across splits");
    const int32_t classes = static_cast<int32_t>(train_a.label_names.size());
    CLX_CHECK(classes >= 2, "zero_shot_transfer: need at least two classes");

    Rng rng(derive_seed(plan.seed, 0xF1));
    Rng dropout_rng(derive_seed(plan.seed, 0xF2));
    model.attach_classifier(classes, rng);
    Adam adam(model.parameters());

    std::vector<size_t> order(train_a.items.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size();  // reshuffle on first use

    for (int64_t step = 1; step <= plan.steps; ++step) {
        std::vector<const std::vector<int32_t>*> sentences;
        std::vector<int32_t> labels;
        for (int32_t k = 0; k < plan.batch_size; ++k) {
            if (cursor == order.size()) {
                rng.shuffle(std::span<size_t>(order));
                cursor = 0;
            }
            const auto& item = train_a.items[order[cursor++]];
            sentences.push_back(&item.second);
            labels.push_back(item.first);
        }
        Batch batch = classification_batch(sentences, train_a.language, plan.max_len);
        Tape<float> tape;
        Tensor<float> hidden = model.forward(&tape, batch, true, &dropout_rng);
        Tensor<float> rep = model.sentence_representation(&tape, hidden,
                                                          batch.rows, batch.len);
        Tensor<float> logits = model.classify(&tape, rep);
        Tensor<float> loss = softmax_cross_entropy(&tape, logits, labels);
        if (!std::isfinite(loss.item())) break;
        tape.backward(loss);
        adam.step(lr_at(step, plan.warmup, plan.peak_lr), plan.clip_norm);
    }

    TransferResult result;
    result.train_lang_accuracy = classification_accuracy(model, test_a, plan.max_len);
    result.other_lang_accuracy = classification_accuracy(model, test_b, plan.max_len);
    return result;
}

LowResourceResult low_resource_ppl_experiment(
    const SentenceStore& low_train, const SentenceStore& low_heldout,
    const SentenceStore& related, const SentenceStore& distant,
    const ModelConfig& model_cfg, const TrainPlan& plan) {
    CLX_CHECK(!related.empty() && !distant.empty(),
              "low_resource experiment: helper store empty");
    CLX_CHECK(plan.objective == PlanObjective::CLM,
              "low_resource experiment: perplexity rows use the CLM objective");

    LanguageSet languages;
    languages.add("low", low_train.sentences.size());
    languages.add("related", related.sentences.size());
    languages.add("distant", distant.sentences.size());

    auto run = [&](std::vector<const SentenceStore*> stores) {
        Rng init_rng(derive_seed(plan.seed, 0xA11));
        Model<float> model = Model<float>::init(model_cfg, init_rng);
        std::vector<const SentenceStore*> heldout(stores.size(), &low_heldout);
        Trainer trainer(plan, std::move(model), stores, heldout, {}, languages);
        trainer.run();
        Model<float> best = trainer.best_model();
        return perplexity(best, low_heldout, Objective::CLM, plan.stream_len,
                          plan.seed);
    };

    LowResourceResult result;
    result.low_alone = run({&low_train});
    result.low_plus_distant = run({&low_train, &distant});
    result.low_plus_related = run({&low_train, &related});
    result.low_plus_both = run({&low_train, &related, &distant});
    result.table_lines = {
        str("low_alone ppl=", result.low_alone),
        str("low+distant ppl=", result.low_plus_distant),
        str("low+related ppl=", result.low_plus_related),
        str("low+both ppl=", result.low_plus_both),
    };
    return result;
}

}  // namespace crosslm
