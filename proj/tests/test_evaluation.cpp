#include "crosslm/evaluation.hpp"

#include <cmath>

#include "doctest.h"
#include "crosslm/subword.hpp"
#include "crosslm/training.hpp"

using namespace crosslm;

namespace {

ModelConfig eval_cfg(int32_t vocab, int32_t langs = 2) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.max_positions = 32;
    cfg.languages = langs;
    cfg.dropout = 0.0;
    return cfg;
}

// all-zero parameters force exactly uniform output logits
Model<float> uniform_model(int32_t vocab) {
    Rng rng(1);
    auto model = Model<float>::init(eval_cfg(vocab), rng);
    for (auto& [name, p] : model.parameters())
        for (auto& v : p->data()) v = 0.0f;
    return model;
}

SentenceStore random_store(int32_t lang, int32_t vocab, int n, int len, uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<int32_t>> sents;
    for (int i = 0; i < n; ++i) {
        std::vector<int32_t> s;
        for (int t = 0; t < len; ++t)
            s.push_back(kNumSpecials +
                        static_cast<int32_t>(rng.uniform_int(
                            static_cast<uint64_t>(vocab - kNumSpecials))));
        sents.push_back(std::move(s));
    }
    return make_store(lang, std::move(sents));
}

}  // namespace

TEST_CASE("uniform logits give perplexity equal to the vocabulary size") {
    const int32_t V = 50;
    auto model = uniform_model(V);
    SentenceStore heldout = random_store(0, V, 40, 20, 3);
    const double clm = perplexity(model, heldout, Objective::CLM, 16, 1);
    CHECK(clm == doctest::Approx(50.0).epsilon(0.01));
    const double mlm = perplexity(model, heldout, Objective::MLM, 16, 1);
    CHECK(mlm == doctest::Approx(50.0).epsilon(0.01));
}

TEST_CASE("perplexity is never below one") {
    const int32_t V = 20;
    Rng rng(5);
    auto model = Model<float>::init(eval_cfg(V), rng);
    SentenceStore heldout = random_store(0, V, 30, 10, 9);
    CHECK(perplexity(model, heldout, Objective::CLM, 16, 1) >= 1.0);
    CHECK(perplexity(model, heldout, Objective::MLM, 16, 1) >= 1.0);
}

TEST_CASE("MLM perplexity is identical across calls with the same seed") {
    const int32_t V = 30;
    Rng rng(6);
    auto model = Model<float>::init(eval_cfg(V), rng);
    SentenceStore heldout = random_store(0, V, 25, 12, 10);
    const double a = perplexity(model, heldout, Objective::MLM, 16, 42);
    const double b = perplexity(model, heldout, Objective::MLM, 16, 42);
    CHECK(a == b);
    const double c = perplexity(model, heldout, Objective::MLM, 16, 43);
    CHECK(a != c);
}

TEST_CASE("a memorizable corpus drives perplexity toward one") {
    LanguageSet langs;
    langs.add("a", 60);
    SentenceStore train =
        make_store(0, std::vector<std::vector<int32_t>>(60, {7, 8, 9}));
    SentenceStore heldout =
        make_store(0, std::vector<std::vector<int32_t>>(8, {7, 8, 9}));
    TrainPlan plan;
    plan.objective = PlanObjective::CLM;
    plan.max_steps = 400;
    plan.warmup = 20;
    plan.peak_lr = 2e-3;
    plan.eval_interval = 100;
    plan.patience = 50;
    plan.seed = 3;
    plan.batch_size = 8;
    plan.stream_len = 12;
    Rng rng(4);
    auto model = Model<float>::init(eval_cfg(16, 1), rng);
    Trainer trainer(plan, std::move(model), {&train}, {&heldout}, {}, langs);
    trainer.run();
    auto best = trainer.best_model();
    CHECK(perplexity(best, heldout, Objective::CLM, 12, 1) < 1.3);
}

TEST_CASE("alignment metrics on hand-built embeddings") {
    Vocabulary vocab = build_vocab(
        {{"xa", 5}, {"xb", 5}, {"ya", 5}, {"yb", 5}}, 0);
    Rng rng(7);
    auto model = Model<float>::init(eval_cfg(vocab.size()), rng);
    const int64_t d = model.cfg.dim;
    auto set_row = [&](const std::string& tok, float v0, float v1) {
        auto row = model.tok_emb.data().subspan(
            static_cast<size_t>(vocab.id(tok)) * d, static_cast<size_t>(d));
        for (auto& v : row) v = 0.0f;
        row[0] = v0;
        row[1] = v1;
    };

    SUBCASE("identical vectors: cosine 1, L2 0") {
        set_row("xa", 1.0f, 0.0f);
        set_row("ya", 1.0f, 0.0f);
        TranslationDictionary dict;
        dict.pairs = {{"xa", "ya"}};
        const auto report = alignment_metrics(model, vocab, dict);
        CHECK(report.mean_cosine == doctest::Approx(1.0));
        CHECK(report.mean_l2 == doctest::Approx(0.0));
        CHECK(report.pairs_used == 1);
    }
    SUBCASE("orthogonal unit vectors: cosine 0, L2 sqrt(2)") {
        set_row("xa", 1.0f, 0.0f);
        set_row("ya", 0.0f, 1.0f);
        TranslationDictionary dict;
        dict.pairs = {{"xa", "ya"}};
        const auto report = alignment_metrics(model, vocab, dict);
        CHECK(report.mean_cosine == doctest::Approx(0.0));
        CHECK(report.mean_l2 == doctest::Approx(std::sqrt(2.0)));
    }
    SUBCASE("reports are invariant to pair order and count skips") {
        set_row("xa", 1.0f, 0.0f);
        set_row("ya", 0.0f, 1.0f);
        set_row("xb", 1.0f, 1.0f);
        set_row("yb", 1.0f, 1.0f);
        TranslationDictionary d1, d2;
        d1.pairs = {{"xa", "ya"}, {"xb", "yb"}, {"zz", "ya"}};
        d2.pairs = {{"xb", "yb"}, {"zz", "ya"}, {"xa", "ya"}};
        const auto r1 = alignment_metrics(model, vocab, d1);
        const auto r2 = alignment_metrics(model, vocab, d2);
        CHECK(r1.mean_cosine == doctest::Approx(r2.mean_cosine));
        CHECK(r1.mean_l2 == doctest::Approx(r2.mean_l2));
        CHECK(r1.pairs_skipped == 1);
        CHECK(r1.pairs_used == 2);
    }
    SUBCASE("a dictionary with no usable pair is an error") {
        TranslationDictionary dict;
        dict.pairs = {{"zz", "qq"}};
        CHECK_THROWS(alignment_metrics(model, vocab, dict));
    }
}

TEST_CASE("pearson correlation behaves under affine maps") {
    const std::vector<double> x = {0.1, 0.4, 0.2, 0.9, 0.5};
    std::vector<double> y;
    SUBCASE("scaling by 2 keeps r = 1") {
        for (double v : x) y.push_back(2.0 * v);
        CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("negation gives r = -1") {
        for (double v : x) y.push_back(-v);
        CHECK(pearson(x, y) == doctest::Approx(-1.0).epsilon(1e-12));
    }
    SUBCASE("positive affine transforms leave r unchanged to 1e-9") {
        const std::vector<double> z = {0.3, 0.1, 0.8, 0.2, 0.7};
        const double base = pearson(x, z);
        for (double v : x) y.push_back(3.7 * v + 11.0);
        CHECK(std::fabs(pearson(y, z) - base) < 1e-9);
    }
    SUBCASE("zero variance is an error") {
        y.assign(x.size(), 2.0);
        CHECK_THROWS(pearson(x, y));
    }
}

TEST_CASE("word similarity correlates cosines with gold scores") {
    Vocabulary vocab = build_vocab({{"aa", 5}, {"bb", 5}, {"cc", 5}, {"dd", 5}}, 0);
    Rng rng(8);
    auto model = Model<float>::init(eval_cfg(vocab.size()), rng);
    const int64_t d = model.cfg.dim;
    auto set_angle = [&](const std::string& tok, double angle) {
        auto row = model.tok_emb.data().subspan(
            static_cast<size_t>(vocab.id(tok)) * d, static_cast<size_t>(d));
        for (auto& v : row) v = 0.0f;
        row[0] = static_cast<float>(std::cos(angle));
        row[1] = static_cast<float>(std::sin(angle));
    };
    set_angle("aa", 0.0);
    set_angle("bb", 0.3);
    set_angle("cc", 1.0);
    set_angle("dd", 2.0);

    WordSimilarityGold gold;
    // human scores = model cosines exactly halved -> r = 1
    for (const auto& [w1, w2] : std::vector<std::pair<std::string, std::string>>{
             {"aa", "bb"}, {"aa", "cc"}, {"aa", "dd"}, {"bb", "cc"}}) {
        const double angle_diff =
            std::fabs((w1 == "aa" ? 0.0 : (w1 == "bb" ? 0.3 : 1.0)) -
                      (w2 == "bb" ? 0.3 : (w2 == "cc" ? 1.0 : 2.0)));
        gold.triples.emplace_back(w1, w2, std::cos(angle_diff) / 2.0);
    }
    gold.triples.emplace_back("aa", "zz", 1.0);  // skipped, not in vocab
    const auto report = word_similarity(model, vocab, gold);
    CHECK(report.used == 4);
    CHECK(report.skipped == 1);
    CHECK(report.pearson_r == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("an untrained model classifies a balanced task at chance") {
    Rng rng(9);
    auto cfg = eval_cfg(30);
    cfg.classes = 2;
    auto model = Model<float>::init(cfg, rng);
    LabeledSet data;
    data.language = 0;
    data.label_names = {"neg", "pos"};
    Rng gen(10);
    for (int i = 0; i < 2000; ++i) {
        std::vector<int32_t> s;
        for (int t = 0; t < 8; ++t)
            s.push_back(kNumSpecials + static_cast<int32_t>(gen.uniform_int(25)));
        data.items.emplace_back(static_cast<int32_t>(i % 2), std::move(s));
    }
    const double acc = classification_accuracy(model, data, 16);
    CHECK(acc > 0.45);
    CHECK(acc < 0.55);
}

TEST_CASE("transfer to an identical language equals the source accuracy") {
    Rng rng(11);
    auto cfg = eval_cfg(40);
    cfg.dim = 16;
    auto model = Model<float>::init(cfg, rng);
    // the label is the first token's parity: perfectly learnable
    auto labeled = [&](uint64_t seed, int n) {
        LabeledSet set;
        set.language = 0;
        set.label_names = {"neg", "pos"};
        Rng gen(seed);
        for (int i = 0; i < n; ++i) {
            std::vector<int32_t> s;
            for (int t = 0; t < 6; ++t)
                s.push_back(kNumSpecials +
                            static_cast<int32_t>(gen.uniform_int(30)));
            set.items.emplace_back(s[0] % 2, std::move(s));
        }
        return set;
    };
    const LabeledSet train = labeled(1, 400);
    const LabeledSet test = labeled(2, 200);
    FinetunePlan plan;
    plan.steps = 400;
    plan.warmup = 20;
    plan.peak_lr = 3e-3;
    plan.batch_size = 16;
    plan.max_len = 10;
    plan.seed = 5;
    const auto result = zero_shot_transfer(model, train, test, test, plan);
    CHECK(result.other_lang_accuracy == result.train_lang_accuracy);
    CHECK(result.train_lang_accuracy > 0.85);
}

TEST_CASE("fine-tuning updates encoder parameters, not only the head") {
    Rng rng(12);
    auto model = Model<float>::init(eval_cfg(30), rng);
    const auto tok_before =
        std::vector<float>(model.tok_emb.data().begin(), model.tok_emb.data().end());
    LabeledSet train;
    train.language = 0;
    train.label_names = {"neg", "pos"};
    Rng gen(13);
    for (int i = 0; i < 64; ++i) {
        std::vector<int32_t> s;
        for (int t = 0; t < 6; ++t)
            s.push_back(kNumSpecials + static_cast<int32_t>(gen.uniform_int(20)));
        train.items.emplace_back(i % 2, std::move(s));
    }
    FinetunePlan plan;
    plan.steps = 5;
    plan.warmup = 1;
    plan.peak_lr = 1e-3;
    plan.batch_size = 8;
    plan.max_len = 10;
    plan.seed = 6;
    zero_shot_transfer(model, train, train, train, plan);
    bool moved = false;
    for (size_t i = 0; i < tok_before.size(); ++i)
        moved |= (model.tok_emb.data()[i] != tok_before[i]);
    CHECK(moved);
}

TEST_CASE("label sets must match across splits") {
    Rng rng(14);
    auto model = Model<float>::init(eval_cfg(30), rng);
    LabeledSet a, b;
    a.language = 0;
    a.label_names = {"neg", "pos"};
    a.items.emplace_back(0, std::vector<int32_t>{6, 7});
    b.language = 1;
    b.label_names = {"down", "up"};
    b.items.emplace_back(0, std::vector<int32_t>{6, 7});
    FinetunePlan plan;
    CHECK_THROWS(zero_shot_transfer(model, a, a, b, plan));
}
