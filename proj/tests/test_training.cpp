#include "crosslm/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "crosslm/subword.hpp"

using namespace crosslm;

namespace {

std::string temp_file(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// tiny deterministic corpus: sentences "10 11 12" repeated
SentenceStore cycle_store(int32_t lang, int n_sentences) {
    std::vector<std::vector<int32_t>> sents(static_cast<size_t>(n_sentences),
                                            {10, 11, 12});
    return make_store(lang, std::move(sents));
}

ModelConfig tiny_cfg(int32_t vocab = 16) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.max_positions = 16;
    cfg.languages = 2;
    cfg.dropout = 0.1;
    return cfg;
}

TrainPlan tiny_plan(PlanObjective objective, int64_t steps) {
    TrainPlan plan;
    plan.objective = objective;
    plan.max_steps = steps;
    plan.warmup = 10;
    plan.peak_lr = 1e-3;
    plan.eval_interval = 50;
    plan.patience = 100;
    plan.seed = 7;
    plan.batch_size = 4;
    plan.stream_len = 12;
    plan.tlm_token_budget = 64;
    return plan;
}

}  // namespace

TEST_CASE("lr_at is linear to the peak then constant") {
    CHECK(lr_at(0, 100, 3e-4) == 0.0);
    CHECK(lr_at(100, 100, 3e-4) == doctest::Approx(3e-4));
    CHECK(lr_at(50, 100, 3e-4) == doctest::Approx(1.5e-4));
    CHECK(lr_at(200, 100, 3e-4) == doctest::Approx(3e-4));
}

TEST_CASE("adam first step moves by about lr against the gradient sign") {
    auto p = Tensor<float>::from({1}, {1.0f});
    p.set_requires_grad();
    p.grad()[0] = 2.0f;
    Adam adam({{"p", &p}});
    const auto res = adam.step(0.01, 0.0);
    CHECK(res.applied);
    CHECK(p.data()[0] == doctest::Approx(1.0f - 0.01f).epsilon(1e-6));
    CHECK(adam.steps_taken() == 1);
}

TEST_CASE("zero gradients leave parameters unchanged but advance t") {
    auto p = Tensor<float>::from({2}, {1.0f, -2.0f});
    p.set_requires_grad();
    p.ensure_grad();
    Adam adam({{"p", &p}});
    adam.step(0.01, 0.0);
    CHECK(p.data()[0] == 1.0f);
    CHECK(p.data()[1] == -2.0f);
    CHECK(adam.steps_taken() == 1);
}

TEST_CASE("equal gradients give equal updates") {
    auto p = Tensor<float>::from({2}, {0.0f, 5.0f});
    p.set_requires_grad();
    auto g = p.grad();
    g[0] = 0.7f;
    g[1] = 0.7f;
    Adam adam({{"p", &p}});
    adam.step(0.01, 0.0);
    CHECK(p.data()[0] - 0.0f == doctest::Approx(p.data()[1] - 5.0f));
}

TEST_CASE("a non-finite gradient aborts the step") {
    auto p = Tensor<float>::from({1}, {1.0f});
    p.set_requires_grad();
    p.grad()[0] = std::numeric_limits<float>::quiet_NaN();
    Adam adam({{"p", &p}});
    const auto res = adam.step(0.01, 0.0);
    CHECK_FALSE(res.applied);
    CHECK(p.data()[0] == 1.0f);
    CHECK(adam.steps_taken() == 0);
}

TEST_CASE("clipping preserves gradient direction") {
    auto p = Tensor<float>::from({2}, {0.0f, 0.0f});
    p.set_requires_grad();
    auto g = p.grad();
    g[0] = 30.0f;
    g[1] = 40.0f;  // norm 50
    Adam adam({{"p", &p}});
    const auto res = adam.step(0.01, 5.0);
    CHECK(res.grad_norm == doctest::Approx(50.0));
    // after clipping both coordinates shrink by the same factor, so the
    // first-step update direction equals sign(g) per coordinate
    CHECK(p.data()[0] < 0.0f);
    CHECK(p.data()[1] < 0.0f);
    const double ratio = static_cast<double>(p.data()[1]) / p.data()[0];
    CHECK(ratio == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("training on a deterministic cycle drives the loss down") {
    LanguageSet langs;
    langs.add("a", 50);
    SentenceStore train = cycle_store(0, 50);
    SentenceStore heldout = cycle_store(0, 8);
    Rng rng(5);
    auto model = Model<float>::init(tiny_cfg(), rng);
    auto plan = tiny_plan(PlanObjective::CLM, 400);
    plan.peak_lr = 3e-3;
    Trainer trainer(plan, std::move(model), {&train}, {&heldout}, {}, langs);
    TrainResult result = trainer.run();
    REQUIRE(result.losses.size() == 400);
    CHECK(result.losses.back() < result.losses.front());
    CHECK(result.losses.back() < 0.3f);
}

TEST_CASE("loss trajectory is bit-identical for a fixed seed") {
    LanguageSet langs;
    langs.add("a", 30);
    auto run = [&]() {
        SentenceStore train = cycle_store(0, 30);
        SentenceStore heldout = cycle_store(0, 4);
        Rng rng(5);
        auto model = Model<float>::init(tiny_cfg(), rng);
        Trainer trainer(tiny_plan(PlanObjective::MLM, 60), std::move(model),
                        {&train}, {&heldout}, {}, langs);
        return trainer.run().losses;
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("mlm+tlm alternates objectives and needs parallel data") {
    LanguageSet langs;
    langs.add("a", 30);
    langs.add("b", 30);
    SentenceStore train_a = cycle_store(0, 30);
    SentenceStore train_b = cycle_store(1, 30);
    SentenceStore held_a = cycle_store(0, 4);
    SentenceStore held_b = cycle_store(1, 4);
    Rng rng(6);
    auto model = Model<float>::init(tiny_cfg(), rng);
    CHECK_THROWS_WITH_AS(
        Trainer(tiny_plan(PlanObjective::MLM_TLM, 10), std::move(model),
                {&train_a, &train_b}, {&held_a, &held_b}, {}, langs),
        "mlm+tlm requires parallel data", std::runtime_error);

    ParallelStore pairs;
    pairs.src_language = 0;
    pairs.tgt_language = 1;
    for (int i = 0; i < 20; ++i) pairs.pairs.push_back({{10, 11}, {12, 11}});
    Rng rng2(6);
    auto model2 = Model<float>::init(tiny_cfg(), rng2);
    Trainer trainer(tiny_plan(PlanObjective::MLM_TLM, 20), std::move(model2),
                    {&train_a, &train_b}, {&held_a, &held_b}, {&pairs}, langs);
    const auto result = trainer.run();
    CHECK(result.losses.size() == 20);
}

TEST_CASE("checkpoint resume reproduces uninterrupted training bit-exactly") {
    LanguageSet langs;
    langs.add("a", 40);
    SentenceStore train = cycle_store(0, 40);
    SentenceStore heldout = cycle_store(0, 6);
    const auto plan = tiny_plan(PlanObjective::MLM, 80);

    // uninterrupted run
    Rng rng(9);
    auto model = Model<float>::init(tiny_cfg(), rng);
    Trainer full(plan, std::move(model), {&train}, {&heldout}, {}, langs);
    std::vector<float> full_losses;
    for (int i = 0; i < 80; ++i) full_losses.push_back(full.step_once().value());

    // run 50, save, resume, run 30 more
    Rng rng2(9);
    auto model2 = Model<float>::init(tiny_cfg(), rng2);
    Trainer half(plan, std::move(model2), {&train}, {&heldout}, {}, langs);
    std::vector<float> split_losses;
    for (int i = 0; i < 50; ++i) split_losses.push_back(half.step_once().value());
    const auto path = temp_file("clx_trainer.ckpt");
    half.save(path);
    Trainer resumed = Trainer::resume(path, {&train}, {&heldout}, {}, langs);
    CHECK(resumed.step() == 50);
    for (int i = 0; i < 30; ++i) split_losses.push_back(resumed.step_once().value());

    REQUIRE(split_losses.size() == full_losses.size());
    for (size_t i = 0; i < full_losses.size(); ++i)
        CHECK(split_losses[i] == full_losses[i]);
    std::remove(path.c_str());
}

TEST_CASE("a corrupted checkpoint byte is caught by the digest") {
    LanguageSet langs;
    langs.add("a", 20);
    SentenceStore train = cycle_store(0, 20);
    SentenceStore heldout = cycle_store(0, 4);
    Rng rng(10);
    auto model = Model<float>::init(tiny_cfg(), rng);
    Trainer trainer(tiny_plan(PlanObjective::MLM, 10), std::move(model), {&train},
                    {&heldout}, {}, langs);
    trainer.step_once();
    const auto path = temp_file("clx_corrupt.ckpt");
    trainer.save(path);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    char byte;
    f.seekg(100);
    f.read(&byte, 1);
    byte ^= 0x40;
    f.seekp(100);
    f.write(&byte, 1);
    f.close();

    try {
        Trainer::resume(path, {&train}, {&heldout}, {}, langs);
        FAIL("expected digest error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("digest") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("model-only checkpoints round trip") {
    Rng rng(11);
    auto model = Model<float>::init(tiny_cfg(), rng);
    const auto path = temp_file("clx_model.ckpt");
    save_model(model, path);
    auto loaded = load_model(path);
    CHECK(loaded.cfg.vocab_size == model.cfg.vocab_size);
    auto pa = model.parameters();
    auto pb = loaded.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].second->numel() == pb[i].second->numel());
        auto da = pa[i].second->data();
        auto db = pb[i].second->data();
        for (size_t j = 0; j < da.size(); ++j) CHECK(da[j] == db[j]);
    }
    std::remove(path.c_str());
}

TEST_CASE("best checkpoint tracking is monotone") {
    LanguageSet langs;
    langs.add("a", 40);
    SentenceStore train = cycle_store(0, 40);
    SentenceStore heldout = cycle_store(0, 6);
    auto plan = tiny_plan(PlanObjective::CLM, 200);
    plan.eval_interval = 20;
    Rng rng(12);
    auto model = Model<float>::init(tiny_cfg(), rng);
    Trainer trainer(plan, std::move(model), {&train}, {&heldout}, {}, langs);
    double last_best = std::numeric_limits<double>::infinity();
    while (trainer.step_once().has_value()) {
        if (trainer.result().best_step >= 0) {
            CHECK(trainer.result().best_avg_ppl <= last_best + 1e-12);
            last_best = trainer.result().best_avg_ppl;
        }
    }
}

TEST_CASE("loss is averaged per target, not per cell") {
    // two batches with different padding but identical targets see the
    // same scale of loss; checked indirectly through the CE contract
    auto logits = Tensor<float>::zeros({4, 8});
    const std::vector<int32_t> two = {1, 2, -1, -1};
    const std::vector<int32_t> four = {1, 2, 1, 2};
    const float a = softmax_cross_entropy<float>(nullptr, logits, two).item();
    const float b = softmax_cross_entropy<float>(nullptr, logits, four).item();
    CHECK(a == doctest::Approx(b));
}
