#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crosslm/config.hpp"
#include "crosslm/corpus.hpp"
#include "crosslm/evaluation.hpp"
#include "crosslm/model.hpp"
#include "crosslm/rng.hpp"
#include "crosslm/sampling.hpp"
#include "crosslm/subword.hpp"
#include "crosslm/synthetic.hpp"
#include "crosslm/training.hpp"

namespace {

using namespace crosslm;

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read file: ", path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

void write_all(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    CLX_CHECK(out.good(), "cannot write file: ", path);
    for (const auto& l : lines) out << l << '\n';
}

// "name=path" pairs from repeated flags.
std::pair<std::string, std::string> split_kv(const std::string& arg,
                                             const char* what) {
    const auto eq = arg.find('=');
    CLX_CHECK(eq != std::string::npos && eq > 0 && eq + 1 < arg.size(),
              "bad ", what, " '", arg, "': expected name=path");
    return {arg.substr(0, eq), arg.substr(eq + 1)};
}

// alpha-smoothed multilingual sentence sample used for BPE learning
std::vector<std::string> bpe_sample(const std::vector<std::vector<std::string>>& corpora,
                                    double alpha, size_t sample_size, Rng& rng) {
    std::vector<uint64_t> sizes;
    for (const auto& c : corpora) {
        CLX_CHECK(!c.empty(), "learn-bpe: a corpus file has no sentences");
        sizes.push_back(c.size());
    }
    const LanguageDistribution dist = language_probs(sizes, alpha);
    std::vector<std::string> sample;
    sample.reserve(sample_size);
    for (size_t i = 0; i < sample_size; ++i) {
        const auto lang = static_cast<size_t>(sample_language(dist, rng));
        sample.push_back(
            corpora[lang][rng.uniform_int(corpora[lang].size())]);
    }
    return sample;
}

ModelConfig model_config_from(const RunConfig& cfg, int32_t vocab_size,
                              int32_t languages) {
    ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.dim = static_cast<int32_t>(cfg.get_int("dim"));
    mc.heads = static_cast<int32_t>(cfg.get_int("heads"));
    mc.layers = static_cast<int32_t>(cfg.get_int("layers"));
    mc.max_positions = static_cast<int32_t>(cfg.get_int("max_positions"));
    mc.languages = languages;
    mc.dropout = cfg.get_double("dropout");
    return mc;
}

TrainPlan plan_from(const RunConfig& cfg, PlanObjective objective) {
    TrainPlan plan;
    plan.objective = objective;
    plan.max_steps = cfg.get_int("max_steps");
    plan.warmup = cfg.get_int("warmup");
    plan.peak_lr = cfg.get_double("lr");
    plan.eval_interval = cfg.get_int("eval_interval");
    plan.patience = cfg.get_int("patience");
    plan.seed = cfg.get_u64("seed");
    plan.batch_size = static_cast<int32_t>(cfg.get_int("batch_size"));
    plan.stream_len = static_cast<int32_t>(cfg.get_int("stream_len"));
    plan.tlm_token_budget = static_cast<int32_t>(cfg.get_int("tlm_token_budget"));
    plan.tlm_max_row = static_cast<int32_t>(cfg.get_int("tlm_max_row"));
    plan.mlm_rate = cfg.get_double("mlm_rate");
    plan.clip_norm = cfg.get_double("clip_norm");
    plan.alpha_train = cfg.get_double("alpha_train");
    return plan;
}

// Tail split for languages without an explicit held-out file.
void split_heldout(SentenceStore& train, SentenceStore& heldout) {
    const size_t n = train.sentences.size();
    const size_t take = std::max<size_t>(1, n / 20);
    CLX_CHECK(n > take, "corpus too small to split a held-out set");
    heldout.language = train.language;
    for (size_t i = n - take; i < n; ++i) {
        heldout.total_tokens += train.sentences[i].size();
        heldout.sentences.push_back(std::move(train.sentences[i]));
    }
    train.sentences.resize(n - take);
    train.total_tokens -= heldout.total_tokens;
}

int cmd_learn_bpe(const RunConfig& cfg, const std::vector<std::string>& inputs,
                  const std::string& output) {
    std::vector<std::vector<std::string>> corpora;
    for (const auto& path : inputs) {
        std::vector<std::string> lines;
        for (auto& l : read_lines(path))
            if (!split_words(l).empty()) lines.push_back(l);
        corpora.push_back(std::move(lines));
    }
    Rng rng(derive_seed(cfg.get_u64("seed"), 0xB9E));
    const auto sample =
        bpe_sample(corpora, cfg.get_double("alpha_bpe"),
                   static_cast<size_t>(cfg.get_int("bpe_sample_size")), rng);
    MergeTable merges =
        learn_bpe(sample, static_cast<size_t>(cfg.get_int("num_merges")));
    merges.save(output);
    std::cout << "merges=" << merges.size() << " codes=" << output << "\n";
    return 0;
}

int cmd_apply_bpe(const std::string& codes, const std::string& input,
                  const std::string& output) {
    const MergeTable merges = MergeTable::load(codes);
    std::vector<std::string> out;
    for (const auto& line : read_lines(input)) {
        const auto pieces = apply_bpe(line, merges);
        std::string joined;
        for (size_t i = 0; i < pieces.size(); ++i) {
            if (i) joined += ' ';
            joined += pieces[i];
        }
        out.push_back(joined);
    }
    write_all(output, out);
    return 0;
}

int cmd_build_vocab(const RunConfig& cfg, const std::string& codes,
                    const std::vector<std::string>& inputs,
                    const std::string& output) {
    const MergeTable merges = MergeTable::load(codes);
    std::unordered_map<std::string, uint64_t> counts;
    for (const auto& path : inputs)
        for (const auto& line : read_lines(path))
            for (const auto& piece : apply_bpe(line, merges)) ++counts[piece];
    Vocabulary vocab =
        build_vocab(counts, static_cast<uint64_t>(cfg.get_int("min_count")));
    vocab.save(output);
    std::cout << "vocab_size=" << vocab.size() << " vocab=" << output << "\n";
    return 0;
}

struct TrainInputs {
    std::vector<std::string> mono;      // name=path
    std::vector<std::string> heldout;   // name=path
    std::vector<std::string> parallel;  // a,b=src,tgt
};

int cmd_train(const RunConfig& cfg, const std::string& codes_path,
              const std::string& vocab_path, const TrainInputs& in,
              const std::string& objective, const std::string& model_out,
              const std::string& trainer_out, const std::string& metrics_out) {
    const MergeTable merges = MergeTable::load(codes_path);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const PlanObjective plan_objective = parse_plan_objective(objective);
    CLX_CHECK(plan_objective != PlanObjective::MLM_TLM || !in.parallel.empty(),
              "mlm+tlm requires parallel data");
    CLX_CHECK(!in.mono.empty(), "train: at least one --mono language=path needed");

    LanguageSet languages;
    std::vector<SentenceStore> train_stores;
    std::map<std::string, std::string> heldout_paths;
    for (const auto& h : in.heldout) {
        const auto [name, path] = split_kv(h, "--heldout");
        heldout_paths[name] = path;
    }

    std::vector<SentenceStore> heldout_stores;
    for (const auto& m : in.mono) {
        const auto [name, path] = split_kv(m, "--mono");
        const int32_t id = languages.add(name, 1);
        SentenceStore store = load_monolingual(path, id, merges, vocab);
        CLX_CHECK(!store.empty(), "train: corpus ", path, " is empty");
        SentenceStore heldout;
        if (heldout_paths.count(name)) {
            heldout = load_monolingual(heldout_paths[name], id, merges, vocab);
            CLX_CHECK(!heldout.empty(), "train: held-out corpus for ", name,
                      " is empty");
        } else {
            split_heldout(store, heldout);
        }
        languages.set_sentence_count(id, store.sentences.size());
        train_stores.push_back(std::move(store));
        heldout_stores.push_back(std::move(heldout));
    }

    std::vector<ParallelStore> pair_stores;
    for (const auto& p : in.parallel) {
        const auto eq = p.find('=');
        CLX_CHECK(eq != std::string::npos, "bad --parallel '", p,
                  "': expected a,b=src_path,tgt_path");
        const std::string names = p.substr(0, eq);
        const std::string paths = p.substr(eq + 1);
        const auto nc = names.find(',');
        const auto pc = paths.find(',');
        CLX_CHECK(nc != std::string::npos && pc != std::string::npos,
                  "bad --parallel '", p, "': expected a,b=src_path,tgt_path");
        const int32_t src = languages.id_of(names.substr(0, nc));
        const int32_t tgt = languages.id_of(names.substr(nc + 1));
        CLX_CHECK(src >= 0 && tgt >= 0, "--parallel names must match --mono names");
        pair_stores.push_back(load_parallel(paths.substr(0, pc), paths.substr(pc + 1),
                                            src, tgt, merges, vocab));
    }

    const ModelConfig mc = model_config_from(cfg, vocab.size(), languages.size());
    Rng init_rng(derive_seed(cfg.get_u64("seed"), 0xDECADE));
    Model<float> model = Model<float>::init(mc, init_rng);

    std::vector<const SentenceStore*> stores, heldout;
    for (auto& s : train_stores) stores.push_back(&s);
    for (auto& s : heldout_stores) heldout.push_back(&s);
    std::vector<const ParallelStore*> pairs;
    for (auto& p : pair_stores) pairs.push_back(&p);

    Trainer trainer(plan_from(cfg, plan_objective), std::move(model), stores,
                    heldout, pairs, languages);
    TrainResult result = trainer.run();

    Model<float> best = trainer.best_model();
    save_model(best, model_out);
    if (!trainer_out.empty()) trainer.save(trainer_out);
    if (!metrics_out.empty()) write_all(metrics_out, result.log_lines);
    for (const auto& line : result.log_lines) std::cout << line << "\n";
    std::cout << "steps=" << trainer.step() << " best_step=" << result.best_step
              << " best_avg_ppl=" << result.best_avg_ppl << " model=" << model_out
              << "\n";
    return 0;
}

int cmd_eval_ppl(const RunConfig& cfg, const std::string& model_path,
                 const std::string& codes, const std::string& vocab_path,
                 const std::string& input, int32_t language_id,
                 const std::string& objective) {
    const Model<float> model = load_model(model_path);
    const MergeTable merges = MergeTable::load(codes);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    CLX_CHECK(language_id >= 0 && language_id < model.cfg.languages,
              "language id ", language_id, " outside model's ",
              model.cfg.languages, " languages");
    const SentenceStore store = load_monolingual(input, language_id, merges, vocab);
    CLX_CHECK(!store.empty(), "eval-ppl: corpus is empty");
    const Objective obj =
        objective == "clm" ? Objective::CLM : Objective::MLM;
    const double ppl =
        perplexity(model, store, obj,
                   static_cast<int32_t>(cfg.get_int("stream_len")),
                   cfg.get_u64("seed"), cfg.get_double("mlm_rate"));
    std::cout << "objective=" << objective << " lang=" << language_id
              << " ppl=" << ppl << "\n";
    return 0;
}

int cmd_eval_align(const std::string& model_path, const std::string& vocab_path,
                   const std::string& dict_path, const std::string& report_path) {
    const Model<float> model = load_model(model_path);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const TranslationDictionary dict = TranslationDictionary::load(dict_path);
    const AlignmentReport report = alignment_metrics(model, vocab, dict);
    std::vector<std::string> lines = {
        str("mean_cosine=", report.mean_cosine),
        str("mean_l2=", report.mean_l2),
        str("pairs_used=", report.pairs_used),
        str("pairs_skipped=", report.pairs_skipped),
    };
    for (const auto& l : lines) std::cout << l << "\n";
    if (!report_path.empty()) write_all(report_path, lines);
    return 0;
}

int cmd_eval_wordsim(const std::string& model_path, const std::string& vocab_path,
                     const std::string& gold_path, const std::string& report_path) {
    const Model<float> model = load_model(model_path);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const WordSimilarityGold gold = WordSimilarityGold::load(gold_path);
    const WordSimilarityReport report = word_similarity(model, vocab, gold);
    std::vector<std::string> lines = {
        str("pearson_r=", report.pearson_r),
        str("pairs_used=", report.used),
        str("pairs_skipped=", report.skipped),
    };
    for (const auto& l : lines) std::cout << l << "\n";
    if (!report_path.empty()) write_all(report_path, lines);
    return 0;
}

int cmd_finetune(const RunConfig& cfg, const std::string& model_path,
                 const std::string& codes, const std::string& vocab_path,
                 const std::string& train_path, const std::string& test_a_path,
                 const std::string& test_b_path, int32_t lang_a, int32_t lang_b,
                 const std::string& model_out) {
    Model<float> model = load_model(model_path);
    const MergeTable merges = MergeTable::load(codes);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const LabeledSet train_a = LabeledSet::load(train_path, lang_a, merges, vocab);
    const LabeledSet test_a = LabeledSet::load(test_a_path, lang_a, merges, vocab);
    const LabeledSet test_b = LabeledSet::load(test_b_path, lang_b, merges, vocab);

    FinetunePlan plan;
    plan.steps = cfg.get_int("finetune_steps");
    plan.warmup = cfg.get_int("finetune_warmup");
    plan.peak_lr = cfg.get_double("finetune_lr");
    plan.batch_size = static_cast<int32_t>(cfg.get_int("finetune_batch"));
    plan.max_len = static_cast<int32_t>(cfg.get_int("finetune_max_len"));
    plan.clip_norm = cfg.get_double("clip_norm");
    plan.seed = cfg.get_u64("seed");

    const TransferResult result =
        zero_shot_transfer(model, train_a, test_a, test_b, plan);
    std::cout << "acc_train_lang=" << result.train_lang_accuracy << "\n"
              << "acc_transfer_lang=" << result.other_lang_accuracy << "\n";
    if (!model_out.empty()) save_model(model, model_out);
    return 0;
}

int cmd_export_embeddings(const std::string& model_path,
                          const std::string& vocab_path,
                          const std::string& output) {
    const Model<float> model = load_model(model_path);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    CLX_CHECK(vocab.size() == model.cfg.vocab_size,
              "vocabulary size ", vocab.size(), " != model vocabulary ",
              model.cfg.vocab_size);
    std::ofstream out(output, std::ios::binary);
    CLX_CHECK(out.good(), "cannot write file: ", output);
    const auto emb = model.tok_emb.data();
    const int64_t d = model.cfg.dim;
    for (int32_t id = 0; id < vocab.size(); ++id) {
        out << vocab.token(id);
        for (int64_t j = 0; j < d; ++j) out << ' ' << emb[id * d + j];
        out << '\n';
    }
    std::cout << "tokens=" << vocab.size() << " dim=" << d << " file=" << output
              << "\n";
    return 0;
}

int cmd_make_synthetic(const RunConfig& cfg, const std::string& outdir) {
    SyntheticConfig sc;
    sc.vocab_size = static_cast<int32_t>(cfg.get_int("synth_vocab"));
    sc.sentences = static_cast<int32_t>(cfg.get_int("synth_sentences"));
    sc.heldout_sentences = static_cast<int32_t>(cfg.get_int("synth_heldout"));
    sc.parallel_sentences = static_cast<int32_t>(cfg.get_int("synth_parallel"));
    sc.labeled_train = static_cast<int32_t>(cfg.get_int("synth_labeled_train"));
    sc.labeled_test = static_cast<int32_t>(cfg.get_int("synth_labeled_test"));
    sc.anchor_fraction = cfg.get_double("synth_anchor_fraction");
    sc.cipher_mode = cfg.get("synth_cipher_mode");
    sc.seed = cfg.get_u64("seed");
    sc.min_len = static_cast<int32_t>(cfg.get_int("synth_min_len"));
    sc.max_len = static_cast<int32_t>(cfg.get_int("synth_max_len"));
    sc.branching = static_cast<int32_t>(cfg.get_int("synth_branching"));
    sc.label_margin = static_cast<int32_t>(cfg.get_int("synth_label_margin"));
    write_synthetic(make_synthetic_pair(sc), outdir);
    std::cout << "outdir=" << outdir << " sentences=" << sc.sentences
              << " vocab=" << sc.vocab_size << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-lingual language model pretraining toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // --config/--seed/--set may follow the subcommand

    std::string config_path;
    uint64_t seed_flag = 0;
    bool seed_given = false;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "flat key = value settings file");
    app.add_option("--seed", seed_flag, "master seed")
        ->each([&](const std::string&) { seed_given = true; });
    app.add_option("--set", overrides, "override a config key, key=value");

    // learn-bpe
    auto* learn = app.add_subcommand("learn-bpe", "learn merge operations");
    std::vector<std::string> learn_inputs;
    std::string learn_out;
    learn->add_option("--input", learn_inputs, "corpus file, one per language")
        ->required();
    learn->add_option("--output", learn_out, "codes file")->required();

    // apply-bpe
    auto* apply = app.add_subcommand("apply-bpe", "segment a corpus");
    std::string apply_codes, apply_in, apply_out;
    apply->add_option("--codes", apply_codes)->required();
    apply->add_option("--input", apply_in)->required();
    apply->add_option("--output", apply_out)->required();

    // build-vocab
    auto* bv = app.add_subcommand("build-vocab", "count sub-words, build vocabulary");
    std::string bv_codes, bv_out;
    std::vector<std::string> bv_inputs;
    bv->add_option("--codes", bv_codes)->required();
    bv->add_option("--input", bv_inputs)->required();
    bv->add_option("--output", bv_out)->required();

    // train
    auto* train = app.add_subcommand("train", "pretrain with clm, mlm or mlm+tlm");
    std::string train_codes, train_vocab, train_objective = "mlm";
    TrainInputs train_inputs;
    std::string train_model_out = "model.ckpt", train_trainer_out, train_metrics;
    train->add_option("--codes", train_codes)->required();
    train->add_option("--vocab", train_vocab)->required();
    train->add_option("--mono", train_inputs.mono, "language=path")->required();
    train->add_option("--heldout", train_inputs.heldout, "language=path");
    train->add_option("--parallel", train_inputs.parallel, "a,b=src_path,tgt_path");
    train->add_option("--objective", train_objective, "clm | mlm | mlm+tlm");
    train->add_option("--out", train_model_out, "model checkpoint");
    train->add_option("--save-trainer", train_trainer_out,
                      "resumable trainer checkpoint");
    train->add_option("--metrics", train_metrics, "metrics log file");

    // eval-ppl
    auto* ppl = app.add_subcommand("eval-ppl", "held-out perplexity");
    std::string ppl_model, ppl_codes, ppl_vocab, ppl_input, ppl_objective = "clm";
    int32_t ppl_lang = 0;
    ppl->add_option("--model", ppl_model)->required();
    ppl->add_option("--codes", ppl_codes)->required();
    ppl->add_option("--vocab", ppl_vocab)->required();
    ppl->add_option("--input", ppl_input)->required();
    ppl->add_option("--language-id", ppl_lang);
    ppl->add_option("--objective", ppl_objective, "clm | mlm");

    // eval-align
    auto* align = app.add_subcommand("eval-align", "dictionary cosine / L2 report");
    std::string align_model, align_vocab, align_dict, align_report;
    align->add_option("--model", align_model)->required();
    align->add_option("--vocab", align_vocab)->required();
    align->add_option("--dict", align_dict)->required();
    align->add_option("--report", align_report);

    // eval-wordsim
    auto* ws = app.add_subcommand("eval-wordsim", "word-similarity correlation");
    std::string ws_model, ws_vocab, ws_gold, ws_report;
    ws->add_option("--model", ws_model)->required();
    ws->add_option("--vocab", ws_vocab)->required();
    ws->add_option("--gold", ws_gold)->required();
    ws->add_option("--report", ws_report);

    // finetune-classify
    auto* ft = app.add_subcommand("finetune-classify",
                                  "fine-tune a classifier, report transfer");
    std::string ft_model, ft_codes, ft_vocab, ft_train, ft_test_a, ft_test_b, ft_out;
    int32_t ft_lang_a = 0, ft_lang_b = 1;
    ft->add_option("--model", ft_model)->required();
    ft->add_option("--codes", ft_codes)->required();
    ft->add_option("--vocab", ft_vocab)->required();
    ft->add_option("--train", ft_train, "labeled training set, tuning language")
        ->required();
    ft->add_option("--test-a", ft_test_a, "held-out split, tuning language")
        ->required();
    ft->add_option("--test-b", ft_test_b, "test split, transfer language")
        ->required();
    ft->add_option("--language-id-a", ft_lang_a);
    ft->add_option("--language-id-b", ft_lang_b);
    ft->add_option("--out", ft_out, "fine-tuned model checkpoint");

    // export-embeddings
    auto* exp = app.add_subcommand("export-embeddings", "token table as text");
    std::string exp_model, exp_vocab, exp_out;
    exp->add_option("--model", exp_model)->required();
    exp->add_option("--vocab", exp_vocab)->required();
    exp->add_option("--output", exp_out)->required();

    // make-synthetic
    auto* synth = app.add_subcommand("make-synthetic",
                                     "cipher-language corpora and tasks");
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& kv : overrides) {
            const auto [key, value] = split_kv(kv, "--set");
            cfg.set(key, value);
        }
        if (seed_given) cfg.set("seed", std::to_string(seed_flag));

        if (learn->parsed()) return cmd_learn_bpe(cfg, learn_inputs, learn_out);
        if (apply->parsed()) return cmd_apply_bpe(apply_codes, apply_in, apply_out);
        if (bv->parsed()) return cmd_build_vocab(cfg, bv_codes, bv_inputs, bv_out);
        if (train->parsed())
            return cmd_train(cfg, train_codes, train_vocab, train_inputs,
                             train_objective, train_model_out, train_trainer_out,
                             train_metrics);
        if (ppl->parsed())
            return cmd_eval_ppl(cfg, ppl_model, ppl_codes, ppl_vocab, ppl_input,
                                ppl_lang, ppl_objective);
        if (align->parsed())
            return cmd_eval_align(align_model, align_vocab, align_dict, align_report);
        if (ws->parsed())
            return cmd_eval_wordsim(ws_model, ws_vocab, ws_gold, ws_report);
        if (ft->parsed())
            return cmd_finetune(cfg, ft_model, ft_codes, ft_vocab, ft_train,
                                ft_test_a, ft_test_b, ft_lang_a, ft_lang_b, ft_out);
        if (exp->parsed())
            return cmd_export_embeddings(exp_model, exp_vocab, exp_out);
        if (synth->parsed()) return cmd_make_synthetic(cfg, synth_out);
        std::cerr << "error: no subcommand given\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
