#include "crosslm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "crosslm/common.hpp"
#include "crosslm/evaluation.hpp"
#include "crosslm/subword.hpp"

namespace crosslm {

double lr_at(int64_t step, int64_t warmup, double peak) {
    CLX_CHECK(warmup >= 1, "lr_at: warmup must be >= 1");
    const double frac = static_cast<double>(step) / static_cast<double>(warmup);
    return peak * std::min(frac, 1.0);
}

Adam::Adam(std::vector<std::pair<std::string, Tensor<float>*>> params,
           AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    for (auto& [name, p] : params_) {
        m_.emplace_back(static_cast<size_t>(p->numel()), 0.0f);
        v_.emplace_back(static_cast<size_t>(p->numel()), 0.0f);
    }
}

Adam::StepResult Adam::step(double lr, double clip_norm) {
    CLX_CHECK(lr >= 0.0, "adam: negative learning rate");
    StepResult result;

    double norm_sq = 0.0;
    for (auto& [name, p] : params_) {
        if (!p->has_grad()) continue;
        for (float g : p->grad_view()) {
            if (!std::isfinite(g)) return result;  // aborted, not applied
            norm_sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    result.grad_norm = std::sqrt(norm_sq);

    // Scaling preserves direction; only the magnitude is capped.
    float scale = 1.0f;
    if (clip_norm > 0.0 && result.grad_norm > clip_norm)
        scale = static_cast<float>(clip_norm / result.grad_norm);

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor<float>* p = params_[pi].second;
        if (!p->has_grad()) continue;
        auto grad = p->grad_view();
        auto data = p->data();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < grad.size(); ++i) {
            const float g = grad[i] * scale;
            m[i] = static_cast<float>(cfg_.beta1) * m[i] +
                   (1.0f - static_cast<float>(cfg_.beta1)) * g;
            v[i] = static_cast<float>(cfg_.beta2) * v[i] +
                   (1.0f - static_cast<float>(cfg_.beta2)) * g * g;
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            data[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
        p->clear_grad();
    }
    result.applied = true;
    return result;
}

const char* plan_objective_name(PlanObjective o) {
    switch (o) {
        case PlanObjective::CLM: return "clm";
        case PlanObjective::MLM: return "mlm";
        case PlanObjective::MLM_TLM: return "mlm+tlm";
    }
    return "?";
}

PlanObjective parse_plan_objective(const std::string& name) {
    if (name == "clm") return PlanObjective::CLM;
    if (name == "mlm") return PlanObjective::MLM;
    if (name == "mlm+tlm") return PlanObjective::MLM_TLM;
    fail("unknown objective '", name, "' (expected clm, mlm or mlm+tlm)");
}

void TrainPlan::validate() const {
    CLX_CHECK(max_steps >= 1, "plan: max_steps must be >= 1");
    CLX_CHECK(warmup >= 1, "plan: warmup must be >= 1");
    CLX_CHECK(patience >= 1, "plan: patience must be >= 1");
    CLX_CHECK(peak_lr > 0.0 && peak_lr < 1.0, "plan: peak_lr outside (0, 1)");
    CLX_CHECK(eval_interval >= 1, "plan: eval_interval must be >= 1");
    CLX_CHECK(batch_size >= 1 && stream_len >= 2, "plan: bad batch geometry");
    CLX_CHECK(mlm_rate > 0.0 && mlm_rate <= 1.0, "plan: mlm_rate outside (0, 1]");
}

Trainer::Trainer(TrainPlan plan, Model<float> model,
                 std::vector<const SentenceStore*> stores,
                 std::vector<const SentenceStore*> heldout,
                 std::vector<const ParallelStore*> pairs,
                 const LanguageSet& languages)
    : plan_(plan),
      model_(std::move(model)),
      stores_(std::move(stores)),
      heldout_(std::move(heldout)),
      pairs_(std::move(pairs)),
      data_rng_(derive_seed(plan.seed, 0x01)),
      corrupt_rng_(derive_seed(plan.seed, 0x02)),
      dropout_rng_(derive_seed(plan.seed, 0x03)) {
    plan_.validate();
    CLX_CHECK(!stores_.empty(), "trainer: no training stores");
    CLX_CHECK(stores_.size() == heldout_.size(),
              "trainer: held-out store count must match training stores");
    CLX_CHECK(plan_.objective != PlanObjective::MLM_TLM || !pairs_.empty(),
              "mlm+tlm requires parallel data");
    for (const auto* s : stores_) CLX_CHECK(!s->empty(), "trainer: empty store");

    for (const auto* s : stores_)
        lang_names_.push_back(languages.entry(s->language).name);

    std::vector<uint64_t> sizes;
    for (const auto* s : stores_) sizes.push_back(s->sentences.size());
    mono_dist_ = language_probs(sizes, plan_.alpha_train);
    cursors_.resize(stores_.size());

    if (!pairs_.empty()) {
        std::vector<uint64_t> pair_sizes;
        for (const auto* p : pairs_) {
            CLX_CHECK(!p->empty(), "trainer: empty parallel store");
            pair_sizes.push_back(p->pairs.size());
        }
        pair_dist_ = language_probs(pair_sizes, plan_.alpha_train);
        for (size_t i = 0; i < pairs_.size(); ++i) {
            tlm_.push_back(std::make_unique<TlmBatcher>(
                *pairs_[i], plan_.tlm_token_budget, plan_.tlm_max_row,
                derive_seed(plan_.seed, 0x100 + i)));
        }
    }

    weights_ = subsample_weights(
        token_frequencies(stores_, model_.cfg.vocab_size));
    adam_ = std::make_unique<Adam>(model_.parameters());
}

Batch Trainer::make_batch(Objective objective) {
    if (objective == Objective::TLM) {
        const size_t pick = pairs_.size() == 1
                                ? 0
                                : static_cast<size_t>(sample_language(pair_dist_,
                                                                      data_rng_));
        return tlm_[pick]->next();
    }
    return next_mono_batch(stores_, cursors_, mono_dist_, objective,
                           plan_.batch_size, plan_.stream_len, data_rng_);
}

std::optional<float> Trainer::step_once() {
    if (stop_ != StopReason::Running) return std::nullopt;
    if (step_ >= plan_.max_steps) {
        stop_ = StopReason::MaxSteps;
        return std::nullopt;
    }

    Objective objective = Objective::MLM;
    switch (plan_.objective) {
        case PlanObjective::CLM: objective = Objective::CLM; break;
        case PlanObjective::MLM: objective = Objective::MLM; break;
        case PlanObjective::MLM_TLM:
            // strict step-wise interleaving
            objective = (step_ % 2 == 0) ? Objective::MLM : Objective::TLM;
            break;
    }

    Batch batch = make_batch(objective);
    if (objective == Objective::CLM) {
        clm_targets(batch);
    } else if (objective == Objective::TLM) {
        apply_tlm(batch, weights_, plan_.mlm_rate, model_.cfg.vocab_size,
                  corrupt_rng_);
    } else {
        apply_mlm(batch, weights_, plan_.mlm_rate, model_.cfg.vocab_size,
                  corrupt_rng_);
    }

    std::vector<int32_t> target_rows;
    std::vector<int32_t> target_ids;
    for (size_t i = 0; i < batch.targets.size(); ++i) {
        if (batch.targets[i] == Batch::kIgnore) continue;
        target_rows.push_back(static_cast<int32_t>(i));
        target_ids.push_back(batch.targets[i]);
    }
    if (target_rows.empty()) {
        // nothing to supervise in this batch; draw the next one
        ++step_;
        result_.losses.push_back(0.0f);
        return 0.0f;
    }

    Tape<float> tape;
    Tensor<float> hidden = model_.forward(&tape, batch, true, &dropout_rng_);
    Tensor<float> picked = gather_rows(&tape, hidden, target_rows);
    Tensor<float> logits = model_.lm_logits(&tape, picked);
    Tensor<float> loss = softmax_cross_entropy(&tape, logits, target_ids);
    const float loss_value = loss.item();

    if (!std::isfinite(loss_value)) {
        stop_ = StopReason::Diverged;
        if (has_best_) {
            auto params = model_.parameters();
            for (size_t i = 0; i < params.size(); ++i) {
                auto dst = params[i].second->data();
                std::copy(best_params_[i].begin(), best_params_[i].end(),
                          dst.begin());
            }
        }
        return std::nullopt;
    }

    tape.backward(loss);
    ++step_;
    adam_->step(lr_at(step_, plan_.warmup, plan_.peak_lr), plan_.clip_norm);
    result_.losses.push_back(loss_value);

    if (step_ % plan_.eval_interval == 0) maybe_evaluate();
    if (stop_ == StopReason::Running && step_ >= plan_.max_steps)
        stop_ = StopReason::MaxSteps;
    return loss_value;
}

void Trainer::maybe_evaluate() {
    double total = 0.0;
    for (size_t i = 0; i < heldout_.size(); ++i) {
        const Objective obj = plan_.objective == PlanObjective::CLM
                                  ? Objective::CLM
                                  : Objective::MLM;
        const double ppl = perplexity(model_, *heldout_[i], obj, plan_.stream_len,
                                      derive_seed(plan_.seed, 0xEE), plan_.mlm_rate);
        total += ppl;
        result_.log_lines.push_back(str("step=", step_, " lang=", lang_names_[i],
                                        " ppl=", ppl));
    }
    const double avg = total / static_cast<double>(heldout_.size());
    result_.log_lines.push_back(str("step=", step_, " avg_ppl=", avg));

    if (!has_best_ || avg < best_ppl_) {
        best_ppl_ = avg;
        has_best_ = true;
        evals_since_best_ = 0;
        result_.best_avg_ppl = avg;
        result_.best_step = step_;
        best_params_.clear();
        for (auto& [name, p] : model_.parameters())
            best_params_.emplace_back(p->data().begin(), p->data().end());
    } else {
        ++evals_since_best_;
        if (evals_since_best_ >= plan_.patience) stop_ = StopReason::Patience;
    }
}

double Trainer::evaluate_now() {
    maybe_evaluate();
    return best_ppl_;
}

TrainResult Trainer::run() {
    while (step_once().has_value()) {
    }
    result_.stop = stop_ == StopReason::Running ? StopReason::MaxSteps : stop_;
    return result_;
}

Model<float> Trainer::best_model() {
    Model<float> best = model_.clone();
    if (has_best_) {
        auto params = best.parameters();
        for (size_t i = 0; i < params.size(); ++i) {
            auto dst = params[i].second->data();
            std::copy(best_params_[i].begin(), best_params_[i].end(), dst.begin());
        }
    }
    return best;
}

TrainResult train_run(const TrainPlan& plan,
                      std::vector<const SentenceStore*> stores,
                      std::vector<const SentenceStore*> heldout,
                      std::vector<const ParallelStore*> pairs,
                      const LanguageSet& languages, Model<float>& model) {
    Trainer trainer(plan, std::move(model), std::move(stores), std::move(heldout),
                    std::move(pairs), languages);
    TrainResult result = trainer.run();
    model = trainer.best_model();
    return result;
}

// ---- checkpoint serialization ----

namespace {

constexpr char kCkptMagic[4] = {'C', 'L', 'X', 'K'};
constexpr uint32_t kCkptVersion = 1;

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(uint32_t v) { raw(&v, sizeof v); }
    void u64(uint64_t v) { raw(&v, sizeof v); }
    void i64(int64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void string(const std::string& s) {
        u64(s.size());
        buf_.append(s);
    }
    void floats(const float* data, size_t n) {
        u64(n);
        raw(data, n * sizeof(float));
    }
    void raw(const void* p, size_t n) {
        buf_.append(reinterpret_cast<const char*>(p), n);
    }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}
    uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
    uint32_t u32() { return pod<uint32_t>(); }
    uint64_t u64() { return pod<uint64_t>(); }
    int64_t i64() { return pod<int64_t>(); }
    double f64() { return pod<double>(); }
    std::string string() {
        const uint64_t n = u64();
        const char* p = take(n);
        return std::string(p, n);
    }
    std::vector<float> floats() {
        const uint64_t n = u64();
        std::vector<float> out(n);
        std::memcpy(out.data(), take(n * sizeof(float)), n * sizeof(float));
        return out;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    std::string buf_;
    size_t pos_ = 0;

    const char* take(size_t n) {
        CLX_CHECK(pos_ + n <= buf_.size(), "checkpoint truncated");
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    template <class T>
    T pod() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
};

void write_config(ByteWriter& w, const ModelConfig& cfg) {
    w.u32(static_cast<uint32_t>(cfg.vocab_size));
    w.u32(static_cast<uint32_t>(cfg.dim));
    w.u32(static_cast<uint32_t>(cfg.heads));
    w.u32(static_cast<uint32_t>(cfg.layers));
    w.u32(static_cast<uint32_t>(cfg.max_positions));
    w.u32(static_cast<uint32_t>(cfg.languages));
    w.f64(cfg.dropout);
    w.u32(static_cast<uint32_t>(cfg.classes));
}

ModelConfig read_config(ByteReader& r) {
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int32_t>(r.u32());
    cfg.dim = static_cast<int32_t>(r.u32());
    cfg.heads = static_cast<int32_t>(r.u32());
    cfg.layers = static_cast<int32_t>(r.u32());
    cfg.max_positions = static_cast<int32_t>(r.u32());
    cfg.languages = static_cast<int32_t>(r.u32());
    cfg.dropout = r.f64();
    cfg.classes = static_cast<int32_t>(r.u32());
    return cfg;
}

void write_params(ByteWriter& w, Model<float>& model) {
    auto params = model.parameters();
    w.u64(params.size());
    for (auto& [name, p] : params) {
        w.string(name);
        w.u64(p->ndim());
        for (int64_t e : p->shape()) w.i64(e);
        w.floats(p->data().data(), p->data().size());
    }
}

void read_params(ByteReader& r, Model<float>& model) {
    auto params = model.parameters();
    const uint64_t count = r.u64();
    CLX_CHECK(count == params.size(), "checkpoint: parameter count ", count,
              " != expected ", params.size());
    for (auto& [name, p] : params) {
        const std::string got = r.string();
        CLX_CHECK(got == name, "checkpoint: parameter '", got, "' where '", name,
                  "' expected");
        const uint64_t ndim = r.u64();
        CLX_CHECK(ndim == p->ndim(), "checkpoint: rank mismatch for ", name);
        for (size_t i = 0; i < ndim; ++i)
            CLX_CHECK(r.i64() == p->shape()[i], "checkpoint: shape mismatch for ",
                      name);
        std::vector<float> data = r.floats();
        CLX_CHECK(data.size() == p->data().size(),
                  "checkpoint: size mismatch for ", name);
        std::copy(data.begin(), data.end(), p->data().begin());
    }
}

void write_plan(ByteWriter& w, const TrainPlan& plan) {
    w.u32(static_cast<uint32_t>(plan.objective));
    w.i64(plan.max_steps);
    w.i64(plan.warmup);
    w.f64(plan.peak_lr);
    w.i64(plan.eval_interval);
    w.i64(plan.patience);
    w.u64(plan.seed);
    w.u32(static_cast<uint32_t>(plan.batch_size));
    w.u32(static_cast<uint32_t>(plan.stream_len));
    w.u32(static_cast<uint32_t>(plan.tlm_token_budget));
    w.u32(static_cast<uint32_t>(plan.tlm_max_row));
    w.f64(plan.mlm_rate);
    w.f64(plan.clip_norm);
    w.f64(plan.alpha_train);
}

TrainPlan read_plan(ByteReader& r) {
    TrainPlan plan;
    plan.objective = static_cast<PlanObjective>(r.u32());
    plan.max_steps = r.i64();
    plan.warmup = r.i64();
    plan.peak_lr = r.f64();
    plan.eval_interval = r.i64();
    plan.patience = r.i64();
    plan.seed = r.u64();
    plan.batch_size = static_cast<int32_t>(r.u32());
    plan.stream_len = static_cast<int32_t>(r.u32());
    plan.tlm_token_budget = static_cast<int32_t>(r.u32());
    plan.tlm_max_row = static_cast<int32_t>(r.u32());
    plan.mlm_rate = r.f64();
    plan.clip_norm = r.f64();
    plan.alpha_train = r.f64();
    return plan;
}

void write_file_with_digest(const std::string& path, const std::string& payload) {
    std::ofstream out(path, std::ios::binary);
    CLX_CHECK(out.good(), "cannot write checkpoint: ", path);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    const uint64_t digest = fnv1a64(payload);
    out.write(reinterpret_cast<const char*>(&digest), sizeof digest);
    CLX_CHECK(out.good(), "checkpoint write failed: ", path);
}

std::string read_file_checked(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read checkpoint: ", path);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    CLX_CHECK(bytes.size() > sizeof(uint64_t) + 8, "checkpoint truncated: ", path);
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - sizeof stored, sizeof stored);
    bytes.resize(bytes.size() - sizeof stored);
    CLX_CHECK(fnv1a64(bytes) == stored, "checkpoint digest mismatch: ", path);
    CLX_CHECK(bytes.compare(0, 4, kCkptMagic, 4) == 0, "not a checkpoint file: ",
              path);
    return bytes;
}

}  // namespace

struct TrainerSerializer {
    static void save(const Trainer& trainer, const std::string& path) {
        Trainer& t = const_cast<Trainer&>(trainer);  // serialization only reads
        ByteWriter w;
        w.raw(kCkptMagic, 4);
        w.u32(kCkptVersion);
        w.u8(1);  // trainer state present
        write_config(w, t.model_.cfg);
        write_params(w, t.model_);
        write_plan(w, t.plan_);

        w.u64(t.adam_->steps_taken());
        auto& m = t.adam_->first_moments();
        auto& v = t.adam_->second_moments();
        w.u64(m.size());
        for (size_t i = 0; i < m.size(); ++i) {
            w.floats(m[i].data(), m[i].size());
            w.floats(v[i].data(), v[i].size());
        }

        w.i64(t.step_);
        w.string(t.data_rng_.serialize());
        w.string(t.corrupt_rng_.serialize());
        w.string(t.dropout_rng_.serialize());

        w.u64(t.cursors_.size());
        for (const auto& c : t.cursors_) {
            w.u64(c.sentence);
            w.u64(c.offset);
            w.u64(c.epochs);
        }
        w.u64(t.tlm_.size());
        for (const auto& b : t.tlm_) {
            w.u64(b->epoch());
            w.u64(b->position());
        }

        w.u8(t.has_best_ ? 1 : 0);
        if (t.has_best_) {
            w.f64(t.best_ppl_);
            w.i64(t.evals_since_best_);
            w.i64(t.result_.best_step);
            w.u64(t.best_params_.size());
            for (const auto& p : t.best_params_) w.floats(p.data(), p.size());
        }
        write_file_with_digest(path, w.bytes());
    }
};

void Trainer::save(const std::string& path) const {
    TrainerSerializer::save(*this, path);
}

Trainer Trainer::resume(const std::string& path,
                        std::vector<const SentenceStore*> stores,
                        std::vector<const SentenceStore*> heldout,
                        std::vector<const ParallelStore*> pairs,
                        const LanguageSet& languages) {
    ByteReader r(read_file_checked(path));
    r.u32();  // magic, already validated
    const uint32_t version = r.u32();
    CLX_CHECK(version == kCkptVersion, "checkpoint version ", version,
              " unsupported");
    CLX_CHECK(r.u8() == 1, "checkpoint has no trainer state (model-only file)");

    const ModelConfig cfg = read_config(r);
    Rng init_rng(0);  // values are overwritten below
    Model<float> model = Model<float>::init(cfg, init_rng);
    read_params(r, model);
    const TrainPlan plan = read_plan(r);

    Trainer t(plan, std::move(model), std::move(stores), std::move(heldout),
              std::move(pairs), languages);

    t.adam_->set_steps_taken(r.u64());
    const uint64_t nparams = r.u64();
    auto& m = t.adam_->first_moments();
    auto& v = t.adam_->second_moments();
    CLX_CHECK(nparams == m.size(), "checkpoint: optimizer record count mismatch");
    for (size_t i = 0; i < nparams; ++i) {
        std::vector<float> mi = r.floats();
        std::vector<float> vi = r.floats();
        CLX_CHECK(mi.size() == m[i].size(), "checkpoint: moment size mismatch");
        m[i] = std::move(mi);
        v[i] = std::move(vi);
    }

    t.step_ = r.i64();
    t.data_rng_ = Rng::deserialize(r.string());
    t.corrupt_rng_ = Rng::deserialize(r.string());
    t.dropout_rng_ = Rng::deserialize(r.string());

    const uint64_t ncursors = r.u64();
    CLX_CHECK(ncursors == t.cursors_.size(), "checkpoint: cursor count mismatch");
    for (auto& c : t.cursors_) {
        c.sentence = r.u64();
        c.offset = r.u64();
        c.epochs = r.u64();
    }
    const uint64_t nbatchers = r.u64();
    CLX_CHECK(nbatchers == t.tlm_.size(), "checkpoint: batcher count mismatch");
    for (auto& b : t.tlm_) {
        const uint64_t epoch = r.u64();
        const uint64_t position = r.u64();
        b->restore(epoch, position);
    }

    if (r.u8()) {
        t.has_best_ = true;
        t.best_ppl_ = r.f64();
        t.evals_since_best_ = r.i64();
        t.result_.best_step = r.i64();
        t.result_.best_avg_ppl = t.best_ppl_;
        const uint64_t nbest = r.u64();
        t.best_params_.clear();
        for (size_t i = 0; i < nbest; ++i) t.best_params_.push_back(r.floats());
    }
    return t;
}

void save_model(Model<float>& model, const std::string& path) {
    ByteWriter w;
    w.raw(kCkptMagic, 4);
    w.u32(kCkptVersion);
    w.u8(0);  // model-only
    write_config(w, model.cfg);
    write_params(w, model);
    write_file_with_digest(path, w.bytes());
}

Model<float> load_model(const std::string& path) {
    ByteReader r(read_file_checked(path));
    r.u32();  // magic
    const uint32_t version = r.u32();
    CLX_CHECK(version == kCkptVersion, "checkpoint version ", version,
              " unsupported");
    r.u8();  // trainer-state flag; both kinds carry the model up front
    const ModelConfig cfg = read_config(r);
    Rng init_rng(0);
    Model<float> model = Model<float>::init(cfg, init_rng);
    read_params(r, model);
    return model;
}

}  // namespace crosslm
