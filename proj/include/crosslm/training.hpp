#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crosslm/corpus.hpp"
#include "crosslm/model.hpp"
#include "crosslm/objectives.hpp"
#include "crosslm/sampling.hpp"
#include "crosslm/streams.hpp"

namespace crosslm {

// Linear warm-up to the peak rate, constant afterwards.
double lr_at(int64_t step, int64_t warmup, double peak);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over a fixed parameter list. Moments live here, in parameter order.
class Adam {
public:
    Adam(std::vector<std::pair<std::string, Tensor<float>*>> params,
         AdamConfig cfg = {});

    struct StepResult {
        bool applied = false;     // false when a gradient was non-finite
        double grad_norm = 0.0;   // global norm before clipping
    };

    // One update at rate `lr`. When clip_norm > 0 the global gradient norm
    // is clipped to it first. Gradients are cleared after a successful
    // step; a non-finite gradient aborts the step and leaves parameters
    // and moments untouched.
    StepResult step(double lr, double clip_norm);

    uint64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    // Flat moment access for checkpointing.
    std::vector<std::vector<float>>& first_moments() { return m_; }
    std::vector<std::vector<float>>& second_moments() { return v_; }
    void set_steps_taken(uint64_t t) { t_ = t; }

private:
    std::vector<std::pair<std::string, Tensor<float>*>> params_;
    AdamConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    uint64_t t_ = 0;
};

enum class PlanObjective { CLM, MLM, MLM_TLM };

const char* plan_objective_name(PlanObjective o);
PlanObjective parse_plan_objective(const std::string& name);

struct TrainPlan {
    PlanObjective objective = PlanObjective::MLM;
    int64_t max_steps = 1000;
    int64_t warmup = 100;
    double peak_lr = 3e-4;
    int64_t eval_interval = 200;
    int64_t patience = 5;
    uint64_t seed = 1;
    int32_t batch_size = 64;
    int32_t stream_len = 256;
    int32_t tlm_token_budget = 4000;
    int32_t tlm_max_row = 512;
    double mlm_rate = 0.15;
    double clip_norm = 5.0;
    double alpha_train = 0.7;

    void validate() const;
};

enum class StopReason { MaxSteps, Patience, Diverged, Running };

struct TrainResult {
    StopReason stop = StopReason::Running;
    std::vector<float> losses;          // one entry per optimization step
    std::vector<std::string> log_lines; // "step=.. lang=.. ppl=.." records
    double best_avg_ppl = 0.0;
    int64_t best_step = -1;
};

// One training run over monolingual stores (CLM/MLM) and, for MLM+TLM,
// parallel stores. Owns the optimizer, the data cursors and the generator
// streams, so a saved trainer resumes bit-identically.
class Trainer {
public:
    Trainer(TrainPlan plan, Model<float> model,
            std::vector<const SentenceStore*> stores,
            std::vector<const SentenceStore*> heldout,
            std::vector<const ParallelStore*> pairs,
            const LanguageSet& languages);

    // Runs one optimization step; returns the loss. Returns nullopt once
    // a stopping condition has fired.
    std::optional<float> step_once();

    // Runs until max steps, patience, or divergence.
    TrainResult run();

    // Current training step count.
    int64_t step() const { return step_; }
    StopReason stop_reason() const { return stop_; }

    Model<float>& model() { return model_; }
    // Best model by average held-out perplexity (falls back to current).
    Model<float> best_model();
    const TrainResult& result() const { return result_; }

    // Full-state checkpoint: bit-exact resumption contract.
    void save(const std::string& path) const;
    static Trainer resume(const std::string& path,
                          std::vector<const SentenceStore*> stores,
                          std::vector<const SentenceStore*> heldout,
                          std::vector<const ParallelStore*> pairs,
                          const LanguageSet& languages);

    double evaluate_now();  // forces an evaluation pass; returns avg ppl

private:
    TrainPlan plan_;
    Model<float> model_;
    std::unique_ptr<Adam> adam_;
    std::vector<const SentenceStore*> stores_;
    std::vector<const SentenceStore*> heldout_;
    std::vector<const ParallelStore*> pairs_;
    std::vector<std::string> lang_names_;
    LanguageDistribution mono_dist_;
    LanguageDistribution pair_dist_;
    std::vector<StreamCursor> cursors_;
    std::vector<std::unique_ptr<TlmBatcher>> tlm_;
    SubsampleWeights weights_;
    Rng data_rng_, corrupt_rng_, dropout_rng_;
    int64_t step_ = 0;
    StopReason stop_ = StopReason::Running;
    TrainResult result_;
    // best-checkpoint tracking
    std::vector<std::vector<float>> best_params_;
    double best_ppl_ = 0.0;
    bool has_best_ = false;
    int64_t evals_since_best_ = 0;

    void maybe_evaluate();
    Batch make_batch(Objective objective);
    friend struct TrainerSerializer;
};

// Convenience wrapper: construct, run, return the result and leave the
// best model in `model`.
TrainResult train_run(const TrainPlan& plan,
                      std::vector<const SentenceStore*> stores,
                      std::vector<const SentenceStore*> heldout,
                      std::vector<const ParallelStore*> pairs,
                      const LanguageSet& languages, Model<float>& model);

// Model-only checkpoint for evaluation and export tooling.
void save_model(Model<float>& model, const std::string& path);
Model<float> load_model(const std::string& path);

}  // namespace crosslm
