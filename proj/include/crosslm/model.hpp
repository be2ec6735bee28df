#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crosslm/streams.hpp"
#include "crosslm/tensor.hpp"

namespace crosslm {

struct ModelConfig {
    int32_t vocab_size = 0;
    int32_t dim = 64;
    int32_t heads = 4;
    int32_t layers = 2;
    int32_t max_positions = 256;
    int32_t languages = 1;
    double dropout = 0.1;
    int32_t classes = 0;  // 0 = no classifier head

    void validate() const {
        CLX_CHECK(vocab_size > 0, "model: vocab_size must be positive");
        CLX_CHECK(dim % heads == 0, "model: dim ", dim, " not divisible by heads ",
                  heads);
        CLX_CHECK(layers >= 1, "model: needs at least one layer");
        CLX_CHECK(max_positions >= 1, "model: max_positions must be positive");
        CLX_CHECK(languages >= 1, "model: needs at least one language");
        CLX_CHECK(dropout >= 0.0 && dropout < 1.0, "model: dropout outside [0,1)");
    }
};

// Transformer encoder over summed token/position/language embeddings with
// post-layer-norm residual blocks. The token table doubles as the
// prediction head (tied embeddings).
template <class T>
struct Model {
    struct Layer {
        Tensor<T> wq, wk, wv, wo;      // [d, d]
        Tensor<T> w1, w2;              // [d, 4d], [4d, d]
        Tensor<T> ln1_g, ln1_b;        // [d]
        Tensor<T> ln2_g, ln2_b;        // [d]
    };

    ModelConfig cfg;
    Tensor<T> tok_emb;   // [V, d], shared with the output projection
    Tensor<T> pos_emb;   // [P, d], learned positions
    Tensor<T> lang_emb;  // [N, d]
    Tensor<T> out_bias;  // [V]
    std::vector<Layer> layers;
    Tensor<T> cls_w, cls_b;  // optional classifier head

    static Model init(const ModelConfig& cfg, Rng& rng, T init_std = T(0.02)) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        const int64_t d = cfg.dim;
        m.tok_emb = Tensor<T>::randn({cfg.vocab_size, d}, init_std, rng);
        m.pos_emb = Tensor<T>::randn({cfg.max_positions, d}, init_std, rng);
        m.lang_emb = Tensor<T>::randn({cfg.languages, d}, init_std, rng);
        m.out_bias = Tensor<T>::zeros({cfg.vocab_size});
        for (int32_t l = 0; l < cfg.layers; ++l) {
            Layer layer;
            layer.wq = Tensor<T>::randn({d, d}, init_std, rng);
            layer.wk = Tensor<T>::randn({d, d}, init_std, rng);
            layer.wv = Tensor<T>::randn({d, d}, init_std, rng);
            layer.wo = Tensor<T>::randn({d, d}, init_std, rng);
            layer.w1 = Tensor<T>::randn({d, 4 * d}, init_std, rng);
            layer.w2 = Tensor<T>::randn({4 * d, d}, init_std, rng);
            layer.ln1_g = Tensor<T>::full({d}, T(1));
            layer.ln1_b = Tensor<T>::zeros({d});
            layer.ln2_g = Tensor<T>::full({d}, T(1));
            layer.ln2_b = Tensor<T>::zeros({d});
            m.layers.push_back(std::move(layer));
        }
        if (cfg.classes > 0) m.attach_classifier(cfg.classes, rng, init_std);
        m.mark_parameters();
        return m;
    }

    void attach_classifier(int32_t classes, Rng& rng, T init_std = T(0.02)) {
        CLX_CHECK(classes >= 2, "classifier needs at least two classes");
        cfg.classes = classes;
        cls_w = Tensor<T>::randn({cfg.dim, classes}, init_std, rng);
        cls_b = Tensor<T>::zeros({classes});
        cls_w.set_requires_grad();
        cls_b.set_requires_grad();
    }

    bool has_classifier() const { return cfg.classes > 0; }

    void mark_parameters() {
        for (auto& [name, p] : parameters()) p->set_requires_grad();
    }

    // Stable name -> tensor listing; the checkpoint and optimizer orders
    // follow it.
    std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        out.emplace_back("tok_emb", &tok_emb);
        out.emplace_back("pos_emb", &pos_emb);
        out.emplace_back("lang_emb", &lang_emb);
        out.emplace_back("out_bias", &out_bias);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string prefix = "layer" + std::to_string(l) + ".";
            out.emplace_back(prefix + "wq", &layers[l].wq);
            out.emplace_back(prefix + "wk", &layers[l].wk);
            out.emplace_back(prefix + "wv", &layers[l].wv);
            out.emplace_back(prefix + "wo", &layers[l].wo);
            out.emplace_back(prefix + "w1", &layers[l].w1);
            out.emplace_back(prefix + "w2", &layers[l].w2);
            out.emplace_back(prefix + "ln1_g", &layers[l].ln1_g);
            out.emplace_back(prefix + "ln1_b", &layers[l].ln1_b);
            out.emplace_back(prefix + "ln2_g", &layers[l].ln2_g);
            out.emplace_back(prefix + "ln2_b", &layers[l].ln2_b);
        }
        if (has_classifier()) {
            out.emplace_back("cls_w", &cls_w);
            out.emplace_back("cls_b", &cls_b);
        }
        return out;
    }

    int64_t parameter_count() {
        int64_t n = 0;
        for (auto& [name, p] : parameters()) n += p->numel();
        return n;
    }

    Model clone() {
        Model m;
        m.cfg = cfg;
        m.tok_emb = tok_emb.clone();
        m.pos_emb = pos_emb.clone();
        m.lang_emb = lang_emb.clone();
        m.out_bias = out_bias.clone();
        for (auto& layer : layers) {
            Layer c;
            c.wq = layer.wq.clone();
            c.wk = layer.wk.clone();
            c.wv = layer.wv.clone();
            c.wo = layer.wo.clone();
            c.w1 = layer.w1.clone();
            c.w2 = layer.w2.clone();
            c.ln1_g = layer.ln1_g.clone();
            c.ln1_b = layer.ln1_b.clone();
            c.ln2_g = layer.ln2_g.clone();
            c.ln2_b = layer.ln2_b.clone();
            m.layers.push_back(std::move(c));
        }
        if (has_classifier()) {
            m.cls_w = cls_w.clone();
            m.cls_b = cls_b.clone();
        }
        return m;
    }

    // Hidden states [B*L, d] for one batch. Dropout fires only in train
    // mode and draws from `dropout_rng`.
    Tensor<T> forward(Tape<T>* tape, const Batch& batch, bool train = false,
                      Rng* dropout_rng = nullptr) const {
        const int64_t B = batch.rows, L = batch.len, d = cfg.dim;
        for (int32_t p : batch.positions)
            CLX_CHECK(p < cfg.max_positions, "forward: position ", p,
                      " >= max_positions ", cfg.max_positions);
        for (int32_t l : batch.languages)
            CLX_CHECK(l < cfg.languages, "forward: language ", l, " >= ",
                      cfg.languages);

        Tensor<T> x = embedding_lookup(tape, tok_emb, batch.tokens);
        x = add(tape, x, embedding_lookup(tape, pos_emb, batch.positions));
        x = add(tape, x, embedding_lookup(tape, lang_emb, batch.languages));
        x = dropout(tape, x, cfg.dropout, train, dropout_rng);

        AttentionMask mask;
        mask.pad = batch.pad_mask;
        mask.rows = batch.rows;
        mask.len = batch.len;
        mask.causal = batch.attention_mode == AttentionMode::Causal;
        const T att_scale = T(1) / std::sqrt(static_cast<T>(d / cfg.heads));

        for (const Layer& layer : layers) {
            Tensor<T> q = split_heads(tape, matmul(tape, x, layer.wq), B, L, cfg.heads);
            Tensor<T> k = split_heads(tape, matmul(tape, x, layer.wk), B, L, cfg.heads);
            Tensor<T> v = split_heads(tape, matmul(tape, x, layer.wv), B, L, cfg.heads);
            Tensor<T> probs = masked_softmax(tape, bmm_nt(tape, q, k), mask, att_scale);
            Tensor<T> ctx = merge_heads(tape, bmm(tape, probs, v), B, L, cfg.heads);
            Tensor<T> attn = matmul(tape, ctx, layer.wo);
            attn = dropout(tape, attn, cfg.dropout, train, dropout_rng);
            x = layer_norm(tape, add(tape, x, attn), layer.ln1_g, layer.ln1_b);

            Tensor<T> ff = matmul(tape, gelu(tape, matmul(tape, x, layer.w1)), layer.w2);
            ff = dropout(tape, ff, cfg.dropout, train, dropout_rng);
            x = layer_norm(tape, add(tape, x, ff), layer.ln2_g, layer.ln2_b);
        }
        return x;
    }

    // Vocabulary logits for the given hidden rows through the tied head.
    Tensor<T> lm_logits(Tape<T>* tape, Tensor<T> hidden) const {
        return add_bias(tape, matmul_nt(tape, hidden, tok_emb), out_bias);
    }

    // First hidden state of each row: hidden[:, 0, :].
    Tensor<T> sentence_representation(Tape<T>* tape, Tensor<T> hidden,
                                      int32_t batch_rows, int32_t len) const {
        std::vector<int32_t> idx(static_cast<size_t>(batch_rows));
        for (int32_t b = 0; b < batch_rows; ++b) idx[static_cast<size_t>(b)] = b * len;
        return gather_rows(tape, hidden, idx);
    }

    Tensor<T> classify(Tape<T>* tape, Tensor<T> representation) const {
        CLX_CHECK(has_classifier(), "classify: no classifier head attached");
        return add_bias(tape, matmul(tape, representation, cls_w), cls_b);
    }
};

}  // namespace crosslm
