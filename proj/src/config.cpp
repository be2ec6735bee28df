#include "crosslm/config.hpp"

#include <fstream>

#include "crosslm/common.hpp"

namespace crosslm {

const std::vector<RunConfig::Entry>& RunConfig::schema() {
    static const std::vector<Entry> entries = {
        {"seed", "1", "master seed for every derived generator"},
        {"alpha_bpe", "0.5", "smoothing exponent for the BPE sample"},
        {"alpha_train", "0.7", "smoothing exponent for batch language choice"},
        {"bpe_sample_size", "100000", "sentences sampled for BPE learning"},
        {"num_merges", "1500", "BPE merge operations to learn"},
        {"min_count", "0", "minimum token count kept in the vocabulary"},
        {"dim", "64", "model width"},
        {"heads", "4", "attention heads"},
        {"layers", "2", "transformer layers"},
        {"max_positions", "256", "position table size"},
        {"dropout", "0.1", "dropout rate"},
        {"batch_size", "64", "streams per monolingual batch"},
        {"stream_len", "256", "tokens per stream"},
        {"tlm_token_budget", "4000", "non-pad token budget per parallel batch"},
        {"tlm_max_row", "512", "parallel rows longer than this are skipped"},
        {"mlm_rate", "0.15", "fraction of eligible tokens selected for masking"},
        {"lr", "3e-4", "peak learning rate"},
        {"warmup", "100", "linear warm-up steps"},
        {"max_steps", "1000", "optimization step limit"},
        {"eval_interval", "200", "steps between held-out evaluations"},
        {"patience", "5", "evaluations without improvement before stopping"},
        {"clip_norm", "5.0", "global gradient-norm clip"},
        {"finetune_steps", "400", "classifier fine-tuning steps"},
        {"finetune_lr", "1e-4", "classifier fine-tuning peak rate"},
        {"finetune_warmup", "40", "classifier fine-tuning warm-up steps"},
        {"finetune_batch", "16", "classifier fine-tuning batch size"},
        {"finetune_max_len", "64", "classification row length"},
        {"synth_vocab", "200", "content token types per synthetic language"},
        {"synth_sentences", "20000", "monolingual sentences per synthetic side"},
        {"synth_heldout", "2000", "held-out sentences per synthetic side"},
        {"synth_parallel", "5000", "parallel sentences"},
        {"synth_labeled_train", "2000", "labeled training sentences per language"},
        {"synth_labeled_test", "1000", "labeled test sentences per language"},
        {"synth_anchor_fraction", "0.1", "token types shared verbatim"},
        {"synth_cipher_mode", "bijective", "bijective | identity"},
        {"synth_min_len", "8", "minimum synthetic sentence length"},
        {"synth_max_len", "16", "maximum synthetic sentence length"},
        {"synth_branching", "6", "grammar continuations per context"},
        {"synth_label_margin", "2", "minimum |polarity sum| of labeled sentences"},
    };
    return entries;
}

RunConfig::RunConfig() {
    for (const Entry& e : schema()) values_[e.key] = e.value;
}

bool RunConfig::has(const std::string& key) const {
    return values_.find(key) != values_.end();
}

void RunConfig::set(const std::string& key, const std::string& value) {
    CLX_CHECK(has(key), "unknown config key '", key, "'");
    values_[key] = value;
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CLX_CHECK(in.good(), "cannot read config file: ", path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto trim = [](std::string s) {
            const auto from = s.find_first_not_of(" \t\r");
            if (from == std::string::npos) return std::string();
            const auto to = s.find_last_not_of(" \t\r");
            return s.substr(from, to - from + 1);
        };
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        CLX_CHECK(eq != std::string::npos, "config ", path, " line ", lineno,
                  ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        CLX_CHECK(has(key), "config ", path, " line ", lineno,
                  ": unknown key '", key, "'");
        values_[key] = value;
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    CLX_CHECK(it != values_.end(), "unknown config key '", key, "'");
    return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
    try {
        return std::stoll(get(key));
    } catch (const std::exception&) {
        fail("config key '", key, "': '", get(key), "' is not an integer");
    }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
    try {
        return std::stoull(get(key));
    } catch (const std::exception&) {
        fail("config key '", key, "': '", get(key), "' is not an unsigned integer");
    }
}

double RunConfig::get_double(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::exception&) {
        fail("config key '", key, "': '", get(key), "' is not a number");
    }
}

std::vector<std::string> RunConfig::dump() const {
    std::vector<std::string> out;
    for (const auto& [key, value] : values_) out.push_back(key + " = " + value);
    return out;
}

}  // namespace crosslm
