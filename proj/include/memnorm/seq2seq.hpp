#pragma once

// Encoder-decoder translation model: one shared unidirectional DNC used in
// both phases, character-level input, word-level output, Bahdanau attention.

#include "memnorm/dnc.hpp"
#include "memnorm/params.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace memnorm {

constexpr int kPadId = 0;
constexpr int kGoId = 1;
constexpr int kEosId = 2;
constexpr int kUnkId = 3;

class Vocab {
public:
    Vocab();

    int add(const std::string& symbol);           // inserts if new
    int id(const std::string& symbol) const;      // unk when unknown
    const std::string& symbol(int id) const;
    Eigen::Index size() const { return static_cast<Eigen::Index>(symbols_.size()); }

    // One symbol per line, line number = id; first four lines are the
    // reserved <pad>, <go>, <eos>, <unk>.
    void save(const std::string& file) const;
    static Vocab load(const std::string& file);

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> ids_;
};

struct Seq2SeqConfig {
    Eigen::Index input_vocab = 4;   // K_x
    Eigen::Index output_vocab = 4;  // K_y
    Eigen::Index embedding = 16;
    Eigen::Index attn_units = 32;
    DncConfig dnc;
    Eigen::Index max_input_len = 220;
    Eigen::Index max_output_len = 60;

    Eigen::Index annotation_dim() const { return dnc.output_size; }
    void validate() const;
};

struct Annotations {
    Tensor h;              // [T, n], null when empty
    Eigen::Index len = 0;
};

void seq2seq_init_params(Parameters& params, const Seq2SeqConfig& cfg, std::mt19937_64& rng);

struct EncodeResult {
    Annotations annotations;
    DncState state;
};

EncodeResult encode(const std::vector<int>& input_ids, Parameters& params,
                    const Seq2SeqConfig& cfg, const DncStepOptions& opts = {});

// Bahdanau additive attention: e_i = v^T tanh(W q + U h_i), c = sum softmax(e)_i h_i.
Tensor attention_context(const Annotations& annotations, const Tensor& query,
                         Parameters& params, const Seq2SeqConfig& cfg);

// Teacher-forced mean cross-entropy over the target sequence (ends with eos).
Tensor decode_train(const std::vector<int>& target_ids, const Annotations& annotations,
                    const DncState& state, Parameters& params, const Seq2SeqConfig& cfg,
                    const DncStepOptions& opts = {});

// Greedy argmax decoding, ties to the lowest id; stops at eos or max length.
std::vector<int> decode_greedy(const Annotations& annotations, const DncState& state,
                               Parameters& params, const Seq2SeqConfig& cfg,
                               const DncStepOptions& opts = {});

// Context window for the translator input: up to k words each side, the
// target wrapped in <norm> ... </norm>. Words are spelled as characters,
// single spaces between words; the markers stay single symbols.
std::vector<std::string> format_input(const std::vector<std::string>& tokens, size_t target_index,
                                      size_t window = 3);

// Splits a UTF-8 string into single-character symbols.
std::vector<std::string> utf8_chars(const std::string& s);

extern const std::string kNormOpen;
extern const std::string kNormClose;

}  // namespace memnorm
