#pragma once

// Orchestration: classifier training, translator training, two-stage
// inference, per-semiotic-class evaluation, and the memory-ablation and
// copy-task experiments.

#include "memnorm/corpus.hpp"
#include "memnorm/featurize.hpp"
#include "memnorm/gbdt.hpp"
#include "memnorm/seq2seq.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace memnorm {

// ---- evaluation report ----------------------------------------------------

struct ClassStats {
    std::uint64_t count = 0;
    std::uint64_t correct = 0;
    double accuracy() const { return count ? static_cast<double>(correct) / count : 0.0; }
};

struct Mismatch {
    std::string semiotic_class;
    std::string window;
    std::string prediction;
    std::string truth;
};

struct EvaluationReport {
    std::map<std::string, ClassStats> per_class;
    ClassStats overall;
    ClassStats to_be_normalized;  // truth-labeled ToBeNormalized tokens only
    std::vector<Mismatch> mismatches;
    std::uint64_t translator_fallbacks = 0;

    std::string to_json() const;
    std::string to_table() const;           // class, count, accuracy columns
    std::string mismatches_tsv() const;
};

// ---- classifier -------------------------------------------------------------

struct ClassifierTrainResult {
    TreeEnsemble ensemble;
    std::optional<BinaryMetrics> validation;  // absent when single-class
    std::size_t rows = 0;
    bool single_class = false;
};

ClassifierTrainResult train_classifier(const std::vector<SentenceRecord>& records,
                                       const GbdtParams& params, std::uint64_t seed = 42,
                                       double validation_fraction = 0.1);

// Feature matrix debug dump: 94 numeric columns plus the 0/1 label.
void write_feature_csv(const std::vector<SentenceRecord>& records, const std::string& file);

// ---- translator -------------------------------------------------------------

struct TranslatorModel {
    Seq2SeqConfig cfg;
    Vocab input_vocab;
    Vocab output_vocab;
    Parameters params;
};

// Basepath expands to basepath.mnrm / .in.vocab / .out.vocab / .json.
void save_translator(const TranslatorModel& model, const std::string& basepath);
TranslatorModel load_translator(const std::string& basepath);

struct TrainingPair {
    std::vector<std::string> input_symbols;
    std::vector<std::string> output_words;
};

std::vector<TrainingPair> make_training_pairs(const std::vector<SentenceRecord>& records,
                                              std::size_t window = 3);

struct TrainConfig {
    int batch = 16;
    std::int64_t max_steps = 1;
    std::int64_t eval_every = 100;
    std::uint64_t seed = 42;
    AdamConfig adam;
    Seq2SeqConfig model;
    bool ablate_memory = false;
    std::string checkpoint_path;                 // empty: no checkpoints
    std::optional<double> stop_perplexity;       // early stop once reached
};

struct TrainLogEntry {
    std::int64_t step;
    double mean_loss;
    double perplexity;  // exp(mean loss)
};

struct TranslatorTrainResult {
    std::vector<TrainLogEntry> log;
    std::uint64_t skipped_overlength = 0;
    std::int64_t steps_run = 0;
    double final_perplexity = 0.0;
};

TranslatorTrainResult train_translator(const std::vector<SentenceRecord>& records,
                                       const TrainConfig& cfg, TranslatorModel& model);

// ---- two-stage inference and evaluation ------------------------------------

struct NormalizeResult {
    std::vector<std::string> outputs;  // one per input token
    std::uint64_t fallbacks = 0;       // empty translator outputs
};

NormalizeResult normalize_sentence(const std::vector<std::string>& tokens,
                                   const TreeEnsemble& ensemble, TranslatorModel& translator,
                                   double threshold = 0.5, bool ablate_memory = false);

EvaluationReport evaluate(const std::vector<SentenceRecord>& records, const TreeEnsemble& ensemble,
                          TranslatorModel& translator, double threshold = 0.5);

// Same pass with read vectors zeroed at the controller input of every step.
EvaluationReport ablate_memory(const std::vector<SentenceRecord>& records,
                               const TreeEnsemble& ensemble, TranslatorModel& translator,
                               double threshold = 0.5);

// ---- copy task --------------------------------------------------------------

struct CopyTaskConfig {
    int symbols = 8;
    int len_max = 8;
    std::int64_t steps = 20000;
    int batch = 16;
    std::int64_t eval_every = 200;
    std::uint64_t seed = 42;
    double learning_rate = 1e-3;
    double stop_accuracy = 0.995;  // early stop on a held-out probe
};

Seq2SeqConfig small_model_config(Eigen::Index input_vocab, Eigen::Index output_vocab);
Seq2SeqConfig paper_model_config(Eigen::Index input_vocab, Eigen::Index output_vocab);

struct CopyTaskResult {
    TranslatorModel model;
    std::int64_t steps_run = 0;
};

CopyTaskResult copy_task_train(const CopyTaskConfig& cfg,
                               const std::function<void(const TrainLogEntry&)>& log = nullptr);

// Exact-sequence accuracy on freshly drawn held-out sequences.
double copy_task_accuracy(TranslatorModel& model, const CopyTaskConfig& cfg, int sequences,
                          std::uint64_t seed, bool ablate_memory);

}  // namespace memnorm
