#include "memnorm/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace memnorm {

using nlohmann::json;

// ---- evaluation report ------------------------------------------------------

std::string EvaluationReport::to_json() const {
    json j;
    j["overall"] = {{"count", overall.count},
                    {"correct", overall.correct},
                    {"accuracy", overall.accuracy()}};
    j["to_be_normalized"] = {{"count", to_be_normalized.count},
                             {"correct", to_be_normalized.correct},
                             {"accuracy", to_be_normalized.accuracy()}};
    json classes = json::object();
    for (const auto& [name, st] : per_class)
        classes[name] = {{"count", st.count}, {"correct", st.correct}, {"accuracy", st.accuracy()}};
    j["per_class"] = classes;
    j["translator_fallbacks"] = translator_fallbacks;
    j["mismatch_count"] = mismatches.size();
    return j.dump(2) + "\n";
}

std::string EvaluationReport::to_table() const {
    // Class rows ordered by descending count, with the ALL row first.
    std::vector<std::pair<std::string, ClassStats>> rows(per_class.begin(), per_class.end());
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.second.count > b.second.count; });
    std::ostringstream os;
    os << std::left << std::setw(16) << "semiotic-class" << std::right << std::setw(10) << "count"
       << std::setw(12) << "accuracy" << '\n';
    auto line = [&](const std::string& name, const ClassStats& st) {
        os << std::left << std::setw(16) << name << std::right << std::setw(10) << st.count
           << std::setw(12) << std::fixed << std::setprecision(6) << st.accuracy() << '\n';
    };
    line("ALL", overall);
    for (const auto& [name, st] : rows) line(name, st);
    return os.str();
}

std::string EvaluationReport::mismatches_tsv() const {
    std::ostringstream os;
    for (const auto& m : mismatches)
        os << m.semiotic_class << '\t' << m.window << '\t' << m.prediction << '\t' << m.truth
           << '\n';
    return os.str();
}

// ---- classifier ---------------------------------------------------------------

namespace {

std::optional<std::string> neighbor(const SentenceRecord& rec, size_t i, int delta) {
    long j = static_cast<long>(i) + delta;
    if (j < 0 || j >= static_cast<long>(rec.tokens.size())) return std::nullopt;
    return rec.tokens[static_cast<size_t>(j)].before;
}

void collect_features(const std::vector<SentenceRecord>& records,
                      std::vector<std::vector<double>>& x, std::vector<int>& y) {
    for (const auto& rec : records)
        for (size_t i = 0; i < rec.tokens.size(); ++i) {
            const auto& t = rec.tokens[i];
            x.push_back(encode_token_window(neighbor(rec, i, -1), t.before, neighbor(rec, i, 1)));
            y.push_back(label_token(t.before, t.after) == TokenLabel::ToBeNormalized ? 1 : 0);
        }
}

}  // namespace

ClassifierTrainResult train_classifier(const std::vector<SentenceRecord>& records,
                                       const GbdtParams& params, std::uint64_t seed,
                                       double validation_fraction) {
    if (records.empty()) throw std::invalid_argument("train_classifier: no records");
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    collect_features(records, x, y);

    ClassifierTrainResult res;
    res.rows = x.size();
    bool has0 = false, has1 = false;
    for (int v : y) (v ? has1 : has0) = true;
    if (!has0 || !has1) {
        res.single_class = true;
        res.ensemble = fit(x, y, params);  // base score only, validation skipped
        return res;
    }

    std::vector<size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    size_t n_valid = static_cast<size_t>(validation_fraction * static_cast<double>(x.size()));
    std::vector<std::vector<double>> train_x;
    std::vector<int> train_y;
    for (size_t k = n_valid; k < order.size(); ++k) {
        train_x.push_back(x[order[k]]);
        train_y.push_back(y[order[k]]);
    }
    res.ensemble = fit(train_x, train_y, params);
    if (n_valid > 0) {
        std::vector<double> probs;
        std::vector<int> labels;
        for (size_t k = 0; k < n_valid; ++k) {
            probs.push_back(res.ensemble.predict_proba(x[order[k]]));
            labels.push_back(y[order[k]]);
        }
        bool v0 = false, v1 = false;
        for (int v : labels) (v ? v1 : v0) = true;
        if (v0 && v1) res.validation = evaluate_binary(probs, labels);
    }
    return res;
}

void write_feature_csv(const std::vector<SentenceRecord>& records, const std::string& file) {
    std::ofstream os(file);
    if (!os) throw std::runtime_error("cannot write feature csv: " + file);
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    collect_features(records, x, y);
    for (int f = 0; f < kWindowVectorLen; ++f) os << 'f' << f << ',';
    os << "label\n";
    for (size_t i = 0; i < x.size(); ++i) {
        for (double v : x[i]) os << v << ',';
        os << y[i] << '\n';
    }
}

// ---- translator ---------------------------------------------------------------

namespace {

json config_to_json(const Seq2SeqConfig& cfg) {
    return json{{"input_vocab", cfg.input_vocab},
                {"output_vocab", cfg.output_vocab},
                {"embedding", cfg.embedding},
                {"attn_units", cfg.attn_units},
                {"max_input_len", cfg.max_input_len},
                {"max_output_len", cfg.max_output_len},
                {"dnc",
                 {{"memory_locations", cfg.dnc.memory_locations},
                  {"word_size", cfg.dnc.word_size},
                  {"read_heads", cfg.dnc.read_heads},
                  {"hidden", cfg.dnc.hidden},
                  {"input_size", cfg.dnc.input_size},
                  {"output_size", cfg.dnc.output_size}}}};
}

Seq2SeqConfig config_from_json(const json& j) {
    Seq2SeqConfig cfg;
    cfg.input_vocab = j.at("input_vocab");
    cfg.output_vocab = j.at("output_vocab");
    cfg.embedding = j.at("embedding");
    cfg.attn_units = j.at("attn_units");
    cfg.max_input_len = j.at("max_input_len");
    cfg.max_output_len = j.at("max_output_len");
    const json& d = j.at("dnc");
    cfg.dnc.memory_locations = d.at("memory_locations");
    cfg.dnc.word_size = d.at("word_size");
    cfg.dnc.read_heads = d.at("read_heads");
    cfg.dnc.hidden = d.at("hidden");
    cfg.dnc.input_size = d.at("input_size");
    cfg.dnc.output_size = d.at("output_size");
    return cfg;
}

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

std::vector<int> input_ids(const TranslatorModel& model, const std::vector<std::string>& symbols) {
    std::vector<int> ids;
    ids.reserve(symbols.size());
    size_t limit = static_cast<size_t>(model.cfg.max_input_len);
    for (size_t i = 0; i < symbols.size() && i < limit; ++i)
        ids.push_back(model.input_vocab.id(symbols[i]));
    return ids;
}

}  // namespace

void save_translator(const TranslatorModel& model, const std::string& basepath) {
    model.params.save(basepath + ".mnrm");
    model.input_vocab.save(basepath + ".in.vocab");
    model.output_vocab.save(basepath + ".out.vocab");
    std::ofstream os(basepath + ".json");
    if (!os) throw std::runtime_error("cannot write model config: " + basepath + ".json");
    os << config_to_json(model.cfg).dump(2) << '\n';
}

TranslatorModel load_translator(const std::string& basepath) {
    TranslatorModel model;
    std::ifstream is(basepath + ".json");
    if (!is) throw std::runtime_error("cannot read model config: " + basepath + ".json");
    json j;
    is >> j;
    model.cfg = config_from_json(j);
    model.input_vocab = Vocab::load(basepath + ".in.vocab");
    model.output_vocab = Vocab::load(basepath + ".out.vocab");
    model.params.load(basepath + ".mnrm");
    return model;
}

std::vector<TrainingPair> make_training_pairs(const std::vector<SentenceRecord>& records,
                                              std::size_t window) {
    std::vector<TrainingPair> pairs;
    for (const auto& rec : records) {
        std::vector<std::string> before_tokens;
        before_tokens.reserve(rec.tokens.size());
        for (const auto& t : rec.tokens) before_tokens.push_back(t.before);
        for (size_t i = 0; i < rec.tokens.size(); ++i) {
            const auto& t = rec.tokens[i];
            if (label_token(t.before, t.after) != TokenLabel::ToBeNormalized) continue;
            TrainingPair p;
            p.input_symbols = format_input(before_tokens, i, window);
            p.output_words = split_words(t.after);
            if (!p.output_words.empty()) pairs.push_back(std::move(p));
        }
    }
    return pairs;
}

TranslatorTrainResult train_translator(const std::vector<SentenceRecord>& records,
                                       const TrainConfig& cfg, TranslatorModel& model) {
    if (cfg.batch < 1 || cfg.max_steps < 1)
        throw std::invalid_argument("train_translator: batch and steps must be >= 1");
    std::vector<TrainingPair> pairs = make_training_pairs(records);
    TranslatorTrainResult res;

    model.cfg = cfg.model;
    for (const auto& p : pairs) {
        for (const auto& s : p.input_symbols) model.input_vocab.add(s);
        for (const auto& w : p.output_words) model.output_vocab.add(w);
    }
    model.cfg.input_vocab = model.input_vocab.size();
    model.cfg.output_vocab = model.output_vocab.size();
    model.cfg.dnc.input_size = model.cfg.embedding + model.cfg.annotation_dim();

    // Encode pairs to ids, dropping overlength examples.
    struct IdPair {
        std::vector<int> in, out;
    };
    std::vector<IdPair> data;
    for (const auto& p : pairs) {
        if (static_cast<Eigen::Index>(p.input_symbols.size()) > model.cfg.max_input_len ||
            static_cast<Eigen::Index>(p.output_words.size()) + 1 > model.cfg.max_output_len) {
            ++res.skipped_overlength;
            continue;
        }
        IdPair ip;
        for (const auto& s : p.input_symbols) ip.in.push_back(model.input_vocab.id(s));
        for (const auto& w : p.output_words) ip.out.push_back(model.output_vocab.id(w));
        ip.out.push_back(kEosId);
        data.push_back(std::move(ip));
    }
    if (data.empty()) throw std::runtime_error("train_translator: no trainable pairs");

    std::mt19937_64 rng(cfg.seed);
    seq2seq_init_params(model.params, model.cfg, rng);
    DncStepOptions opts;
    opts.zero_read_inputs = cfg.ablate_memory;
    AdamConfig adam = cfg.adam;

    std::uniform_int_distribution<size_t> pick(0, data.size() - 1);
    double window_loss = 0.0;
    std::int64_t window_n = 0;
    for (std::int64_t step = 1; step <= cfg.max_steps; ++step) {
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const IdPair& ip = data[pick(rng)];
            EncodeResult enc = encode(ip.in, model.params, model.cfg, opts);
            Tensor loss = decode_train(ip.out, enc.annotations, enc.state, model.params,
                                       model.cfg, opts);
            batch_loss += loss->value[0];
            backward(scale(loss, 1.0 / cfg.batch));
        }
        model.params.adam_step(adam);
        window_loss += batch_loss / cfg.batch;
        window_n += 1;
        res.steps_run = step;
        if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
            TrainLogEntry e{step, window_loss / window_n, std::exp(window_loss / window_n)};
            res.log.push_back(e);
            res.final_perplexity = e.perplexity;
            window_loss = 0.0;
            window_n = 0;
            if (!cfg.checkpoint_path.empty()) save_translator(model, cfg.checkpoint_path);
            if (cfg.stop_perplexity && e.perplexity < *cfg.stop_perplexity) break;
        }
    }
    return res;
}

// ---- two-stage inference and evaluation ----------------------------------------

namespace {

std::vector<std::string> translate_token(TranslatorModel& model,
                                         const std::vector<std::string>& tokens, size_t index,
                                         bool ablate) {
    DncStepOptions opts;
    opts.zero_read_inputs = ablate;
    std::vector<int> ids = input_ids(model, format_input(tokens, index));
    EncodeResult enc = encode(ids, model.params, model.cfg, opts);
    if (enc.annotations.len == 0) return {};
    std::vector<int> out = decode_greedy(enc.annotations, enc.state, model.params, model.cfg, opts);
    std::vector<std::string> words;
    for (int id : out)
        if (id >= 4) words.push_back(model.output_vocab.symbol(id));
    return words;
}

std::string join(const std::vector<std::string>& words, const char* sep) {
    std::string s;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) s += sep;
        s += words[i];
    }
    return s;
}

NormalizeResult normalize_impl(const std::vector<std::string>& tokens,
                               const TreeEnsemble& ensemble, TranslatorModel& translator,
                               double threshold, bool ablate) {
    NormalizeResult res;
    for (size_t i = 0; i < tokens.size(); ++i) {
        std::optional<std::string> prev =
            i > 0 ? std::optional<std::string>(tokens[i - 1]) : std::nullopt;
        std::optional<std::string> next =
            i + 1 < tokens.size() ? std::optional<std::string>(tokens[i + 1]) : std::nullopt;
        double p = ensemble.predict_proba(encode_token_window(prev, tokens[i], next));
        if (p >= threshold) {
            std::vector<std::string> words = translate_token(translator, tokens, i, ablate);
            if (words.empty()) {
                ++res.fallbacks;
                res.outputs.push_back(tokens[i]);
            } else {
                res.outputs.push_back(join(words, " "));
            }
        } else {
            res.outputs.push_back(tokens[i]);
        }
    }
    return res;
}

EvaluationReport evaluate_impl(const std::vector<SentenceRecord>& records,
                               const TreeEnsemble& ensemble, TranslatorModel& translator,
                               double threshold, bool ablate) {
    EvaluationReport report;
    for (const auto& rec : records) {
        std::vector<std::string> tokens;
        tokens.reserve(rec.tokens.size());
        for (const auto& t : rec.tokens) tokens.push_back(t.before);
        NormalizeResult nr = normalize_impl(tokens, ensemble, translator, threshold, ablate);
        report.translator_fallbacks += nr.fallbacks;
        for (size_t i = 0; i < rec.tokens.size(); ++i) {
            const auto& t = rec.tokens[i];
            const std::string& pred = nr.outputs[i];
            bool correct;
            std::string truth;
            if (t.after == "<self>") {
                truth = t.before;
                correct = pred == t.before;
            } else if (t.after == "sil") {
                // Silent punctuation: pass-through counts as correct.
                truth = t.before;
                correct = pred == t.before || pred == "sil";
            } else {
                truth = t.after;
                correct = pred == t.after;
            }
            auto& cls = report.per_class[t.semiotic_class];
            cls.count += 1;
            report.overall.count += 1;
            bool tbn = label_token(t.before, t.after) == TokenLabel::ToBeNormalized;
            if (tbn) report.to_be_normalized.count += 1;
            if (correct) {
                cls.correct += 1;
                report.overall.correct += 1;
                if (tbn) report.to_be_normalized.correct += 1;
            } else {
                report.mismatches.push_back(
                    {t.semiotic_class, join(format_input(tokens, i), ""), pred, truth});
            }
        }
    }
    return report;
}

}  // namespace

NormalizeResult normalize_sentence(const std::vector<std::string>& tokens,
                                   const TreeEnsemble& ensemble, TranslatorModel& translator,
                                   double threshold, bool ablate_memory) {
    return normalize_impl(tokens, ensemble, translator, threshold, ablate_memory);
}

EvaluationReport evaluate(const std::vector<SentenceRecord>& records, const TreeEnsemble& ensemble,
                          TranslatorModel& translator, double threshold) {
    return evaluate_impl(records, ensemble, translator, threshold, false);
}

EvaluationReport ablate_memory(const std::vector<SentenceRecord>& records,
                               const TreeEnsemble& ensemble, TranslatorModel& translator,
                               double threshold) {
    return evaluate_impl(records, ensemble, translator, threshold, true);
}

// ---- copy task -------------------------------------------------------------------

Seq2SeqConfig small_model_config(Eigen::Index input_vocab, Eigen::Index output_vocab) {
    Seq2SeqConfig cfg;
    cfg.input_vocab = input_vocab;
    cfg.output_vocab = output_vocab;
    cfg.embedding = 16;
    cfg.attn_units = 32;
    cfg.dnc.memory_locations = 32;
    cfg.dnc.word_size = 16;
    cfg.dnc.read_heads = 2;
    cfg.dnc.hidden = 128;
    cfg.dnc.output_size = 32;
    cfg.dnc.input_size = cfg.embedding + cfg.dnc.output_size;
    return cfg;
}

Seq2SeqConfig paper_model_config(Eigen::Index input_vocab, Eigen::Index output_vocab) {
    Seq2SeqConfig cfg;
    cfg.input_vocab = input_vocab;
    cfg.output_vocab = output_vocab;
    cfg.embedding = 32;
    cfg.attn_units = 256;
    cfg.dnc.memory_locations = 256;
    cfg.dnc.word_size = 64;
    cfg.dnc.read_heads = 5;
    cfg.dnc.hidden = 1024;
    cfg.dnc.output_size = 256;
    cfg.dnc.input_size = cfg.embedding + cfg.dnc.output_size;
    return cfg;
}

namespace {

std::vector<int> sample_sequence(std::mt19937_64& rng, const CopyTaskConfig& cfg) {
    std::uniform_int_distribution<int> len_dist(1, cfg.len_max);
    std::uniform_int_distribution<int> sym_dist(0, cfg.symbols - 1);
    std::vector<int> seq(static_cast<size_t>(len_dist(rng)));
    for (auto& s : seq) s = 4 + sym_dist(rng);  // ids after the reserved block
    return seq;
}

double probe_accuracy(TranslatorModel& model, const CopyTaskConfig& cfg, int sequences,
                      std::uint64_t seed, bool ablate) {
    std::mt19937_64 rng(seed);
    DncStepOptions opts;
    opts.zero_read_inputs = ablate;
    int correct = 0;
    for (int i = 0; i < sequences; ++i) {
        std::vector<int> seq = sample_sequence(rng, cfg);
        EncodeResult enc = encode(seq, model.params, model.cfg, opts);
        std::vector<int> out = decode_greedy(enc.annotations, enc.state, model.params, model.cfg,
                                             opts);
        if (out == seq) ++correct;
    }
    return static_cast<double>(correct) / sequences;
}

}  // namespace

CopyTaskResult copy_task_train(const CopyTaskConfig& cfg,
                               const std::function<void(const TrainLogEntry&)>& log) {
    CopyTaskResult res;
    TranslatorModel& model = res.model;
    // Symbols share one vocabulary on both sides.
    for (int s = 0; s < cfg.symbols; ++s) {
        model.input_vocab.add(std::to_string(s));
        model.output_vocab.add(std::to_string(s));
    }
    model.cfg = small_model_config(model.input_vocab.size(), model.output_vocab.size());

    std::mt19937_64 rng(cfg.seed);
    seq2seq_init_params(model.params, model.cfg, rng);
    AdamConfig adam;
    adam.lr = cfg.learning_rate;

    double window_loss = 0.0;
    std::int64_t window_n = 0;
    for (std::int64_t step = 1; step <= cfg.steps; ++step) {
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            std::vector<int> seq = sample_sequence(rng, cfg);
            std::vector<int> target = seq;
            target.push_back(kEosId);
            EncodeResult enc = encode(seq, model.params, model.cfg);
            Tensor loss = decode_train(target, enc.annotations, enc.state, model.params, model.cfg);
            batch_loss += loss->value[0];
            backward(scale(loss, 1.0 / cfg.batch));
        }
        model.params.adam_step(adam);
        window_loss += batch_loss / cfg.batch;
        window_n += 1;
        res.steps_run = step;
        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            TrainLogEntry e{step, window_loss / window_n, std::exp(window_loss / window_n)};
            if (log) log(e);
            window_loss = 0.0;
            window_n = 0;
            double acc = probe_accuracy(model, cfg, 200, cfg.seed + 1, false);
            if (acc >= cfg.stop_accuracy) break;
        }
    }
    return res;
}

double copy_task_accuracy(TranslatorModel& model, const CopyTaskConfig& cfg, int sequences,
                          std::uint64_t seed, bool ablate_memory) {
    return probe_accuracy(model, cfg, sequences, seed, ablate_memory);
}

}  // namespace memnorm
