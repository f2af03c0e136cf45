// memnorm: two-stage text normalization (boosted-tree gate + DNC translator).
// One subcommand per pipeline stage, plus a synthetic copy-task harness.

#include "memnorm/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace memnorm;

namespace {

// Usage problems (bad flags, missing inputs) exit 2; runtime failures exit 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
    return buf;
}

void log(const std::string& msg) { std::cerr << timestamp() << " " << msg << "\n"; }

// Collects everything a run produced, then lands as one atomic JSON file.
class RunManifest {
public:
    RunManifest(std::string subcommand, std::string path)
        : path_(std::move(path)) {
        doc_["subcommand"] = std::move(subcommand);
        doc_["version"] = "memnorm 1.0.0";
        doc_["start"] = timestamp();
        doc_["outputs"] = json::array();
    }
    void config(json cfg) { doc_["config"] = std::move(cfg); }
    void seed(std::uint64_t s) { doc_["seed"] = s; }
    void output(const std::string& artifact) { doc_["outputs"].push_back(artifact); }
    void write() {
        doc_["end"] = timestamp();
        std::string tmp = path_ + ".tmp";
        {
            std::ofstream os(tmp);
            if (!os) throw std::runtime_error("cannot write manifest: " + path_);
            os << doc_.dump(2) << "\n";
        }
        fs::rename(tmp, path_);
    }

private:
    json doc_;
    std::string path_;
};

std::string resolve_data_dir(const std::string& flag) {
    std::string dir = flag;
    if (dir.empty()) {
        const char* env = std::getenv("MEMNORM_DATA");
        if (env) dir = env;
    }
    if (dir.empty()) throw UsageError("no data directory: pass --data or set MEMNORM_DATA");
    if (!fs::is_directory(dir)) throw UsageError("data directory not found: " + dir);
    return dir;
}

std::vector<SentenceRecord> load_training_corpus(const std::string& data_dir,
                                                 const std::string& lang,
                                                 std::uint64_t max_lines) {
    StandardSplit split = standard_splits(data_dir, lang);
    std::vector<SentenceRecord> records;
    LoadOptions opts;
    if (max_lines > 0) opts.max_lines = max_lines;
    for (const auto& file : split.train_files) {
        if (!fs::exists(file)) throw UsageError("training shard not found: " + file);
        load_tsv(file, [&](SentenceRecord&& r) { records.push_back(std::move(r)); }, nullptr,
                 opts);
        log("loaded " + file + " (" + std::to_string(records.size()) + " sentences so far)");
        if (max_lines > 0) break;  // a capped desk run reads one shard
    }
    return records;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << content;
}

json seq2seq_config_json(const Seq2SeqConfig& cfg) {
    return json{{"memory_locations", cfg.dnc.memory_locations},
                {"word_size", cfg.dnc.word_size},
                {"read_heads", cfg.dnc.read_heads},
                {"hidden", cfg.dnc.hidden},
                {"embedding", cfg.embedding},
                {"attn_units", cfg.attn_units},
                {"output_size", cfg.dnc.output_size},
                {"max_input_len", cfg.max_input_len},
                {"max_output_len", cfg.max_output_len}};
}

// ---- subcommands ----------------------------------------------------------

struct ClassifierArgs {
    std::string data, lang = "en", out = "classifier.gbdt";
    std::uint64_t seed = 42, max_lines = 0;
    GbdtParams gbdt;
};

int run_train_classifier(const ClassifierArgs& a) {
    RunManifest manifest("train-classifier", a.out + ".run.json");
    manifest.seed(a.seed);
    manifest.config(json{{"lang", a.lang},
                         {"estimators", a.gbdt.estimators},
                         {"eta", a.gbdt.learning_rate},
                         {"max_depth", a.gbdt.max_depth},
                         {"max_lines", a.max_lines}});
    std::string data = resolve_data_dir(a.data);
    auto records = load_training_corpus(data, a.lang, a.max_lines);
    log("training classifier on " + std::to_string(records.size()) + " sentences");
    auto result = train_classifier(records, a.gbdt, a.seed);
    save_ensemble(result.ensemble, a.out);
    manifest.output(a.out);

    json metrics{{"rows", result.rows}, {"single_class", result.single_class}};
    if (result.validation) {
        const BinaryMetrics& m = *result.validation;
        metrics["accuracy"] = m.accuracy;
        metrics["f1_to_be_normalized"] = m.f1[1];
        metrics["precision_to_be_normalized"] = m.precision[1];
        metrics["recall_to_be_normalized"] = m.recall[1];
        if (m.auc) metrics["auc"] = *m.auc;
    }
    std::string metrics_path = a.out + ".metrics.json";
    write_text(metrics_path, metrics.dump(2) + "\n");
    manifest.output(metrics_path);
    std::cout << metrics.dump(2) << "\n";
    manifest.write();
    return 0;
}

struct TranslatorArgs {
    std::string data, lang = "en", out = "translator", config = "small";
    std::int64_t steps = 1000;
    int batch = 16;
    std::uint64_t seed = 42, max_lines = 0;
    double lr = 1e-4;
    double stop_perplexity = 0.0;
};

int run_train_translator(const TranslatorArgs& a) {
    if (a.steps < 1) throw UsageError("steps >= 1");
    RunManifest manifest("train-translator", a.out + ".run.json");
    manifest.seed(a.seed);
    std::string data = resolve_data_dir(a.data);
    auto records = load_training_corpus(data, a.lang, a.max_lines);

    TrainConfig cfg;
    cfg.model = a.config == "paper" ? paper_model_config(4, 4) : small_model_config(4, 4);
    cfg.max_steps = a.steps;
    cfg.batch = a.batch;
    cfg.seed = a.seed;
    cfg.adam.lr = a.lr;
    cfg.checkpoint_path = a.out;
    if (a.stop_perplexity > 0) cfg.stop_perplexity = a.stop_perplexity;
    manifest.config(json{{"lang", a.lang},
                         {"config", a.config},
                         {"steps", a.steps},
                         {"batch", a.batch},
                         {"lr", a.lr},
                         {"model", seq2seq_config_json(cfg.model)}});
    log("config " + a.config + ": memory " + std::to_string(cfg.model.dnc.memory_locations) +
        "x" + std::to_string(cfg.model.dnc.word_size) + ", R=" +
        std::to_string(cfg.model.dnc.read_heads) + ", hidden=" +
        std::to_string(cfg.model.dnc.hidden));

    TranslatorModel model;
    auto result = train_translator(records, cfg, model);
    save_translator(model, a.out);
    for (const char* suffix : {".mnrm", ".in.vocab", ".out.vocab", ".json"})
        manifest.output(a.out + suffix);

    json loss_log = json::array();
    for (const auto& e : result.log)
        loss_log.push_back(
            json{{"step", e.step}, {"loss", e.mean_loss}, {"perplexity", e.perplexity}});
    std::string log_path = a.out + ".loss.json";
    write_text(log_path, loss_log.dump(2) + "\n");
    manifest.output(log_path);

    json summary{{"steps_run", result.steps_run},
                 {"final_perplexity", result.final_perplexity},
                 {"skipped_overlength", result.skipped_overlength}};
    std::cout << summary.dump(2) << "\n";
    manifest.write();
    return 0;
}

struct ModelsOnDisk {
    TreeEnsemble ensemble;
    TranslatorModel translator;
};

ModelsOnDisk load_models(const std::string& dir) {
    std::string cls = dir + "/classifier.gbdt";
    std::string trn = dir + "/translator";
    if (!fs::exists(cls)) throw UsageError("classifier model not found: " + cls);
    if (!fs::exists(trn + ".mnrm")) throw UsageError("translator model not found: " + trn + ".mnrm");
    return {load_ensemble_file(cls), load_translator(trn)};
}

struct NormalizeArgs {
    std::string models, in, out;
    double threshold = 0.5;
    bool ablate = false;
};

int run_normalize(const NormalizeArgs& a) {
    ModelsOnDisk models = load_models(a.models);
    std::ifstream file_in;
    if (!a.in.empty()) {
        file_in.open(a.in);
        if (!file_in) throw UsageError("input file not found: " + a.in);
    }
    std::istream& is = a.in.empty() ? std::cin : file_in;
    std::ostringstream result;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream tok(line);
        std::vector<std::string> tokens;
        std::string w;
        while (tok >> w) tokens.push_back(w);
        auto norm = normalize_sentence(tokens, models.ensemble, models.translator, a.threshold,
                                       a.ablate);
        for (size_t i = 0; i < norm.outputs.size(); ++i)
            result << (i ? " " : "") << norm.outputs[i];
        result << "\n";
    }
    if (a.out.empty()) {
        std::cout << result.str();
    } else {
        write_text(a.out, result.str());
    }
    return 0;
}

struct EvaluateArgs {
    std::string models, data, lang = "en", in, out = "evaluation";
    std::uint64_t max_lines = 0;
    double threshold = 0.5;
    bool ablate = false;
};

int run_evaluate(const EvaluateArgs& a) {
    RunManifest manifest("evaluate", a.out + ".run.json");
    manifest.seed(42);
    manifest.config(json{{"ablate_memory", a.ablate}, {"threshold", a.threshold}});
    ModelsOnDisk models = load_models(a.models);

    std::vector<SentenceRecord> records;
    if (!a.in.empty()) {
        if (!fs::exists(a.in)) throw UsageError("input corpus not found: " + a.in);
        records = load_tsv_all(a.in);
    } else {
        std::string data = resolve_data_dir(a.data);
        StandardSplit split = standard_splits(data, a.lang);
        if (!fs::exists(split.test_file))
            throw UsageError("test shard not found: " + split.test_file);
        LoadOptions opts;
        opts.max_lines = a.max_lines > 0 ? a.max_lines : split.test_lines;
        records = load_tsv_all(split.test_file, opts);
    }
    log("evaluating " + std::to_string(records.size()) + " sentences");

    EvaluationReport report =
        a.ablate ? ablate_memory(records, models.ensemble, models.translator, a.threshold)
                 : evaluate(records, models.ensemble, models.translator, a.threshold);

    write_text(a.out + ".json", report.to_json() + "\n");
    write_text(a.out + ".table.txt", report.to_table());
    write_text(a.out + ".mismatches.tsv", report.mismatches_tsv());
    for (const char* suffix : {".json", ".table.txt", ".mismatches.tsv"})
        manifest.output(a.out + suffix);
    std::cout << report.to_table();
    manifest.write();
    return 0;
}

struct UpsampleArgs {
    std::string rules, in, out;
};

std::vector<UpsampleRule> load_rules(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("rules file not found: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    std::string text = buf.str();
    std::vector<UpsampleRule> rules;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return rules;
    json doc = json::parse(text);
    for (const auto& item : doc) {
        UpsampleRule r;
        r.semiotic_class = item.at("class").get<std::string>();
        if (item.contains("unit")) r.unit = item["unit"].get<std::string>();
        if (item.contains("min_value")) r.min_value = item["min_value"].get<double>();
        r.target = item.at("target").get<std::uint64_t>();
        rules.push_back(std::move(r));
    }
    return rules;
}

int run_upsample(const UpsampleArgs& a) {
    if (!fs::exists(a.in)) throw UsageError("input corpus not found: " + a.in);
    fs::create_directories(a.out);
    RunManifest manifest("upsample", a.out + "/run.json");
    manifest.seed(42);
    manifest.config(json{{"rules", a.rules}, {"in", a.in}});

    auto records = load_tsv_all(a.in);
    auto rules = load_rules(a.rules);
    std::vector<RuleOutcome> outcomes;
    auto result = upsample(records, rules, &outcomes);

    std::string corpus_path = a.out + "/corpus.tsv";
    write_tsv(corpus_path, result);
    manifest.output(corpus_path);

    std::ostringstream lines;
    for (const auto& o : outcomes) {
        json entry{{"class", o.rule.semiotic_class},
                   {"target", o.rule.target},
                   {"count_before", o.count_before},
                   {"count_applied", o.count_applied},
                   {"count_after", o.count_after},
                   {"applied", o.applied}};
        if (o.rule.unit) entry["unit"] = *o.rule.unit;
        if (o.rule.min_value) entry["min_value"] = *o.rule.min_value;
        lines << entry.dump() << "\n";
    }
    std::string manifest_path = a.out + "/manifest.jsonl";
    write_text(manifest_path, lines.str());
    manifest.output(manifest_path);
    std::cout << lines.str();
    manifest.write();
    return 0;
}

struct CopyTaskArgs {
    int len_max = 8, symbols = 8, batch = 16;
    std::int64_t steps = 20000;
    std::uint64_t seed = 42;
    double lr = 1e-3;
    int eval_sequences = 1000;
    bool ablate = false;
    std::string out;
};

int run_copy_task(const CopyTaskArgs& a) {
    if (a.steps < 1) throw UsageError("steps >= 1");
    std::string manifest_path = (a.out.empty() ? std::string("copy-task") : a.out) + ".run.json";
    RunManifest manifest("copy-task", manifest_path);
    manifest.seed(a.seed);
    manifest.config(json{{"len_max", a.len_max},
                         {"symbols", a.symbols},
                         {"steps", a.steps},
                         {"batch", a.batch},
                         {"lr", a.lr},
                         {"ablate_memory", a.ablate}});
    CopyTaskConfig cfg;
    cfg.symbols = a.symbols;
    cfg.len_max = a.len_max;
    cfg.steps = a.steps;
    cfg.batch = a.batch;
    cfg.seed = a.seed;
    cfg.learning_rate = a.lr;

    auto result = copy_task_train(cfg, [](const TrainLogEntry& e) {
        log("step " + std::to_string(e.step) + " loss " + std::to_string(e.mean_loss) +
            " perplexity " + std::to_string(e.perplexity));
    });
    double accuracy =
        copy_task_accuracy(result.model, cfg, a.eval_sequences, a.seed + 1, false);
    json summary{{"steps_run", result.steps_run},
                 {"eval_sequences", a.eval_sequences},
                 {"accuracy", accuracy}};
    if (a.ablate) {
        summary["ablated_accuracy"] =
            copy_task_accuracy(result.model, cfg, a.eval_sequences, a.seed + 1, true);
    }
    if (!a.out.empty()) {
        save_translator(result.model, a.out);
        for (const char* suffix : {".mnrm", ".in.vocab", ".out.vocab", ".json"})
            manifest.output(a.out + suffix);
    }
    std::cout << summary.dump(2) << "\n";
    manifest.write();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memnorm: two-stage text normalization (classifier gate + DNC translator)"};
    app.require_subcommand(1);

    ClassifierArgs ca;
    auto* tc = app.add_subcommand("train-classifier", "Train the RemainSame/ToBeNormalized gate");
    tc->add_option("--data", ca.data, "Dataset directory (default: $MEMNORM_DATA)");
    tc->add_option("--lang", ca.lang, "Language: en or ru")->check(CLI::IsMember({"en", "ru"}));
    tc->add_option("--out", ca.out, "Output model file");
    tc->add_option("--seed", ca.seed, "Random seed");
    tc->add_option("--max-lines", ca.max_lines, "Cap on TSV lines read per shard (0 = all)");
    tc->add_option("--estimators", ca.gbdt.estimators, "Boosting rounds")
        ->default_val(ca.gbdt.estimators);
    tc->add_option("--eta", ca.gbdt.learning_rate, "Shrinkage");
    tc->add_option("--max-depth", ca.gbdt.max_depth, "Tree depth limit");
    tc->add_option("--min-child-weight", ca.gbdt.min_child_weight, "Minimum child hessian");
    tc->add_option("--lambda", ca.gbdt.lambda, "L2 on leaf weights");
    tc->add_option("--gamma", ca.gbdt.gamma, "Minimum split gain");

    TranslatorArgs ta;
    auto* tt = app.add_subcommand("train-translator", "Train the seq2seq-DNC translator");
    tt->add_option("--data", ta.data, "Dataset directory (default: $MEMNORM_DATA)");
    tt->add_option("--lang", ta.lang, "Language: en or ru")->check(CLI::IsMember({"en", "ru"}));
    tt->add_option("--out", ta.out, "Output model basepath");
    tt->add_option("--config", ta.config, "Model size preset")
        ->check(CLI::IsMember({"small", "paper"}));
    tt->add_option("--steps", ta.steps, "Training steps");
    tt->add_option("--batch", ta.batch, "Batch size");
    tt->add_option("--seed", ta.seed, "Random seed");
    tt->add_option("--lr", ta.lr, "Adam learning rate");
    tt->add_option("--max-lines", ta.max_lines, "Cap on TSV lines read per shard (0 = all)");
    tt->add_option("--stop-perplexity", ta.stop_perplexity, "Early-stop threshold (0 = off)");

    NormalizeArgs na;
    auto* nz = app.add_subcommand("normalize", "Normalize sentences from stdin or a file");
    nz->add_option("--models", na.models, "Directory with classifier.gbdt and translator.*")
        ->required();
    nz->add_option("--in", na.in, "Input file (default: stdin)");
    nz->add_option("--out", na.out, "Output file (default: stdout)");
    nz->add_option("--threshold", na.threshold, "Classifier decision threshold");
    nz->add_flag("--ablate-memory", na.ablate, "Zero the read vectors at the controller input");

    EvaluateArgs ea;
    auto* ev = app.add_subcommand("evaluate", "Score the pipeline on a labeled corpus");
    ev->add_option("--models", ea.models, "Directory with classifier.gbdt and translator.*")
        ->required();
    ev->add_option("--data", ea.data, "Dataset directory (default: $MEMNORM_DATA)");
    ev->add_option("--lang", ea.lang, "Language: en or ru")->check(CLI::IsMember({"en", "ru"}));
    ev->add_option("--in", ea.in, "Explicit TSV corpus (overrides --data)");
    ev->add_option("--out", ea.out, "Report basepath");
    ev->add_option("--max-lines", ea.max_lines, "Cap on TSV lines read (0 = standard)");
    ev->add_option("--threshold", ea.threshold, "Classifier decision threshold");
    ev->add_flag("--ablate-memory", ea.ablate, "Zero the read vectors at the controller input");

    UpsampleArgs ua;
    auto* up = app.add_subcommand("upsample", "Duplicate sentences with rare token kinds");
    up->add_option("--rules", ua.rules, "JSON rules file")->required();
    up->add_option("--in", ua.in, "Input corpus TSV")->required();
    up->add_option("--out", ua.out, "Output directory")->required();

    CopyTaskArgs cta;
    auto* cp = app.add_subcommand("copy-task", "Train and score the synthetic copy task");
    cp->add_option("--len-max", cta.len_max, "Maximum sequence length");
    cp->add_option("--symbols", cta.symbols, "Alphabet size");
    cp->add_option("--steps", cta.steps, "Training steps");
    cp->add_option("--batch", cta.batch, "Batch size");
    cp->add_option("--seed", cta.seed, "Random seed");
    cp->add_option("--lr", cta.lr, "Adam learning rate");
    cp->add_option("--eval-sequences", cta.eval_sequences, "Held-out sequences to score");
    cp->add_option("--out", cta.out, "Save the trained model at this basepath");
    cp->add_flag("--ablate-memory", cta.ablate, "Also score with zeroed read vectors");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // help text, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (tc->parsed()) return run_train_classifier(ca);
        if (tt->parsed()) return run_train_translator(ta);
        if (nz->parsed()) return run_normalize(na);
        if (ev->parsed()) return run_evaluate(ea);
        if (up->parsed()) return run_upsample(ua);
        if (cp->parsed()) return run_copy_task(cta);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
