#include "memnorm/corpus.hpp"
#include "memnorm/gbdt.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace memnorm;

namespace {

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

RunResult run_cli(const std::string& args) {
    std::string out = "cli_stdout.txt", err = "cli_stderr.txt";
    std::string cmd = std::string(MEMNORM_CLI_PATH) + " " + args + " > " + out + " 2> " + err;
    int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    std::remove(out.c_str());
    std::remove(err.c_str());
    return r;
}

// Lays out dir/en/output-0000{0,1}-of-00100 in the standard shard format.
void write_fixture_data(const fs::path& dir) {
    fs::create_directories(dir / "en");
    const char* words[10] = {"zero", "one", "two",   "three", "four",
                             "five", "six", "seven", "eight", "nine"};
    for (int shard = 0; shard < 2; ++shard) {
        std::ofstream os(dir / "en" / ("output-0000" + std::to_string(shard) + "-of-00100"));
        for (int s = 0; s < 30; ++s) {
            int d = (s * 7 + shard) % 10;
            os << "PLAIN\tthe\t<self>\n";
            os << "CARDINAL\t" << d << "\t" << words[d] << "\n";
            os << "PUNCT\t.\tsil\n";
            os << "<eos>\t<eos>\n";
        }
    }
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("--help exits 0 and names every subcommand") {
    RunResult r = run_cli("--help");
    CHECK(r.exit_code == 0);
    for (const char* sub : {"train-classifier", "train-translator", "normalize", "evaluate",
                            "upsample", "copy-task"})
        CHECK(r.out.find(sub) != std::string::npos);
}

TEST_CASE("unknown flag exits 2") {
    RunResult r = run_cli("--no-such-flag");
    CHECK(r.exit_code == 2);
    RunResult r2 = run_cli("copy-task --bogus");
    CHECK(r2.exit_code == 2);
}

TEST_CASE("no subcommand exits 2") {
    RunResult r = run_cli("");
    CHECK(r.exit_code == 2);
}

TEST_CASE("missing data dir exits 2 and names the path") {
    RunResult r = run_cli("train-classifier --data /no/such/dir/anywhere");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("/no/such/dir/anywhere") != std::string::npos);
}

TEST_CASE("train-translator rejects zero steps") {
    RunResult r = run_cli("train-translator --data /tmp --steps 0");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("steps >= 1") != std::string::npos);
}

TEST_CASE("train-classifier produces a loadable ensemble and a manifest") {
    TempDir data("memnorm_cli_data_test");
    write_fixture_data(data.path);
    TempDir work("memnorm_cli_work_test");
    std::string model = (work.path / "model.gbdt").string();
    RunResult r = run_cli("train-classifier --data " + data.path.string() +
                          " --estimators 5 --max-depth 3 --out " + model);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    TreeEnsemble ens = load_ensemble_file(model);
    CHECK(ens.trees.size() == 5);
    CHECK(ens.feature_count == 94);
    CHECK(fs::exists(model + ".metrics.json"));
    std::string manifest = slurp(model + ".run.json");
    CHECK(manifest.find("\"subcommand\": \"train-classifier\"") != std::string::npos);
    CHECK(manifest.find("\"seed\": 42") != std::string::npos);
    CHECK(manifest.find("model.gbdt") != std::string::npos);
}

TEST_CASE("upsample with empty rules reproduces the corpus") {
    TempDir work("memnorm_cli_upsample_test");
    std::string in = (work.path / "in.tsv").string();
    {
        std::ofstream os(in);
        os << "PLAIN\thello\t<self>\n<eos>\t<eos>\n";
        os << "MEASURE\t2 ch\ttwo chains\n<eos>\t<eos>\n";
    }
    std::string rules = (work.path / "rules.json").string();
    {
        std::ofstream os(rules);
        os << "[]\n";
    }
    std::string outdir = (work.path / "out").string();
    RunResult r = run_cli("upsample --rules " + rules + " --in " + in + " --out " + outdir);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    auto original = load_tsv_all(in);
    auto produced = load_tsv_all(outdir + "/corpus.tsv");
    CHECK(produced == original);
}

TEST_CASE("upsample applies rules from the file and writes the manifest") {
    TempDir work("memnorm_cli_upsample2_test");
    std::string in = (work.path / "in.tsv").string();
    {
        std::ofstream os(in);
        os << "MEASURE\t2 ch\ttwo chains\n<eos>\t<eos>\n";
        os << "PLAIN\tx\t<self>\n<eos>\t<eos>\n";
    }
    std::string rules = (work.path / "rules.json").string();
    {
        std::ofstream os(rules);
        os << R"([{"class": "MEASURE", "unit": "ch", "target": 4}])" << "\n";
    }
    std::string outdir = (work.path / "out").string();
    RunResult r = run_cli("upsample --rules " + rules + " --in " + in + " --out " + outdir);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    auto produced = load_tsv_all(outdir + "/corpus.tsv");
    UpsampleRule rule;
    rule.semiotic_class = "MEASURE";
    rule.unit = "ch";
    CHECK(count_matches(produced, rule) == 4);
    std::string manifest = slurp(outdir + "/manifest.jsonl");
    CHECK(manifest.find("\"count_after\":4") != std::string::npos);
}
