#include "memnorm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace memnorm {

namespace fs = std::filesystem;

void load_tsv(const std::string& path, const std::function<void(SentenceRecord&&)>& sink,
              LoadStats* stats, const LoadOptions& opts) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open corpus file: " + path);
    SentenceRecord current;
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (opts.max_lines && line_no > *opts.max_lines) break;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && opts.blank_line_delimits) {
            if (!current.tokens.empty()) sink(std::move(current));
            current = {};
            continue;
        }
        std::vector<std::string> cols;
        size_t start = 0;
        while (true) {
            size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                cols.push_back(line.substr(start));
                break;
            }
            cols.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        // The released shards end sentences with a 2-column "<eos>" row;
        // a 3-column variant with empty after is accepted too.
        if (cols.size() >= 2 && cols[0] == "<eos>" && cols[1] == "<eos>") {
            if (!current.tokens.empty()) sink(std::move(current));
            current = {};
            continue;
        }
        if (cols.size() != 3)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 3 columns, got " +
                                     std::to_string(cols.size()));
        current.tokens.push_back({cols[0], cols[1], cols[2]});
    }
    // A sentence still open at EOF is incomplete; count it, don't emit it.
    if (!current.tokens.empty() && stats) stats->dangling_sentences += 1;
}

std::vector<SentenceRecord> load_tsv_all(const std::string& path, const LoadOptions& opts) {
    std::vector<SentenceRecord> out;
    load_tsv(path, [&](SentenceRecord&& r) { out.push_back(std::move(r)); }, nullptr, opts);
    return out;
}

void write_tsv(const std::string& path, const std::vector<SentenceRecord>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& rec : records) {
        for (const auto& t : rec.tokens)
            os << t.semiotic_class << '\t' << t.before << '\t' << t.after << '\n';
        os << "<eos>\t<eos>\n";
    }
}

StandardSplit standard_splits(const std::string& dataset_dir, const std::string& language) {
    int train_count;
    std::uint64_t test_lines;
    if (language == "en" || language == "english") {
        train_count = 2;
        test_lines = 100002;
    } else if (language == "ru" || language == "russian") {
        train_count = 4;
        test_lines = 100007;
    } else {
        throw std::invalid_argument("unknown language: " + language + " (expected en or ru)");
    }
    // Pure path construction; callers check existence so they can name
    // exactly the file that is missing.
    StandardSplit split;
    split.test_lines = test_lines;
    std::string lang = language.substr(0, 2);
    auto shard = [&](int i) {
        char name[40];
        std::snprintf(name, sizeof(name), "output-%05d-of-00100", i);
        return (fs::path(dataset_dir) / lang / name).string();
    };
    for (int i = 0; i < train_count; ++i) split.train_files.push_back(shard(i));
    split.test_file = shard(99);
    return split;
}

std::string measure_unit(const std::string& before) {
    // Trailing run with no ASCII digits, then trim spaces.
    size_t end = before.size();
    size_t start = end;
    while (start > 0 && !std::isdigit(static_cast<unsigned char>(before[start - 1]))) --start;
    std::string unit = before.substr(start, end - start);
    size_t a = unit.find_first_not_of(' ');
    if (a == std::string::npos) return "";
    size_t b = unit.find_last_not_of(' ');
    return unit.substr(a, b - a + 1);
}

std::optional<double> cardinal_value(const std::string& before) {
    std::string digits;
    bool negative = false;
    std::string body = before;
    if (!body.empty() && (body[0] == '-' || body[0] == '+')) {
        negative = body[0] == '-';
        body.erase(0, 1);
    }
    for (char c : body) {
        if (std::isdigit(static_cast<unsigned char>(c)))
            digits.push_back(c);
        else if (c != ',' && c != ' ' && c != '\xc2' && c != '\xa0')  // grouping chars incl. NBSP
            return std::nullopt;
    }
    if (digits.empty()) return std::nullopt;
    double v = 0.0;
    for (char c : digits) v = v * 10.0 + (c - '0');
    return negative ? -v : v;
}

bool rule_matches(const UpsampleRule& rule, const TokenEntry& token) {
    if (token.semiotic_class != rule.semiotic_class) return false;
    if (rule.unit) return measure_unit(token.before) == *rule.unit;
    if (rule.min_value) {
        auto v = cardinal_value(token.before);
        return v && *v > *rule.min_value;
    }
    return true;
}

std::uint64_t count_matches(const std::vector<SentenceRecord>& records, const UpsampleRule& rule) {
    std::uint64_t n = 0;
    for (const auto& rec : records)
        for (const auto& t : rec.tokens)
            if (rule_matches(rule, t)) ++n;
    return n;
}

std::vector<SentenceRecord> upsample(const std::vector<SentenceRecord>& records,
                                     const std::vector<UpsampleRule>& rules,
                                     std::vector<RuleOutcome>* outcomes) {
    std::vector<SentenceRecord> out = records;
    std::vector<RuleOutcome> local;
    for (const auto& rule : rules) {
        RuleOutcome oc;
        oc.rule = rule;
        // Matching is against the current corpus so rules compose.
        std::vector<size_t> matching;        // sentence index in `out`
        std::vector<std::uint64_t> per_sent; // matching tokens per sentence
        std::uint64_t count = 0;
        for (size_t i = 0; i < out.size(); ++i) {
            std::uint64_t m = 0;
            for (const auto& t : out[i].tokens)
                if (rule_matches(rule, t)) ++m;
            if (m) {
                matching.push_back(i);
                per_sent.push_back(m);
                count += m;
            }
        }
        oc.count_before = count;
        if (matching.empty() || count >= rule.target) {
            oc.count_applied = count;
            local.push_back(oc);
            continue;  // nothing to duplicate (or warning: no match)
        }
        size_t next = 0;
        while (count < rule.target) {
            out.push_back(out[matching[next]]);
            count += per_sent[next];
            next = (next + 1) % matching.size();
        }
        oc.count_applied = count;
        oc.applied = true;
        local.push_back(oc);
    }
    // Final counts come from a scan of the finished corpus so the manifest
    // is re-verifiable even when later rules duplicate earlier matches.
    for (auto& oc : local) oc.count_after = count_matches(out, oc.rule);
    if (outcomes)
        outcomes->insert(outcomes->end(), local.begin(), local.end());
    return out;
}

std::vector<UpsampleRule> rare_unit_rules(const std::vector<SentenceRecord>& records,
                                          std::uint64_t threshold, std::uint64_t target) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& rec : records)
        for (const auto& t : rec.tokens)
            if (t.semiotic_class == "MEASURE") {
                std::string u = measure_unit(t.before);
                if (!u.empty()) ++counts[u];
            }
    std::vector<UpsampleRule> rules;
    for (const auto& [unit, n] : counts)
        if (n < threshold) rules.push_back({"MEASURE", unit, std::nullopt, target});
    return rules;
}

}  // namespace memnorm
