#pragma once

// Dataset ingestion: 3-column TSV shards, standard train/test splits, and
// the sentence up-sampling procedure for rare token kinds.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace memnorm {

struct TokenEntry {
    std::string semiotic_class;
    std::string before;
    std::string after;
    bool operator==(const TokenEntry&) const = default;
};

struct SentenceRecord {
    std::vector<TokenEntry> tokens;
    bool operator==(const SentenceRecord&) const = default;
};

struct LoadStats {
    std::uint64_t dangling_sentences = 0;  // sentence still open at EOF
};

struct LoadOptions {
    bool blank_line_delimits = false;  // synthetic fixtures only
    std::optional<std::uint64_t> max_lines;
};

// Streams complete sentences from a TSV file. A row whose class and before
// columns are both "<eos>" terminates a sentence.
void load_tsv(const std::string& path, const std::function<void(SentenceRecord&&)>& sink,
              LoadStats* stats = nullptr, const LoadOptions& opts = {});

std::vector<SentenceRecord> load_tsv_all(const std::string& path, const LoadOptions& opts = {});

void write_tsv(const std::string& path, const std::vector<SentenceRecord>& records);

struct StandardSplit {
    std::vector<std::string> train_files;
    std::string test_file;
    std::uint64_t test_lines = 0;
};

// English: train shards 00000-00001, test = first 100,002 lines of shard
// 00099. Russian: train 00000-00003, test = first 100,007 lines.
StandardSplit standard_splits(const std::string& dataset_dir, const std::string& language);

struct UpsampleRule {
    std::string semiotic_class;
    std::optional<std::string> unit;       // MEASURE unit predicate
    std::optional<double> min_value;       // CARDINAL numeric predicate (strictly greater)
    std::uint64_t target = 0;
};

struct RuleOutcome {
    UpsampleRule rule;
    std::uint64_t count_before = 0;
    // Count when this rule stopped duplicating. Duplication halts as soon as
    // the target is reached, so when applied:
    //   target <= count_applied <= target + (densest matching sentence - 1).
    std::uint64_t count_applied = 0;
    // Count in the finished corpus (full re-scan). Later rules may duplicate
    // sentences that also match this rule, so count_after >= count_applied.
    std::uint64_t count_after = 0;
    bool applied = false;  // false: already at target or no matching sentence
};

// The unit of a MEASURE before-token: its maximal trailing segment with no
// digits, trimmed of surrounding spaces.
std::string measure_unit(const std::string& before);

// Numeric value of a cardinal before-token; handles comma/space grouping.
std::optional<double> cardinal_value(const std::string& before);

bool rule_matches(const UpsampleRule& rule, const TokenEntry& token);

// Appends duplicates of matching sentences (round-robin) until each rule's
// token count reaches its target. Originals are never mutated.
std::vector<SentenceRecord> upsample(const std::vector<SentenceRecord>& records,
                                     const std::vector<UpsampleRule>& rules,
                                     std::vector<RuleOutcome>* outcomes = nullptr);

std::uint64_t count_matches(const std::vector<SentenceRecord>& records, const UpsampleRule& rule);

// Rules replicating the rare-unit procedure: one rule per MEASURE unit seen
// fewer than `threshold` times, each targeting `target` occurrences.
std::vector<UpsampleRule> rare_unit_rules(const std::vector<SentenceRecord>& records,
                                          std::uint64_t threshold, std::uint64_t target);

}  // namespace memnorm
