#pragma once

// Gradient-boosted regression trees for binary classification under
// logistic loss, with exact greedy split search.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace memnorm {

struct TreeNode {
    bool is_leaf = true;
    int feature = -1;
    double threshold = 0.0;  // go left if value < threshold
    int left = -1;           // indices into the tree's node vector
    int right = -1;
    double weight = 0.0;     // leaf only
    double gain = 0.0;       // realized split gain (internal nodes)
};

struct Tree {
    std::vector<TreeNode> nodes;  // node 0 is the root
    double predict(const std::vector<double>& row) const;
};

struct GbdtParams {
    double learning_rate = 0.3;   // eta
    int max_depth = 6;
    double min_child_weight = 1.0;
    double lambda = 1.0;          // L2 on leaf weights
    double gamma = 0.0;           // minimum split gain
    int estimators = 361;         // English-model default
};

struct TreeEnsemble {
    std::vector<Tree> trees;
    double base_score = 0.0;  // log-odds
    double learning_rate = 0.3;
    int feature_count = 0;

    double predict_margin(const std::vector<double>& row) const;
    double predict_proba(const std::vector<double>& row) const;
};

TreeEnsemble fit(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                 const GbdtParams& params);

// Sum of realized split gains per feature, as (feature, gain) sorted by
// descending gain (ties by ascending feature index).
std::vector<std::pair<int, double>> feature_importance(const TreeEnsemble& ensemble);

struct BinaryMetrics {
    std::optional<double> auc;  // absent when labels are single-class
    // index 0: class 0 (RemainSame), index 1: class 1 (ToBeNormalized)
    double precision[2] = {0, 0};
    double recall[2] = {0, 0};
    double f1[2] = {0, 0};
    double accuracy = 0.0;
};

BinaryMetrics evaluate_binary(const std::vector<double>& probabilities,
                              const std::vector<int>& labels, double threshold = 0.5);

// Structured text serialization: a header line with base score, learning
// rate, and feature count, then one line per node.
void save_ensemble(const TreeEnsemble& ensemble, std::ostream& os);
void save_ensemble(const TreeEnsemble& ensemble, const std::string& file);
TreeEnsemble load_ensemble(std::istream& is);
TreeEnsemble load_ensemble_file(const std::string& file);

}  // namespace memnorm
