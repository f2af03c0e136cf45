#include "memnorm/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace memnorm {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double clip_prob(double p) {
    return std::min(1.0 - 1e-15, std::max(1e-15, p));
}

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

double leaf_term(double g, double h, double lambda) { return g * g / (h + lambda); }

// Per-feature value table: sorted unique values and per-row ranks, so split
// search is one histogram pass per node instead of a sort.
struct FeatureIndex {
    std::vector<std::vector<double>> uniques;    // per feature
    std::vector<std::vector<int>> ranks;         // [feature][row]
};

FeatureIndex build_index(const std::vector<std::vector<double>>& x) {
    size_t n = x.size(), f = x[0].size();
    FeatureIndex idx;
    idx.uniques.resize(f);
    idx.ranks.assign(f, std::vector<int>(n));
    std::vector<double> col(n);
    for (size_t j = 0; j < f; ++j) {
        for (size_t i = 0; i < n; ++i) col[i] = x[i][j];
        std::vector<double> u = col;
        std::sort(u.begin(), u.end());
        u.erase(std::unique(u.begin(), u.end()), u.end());
        idx.uniques[j] = u;
        for (size_t i = 0; i < n; ++i)
            idx.ranks[j][i] =
                static_cast<int>(std::lower_bound(u.begin(), u.end(), col[i]) - u.begin());
    }
    return idx;
}

}  // namespace

double Tree::predict(const std::vector<double>& row) const {
    int at = 0;
    while (!nodes[static_cast<size_t>(at)].is_leaf) {
        const TreeNode& nd = nodes[static_cast<size_t>(at)];
        at = row[static_cast<size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<size_t>(at)].weight;
}

double TreeEnsemble::predict_margin(const std::vector<double>& row) const {
    if (static_cast<int>(row.size()) != feature_count)
        throw std::invalid_argument("predict: row length " + std::to_string(row.size()) +
                                    " vs feature count " + std::to_string(feature_count));
    double m = base_score;
    for (const auto& t : trees) m += learning_rate * t.predict(row);
    return m;
}

double TreeEnsemble::predict_proba(const std::vector<double>& row) const {
    return sigmoid(predict_margin(row));
}

TreeEnsemble fit(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                 const GbdtParams& params) {
    if (features.empty() || labels.size() != features.size())
        throw std::invalid_argument("fit: empty data or label/row count mismatch");
    const size_t n = features.size();
    const size_t f = features[0].size();
    for (const auto& row : features)
        if (row.size() != f) throw std::invalid_argument("fit: ragged feature rows");

    TreeEnsemble ens;
    ens.learning_rate = params.learning_rate;
    ens.feature_count = static_cast<int>(f);
    double mean = 0.0;
    for (int y : labels) mean += y;
    mean /= static_cast<double>(n);
    double p0 = clip_prob(mean);
    ens.base_score = std::log(p0 / (1.0 - p0));
    if (mean == 0.0 || mean == 1.0) return ens;  // single class: base score only

    FeatureIndex idx = build_index(features);
    std::vector<double> margin(n, ens.base_score);
    std::vector<double> g(n), h(n);
    size_t max_u = 0;
    for (const auto& u : idx.uniques) max_u = std::max(max_u, u.size());
    std::vector<double> hist_g(max_u), hist_h(max_u);
    std::vector<int> hist_cnt(max_u);

    struct Work {
        int node;
        int depth;
        std::vector<size_t> rows;
    };

    for (int round = 0; round < params.estimators; ++round) {
        for (size_t i = 0; i < n; ++i) {
            double p = sigmoid(margin[i]);
            g[i] = p - labels[i];
            h[i] = p * (1.0 - p);
        }
        Tree tree;
        tree.nodes.emplace_back();
        std::vector<Work> stack;
        std::vector<size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        stack.push_back({0, 0, std::move(all)});
        while (!stack.empty()) {
            Work wk = std::move(stack.back());
            stack.pop_back();
            double gsum = 0.0, hsum = 0.0;
            for (size_t i : wk.rows) {
                gsum += g[i];
                hsum += h[i];
            }
            SplitChoice best;
            if (wk.depth < params.max_depth) {
                double parent_term = leaf_term(gsum, hsum, params.lambda);
                for (size_t j = 0; j < f; ++j) {
                    const auto& u = idx.uniques[j];
                    if (u.size() < 2) continue;
                    std::fill(hist_g.begin(), hist_g.begin() + u.size(), 0.0);
                    std::fill(hist_h.begin(), hist_h.begin() + u.size(), 0.0);
                    std::fill(hist_cnt.begin(), hist_cnt.begin() + u.size(), 0);
                    for (size_t i : wk.rows) {
                        int r = idx.ranks[j][i];
                        hist_g[static_cast<size_t>(r)] += g[i];
                        hist_h[static_cast<size_t>(r)] += h[i];
                        hist_cnt[static_cast<size_t>(r)] += 1;
                    }
                    double gl = 0.0, hl = 0.0;
                    int last = -1;
                    for (size_t r = 0; r < u.size(); ++r) {
                        if (hist_cnt[r] == 0) continue;
                        if (last >= 0) {
                            double hr = hsum - hl;
                            if (hl >= params.min_child_weight && hr >= params.min_child_weight) {
                                double gain = 0.5 * (leaf_term(gl, hl, params.lambda) +
                                                     leaf_term(gsum - gl, hr, params.lambda) -
                                                     parent_term) -
                                              params.gamma;
                                // Ties keep the first candidate: lowest
                                // feature index, then lowest threshold.
                                if (gain > 0.0 && gain > best.gain) {
                                    best.found = true;
                                    best.feature = static_cast<int>(j);
                                    best.threshold = 0.5 * (u[static_cast<size_t>(last)] + u[r]);
                                    best.gain = gain;
                                }
                            }
                        }
                        gl += hist_g[r];
                        hl += hist_h[r];
                        last = static_cast<int>(r);
                    }
                }
            }
            if (!best.found) {
                TreeNode& nd = tree.nodes[static_cast<size_t>(wk.node)];
                nd.is_leaf = true;
                nd.weight = -gsum / (hsum + params.lambda);
                for (size_t i : wk.rows) margin[i] += params.learning_rate * nd.weight;
                continue;
            }
            std::vector<size_t> left_rows, right_rows;
            for (size_t i : wk.rows) {
                if (features[i][static_cast<size_t>(best.feature)] < best.threshold)
                    left_rows.push_back(i);
                else
                    right_rows.push_back(i);
            }
            int left_id = static_cast<int>(tree.nodes.size());
            tree.nodes.emplace_back();
            int right_id = static_cast<int>(tree.nodes.size());
            tree.nodes.emplace_back();
            TreeNode& nd = tree.nodes[static_cast<size_t>(wk.node)];
            nd.is_leaf = false;
            nd.feature = best.feature;
            nd.threshold = best.threshold;
            nd.gain = best.gain;
            nd.left = left_id;
            nd.right = right_id;
            stack.push_back({right_id, wk.depth + 1, std::move(right_rows)});
            stack.push_back({left_id, wk.depth + 1, std::move(left_rows)});
        }
        ens.trees.push_back(std::move(tree));
    }
    return ens;
}

std::vector<std::pair<int, double>> feature_importance(const TreeEnsemble& ensemble) {
    std::vector<double> totals(static_cast<size_t>(ensemble.feature_count), 0.0);
    for (const auto& t : ensemble.trees)
        for (const auto& nd : t.nodes)
            if (!nd.is_leaf) totals[static_cast<size_t>(nd.feature)] += nd.gain;
    std::vector<std::pair<int, double>> out;
    for (size_t j = 0; j < totals.size(); ++j) out.emplace_back(static_cast<int>(j), totals[j]);
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

BinaryMetrics evaluate_binary(const std::vector<double>& probabilities,
                              const std::vector<int>& labels, double threshold) {
    if (probabilities.size() != labels.size() || labels.empty())
        throw std::invalid_argument("evaluate_binary: length mismatch or empty input");
    BinaryMetrics m;
    size_t n = labels.size();
    size_t n1 = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument("evaluate_binary: labels must be 0/1");
        n1 += static_cast<size_t>(y);
    }
    size_t n0 = n - n1;

    if (n0 > 0 && n1 > 0) {
        // Rank-statistic AUC with averaged ties.
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](size_t a, size_t b) { return probabilities[a] < probabilities[b]; });
        std::vector<double> rank(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && probabilities[order[j + 1]] == probabilities[order[i]]) ++j;
            double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
            for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
            i = j + 1;
        }
        double rank_sum = 0.0;
        for (size_t k = 0; k < n; ++k)
            if (labels[k] == 1) rank_sum += rank[k];
        m.auc = (rank_sum - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1)) /
                (static_cast<double>(n0) * static_cast<double>(n1));
    }

    size_t tp[2] = {0, 0}, fp[2] = {0, 0}, fn[2] = {0, 0};
    size_t correct = 0;
    for (size_t k = 0; k < n; ++k) {
        int pred = probabilities[k] >= threshold ? 1 : 0;
        if (pred == labels[k]) ++correct;
        for (int c : {0, 1}) {
            if (pred == c && labels[k] == c) ++tp[c];
            if (pred == c && labels[k] != c) ++fp[c];
            if (pred != c && labels[k] == c) ++fn[c];
        }
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    for (int c : {0, 1}) {
        m.precision[c] = tp[c] + fp[c] ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
        m.recall[c] = tp[c] + fn[c] ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
        m.f1[c] = m.precision[c] + m.recall[c] > 0
                      ? 2 * m.precision[c] * m.recall[c] / (m.precision[c] + m.recall[c])
                      : 0.0;
    }
    return m;
}

void save_ensemble(const TreeEnsemble& ensemble, std::ostream& os) {
    os << std::setprecision(17) << "gbdt " << ensemble.base_score << ' '
       << ensemble.learning_rate << ' ' << ensemble.feature_count << '\n';
    for (size_t t = 0; t < ensemble.trees.size(); ++t)
        for (size_t i = 0; i < ensemble.trees[t].nodes.size(); ++i) {
            const TreeNode& nd = ensemble.trees[t].nodes[i];
            os << t << ' ' << i << ' ' << (nd.is_leaf ? "leaf" : "split") << ' ' << nd.feature
               << ' ' << nd.threshold << ' ' << nd.left << ' ' << nd.right << ' '
               << (nd.is_leaf ? nd.weight : nd.gain) << '\n';
        }
}

void save_ensemble(const TreeEnsemble& ensemble, const std::string& file) {
    std::ofstream os(file);
    if (!os) throw std::runtime_error("cannot write ensemble: " + file);
    save_ensemble(ensemble, os);
}

TreeEnsemble load_ensemble(std::istream& is) {
    TreeEnsemble ens;
    std::string tag;
    if (!(is >> tag) || tag != "gbdt")
        throw std::runtime_error("ensemble file: missing gbdt header");
    if (!(is >> ens.base_score >> ens.learning_rate >> ens.feature_count))
        throw std::runtime_error("ensemble file: bad header");
    size_t t, i;
    std::string kind;
    TreeNode nd;
    double payload;
    while (is >> t >> i >> kind >> nd.feature >> nd.threshold >> nd.left >> nd.right >> payload) {
        while (ens.trees.size() <= t) ens.trees.emplace_back();
        auto& nodes = ens.trees[t].nodes;
        if (nodes.size() != i) throw std::runtime_error("ensemble file: node ids out of order");
        nd.is_leaf = kind == "leaf";
        nd.weight = nd.is_leaf ? payload : 0.0;
        nd.gain = nd.is_leaf ? 0.0 : payload;
        nodes.push_back(nd);
    }
    return ens;
}

TreeEnsemble load_ensemble_file(const std::string& file) {
    std::ifstream is(file);
    if (!is) throw std::runtime_error("cannot read ensemble: " + file);
    return load_ensemble(is);
}

}  // namespace memnorm
