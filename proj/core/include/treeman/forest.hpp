#pragma once

// One-vs-all depth-limited regression trees grown with a single second-order
// boosting round (logistic loss, base probability 0.5). Only the identity of the
// activated leaf is consumed downstream; weights exist for tree-quality checks.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "treeman/tabular.hpp"

namespace treeman::forest {

struct TreeConfig {
    int max_depth = 5;
    double learning_rate = 0.99;
    double l2_lambda = 1.0;
    double min_child_weight = 1.0;
    int min_positives = 10;

    friend bool operator==(const TreeConfig&, const TreeConfig&) = default;
};

// Preorder node array. Internal nodes route `value < threshold` to the left
// child and MISSING to the stored default side.
struct TreeNode {
    int column = -1;
    double threshold = 0.0;
    bool default_left = true;
    int left = -1;
    int right = -1;
    int leaf_id = -1;
    double weight = 0.0;

    bool is_leaf() const { return column < 0; }

    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class DecisionTree {
public:
    DecisionTree() = default;
    DecisionTree(int label_index, std::vector<TreeNode> nodes);

    int label_index() const { return label_index_; }
    int leaf_count() const { return leaf_count_; }
    int depth() const;
    const std::vector<TreeNode>& nodes() const { return nodes_; }

    // Index into nodes() of the leaf reached by `row`.
    std::size_t route(std::span<const tabular::Cell> row) const;
    int leaf_of(std::span<const tabular::Cell> row) const { return nodes_[route(row)].leaf_id; }

    friend bool operator==(const DecisionTree&, const DecisionTree&) = default;

private:
    int label_index_ = 0;
    std::vector<TreeNode> nodes_;
    int leaf_count_ = 0;
};

struct TreeEnsemble {
    std::vector<DecisionTree> trees;
    TreeConfig config;
    std::size_t n_columns = 0;

    std::size_t size() const { return trees.size(); }

    friend bool operator==(const TreeEnsemble&, const TreeEnsemble&) = default;
};

// Activated local leaf per tree; the multi-hot q has a 1 at
// leaf_offsets[t] + leaves[t] for every tree t.
struct LeafAssignment {
    std::vector<int> leaves;

    friend bool operator==(const LeafAssignment&, const LeafAssignment&) = default;
};

// Candidate split as evaluated by the greedy search.
struct SplitCandidate {
    int column = -1;
    double threshold = 0.0;
    bool default_left = true;
    double gain = 0.0;
};

// 0.5 * [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)]
double split_gain(double grad_left, double hess_left, double grad_right, double hess_right,
                  double lambda);

// -lr * G / (H + l)
double leaf_weight(double grad_sum, double hess_sum, const TreeConfig& config);

// Best split over `rows` (indices into table.rows) for the given per-row
// gradient statistics. Returns a candidate with column == -1 when no split
// clears min_child_weight with positive gain.
SplitCandidate find_best_split(const tabular::FeatureTable& table, std::span<const std::size_t> rows,
                               std::span<const double> grad, std::span<const double> hess,
                               const TreeConfig& config);

DecisionTree train_tree(const tabular::FeatureTable& table, std::span<const int> targets,
                        const TreeConfig& config, int label_index = 0);

// label_matrix is row-major rows x n_labels with 0/1 entries.
TreeEnsemble train_ensemble(const tabular::FeatureTable& table, std::span<const int> label_matrix,
                            std::size_t n_labels, const TreeConfig& config);

LeafAssignment assign_leaves(const TreeEnsemble& ensemble, std::span<const tabular::Cell> row);

std::vector<int> leaf_offsets(const TreeEnsemble& ensemble);
int total_leaves(const TreeEnsemble& ensemble);

// Multi-hot q over all global leaf ids.
std::vector<int> multi_hot(const TreeEnsemble& ensemble, const LeafAssignment& assignment);

double predict_margin(const DecisionTree& tree, std::span<const tabular::Cell> row);
double predict_probability(const DecisionTree& tree, std::span<const tabular::Cell> row);

std::string ensemble_to_text(const TreeEnsemble& ensemble);
TreeEnsemble ensemble_from_text(const std::string& text);
void write_ensemble(const TreeEnsemble& ensemble, const std::filesystem::path& path);
TreeEnsemble read_ensemble(const std::filesystem::path& path);

}  // namespace treeman::forest
