#include "treeman/forest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "treeman/error.hpp"

namespace treeman::forest {

using nlohmann::json;

namespace {

constexpr int kEnsembleVersion = 1;
constexpr double kBaseProbability = 0.5;

struct Entry {
    double value;
    double grad;
    double hess;
};

// lo < t <= hi, so lo routes left and hi routes right.
double midpoint(double lo, double hi) {
    const double mid = lo + (hi - lo) / 2.0;
    return lo < mid ? mid : hi;
}

class Grower {
public:
    Grower(const tabular::FeatureTable& table, std::span<const double> grad, std::span<const double> hess,
           const TreeConfig& config)
        : table_(table), grad_(grad), hess_(hess), config_(config) {}

    std::vector<TreeNode> grow(std::vector<std::size_t> rows) {
        nodes_.clear();
        next_leaf_ = 0;
        build(rows, 0);
        return std::move(nodes_);
    }

private:
    int build(const std::vector<std::size_t>& rows, int depth) {
        const int index = static_cast<int>(nodes_.size());
        nodes_.emplace_back();

        SplitCandidate best;
        if (depth < config_.max_depth) best = find_best_split(table_, rows, grad_, hess_, config_);

        if (best.column < 0) {
            double g = 0.0;
            double h = 0.0;
            for (auto r : rows) {
                g += grad_[r];
                h += hess_[r];
            }
            nodes_[index].leaf_id = next_leaf_++;
            nodes_[index].weight = leaf_weight(g, h, config_);
            return index;
        }

        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (auto r : rows) {
            const auto& cell = table_.rows[r].cells[static_cast<std::size_t>(best.column)];
            const bool go_left = cell ? *cell < best.threshold : best.default_left;
            (go_left ? left : right).push_back(r);
        }
        nodes_[index].column = best.column;
        nodes_[index].threshold = best.threshold;
        nodes_[index].default_left = best.default_left;
        const int l = build(left, depth + 1);
        const int r = build(right, depth + 1);
        nodes_[index].left = l;
        nodes_[index].right = r;
        return index;
    }

    const tabular::FeatureTable& table_;
    std::span<const double> grad_;
    std::span<const double> hess_;
    const TreeConfig& config_;
    std::vector<TreeNode> nodes_;
    int next_leaf_ = 0;
};

void check_config(const TreeConfig& c) {
    if (c.max_depth < 0) throw Error("max_depth must be >= 0");
    if (!(c.l2_lambda >= 0.0)) throw Error("l2_lambda must be >= 0");
    if (!(c.min_child_weight >= 0.0)) throw Error("min_child_weight must be >= 0");
    if (!std::isfinite(c.learning_rate)) throw Error("learning_rate must be finite");
}

json node_to_json(const TreeNode& n) {
    if (n.is_leaf()) return {{"leaf", n.leaf_id}, {"weight", n.weight}};
    return {{"split", {{"column", n.column}, {"threshold", n.threshold}, {"default_left", n.default_left}}}};
}

int node_from_json(const json& list, std::size_t& pos, std::vector<TreeNode>& nodes) {
    if (pos >= list.size()) throw Error("ensemble file: truncated preorder node list");
    const json& j = list[pos++];
    const int index = static_cast<int>(nodes.size());
    nodes.emplace_back();
    if (j.contains("leaf")) {
        nodes[index].leaf_id = j.at("leaf").get<int>();
        nodes[index].weight = j.at("weight").get<double>();
        return index;
    }
    const json& s = j.at("split");
    nodes[index].column = s.at("column").get<int>();
    nodes[index].threshold = s.at("threshold").get<double>();
    nodes[index].default_left = s.at("default_left").get<bool>();
    const int l = node_from_json(list, pos, nodes);
    const int r = node_from_json(list, pos, nodes);
    nodes[index].left = l;
    nodes[index].right = r;
    return index;
}

}  // namespace

DecisionTree::DecisionTree(int label_index, std::vector<TreeNode> nodes)
    : label_index_(label_index), nodes_(std::move(nodes)) {
    if (nodes_.empty()) throw Error("decision tree needs at least one node");
    std::vector<int> leaf_ids;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        if (n.is_leaf()) {
            leaf_ids.push_back(n.leaf_id);
            continue;
        }
        const auto valid = [&](int child) {
            return child > static_cast<int>(i) && child < static_cast<int>(nodes_.size());
        };
        if (!valid(n.left) || !valid(n.right)) throw Error("decision tree node " + std::to_string(i) + " has invalid children");
    }
    std::sort(leaf_ids.begin(), leaf_ids.end());
    for (std::size_t i = 0; i < leaf_ids.size(); ++i) {
        if (leaf_ids[i] != static_cast<int>(i)) throw Error("decision tree leaf ids are not 0..k-1");
    }
    leaf_count_ = static_cast<int>(leaf_ids.size());
}

int DecisionTree::depth() const {
    std::function<int(int)> rec = [&](int i) -> int {
        const auto& n = nodes_[static_cast<std::size_t>(i)];
        return n.is_leaf() ? 0 : 1 + std::max(rec(n.left), rec(n.right));
    };
    return nodes_.empty() ? 0 : rec(0);
}

std::size_t DecisionTree::route(std::span<const tabular::Cell> row) const {
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
        const auto& n = nodes_[i];
        const auto col = static_cast<std::size_t>(n.column);
        if (col >= row.size()) throw Error("row has no column " + std::to_string(col));
        const bool go_left = row[col] ? *row[col] < n.threshold : n.default_left;
        i = static_cast<std::size_t>(go_left ? n.left : n.right);
    }
    return i;
}

double split_gain(double gl, double hl, double gr, double hr, double lambda) {
    const double g = gl + gr;
    const double h = hl + hr;
    return 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda));
}

double leaf_weight(double grad_sum, double hess_sum, const TreeConfig& config) {
    return -config.learning_rate * grad_sum / (hess_sum + config.l2_lambda);
}

SplitCandidate find_best_split(const tabular::FeatureTable& table, std::span<const std::size_t> rows,
                               std::span<const double> grad, std::span<const double> hess,
                               const TreeConfig& config) {
    SplitCandidate best;
    std::vector<Entry> entries;
    entries.reserve(rows.size());

    for (std::size_t c = 0; c < table.width(); ++c) {
        entries.clear();
        double g_missing = 0.0;
        double h_missing = 0.0;
        for (auto r : rows) {
            const auto& cell = table.rows[r].cells[c];
            if (cell) {
                entries.push_back({*cell, grad[r], hess[r]});
            } else {
                g_missing += grad[r];
                h_missing += hess[r];
            }
        }
        if (entries.size() < 2) continue;
        std::stable_sort(entries.begin(), entries.end(),
                         [](const Entry& a, const Entry& b) { return a.value < b.value; });

        double g_total = 0.0;
        double h_total = 0.0;
        for (const auto& e : entries) {
            g_total += e.grad;
            h_total += e.hess;
        }

        double gl = 0.0;
        double hl = 0.0;
        for (std::size_t k = 0; k + 1 < entries.size(); ++k) {
            gl += entries[k].grad;
            hl += entries[k].hess;
            if (!(entries[k].value < entries[k + 1].value)) continue;
            const double gr = g_total - gl;
            const double hr = h_total - hl;
            const double threshold = midpoint(entries[k].value, entries[k + 1].value);

            for (const bool default_left : {true, false}) {
                const double gl_d = default_left ? gl + g_missing : gl;
                const double hl_d = default_left ? hl + h_missing : hl;
                const double gr_d = default_left ? gr : gr + g_missing;
                const double hr_d = default_left ? hr : hr + h_missing;
                if (hl_d < config.min_child_weight || hr_d < config.min_child_weight) continue;
                const double gain = split_gain(gl_d, hl_d, gr_d, hr_d, config.l2_lambda);
                if (gain > best.gain) best = {static_cast<int>(c), threshold, default_left, gain};
            }
        }
    }
    return best;
}

DecisionTree train_tree(const tabular::FeatureTable& table, std::span<const int> targets, const TreeConfig& config,
                        int label_index) {
    check_config(config);
    if (table.rows.empty()) throw Error("cannot train a tree on an empty table");
    if (targets.size() != table.rows.size())
        throw Error("target count " + std::to_string(targets.size()) + " != row count " +
                    std::to_string(table.rows.size()));

    const double p0 = kBaseProbability;
    std::vector<double> grad(targets.size());
    std::vector<double> hess(targets.size(), p0 * (1.0 - p0));
    int positives = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] != 0 && targets[i] != 1) throw Error("targets must be 0 or 1");
        positives += targets[i];
        grad[i] = p0 - targets[i];
    }

    std::vector<std::size_t> rows(table.rows.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});

    TreeConfig effective = config;
    if (positives < config.min_positives) effective.max_depth = 0;
    Grower grower(table, grad, hess, effective);
    return DecisionTree(label_index, grower.grow(std::move(rows)));
}

TreeEnsemble train_ensemble(const tabular::FeatureTable& table, std::span<const int> label_matrix,
                            std::size_t n_labels, const TreeConfig& config) {
    if (n_labels == 0) throw Error("cannot train an ensemble for zero labels");
    if (label_matrix.size() != table.rows.size() * n_labels)
        throw Error("label matrix has " + std::to_string(label_matrix.size()) + " entries, expected " +
                    std::to_string(table.rows.size()) + " x " + std::to_string(n_labels));
    TreeEnsemble ensemble;
    ensemble.config = config;
    ensemble.n_columns = table.width();
    std::vector<int> column(table.rows.size());
    for (std::size_t l = 0; l < n_labels; ++l) {
        for (std::size_t r = 0; r < table.rows.size(); ++r) column[r] = label_matrix[r * n_labels + l];
        ensemble.trees.push_back(train_tree(table, column, config, static_cast<int>(l)));
    }
    return ensemble;
}

LeafAssignment assign_leaves(const TreeEnsemble& ensemble, std::span<const tabular::Cell> row) {
    if (row.size() != ensemble.n_columns)
        throw Error("row width " + std::to_string(row.size()) + " != ensemble width " +
                    std::to_string(ensemble.n_columns));
    LeafAssignment a;
    a.leaves.reserve(ensemble.trees.size());
    for (const auto& t : ensemble.trees) a.leaves.push_back(t.leaf_of(row));
    return a;
}

std::vector<int> leaf_offsets(const TreeEnsemble& ensemble) {
    if (ensemble.trees.empty()) throw Error("empty ensemble has no leaf offsets");
    std::vector<int> offsets;
    offsets.reserve(ensemble.trees.size());
    int acc = 0;
    for (const auto& t : ensemble.trees) {
        offsets.push_back(acc);
        acc += t.leaf_count();
    }
    return offsets;
}

int total_leaves(const TreeEnsemble& ensemble) {
    int acc = 0;
    for (const auto& t : ensemble.trees) acc += t.leaf_count();
    return acc;
}

std::vector<int> multi_hot(const TreeEnsemble& ensemble, const LeafAssignment& assignment) {
    if (assignment.leaves.size() != ensemble.trees.size()) throw Error("assignment length != tree count");
    std::vector<int> q(static_cast<std::size_t>(total_leaves(ensemble)), 0);
    const auto offsets = leaf_offsets(ensemble);
    for (std::size_t t = 0; t < assignment.leaves.size(); ++t) {
        const int leaf = assignment.leaves[t];
        if (leaf < 0 || leaf >= ensemble.trees[t].leaf_count()) throw Error("leaf index out of range");
        q[static_cast<std::size_t>(offsets[t] + leaf)] = 1;
    }
    return q;
}

double predict_margin(const DecisionTree& tree, std::span<const tabular::Cell> row) {
    return tree.nodes()[tree.route(row)].weight;
}

double predict_probability(const DecisionTree& tree, std::span<const tabular::Cell> row) {
    const double base_margin = std::log(kBaseProbability / (1.0 - kBaseProbability));
    return 1.0 / (1.0 + std::exp(-(base_margin + predict_margin(tree, row))));
}

std::string ensemble_to_text(const TreeEnsemble& ensemble) {
    json trees = json::array();
    for (const auto& t : ensemble.trees) {
        json nodes = json::array();
        for (const auto& n : t.nodes()) nodes.push_back(node_to_json(n));
        trees.push_back({{"label_index", t.label_index()}, {"leaf_count", t.leaf_count()}, {"nodes", nodes}});
    }
    const auto& c = ensemble.config;
    json doc = {{"format", "treeman-ensemble"},
                {"version", kEnsembleVersion},
                {"config",
                 {{"max_depth", c.max_depth},
                  {"learning_rate", c.learning_rate},
                  {"l2_lambda", c.l2_lambda},
                  {"min_child_weight", c.min_child_weight},
                  {"min_positives", c.min_positives}}},
                {"n_columns", ensemble.n_columns},
                {"trees", trees}};
    return doc.dump(1) + "\n";
}

TreeEnsemble ensemble_from_text(const std::string& text) {
    const json doc = io::parse(text, "ensemble");
    io::check_format(doc, "treeman-ensemble", kEnsembleVersion);
    TreeEnsemble e;
    const json& c = doc.at("config");
    e.config.max_depth = c.at("max_depth").get<int>();
    e.config.learning_rate = c.at("learning_rate").get<double>();
    e.config.l2_lambda = c.at("l2_lambda").get<double>();
    e.config.min_child_weight = c.at("min_child_weight").get<double>();
    e.config.min_positives = c.at("min_positives").get<int>();
    e.n_columns = doc.at("n_columns").get<std::size_t>();
    for (const auto& t : doc.at("trees")) {
        std::vector<TreeNode> nodes;
        std::size_t pos = 0;
        const json& list = t.at("nodes");
        node_from_json(list, pos, nodes);
        if (pos != list.size()) throw Error("ensemble file: trailing nodes after preorder tree");
        DecisionTree tree(t.at("label_index").get<int>(), std::move(nodes));
        if (tree.leaf_count() != t.at("leaf_count").get<int>()) throw Error("ensemble file: leaf_count mismatch");
        for (const auto& n : tree.nodes()) {
            if (!n.is_leaf() && static_cast<std::size_t>(n.column) >= e.n_columns)
                throw Error("ensemble file: split column out of range");
        }
        e.trees.push_back(std::move(tree));
    }
    return e;
}

void write_ensemble(const TreeEnsemble& ensemble, const std::filesystem::path& path) {
    io::write_file(path, ensemble_to_text(ensemble));
}

TreeEnsemble read_ensemble(const std::filesystem::path& path) { return ensemble_from_text(io::read_file(path)); }

}  // namespace treeman::forest
