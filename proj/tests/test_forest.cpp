#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "split_oracle.hpp"
#include "treeman/error.hpp"
#include "treeman/forest.hpp"

using namespace treeman;
using namespace treeman::forest;
using tabular::Cell;
using tabular::kMissing;

namespace {

tabular::FeatureTable one_column(const std::vector<Cell>& xs) {
    tabular::FeatureTable t;
    t.schema = tabular::FeatureSchema({{"x", tabular::ColumnKind::singleton_numeric, "x"}}, {});
    for (std::size_t i = 0; i < xs.size(); ++i) t.rows.push_back({"r" + std::to_string(i), {xs[i]}});
    return t;
}

TreeConfig two_row_config() {
    TreeConfig c;
    c.max_depth = 1;
    c.min_child_weight = 0.0;
    c.min_positives = 1;
    return c;
}

}  // namespace

TEST_CASE("two-row depth-1 example") {
    const auto table = one_column({0.0, 1.0});
    const std::vector<int> y = {0, 1};
    const DecisionTree tree = train_tree(table, y, two_row_config());
    REQUIRE(tree.nodes().size() == 3);
    const TreeNode& root = tree.nodes()[0];
    CHECK(root.column == 0);
    CHECK(root.threshold > 0.0);
    CHECK(root.threshold <= 1.0);
    CHECK(tree.leaf_count() == 2);

    const std::vector<Cell> x0 = {0.0};
    const std::vector<Cell> x1 = {1.0};
    CHECK(tree.leaf_of(x0) == 0);
    CHECK(tree.leaf_of(x1) == 1);
    CHECK(predict_margin(tree, x0) == doctest::Approx(-0.396).epsilon(1e-12));
    CHECK(predict_margin(tree, x1) == doctest::Approx(0.396).epsilon(1e-12));
}

TEST_CASE("default min_child_weight blocks the two-row split") {
    TreeConfig c;
    c.min_positives = 1;
    const DecisionTree tree = train_tree(one_column({0.0, 1.0}), std::vector<int>{0, 1}, c);
    CHECK(tree.leaf_count() == 1);
}

TEST_CASE("constant targets give a single leaf") {
    const std::size_t n = 7;
    std::vector<Cell> xs;
    for (std::size_t i = 0; i < n; ++i) xs.push_back(double(i));
    TreeConfig c;
    c.min_positives = 0;
    const DecisionTree tree = train_tree(one_column(xs), std::vector<int>(n, 0), c);
    REQUIRE(tree.nodes().size() == 1);
    const double expected = -0.99 * (n * 0.5) / (n * 0.25 + 1.0);
    CHECK(tree.nodes()[0].weight == doctest::Approx(expected).epsilon(1e-12));
    CHECK(predict_probability(tree, std::vector<Cell>{0.0}) < 0.5);
}

TEST_CASE("min_positives forces a single leaf") {
    std::vector<Cell> xs;
    std::vector<int> y;
    for (int i = 0; i < 40; ++i) {
        xs.push_back(double(i));
        y.push_back(i < 8 ? 1 : 0);
    }
    const DecisionTree tree = train_tree(one_column(xs), y, TreeConfig{});
    CHECK(tree.leaf_count() == 1);
    TreeConfig loose;
    loose.min_positives = 8;
    CHECK(train_tree(one_column(xs), y, loose).leaf_count() > 1);
}

TEST_CASE("zero-weight leaf predicts the base probability") {
    TreeNode leaf;
    leaf.leaf_id = 0;
    DecisionTree tree(0, {leaf});
    CHECK(predict_probability(tree, std::vector<Cell>{1.0}) == 0.5);
}

TEST_CASE("split gain and leaf weight formulas") {
    CHECK(split_gain(0.5, 0.25, -0.5, 0.25, 1.0) == doctest::Approx(0.2));
    TreeConfig c;
    CHECK(leaf_weight(0.5, 0.25, c) == doctest::Approx(-0.396));
}

TEST_CASE("find_best_split matches exhaustive enumeration") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 19;
        const std::size_t w = 1 + rng() % 5;
        const auto table = oracle::random_table(rng, n, w);
        std::vector<int> y(n);
        for (auto& v : y) v = static_cast<int>(rng() % 2);
        TreeConfig c;
        c.min_child_weight = trial % 2 ? 1.0 : 0.0;
        c.l2_lambda = trial % 3 == 0 ? 0.5 : 1.0;

        std::vector<double> g(n), h(n, 0.25);
        for (std::size_t i = 0; i < n; ++i) g[i] = 0.5 - y[i];
        std::vector<std::size_t> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = i;

        const SplitCandidate got = find_best_split(table, rows, g, h, c);
        const SplitCandidate want = oracle::best_split(table, rows, g, h, c);
        INFO("trial " << trial);
        REQUIRE(got.column == want.column);
        if (want.column >= 0) {
            CHECK(got.threshold == want.threshold);
            CHECK(got.default_left == want.default_left);
            CHECK(got.gain == want.gain);
        }
    }
}

TEST_CASE("separable data is split exactly at depth 1") {
    std::vector<Cell> xs;
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) {
        xs.push_back(double(i));
        y.push_back(i >= 15 ? 1 : 0);
    }
    TreeConfig c;
    c.max_depth = 1;
    const auto tree = train_tree(one_column(xs), y, c);
    REQUIRE(tree.leaf_count() == 2);
    CHECK(tree.nodes()[0].threshold == 14.5);
    for (int i = 0; i < 30; ++i) CHECK(tree.leaf_of(std::vector<Cell>{double(i)}) == (i >= 15 ? 1 : 0));
}

TEST_CASE("missing values follow the learned default direction") {
    // Positives are MISSING or large; the missing rows should go right.
    std::vector<Cell> xs;
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) {
        xs.push_back(double(i));
        y.push_back(i >= 10 ? 1 : 0);
    }
    for (int i = 0; i < 10; ++i) {
        xs.push_back(kMissing);
        y.push_back(1);
    }
    TreeConfig c;
    c.max_depth = 1;
    const auto tree = train_tree(one_column(xs), y, c);
    REQUIRE(tree.leaf_count() == 2);
    CHECK_FALSE(tree.nodes()[0].default_left);
    const std::vector<Cell> missing = {kMissing};
    CHECK(tree.leaf_of(missing) == 1);
    CHECK(tree.leaf_of(missing) == tree.leaf_of(missing));
}

TEST_CASE("depth limit and preorder leaf ids") {
    std::mt19937_64 rng(5);
    const auto table = oracle::random_table(rng, 60, 4);
    std::vector<int> y(60);
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    for (int depth : {0, 1, 2, 3, 5}) {
        TreeConfig c;
        c.max_depth = depth;
        c.min_positives = 0;
        c.min_child_weight = 0.0;
        const auto tree = train_tree(table, y, c);
        CHECK(tree.depth() <= depth);
        int expected = 0;
        for (const auto& node : tree.nodes()) {
            if (node.is_leaf()) CHECK(node.leaf_id == expected++);
        }
        CHECK(expected == tree.leaf_count());
    }
}

TEST_CASE("ensemble: one tree per label, offsets, multi-hot") {
    std::mt19937_64 rng(9);
    const auto table = oracle::random_table(rng, 50, 3);
    const std::size_t n_labels = 4;
    std::vector<int> labels(50 * n_labels);
    for (std::size_t r = 0; r < 50; ++r) {
        labels[r * n_labels + 0] = table.rows[r].cells[0].value_or(0) > 2 ? 1 : 0;
        labels[r * n_labels + 1] = static_cast<int>(rng() % 2);
        labels[r * n_labels + 2] = 0;
        labels[r * n_labels + 3] = 1;
    }
    TreeConfig c;
    const auto ens = train_ensemble(table, labels, n_labels, c);
    REQUIRE(ens.size() == n_labels);
    CHECK(ens.trees[2].leaf_count() == 1);
    for (std::size_t l = 0; l < n_labels; ++l) CHECK(ens.trees[l].label_index() == static_cast<int>(l));

    // |L| = 1 reduces to train_tree.
    std::vector<int> col(50);
    for (std::size_t r = 0; r < 50; ++r) col[r] = labels[r * n_labels + 1];
    CHECK(train_ensemble(table, col, 1, c).trees[0] == train_tree(table, col, c));

    for (const auto& row : table.rows) {
        const auto a = assign_leaves(ens, row.cells);
        CHECK(a.leaves.size() == n_labels);
        const auto q = multi_hot(ens, a);
        int ones = 0;
        for (int v : q) ones += v;
        CHECK(ones == static_cast<int>(n_labels));
        CHECK(q.size() == static_cast<std::size_t>(total_leaves(ens)));
    }
    CHECK_THROWS_AS(assign_leaves(ens, std::vector<Cell>{1.0}), Error);
}

TEST_CASE("leaf offsets") {
    const auto leafy = [](int k) {
        std::vector<TreeNode> nodes;
        // Right-leaning chain with k leaves.
        for (int i = 0; i < k - 1; ++i) {
            TreeNode split;
            split.column = 0;
            split.threshold = double(i);
            nodes.push_back(split);
        }
        std::vector<TreeNode> pre;
        int leaf = 0;
        std::function<int(int)> build = [&](int i) -> int {
            const int idx = static_cast<int>(pre.size());
            if (i == k - 1) {
                TreeNode l;
                l.leaf_id = leaf++;
                pre.push_back(l);
                return idx;
            }
            pre.push_back(nodes[static_cast<std::size_t>(i)]);
            TreeNode l;
            l.leaf_id = leaf++;
            pre.push_back(l);
            pre[static_cast<std::size_t>(idx)].left = idx + 1;
            pre[static_cast<std::size_t>(idx)].right = build(i + 1);
            return idx;
        };
        build(0);
        return DecisionTree(0, pre);
    };
    TreeEnsemble ens;
    ens.n_columns = 1;
    ens.trees = {leafy(2), leafy(3), leafy(1)};
    CHECK(leaf_offsets(ens) == std::vector<int>{0, 2, 5});
    CHECK(total_leaves(ens) == 6);
    ens.trees = {leafy(4)};
    CHECK(leaf_offsets(ens) == std::vector<int>{0});
    ens.trees.clear();
    CHECK_THROWS_AS(leaf_offsets(ens), Error);

    ens.trees = {leafy(1), leafy(1)};
    const auto a = assign_leaves(ens, std::vector<Cell>{kMissing});
    CHECK(a.leaves == std::vector<int>{0, 0});
}

TEST_CASE("malformed trees are rejected") {
    TreeNode split;
    split.column = 0;
    split.left = 1;
    split.right = 5;
    TreeNode leaf;
    leaf.leaf_id = 0;
    CHECK_THROWS_AS(DecisionTree(0, {split, leaf}), Error);
    CHECK_THROWS_AS(DecisionTree(0, {}), Error);
}

TEST_CASE("ensemble serialization round trip is exact") {
    std::mt19937_64 rng(21);
    auto table = oracle::random_table(rng, 80, 5);
    // Non-representable thresholds exercise the text round trip.
    for (auto& row : table.rows)
        for (auto& cell : row.cells)
            if (cell) *cell = *cell / 3.0 + 1e-9;
    std::vector<int> labels(80 * 3);
    for (auto& v : labels) v = static_cast<int>(rng() % 2);
    TreeConfig c;
    c.min_positives = 2;
    const auto ens = train_ensemble(table, labels, 3, c);
    CHECK(ensemble_from_text(ensemble_to_text(ens)) == ens);

    const auto path = std::filesystem::temp_directory_path() / "treeman_test_forest" / "ensemble.json";
    write_ensemble(ens, path);
    CHECK(read_ensemble(path) == ens);
    std::filesystem::remove_all(path.parent_path());

    CHECK_THROWS_AS(ensemble_from_text("{\"format\":\"other\"}"), Error);
}
