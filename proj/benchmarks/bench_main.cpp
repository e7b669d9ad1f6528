#include <benchmark/benchmark.h>

#include <random>

#include "treeman/forest.hpp"
#include "treeman/metrics.hpp"
#include "treeman/model.hpp"

using namespace treeman;

namespace {

tabular::FeatureTable make_table(std::size_t n, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::vector<tabular::Column> cols;
    for (std::size_t c = 0; c < w; ++c)
        cols.push_back({"f" + std::to_string(c), tabular::ColumnKind::singleton_numeric, "f" + std::to_string(c)});
    tabular::FeatureTable t;
    t.schema = tabular::FeatureSchema(cols, {});
    for (std::size_t r = 0; r < n; ++r) {
        tabular::FeatureRow row{"r" + std::to_string(r), {}};
        for (std::size_t c = 0; c < w; ++c) row.cells.push_back(rng() % 10 == 0 ? tabular::kMissing : tabular::Cell(z(rng)));
        t.rows.push_back(std::move(row));
    }
    return t;
}

void BM_TrainEnsemble(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const std::size_t n_labels = 8;
    const auto table = make_table(rows, 64, 1);
    std::mt19937_64 rng(2);
    std::vector<int> y(rows * n_labels);
    for (auto& v : y) v = rng() % 3 == 0;
    for (auto _ : state) benchmark::DoNotOptimize(forest::train_ensemble(table, y, n_labels, forest::TreeConfig{}));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_TrainEnsemble)->Arg(128)->Arg(1024);

struct ModelCase {
    model::ModelParams params;
    model::Example example;
};

ModelCase make_model(std::size_t n_tokens) {
    model::ModelDims d;
    d.vocab_size = 500;
    d.d_e = 32;
    d.d_lstm = 32;
    d.n_labels = 8;
    d.leaf_counts.assign(8, 16);
    ModelCase c{model::ModelParams::initialize(d, 3), {}};
    std::mt19937_64 rng(4);
    for (std::size_t i = 0; i < n_tokens; ++i) c.example.doc.token_ids.push_back(static_cast<int>(rng() % 500));
    for (int t = 0; t < 8; ++t) c.example.leaves.leaves.push_back(static_cast<int>(rng() % 16));
    for (int l = 0; l < 8; ++l) c.example.labels.push_back(static_cast<int>(rng() % 2));
    return c;
}

void BM_ForwardBackward(benchmark::State& state) {
    auto c = make_model(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        ad::Tape tape;
        const auto loss = model::example_loss(tape, c.params, c.example, model::FusionMode::attention);
        tape.backward(loss);
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_ForwardBackward)->Arg(50)->Arg(400);

void BM_Predict(benchmark::State& state) {
    auto c = make_model(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(model::predict_probs(c.params, c.example, model::FusionMode::attention));
}
BENCHMARK(BM_Predict)->Arg(400);

void BM_Auc(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = u(rng);
        y[i] = rng() % 2;
    }
    for (auto _ : state) benchmark::DoNotOptimize(metrics::auc(s, y));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);

}  // namespace
BENCHMARK_MAIN();
