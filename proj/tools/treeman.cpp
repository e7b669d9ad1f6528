// treeman: command line front end for the experiment harness.

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "treeman/error.hpp"
#include "treeman/harness.hpp"

namespace th = treeman::harness;

int main(int argc, char** argv) {
    CLI::App app{"Tree-enhanced multimodal attention network: data, training and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> data_dir;
    int repeats = 1;
    bool quiet = false;
    app.add_option("--config", config_path, "Flat JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Override the config seed");
    app.add_option("--out-dir", out_dir, "Override the output directory");
    app.add_option("--data-dir", data_dir, "Override the data directory");
    app.add_option("--repeats", repeats, "Seeds per setting for ablate/sweep (mean and stddev)")
        ->check(CLI::PositiveNumber);
    app.add_flag("-q,--quiet", quiet, "Suppress progress lines");

    auto* generate = app.add_subcommand("generate", "Write a seeded synthetic dataset into the data directory");
    std::string preset = "config";
    generate->add_option("--preset", preset, "Synthetic spec: 'config' (from the config file) or 'lift'")
        ->check(CLI::IsMember({"config", "lift"}));

    auto* featurize = app.add_subcommand("featurize", "Build the tabular schema and per-split feature tables");
    auto* train_trees = app.add_subcommand("train-trees", "Train one tree per label and write leaf assignments");
    auto* train = app.add_subcommand("train", "Run the full pipeline and evaluate on the test split");

    auto* eval = app.add_subcommand("eval", "Score a finished run against a data directory");
    std::string run_dir;
    std::string split_name = "test";
    eval->add_option("run_dir", run_dir, "Run directory written by 'train'")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--split", split_name, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));

    auto* ablate = app.add_subcommand("ablate", "Compare text_only, maxpool, average and attention fusion");

    auto* sweep = app.add_subcommand("sweep", "One run per value of tree_depth or leaf_dim");
    std::string axis;
    std::vector<double> values;
    sweep->add_option("axis", axis, "tree_depth | leaf_dim")->required()->check(CLI::IsMember({"tree_depth", "leaf_dim"}));
    sweep->add_option("values", values, "Values to sweep")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        th::ExperimentConfig config = config_path.empty() ? th::ExperimentConfig{} : th::ExperimentConfig::load(config_path);
        if (seed) config.seed = *seed;
        if (out_dir) config.out_dir = *out_dir;
        if (data_dir) config.data_dir = *data_dir;
        if (quiet) th::set_log_stream(nullptr);

        if (generate->parsed()) {
            const th::SyntheticSpec spec = preset == "lift" ? th::lift_spec() : config.synthetic;
            th::generate_synthetic(spec, config.seed, config.data_dir);
            std::cout << config.data_dir << "\n";
        } else if (featurize->parsed()) {
            std::cout << th::run_featurize(config).string() << "\n";
        } else if (train_trees->parsed()) {
            std::cout << th::run_train_trees(config).string() << "\n";
        } else if (train->parsed()) {
            const auto result = th::run_train(config);
            std::cout << treeman::metrics::to_key_value(result.test);
        } else if (eval->parsed()) {
            const std::string data = data_dir ? *data_dir : th::ExperimentConfig::load(std::filesystem::path(run_dir) / "config.json").data_dir;
            std::cout << treeman::metrics::to_key_value(th::run_eval(run_dir, data, split_name));
        } else if (ablate->parsed()) {
            const auto rows = th::run_ablation(config, repeats);
            std::cout << th::metrics_table_header() << "\n";
            for (const auto& row : rows) std::cout << th::metrics_table_row(treeman::model::to_string(row.mode), row.runs) << "\n";
        } else if (sweep->parsed()) {
            const auto parsed_axis = th::parse_sweep_axis(axis);
            const auto rows = th::run_sweep(config, parsed_axis, values, repeats);
            std::cout << th::metrics_table_header() << "\n";
            for (const auto& row : rows) {
                char label[48];
                std::snprintf(label, sizeof(label), "%s=%g", axis.c_str(), row.value);
                std::cout << th::metrics_table_row(label, row.runs) << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "treeman: " << e.what() << "\n";
        return EXIT_FAILURE;
    }
    return EXIT_SUCCESS;
}
