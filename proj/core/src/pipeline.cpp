#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>

#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "treeman/error.hpp"
#include "treeman/harness.hpp"

namespace treeman::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ostream* g_log = &std::cerr;

void log_line(const std::string& line) {
    if (g_log) *g_log << line << '\n' << std::flush;
}

// Runs one pipeline stage, prefixing any failure with the stage name.
template <class F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw Error(std::string("stage '") + name + "' failed: " + e.what());
    }
}

const std::vector<std::string>& ids_of(const SplitManifest& m, const std::string& split_name) {
    if (split_name == "train") return m.train;
    if (split_name == "val") return m.val;
    if (split_name == "test") return m.test;
    throw Error("unknown split '" + split_name + "' (expected train|val|test)");
}

std::vector<model::Example> make_examples(const Dataset& ds, const Vocabulary& vocab,
                                          const std::vector<std::string>& ids, std::size_t max_len,
                                          const tabular::FeatureTable* features,
                                          const forest::TreeEnsemble* ensemble) {
    std::vector<model::Example> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        model::Example ex;
        ex.doc = encode_document(vocab, ds.note(ids[i]), max_len);
        ex.labels = ds.label_vector(ids[i]);
        if (ensemble) ex.leaves = forest::assign_leaves(*ensemble, features->rows.at(i).cells);
        out.push_back(std::move(ex));
    }
    return out;
}

tabular::FeatureTable featurize_split(const fs::path& dir, const std::vector<std::string>& ids,
                                      const tabular::FeatureSchema& schema) {
    const auto sets = tabular::read_record_sets(dir, ids);
    return tabular::apply_schema(sets, schema);
}

model::ModelDims dims_for(const ExperimentConfig& config, const PreparedData& data) {
    model::ModelDims dims;
    dims.vocab_size = data.vocab.size();
    dims.d_e = config.d_e;
    dims.d_lstm = config.d_lstm;
    dims.d_t = config.d_t;
    dims.d_l = config.d_l;
    dims.n_labels = data.dataset.label_names.size();
    if (data.ensemble) {
        for (const auto& t : data.ensemble->trees) dims.leaf_counts.push_back(t.leaf_count());
    }
    return dims;
}

std::string seed_dir_name(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// Means over the runs that define the metric; NaN when none do.
std::array<MeanStd, 5> summarize(std::span<const metrics::MetricReport> runs) {
    std::array<std::vector<double>, 5> cols;
    for (const auto& r : runs) {
        if (r.macro_auc) cols[0].push_back(*r.macro_auc);
        if (r.micro_auc) cols[1].push_back(*r.micro_auc);
        cols[2].push_back(r.macro_f1);
        cols[3].push_back(r.micro_f1);
        cols[4].push_back(r.precision_at_k);
    }
    std::array<MeanStd, 5> out;
    for (std::size_t i = 0; i < 5; ++i) {
        if (cols[i].empty()) {
            out[i] = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
        } else {
            out[i] = mean_std(cols[i]);
        }
    }
    return out;
}

std::string csv_number(double v) { return std::isnan(v) ? "nan" : metrics::format_double(v); }

std::string metric_columns(int k) {
    return "macro_auc,micro_auc,macro_f1,micro_f1,p_at_" + std::to_string(k);
}

std::string report_csv(const metrics::MetricReport& r) {
    const auto opt = [](const std::optional<double>& v) { return v ? metrics::format_double(*v) : std::string("nan"); };
    return opt(r.macro_auc) + "," + opt(r.micro_auc) + "," + metrics::format_double(r.macro_f1) + "," +
           metrics::format_double(r.micro_f1) + "," + metrics::format_double(r.precision_at_k);
}

}  // namespace

void set_log_stream(std::ostream* stream) { g_log = stream; }

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) throw Error("mean_std: no values");
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::string metrics_table_header() {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-12s %-19s %-19s %-19s %-19s %-19s", "name", "macro_auc", "micro_auc",
                  "macro_f1", "micro_f1", "p_at_k");
    return buf;
}

std::string metrics_table_row(const std::string& name, std::span<const metrics::MetricReport> runs) {
    const auto stats = summarize(runs);
    std::string out;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-12s", name.c_str());
    out += buf;
    for (const auto& s : stats) {
        if (std::isnan(s.mean)) {
            std::snprintf(buf, sizeof(buf), " %-19s", "nan");
        } else {
            std::snprintf(buf, sizeof(buf), " %.4f +- %.4f   ", s.mean, s.stddev);
        }
        out += buf;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

PreparedData prepare(const ExperimentConfig& config) {
    config.validate();
    PreparedData data;
    data.dataset = stage("load data", [&] { return load_dataset(config.data_dir); });
    data.manifest = stage("split", [&] {
        const auto ids = data.dataset.admission_ids();
        return split(ids, config.split_ratios, config.seed);
    });
    data.vocab = stage("build vocabulary", [&] {
        std::vector<std::string> texts;
        for (const auto& id : data.manifest.train) texts.push_back(data.dataset.note(id).text);
        return Vocabulary::build(texts);
    });
    log_line("prepare: " + std::to_string(data.dataset.notes.size()) + " notes, " +
             std::to_string(data.dataset.label_names.size()) + " labels, vocab " +
             std::to_string(data.vocab.size()));

    if (config.fusion != model::FusionMode::text_only) {
        stage("featurize", [&] {
            const auto train_sets = tabular::read_record_sets(config.data_dir, data.manifest.train);
            auto built = tabular::build_feature_table(train_sets);
            data.schema = built.schema;
            data.train_features = std::move(built.table);
            data.val_features = featurize_split(config.data_dir, data.manifest.val, *data.schema);
            data.test_features = featurize_split(config.data_dir, data.manifest.test, *data.schema);
        });
        data.ensemble = stage("train trees", [&] {
            const std::size_t n_labels = data.dataset.label_names.size();
            std::vector<int> y;
            y.reserve(data.manifest.train.size() * n_labels);
            for (const auto& id : data.manifest.train) {
                const auto v = data.dataset.label_vector(id);
                y.insert(y.end(), v.begin(), v.end());
            }
            return forest::train_ensemble(data.train_features, y, n_labels, config.tree);
        });
        log_line("prepare: " + std::to_string(data.schema->width()) + " tabular columns, " +
                 std::to_string(forest::total_leaves(*data.ensemble)) + " leaves over " +
                 std::to_string(data.ensemble->size()) + " trees");
    }

    stage("encode examples", [&] {
        const auto* ens = data.ensemble ? &*data.ensemble : nullptr;
        data.train = make_examples(data.dataset, data.vocab, data.manifest.train, config.max_len,
                                   &data.train_features, ens);
        data.val = make_examples(data.dataset, data.vocab, data.manifest.val, config.max_len, &data.val_features,
                                 ens);
        data.test = make_examples(data.dataset, data.vocab, data.manifest.test, config.max_len,
                                  &data.test_features, ens);
    });
    return data;
}

RunResult run_train(const ExperimentConfig& config) {
    config.validate();
    RunResult result;
    result.dir = fs::path(config.out_dir) / seed_dir_name(config.seed);
    io::write_file(result.dir / "config.json", config.to_text());

    const PreparedData data = prepare(config);
    const std::string vocab_text = data.vocab.to_text();
    std::map<std::string, std::string> metadata;
    stage("write artifacts", [&] {
        write_manifest(data.manifest, result.dir);
        io::write_file(result.dir / "vocab.txt", vocab_text);
        metadata["vocab_hash"] = hash_hex(vocab_text);
        if (data.schema) {
            const std::string schema_text = tabular::schema_to_text(*data.schema);
            io::write_file(result.dir / "schema.json", schema_text);
            metadata["schema_hash"] = hash_hex(schema_text);
        }
        if (data.ensemble) {
            const std::string ensemble_text = forest::ensemble_to_text(*data.ensemble);
            io::write_file(result.dir / "ensemble.json", ensemble_text);
            metadata["ensemble_hash"] = hash_hex(ensemble_text);
        }
        metadata["label_names"] = json(data.dataset.label_names).dump();
        metadata["fusion"] = model::to_string(config.fusion);
    });

    model::ModelParams initial = stage("initialize model", [&] {
        auto params = model::ModelParams::initialize(dims_for(config, data), config.seed);
        if (!config.embeddings_path.empty()) {
            const auto n = load_pretrained_embeddings(config.embeddings_path, data.vocab, params);
            log_line("initialize: " + std::to_string(n) + " pretrained word vectors");
        }
        return params;
    });

    std::string log_csv = model::epoch_log_header() + "\n";
    result.training = stage("train model", [&] {
        return model::train(initial, data.train, data.val, config.train_config(), [&](const model::EpochLog& row) {
            log_csv += model::epoch_log_row(row) + "\n";
            char buf[128];
            std::snprintf(buf, sizeof(buf), "epoch %d loss %.6f val_micro_f1 %.4f", row.epoch, row.train_loss,
                          row.validation.micro_f1);
            log_line(buf);
        });
    });
    metadata["best_epoch"] = std::to_string(result.training.best_epoch);

    stage("evaluate", [&] {
        io::write_file(result.dir / "train_log.csv", log_csv);
        model::write_checkpoint(result.dir / "checkpoint.json", result.training.best, metadata);
        const auto batch = model::predict_batch(result.training.best, data.test, config.fusion);
        result.test = metrics::evaluate(batch, config.threshold, config.metric_k);
        io::write_file(result.dir / "metrics.txt", metrics::to_key_value(result.test));
        io::write_file(result.dir / "metrics.json", metrics::to_json(result.test));
    });
    log_line("run " + result.dir.string() + ": test micro_f1 " + metrics::format_double(result.test.micro_f1));
    return result;
}

metrics::MetricReport run_eval(const fs::path& run_dir, const fs::path& data_dir, const std::string& split_name) {
    const ExperimentConfig config = ExperimentConfig::load(run_dir / "config.json");
    const model::Checkpoint ckpt = model::read_checkpoint(run_dir / "checkpoint.json");
    const auto meta = [&](const std::string& key) -> const std::string& {
        const auto it = ckpt.metadata.find(key);
        if (it == ckpt.metadata.end()) throw Error("checkpoint has no '" + key + "' entry");
        return it->second;
    };
    const auto check_hash = [&](const std::string& key, const std::string& text, const char* what) {
        if (hash_hex(text) != meta(key))
            throw Error(std::string(what) + " hash mismatch: " + hash_hex(text) + " != checkpoint " + meta(key) +
                        "; refusing to evaluate");
    };

    const std::string vocab_text = io::read_file(run_dir / "vocab.txt");
    check_hash("vocab_hash", vocab_text, "vocabulary");
    const Vocabulary vocab = Vocabulary::from_text(vocab_text);
    if (vocab.size() != ckpt.params.dims.vocab_size) throw Error("vocabulary size does not match checkpoint");

    const model::FusionMode mode = model::parse_fusion_mode(meta("fusion"));
    std::optional<tabular::FeatureSchema> schema;
    std::optional<forest::TreeEnsemble> ensemble;
    if (mode != model::FusionMode::text_only) {
        const std::string schema_text = io::read_file(run_dir / "schema.json");
        check_hash("schema_hash", schema_text, "schema");
        schema = tabular::schema_from_text(schema_text);
        const std::string ensemble_text = io::read_file(run_dir / "ensemble.json");
        check_hash("ensemble_hash", ensemble_text, "ensemble");
        ensemble = forest::ensemble_from_text(ensemble_text);
        if (ensemble->n_columns != schema->width()) throw Error("ensemble width does not match schema");
    }

    const Dataset ds = load_dataset(data_dir);
    if (json(ds.label_names).dump() != meta("label_names"))
        throw Error("label set of " + data_dir.string() + " does not match the checkpoint");
    const auto manifest = read_manifest(run_dir);
    const auto& ids = ids_of(manifest, split_name);

    tabular::FeatureTable features;
    if (schema) features = featurize_split(data_dir, ids, *schema);
    const auto examples =
        make_examples(ds, vocab, ids, config.max_len, &features, ensemble ? &*ensemble : nullptr);
    const auto batch = model::predict_batch(ckpt.params, examples, mode);
    return metrics::evaluate(batch, config.threshold, config.metric_k);
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& config, int repeats) {
    if (repeats <= 0) throw Error("repeats must be positive");
    const fs::path root = fs::path(config.out_dir) / "ablation";
    std::vector<AblationRow> rows;
    std::string runs_csv = "mode,seed," + metric_columns(config.metric_k) + "\n";
    for (auto mode : {model::FusionMode::text_only, model::FusionMode::maxpool, model::FusionMode::average,
                      model::FusionMode::attention}) {
        AblationRow row{mode, {}};
        for (int r = 0; r < repeats; ++r) {
            ExperimentConfig c = config;
            c.fusion = mode;
            c.seed = config.seed + static_cast<std::uint64_t>(r);
            c.out_dir = (root / model::to_string(mode)).string();
            log_line("ablation: " + model::to_string(mode) + " seed " + std::to_string(c.seed));
            row.runs.push_back(run_train(c).test);
            runs_csv += model::to_string(mode) + "," + std::to_string(c.seed) + "," + report_csv(row.runs.back()) + "\n";
        }
        rows.push_back(std::move(row));
    }

    std::string mean_csv = "mode," + metric_columns(config.metric_k) + "\n";
    std::string std_csv = mean_csv;
    std::string table = metrics_table_header() + "\n";
    for (const auto& row : rows) {
        const auto stats = summarize(row.runs);
        mean_csv += model::to_string(row.mode);
        std_csv += model::to_string(row.mode);
        for (const auto& s : stats) {
            mean_csv += "," + csv_number(s.mean);
            std_csv += "," + csv_number(s.stddev);
        }
        mean_csv += "\n";
        std_csv += "\n";
        table += metrics_table_row(model::to_string(row.mode), row.runs) + "\n";
    }
    io::write_file(root / "ablation.csv", mean_csv);
    io::write_file(root / "ablation_std.csv", std_csv);
    io::write_file(root / "ablation_runs.csv", runs_csv);
    io::write_file(root / "ablation.txt", table);
    return rows;
}

std::string to_string(SweepAxis axis) { return axis == SweepAxis::tree_depth ? "tree_depth" : "leaf_dim"; }

SweepAxis parse_sweep_axis(const std::string& s) {
    if (s == "tree_depth") return SweepAxis::tree_depth;
    if (s == "leaf_dim") return SweepAxis::leaf_dim;
    throw Error("unknown sweep axis '" + s + "' (expected tree_depth|leaf_dim)");
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis, std::span<const double> values,
                                int repeats) {
    if (values.empty()) throw Error("sweep: no values");
    if (repeats <= 0) throw Error("repeats must be positive");
    const std::string name = to_string(axis);
    for (double v : values) {
        const double lo = axis == SweepAxis::tree_depth ? 0.0 : 1.0;
        if (!(v >= lo) || v != std::floor(v) || v > 1e6)
            throw Error("sweep " + name + ": value " + format_value(v) + " is not a valid integer setting");
    }

    std::vector<SweepRow> rows;
    for (double v : values) {
        SweepRow row{v, {}};
        for (int r = 0; r < repeats; ++r) {
            ExperimentConfig c = config;
            if (axis == SweepAxis::tree_depth) {
                c.tree.max_depth = static_cast<int>(v);
            } else {
                c.d_l = static_cast<std::size_t>(v);
            }
            c.seed = config.seed + static_cast<std::uint64_t>(r);
            c.out_dir = (fs::path(config.out_dir) / ("sweep_" + name) / format_value(v)).string();
            log_line("sweep: " + name + "=" + format_value(v) + " seed " + std::to_string(c.seed));
            row.runs.push_back(run_train(c).test);
        }
        rows.push_back(std::move(row));
    }

    std::string csv = name;
    for (const char* m : {"macro_auc", "micro_auc", "macro_f1", "micro_f1", "p_at_k"})
        csv += std::string(",") + m + "," + m + "_std";
    csv += "\n";
    std::string table = metrics_table_header() + "\n";
    for (const auto& row : rows) {
        csv += format_value(row.value);
        for (const auto& s : summarize(row.runs)) csv += "," + csv_number(s.mean) + "," + csv_number(s.stddev);
        csv += "\n";
        table += metrics_table_row(name + "=" + format_value(row.value), row.runs) + "\n";
    }
    io::write_file(fs::path(config.out_dir) / ("sweep_" + name + ".csv"), csv);
    io::write_file(fs::path(config.out_dir) / ("sweep_" + name + ".txt"), table);
    return rows;
}

fs::path run_featurize(const ExperimentConfig& config) {
    ExperimentConfig c = config;
    if (c.fusion == model::FusionMode::text_only) c.fusion = model::FusionMode::attention;
    c.validate();
    const fs::path dir = fs::path(config.out_dir) / "features";
    const Dataset ds = stage("load data", [&] { return load_dataset(c.data_dir); });
    const SplitManifest manifest = stage("split", [&] { return split(ds.admission_ids(), c.split_ratios, c.seed); });
    stage("featurize", [&] {
        const auto built = tabular::build_feature_table(tabular::read_record_sets(c.data_dir, manifest.train));
        write_manifest(manifest, dir);
        tabular::write_schema(built.schema, dir / "schema.json");
        tabular::write_feature_table(built.table, dir / "features_train.jsonl");
        tabular::write_feature_table(featurize_split(c.data_dir, manifest.val, built.schema),
                                     dir / "features_val.jsonl");
        tabular::write_feature_table(featurize_split(c.data_dir, manifest.test, built.schema),
                                     dir / "features_test.jsonl");
    });
    return dir;
}

fs::path run_train_trees(const ExperimentConfig& config) {
    ExperimentConfig c = config;
    if (c.fusion == model::FusionMode::text_only) c.fusion = model::FusionMode::attention;
    const PreparedData data = prepare(c);
    const fs::path dir = fs::path(config.out_dir) / "trees";
    stage("write trees", [&] {
        write_manifest(data.manifest, dir);
        tabular::write_schema(*data.schema, dir / "schema.json");
        forest::write_ensemble(*data.ensemble, dir / "ensemble.json");
        const auto write_leaves = [&](const std::vector<model::Example>& examples, const char* file) {
            std::string out;
            for (const auto& ex : examples)
                out += json{{"admission_id", ex.doc.admission_id}, {"leaves", ex.leaves.leaves}}.dump() + "\n";
            io::write_file(dir / file, out);
        };
        write_leaves(data.train, "leaves_train.jsonl");
        write_leaves(data.val, "leaves_val.jsonl");
        write_leaves(data.test, "leaves_test.jsonl");
    });
    return dir;
}

}  // namespace treeman::harness
