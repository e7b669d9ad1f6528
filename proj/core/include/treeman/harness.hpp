#pragma once

/**
 * Experiment harness: dataset files, vocabulary, seeded synthetic EHR
 * generation, splitting, and the train / eval / ablation / sweep pipelines.
 *
 * Every run is a function of (config, input files) only. Output directories are
 * named by seed, never by time, and always contain the exact config used.
 */

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "treeman/forest.hpp"
#include "treeman/metrics.hpp"
#include "treeman/model.hpp"
#include "treeman/tabular.hpp"

namespace treeman::harness {

// --- synthetic data ---------------------------------------------------------

enum class LabelSource { text, tabular, both };

std::string to_string(LabelSource s);
LabelSource parse_label_source(const std::string& s);

struct SyntheticSpec {
    std::size_t n_docs = 500;
    std::size_t n_labels = 50;
    std::size_t vocab_size = 300;
    std::size_t doc_len_min = 40;
    std::size_t doc_len_max = 80;
    std::size_t n_ts_classes = 8;
    std::size_t n_items = 40;
    std::size_t n_singletons = 2;
    // Per-label signal routing; an empty list cycles text, tabular, both.
    std::vector<LabelSource> sources;
    // Per-label strength in [0,1]; a single entry applies to every label.
    std::vector<double> strengths = {1.0};
    double mean_labels_per_doc = 5.7;
    std::size_t ngram_len = 3;

    LabelSource source(std::size_t label) const;
    double strength(std::size_t label) const;
    double label_prior() const { return mean_labels_per_doc / static_cast<double>(n_labels); }

    void validate() const;
};

// 128 documents (64 train / 32 val / 32 test under the lift split ratios),
// 8 labels of which 4 are tabular-source, 3 text-source and 1 needs both.
SyntheticSpec lift_spec();
inline constexpr std::array<double, 3> kLiftSplit = {0.5, 0.25, 0.25};

// Writes notes.jsonl, labels.jsonl, timeseries.jsonl, events.jsonl and
// singletons.jsonl into `dir`.
void generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& dir);

// --- dataset files ----------------------------------------------------------

struct Note {
    std::string admission_id;
    std::string text;
};

struct Dataset {
    std::filesystem::path dir;
    std::vector<Note> notes;
    std::map<std::string, std::vector<std::string>> labels;  // admission -> label names
    std::vector<std::string> label_names;                     // sorted universe

    const Note& note(const std::string& admission_id) const;
    std::vector<int> label_vector(const std::string& admission_id) const;
    std::vector<std::string> admission_ids() const;
};

Dataset load_dataset(const std::filesystem::path& dir);

// --- vocabulary -------------------------------------------------------------

// Lowercases and keeps only purely alphabetic whitespace-separated tokens.
std::vector<std::string> clean_tokens(std::string_view text);

class Vocabulary {
public:
    static constexpr int kUnk = 0;
    static constexpr std::string_view kUnkToken = "<unk>";

    // Ids: UNK first, then distinct cleaned tokens in lexicographic order.
    static Vocabulary build(std::span<const std::string> texts);

    int id(const std::string& token) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // One token per line.
    std::string to_text() const;
    static Vocabulary from_text(const std::string& text);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
};

// Truncates to max_len tokens; an empty document becomes a single UNK.
model::EncodedDoc encode_document(const Vocabulary& vocab, const Note& note, std::size_t max_len);

// word2vec text format: optional "<count> <dim>" header then "<word> v1 ... vd".
// Returns the number of vocabulary rows overwritten.
std::size_t load_pretrained_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                                       model::ModelParams& params);

// 64-bit FNV-1a, used to bind checkpoints to their vocabulary/schema/ensemble.
std::uint64_t fnv1a(std::string_view bytes);
std::string hash_hex(std::string_view bytes);

// --- splitting --------------------------------------------------------------

struct SplitManifest {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

SplitManifest split(std::span<const std::string> admission_ids, std::array<double, 3> ratios,
                    std::uint64_t seed);

void write_manifest(const SplitManifest& manifest, const std::filesystem::path& dir);
SplitManifest read_manifest(const std::filesystem::path& dir);

// --- configuration ----------------------------------------------------------

struct ExperimentConfig {
    std::string data_dir = "data";
    std::string embeddings_path;
    std::string out_dir = "runs";
    std::uint64_t seed = 42;

    std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};

    std::size_t d_e = 100;
    std::size_t d_lstm = 128;
    std::size_t d_t = 128;
    std::size_t d_l = 30;

    forest::TreeConfig tree;

    std::string optimizer = "adam";
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int epochs = 10;
    std::size_t batch_size = 1;
    double clip_norm = 5.0;

    model::FusionMode fusion = model::FusionMode::attention;
    int metric_k = 5;
    double threshold = 0.5;
    std::size_t max_len = 4000;

    SyntheticSpec synthetic;

    void validate() const;
    model::TrainConfig train_config() const;

    // Flat JSON object with every field; unknown keys are rejected on parse.
    std::string to_text() const;
    static ExperimentConfig from_text(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);
};

// --- pipelines --------------------------------------------------------------

// Progress lines (per stage and epoch) go here; nullptr silences them.
// Defaults to std::cerr.
void set_log_stream(std::ostream* stream);

struct PreparedData {
    Dataset dataset;
    SplitManifest manifest;
    Vocabulary vocab;
    std::optional<tabular::FeatureSchema> schema;
    std::optional<forest::TreeEnsemble> ensemble;
    tabular::FeatureTable train_features;
    tabular::FeatureTable val_features;
    tabular::FeatureTable test_features;
    std::vector<model::Example> train;
    std::vector<model::Example> val;
    std::vector<model::Example> test;
};

// Loads the data directory, splits with config.seed, builds the vocabulary and
// (unless the fusion mode is text_only) the feature schema, tree ensemble and
// leaf assignments.
PreparedData prepare(const ExperimentConfig& config);

struct RunResult {
    std::filesystem::path dir;
    metrics::MetricReport test;
    model::TrainResult training;
};

// Writes config.json, manifest files, vocab.txt, [schema.json, ensemble.json],
// checkpoint.json, train_log.csv, metrics.txt and metrics.json under
// config.out_dir/seed-<seed>.
RunResult run_train(const ExperimentConfig& config);

// Re-featurizes `split_name` of `data_dir` with the run's artifacts and
// scores it with the stored checkpoint. Refuses when the run's vocabulary,
// schema or ensemble no longer hash to the values recorded in the checkpoint.
metrics::MetricReport run_eval(const std::filesystem::path& run_dir, const std::filesystem::path& data_dir,
                               const std::string& split_name = "test");

struct AblationRow {
    model::FusionMode mode;
    std::vector<metrics::MetricReport> runs;  // one per repeat
};

// The four fusion modes on identical data, seeds and settings. Writes
// ablation.csv (mean over repeats) and ablation_runs.csv under
// config.out_dir/ablation.
std::vector<AblationRow> run_ablation(const ExperimentConfig& config, int repeats = 1);

enum class SweepAxis { tree_depth, leaf_dim };
std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepRow {
    double value = 0.0;
    std::vector<metrics::MetricReport> runs;
};

// One full run per value. Writes sweep_<axis>.txt (table) and
// sweep_<axis>.csv (plot data) under config.out_dir.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis, std::span<const double> values,
                                int repeats = 1);

// Schema + feature tables for every split.
std::filesystem::path run_featurize(const ExperimentConfig& config);
// Ensemble + per-split leaf assignments.
std::filesystem::path run_train_trees(const ExperimentConfig& config);

// Mean and sample standard deviation over repeats.
struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
};
MeanStd mean_std(std::span<const double> values);

std::string metrics_table_header();
std::string metrics_table_row(const std::string& name, std::span<const metrics::MetricReport> runs);

}  // namespace treeman::harness
