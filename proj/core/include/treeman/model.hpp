#pragma once

/**
 * Tree-enhanced multimodal attention network.
 *
 *   tokens -> word embeddings -> BiLSTM -> H (N x d_h)
 *   leaf assignment -> per-tree leaf embeddings -> L (d_l x |T|)
 *   fuse:   q_i = W_q h_i,  alpha_i = softmax(T^T q_i),  s_i = L alpha_i,
 *           m_i = W_o [h_i || s_i]                       -> M (N x d_m)
 *   label attention: A = softmax_tokens(M U),  V = A^T M  (|L| x d_m)
 *   output: yhat_l = sigmoid(w_l . v_l + b_l), trained with summed BCE.
 *
 * The average / maxpool ablations replace alpha-weighting with a column mean
 * or column max of L; text_only passes H through unchanged.
 */

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "treeman/autodiff.hpp"
#include "treeman/forest.hpp"
#include "treeman/metrics.hpp"

namespace treeman::model {

enum class FusionMode { attention, average, maxpool, text_only };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& s);

struct ModelDims {
    std::size_t vocab_size = 0;
    std::size_t d_e = 100;
    std::size_t d_lstm = 128;
    std::size_t d_t = 128;
    std::size_t d_l = 30;
    std::size_t n_labels = 0;
    // Leaf count of each tree; empty when no tree features are used.
    std::vector<int> leaf_counts;

    std::size_t d_h() const { return 2 * d_lstm; }
    std::size_t d_m() const { return d_h(); }
    std::size_t n_trees() const { return leaf_counts.size(); }

    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct LstmParams {
    ad::Tensor w_input;      // 4*d_lstm x d_e, gate blocks [input, forget, cell, output]
    ad::Tensor w_recurrent;  // 4*d_lstm x d_lstm
    ad::Tensor bias;         // [4*d_lstm]
};

struct ModelParams {
    ModelDims dims;
    ad::Tensor word_embeddings;  // |V| x d_e
    LstmParams lstm_forward;
    LstmParams lstm_backward;
    ad::Tensor w_query;          // d_t x d_h
    ad::Tensor tree_embeddings;  // d_t x |T|
    ad::Tensor leaf_embeddings;  // total leaves x d_l; tree t owns rows [offset_t, offset_t + leaf_count_t)
    std::vector<int> leaf_offsets;
    ad::Tensor w_out;            // d_m x (d_h + d_l)
    ad::Tensor label_queries;    // U: d_m x |L|
    ad::Tensor label_weights;    // |L| x d_m
    ad::Tensor label_bias;       // [|L|]

    // Random initialization: uniform(-0.1, 0.1) embeddings, Glorot-uniform
    // weight matrices, zero biases except +1 on the LSTM forget gates.
    static ModelParams initialize(const ModelDims& dims, std::uint64_t seed);

    // Stable name -> tensor listing; tree-side arrays are omitted when
    // dims.n_trees() == 0.
    std::vector<std::pair<std::string, ad::Tensor>> named() const;
    // Arrays that receive gradients under `mode`.
    std::vector<ad::Tensor> trainable(FusionMode mode) const;

    // Deep copy (tensors are shared handles).
    ModelParams clone() const;
};

struct EncodedDoc {
    std::string admission_id;
    std::vector<int> token_ids;
};

struct Example {
    EncodedDoc doc;
    forest::LeafAssignment leaves;
    std::vector<int> labels;  // 0/1 per label
};

// Overwrites rows of the word embedding table, e.g. from pretrained vectors.
void set_word_embedding(ModelParams& params, int token_id, std::span<const double> vector);

ad::Tensor encode_text(ad::Tape& tape, const EncodedDoc& doc, const ModelParams& params);

// d_l x |T|; column t is the activated leaf row of tree t.
ad::Tensor assemble_leaf_matrix(ad::Tape& tape, const forest::LeafAssignment& assignment,
                                const ModelParams& params);

struct FusionOutput {
    ad::Tensor m;      // N x d_m
    ad::Tensor alpha;  // N x |T|, attention mode only
};

FusionOutput fuse(ad::Tape& tape, const ad::Tensor& h, const ad::Tensor& leaf_matrix,
                  const ModelParams& params, FusionMode mode);

struct LabelAttentionOutput {
    ad::Tensor attention;  // N x |L|, each column sums to 1
    ad::Tensor v;          // |L| x d_m
};

LabelAttentionOutput label_attention(ad::Tape& tape, const ad::Tensor& m, const ad::Tensor& u);

// [|L|] probabilities.
ad::Tensor predict(ad::Tape& tape, const ad::Tensor& v, const ModelParams& params);

struct ForwardResult {
    ad::Tensor h;
    ad::Tensor leaf_matrix;
    FusionOutput fusion;
    LabelAttentionOutput label_attention;
    ad::Tensor yhat;
};

ForwardResult forward(ad::Tape& tape, const ModelParams& params, const Example& example,
                      FusionMode mode);

// Summed BCE loss for one example.
ad::Tensor example_loss(ad::Tape& tape, const ModelParams& params, const Example& example,
                        FusionMode mode);

std::vector<double> predict_probs(const ModelParams& params, const Example& example, FusionMode mode);

metrics::PredictionBatch predict_batch(const ModelParams& params, std::span<const Example> examples,
                                       FusionMode mode);

struct TrainConfig {
    FusionMode fusion = FusionMode::attention;
    std::string optimizer = "adam";  // "adam" | "sgd"
    ad::AdamHyper adam;
    int epochs = 10;
    std::size_t batch_size = 1;
    double clip_norm = 5.0;
    std::uint64_t seed = 42;
    double threshold = metrics::kDefaultThreshold;
    int metric_k = 5;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;  // mean per-example loss over the epoch
    metrics::MetricReport validation;
};

struct TrainResult {
    ModelParams best;
    int best_epoch = 0;
    double best_val_micro_f1 = -1.0;
    std::vector<EpochLog> log;
};

// Seeded shuffled passes with one optimizer step per batch. The returned
// parameters are the epoch with the highest validation micro-F1 (earliest on
// ties). Throws on a non-finite loss.
TrainResult train(const ModelParams& initial, std::span<const Example> train_set,
                  std::span<const Example> validation_set, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

std::string epoch_log_header();
std::string epoch_log_row(const EpochLog& row);

// --- checkpoints ------------------------------------------------------------

struct Checkpoint {
    ModelParams params;
    std::map<std::string, std::string> metadata;
};

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                      const std::map<std::string, std::string>& metadata);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace treeman::model
