#include "treeman/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "treeman/error.hpp"

namespace treeman::model {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;
constexpr double kEmbeddingInitBound = 0.1;

// Each array draws from its own stream so that adding or resizing one array
// (e.g. the leaf table in a sweep) leaves every other initial value unchanged.
std::mt19937_64 array_rng(std::uint64_t seed, const std::string& name) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return std::mt19937_64(seq);
}

Tensor uniform(std::uint64_t seed, const std::string& name, Shape shape, double bound) {
    auto rng = array_rng(seed, name);
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(ad::shape_size(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor glorot(std::uint64_t seed, const std::string& name, std::size_t fan_out, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform(seed, name, {fan_out, fan_in}, bound);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor deep_copy(const Tensor& t) {
    if (!t.defined()) return {};
    const auto v = t.values();
    return Tensor::parameter(t.shape(), std::vector<double>(v.begin(), v.end()));
}

LstmParams init_lstm(std::uint64_t seed, const std::string& prefix, std::size_t d_in, std::size_t hidden) {
    LstmParams p;
    p.w_input = glorot(seed, prefix + ".w_input", 4 * hidden, d_in);
    p.w_recurrent = glorot(seed, prefix + ".w_recurrent", 4 * hidden, hidden);
    p.bias = zeros_param({4 * hidden});
    auto b = p.bias.values();
    std::fill(b.begin() + static_cast<std::ptrdiff_t>(hidden), b.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
    return p;
}

// One direction of the recurrence; `reverse` walks e_N .. e_1 but stores h_i
// at row i.
Tensor run_lstm(Tape& tape, const Tensor& x, const LstmParams& p, std::size_t hidden, bool reverse) {
    const std::size_t n = x.rows();
    const Tensor wx = ad::add_row(tape, ad::matmul(tape, x, ad::transpose(tape, p.w_input)), p.bias);
    const Tensor wh_t = ad::transpose(tape, p.w_recurrent);

    std::vector<Tensor> outputs(n);
    Tensor h;
    Tensor c;
    for (std::size_t step = 0; step < n; ++step) {
        const std::size_t t = reverse ? n - 1 - step : step;
        Tensor z = ad::slice(tape, wx, 0, t, t + 1);
        if (step > 0) z = ad::add(tape, z, ad::matmul(tape, h, wh_t));
        const Tensor in_gate = ad::sigmoid(tape, ad::slice(tape, z, 1, 0, hidden));
        const Tensor forget_gate = ad::sigmoid(tape, ad::slice(tape, z, 1, hidden, 2 * hidden));
        const Tensor cell_in = ad::tanh(tape, ad::slice(tape, z, 1, 2 * hidden, 3 * hidden));
        const Tensor out_gate = ad::sigmoid(tape, ad::slice(tape, z, 1, 3 * hidden, 4 * hidden));
        const Tensor fresh = ad::mul(tape, in_gate, cell_in);
        c = step == 0 ? fresh : ad::add(tape, ad::mul(tape, forget_gate, c), fresh);
        h = ad::mul(tape, out_gate, ad::tanh(tape, c));
        outputs[t] = h;
    }
    return ad::concat(tape, outputs, 0);
}

json dims_to_json(const ModelDims& d) {
    return {{"vocab_size", d.vocab_size}, {"d_e", d.d_e},           {"d_lstm", d.d_lstm},
            {"d_t", d.d_t},               {"d_l", d.d_l},           {"n_labels", d.n_labels},
            {"leaf_counts", d.leaf_counts}};
}

ModelDims dims_from_json(const json& j) {
    ModelDims d;
    d.vocab_size = j.at("vocab_size").get<std::size_t>();
    d.d_e = j.at("d_e").get<std::size_t>();
    d.d_lstm = j.at("d_lstm").get<std::size_t>();
    d.d_t = j.at("d_t").get<std::size_t>();
    d.d_l = j.at("d_l").get<std::size_t>();
    d.n_labels = j.at("n_labels").get<std::size_t>();
    d.leaf_counts = j.at("leaf_counts").get<std::vector<int>>();
    return d;
}

std::vector<int> offsets_of(const std::vector<int>& leaf_counts) {
    std::vector<int> offsets(leaf_counts.size());
    std::exclusive_scan(leaf_counts.begin(), leaf_counts.end(), offsets.begin(), 0);
    return offsets;
}

void check_finite(const Tensor& t, const std::string& what) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) throw Error("non-finite value in " + what);
    }
}

}  // namespace

std::string to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::attention: return "attention";
        case FusionMode::average: return "average";
        case FusionMode::maxpool: return "maxpool";
        case FusionMode::text_only: return "text_only";
    }
    return "unknown";
}

FusionMode parse_fusion_mode(const std::string& s) {
    for (auto m : {FusionMode::attention, FusionMode::average, FusionMode::maxpool, FusionMode::text_only}) {
        if (to_string(m) == s) return m;
    }
    throw Error("unknown fusion mode '" + s + "' (expected attention|average|maxpool|text_only)");
}

ModelParams ModelParams::initialize(const ModelDims& dims, std::uint64_t seed) {
    if (dims.vocab_size == 0 || dims.d_e == 0 || dims.d_lstm == 0 || dims.n_labels == 0)
        throw Error("model dims must be positive");
    for (int c : dims.leaf_counts) {
        if (c <= 0) throw Error("every tree needs at least one leaf");
    }
    ModelParams p;
    p.dims = dims;
    const std::size_t dh = dims.d_h();
    const std::size_t dm = dims.d_m();
    p.word_embeddings = uniform(seed, "word_embeddings", {dims.vocab_size, dims.d_e}, kEmbeddingInitBound);
    p.lstm_forward = init_lstm(seed, "lstm_forward", dims.d_e, dims.d_lstm);
    p.lstm_backward = init_lstm(seed, "lstm_backward", dims.d_e, dims.d_lstm);
    if (dims.n_trees() > 0) {
        if (dims.d_t == 0 || dims.d_l == 0) throw Error("d_t and d_l must be positive");
        const int total = std::accumulate(dims.leaf_counts.begin(), dims.leaf_counts.end(), 0);
        p.leaf_offsets = offsets_of(dims.leaf_counts);
        p.w_query = glorot(seed, "w_query", dims.d_t, dh);
        p.tree_embeddings = uniform(seed, "tree_embeddings", {dims.d_t, dims.n_trees()}, kEmbeddingInitBound);
        p.leaf_embeddings =
            uniform(seed, "leaf_embeddings", {static_cast<std::size_t>(total), dims.d_l}, kEmbeddingInitBound);
        p.w_out = glorot(seed, "w_out", dm, dh + dims.d_l);
    }
    p.label_queries = glorot(seed, "label_queries", dm, dims.n_labels);
    p.label_weights = uniform(seed, "label_weights", {dims.n_labels, dm}, std::sqrt(6.0 / static_cast<double>(dm + 1)));
    p.label_bias = zeros_param({dims.n_labels});
    return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out = {
        {"word_embeddings", word_embeddings},
        {"lstm_forward.w_input", lstm_forward.w_input},
        {"lstm_forward.w_recurrent", lstm_forward.w_recurrent},
        {"lstm_forward.bias", lstm_forward.bias},
        {"lstm_backward.w_input", lstm_backward.w_input},
        {"lstm_backward.w_recurrent", lstm_backward.w_recurrent},
        {"lstm_backward.bias", lstm_backward.bias},
    };
    if (dims.n_trees() > 0) {
        out.emplace_back("w_query", w_query);
        out.emplace_back("tree_embeddings", tree_embeddings);
        out.emplace_back("leaf_embeddings", leaf_embeddings);
        out.emplace_back("w_out", w_out);
    }
    out.emplace_back("label_queries", label_queries);
    out.emplace_back("label_weights", label_weights);
    out.emplace_back("label_bias", label_bias);
    return out;
}

std::vector<Tensor> ModelParams::trainable(FusionMode mode) const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named()) {
        if (mode == FusionMode::text_only &&
            (name == "w_query" || name == "tree_embeddings" || name == "leaf_embeddings" || name == "w_out"))
            continue;
        if ((mode == FusionMode::average || mode == FusionMode::maxpool) &&
            (name == "w_query" || name == "tree_embeddings"))
            continue;
        out.push_back(t);
    }
    return out;
}

ModelParams ModelParams::clone() const {
    ModelParams p;
    p.dims = dims;
    p.leaf_offsets = leaf_offsets;
    p.word_embeddings = deep_copy(word_embeddings);
    for (auto [dst, src] : {std::pair{&p.lstm_forward, &lstm_forward}, std::pair{&p.lstm_backward, &lstm_backward}}) {
        dst->w_input = deep_copy(src->w_input);
        dst->w_recurrent = deep_copy(src->w_recurrent);
        dst->bias = deep_copy(src->bias);
    }
    p.w_query = deep_copy(w_query);
    p.tree_embeddings = deep_copy(tree_embeddings);
    p.leaf_embeddings = deep_copy(leaf_embeddings);
    p.w_out = deep_copy(w_out);
    p.label_queries = deep_copy(label_queries);
    p.label_weights = deep_copy(label_weights);
    p.label_bias = deep_copy(label_bias);
    return p;
}

void set_word_embedding(ModelParams& params, int token_id, std::span<const double> vector) {
    const auto& e = params.word_embeddings;
    if (token_id < 0 || static_cast<std::size_t>(token_id) >= e.rows())
        throw Error("token id " + std::to_string(token_id) + " out of range");
    if (vector.size() != e.cols())
        throw Error("embedding has dimension " + std::to_string(vector.size()) + ", model expects " +
                    std::to_string(e.cols()));
    auto values = params.word_embeddings.values();
    std::copy(vector.begin(), vector.end(), values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(token_id) * e.cols()));
}

Tensor encode_text(Tape& tape, const EncodedDoc& doc, const ModelParams& params) {
    if (doc.token_ids.empty()) throw Error("document '" + doc.admission_id + "' has no tokens");
    for (int id : doc.token_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= params.dims.vocab_size)
            throw Error("document '" + doc.admission_id + "': token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(params.dims.vocab_size));
    }
    const Tensor x = ad::gather(tape, params.word_embeddings, doc.token_ids);
    const Tensor fwd = run_lstm(tape, x, params.lstm_forward, params.dims.d_lstm, false);
    const Tensor bwd = run_lstm(tape, x, params.lstm_backward, params.dims.d_lstm, true);
    return ad::concat(tape, {fwd, bwd}, 1);
}

Tensor assemble_leaf_matrix(Tape& tape, const forest::LeafAssignment& assignment, const ModelParams& params) {
    const auto& counts = params.dims.leaf_counts;
    if (assignment.leaves.size() != counts.size())
        throw Error("leaf assignment has " + std::to_string(assignment.leaves.size()) + " entries, model has " +
                    std::to_string(counts.size()) + " trees");
    std::vector<int> rows(counts.size());
    for (std::size_t t = 0; t < counts.size(); ++t) {
        const int leaf = assignment.leaves[t];
        if (leaf < 0 || leaf >= counts[t])
            throw Error("leaf " + std::to_string(leaf) + " out of range for tree " + std::to_string(t) + " with " +
                        std::to_string(counts[t]) + " leaves");
        rows[t] = params.leaf_offsets[t] + leaf;
    }
    return ad::transpose(tape, ad::gather(tape, params.leaf_embeddings, rows));
}

FusionOutput fuse(Tape& tape, const Tensor& h, const Tensor& leaf_matrix, const ModelParams& params, FusionMode mode) {
    const auto& d = params.dims;
    if (h.rank() != 2 || h.cols() != d.d_h())
        throw Error("fuse: text representation " + ad::shape_string(h.shape()) + " does not have d_h=" +
                    std::to_string(d.d_h()) + " columns");
    if (mode == FusionMode::text_only) return {h, {}};
    if (d.n_trees() == 0) throw Error("fuse: mode " + to_string(mode) + " needs tree features, model has none");
    if (leaf_matrix.rank() != 2 || leaf_matrix.rows() != d.d_l || leaf_matrix.cols() != d.n_trees())
        throw Error("fuse: leaf matrix " + ad::shape_string(leaf_matrix.shape()) + " expected [" + std::to_string(d.d_l) +
                    "x" + std::to_string(d.n_trees()) + "]");
    const std::size_t n = h.rows();

    FusionOutput out;
    Tensor s;
    if (mode == FusionMode::attention) {
        const Tensor q = ad::matmul(tape, h, ad::transpose(tape, params.w_query));        // N x d_t
        const Tensor scores = ad::matmul(tape, q, params.tree_embeddings);                 // N x |T|
        out.alpha = ad::softmax(tape, scores, 1);
        s = ad::matmul(tape, out.alpha, ad::transpose(tape, leaf_matrix));                 // N x d_l
    } else {
        const Tensor pooled = mode == FusionMode::average ? ad::mean_cols(tape, leaf_matrix)
                                                          : ad::maxpool_cols(tape, leaf_matrix);
        const Tensor ones = Tensor::constant({n, 1}, std::vector<double>(n, 1.0));
        s = ad::matmul(tape, ones, ad::reshape(tape, pooled, {1, d.d_l}));
    }
    const Tensor joined = ad::concat(tape, {h, s}, 1);
    out.m = ad::matmul(tape, joined, ad::transpose(tape, params.w_out));
    return out;
}

LabelAttentionOutput label_attention(Tape& tape, const Tensor& m, const Tensor& u) {
    if (m.rank() != 2 || u.rank() != 2 || m.cols() != u.rows())
        throw Error("label_attention: M " + ad::shape_string(m.shape()) + " incompatible with U " +
                    ad::shape_string(u.shape()));
    LabelAttentionOutput out;
    out.attention = ad::softmax(tape, ad::matmul(tape, m, u), 0);
    out.v = ad::matmul(tape, ad::transpose(tape, out.attention), m);
    return out;
}

Tensor predict(Tape& tape, const Tensor& v, const ModelParams& params) {
    if (v.shape() != params.label_weights.shape())
        throw Error("predict: V " + ad::shape_string(v.shape()) + " expected " +
                    ad::shape_string(params.label_weights.shape()));
    const Tensor logits = ad::add(tape, ad::row_sum(tape, ad::mul(tape, v, params.label_weights)), params.label_bias);
    return ad::sigmoid(tape, logits);
}

ForwardResult forward(Tape& tape, const ModelParams& params, const Example& example, FusionMode mode) {
    ForwardResult r;
    r.h = encode_text(tape, example.doc, params);
    if (mode != FusionMode::text_only) r.leaf_matrix = assemble_leaf_matrix(tape, example.leaves, params);
    r.fusion = fuse(tape, r.h, r.leaf_matrix, params, mode);
    r.label_attention = label_attention(tape, r.fusion.m, params.label_queries);
    r.yhat = predict(tape, r.label_attention.v, params);
    return r;
}

Tensor example_loss(Tape& tape, const ModelParams& params, const Example& example, FusionMode mode) {
    if (example.labels.size() != params.dims.n_labels)
        throw Error("example '" + example.doc.admission_id + "' has " + std::to_string(example.labels.size()) +
                    " labels, model predicts " + std::to_string(params.dims.n_labels));
    const ForwardResult r = forward(tape, params, example, mode);
    return ad::bce(tape, r.yhat, example.labels);
}

std::vector<double> predict_probs(const ModelParams& params, const Example& example, FusionMode mode) {
    Tape tape(false);
    const ForwardResult r = forward(tape, params, example, mode);
    const auto v = r.yhat.values();
    return {v.begin(), v.end()};
}

metrics::PredictionBatch predict_batch(const ModelParams& params, std::span<const Example> examples, FusionMode mode) {
    std::vector<double> probs;
    std::vector<int> gold;
    probs.reserve(examples.size() * params.dims.n_labels);
    gold.reserve(examples.size() * params.dims.n_labels);
    for (const auto& ex : examples) {
        const auto p = predict_probs(params, ex, mode);
        probs.insert(probs.end(), p.begin(), p.end());
        gold.insert(gold.end(), ex.labels.begin(), ex.labels.end());
    }
    return metrics::PredictionBatch(examples.size(), params.dims.n_labels, std::move(probs), std::move(gold));
}

TrainResult train(const ModelParams& initial, std::span<const Example> train_set,
                  std::span<const Example> validation_set, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
    if (train_set.empty()) throw Error("training set is empty");
    if (config.batch_size == 0) throw Error("batch_size must be positive");
    if (config.epochs < 0) throw Error("epochs must be >= 0");

    TrainResult result;
    ModelParams params = initial.clone();
    std::vector<Tensor> trainable = params.trainable(config.fusion);

    std::unique_ptr<ad::Optimizer> optimizer;
    if (config.optimizer == "adam") {
        optimizer = std::make_unique<ad::Adam>(config.adam);
    } else if (config.optimizer == "sgd") {
        optimizer = std::make_unique<ad::Sgd>(config.adam.learning_rate);
    } else {
        throw Error("unknown optimizer '" + config.optimizer + "' (expected adam|sgd)");
    }

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    result.best = params.clone();
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            ad::zero_grad(trainable);
            for (std::size_t i = start; i < end; ++i) {
                const Example& ex = train_set[order[i]];
                Tape tape;
                Tensor loss = example_loss(tape, params, ex, config.fusion);
                if (!std::isfinite(loss.item()))
                    throw Error("non-finite loss at epoch " + std::to_string(epoch) + " on admission '" +
                                ex.doc.admission_id + "' (loss=" + std::to_string(loss.item()) + ")");
                total_loss += loss.item();
                tape.backward(loss);
            }
            if (end - start > 1) {
                const double inv = 1.0 / static_cast<double>(end - start);
                for (auto& t : trainable)
                    for (double& g : t.grad()) g *= inv;
            }
            const double norm = ad::clip_grad_norm(trainable, config.clip_norm);
            if (!std::isfinite(norm))
                throw Error("non-finite gradient norm at epoch " + std::to_string(epoch));
            optimizer->step(trainable);
        }
        for (const auto& [name, t] : params.named()) check_finite(t, name + " after epoch " + std::to_string(epoch));

        EpochLog row;
        row.epoch = epoch;
        row.train_loss = total_loss / static_cast<double>(train_set.size());
        if (!validation_set.empty()) {
            row.validation =
                metrics::evaluate(predict_batch(params, validation_set, config.fusion), config.threshold, config.metric_k);
        }
        if (validation_set.empty() || row.validation.micro_f1 > result.best_val_micro_f1) {
            result.best = params.clone();
            result.best_epoch = epoch;
            result.best_val_micro_f1 = validation_set.empty() ? 0.0 : row.validation.micro_f1;
        }
        result.log.push_back(row);
        if (on_epoch) on_epoch(row);
    }
    return result;
}

std::string epoch_log_header() {
    return "epoch,train_loss,val_macro_auc,val_micro_auc,val_macro_f1,val_micro_f1,val_p_at_k";
}

std::string epoch_log_row(const EpochLog& row) {
    const auto opt = [](const std::optional<double>& v) { return v ? metrics::format_double(*v) : std::string("nan"); };
    const auto& m = row.validation;
    return std::to_string(row.epoch) + "," + metrics::format_double(row.train_loss) + "," + opt(m.macro_auc) + "," +
           opt(m.micro_auc) + "," + metrics::format_double(m.macro_f1) + "," + metrics::format_double(m.micro_f1) +
           "," + metrics::format_double(m.precision_at_k);
}

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                      const std::map<std::string, std::string>& metadata) {
    json arrays = json::array();
    for (const auto& [name, t] : params.named()) {
        const auto v = t.values();
        arrays.push_back({{"name", name}, {"shape", t.shape()}, {"values", std::vector<double>(v.begin(), v.end())}});
    }
    json doc = {{"format", "treeman-checkpoint"},
                {"version", kCheckpointVersion},
                {"dims", dims_to_json(params.dims)},
                {"metadata", metadata},
                {"arrays", arrays}};
    io::write_file(path, doc.dump() + "\n");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    const json doc = io::parse(io::read_file(path), "checkpoint");
    io::check_format(doc, "treeman-checkpoint", kCheckpointVersion);
    Checkpoint cp;
    cp.metadata = doc.at("metadata").get<std::map<std::string, std::string>>();
    // Initialize for the layout, then overwrite every array from the file.
    cp.params = ModelParams::initialize(dims_from_json(doc.at("dims")), 0);
    std::map<std::string, const json*> by_name;
    for (const auto& a : doc.at("arrays")) by_name[a.at("name").get<std::string>()] = &a;
    for (auto& [name, t] : cp.params.named()) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("checkpoint is missing array '" + name + "'");
        const json& a = *it->second;
        if (a.at("shape").get<Shape>() != t.shape())
            throw Error("checkpoint array '" + name + "' has shape " + ad::shape_string(a.at("shape").get<Shape>()) +
                        ", expected " + ad::shape_string(t.shape()));
        const auto values = a.at("values").get<std::vector<double>>();
        std::copy(values.begin(), values.end(), t.values().begin());
        by_name.erase(it);
    }
    if (!by_name.empty()) throw Error("checkpoint has unexpected array '" + by_name.begin()->first + "'");
    return cp;
}

}  // namespace treeman::model
