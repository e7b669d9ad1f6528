#include <functional>
#include <set>

#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "treeman/error.hpp"
#include "treeman/harness.hpp"

namespace treeman::harness {

using nlohmann::json;

namespace {

// One entry per config key: how to write it and how to read it back.
struct Field {
    const char* key;
    std::function<json(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const json&)> set;
};

template <class T>
T as(const json& v, const char* key) {
    try {
        if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || v.get<long long>() < 0) throw Error("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw Error("");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw Error("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw Error("");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw Error(std::string("config key '") + key + "': wrong value type " + v.dump());
    }
}

#define TREEMAN_FIELD(name, expr, type)                                                  \
    Field {                                                                              \
        name, [](const ExperimentConfig& c) { return json(c.expr); },                    \
            [](ExperimentConfig& c, const json& v) { c.expr = as<type>(v, name); }      \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        TREEMAN_FIELD("data_dir", data_dir, std::string),
        TREEMAN_FIELD("embeddings_path", embeddings_path, std::string),
        TREEMAN_FIELD("out_dir", out_dir, std::string),
        TREEMAN_FIELD("seed", seed, std::uint64_t),
        Field{"split_ratios", [](const ExperimentConfig& c) { return json(c.split_ratios); },
              [](ExperimentConfig& c, const json& v) {
                  if (!v.is_array() || v.size() != 3) throw Error("config key 'split_ratios': expected 3 numbers");
                  for (std::size_t i = 0; i < 3; ++i) c.split_ratios[i] = as<double>(v[i], "split_ratios");
              }},
        TREEMAN_FIELD("d_e", d_e, std::size_t),
        TREEMAN_FIELD("d_lstm", d_lstm, std::size_t),
        TREEMAN_FIELD("d_t", d_t, std::size_t),
        TREEMAN_FIELD("d_l", d_l, std::size_t),
        TREEMAN_FIELD("tree_max_depth", tree.max_depth, int),
        TREEMAN_FIELD("tree_learning_rate", tree.learning_rate, double),
        TREEMAN_FIELD("tree_l2_lambda", tree.l2_lambda, double),
        TREEMAN_FIELD("tree_min_child_weight", tree.min_child_weight, double),
        TREEMAN_FIELD("tree_min_positives", tree.min_positives, int),
        TREEMAN_FIELD("optimizer", optimizer, std::string),
        TREEMAN_FIELD("learning_rate", learning_rate, double),
        TREEMAN_FIELD("adam_beta1", adam_beta1, double),
        TREEMAN_FIELD("adam_beta2", adam_beta2, double),
        TREEMAN_FIELD("adam_epsilon", adam_epsilon, double),
        TREEMAN_FIELD("epochs", epochs, int),
        TREEMAN_FIELD("batch_size", batch_size, std::size_t),
        TREEMAN_FIELD("clip_norm", clip_norm, double),
        Field{"fusion", [](const ExperimentConfig& c) { return json(model::to_string(c.fusion)); },
              [](ExperimentConfig& c, const json& v) {
                  c.fusion = model::parse_fusion_mode(as<std::string>(v, "fusion"));
              }},
        TREEMAN_FIELD("metric_k", metric_k, int),
        TREEMAN_FIELD("threshold", threshold, double),
        TREEMAN_FIELD("max_len", max_len, std::size_t),
        TREEMAN_FIELD("synth_n_docs", synthetic.n_docs, std::size_t),
        TREEMAN_FIELD("synth_n_labels", synthetic.n_labels, std::size_t),
        TREEMAN_FIELD("synth_vocab_size", synthetic.vocab_size, std::size_t),
        TREEMAN_FIELD("synth_doc_len_min", synthetic.doc_len_min, std::size_t),
        TREEMAN_FIELD("synth_doc_len_max", synthetic.doc_len_max, std::size_t),
        TREEMAN_FIELD("synth_n_ts_classes", synthetic.n_ts_classes, std::size_t),
        TREEMAN_FIELD("synth_n_items", synthetic.n_items, std::size_t),
        TREEMAN_FIELD("synth_n_singletons", synthetic.n_singletons, std::size_t),
        Field{"synth_sources",
              [](const ExperimentConfig& c) {
                  json a = json::array();
                  for (auto s : c.synthetic.sources) a.push_back(to_string(s));
                  return a;
              },
              [](ExperimentConfig& c, const json& v) {
                  if (!v.is_array()) throw Error("config key 'synth_sources': expected an array");
                  c.synthetic.sources.clear();
                  for (const auto& s : v) c.synthetic.sources.push_back(parse_label_source(as<std::string>(s, "synth_sources")));
              }},
        Field{"synth_strengths", [](const ExperimentConfig& c) { return json(c.synthetic.strengths); },
              [](ExperimentConfig& c, const json& v) {
                  if (!v.is_array()) throw Error("config key 'synth_strengths': expected an array");
                  c.synthetic.strengths.clear();
                  for (const auto& s : v) c.synthetic.strengths.push_back(as<double>(s, "synth_strengths"));
              }},
        TREEMAN_FIELD("synth_mean_labels_per_doc", synthetic.mean_labels_per_doc, double),
        TREEMAN_FIELD("synth_ngram_len", synthetic.ngram_len, std::size_t),
    };
    return table;
}

#undef TREEMAN_FIELD

}  // namespace

void ExperimentConfig::validate() const {
    const auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw Error(std::string("config: ") + name + " must be positive");
    };
    positive(d_e, "d_e");
    positive(d_lstm, "d_lstm");
    positive(d_t, "d_t");
    positive(d_l, "d_l");
    positive(batch_size, "batch_size");
    positive(max_len, "max_len");
    if (tree.max_depth < 0) throw Error("config: tree_max_depth must be >= 0");
    if (!(tree.learning_rate > 0.0)) throw Error("config: tree_learning_rate must be positive");
    if (!(tree.l2_lambda >= 0.0)) throw Error("config: tree_l2_lambda must be >= 0");
    if (epochs <= 0) throw Error("config: epochs must be positive");
    if (!(learning_rate > 0.0)) throw Error("config: learning_rate must be positive");
    if (optimizer != "adam" && optimizer != "sgd") throw Error("config: optimizer must be adam or sgd");
    if (metric_k <= 0) throw Error("config: metric_k must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error("config: threshold must lie in (0,1)");
    double total = 0.0;
    for (double r : split_ratios) {
        if (!(r >= 0.0)) throw Error("config: split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("config: split ratios must sum to 1");
    synthetic.validate();
}

model::TrainConfig ExperimentConfig::train_config() const {
    model::TrainConfig t;
    t.fusion = fusion;
    t.optimizer = optimizer;
    t.adam = {learning_rate, adam_beta1, adam_beta2, adam_epsilon};
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.clip_norm = clip_norm;
    t.seed = seed;
    t.threshold = threshold;
    t.metric_k = metric_k;
    return t;
}

std::string ExperimentConfig::to_text() const {
    // ordered_json keeps the table order, so the file reads top to bottom.
    nlohmann::ordered_json doc;
    for (const auto& f : fields()) doc[f.key] = f.get(*this);
    return doc.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    const json doc = io::parse(text, "config");
    if (!doc.is_object()) throw Error("config: expected a flat JSON object");
    ExperimentConfig c;
    std::set<std::string> seen;
    for (const auto& f : fields()) {
        const auto it = doc.find(f.key);
        if (it == doc.end()) continue;
        f.set(c, *it);
        seen.insert(f.key);
    }
    for (const auto& [key, _] : doc.items()) {
        if (!seen.count(key)) throw Error("config: unknown key '" + key + "'");
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    try {
        return from_text(io::read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

}  // namespace treeman::harness
