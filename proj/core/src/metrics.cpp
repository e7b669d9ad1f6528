#include "treeman/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "treeman/error.hpp"

namespace treeman::metrics {

namespace {

struct Counts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
};

double f1(const Counts& c) {
    const double p = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    const double r = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

void tally(Counts& c, double prob, int gold, double threshold) {
    const bool pred = prob >= threshold;
    if (pred && gold) ++c.tp;
    if (pred && !gold) ++c.fp;
    if (!pred && gold) ++c.fn;
}

void require_nonempty(const PredictionBatch& b) {
    b.validate();
    if (b.n_docs == 0 || b.n_labels == 0) throw Error("empty prediction batch");
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

PredictionBatch::PredictionBatch(std::size_t docs, std::size_t labels, std::vector<double> p, std::vector<int> g)
    : n_docs(docs), n_labels(labels), probs(std::move(p)), gold(std::move(g)) {
    validate();
}

void PredictionBatch::validate() const {
    if (probs.size() != n_docs * n_labels || gold.size() != n_docs * n_labels)
        throw Error("prediction batch shape mismatch: " + std::to_string(probs.size()) + " probs, " +
                    std::to_string(gold.size()) + " gold for " + std::to_string(n_docs) + " x " +
                    std::to_string(n_labels));
    for (double p : probs) {
        if (!std::isfinite(p)) throw Error("prediction batch holds a non-finite probability");
    }
    for (int g : gold) {
        if (g != 0 && g != 1) throw Error("gold labels must be 0 or 1");
    }
}

double micro_f1(const PredictionBatch& batch, double threshold) {
    require_nonempty(batch);
    Counts c;
    for (std::size_t i = 0; i < batch.probs.size(); ++i) tally(c, batch.probs[i], batch.gold[i], threshold);
    return f1(c);
}

double macro_f1(const PredictionBatch& batch, double threshold) {
    require_nonempty(batch);
    double sum = 0.0;
    for (std::size_t l = 0; l < batch.n_labels; ++l) {
        Counts c;
        for (std::size_t d = 0; d < batch.n_docs; ++d) tally(c, batch.prob(d, l), batch.label(d, l), threshold);
        sum += f1(c);
    }
    return sum / static_cast<double>(batch.n_labels);
}

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error("auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Walk tie groups in ascending score order. Every positive outranks the
    // negatives already passed and ties with the negatives in its own group.
    double negatives_below = 0.0;
    double concordant = 0.0;
    double ties = 0.0;
    double positives = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        double pos = 0.0;
        double neg = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? pos : neg) += 1.0;
            ++j;
        }
        concordant += pos * negatives_below;
        ties += pos * neg;
        negatives_below += neg;
        positives += pos;
        i = j;
    }
    if (positives == 0.0 || negatives_below == 0.0) return std::nullopt;
    return (concordant + 0.5 * ties) / (positives * negatives_below);
}

double micro_auc(const PredictionBatch& batch) {
    require_nonempty(batch);
    const auto a = auc(batch.probs, batch.gold);
    if (!a) throw Error("micro AUC undefined: pooled gold labels contain a single class");
    return *a;
}

double macro_auc(const PredictionBatch& batch) {
    require_nonempty(batch);
    double sum = 0.0;
    int defined = 0;
    std::vector<double> s(batch.n_docs);
    std::vector<int> g(batch.n_docs);
    for (std::size_t l = 0; l < batch.n_labels; ++l) {
        for (std::size_t d = 0; d < batch.n_docs; ++d) {
            s[d] = batch.prob(d, l);
            g[d] = batch.label(d, l);
        }
        if (const auto a = auc(s, g)) {
            sum += *a;
            ++defined;
        }
    }
    if (defined == 0) throw Error("macro AUC undefined: no label has both classes");
    return sum / defined;
}

double precision_at_k(const PredictionBatch& batch, int k) {
    if (k <= 0) throw Error("precision@k needs k > 0, got " + std::to_string(k));
    require_nonempty(batch);
    if (static_cast<std::size_t>(k) > batch.n_labels)
        throw Error("precision@k: k=" + std::to_string(k) + " exceeds label count " + std::to_string(batch.n_labels));
    std::vector<std::size_t> order(batch.n_labels);
    double total = 0.0;
    for (std::size_t d = 0; d < batch.n_docs; ++d) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return batch.prob(d, a) > batch.prob(d, b); });
        int hits = 0;
        for (int i = 0; i < k; ++i) hits += batch.label(d, order[static_cast<std::size_t>(i)]);
        total += static_cast<double>(hits) / k;
    }
    return total / static_cast<double>(batch.n_docs);
}

MetricReport evaluate(const PredictionBatch& batch, double threshold, int k) {
    require_nonempty(batch);
    MetricReport r;
    r.k = std::min<int>(k, static_cast<int>(batch.n_labels));
    try {
        r.macro_auc = macro_auc(batch);
    } catch (const Error&) {
    }
    try {
        r.micro_auc = micro_auc(batch);
    } catch (const Error&) {
    }
    r.macro_f1 = macro_f1(batch, threshold);
    r.micro_f1 = micro_f1(batch, threshold);
    r.precision_at_k = precision_at_k(batch, r.k);
    return r;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string to_key_value(const MetricReport& r) {
    const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("nan"); };
    std::string out;
    out += "macro_auc=" + opt(r.macro_auc) + "\n";
    out += "micro_auc=" + opt(r.micro_auc) + "\n";
    out += "macro_f1=" + format_double(r.macro_f1) + "\n";
    out += "micro_f1=" + format_double(r.micro_f1) + "\n";
    out += "p_at_" + std::to_string(r.k) + "=" + format_double(r.precision_at_k) + "\n";
    return out;
}

std::string to_json(const MetricReport& r) {
    nlohmann::json j = {{"macro_auc", optional_json(r.macro_auc)},
                        {"micro_auc", optional_json(r.micro_auc)},
                        {"macro_f1", r.macro_f1},
                        {"micro_f1", r.micro_f1},
                        {"precision_at_k", r.precision_at_k},
                        {"k", r.k}};
    return j.dump(1) + "\n";
}

MetricReport from_json(const std::string& text) {
    const auto j = io::parse(text, "metrics");
    MetricReport r;
    const auto opt = [&](const char* key) -> std::optional<double> {
        const auto& v = j.at(key);
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    r.macro_auc = opt("macro_auc");
    r.micro_auc = opt("micro_auc");
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.micro_f1 = j.at("micro_f1").get<double>();
    r.precision_at_k = j.at("precision_at_k").get<double>();
    r.k = j.at("k").get<int>();
    return r;
}

}  // namespace treeman::metrics
