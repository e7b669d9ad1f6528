#pragma once

// Corpus-level multi-label evaluation: micro/macro AUC, micro/macro F1 at a
// fixed decision threshold, and precision@k.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace treeman::metrics {

inline constexpr double kDefaultThreshold = 0.5;

// Row-major n_docs x n_labels.
struct PredictionBatch {
    std::size_t n_docs = 0;
    std::size_t n_labels = 0;
    std::vector<double> probs;
    std::vector<int> gold;

    PredictionBatch() = default;
    PredictionBatch(std::size_t docs, std::size_t labels, std::vector<double> p, std::vector<int> g);

    double prob(std::size_t doc, std::size_t label) const { return probs[doc * n_labels + label]; }
    int label(std::size_t doc, std::size_t label) const { return gold[doc * n_labels + label]; }

    // Throws on shape mismatch, non-finite probabilities, or non-binary gold.
    void validate() const;
};

double micro_f1(const PredictionBatch& batch, double threshold = kDefaultThreshold);
double macro_f1(const PredictionBatch& batch, double threshold = kDefaultThreshold);

// Mann-Whitney AUC with half credit for ties; nullopt when `labels` lacks
// either class.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

// Throws when the pooled cells contain a single class.
double micro_auc(const PredictionBatch& batch);
// Mean over labels with both classes present; throws when there is none.
double macro_auc(const PredictionBatch& batch);

double precision_at_k(const PredictionBatch& batch, int k);

struct MetricReport {
    std::optional<double> macro_auc;
    std::optional<double> micro_auc;
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    double precision_at_k = 0.0;
    int k = 5;

    friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

// Undefined AUCs are reported as nullopt rather than thrown.
MetricReport evaluate(const PredictionBatch& batch, double threshold, int k);

// "macro_auc=0.912345\n..." with a fixed key order; undefined values print "nan".
std::string to_key_value(const MetricReport& report);
std::string to_json(const MetricReport& report);
MetricReport from_json(const std::string& text);

// Full-precision decimal used by every text emitter so reruns compare byte-wise.
std::string format_double(double v);

}  // namespace treeman::metrics
