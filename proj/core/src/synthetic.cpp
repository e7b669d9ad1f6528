#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "treeman/error.hpp"
#include "treeman/harness.hpp"

namespace treeman::harness {

using nlohmann::json;

namespace {

// Letters-only spelling of n so generated words survive token cleaning.
std::string letters(std::size_t n) {
    std::string s;
    do {
        s.push_back(static_cast<char>('a' + n % 26));
        n /= 26;
    } while (n > 0);
    return s;
}

std::string background_word(std::size_t i) { return "w" + letters(i); }
std::string signal_word(std::size_t label, std::size_t k) { return "zq" + letters(label) + "x" + letters(k); }
std::string label_name(std::size_t l) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "L%03zu", l);
    return buf;
}
std::string admission_name(std::size_t d) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "adm%06zu", d);
    return buf;
}

// Planted tabular pattern of a label: an event indicator for even slots,
// an elevated time-series class for odd slots.
struct PlantedPattern {
    bool is_event = true;
    std::string category;
    std::string item_id;
    std::string class_id;
};

PlantedPattern planted_pattern(std::size_t label, std::size_t slot) {
    static const char* categories[] = {"drug", "lab_abnormal", "organism", "specimen", "antibiotic"};
    PlantedPattern p;
    p.is_event = slot % 2 == 0;
    p.category = categories[label % 5];
    p.item_id = std::to_string(9000 + label);
    p.class_id = "vital_" + std::to_string(label);
    return p;
}

const char* kNoiseTokens[] = {"10mg", "b.i.d.", "q6h", "2x", "p.o.", "100%", "#3", "(prn)"};
const char* kAdmissionTypes[] = {"ELECTIVE", "EMERGENCY", "URGENT"};

}  // namespace

std::string to_string(LabelSource s) {
    switch (s) {
        case LabelSource::text: return "text";
        case LabelSource::tabular: return "tabular";
        case LabelSource::both: return "both";
    }
    return "unknown";
}

LabelSource parse_label_source(const std::string& s) {
    for (auto v : {LabelSource::text, LabelSource::tabular, LabelSource::both}) {
        if (to_string(v) == s) return v;
    }
    throw Error("unknown label source '" + s + "' (expected text|tabular|both)");
}

LabelSource SyntheticSpec::source(std::size_t label) const {
    if (sources.empty()) {
        static constexpr LabelSource cycle[] = {LabelSource::text, LabelSource::tabular, LabelSource::both};
        return cycle[label % 3];
    }
    return sources.at(label);
}

double SyntheticSpec::strength(std::size_t label) const {
    return strengths.size() == 1 ? strengths.front() : strengths.at(label);
}

void SyntheticSpec::validate() const {
    if (n_docs == 0) throw Error("synthetic spec: n_docs must be positive");
    if (n_labels == 0) throw Error("synthetic spec: n_labels must be positive");
    if (vocab_size == 0) throw Error("synthetic spec: vocab_size must be positive");
    if (ngram_len == 0) throw Error("synthetic spec: ngram_len must be positive");
    if (doc_len_min == 0 || doc_len_min > doc_len_max)
        throw Error("synthetic spec: need 0 < doc_len_min <= doc_len_max");
    if (!sources.empty() && sources.size() != n_labels)
        throw Error("synthetic spec: sources has " + std::to_string(sources.size()) + " entries for " +
                    std::to_string(n_labels) + " labels");
    if (strengths.size() != 1 && strengths.size() != n_labels)
        throw Error("synthetic spec: strengths needs 1 or n_labels entries");
    for (double s : strengths) {
        if (!(s >= 0.0 && s <= 1.0)) throw Error("synthetic spec: strength outside [0,1]");
    }
    if (!(mean_labels_per_doc > 0.0 && mean_labels_per_doc < static_cast<double>(n_labels)))
        throw Error("synthetic spec: mean_labels_per_doc must lie in (0, n_labels)");
}

SyntheticSpec lift_spec() {
    SyntheticSpec s;
    s.n_docs = 128;
    s.n_labels = 8;
    s.vocab_size = 200;
    s.doc_len_min = 30;
    s.doc_len_max = 50;
    s.n_ts_classes = 6;
    s.n_items = 24;
    s.n_singletons = 2;
    s.sources = {LabelSource::tabular, LabelSource::text, LabelSource::tabular, LabelSource::text,
                 LabelSource::tabular, LabelSource::text, LabelSource::tabular, LabelSource::both};
    s.strengths = {1.0};
    s.mean_labels_per_doc = 2.8;
    s.ngram_len = 3;
    return s;
}

void generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& dir) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double prior = spec.label_prior();
    const auto coin = [&](double p) { return unit(rng) < p; };
    const auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

    // Slot of each label within its source kind decides the planted pattern type.
    std::vector<std::size_t> tab_slot(spec.n_labels, 0);
    std::size_t next_slot = 0;
    for (std::size_t l = 0; l < spec.n_labels; ++l) {
        if (spec.source(l) != LabelSource::text) tab_slot[l] = next_slot++;
    }

    std::string notes, labels, timeseries, events, singletons;
    for (std::size_t d = 0; d < spec.n_docs; ++d) {
        const std::string adm = admission_name(d);

        std::vector<int> y(spec.n_labels);
        for (auto& v : y) v = coin(prior) ? 1 : 0;

        // Which signals are planted for each label.
        std::vector<bool> text_signal(spec.n_labels, false);
        std::vector<bool> tab_signal(spec.n_labels, false);
        for (std::size_t l = 0; l < spec.n_labels; ++l) {
            // With probability 1-strength the signal follows an independent draw.
            const int driver = coin(spec.strength(l)) ? y[l] : (coin(prior) ? 1 : 0);
            switch (spec.source(l)) {
                case LabelSource::text: text_signal[l] = driver == 1; break;
                case LabelSource::tabular: tab_signal[l] = driver == 1; break;
                case LabelSource::both:
                    if (driver == 1) {
                        text_signal[l] = tab_signal[l] = true;
                    } else {
                        // Either signal alone must not imply the label.
                        const std::size_t r = pick(3);
                        text_signal[l] = r == 0;
                        tab_signal[l] = r == 1;
                    }
                    break;
            }
        }

        // --- note text ---
        const std::size_t len = spec.doc_len_min + pick(spec.doc_len_max - spec.doc_len_min + 1);
        std::vector<std::string> tokens;
        tokens.reserve(len + spec.n_labels * spec.ngram_len);
        for (std::size_t i = 0; i < len; ++i) {
            if (coin(0.05)) {
                tokens.emplace_back(kNoiseTokens[pick(std::size(kNoiseTokens))]);
            } else {
                std::string w = background_word(pick(spec.vocab_size));
                if (coin(0.1)) w[0] = 'W';
                tokens.push_back(std::move(w));
            }
        }
        for (std::size_t l = 0; l < spec.n_labels; ++l) {
            if (!text_signal[l]) continue;
            const std::size_t at = pick(tokens.size() + 1);
            std::vector<std::string> gram;
            for (std::size_t k = 0; k < spec.ngram_len; ++k) gram.push_back(signal_word(l, k));
            tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(at), gram.begin(), gram.end());
        }
        std::string text;
        for (std::size_t i = 0; i < tokens.size(); ++i) text += (i ? " " : "") + tokens[i];
        notes += json{{"admission_id", adm}, {"text", text}}.dump() + "\n";

        json names = json::array();
        for (std::size_t l = 0; l < spec.n_labels; ++l) {
            if (y[l]) names.push_back(label_name(l));
        }
        labels += json{{"admission_id", adm}, {"labels", names}}.dump() + "\n";

        // --- structured records ---
        const auto emit_series = [&](const std::string& cls, double mean, double spread) {
            const std::size_t points = pick(8);
            double t = 0.0;
            for (std::size_t p = 0; p < points; ++p) {
                t += 1.0 + pick(4);
                timeseries += json{{"admission_id", adm}, {"class_id", cls}, {"timestamp", t},
                                   {"value", mean + spread * noise(rng)}}
                                  .dump() +
                              "\n";
            }
        };
        for (std::size_t c = 0; c < spec.n_ts_classes; ++c) emit_series("chart_" + std::to_string(c), 0.0, 1.0);

        static const char* categories[] = {"lab_abnormal", "drug", "organism", "specimen", "antibiotic"};
        for (std::size_t i = 0; i < spec.n_items; ++i) {
            if (coin(0.25))
                events += json{{"admission_id", adm}, {"category", categories[i % 5]},
                               {"item_id", std::to_string(1000 + i)}}
                              .dump() +
                          "\n";
        }

        for (std::size_t l = 0; l < spec.n_labels; ++l) {
            if (spec.source(l) == LabelSource::text) continue;
            const PlantedPattern p = planted_pattern(l, tab_slot[l]);
            if (p.is_event) {
                if (tab_signal[l])
                    events += json{{"admission_id", adm}, {"category", p.category}, {"item_id", p.item_id}}.dump() + "\n";
            } else {
                // Guarantee at least one reading so the signal is observable.
                const double mean = tab_signal[l] ? 2.0 : 0.0;
                const std::size_t points = 1 + pick(6);
                double t = 0.0;
                for (std::size_t k = 0; k < points; ++k) {
                    t += 1.0 + pick(4);
                    timeseries += json{{"admission_id", adm}, {"class_id", p.class_id}, {"timestamp", t},
                                       {"value", mean + 0.4 * noise(rng)}}
                                      .dump() +
                                  "\n";
                }
            }
        }

        for (std::size_t s = 0; s < spec.n_singletons; ++s) {
            if (s == 1) {
                singletons += json{{"admission_id", adm}, {"field", "admission_type"},
                                   {"value", kAdmissionTypes[pick(3)]}}
                                  .dump() +
                              "\n";
            } else if (!coin(0.1)) {
                const std::string field = s == 0 ? "age" : "numeric_" + std::to_string(s);
                singletons += json{{"admission_id", adm}, {"field", field},
                                   {"value", std::round(20.0 + 70.0 * unit(rng))}}
                                  .dump() +
                              "\n";
            }
        }
    }

    std::filesystem::create_directories(dir);
    io::write_file(dir / "notes.jsonl", notes);
    io::write_file(dir / "labels.jsonl", labels);
    io::write_file(dir / "timeseries.jsonl", timeseries);
    io::write_file(dir / "events.jsonl", events);
    io::write_file(dir / "singletons.jsonl", singletons);
}

}  // namespace treeman::harness
