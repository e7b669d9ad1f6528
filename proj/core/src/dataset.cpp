#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "treeman/error.hpp"
#include "treeman/harness.hpp"

namespace treeman::harness {

using nlohmann::json;

// --- dataset files ----------------------------------------------------------

const Note& Dataset::note(const std::string& admission_id) const {
    const auto it = std::lower_bound(notes.begin(), notes.end(), admission_id,
                                     [](const Note& n, const std::string& id) { return n.admission_id < id; });
    if (it == notes.end() || it->admission_id != admission_id)
        throw Error("no note for admission '" + admission_id + "'");
    return *it;
}

std::vector<int> Dataset::label_vector(const std::string& admission_id) const {
    std::vector<int> y(label_names.size(), 0);
    const auto it = labels.find(admission_id);
    if (it == labels.end()) return y;
    for (const auto& name : it->second) {
        const auto pos = std::lower_bound(label_names.begin(), label_names.end(), name);
        y[static_cast<std::size_t>(pos - label_names.begin())] = 1;
    }
    return y;
}

std::vector<std::string> Dataset::admission_ids() const {
    std::vector<std::string> ids;
    ids.reserve(notes.size());
    for (const auto& n : notes) ids.push_back(n.admission_id);
    return ids;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.dir = dir;
    io::for_each_jsonl(
        dir / "notes.jsonl",
        [&](const json& j, std::size_t line) {
            const json& text = io::require(j, "text", line);
            if (!text.is_string()) throw Error("notes.jsonl line " + std::to_string(line) + ": text must be a string");
            ds.notes.push_back({io::id_string(j, "admission_id", line), text.get<std::string>()});
        },
        true);
    std::sort(ds.notes.begin(), ds.notes.end(),
              [](const Note& a, const Note& b) { return a.admission_id < b.admission_id; });
    for (std::size_t i = 1; i < ds.notes.size(); ++i) {
        if (ds.notes[i].admission_id == ds.notes[i - 1].admission_id)
            throw Error("notes.jsonl: duplicate admission '" + ds.notes[i].admission_id + "'");
    }
    if (ds.notes.empty()) throw Error("notes.jsonl: no notes in " + dir.string());

    std::set<std::string> universe;
    io::for_each_jsonl(
        dir / "labels.jsonl",
        [&](const json& j, std::size_t line) {
            const std::string adm = io::id_string(j, "admission_id", line);
            const json& names = io::require(j, "labels", line);
            if (!names.is_array())
                throw Error("labels.jsonl line " + std::to_string(line) + ": labels must be an array");
            if (ds.labels.count(adm)) throw Error("labels.jsonl: duplicate admission '" + adm + "'");
            auto& list = ds.labels[adm];
            for (const auto& n : names) {
                if (!n.is_string()) throw Error("labels.jsonl line " + std::to_string(line) + ": label names must be strings");
                list.push_back(n.get<std::string>());
                universe.insert(list.back());
            }
        },
        true);
    for (const auto& [adm, _] : ds.labels) ds.note(adm);  // every labelled admission needs a note
    ds.label_names.assign(universe.begin(), universe.end());
    if (ds.label_names.empty()) throw Error("labels.jsonl: no labels in " + dir.string());
    return ds;
}

// --- vocabulary -------------------------------------------------------------

std::vector<std::string> clean_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (start == i) continue;
        std::string tok(text.substr(start, i - start));
        const bool alpha = std::all_of(tok.begin(), tok.end(), [](char c) {
            const auto u = static_cast<unsigned char>(c);
            return u < 128 && std::isalpha(u);
        });
        if (!alpha) continue;
        for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.push_back(std::move(tok));
    }
    return out;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
    std::set<std::string> seen;
    for (const auto& t : texts) {
        for (auto& tok : clean_tokens(t)) seen.insert(std::move(tok));
    }
    Vocabulary v;
    v.tokens_.emplace_back(kUnkToken);
    seen.erase(std::string(kUnkToken));
    v.tokens_.insert(v.tokens_.end(), seen.begin(), seen.end());
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.ids_[v.tokens_[i]] = static_cast<int>(i);
    return v;
}

int Vocabulary::id(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

std::string Vocabulary::to_text() const {
    std::string out;
    for (const auto& t : tokens_) out += t + "\n";
    return out;
}

Vocabulary Vocabulary::from_text(const std::string& text) {
    Vocabulary v;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (v.ids_.count(line)) throw Error("vocabulary: duplicate token '" + line + "'");
        v.ids_[line] = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(line);
    }
    if (v.tokens_.empty() || v.tokens_.front() != kUnkToken)
        throw Error("vocabulary: first token must be " + std::string(kUnkToken));
    return v;
}

model::EncodedDoc encode_document(const Vocabulary& vocab, const Note& note, std::size_t max_len) {
    model::EncodedDoc doc;
    doc.admission_id = note.admission_id;
    for (const auto& tok : clean_tokens(note.text)) {
        if (doc.token_ids.size() >= max_len) break;
        doc.token_ids.push_back(vocab.id(tok));
    }
    if (doc.token_ids.empty()) doc.token_ids.push_back(Vocabulary::kUnk);
    return doc;
}

std::size_t load_pretrained_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                                       model::ModelParams& params) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open embeddings file " + path.string());
    const std::size_t dim = params.dims.d_e;
    std::string line;
    std::size_t line_no = 0;
    std::size_t written = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string word;
        if (!(fields >> word)) continue;
        std::vector<double> values;
        double x;
        while (fields >> x) values.push_back(x);
        if (line_no == 1 && values.size() == 1) continue;  // "<count> <dim>" header
        if (values.size() != dim)
            throw Error("embeddings " + path.string() + " line " + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " values, got " + std::to_string(values.size()));
        const int id = vocab.id(word);
        if (id == Vocabulary::kUnk) continue;
        model::set_word_embedding(params, id, values);
        ++written;
    }
    return written;
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hash_hex(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}

// --- splitting --------------------------------------------------------------

SplitManifest split(std::span<const std::string> admission_ids, std::array<double, 3> ratios,
                    std::uint64_t seed) {
    for (double r : ratios) {
        if (!(r >= 0.0)) throw Error("split ratios must be non-negative");
    }
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw Error("split ratios must sum to 1");

    std::vector<std::string> ids(admission_ids.begin(), admission_ids.end());
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw Error("split: duplicate admission ids");
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);

    const auto n = static_cast<double>(ids.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * ratios[0]));
    const auto n_val = std::min(ids.size() - std::min(ids.size(), n_train),
                                static_cast<std::size_t>(std::llround(n * ratios[1])));
    SplitManifest m;
    m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, ids.size())));
    m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(m.train.size()),
                 ids.begin() + static_cast<std::ptrdiff_t>(m.train.size() + n_val));
    m.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(m.train.size() + n_val), ids.end());
    if (m.train.empty()) throw Error("split: train split is empty");
    if (m.val.empty()) throw Error("split: val split is empty");
    if (m.test.empty()) throw Error("split: test split is empty");
    return m;
}

namespace {

std::string join_lines(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) out += id + "\n";
    return out;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

}  // namespace

void write_manifest(const SplitManifest& manifest, const std::filesystem::path& dir) {
    io::write_file(dir / "train.txt", join_lines(manifest.train));
    io::write_file(dir / "val.txt", join_lines(manifest.val));
    io::write_file(dir / "test.txt", join_lines(manifest.test));
}

SplitManifest read_manifest(const std::filesystem::path& dir) {
    return {split_lines(io::read_file(dir / "train.txt")), split_lines(io::read_file(dir / "val.txt")),
            split_lines(io::read_file(dir / "test.txt"))};
}

}  // namespace treeman::harness
