#include "treeman/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "treeman/error.hpp"

namespace treeman::tabular {

using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

std::string column_name(ColumnKind kind, const std::string& source_id) {
    switch (kind) {
        case ColumnKind::ts_mean: return "ts_mean:" + source_id;
        case ColumnKind::ts_max: return "ts_max:" + source_id;
        case ColumnKind::ts_min: return "ts_min:" + source_id;
        case ColumnKind::binary_indicator: return source_id;
        case ColumnKind::singleton_numeric: return source_id;
        case ColumnKind::singleton_onehot: return source_id;
    }
    return source_id;
}

std::string event_source(const Event& e) { return to_string(e.category) + ":" + e.item_id; }

std::string onehot_source(const std::string& field, const std::string& value) { return field + "=" + value; }

std::string singleton_as_string(const SingletonValue& v) {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    return json(std::get<double>(v)).dump();
}

void check_unique_admissions(std::span<const StructuredRecordSet> record_sets) {
    std::unordered_set<std::string> seen;
    for (const auto& rs : record_sets) {
        if (!seen.insert(rs.admission_id).second)
            throw Error("duplicate admission_id '" + rs.admission_id + "'");
    }
}

void write_time_series(const StructuredRecordSet& rs, const FeatureSchema& schema, std::vector<Cell>& row) {
    std::map<std::string, std::vector<double>> by_class;
    for (const auto& ts : rs.time_series) {
        auto& values = by_class[ts.class_id];
        for (const auto& p : ts.points) values.push_back(p.value);
    }
    for (const auto& [class_id, values] : by_class) {
        const auto mean_col = schema.find(ColumnKind::ts_mean, class_id);
        // Aggregate even unseen classes so non-finite input is always rejected.
        const SeriesSummary summary = aggregate_time_series(values, rs.admission_id, class_id);
        if (!mean_col) continue;
        row[*mean_col] = summary.mean;
        row[*schema.find(ColumnKind::ts_max, class_id)] = summary.max;
        row[*schema.find(ColumnKind::ts_min, class_id)] = summary.min;
    }
}

std::vector<Cell> featurize(const StructuredRecordSet& rs, const FeatureSchema& schema) {
    std::vector<Cell> row(schema.width(), kMissing);
    for (std::size_t c = 0; c < schema.width(); ++c) {
        const ColumnKind k = schema.columns()[c].kind;
        if (k == ColumnKind::binary_indicator || k == ColumnKind::singleton_onehot) row[c] = 0.0;
    }
    write_time_series(rs, schema, row);
    binarize_multivalued(rs.multivalued, schema, row);
    encode_singletons(rs.singletons, schema, row);
    return row;
}

void check_singleton_fields(const StructuredRecordSet& rs) {
    std::set<std::string> fields;
    for (const auto& s : rs.singletons) {
        if (!fields.insert(s.field).second)
            throw Error("admission '" + rs.admission_id + "' has more than one value for field '" + s.field + "'");
    }
}

}  // namespace

std::string to_string(EventCategory c) {
    switch (c) {
        case EventCategory::lab_abnormal: return "lab_abnormal";
        case EventCategory::drug: return "drug";
        case EventCategory::organism: return "organism";
        case EventCategory::specimen: return "specimen";
        case EventCategory::antibiotic: return "antibiotic";
    }
    return "unknown";
}

EventCategory parse_event_category(const std::string& s) {
    for (auto c : {EventCategory::lab_abnormal, EventCategory::drug, EventCategory::organism,
                   EventCategory::specimen, EventCategory::antibiotic}) {
        if (to_string(c) == s) return c;
    }
    throw Error("unknown event category '" + s + "'");
}

std::string to_string(ColumnKind k) {
    switch (k) {
        case ColumnKind::ts_mean: return "ts_mean";
        case ColumnKind::ts_max: return "ts_max";
        case ColumnKind::ts_min: return "ts_min";
        case ColumnKind::binary_indicator: return "binary_indicator";
        case ColumnKind::singleton_numeric: return "singleton_numeric";
        case ColumnKind::singleton_onehot: return "singleton_onehot";
    }
    return "unknown";
}

ColumnKind parse_column_kind(const std::string& s) {
    for (auto k : {ColumnKind::ts_mean, ColumnKind::ts_max, ColumnKind::ts_min, ColumnKind::binary_indicator,
                   ColumnKind::singleton_numeric, ColumnKind::singleton_onehot}) {
        if (to_string(k) == s) return k;
    }
    throw Error("unknown column kind '" + s + "'");
}

FeatureSchema::FeatureSchema(std::vector<Column> columns,
                             std::map<std::string, std::map<std::string, int>> categorical_maps)
    : columns_(std::move(columns)), categorical_maps_(std::move(categorical_maps)) {
    std::set<std::string> names;
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        const auto& col = columns_[i];
        if (!names.insert(col.name).second) throw Error("duplicate schema column '" + col.name + "'");
        index_[{col.kind, col.source_id}] = i;
    }
}

std::optional<std::size_t> FeatureSchema::find(ColumnKind kind, const std::string& source_id) const {
    const auto it = index_.find({kind, source_id});
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

SeriesSummary aggregate_time_series(std::span<const double> values, const std::string& admission_id,
                                    const std::string& class_id) {
    if (values.empty()) return {kMissing, kMissing, kMissing};
    double sum = 0.0;
    double hi = values.front();
    double lo = values.front();
    for (double v : values) {
        if (!std::isfinite(v))
            throw Error("rejected record: non-finite time-series value for admission '" + admission_id +
                        "', class '" + class_id + "'");
        sum += v;
        hi = std::max(hi, v);
        lo = std::min(lo, v);
    }
    // Rounding can push the mean a hair outside [min, max] for near-constant series.
    const double mean = std::clamp(sum / static_cast<double>(values.size()), lo, hi);
    return {mean, hi, lo};
}

void binarize_multivalued(std::span<const Event> records, const FeatureSchema& schema, std::vector<Cell>& row) {
    for (const auto& e : records) {
        if (const auto col = schema.find(ColumnKind::binary_indicator, event_source(e))) row[*col] = 1.0;
    }
}

void encode_singletons(std::span<const Singleton> singletons, const FeatureSchema& schema, std::vector<Cell>& row) {
    for (const auto& s : singletons) {
        if (schema.is_categorical(s.field)) {
            const auto& values = schema.categorical_maps().at(s.field);
            const std::string value = singleton_as_string(s.value);
            if (!values.contains(value)) continue;
            if (const auto col = schema.find(ColumnKind::singleton_onehot, onehot_source(s.field, value)))
                row[*col] = 1.0;
        } else if (const auto col = schema.find(ColumnKind::singleton_numeric, s.field)) {
            if (const auto* d = std::get_if<double>(&s.value)) row[*col] = *d;
        }
    }
}

BuildResult build_feature_table(std::span<const StructuredRecordSet> record_sets) {
    if (record_sets.empty()) throw Error("no training records");
    check_unique_admissions(record_sets);

    std::set<std::string> ts_classes;
    std::set<std::string> events;
    std::set<std::string> numeric_fields;
    std::map<std::string, std::set<std::string>> categorical_values;
    std::set<std::string> string_fields;

    for (const auto& rs : record_sets) {
        check_singleton_fields(rs);
        for (const auto& ts : rs.time_series) ts_classes.insert(ts.class_id);
        for (const auto& e : rs.multivalued) events.insert(event_source(e));
        for (const auto& s : rs.singletons) {
            if (std::holds_alternative<std::string>(s.value)) string_fields.insert(s.field);
            numeric_fields.insert(s.field);
        }
    }
    // A field is numeric only if every observed value is a number.
    for (const auto& field : string_fields) numeric_fields.erase(field);
    for (const auto& rs : record_sets) {
        for (const auto& s : rs.singletons) {
            if (string_fields.contains(s.field)) categorical_values[s.field].insert(singleton_as_string(s.value));
        }
    }

    std::vector<Column> columns;
    for (auto kind : {ColumnKind::ts_mean, ColumnKind::ts_max, ColumnKind::ts_min}) {
        for (const auto& c : ts_classes) columns.push_back({column_name(kind, c), kind, c});
    }
    for (const auto& e : events) columns.push_back({e, ColumnKind::binary_indicator, e});
    for (const auto& f : numeric_fields) columns.push_back({f, ColumnKind::singleton_numeric, f});

    std::map<std::string, std::map<std::string, int>> maps;
    for (const auto& [field, values] : categorical_values) {
        int idx = 0;
        for (const auto& v : values) {
            maps[field][v] = idx++;
            const std::string src = onehot_source(field, v);
            columns.push_back({src, ColumnKind::singleton_onehot, src});
        }
    }

    FeatureSchema schema(std::move(columns), std::move(maps));
    FeatureTable table = apply_schema(record_sets, schema);
    return {std::move(table), std::move(schema)};
}

FeatureTable apply_schema(std::span<const StructuredRecordSet> record_sets, const FeatureSchema& schema) {
    check_unique_admissions(record_sets);
    FeatureTable table;
    table.schema = schema;
    table.rows.reserve(record_sets.size());
    for (const auto& rs : record_sets) {
        check_singleton_fields(rs);
        table.rows.push_back({rs.admission_id, featurize(rs, schema)});
    }
    return table;
}

// --- files ------------------------------------------------------------------

std::vector<StructuredRecordSet> read_record_sets(const std::filesystem::path& dir,
                                                  std::span<const std::string> admission_ids) {
    std::vector<StructuredRecordSet> out(admission_ids.size());
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < admission_ids.size(); ++i) {
        out[i].admission_id = admission_ids[i];
        if (!slot.emplace(admission_ids[i], i).second)
            throw Error("duplicate admission_id '" + admission_ids[i] + "'");
    }

    // (admission slot, class) -> series index
    std::map<std::pair<std::size_t, std::string>, std::size_t> series_index;
    io::for_each_jsonl(dir / "timeseries.jsonl", [&](const json& j, std::size_t line) {
        const std::string adm = io::id_string(j, "admission_id", line);
        const auto it = slot.find(adm);
        if (it == slot.end()) return;
        auto& rs = out[it->second];
        const std::string cls = io::id_string(j, "class_id", line);
        auto [pos, inserted] = series_index.try_emplace({it->second, cls}, rs.time_series.size());
        if (inserted) rs.time_series.push_back({cls, {}});
        rs.time_series[pos->second].points.push_back(
            {io::number(j, "timestamp", line), io::number(j, "value", line)});
    });
    for (auto& rs : out) {
        for (auto& ts : rs.time_series) {
            std::stable_sort(ts.points.begin(), ts.points.end(),
                             [](const TimePoint& a, const TimePoint& b) { return a.timestamp < b.timestamp; });
        }
    }

    io::for_each_jsonl(dir / "events.jsonl", [&](const json& j, std::size_t line) {
        const auto it = slot.find(io::id_string(j, "admission_id", line));
        if (it == slot.end()) return;
        out[it->second].multivalued.push_back(
            {parse_event_category(io::id_string(j, "category", line)), io::id_string(j, "item_id", line)});
    });

    io::for_each_jsonl(dir / "singletons.jsonl", [&](const json& j, std::size_t line) {
        const auto it = slot.find(io::id_string(j, "admission_id", line));
        if (it == slot.end()) return;
        const std::string field = io::id_string(j, "field", line);
        const json& v = io::require(j, "value", line);
        if (v.is_number()) {
            out[it->second].singletons.push_back({field, v.get<double>()});
        } else if (v.is_string()) {
            out[it->second].singletons.push_back({field, v.get<std::string>()});
        } else {
            throw Error("singletons.jsonl line " + std::to_string(line) + ": value must be a number or string");
        }
    });
    return out;
}

std::string schema_to_text(const FeatureSchema& schema) {
    json cols = json::array();
    for (const auto& c : schema.columns())
        cols.push_back({{"name", c.name}, {"kind", to_string(c.kind)}, {"source_id", c.source_id}});
    json maps = json::object();
    for (const auto& [field, values] : schema.categorical_maps()) {
        json m = json::object();
        for (const auto& [v, idx] : values) m[v] = idx;
        maps[field] = m;
    }
    json doc = {{"format", "treeman-schema"}, {"version", kSchemaVersion}, {"columns", cols},
                {"categorical_maps", maps}};
    return doc.dump(1) + "\n";
}

FeatureSchema schema_from_text(const std::string& text) {
    const json doc = io::parse(text, "schema");
    io::check_format(doc, "treeman-schema", kSchemaVersion);
    std::vector<Column> columns;
    for (const auto& c : doc.at("columns"))
        columns.push_back({c.at("name").get<std::string>(), parse_column_kind(c.at("kind").get<std::string>()),
                           c.at("source_id").get<std::string>()});
    std::map<std::string, std::map<std::string, int>> maps;
    for (const auto& [field, values] : doc.at("categorical_maps").items()) {
        for (const auto& [v, idx] : values.items()) maps[field][v] = idx.get<int>();
    }
    return FeatureSchema(std::move(columns), std::move(maps));
}

void write_schema(const FeatureSchema& schema, const std::filesystem::path& path) {
    io::write_file(path, schema_to_text(schema));
}

FeatureSchema read_schema(const std::filesystem::path& path) { return schema_from_text(io::read_file(path)); }

void write_feature_table(const FeatureTable& table, const std::filesystem::path& path) {
    std::string out;
    for (const auto& row : table.rows) {
        json cells = json::array();
        for (const auto& c : row.cells) cells.push_back(c ? json(*c) : json(nullptr));
        out += json{{"admission_id", row.admission_id}, {"cells", cells}}.dump();
        out += '\n';
    }
    io::write_file(path, out);
}

FeatureTable read_feature_table(const std::filesystem::path& path, const FeatureSchema& schema) {
    FeatureTable table;
    table.schema = schema;
    io::for_each_jsonl(path, [&](const json& j, std::size_t line) {
        FeatureRow row;
        row.admission_id = io::id_string(j, "admission_id", line);
        for (const auto& c : io::require(j, "cells", line)) row.cells.push_back(c.is_null() ? kMissing : Cell(c.get<double>()));
        if (row.cells.size() != schema.width())
            throw Error(path.string() + " line " + std::to_string(line) + ": row width " +
                        std::to_string(row.cells.size()) + " != schema width " + std::to_string(schema.width()));
        table.rows.push_back(std::move(row));
    }, /*required=*/true);
    return table;
}

}  // namespace treeman::tabular
