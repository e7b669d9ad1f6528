#pragma once

/**
 * Structured-record featurization.
 *
 * Three record families are flattened into one numeric row per admission:
 *  - derived time series   -> mean / max / min per class (MISSING when empty)
 *  - multivalued events    -> 0/1 presence indicator per (category, item)
 *  - single-valued fields  -> numeric passthrough or one-hot over training values
 *
 * The schema is learned on the training split only and frozen afterwards;
 * unseen items and categories are ignored when it is applied to other splits.
 */

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace treeman::tabular {

// A feature cell; std::nullopt is the MISSING sentinel.
using Cell = std::optional<double>;
inline constexpr std::nullopt_t kMissing = std::nullopt;

enum class EventCategory { lab_abnormal, drug, organism, specimen, antibiotic };

std::string to_string(EventCategory c);
EventCategory parse_event_category(const std::string& s);

struct TimePoint {
    double timestamp = 0.0;
    double value = 0.0;
};

struct TimeSeries {
    std::string class_id;
    std::vector<TimePoint> points;
};

struct Event {
    EventCategory category = EventCategory::lab_abnormal;
    std::string item_id;
};

// Numeric singletons carry a double, categorical ones a string.
using SingletonValue = std::variant<double, std::string>;

struct Singleton {
    std::string field;
    SingletonValue value;
};

struct StructuredRecordSet {
    std::string admission_id;
    std::vector<TimeSeries> time_series;
    std::vector<Event> multivalued;
    std::vector<Singleton> singletons;
};

enum class ColumnKind { ts_mean, ts_max, ts_min, binary_indicator, singleton_numeric, singleton_onehot };

std::string to_string(ColumnKind k);
ColumnKind parse_column_kind(const std::string& s);

struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::ts_mean;
    std::string source_id;

    friend bool operator==(const Column&, const Column&) = default;
};

class FeatureSchema {
public:
    FeatureSchema() = default;
    FeatureSchema(std::vector<Column> columns,
                  std::map<std::string, std::map<std::string, int>> categorical_maps);

    const std::vector<Column>& columns() const { return columns_; }
    std::size_t width() const { return columns_.size(); }

    // value -> one-hot position for each categorical singleton field
    const std::map<std::string, std::map<std::string, int>>& categorical_maps() const {
        return categorical_maps_;
    }

    std::optional<std::size_t> find(ColumnKind kind, const std::string& source_id) const;

    bool is_categorical(const std::string& field) const { return categorical_maps_.contains(field); }

    friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
        return a.columns_ == b.columns_ && a.categorical_maps_ == b.categorical_maps_;
    }

private:
    std::vector<Column> columns_;
    std::map<std::string, std::map<std::string, int>> categorical_maps_;
    std::map<std::pair<ColumnKind, std::string>, std::size_t> index_;
};

struct FeatureRow {
    std::string admission_id;
    std::vector<Cell> cells;

    friend bool operator==(const FeatureRow&, const FeatureRow&) = default;
};

struct FeatureTable {
    FeatureSchema schema;
    std::vector<FeatureRow> rows;

    std::size_t width() const { return schema.width(); }
    std::size_t size() const { return rows.size(); }

    friend bool operator==(const FeatureTable&, const FeatureTable&) = default;
};

struct SeriesSummary {
    Cell mean;
    Cell max;
    Cell min;
};

// Throws Error naming `admission_id` / `class_id` on non-finite input.
SeriesSummary aggregate_time_series(std::span<const double> values,
                                    const std::string& admission_id = {},
                                    const std::string& class_id = {});

// Writes 0/1 into the binary_indicator cells of `row`; other cells untouched.
void binarize_multivalued(std::span<const Event> records, const FeatureSchema& schema,
                          std::vector<Cell>& row);

// Writes the singleton_numeric / singleton_onehot cells of `row`.
void encode_singletons(std::span<const Singleton> singletons, const FeatureSchema& schema,
                       std::vector<Cell>& row);

struct BuildResult {
    FeatureTable table;
    FeatureSchema schema;
};

BuildResult build_feature_table(std::span<const StructuredRecordSet> record_sets);

FeatureTable apply_schema(std::span<const StructuredRecordSet> record_sets,
                          const FeatureSchema& schema);

// --- file formats -----------------------------------------------------------

// Reads timeseries.jsonl / events.jsonl / singletons.jsonl from `dir` (absent
// files count as empty) and groups records by admission. One record set is
// returned per requested admission id, in request order; records that belong to
// other admissions are skipped.
std::vector<StructuredRecordSet> read_record_sets(const std::filesystem::path& dir,
                                                  std::span<const std::string> admission_ids);

void write_schema(const FeatureSchema& schema, const std::filesystem::path& path);
FeatureSchema read_schema(const std::filesystem::path& path);
std::string schema_to_text(const FeatureSchema& schema);
FeatureSchema schema_from_text(const std::string& text);

// One JSON object per line: {"admission_id": ..., "cells": [..., null, ...]}.
void write_feature_table(const FeatureTable& table, const std::filesystem::path& path);
FeatureTable read_feature_table(const std::filesystem::path& path, const FeatureSchema& schema);

}  // namespace treeman::tabular
