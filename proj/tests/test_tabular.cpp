#include <algorithm>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "treeman/error.hpp"
#include "treeman/tabular.hpp"

using namespace treeman::tabular;

namespace {

StructuredRecordSet admission(std::string id) {
    StructuredRecordSet rs;
    rs.admission_id = std::move(id);
    return rs;
}

TimeSeries series(std::string cls, std::vector<double> values) {
    TimeSeries ts{std::move(cls), {}};
    double t = 0.0;
    for (double v : values) ts.points.push_back({t += 1.0, v});
    return ts;
}

}  // namespace

TEST_CASE("aggregate_time_series") {
    const std::vector<double> v = {1.0, 2.0, 3.0};
    auto s = aggregate_time_series(v);
    CHECK(*s.mean == 2.0);
    CHECK(*s.max == 3.0);
    CHECK(*s.min == 1.0);

    s = aggregate_time_series(std::vector<double>{});
    CHECK_FALSE(s.mean.has_value());
    CHECK_FALSE(s.max.has_value());
    CHECK_FALSE(s.min.has_value());

    s = aggregate_time_series(std::vector<double>{5.0});
    CHECK(*s.mean == 5.0);
    CHECK(*s.max == 5.0);
    CHECK(*s.min == 5.0);

    // min <= mean <= max even when rounding would break it.
    const std::vector<double> near = {0.1, 0.1, 0.1};
    s = aggregate_time_series(near);
    CHECK(*s.min <= *s.mean);
    CHECK(*s.mean <= *s.max);

    const std::vector<double> bad = {1.0, std::nan("")};
    CHECK_THROWS_WITH_AS(aggregate_time_series(bad, "a1", "hr"), doctest::Contains("a1"), treeman::Error);
}

TEST_CASE("binarize_multivalued") {
    FeatureSchema schema({{"drug:4821", ColumnKind::binary_indicator, "drug:4821"}}, {});
    std::vector<Cell> row(1, 0.0);
    const std::vector<Event> present = {{EventCategory::drug, "4821"}};
    binarize_multivalued(present, schema, row);
    CHECK(*row[0] == 1.0);

    row = {0.0};
    binarize_multivalued(std::vector<Event>{}, schema, row);
    CHECK(*row[0] == 0.0);

    row = {0.0};
    const std::vector<Event> unseen = {{EventCategory::drug, "9999"}};
    binarize_multivalued(unseen, schema, row);
    CHECK(row.size() == 1);
    CHECK(*row[0] == 0.0);
}

TEST_CASE("encode_singletons") {
    FeatureSchema schema({{"age", ColumnKind::singleton_numeric, "age"},
                          {"admission_type=EMERGENCY", ColumnKind::singleton_onehot, "admission_type=EMERGENCY"},
                          {"admission_type=ELECTIVE", ColumnKind::singleton_onehot, "admission_type=ELECTIVE"}},
                         {{"admission_type", {{"EMERGENCY", 0}, {"ELECTIVE", 1}}}});
    std::vector<Cell> row = {kMissing, 0.0, 0.0};
    encode_singletons(std::vector<Singleton>{{"age", 63.0}, {"admission_type", std::string("EMERGENCY")}}, schema, row);
    CHECK(*row[0] == 63.0);
    CHECK(*row[1] == 1.0);
    CHECK(*row[2] == 0.0);

    row = {kMissing, 0.0, 0.0};
    encode_singletons(std::vector<Singleton>{{"admission_type", std::string("NEWBORN")}}, schema, row);
    CHECK_FALSE(row[0].has_value());
    CHECK(*row[1] == 0.0);
    CHECK(*row[2] == 0.0);
}

TEST_CASE("build_feature_table column count and layout") {
    auto a = admission("a1");
    a.time_series.push_back(series("hr", {80, 90}));
    a.multivalued.push_back({EventCategory::drug, "d1"});
    a.singletons.push_back({"age", 40.0});
    auto b = admission("a2");
    b.multivalued.push_back({EventCategory::drug, "d2"});
    const std::vector<StructuredRecordSet> sets = {a, b};

    const auto built = build_feature_table(sets);
    // 3 ts aggregates + 2 drugs + 1 numeric singleton.
    REQUIRE(built.schema.width() == 6);
    const auto& cols = built.schema.columns();
    CHECK(cols[0].kind == ColumnKind::ts_mean);
    CHECK(cols[1].kind == ColumnKind::ts_max);
    CHECK(cols[2].kind == ColumnKind::ts_min);
    CHECK(cols[3].name == "drug:d1");
    CHECK(cols[4].name == "drug:d2");
    CHECK(cols[5].kind == ColumnKind::singleton_numeric);

    const auto& r0 = built.table.rows[0].cells;
    CHECK(*r0[0] == 85.0);
    CHECK(*r0[1] == 90.0);
    CHECK(*r0[2] == 80.0);
    CHECK(*r0[3] == 1.0);
    CHECK(*r0[4] == 0.0);
    CHECK(*r0[5] == 40.0);
    const auto& r1 = built.table.rows[1].cells;
    CHECK_FALSE(r1[0].has_value());
    CHECK(*r1[3] == 0.0);
    CHECK(*r1[4] == 1.0);
    CHECK_FALSE(r1[5].has_value());
}

TEST_CASE("build_feature_table errors") {
    CHECK_THROWS_WITH_AS(build_feature_table(std::vector<StructuredRecordSet>{}), doctest::Contains("no training records"),
                         treeman::Error);
    const std::vector<StructuredRecordSet> dup = {admission("x"), admission("x")};
    CHECK_THROWS_AS(build_feature_table(dup), treeman::Error);
    auto twice = admission("y");
    twice.singletons = {{"age", 1.0}, {"age", 2.0}};
    CHECK_THROWS_AS(build_feature_table(std::vector<StructuredRecordSet>{twice}), treeman::Error);
}

TEST_CASE("mixed-type singleton field becomes categorical") {
    auto a = admission("a");
    a.singletons.push_back({"code", 3.0});
    auto b = admission("b");
    b.singletons.push_back({"code", std::string("X")});
    const auto built = build_feature_table(std::vector<StructuredRecordSet>{a, b});
    CHECK(built.schema.is_categorical("code"));
    CHECK(built.schema.width() == 2);
}

TEST_CASE("schema freeze, idempotence and degenerate rows") {
    auto a = admission("a");
    a.time_series.push_back(series("hr", {1, 2}));
    a.multivalued.push_back({EventCategory::lab_abnormal, "50"});
    a.singletons.push_back({"type", std::string("U")});
    auto b = admission("b");
    b.singletons.push_back({"weight", 70.0});
    const std::vector<StructuredRecordSet> train = {a, b};
    const auto built = build_feature_table(train);

    CHECK(apply_schema(train, built.schema) == built.table);

    auto empty = admission("e");
    auto unseen = admission("u");
    unseen.multivalued.push_back({EventCategory::drug, "zzz"});
    unseen.time_series.push_back(series("resp", {3}));
    unseen.singletons.push_back({"type", std::string("NEVER")});
    const auto other = apply_schema(std::vector<StructuredRecordSet>{empty, unseen}, built.schema);
    REQUIRE(other.rows.size() == 2);
    CHECK(other.rows[0].cells == other.rows[1].cells);
    for (std::size_t c = 0; c < built.schema.width(); ++c) {
        const auto kind = built.schema.columns()[c].kind;
        const bool missing_kind = kind == ColumnKind::ts_mean || kind == ColumnKind::ts_max ||
                                  kind == ColumnKind::ts_min || kind == ColumnKind::singleton_numeric;
        if (missing_kind) {
            CHECK_FALSE(other.rows[0].cells[c].has_value());
        } else {
            CHECK(*other.rows[0].cells[c] == 0.0);
        }
        CHECK(other.rows[0].cells.size() == built.schema.width());
    }
}

TEST_CASE("schema is deterministic and order independent") {
    std::mt19937_64 rng(3);
    std::vector<StructuredRecordSet> sets;
    for (int i = 0; i < 12; ++i) {
        auto rs = admission("adm" + std::to_string(i));
        for (int c = 0; c < 3; ++c) {
            if (rng() % 2) rs.time_series.push_back(series("c" + std::to_string(c), {double(rng() % 50), 1.0}));
        }
        for (int k = 0; k < 4; ++k) {
            if (rng() % 2) rs.multivalued.push_back({EventCategory::organism, std::to_string(rng() % 6)});
        }
        rs.singletons.push_back({"age", double(rng() % 90)});
        rs.singletons.push_back({"kind", std::string(rng() % 2 ? "A" : "B")});
        sets.push_back(rs);
    }
    const auto first = build_feature_table(sets);
    const auto again = build_feature_table(sets);
    CHECK(schema_to_text(first.schema) == schema_to_text(again.schema));

    auto shuffled = sets;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (auto& rs : shuffled) std::reverse(rs.multivalued.begin(), rs.multivalued.end());
    const auto permuted = build_feature_table(shuffled);
    CHECK(permuted.schema == first.schema);
    // Rows follow input order; match them up by admission.
    for (const auto& row : permuted.table.rows) {
        const auto it = std::find_if(first.table.rows.begin(), first.table.rows.end(),
                                     [&](const FeatureRow& r) { return r.admission_id == row.admission_id; });
        REQUIRE(it != first.table.rows.end());
        CHECK(it->cells == row.cells);
    }
}

TEST_CASE("schema and feature table files round trip") {
    auto a = admission("a");
    a.time_series.push_back(series("hr", {0.1, 0.7, 1e-17}));
    a.singletons.push_back({"type", std::string("U")});
    a.singletons.push_back({"age", 1.0 / 3.0});
    auto b = admission("b");
    b.multivalued.push_back({EventCategory::specimen, "s1"});
    const auto built = build_feature_table(std::vector<StructuredRecordSet>{a, b});

    const auto dir = std::filesystem::temp_directory_path() / "treeman_test_tabular";
    std::filesystem::remove_all(dir);
    write_schema(built.schema, dir / "schema.json");
    const auto schema = read_schema(dir / "schema.json");
    CHECK(schema == built.schema);
    CHECK(schema_from_text(schema_to_text(built.schema)) == built.schema);
    write_feature_table(built.table, dir / "features.jsonl");
    CHECK(read_feature_table(dir / "features.jsonl", schema) == built.table);
    std::filesystem::remove_all(dir);
}
