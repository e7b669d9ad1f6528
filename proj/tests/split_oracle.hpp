#pragma once

// Exhaustive split enumeration used as an independent oracle for the tree
// learner and the acceptance checks. Every (column, threshold, direction) is
// scored by routing each row directly.

#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include "treeman/forest.hpp"

namespace oracle {

inline treeman::tabular::FeatureTable random_table(std::mt19937_64& rng, std::size_t n, std::size_t w) {
    using namespace treeman::tabular;
    std::vector<Column> cols;
    for (std::size_t c = 0; c < w; ++c)
        cols.push_back({"f" + std::to_string(c), ColumnKind::singleton_numeric, "f" + std::to_string(c)});
    FeatureTable t;
    t.schema = FeatureSchema(cols, {});
    for (std::size_t r = 0; r < n; ++r) {
        FeatureRow row{"r" + std::to_string(r), {}};
        for (std::size_t c = 0; c < w; ++c) {
            if (rng() % 5 == 0) {
                row.cells.push_back(kMissing);
            } else {
                row.cells.push_back(static_cast<double>(rng() % 6));
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline treeman::forest::SplitCandidate best_split(const treeman::tabular::FeatureTable& table,
                                                  const std::vector<std::size_t>& rows, const std::vector<double>& g,
                                                  const std::vector<double>& h,
                                                  const treeman::forest::TreeConfig& config) {
    treeman::forest::SplitCandidate best;
    for (std::size_t c = 0; c < table.width(); ++c) {
        std::set<double> distinct;
        for (auto r : rows)
            if (table.rows[r].cells[c]) distinct.insert(*table.rows[r].cells[c]);
        const std::vector<double> vals(distinct.begin(), distinct.end());
        for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
            double t = vals[k] + (vals[k + 1] - vals[k]) / 2.0;
            if (!(vals[k] < t)) t = vals[k + 1];
            for (bool dl : {true, false}) {
                double gl = 0, hl = 0, gr = 0, hr = 0;
                for (auto r : rows) {
                    const auto& cell = table.rows[r].cells[c];
                    const bool left = cell ? *cell < t : dl;
                    (left ? gl : gr) += g[r];
                    (left ? hl : hr) += h[r];
                }
                if (hl < config.min_child_weight || hr < config.min_child_weight) continue;
                const double lam = config.l2_lambda;
                const double gain =
                    0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - (gl + gr) * (gl + gr) / (hl + hr + lam));
                // Strictly better only: earlier column, smaller threshold and
                // default-left win ties.
                if (gain > best.gain) best = {static_cast<int>(c), t, dl, gain};
            }
        }
    }
    return best;
}

}  // namespace oracle
