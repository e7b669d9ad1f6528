#pragma once

// Small random model/example pairs for gradient and invariant checks.

#include <random>

#include "treeman/model.hpp"

namespace toy {

struct Case {
    treeman::model::ModelParams params;
    treeman::model::Example example;
};

// N=5 tokens, |T|=2 trees with 2 and 3 leaves, |L|=3 labels.
inline Case make(std::uint64_t seed, std::size_t n_tokens = 5) {
    using namespace treeman::model;
    ModelDims dims;
    dims.vocab_size = 7;
    dims.d_e = 4;
    dims.d_lstm = 3;
    dims.d_t = 4;
    dims.d_l = 3;
    dims.n_labels = 3;
    dims.leaf_counts = {2, 3};
    Case c{ModelParams::initialize(dims, seed), {}};

    std::mt19937_64 rng(seed * 7919 + 1);
    // Larger-than-init values so every nonlinearity is exercised.
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    for (auto& [name, t] : c.params.named())
        for (double& v : t.values()) v = u(rng);

    c.example.doc.admission_id = "toy";
    for (std::size_t i = 0; i < n_tokens; ++i) c.example.doc.token_ids.push_back(static_cast<int>(rng() % 7));
    c.example.leaves.leaves = {static_cast<int>(rng() % 2), static_cast<int>(rng() % 3)};
    c.example.labels = {static_cast<int>(rng() % 2), static_cast<int>(rng() % 2), static_cast<int>(rng() % 2)};
    return c;
}

inline std::vector<treeman::ad::Tensor> all_params(const treeman::model::ModelParams& p) {
    std::vector<treeman::ad::Tensor> out;
    for (const auto& [name, t] : p.named()) out.push_back(t);
    return out;
}

}  // namespace toy
