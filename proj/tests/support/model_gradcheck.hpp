#pragma once

// Finite-difference check of the full classification loss with respect to
// every trainable tensor of a double-precision model.

#include <array>
#include <vector>

#include "emgtf/model.hpp"
#include "gradcheck.hpp"

namespace emgtf::testing {

/// Centroids drawn around zero so that rule activations differ between
/// clusters and every FNB path carries gradient.
inline void randomize_banks(EmgtfNet<double>& model, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& bank : model.banks()) {
        Matrix c(bank->k(), bank->dim());
        for (auto& v : c.values) v = rng.uniform(-1.5, 1.5);
        bank->set_centroids(std::move(c));
    }
}

inline Tensor<double> random_windows(Rng& rng, const ModelSpec& spec, std::size_t batch) {
    return random_tensor(rng, {batch, spec.channels, spec.window}, -1.0, 1.0, false);
}

/// max_coords = 0 probes every coordinate of every tensor. A positive
/// token_spread redraws the cls token and position embeddings uniformly in
/// +-token_spread.
inline std::vector<GradError> check_model_gradients(const ModelSpec& spec, std::size_t batch, double h,
                                                    std::size_t max_coords = 0, std::uint64_t seed = 5,
                                                    double token_spread = 0.0) {
    EmgtfNet<double> model(spec, seed);
    randomize_banks(model, seed + 1);
    if (token_spread > 0.0) {
        Rng spread(seed + 4);
        for (auto* t : {&model.cls_token, &model.pos_embed}) {
            for (auto& v : t->mutable_data()) v = spread.uniform(-token_spread, token_spread);
        }
    }
    Rng rng(seed + 2);
    const auto x = random_windows(rng, spec, batch);
    std::vector<std::int32_t> targets(batch);
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.below(spec.n_classes));
    auto loss = [&] { return cross_entropy(model.forward(x, Mode::eval), targets); };
    std::vector<std::pair<std::string, Tensor<double>>> leaves;
    for (auto& p : model.parameters()) leaves.emplace_back(p.name, p.tensor);
    return check_gradients(loss, leaves, h, max_coords, seed + 3);
}

} // namespace emgtf::testing
