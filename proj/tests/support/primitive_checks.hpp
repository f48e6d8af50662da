#pragma once

// Finite-difference checks of every differentiable primitive, shared by the
// unit tests and the acceptance runner.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace emgtf::testing {

struct PrimitiveCheck {
    std::string op;
    double rel_error = 0.0;
};

inline std::vector<PrimitiveCheck> check_all_primitives(double h = 1e-3) {
    std::vector<PrimitiveCheck> out;
    Rng rng(2024);
    auto record = [&](const std::string& op, const std::vector<GradError>& errs) {
        out.push_back({op, max_error(errs)});
    };

    {
        auto a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 5});
        record("matmul", check_gradients([&] { return probe(matmul(a, b)); }, {{"a", a}, {"b", b}}, h));
    }
    {
        auto a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 4, 5});
        record("bmm", check_gradients([&] { return probe(bmm(a, b)); }, {{"a", a}, {"b", b}}, h));
        auto c = random_tensor(rng, {2, 5, 4});
        record("bmm_transposed",
               check_gradients([&] { return probe(bmm(a, c, true)); }, {{"a", a}, {"c", c}}, h));
    }
    {
        auto a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4});
        record("add", check_gradients([&] { return probe(add(a, b)); }, {{"a", a}, {"b", b}}, h));
        record("mul", check_gradients([&] { return probe(mul(a, b)); }, {{"a", a}, {"b", b}}, h));
        record("scale", check_gradients([&] { return probe(scale(a, 2.5)); }, {{"a", a}}, h));
        record("sum", check_gradients([&] { return sum(mul(a, a)); }, {{"a", a}}, h));
        record("reshape", check_gradients([&] { return probe(reshape(a, {2, 6})); }, {{"a", a}}, h));
        auto row = random_tensor(rng, {4});
        record("add_row", check_gradients([&] { return probe(add_row(a, row)); }, {{"a", a}, {"row", row}}, h));
    }
    {
        auto x = random_tensor(rng, {2, 3, 5}, -2.0, 2.0);
        record("softmax_last", check_gradients([&] { return probe(softmax(x, 2)); }, {{"x", x}}, h));
        record("softmax_middle", check_gradients([&] { return probe(softmax(x, 1)); }, {{"x", x}}, h));
    }
    {
        auto x = random_tensor(rng, {4, 6}, -2.0, 2.0);
        auto g = random_tensor(rng, {6}, 0.5, 1.5), b = random_tensor(rng, {6});
        record("layer_norm", check_gradients([&] { return probe(layer_norm(x, g, b)); },
                                             {{"x", x}, {"gamma", g}, {"beta", b}}, h));
    }
    {
        auto x = random_tensor(rng, {3, 7}, -3.0, 3.0);
        record("gelu", check_gradients([&] { return probe(gelu(x)); }, {{"x", x}}, h));
    }
    {
        auto logits = random_tensor(rng, {4, 5}, -2.0, 2.0);
        const std::array<std::int32_t, 4> targets{0, 3, 4, 1};
        record("cross_entropy", check_gradients([&] { return cross_entropy(logits, targets); }, {{"logits", logits}}, h));
    }
    {
        auto x = random_tensor(rng, {2, 3, 8});
        record("split_heads", check_gradients([&] { return probe(split_heads(x, 4)); }, {{"x", x}}, h));
        auto y = random_tensor(rng, {8, 3, 2});
        record("merge_heads", check_gradients([&] { return probe(merge_heads(y, 4)); }, {{"y", y}}, h));
    }
    {
        auto x = random_tensor(rng, {2, 3, 8});
        record("patchify", check_gradients([&] { return probe(patchify(x, 4)); }, {{"x", x}}, h));
        auto tok = random_tensor(rng, {8});
        record("prepend_token",
               check_gradients([&] { return probe(prepend_token(x, tok)); }, {{"x", x}, {"token", tok}}, h));
        record("select_token", check_gradients([&] { return probe(select_token(x, 1)); }, {{"x", x}}, h));
    }
    {
        auto v = random_tensor(rng, {3, 4});
        auto c = random_tensor(rng, {5, 4}, -1.0, 1.0, false);
        auto a = random_tensor(rng, {5, 4}, 0.7, 1.5);
        record("fuzzy_rule_activation", check_gradients([&] { return probe(fuzzy_rule_activation(v, c, a)); },
                                                        {{"inputs", v}, {"scales", a}}, h));
    }
    return out;
}

} // namespace emgtf::testing
