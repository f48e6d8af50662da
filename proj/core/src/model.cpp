#include "emgtf/model.hpp"

#include <cmath>

#include "emgtf/error.hpp"
#include "emgtf/random.hpp"

namespace emgtf {

std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::v1: return "v1";
    case Variant::v2: return "v2";
    case Variant::v3: return "v3";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name) {
    if (name == "baseline") return Variant::baseline;
    if (name == "v1") return Variant::v1;
    if (name == "v2") return Variant::v2;
    if (name == "v3") return Variant::v3;
    throw ConfigError("unknown model variant '" + std::string(name) + "' (expected baseline, v1, v2 or v3)");
}

void ModelSpec::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw ConfigError(std::string("model.") + what + " must be positive");
    };
    positive(channels, "channels");
    positive(window, "window");
    positive(patch, "patch");
    positive(dim, "dim");
    positive(depth, "depth");
    positive(heads, "heads");
    positive(mlp_dim, "mlp_dim");
    if (n_classes < 2) throw ConfigError("model.n_classes must be at least 2");
    if (window % patch != 0) {
        throw ConfigError("model.window (" + std::to_string(window) + ") must be a multiple of model.patch (" +
                          std::to_string(patch) + ")");
    }
    if (dim % heads != 0) {
        throw ConfigError("model.dim (" + std::to_string(dim) + ") must be a multiple of model.heads (" +
                          std::to_string(heads) + ")");
    }
    if (has_head_fnb(variant) && fnb_k_v1 != n_classes) {
        throw ConfigError("model.fnb_k_v1 must equal n_classes (" + std::to_string(n_classes) +
                          "): the head FNB output is added to the logits");
    }
    if (has_encoder_fnb(variant) && fnb_k_v2 != dim) {
        throw ConfigError("model.fnb_k_v2 must equal dim (" + std::to_string(dim) +
                          "): the encoder FNB output is added to the MLP branch");
    }
    if (fnb_capacity == 0) throw ConfigError("model.fnb_capacity must be positive");
}

std::size_t expected_param_count(const ModelSpec& s, bool trainable_only) {
    const std::size_t d = s.dim;
    std::size_t n = s.patch_features() * d + d  // patch projection
                    + d                          // class token
                    + s.tokens() * d;            // position embeddings
    const std::size_t layer = 2 * d              // LN1
                              + 3 * d * d        // Q, K, V
                              + d * d + d        // W_MSA
                              + 2 * d            // LN2
                              + d * s.mlp_dim + s.mlp_dim + s.mlp_dim * d + d;
    n += s.depth * layer;
    n += 2 * d + d * s.n_classes + s.n_classes;  // head
    const std::size_t bank_copies = trainable_only ? 1 : 2;  // scale (+ centroids)
    if (has_encoder_fnb(s.variant)) n += s.depth * bank_copies * s.fnb_k_v2 * d;
    if (has_head_fnb(s.variant)) n += bank_copies * s.fnb_k_v1 * d;
    return n;
}

namespace {

std::uint64_t bank_seed(std::uint64_t seed, std::uint64_t slot) {
    std::uint64_t z = seed ^ (0xA0761D6478BD642FULL * (slot + 1));
    z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDULL;
    return z ^ (z >> 33);
}

template <typename T>
Tensor<T> uniform_param(Rng& rng, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> normal_param(Rng& rng, Shape shape, double sigma) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(sigma * rng.normal());
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> const_param(Shape shape, T value) {
    return Tensor<T>::full(std::move(shape), value, true);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x2d, const Tensor<T>& w, const Tensor<T>& b) {
    return add_row(matmul(x2d, w), b);
}

template <typename U, typename T>
Tensor<U> cast_param(const Tensor<T>& t) {
    if (!t.defined()) return {};
    std::vector<U> v(t.data().begin(), t.data().end());
    return Tensor<U>(t.shape(), std::move(v), t.requires_grad());
}

std::shared_ptr<CentroidBank> copy_bank(const std::shared_ptr<CentroidBank>& bank) {
    if (!bank) return nullptr;
    auto copy = std::make_shared<CentroidBank>(bank->k(), bank->dim(), bank->capacity(), bank->seed());
    copy->set_centroids(bank->centroids());
    copy->set_rollovers(bank->rollovers());
    return copy;
}

} // namespace

template <typename T>
Tensor<T> centroid_tensor(const CentroidBank& bank) {
    const auto& c = bank.centroids();
    return Tensor<T>({c.rows, c.cols}, std::vector<T>(c.values.begin(), c.values.end()), false);
}

template <typename T>
Tensor<T> embed_patches(const Tensor<T>& windows, const Tensor<T>& w_patch, const Tensor<T>& b_patch,
                        const Tensor<T>& cls_token, const Tensor<T>& pos_embed, std::size_t patch) {
    if (windows.rank() != 3) throw ContractError("embed_patches: windows must be [B, S, W]");
    const std::size_t batch = windows.dim(0);
    const std::size_t n_patches = windows.dim(2) / patch;
    const std::size_t d = w_patch.dim(1);
    if (pos_embed.numel() != (n_patches + 1) * d) {
        throw ContractError("embed_patches: position embeddings do not match " + std::to_string(n_patches + 1) +
                            " tokens of width " + std::to_string(d));
    }
    const auto projected = reshape(linear(patchify(windows, patch), w_patch, b_patch), {batch, n_patches, d});
    return add_row(prepend_token(projected, cls_token), pos_embed);
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, Tensor<T>* weights) {
    if (q.rank() != 3 || k.shape() != q.shape() || v.rank() != 3 || v.dim(1) != k.dim(1)) {
        throw ContractError("self_attention: Q, K, V must be [b, n, dh] with matching rows");
    }
    const T inv_scale = T{1} / std::sqrt(static_cast<T>(q.dim(2)));
    auto attn = softmax(scale(bmm(q, k, true), inv_scale), 2);
    if (weights) *weights = attn;
    return bmm(attn, v);
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& z, const EncoderLayer<T>& layer, std::size_t heads,
                               Tensor<T>* weights) {
    const std::size_t batch = z.dim(0), tokens = z.dim(1), d = z.dim(2);
    const auto flat = reshape(z, {batch * tokens, d});
    auto project = [&](const Tensor<T>& w) {
        return split_heads(reshape(matmul(flat, w), {batch, tokens, d}), heads);
    };
    const auto attended =
        self_attention(project(layer.w_query), project(layer.w_key), project(layer.w_value), weights);
    const auto merged = reshape(merge_heads(attended, heads), {batch * tokens, d});
    return reshape(linear(merged, layer.w_out, layer.b_out), {batch, tokens, d});
}

template <typename T>
Tensor<T> fnb_apply(const Tensor<T>& inputs, CentroidBank& bank, const Tensor<T>& scales, Mode mode) {
    if (inputs.rank() != 2 || inputs.dim(1) != bank.dim()) {
        throw ContractError("fnb_apply: inputs " + shape_str(inputs.shape()) + " do not match centroid width " +
                            std::to_string(bank.dim()));
    }
    if (mode == Mode::train) {
        const auto values = inputs.data();
        const std::size_t dim = bank.dim();
        for (std::size_t r = 0; r < inputs.dim(0); ++r) bank.push(values.subspan(r * dim, dim));
    }
    return fuzzy_rule_activation(inputs, centroid_tensor<T>(bank), scales);
}

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& z, EncoderLayer<T>& layer, std::size_t heads, Mode mode) {
    const std::size_t batch = z.dim(0), tokens = z.dim(1), d = z.dim(2);
    const auto attended = add(multi_head_attention(layer_norm(z, layer.ln1_gamma, layer.ln1_beta), layer, heads), z);
    const auto normed = reshape(layer_norm(attended, layer.ln2_gamma, layer.ln2_beta), {batch * tokens, d});
    auto branch = linear(gelu(linear(normed, layer.w_fc1, layer.b_fc1)), layer.w_fc2, layer.b_fc2);
    if (layer.fnb_bank) branch = add(branch, fnb_apply(normed, *layer.fnb_bank, layer.fnb_scale, mode));
    return add(reshape(branch, {batch, tokens, d}), attended);
}

template <typename T>
EmgtfNet<T>::EmgtfNet(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    const std::size_t d = spec_.dim;
    const std::size_t f = spec_.patch_features();

    w_patch = uniform_param<T>(rng, {f, d}, f);
    b_patch = const_param<T>({d}, T{0});
    cls_token = normal_param<T>(rng, {d}, 0.02);
    pos_embed = normal_param<T>(rng, {spec_.tokens(), d}, 0.02);

    for (std::size_t l = 0; l < spec_.depth; ++l) {
        EncoderLayer<T> layer;
        layer.ln1_gamma = const_param<T>({d}, T{1});
        layer.ln1_beta = const_param<T>({d}, T{0});
        layer.w_query = uniform_param<T>(rng, {d, d}, d);
        layer.w_key = uniform_param<T>(rng, {d, d}, d);
        layer.w_value = uniform_param<T>(rng, {d, d}, d);
        layer.w_out = uniform_param<T>(rng, {d, d}, d);
        layer.b_out = const_param<T>({d}, T{0});
        layer.ln2_gamma = const_param<T>({d}, T{1});
        layer.ln2_beta = const_param<T>({d}, T{0});
        layer.w_fc1 = uniform_param<T>(rng, {d, spec_.mlp_dim}, d);
        layer.b_fc1 = const_param<T>({spec_.mlp_dim}, T{0});
        layer.w_fc2 = uniform_param<T>(rng, {spec_.mlp_dim, d}, spec_.mlp_dim);
        layer.b_fc2 = const_param<T>({d}, T{0});
        if (has_encoder_fnb(spec_.variant)) {
            layer.fnb_scale = const_param<T>({spec_.fnb_k_v2, d}, T{1});
            layer.fnb_bank = std::make_shared<CentroidBank>(spec_.fnb_k_v2, d, spec_.fnb_capacity,
                                                            bank_seed(seed, 1 + l));
        }
        layers.push_back(std::move(layer));
    }

    head_ln_gamma = const_param<T>({d}, T{1});
    head_ln_beta = const_param<T>({d}, T{0});
    w_head = uniform_param<T>(rng, {d, spec_.n_classes}, d);
    b_head = const_param<T>({spec_.n_classes}, T{0});
    if (has_head_fnb(spec_.variant)) {
        head_fnb_scale = const_param<T>({spec_.fnb_k_v1, d}, T{1});
        head_fnb_bank = std::make_shared<CentroidBank>(spec_.fnb_k_v1, d, spec_.fnb_capacity, bank_seed(seed, 0));
    }
}

template <typename T>
ForwardTrace<T> EmgtfNet<T>::forward_trace(const Tensor<T>& windows, Mode mode) {
    if (windows.rank() != 3 || windows.dim(1) != spec_.channels || windows.dim(2) != spec_.window) {
        throw ContractError("model expects windows [B, " + std::to_string(spec_.channels) + ", " +
                            std::to_string(spec_.window) + "], got " + shape_str(windows.shape()));
    }
    ForwardTrace<T> trace;
    trace.embedded = embed_patches(windows, w_patch, b_patch, cls_token, pos_embed, spec_.patch);
    auto z = trace.embedded;
    for (auto& layer : layers) z = encoder_layer(z, layer, spec_.heads, mode);
    trace.encoded = z;
    trace.head_features = layer_norm(select_token(z, 0), head_ln_gamma, head_ln_beta);
    auto logits = linear(trace.head_features, w_head, b_head);
    if (head_fnb_bank) logits = add(logits, fnb_apply(trace.head_features, *head_fnb_bank, head_fnb_scale, mode));
    trace.logits = logits;
    return trace;
}

template <typename T>
Tensor<T> EmgtfNet<T>::forward(const Tensor<T>& windows, Mode mode) {
    return forward_trace(windows, mode).logits;
}

template <typename T>
std::vector<NamedTensor<T>> EmgtfNet<T>::parameters() const {
    std::vector<NamedTensor<T>> out{
        {"patch.weight", w_patch}, {"patch.bias", b_patch}, {"cls_token", cls_token}, {"pos_embed", pos_embed}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        out.push_back({p + "ln1.gamma", L.ln1_gamma});
        out.push_back({p + "ln1.beta", L.ln1_beta});
        out.push_back({p + "attn.query", L.w_query});
        out.push_back({p + "attn.key", L.w_key});
        out.push_back({p + "attn.value", L.w_value});
        out.push_back({p + "attn.out.weight", L.w_out});
        out.push_back({p + "attn.out.bias", L.b_out});
        out.push_back({p + "ln2.gamma", L.ln2_gamma});
        out.push_back({p + "ln2.beta", L.ln2_beta});
        out.push_back({p + "mlp.fc1.weight", L.w_fc1});
        out.push_back({p + "mlp.fc1.bias", L.b_fc1});
        out.push_back({p + "mlp.fc2.weight", L.w_fc2});
        out.push_back({p + "mlp.fc2.bias", L.b_fc2});
        if (L.fnb_bank) out.push_back({p + "fnb.scale", L.fnb_scale});
    }
    out.push_back({"head.ln.gamma", head_ln_gamma});
    out.push_back({"head.ln.beta", head_ln_beta});
    out.push_back({"head.weight", w_head});
    out.push_back({"head.bias", b_head});
    if (head_fnb_bank) out.push_back({"head_fnb.scale", head_fnb_scale});
    return out;
}

template <typename T>
std::vector<std::shared_ptr<CentroidBank>> EmgtfNet<T>::banks() const {
    std::vector<std::shared_ptr<CentroidBank>> out;
    if (head_fnb_bank) out.push_back(head_fnb_bank);
    for (const auto& L : layers) {
        if (L.fnb_bank) out.push_back(L.fnb_bank);
    }
    return out;
}

template <typename T>
std::vector<std::string> EmgtfNet<T>::bank_names() const {
    std::vector<std::string> out;
    if (head_fnb_bank) out.emplace_back("head_fnb");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].fnb_bank) out.push_back("layers." + std::to_string(l) + ".fnb");
    }
    return out;
}

template <typename T>
std::size_t EmgtfNet<T>::param_count(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    if (!trainable_only) {
        for (const auto& b : banks()) n += b->k() * b->dim();
    }
    return n;
}

template <typename T>
template <typename U>
EmgtfNet<U> EmgtfNet<T>::convert() const {
    EmgtfNet<U> out(spec_, typename EmgtfNet<U>::Uninitialized{});
    out.w_patch = cast_param<U>(w_patch);
    out.b_patch = cast_param<U>(b_patch);
    out.cls_token = cast_param<U>(cls_token);
    out.pos_embed = cast_param<U>(pos_embed);
    for (const auto& L : layers) {
        EncoderLayer<U> M;
        M.ln1_gamma = cast_param<U>(L.ln1_gamma);
        M.ln1_beta = cast_param<U>(L.ln1_beta);
        M.w_query = cast_param<U>(L.w_query);
        M.w_key = cast_param<U>(L.w_key);
        M.w_value = cast_param<U>(L.w_value);
        M.w_out = cast_param<U>(L.w_out);
        M.b_out = cast_param<U>(L.b_out);
        M.ln2_gamma = cast_param<U>(L.ln2_gamma);
        M.ln2_beta = cast_param<U>(L.ln2_beta);
        M.w_fc1 = cast_param<U>(L.w_fc1);
        M.b_fc1 = cast_param<U>(L.b_fc1);
        M.w_fc2 = cast_param<U>(L.w_fc2);
        M.b_fc2 = cast_param<U>(L.b_fc2);
        M.fnb_scale = cast_param<U>(L.fnb_scale);
        M.fnb_bank = copy_bank(L.fnb_bank);
        out.layers.push_back(std::move(M));
    }
    out.head_ln_gamma = cast_param<U>(head_ln_gamma);
    out.head_ln_beta = cast_param<U>(head_ln_beta);
    out.w_head = cast_param<U>(w_head);
    out.b_head = cast_param<U>(b_head);
    out.head_fnb_scale = cast_param<U>(head_fnb_scale);
    out.head_fnb_bank = copy_bank(head_fnb_bank);
    return out;
}

template class EmgtfNet<float>;
template class EmgtfNet<double>;
template EmgtfNet<float> EmgtfNet<float>::convert<float>() const;
template EmgtfNet<double> EmgtfNet<float>::convert<double>() const;
template EmgtfNet<float> EmgtfNet<double>::convert<float>() const;
template EmgtfNet<double> EmgtfNet<double>::convert<double>() const;

#define EMGTF_INSTANTIATE_MODEL(T)                                                                           \
    template Tensor<T> centroid_tensor<T>(const CentroidBank&);                                             \
    template Tensor<T> embed_patches(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     const Tensor<T>&, std::size_t);                                        \
    template Tensor<T> self_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*);    \
    template Tensor<T> multi_head_attention(const Tensor<T>&, const EncoderLayer<T>&, std::size_t,          \
                                            Tensor<T>*);                                                    \
    template Tensor<T> fnb_apply(const Tensor<T>&, CentroidBank&, const Tensor<T>&, Mode);                   \
    template Tensor<T> encoder_layer(const Tensor<T>&, EncoderLayer<T>&, std::size_t, Mode);

EMGTF_INSTANTIATE_MODEL(float)
EMGTF_INSTANTIATE_MODEL(double)

#undef EMGTF_INSTANTIATE_MODEL

} // namespace emgtf
