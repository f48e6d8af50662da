#pragma once

// Vision-transformer classifier for sEMG windows, with optional fuzzy neural
// blocks (FNB) parallel to the classification head (v1), to the encoder MLP
// (v2), or both (v3).

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emgtf/fuzzy.hpp"
#include "emgtf/ops.hpp"
#include "emgtf/tensor.hpp"

namespace emgtf {

enum class Variant : std::uint8_t { baseline = 0, v1 = 1, v2 = 2, v3 = 3 };

std::string_view to_string(Variant v);
/// Throws ConfigError for anything but baseline|v1|v2|v3.
Variant parse_variant(std::string_view name);

inline bool has_head_fnb(Variant v) { return v == Variant::v1 || v == Variant::v3; }
inline bool has_encoder_fnb(Variant v) { return v == Variant::v2 || v == Variant::v3; }

struct ModelSpec {
    std::size_t channels = 12;
    std::size_t window = 20;
    std::size_t patch = 4;
    std::size_t dim = 64;
    std::size_t depth = 1;
    std::size_t heads = 8;
    std::size_t mlp_dim = 256;
    std::size_t n_classes = 17;
    Variant variant = Variant::baseline;
    // The head FNB output is added to the logits and the encoder FNB output
    // to the MLP branch, so these must equal n_classes and dim.
    std::size_t fnb_k_v1 = 17;
    std::size_t fnb_k_v2 = 64;
    std::size_t fnb_capacity = kDefaultBufferCapacity;

    std::size_t n_patches() const { return window / patch; }
    std::size_t tokens() const { return n_patches() + 1; }
    std::size_t head_dim() const { return dim / heads; }
    std::size_t patch_features() const { return channels * patch; }

    /// Throws ConfigError on inconsistent dimensions.
    void validate() const;

    bool operator==(const ModelSpec&) const = default;
};

template <typename T>
struct EncoderLayer {
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> w_query, w_key, w_value;  // d x d, no bias
    Tensor<T> w_out, b_out;             // d x d + d
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> w_fc1, b_fc1;             // d x mlp + mlp
    Tensor<T> w_fc2, b_fc2;             // mlp x d + d
    Tensor<T> fnb_scale;                // K x d, encoder-FNB variants only
    std::shared_ptr<CentroidBank> fnb_bank;
};

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

enum class Mode { eval, train };

/// Intermediate values of one forward pass.
template <typename T>
struct ForwardTrace {
    Tensor<T> embedded;       // [B, N+1, d]
    Tensor<T> encoded;        // [B, N+1, d]
    Tensor<T> head_features;  // LN(z_L0), [B, d]
    Tensor<T> logits;         // [B, n_classes]
};

// Building blocks, exposed for testing against direct formula evaluation.

/// Z0 = [x_cls; patches * E + b] + E_pos for windows [B, S, W].
template <typename T>
Tensor<T> embed_patches(const Tensor<T>& windows, const Tensor<T>& w_patch, const Tensor<T>& b_patch,
                        const Tensor<T>& cls_token, const Tensor<T>& pos_embed, std::size_t patch);

/// softmax(Q K^T / sqrt(dh)) V over [b, n, dh] triples. When `weights` is
/// non-null it receives the [b, n, n] attention matrix.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, Tensor<T>* weights = nullptr);

/// h heads on disjoint dh-slices of the Q/K/V projections, concatenated and
/// projected by W_out (+ b_out). Input and output are [B, T, d].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& z, const EncoderLayer<T>& layer, std::size_t heads,
                               Tensor<T>* weights = nullptr);

/// Normalized rule activations of a fuzzy neural block for rows of [B, D].
/// In train mode every row is pushed into the bank's buffer.
template <typename T>
Tensor<T> fnb_apply(const Tensor<T>& inputs, CentroidBank& bank, const Tensor<T>& scales, Mode mode);

/// Z' = MSA(LN(Z)) + Z; Z_out = MLP(LN(Z')) [+ FNB(LN(Z')) per token] + Z'.
template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& z, EncoderLayer<T>& layer, std::size_t heads, Mode mode);

template <typename T>
class EmgtfNet {
public:
    /// Weights drawn from `seed`: linear maps uniform in +-1/sqrt(fan_in),
    /// zero biases, unit LayerNorm gains, cls token and position embeddings
    /// from N(0, 0.02^2), FNB scales at one, centroids at zero.
    EmgtfNet(ModelSpec spec, std::uint64_t seed);

    const ModelSpec& spec() const noexcept { return spec_; }
    Variant variant() const noexcept { return spec_.variant; }

    /// windows: [B, S, W]. Returns logits [B, n_classes].
    Tensor<T> forward(const Tensor<T>& windows, Mode mode = Mode::eval);
    ForwardTrace<T> forward_trace(const Tensor<T>& windows, Mode mode = Mode::eval);

    /// Trainable tensors in a fixed order with stable names.
    std::vector<NamedTensor<T>> parameters() const;
    /// Centroid banks in a fixed order: head FNB first, then one per layer.
    std::vector<std::shared_ptr<CentroidBank>> banks() const;
    std::vector<std::string> bank_names() const;

    /// Scalar count; without trainable_only the centroid state is included.
    std::size_t param_count(bool trainable_only = true) const;

    /// Deep copy (weights and centroid banks, buffers emptied) converted to U.
    template <typename U>
    EmgtfNet<U> convert() const;

    // Direct access for tests and serialization.
    Tensor<T> w_patch, b_patch, cls_token, pos_embed;
    std::vector<EncoderLayer<T>> layers;
    Tensor<T> head_ln_gamma, head_ln_beta, w_head, b_head;
    Tensor<T> head_fnb_scale;
    std::shared_ptr<CentroidBank> head_fnb_bank;

private:
    struct Uninitialized {};
    EmgtfNet(ModelSpec spec, Uninitialized) : spec_(std::move(spec)) {}
    template <typename>
    friend class EmgtfNet;

    ModelSpec spec_;
};

/// Centroids of a bank as a constant K x d tensor.
template <typename T>
Tensor<T> centroid_tensor(const CentroidBank& bank);

/// Trainable parameters of `spec` under this parameterization (no Q/K/V
/// bias, FNB scales K x d).
std::size_t expected_param_count(const ModelSpec& spec, bool trainable_only = true);

extern template class EmgtfNet<float>;
extern template class EmgtfNet<double>;

} // namespace emgtf
