#include "emgtf/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>

#include "emgtf/error.hpp"

namespace emgtf {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

// Gradient sink of parent `i`, or nullptr when that parent needs none.
template <typename T>
T* grad_of(NodeT<T>& self, std::size_t i) {
    auto& p = *self.parents[i];
    return p.requires_grad ? p.grad_storage().data() : nullptr;
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
    }
}

std::atomic<std::uint64_t> g_fuzzy_fallbacks{0};

} // namespace

std::uint64_t fuzzy_uniform_fallbacks() noexcept { return g_fuzzy_fallbacks.load(); }

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<T> out(m * n, T{0});
    const T* A = a.data().data();
    const T* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        T* c = out.data() + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const T av = A[i * k + t];
            const T* brow = B + t * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
        }
    }
    return Tensor<T>::from_op(
        {m, n}, std::move(out), {a, b},
        [m, k, n](NodeT<T>& self) {
            const T* G = self.grad.data();
            const T* A = self.parents[0]->data.data();
            const T* B = self.parents[1]->data.data();
            if (T* dA = grad_of(self, 0)) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t t = 0; t < k; ++t) {
                        const T* g = G + i * n;
                        const T* brow = B + t * n;
                        T acc{0};
                        for (std::size_t j = 0; j < n; ++j) acc += g[j] * brow[j];
                        dA[i * k + t] += acc;
                    }
                }
            }
            if (T* dB = grad_of(self, 1)) {
                for (std::size_t i = 0; i < m; ++i) {
                    const T* g = G + i * n;
                    for (std::size_t t = 0; t < k; ++t) {
                        const T av = A[i * k + t];
                        T* drow = dB + t * n;
                        for (std::size_t j = 0; j < n; ++j) drow[j] += av * g[j];
                    }
                }
            }
        },
        "matmul");
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
    if (b.dim(0) != batch || bk != k) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<T> out(batch * m * n, T{0});
    const T* A = a.data().data();
    const T* B = b.data().data();
    for (std::size_t s = 0; s < batch; ++s) {
        const T* As = A + s * m * k;
        const T* Bs = B + s * k * n;
        T* Cs = out.data() + s * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            if (transpose_b) {
                for (std::size_t j = 0; j < n; ++j) {
                    T acc{0};
                    for (std::size_t t = 0; t < k; ++t) acc += As[i * k + t] * Bs[j * k + t];
                    Cs[i * n + j] = acc;
                }
            } else {
                for (std::size_t t = 0; t < k; ++t) {
                    const T av = As[i * k + t];
                    for (std::size_t j = 0; j < n; ++j) Cs[i * n + j] += av * Bs[t * n + j];
                }
            }
        }
    }
    return Tensor<T>::from_op(
        {batch, m, n}, std::move(out), {a, b},
        [batch, m, k, n, transpose_b](NodeT<T>& self) {
            const T* G = self.grad.data();
            const T* A = self.parents[0]->data.data();
            const T* B = self.parents[1]->data.data();
            T* dA = grad_of(self, 0);
            T* dB = grad_of(self, 1);
            for (std::size_t s = 0; s < batch; ++s) {
                const T* Gs = G + s * m * n;
                const T* As = A + s * m * k;
                const T* Bs = B + s * k * n;
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        const T g = Gs[i * n + j];
                        for (std::size_t t = 0; t < k; ++t) {
                            const std::size_t bidx = transpose_b ? j * k + t : t * n + j;
                            if (dA) dA[s * m * k + i * k + t] += g * Bs[bidx];
                            if (dB) dB[s * k * n + bidx] += g * As[i * k + t];
                        }
                    }
                }
            }
        },
        "bmm");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<T> out(a.numel());
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
    return Tensor<T>::from_op(
        a.shape(), std::move(out), {a, b},
        [](NodeT<T>& self) {
            for (std::size_t p = 0; p < 2; ++p) {
                if (T* d = grad_of(self, p)) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
                }
            }
        },
        "add");
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row) {
    const std::size_t n = row.numel();
    if (x.numel() % n != 0) {
        throw DimensionError("add_row: row of " + std::to_string(n) + " does not tile " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / n;
    std::vector<T> out(x.numel());
    const auto X = x.data();
    const auto R = row.data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = X[r * n + j] + R[j];
    }
    return Tensor<T>::from_op(
        x.shape(), std::move(out), {x, row},
        [rows, n](NodeT<T>& self) {
            const T* G = self.grad.data();
            if (T* dx = grad_of(self, 0)) {
                for (std::size_t i = 0; i < rows * n; ++i) dx[i] += G[i];
            }
            if (T* dr = grad_of(self, 1)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) dr[j] += G[r * n + j];
                }
            }
        },
        "add_row");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<T> out(a.numel());
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
    return Tensor<T>::from_op(
        a.shape(), std::move(out), {a, b},
        [](NodeT<T>& self) {
            const auto& A = self.parents[0]->data;
            const auto& B = self.parents[1]->data;
            if (T* da = grad_of(self, 0)) {
                for (std::size_t i = 0; i < A.size(); ++i) da[i] += self.grad[i] * B[i];
            }
            if (T* db = grad_of(self, 1)) {
                for (std::size_t i = 0; i < A.size(); ++i) db[i] += self.grad[i] * A[i];
            }
        },
        "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= factor;
    return Tensor<T>::from_op(
        x.shape(), std::move(out), {x},
        [factor](NodeT<T>& self) {
            if (T* d = grad_of(self, 0)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += factor * self.grad[i];
            }
        },
        "scale");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total{0};
    for (T v : x.data()) total += v;
    return Tensor<T>::from_op(
        {1}, {total}, {x},
        [](NodeT<T>& self) {
            if (T* d = grad_of(self, 0)) {
                const T g = self.grad[0];
                for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) d[i] += g;
            }
        },
        "sum");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    return Tensor<T>::from_op(
        std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), {x},
        [](NodeT<T>& self) {
            if (T* d = grad_of(self, 0)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
            }
        },
        "reshape");
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const auto& s = x.shape();
    if (axis >= s.size()) throw DimensionError("softmax: axis out of range for " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];

    std::vector<T> out(x.numel());
    const auto X = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, X[base + j * inner]);
            T z{0};
            for (std::size_t j = 0; j < len; ++j) {
                const T e = std::exp(X[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
        }
    }
    auto result = Tensor<T>::from_op(s, std::move(out), {x}, nullptr, "softmax");
    if (result.requires_grad()) {
        result.node().backward_fn = [outer, inner, len](NodeT<T>& self) {
            T* d = grad_of(self, 0);
            if (!d) return;
            const auto& Y = self.data;
            const auto& G = self.grad;
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    T dot{0};
                    for (std::size_t j = 0; j < len; ++j) dot += G[base + j * inner] * Y[base + j * inner];
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t i = base + j * inner;
                        d[i] += Y[i] * (G[i] - dot);
                    }
                }
            }
        };
    }
    return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    const std::size_t n = x.shape().back();
    if (gamma.numel() != n || beta.numel() != n) {
        throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(n) + " entries");
    }
    const std::size_t rows = x.numel() / n;
    std::vector<T> xhat(x.numel());
    std::vector<T> rstd(rows);
    std::vector<T> out(x.numel());
    const auto X = x.data();
    const auto G = gamma.data();
    const auto B = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X.data() + r * n;
        T mean{0};
        for (std::size_t j = 0; j < n; ++j) mean += xr[j];
        mean /= static_cast<T>(n);
        T var{0};
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(n);
        // eps = 0 on a constant row would divide by zero; the centered row is
        // all zeros then, so any finite rstd yields the same output.
        const T denom = std::sqrt(var + static_cast<T>(eps));
        rstd[r] = denom > T{0} ? T{1} / denom : T{0};
        for (std::size_t j = 0; j < n; ++j) {
            const T h = (xr[j] - mean) * rstd[r];
            xhat[r * n + j] = h;
            out[r * n + j] = h * G[j] + B[j];
        }
    }
    auto result = Tensor<T>::from_op(x.shape(), std::move(out), {x, gamma, beta}, nullptr, "layer_norm");
    if (result.requires_grad()) {
        result.node().backward_fn = [rows, n, xhat = std::move(xhat), rstd = std::move(rstd)](NodeT<T>& self) {
            const T* dy = self.grad.data();
            const T* gam = self.parents[1]->data.data();
            T* dx = grad_of(self, 0);
            T* dg = grad_of(self, 1);
            T* db = grad_of(self, 2);
            std::vector<T> dh(n);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* g = dy + r * n;
                const T* h = xhat.data() + r * n;
                if (dg || db) {
                    for (std::size_t j = 0; j < n; ++j) {
                        if (dg) dg[j] += g[j] * h[j];
                        if (db) db[j] += g[j];
                    }
                }
                if (!dx) continue;
                T mean_dh{0}, mean_dh_h{0};
                for (std::size_t j = 0; j < n; ++j) {
                    dh[j] = g[j] * gam[j];
                    mean_dh += dh[j];
                    mean_dh_h += dh[j] * h[j];
                }
                mean_dh /= static_cast<T>(n);
                mean_dh_h /= static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    dx[r * n + j] += rstd[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                }
            }
        };
    }
    return result;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    const auto X = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = X[i];
        out[i] = v * T(0.5) * (T{1} + std::erf(v * (std::numbers::sqrt2_v<T> / T(2))));
    }
    return Tensor<T>::from_op(
        x.shape(), std::move(out), {x},
        [](NodeT<T>& self) {
            T* d = grad_of(self, 0);
            if (!d) return;
            const auto& X = self.parents[0]->data;
            const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * (std::numbers::sqrt2_v<T> / T(2));
            for (std::size_t i = 0; i < X.size(); ++i) {
                const T v = X[i];
                const T cdf = T(0.5) * (T{1} + std::erf(v * (std::numbers::sqrt2_v<T> / T(2))));
                const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                d[i] += self.grad[i] * (cdf + v * pdf);
            }
        },
        "gelu");
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (targets.size() != batch) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                             std::to_string(batch));
    }
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    for (auto t : tgt) {
        if (t < 0 || static_cast<std::size_t>(t) >= classes) {
            throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0," +
                             std::to_string(classes) + ")");
        }
    }
    const auto X = logits.data();
    std::vector<T> probs(X.size());
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const T* row = X.data() + b * classes;
        const T mx = *std::max_element(row, row + classes);
        T z{0};
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] = std::exp(row[c] - mx);
            z += probs[b * classes + c];
        }
        for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= z;
        const T lse = mx + std::log(z);
        total += static_cast<double>(lse - row[tgt[b]]);
    }
    const T loss = static_cast<T>(total / static_cast<double>(batch));
    auto result = Tensor<T>::from_op({1}, {loss}, {logits}, nullptr, "cross_entropy");
    if (result.requires_grad()) {
        result.node().backward_fn = [batch, classes, tgt = std::move(tgt), probs = std::move(probs)](NodeT<T>& self) {
            T* d = grad_of(self, 0);
            if (!d) return;
            const T g = self.grad[0] / static_cast<T>(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < classes; ++c) {
                    const T onehot = static_cast<std::size_t>(tgt[b]) == c ? T{1} : T{0};
                    d[b * classes + c] += g * (probs[b * classes + c] - onehot);
                }
            }
        };
    }
    return result;
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    require_rank(x, 3, "split_heads");
    const std::size_t batch = x.dim(0), tokens = x.dim(1), d = x.dim(2);
    if (heads == 0 || d % heads != 0) {
        throw DimensionError("split_heads: width " + std::to_string(d) + " not divisible by " + std::to_string(heads));
    }
    const std::size_t dh = d / heads;
    // out[(b*h + hh), t, e] = x[b, t, hh*dh + e]
    auto src_index = [=](std::size_t b, std::size_t hh, std::size_t t, std::size_t e) {
        return (b * tokens + t) * d + hh * dh + e;
    };
    std::vector<T> out(x.numel());
    const auto X = x.data();
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t hh = 0; hh < heads; ++hh)
            for (std::size_t t = 0; t < tokens; ++t)
                for (std::size_t e = 0; e < dh; ++e) out[o++] = X[src_index(b, hh, t, e)];
    return Tensor<T>::from_op(
        {batch * heads, tokens, dh}, std::move(out), {x},
        [=](NodeT<T>& self) {
            T* dx = grad_of(self, 0);
            if (!dx) return;
            std::size_t o = 0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t hh = 0; hh < heads; ++hh)
                    for (std::size_t t = 0; t < tokens; ++t)
                        for (std::size_t e = 0; e < dh; ++e) dx[src_index(b, hh, t, e)] += self.grad[o++];
        },
        "split_heads");
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
    require_rank(x, 3, "merge_heads");
    if (heads == 0 || x.dim(0) % heads != 0) {
        throw DimensionError("merge_heads: leading axis " + std::to_string(x.dim(0)) + " not divisible by " +
                             std::to_string(heads));
    }
    const std::size_t batch = x.dim(0) / heads, tokens = x.dim(1), dh = x.dim(2), d = dh * heads;
    auto dst_index = [=](std::size_t b, std::size_t hh, std::size_t t, std::size_t e) {
        return (b * tokens + t) * d + hh * dh + e;
    };
    std::vector<T> out(x.numel());
    const auto X = x.data();
    std::size_t i = 0;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t hh = 0; hh < heads; ++hh)
            for (std::size_t t = 0; t < tokens; ++t)
                for (std::size_t e = 0; e < dh; ++e) out[dst_index(b, hh, t, e)] = X[i++];
    return Tensor<T>::from_op(
        {batch, tokens, d}, std::move(out), {x},
        [=](NodeT<T>& self) {
            T* dx = grad_of(self, 0);
            if (!dx) return;
            std::size_t i = 0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t hh = 0; hh < heads; ++hh)
                    for (std::size_t t = 0; t < tokens; ++t)
                        for (std::size_t e = 0; e < dh; ++e) dx[i++] += self.grad[dst_index(b, hh, t, e)];
        },
        "merge_heads");
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t patch) {
    require_rank(x, 3, "patchify");
    const std::size_t batch = x.dim(0), channels = x.dim(1), width = x.dim(2);
    if (patch == 0 || width % patch != 0) {
        throw DimensionError("patchify: window " + std::to_string(width) + " not divisible by patch " +
                             std::to_string(patch));
    }
    const std::size_t n_patches = width / patch, flat = channels * patch;
    auto src_index = [=](std::size_t b, std::size_t j, std::size_t c, std::size_t p) {
        return (b * channels + c) * width + j * patch + p;
    };
    std::vector<T> out(x.numel());
    const auto X = x.data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < n_patches; ++j)
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t p = 0; p < patch; ++p)
                    out[(b * n_patches + j) * flat + c * patch + p] = X[src_index(b, j, c, p)];
    return Tensor<T>::from_op(
        {batch * n_patches, flat}, std::move(out), {x},
        [=](NodeT<T>& self) {
            T* dx = grad_of(self, 0);
            if (!dx) return;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t j = 0; j < n_patches; ++j)
                    for (std::size_t c = 0; c < channels; ++c)
                        for (std::size_t p = 0; p < patch; ++p)
                            dx[src_index(b, j, c, p)] += self.grad[(b * n_patches + j) * flat + c * patch + p];
        },
        "patchify");
}

template <typename T>
Tensor<T> prepend_token(const Tensor<T>& x, const Tensor<T>& token) {
    require_rank(x, 3, "prepend_token");
    const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
    if (token.numel() != d) throw DimensionError("prepend_token: token width differs from " + std::to_string(d));
    std::vector<T> out(batch * (n + 1) * d);
    const auto X = x.data();
    const auto K = token.data();
    for (std::size_t b = 0; b < batch; ++b) {
        std::copy(K.begin(), K.end(), out.begin() + b * (n + 1) * d);
        std::copy(X.begin() + b * n * d, X.begin() + (b + 1) * n * d, out.begin() + b * (n + 1) * d + d);
    }
    return Tensor<T>::from_op(
        {batch, n + 1, d}, std::move(out), {x, token},
        [=](NodeT<T>& self) {
            const T* G = self.grad.data();
            if (T* dx = grad_of(self, 0)) {
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t i = 0; i < n * d; ++i) dx[b * n * d + i] += G[b * (n + 1) * d + d + i];
            }
            if (T* dt = grad_of(self, 1)) {
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t j = 0; j < d; ++j) dt[j] += G[b * (n + 1) * d + j];
            }
        },
        "prepend_token");
}

template <typename T>
Tensor<T> select_token(const Tensor<T>& x, std::size_t index) {
    require_rank(x, 3, "select_token");
    const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
    if (index >= n) throw IndexError("select_token: position out of range");
    std::vector<T> out(batch * d);
    const auto X = x.data();
    for (std::size_t b = 0; b < batch; ++b)
        std::copy_n(X.begin() + (b * n + index) * d, d, out.begin() + b * d);
    return Tensor<T>::from_op(
        {batch, d}, std::move(out), {x},
        [=](NodeT<T>& self) {
            T* dx = grad_of(self, 0);
            if (!dx) return;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t j = 0; j < d; ++j) dx[(b * n + index) * d + j] += self.grad[b * d + j];
        },
        "select_token");
}

template <typename T>
Tensor<T> fuzzy_rule_activation(const Tensor<T>& inputs, const Tensor<T>& centroids, const Tensor<T>& scales) {
    require_rank(inputs, 2, "fuzzy_rule_activation");
    require_rank(centroids, 2, "fuzzy_rule_activation");
    const std::size_t batch = inputs.dim(0), dim = inputs.dim(1), k = centroids.dim(0);
    if (centroids.dim(1) != dim || scales.shape() != centroids.shape()) {
        throw DimensionError("fuzzy_rule_activation: input width " + std::to_string(dim) + ", centroids " +
                             shape_str(centroids.shape()) + ", scales " + shape_str(scales.shape()));
    }
    const auto V = inputs.data();
    const auto C = centroids.data();
    const auto A = scales.data();
    std::vector<T> out(batch * k);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* v = V.data() + b * dim;
        T* o = out.data() + b * k;
        for (std::size_t c = 0; c < k; ++c) {
            T s{0};
            for (std::size_t j = 0; j < dim; ++j) {
                const T r = (v[j] - C[c * dim + j]) / A[c * dim + j];
                s += r * r;
            }
            o[c] = T(-0.25) * s;
        }
        const T mx = *std::max_element(o, o + k);
        if (!std::isfinite(mx)) {
            // Every rule fired at exactly zero (or the input was not finite).
            std::fill(o, o + k, T{1} / static_cast<T>(k));
            g_fuzzy_fallbacks.fetch_add(1, std::memory_order_relaxed);
            continue;
        }
        T z{0};
        for (std::size_t c = 0; c < k; ++c) {
            o[c] = std::exp(o[c] - mx);
            z += o[c];
        }
        for (std::size_t c = 0; c < k; ++c) o[c] /= z;
    }
    return Tensor<T>::from_op(
        {batch, k}, std::move(out), {inputs, centroids, scales},
        [=](NodeT<T>& self) {
            const auto& V = self.parents[0]->data;
            const auto& C = self.parents[1]->data;
            const auto& A = self.parents[2]->data;
            T* dv = grad_of(self, 0);
            T* da = grad_of(self, 2);
            std::vector<T> gs(k);
            for (std::size_t b = 0; b < batch; ++b) {
                const T* y = self.data.data() + b * k;
                const T* g = self.grad.data() + b * k;
                T dot{0};
                for (std::size_t c = 0; c < k; ++c) dot += g[c] * y[c];
                for (std::size_t c = 0; c < k; ++c) gs[c] = y[c] * (g[c] - dot);
                const T* v = V.data() + b * dim;
                for (std::size_t c = 0; c < k; ++c) {
                    if (gs[c] == T{0}) continue;
                    for (std::size_t j = 0; j < dim; ++j) {
                        const T a = A[c * dim + j];
                        const T diff = v[j] - C[c * dim + j];
                        const T r = diff / a;
                        if (dv) dv[b * dim + j] += gs[c] * T(-0.5) * r / a;
                        if (da) da[c * dim + j] += gs[c] * T(0.5) * r * r / a;
                    }
                }
            }
        },
        "fuzzy_rule_activation");
}

#define EMGTF_INSTANTIATE_OPS(T)                                                                            \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                         \
    template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                                      \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> scale(const Tensor<T>&, T);                                                         \
    template Tensor<T> sum(const Tensor<T>&);                                                              \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                   \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                             \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);           \
    template Tensor<T> gelu(const Tensor<T>&);                                                             \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);                     \
    template Tensor<T> split_heads(const Tensor<T>&, std::size_t);                                         \
    template Tensor<T> merge_heads(const Tensor<T>&, std::size_t);                                         \
    template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                            \
    template Tensor<T> prepend_token(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> select_token(const Tensor<T>&, std::size_t);                                        \
    template Tensor<T> fuzzy_rule_activation(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

EMGTF_INSTANTIATE_OPS(float)
EMGTF_INSTANTIATE_OPS(double)

#undef EMGTF_INSTANTIATE_OPS

} // namespace emgtf
