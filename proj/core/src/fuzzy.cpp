#include "emgtf/fuzzy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "emgtf/error.hpp"

namespace emgtf {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

void fcm_memberships(std::span<const double> point, const Matrix& centroids, double fuzzifier,
                     std::span<double> out) {
    const std::size_t k = centroids.rows;
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
        out[c] = squared_distance(point, centroids.row(c));
        nearest = std::min(nearest, out[c]);
    }
    if (nearest == 0.0) {
        bool taken = false;
        for (std::size_t c = 0; c < k; ++c) {
            const bool here = !taken && out[c] == 0.0;
            out[c] = here ? 1.0 : 0.0;
            taken = taken || here;
        }
        return;
    }
    // (d_min / d_k)^(1/(m-1)) lies in (0, 1], so the normalizer cannot overflow.
    const double power = 1.0 / (fuzzifier - 1.0);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const double ratio = nearest / out[c];
        out[c] = power == 1.0 ? ratio : std::pow(ratio, power);
        total += out[c];
    }
    for (std::size_t c = 0; c < k; ++c) out[c] /= total;
}

FcmResult fcm_fit(const Matrix& data, std::size_t k, const FcmOptions& options) {
    if (k < 1) throw ParameterError("fcm: need at least one cluster");
    if (!(options.fuzzifier > 1.0)) throw ParameterError("fcm: fuzzifier must exceed 1");
    if (data.rows < k) {
        throw DataError("fcm: " + std::to_string(data.rows) + " points cannot support " + std::to_string(k) +
                        " clusters");
    }
    const std::size_t n = data.rows, dim = data.cols;

    // K distinct rows by a partial Fisher-Yates draw.
    Rng rng(options.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(order[i], order[j]);
    }
    FcmResult result;
    result.centroids = Matrix(k, dim);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy_n(data.row(order[c]).begin(), dim, result.centroids.row(c).begin());
    }

    Matrix u(n, k);
    Matrix next(k, dim);
    std::vector<double> weight(k);
    const bool square = options.fuzzifier == 2.0;
    for (int iter = 0; iter < options.max_iter; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            fcm_memberships(data.row(i), result.centroids, options.fuzzifier, u.row(i));
        }
        if (options.on_iteration) options.on_iteration(u, iter);

        std::fill(next.values.begin(), next.values.end(), 0.0);
        std::fill(weight.begin(), weight.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = data.row(i);
            for (std::size_t c = 0; c < k; ++c) {
                const double uic = u(i, c);
                const double w = square ? uic * uic : std::pow(uic, options.fuzzifier);
                if (w == 0.0) continue;
                weight[c] += w;
                auto acc = next.row(c);
                for (std::size_t j = 0; j < dim; ++j) acc[j] += w * x[j];
            }
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            auto dst = result.centroids.row(c);
            if (weight[c] > 0.0) {
                auto src = next.row(c);
                for (std::size_t j = 0; j < dim; ++j) src[j] /= weight[c];
                shift = std::max(shift, std::sqrt(squared_distance(src, dst)));
                std::copy(src.begin(), src.end(), dst.begin());
            }
        }
        result.iterations = iter + 1;
        if (shift < options.tol) {
            result.converged = true;
            break;
        }
    }
    return result;
}

CentroidBank::CentroidBank(std::size_t k, std::size_t dim, std::size_t capacity, std::uint64_t seed)
    : centroids_(k, dim), buffer_(0, dim), capacity_(capacity), seed_(seed), reservoir_rng_(mix_seed(seed, 0)) {
    if (k < 1 || dim < 1) throw ContractError("centroid bank needs K >= 1 and dim >= 1");
    if (capacity < 1) throw ContractError("centroid bank capacity must be positive");
}

void CentroidBank::set_centroids(Matrix centroids) {
    if (centroids.rows != k() || centroids.cols != dim()) {
        throw ContractError("centroid matrix must be " + std::to_string(k()) + " x " + std::to_string(dim()));
    }
    centroids_ = std::move(centroids);
}

template <typename U>
void CentroidBank::push_impl(std::span<const U> v) {
    if (v.size() != dim()) {
        throw ContractError("centroid bank expects vectors of length " + std::to_string(dim()) + ", got " +
                            std::to_string(v.size()));
    }
    ++seen_;
    if (buffer_.rows < capacity_) {
        buffer_.values.insert(buffer_.values.end(), v.begin(), v.end());
        ++buffer_.rows;
        return;
    }
    const auto slot = reservoir_rng_.below(seen_);
    if (slot < capacity_) std::copy(v.begin(), v.end(), buffer_.row(static_cast<std::size_t>(slot)).begin());
}

void CentroidBank::push(std::span<const double> v) { push_impl(v); }
void CentroidBank::push(std::span<const float> v) { push_impl(v); }

bool CentroidBank::epoch_rollover(const FcmOptions& options) {
    bool refit = false;
    if (buffer_.rows >= k()) {
        FcmOptions local = options;
        local.seed = mix_seed(seed_, rollovers_ + 1);
        auto fit = fcm_fit(buffer_, k(), local);
        const bool finite = std::all_of(fit.centroids.values.begin(), fit.centroids.values.end(),
                                        [](double x) { return std::isfinite(x); });
        if (finite) {
            centroids_ = std::move(fit.centroids);
            refit = true;
        }
    }
    buffer_ = Matrix(0, dim());
    seen_ = 0;
    ++rollovers_;
    reservoir_rng_ = Rng(mix_seed(seed_, rollovers_ * 2 + 1));
    return refit;
}

} // namespace emgtf
