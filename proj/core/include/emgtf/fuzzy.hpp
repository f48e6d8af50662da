#pragma once

// Fuzzy c-means clustering and the per-block centroid banks it maintains.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "emgtf/random.hpp"

namespace emgtf {

/// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
    double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

    bool operator==(const Matrix&) const = default;
};

struct FcmOptions {
    double fuzzifier = 2.0;
    double tol = 1e-4;
    int max_iter = 100;
    std::uint64_t seed = 0;
    /// Called with the membership matrix (n x K) computed in each iteration.
    std::function<void(const Matrix&, int)> on_iteration;
};

struct FcmResult {
    Matrix centroids;  // K x d
    int iterations = 0;
    bool converged = false;
};

/// Membership of one point to each centroid for fuzzifier m:
/// u_k proportional to (1 / |v - c_k|^2)^(1 / (m - 1)). A point sitting exactly
/// on a centroid belongs to the first such centroid with membership 1.
void fcm_memberships(std::span<const double> point, const Matrix& centroids, double fuzzifier, std::span<double> out);

/// Standard fuzzy c-means. Starts from K distinct rows of `data` picked by a
/// generator seeded with options.seed; alternates membership and weighted
/// centroid updates until the largest centroid move is below tol or max_iter
/// is reached. Throws DataError when data has fewer than K rows.
FcmResult fcm_fit(const Matrix& data, std::size_t k, const FcmOptions& options = {});

inline constexpr std::size_t kDefaultBufferCapacity = 10'000;

/// Centroids of one fuzzy neural block plus the activations collected since
/// the last epoch boundary. Centroids start at zero and only change at
/// epoch_rollover().
class CentroidBank {
public:
    CentroidBank(std::size_t k, std::size_t dim, std::size_t capacity = kDefaultBufferCapacity,
                 std::uint64_t seed = 0);

    std::size_t k() const noexcept { return centroids_.rows; }
    std::size_t dim() const noexcept { return centroids_.cols; }
    std::size_t capacity() const noexcept { return capacity_; }
    std::uint64_t seed() const noexcept { return seed_; }

    const Matrix& centroids() const noexcept { return centroids_; }
    void set_centroids(Matrix centroids);

    /// Buffers one activation vector; past capacity, reservoir sampling keeps
    /// a uniform subsample of everything pushed this epoch.
    void push(std::span<const double> v);
    void push(std::span<const float> v);

    std::size_t buffered() const noexcept { return buffer_.rows; }
    std::uint64_t pushed_this_epoch() const noexcept { return seen_; }
    const Matrix& buffer() const noexcept { return buffer_; }

    /// Refits centroids by fuzzy c-means when at least K vectors are
    /// buffered (otherwise keeps them), then clears the buffer. Returns true
    /// when the centroids were refit.
    bool epoch_rollover(const FcmOptions& options = {});
    std::uint64_t rollovers() const noexcept { return rollovers_; }
    void set_rollovers(std::uint64_t n) noexcept { rollovers_ = n; }

private:
    template <typename U>
    void push_impl(std::span<const U> v);

    Matrix centroids_;
    Matrix buffer_;
    std::size_t capacity_;
    std::uint64_t seed_;
    std::uint64_t seen_ = 0;
    std::uint64_t rollovers_ = 0;
    Rng reservoir_rng_;
};

} // namespace emgtf
