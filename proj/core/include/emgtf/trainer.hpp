#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "emgtf/dataset.hpp"
#include "emgtf/model.hpp"

namespace emgtf {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-3;
    std::size_t batch_size = 512;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    bool shuffle = true;
    /// Halve the learning rate every `decay_every` epochs when set.
    bool step_decay = false;
    std::size_t decay_every = 20;
    double decay_factor = 0.5;

    /// Throws ConfigError on out-of-range values.
    void validate() const;
};

/// First and second moment estimates for one parameter tensor.
template <typename T>
struct AdamMoments {
    std::vector<T> first;
    std::vector<T> second;

    explicit AdamMoments(std::size_t n = 0) : first(n, T{0}), second(n, T{0}) {}
};

/// One Adam update with coupled L2 decay (g += weight_decay * theta) and
/// bias-corrected moments, at step t >= 1. `lr` overrides cfg.lr so schedules
/// can scale it. Throws NumericError on a non-finite gradient.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& moments, std::size_t t,
               const TrainConfig& cfg, double lr);

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& moments, std::size_t t,
               const TrainConfig& cfg) {
    adam_step(params, grads, moments, t, cfg, cfg.lr);
}

/// Adam state over every trainable tensor of a model.
template <typename T>
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<NamedTensor<T>> params, TrainConfig cfg);

    void zero_grad();
    /// Applies one update using the gradients currently stored on the
    /// parameters.
    void step(double lr);
    std::size_t steps() const noexcept { return t_; }
    const std::vector<AdamMoments<T>>& moments() const noexcept { return moments_; }

private:
    std::vector<NamedTensor<T>> params_;
    std::vector<AdamMoments<T>> moments_;
    TrainConfig cfg_;
    std::size_t t_ = 0;
};

/// Stacks windows into a [B, S, W] tensor and their labels.
template <typename T>
Tensor<T> stack_windows(const WindowSet& ws, std::span<const std::size_t> indices, std::vector<std::int32_t>& labels);

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;           // mean over training windows
    double train_accuracy = 0.0;  // on the fly, during the epoch
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    std::size_t steps = 0;
    std::vector<std::size_t> rollovers;  // per bank, at the end
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains on the train-tagged windows of `ws`. Each epoch shuffles with a
/// generator seeded by cfg.seed, runs forward/backward/Adam per batch while
/// the FNBs buffer activations, and ends with one epoch_rollover() per bank.
/// Deterministic for a given model, data and cfg.
TrainResult train(EmgtfNet<float>& model, const WindowSet& ws, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Mean cross-entropy over the given windows (no FNB buffering).
double dataset_loss(EmgtfNet<float>& model, const WindowSet& ws, std::size_t batch_size = 512);

/// argmax of the logits for every window in order.
std::vector<std::int32_t> predict(EmgtfNet<float>& model, const WindowSet& ws, std::size_t batch_size = 512);

struct SubjectAccuracy {
    std::uint16_t subject = 0;
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalResult {
    std::vector<SubjectAccuracy> subjects;  // ascending subject id
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Scores predictions against labels per subject.
EvalResult score(const WindowSet& ws, std::span<const std::int32_t> predictions);

/// Accuracy on the test-tagged windows of `ws`. FNB buffers are untouched.
EvalResult evaluate(EmgtfNet<float>& model, const WindowSet& ws, std::size_t batch_size = 512);

struct RunReport {
    std::string variant;
    std::uint64_t seed = 0;
    std::vector<EpochStats> epochs;
    std::vector<SubjectAccuracy> subjects;
    double overall_accuracy = 0.0;
    double mean_accuracy = 0.0;  // over subjects
    double std_accuracy = 0.0;   // population std over subjects
    std::size_t trainable_params = 0;
    std::size_t total_params = 0;
    std::size_t train_windows = 0;
    std::size_t test_windows = 0;
    double wall_clock_s = 0.0;
    std::string config_json;  // resolved configuration, echoed verbatim

    /// JSON text; wall_clock_s is the only non-deterministic field.
    std::string to_json() const;
    /// Header "subject,variant,accuracy", one row per subject.
    std::string to_csv() const;
};

/// Fills the accuracy fields of a report from an evaluation.
void summarize(RunReport& report, const EvalResult& eval);

} // namespace emgtf
