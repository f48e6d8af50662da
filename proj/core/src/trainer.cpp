#include "emgtf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "emgtf/error.hpp"
#include "emgtf/random.hpp"

namespace emgtf {

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be a finite value >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (step_decay && decay_every < 1) throw ConfigError("train.decay_every must be >= 1");
    if (!(decay_factor > 0.0)) throw ConfigError("train.decay_factor must be positive");
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& moments, std::size_t t,
               const TrainConfig& cfg, double lr) {
    if (t < 1) throw ContractError("adam_step: step index starts at 1");
    if (grads.size() != params.size() || moments.first.size() != params.size() ||
        moments.second.size() != params.size()) {
        throw DimensionError("adam_step: parameter, gradient and moment sizes differ");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            throw NumericError("adam_step: non-finite gradient " + std::to_string(grads[i]) + " at index " +
                               std::to_string(i) + " (step " + std::to_string(t) + ")");
        }
    }
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T wd = static_cast<T>(cfg.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i] + wd * params[i];
        moments.first[i] = b1 * moments.first[i] + (T{1} - b1) * g;
        moments.second[i] = b2 * moments.second[i] + (T{1} - b2) * g * g;
        const double m_hat = static_cast<double>(moments.first[i]) / bias1;
        const double v_hat = static_cast<double>(moments.second[i]) / bias2;
        params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
}

template <typename T>
AdamOptimizer<T>::AdamOptimizer(std::vector<NamedTensor<T>> params, TrainConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    moments_.reserve(params_.size());
    for (const auto& p : params_) moments_.emplace_back(p.tensor.numel());
}

template <typename T>
void AdamOptimizer<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void AdamOptimizer<T>::step(double lr) {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        try {
            adam_step<T>(p.tensor.mutable_data(), p.tensor.grad(), moments_[i], t_, cfg_, lr);
        } catch (const NumericError& e) {
            throw NumericError(p.name + ": " + e.what());
        }
    }
}

template <typename T>
Tensor<T> stack_windows(const WindowSet& ws, std::span<const std::size_t> indices, std::vector<std::int32_t>& labels) {
    const std::size_t per = ws.channels * ws.width;
    std::vector<T> values(indices.size() * per);
    labels.resize(indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& w = ws.windows.at(indices[b]);
        std::copy(w.values.begin(), w.values.end(), values.begin() + static_cast<std::ptrdiff_t>(b * per));
        labels[b] = w.label;
    }
    return Tensor<T>({indices.size(), ws.channels, ws.width}, std::move(values));
}

namespace {

std::int32_t argmax_row(std::span<const float> row) {
    return static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

void check_geometry(const EmgtfNet<float>& model, const WindowSet& ws) {
    if (ws.channels != model.spec().channels || ws.width != model.spec().window) {
        throw DataError("windows are " + std::to_string(ws.channels) + "x" + std::to_string(ws.width) +
                        " but the model expects " + std::to_string(model.spec().channels) + "x" +
                        std::to_string(model.spec().window));
    }
    for (const auto& w : ws.windows) {
        if (w.label < 0 || static_cast<std::size_t>(w.label) >= model.spec().n_classes) {
            throw DataError("window label " + std::to_string(w.label) + " outside the model's " +
                            std::to_string(model.spec().n_classes) + " classes");
        }
    }
}

} // namespace

TrainResult train(EmgtfNet<float>& model, const WindowSet& ws, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    const WindowSet train_set = ws.filter(Split::train);
    if (train_set.empty()) throw DataError("training set is empty");
    check_geometry(model, train_set);

    AdamOptimizer<float> opt(model.parameters(), cfg);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::int32_t> labels;
    TrainResult result;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.lr;
        if (cfg.step_decay) lr *= std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
        if (cfg.shuffle) rng.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::span<const std::size_t> batch(order.data() + start, end - start);
            const auto x = stack_windows<float>(train_set, batch, labels);
            opt.zero_grad();
            const auto logits = model.forward(x, Mode::train);
            const auto loss = cross_entropy(logits, std::span<const std::int32_t>(labels));
            if (!std::isfinite(loss.item())) {
                throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + " at batch starting " +
                                   std::to_string(start));
            }
            loss.backward();
            opt.step(lr);

            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
            const auto L = logits.data();
            const std::size_t classes = logits.dim(1);
            for (std::size_t b = 0; b < batch.size(); ++b) {
                if (argmax_row(L.subspan(b * classes, classes)) == labels[b]) ++correct;
            }
        }
        for (const auto& bank : model.banks()) bank->epoch_rollover();

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = loss_sum / static_cast<double>(order.size());
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        stats.lr = lr;
        result.epochs.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    result.steps = opt.steps();
    for (const auto& bank : model.banks()) result.rollovers.push_back(bank->rollovers());
    return result;
}

double dataset_loss(EmgtfNet<float>& model, const WindowSet& ws, std::size_t batch_size) {
    if (ws.empty()) throw DataError("cannot compute the loss of an empty window set");
    check_geometry(model, ws);
    NoGradGuard no_grad;
    std::vector<std::size_t> idx(ws.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<std::int32_t> labels;
    double total = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t end = std::min(idx.size(), start + batch_size);
        const std::span<const std::size_t> batch(idx.data() + start, end - start);
        const auto x = stack_windows<float>(ws, batch, labels);
        const auto loss = cross_entropy(model.forward(x, Mode::eval), std::span<const std::int32_t>(labels));
        total += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
    }
    return total / static_cast<double>(ws.size());
}

std::vector<std::int32_t> predict(EmgtfNet<float>& model, const WindowSet& ws, std::size_t batch_size) {
    check_geometry(model, ws);
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    NoGradGuard no_grad;
    std::vector<std::size_t> idx(ws.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<std::int32_t> labels;
    std::vector<std::int32_t> out;
    out.reserve(ws.size());
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t end = std::min(idx.size(), start + batch_size);
        const std::span<const std::size_t> batch(idx.data() + start, end - start);
        const auto logits = model.forward(stack_windows<float>(ws, batch, labels), Mode::eval);
        const std::size_t classes = logits.dim(1);
        for (std::size_t b = 0; b < batch.size(); ++b) out.push_back(argmax_row(logits.data().subspan(b * classes, classes)));
    }
    return out;
}

EvalResult score(const WindowSet& ws, std::span<const std::int32_t> predictions) {
    if (predictions.size() != ws.size()) throw ContractError("one prediction per window required");
    std::map<std::uint16_t, SubjectAccuracy> by_subject;
    EvalResult result;
    for (std::size_t i = 0; i < ws.size(); ++i) {
        auto& s = by_subject[ws.windows[i].subject];
        s.subject = ws.windows[i].subject;
        ++s.total;
        ++result.total;
        if (predictions[i] == ws.windows[i].label) {
            ++s.correct;
            ++result.correct;
        }
    }
    for (const auto& [id, s] : by_subject) result.subjects.push_back(s);
    return result;
}

EvalResult evaluate(EmgtfNet<float>& model, const WindowSet& ws, std::size_t batch_size) {
    const WindowSet test_set = ws.filter(Split::test);
    if (test_set.empty()) throw DataError("test set is empty");
    const auto predictions = predict(model, test_set, batch_size);
    return score(test_set, predictions);
}

void summarize(RunReport& report, const EvalResult& eval) {
    report.subjects = eval.subjects;
    report.overall_accuracy = eval.accuracy();
    report.test_windows = eval.total;
    const double n = static_cast<double>(eval.subjects.size());
    double mean = 0.0;
    for (const auto& s : eval.subjects) mean += s.accuracy();
    mean = n > 0 ? mean / n : 0.0;
    double var = 0.0;
    for (const auto& s : eval.subjects) var += (s.accuracy() - mean) * (s.accuracy() - mean);
    report.mean_accuracy = mean;
    report.std_accuracy = n > 0 ? std::sqrt(var / n) : 0.0;
}

std::string RunReport::to_json() const {
    using nlohmann::ordered_json;
    ordered_json j;
    j["variant"] = variant;
    j["seed"] = seed;
    j["param_count"] = {{"trainable", trainable_params}, {"total", total_params}};
    j["windows"] = {{"train", train_windows}, {"test", test_windows}};
    ordered_json curve = ordered_json::array();
    for (const auto& e : epochs) {
        curve.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}, {"lr", e.lr}});
    }
    j["epochs"] = curve;
    ordered_json subj = ordered_json::array();
    for (const auto& s : subjects) {
        subj.push_back({{"subject", s.subject}, {"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy()}});
    }
    j["accuracy"] = {{"overall", overall_accuracy},
                     {"mean", mean_accuracy},
                     {"std", std_accuracy},
                     {"std_convention", "population"},
                     {"per_subject", subj}};
    j["wall_clock_s"] = wall_clock_s;
    j["config"] = config_json.empty() ? ordered_json::object() : ordered_json::parse(config_json);
    return j.dump(2) + "\n";
}

std::string RunReport::to_csv() const {
    std::ostringstream os;
    os << "subject,variant,accuracy\n";
    os << std::setprecision(10);
    for (const auto& s : subjects) os << s.subject << ',' << variant << ',' << s.accuracy() << '\n';
    return os.str();
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamMoments<float>&, std::size_t,
                               const TrainConfig&, double);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamMoments<double>&, std::size_t,
                                const TrainConfig&, double);
template class AdamOptimizer<float>;
template class AdamOptimizer<double>;
template Tensor<float> stack_windows<float>(const WindowSet&, std::span<const std::size_t>, std::vector<std::int32_t>&);
template Tensor<double> stack_windows<double>(const WindowSet&, std::span<const std::size_t>,
                                              std::vector<std::int32_t>&);

} // namespace emgtf
