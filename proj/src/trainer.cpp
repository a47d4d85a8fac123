#include "deforest/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "deforest/common.hpp"
#include "deforest/preprocess.hpp"
#include "deforest/rng.hpp"

namespace deforest {

std::string TrainHistory::to_text() const {
    std::string out;
    char buf[160];
    for (const auto& r : epochs) {
        std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f\n", r.epoch, r.train_loss,
                      r.train_accuracy, r.val_accuracy);
        out += buf;
    }
    return out;
}

void TrainHistory::write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) fail("history: cannot open for writing: ", path.string());
    out << to_text();
    if (!out) fail("history: write failed: ", path.string());
}

AdamOptimizer::AdamOptimizer(const ModelParams& params, double lr, double beta1, double beta2,
                             double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    m_.reserve(params.params.size());
    v_.reserve(params.params.size());
    for (const auto& [name, t] : params.params) {
        m_.push_back(Tensor::zeros(t.shape));
        v_.push_back(Tensor::zeros(t.shape));
    }
}

void AdamOptimizer::step(ModelParams& params,
                         const std::vector<std::pair<std::string, Tensor>>& grads) {
    if (grads.size() != params.params.size())
        fail("adam: gradient count ", grads.size(), " vs parameter count ", params.params.size());
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.params.size(); ++i) {
        auto& [pname, theta] = params.params[i];
        const auto& [gname, grad] = grads[i];
        if (pname != gname) fail("adam: gradient order mismatch at '", gname, "'");
        if (!grad.same_shape(theta)) fail("adam: gradient shape mismatch for '", pname, "'");
        double* m = m_[i].data.data();
        double* v = v_[i].data.data();
        double* p = theta.data.data();
        const double* g = grad.data.data();
        const size_t n = theta.data.size();
        for (size_t j = 0; j < n; ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr_ * mhat / (std::sqrt(vhat) + epsilon_);
        }
    }
}

Grid threshold_mask(const Grid& probabilities, double threshold) {
    Grid out(probabilities.h, probabilities.w);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = probabilities.v[i] >= threshold ? 1.0 : 0.0;
    return out;
}

double validate(const ModelParams& params, const std::vector<Sample>& samples) {
    if (samples.empty()) fail("validate: empty sample set");
    Confusion pooled;
    for (const auto& sample : samples) {
        const Grid mask = threshold_mask(forward(params, sample.image));
        pooled += count_confusion(mask, sample.label);
    }
    return static_cast<double>(pooled.tp + pooled.tn) / static_cast<double>(pooled.total());
}

TrainResult train(ModelParams params, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
    if (train_set.empty()) fail("train: empty training set");
    if (val_set.empty()) fail("train: empty validation set");
    if (config.batch_size < 1) fail("train: batch_size must be >= 1");
    if (config.epochs < 1) fail("train: epochs must be >= 1");
    if (!(config.learning_rate > 0.0)) fail("train: learning_rate must be positive");
    for (const auto& sample : train_set)
        if (sample.image.dim(0) != params.config.in_channels)
            fail("train: sample ", sample.key.to_string(), " has ", sample.image.dim(0),
                 " channels, model expects ", params.config.in_channels);

    AdamOptimizer adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2,
                       config.adam_epsilon);
    RngStream rng(config.seed);
    TrainResult result;
    result.history.epochs.reserve(static_cast<size_t>(config.epochs));

    const size_t n = train_set.size();
    std::vector<size_t> order(n);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);

        double loss_sum = 0.0;
        size_t seen = 0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(config.batch_size)) {
            const size_t stop = std::min(n, start + static_cast<size_t>(config.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(stop - start);

            std::vector<std::pair<std::string, Tensor>> batch_grads;
            double batch_loss = 0.0;
            for (size_t bi = start; bi < stop; ++bi) {
                const Sample& base = train_set[order[bi]];
                const Sample sample = config.augment ? augment(base, rng) : base;
                GradResult g = forward_with_gradients(params, sample.image, sample.label,
                                                      config.loss);
                if (!std::isfinite(g.loss))
                    fail("train: non-finite loss at epoch ", epoch, ", batch ",
                         start / config.batch_size, ", sample ", sample.key.to_string());
                batch_loss += g.loss;
                if (batch_grads.empty()) {
                    batch_grads = std::move(g.grads);
                } else {
                    for (size_t pi = 0; pi < batch_grads.size(); ++pi)
                        for (size_t j = 0; j < batch_grads[pi].second.data.size(); ++j)
                            batch_grads[pi].second.data[j] += g.grads[pi].second.data[j];
                }
            }
            for (auto& [name, grad] : batch_grads)
                for (double& v : grad.data) v *= inv_batch;
            adam.step(params, batch_grads);
            loss_sum += batch_loss;
            seen += stop - start;
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(seen);
        record.train_accuracy = validate(params, train_set);
        record.val_accuracy = validate(params, val_set);
        if (!std::isfinite(record.train_loss) || !std::isfinite(record.train_accuracy) ||
            !std::isfinite(record.val_accuracy))
            fail("train: non-finite history record at epoch ", epoch);
        result.history.epochs.push_back(record);
        if (on_epoch) on_epoch(record);
    }

    result.params = std::move(params);
    result.total_steps = adam.steps_taken();
    return result;
}

} // namespace deforest
