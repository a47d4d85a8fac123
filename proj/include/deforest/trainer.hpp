#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "deforest/dataset.hpp"
#include "deforest/losses.hpp"
#include "deforest/model.hpp"

namespace deforest {

struct TrainConfig {
    int batch_size = 16;
    double learning_rate = 1e-4;
    int epochs = 50;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;
    bool augment = false; // on iff sensor == Landsat8 by default, wired by the caller
    LossConfig loss;
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;

    // Line-delimited "epoch train_loss train_acc val_acc".
    std::string to_text() const;
    void write(const std::filesystem::path& path) const;
};

// Standard Adam with bias-corrected moment estimates. Step order follows
// the ModelParams parameter order.
class AdamOptimizer {
public:
    AdamOptimizer(const ModelParams& params, double lr, double beta1, double beta2, double epsilon);
    void step(ModelParams& params, const std::vector<std::pair<std::string, Tensor>>& grads);
    int steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, epsilon_;
    int t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

struct TrainResult {
    ModelParams params;
    TrainHistory history;
    int total_steps = 0; // optimizer updates across all epochs
};

// Full training run: seeded shuffling, optional augmentation, combined
// loss, Adam updates per batch (last partial batch kept), per-epoch train
// loss plus train/validation pixel accuracy at threshold 0.5.
// `on_epoch` (optional) observes each epoch record as it is produced.
TrainResult train(ModelParams params, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// Pooled pixel accuracy of thresholded forward passes over a sample set.
double validate(const ModelParams& params, const std::vector<Sample>& samples);

// p >= 0.5 -> 1.
Grid threshold_mask(const Grid& probabilities, double threshold = 0.5);

} // namespace deforest
