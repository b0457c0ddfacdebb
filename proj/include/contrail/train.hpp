#pragma once

#include "contrail/autodiff.hpp"
#include "contrail/mask.hpp"
#include "contrail/models.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace contrail::train {

struct TrainConfig {
    double learning_rate = 2.5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int epochs = 20;
    int batch_size = 4;
    double pos_weight = 10.0;
    // Polynomial decay lr * (1 - step/total)^power.
    double decay_power = 0.9;
    // Probability cut used when scoring the validation set each epoch.
    double val_threshold = 0.75;
    std::uint64_t seed = 0;

    void validate() const;
};

// Per-parameter Adam moments.
template <class T>
struct OptState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::int64_t t = 0;
};

// One AdamW step on a single parameter buffer with decoupled weight decay:
// theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta).
// `step` is the already-incremented step count t >= 1.
template <class T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::int64_t step, const TrainConfig& cfg, double lr);

// Advances state.t and updates every parameter from its gradient buffer.
template <class T>
void adamw_step(std::vector<models::Parameter<T>>& params, OptState<T>& state, const TrainConfig& cfg,
                double lr);

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

struct Sample {
    std::string record_id;
    ad::Tensor<float> input; // [C,H,W]
    mask::BitMask target;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;     // mean training loss over the epoch's steps
    double val_dice = 0.0; // global Dice on the validation set
    double lr = 0.0;       // learning rate used by the epoch's last step
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::vector<double> step_losses;
};

using EpochCallback = std::function<void(const EpochRecord&, const models::Model<float>&)>;

// Mini-batch AdamW with polynomial decay over epochs * ceil(|train| / batch)
// steps. Batch order is a seeded shuffle per epoch. Throws EmptyDataset.
TrainResult train(models::Model<float>& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch_end = {});

// Stacks [C,H,W] samples into [N,C,H,W].
ad::Tensor<float> stack_inputs(const std::vector<const Sample*>& batch);

// Keeps records whose mask has at least one set pixel.
std::vector<std::size_t> filter_positive(const std::vector<mask::BitMask>& masks);

// Seeded shuffle, then round-robin into k folds (sizes differ by at most 1).
// Throws TooFewRecords unless k >= 2 and ids.size() >= k.
std::vector<std::vector<std::string>> split_kfold(const std::vector<std::string>& record_ids, int k,
                                                  std::uint64_t seed);

} // namespace contrail::train
