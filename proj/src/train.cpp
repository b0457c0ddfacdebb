#include "contrail/train.hpp"

#include "contrail/error.hpp"
#include "contrail/metrics.hpp"
#include "contrail/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace contrail::train {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error(Errc::BadConfig, "learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw Error(Errc::BadConfig, "betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw Error(Errc::BadConfig, "eps must be positive");
    if (weight_decay < 0.0) throw Error(Errc::BadConfig, "weight_decay must be >= 0");
    if (epochs < 0) throw Error(Errc::BadConfig, "epochs must be >= 0");
    if (batch_size < 1) throw Error(Errc::BadConfig, "batch_size must be >= 1");
    if (!(pos_weight > 0.0)) throw Error(Errc::BadConfig, "pos_weight must be positive");
    if (!(decay_power > 0.0)) throw Error(Errc::BadConfig, "decay_power must be positive");
    if (!(val_threshold > 0.0 && val_threshold < 1.0))
        throw Error(Errc::BadConfig, "val_threshold must lie in (0, 1)");
}

template <class T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::int64_t step, const TrainConfig& cfg, double lr) {
    if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size())
        throw Error(Errc::ShapeMismatch, "adamw: parameter, gradient and moment sizes differ");
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i];
        const double mi = b1 * m[i] + (1.0 - b1) * g;
        const double vi = b2 * v[i] + (1.0 - b2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double m_hat = mi / bc1;
        const double v_hat = vi / bc2;
        const double old = theta[i];
        theta[i] = static_cast<T>(old - lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * old));
    }
}

template <class T>
void adamw_step(std::vector<models::Parameter<T>>& params, OptState<T>& state, const TrainConfig& cfg,
                double lr) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.numel(), T(0));
            state.v.emplace_back(p.tensor.numel(), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw Error(Errc::ShapeMismatch, "optimizer state does not match parameter list");
    ++state.t;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = params[i].tensor;
        if (state.m[i].size() != t.numel())
            throw Error(Errc::ShapeMismatch, "optimizer moments do not match " + params[i].name);
        adamw_update<T>(t.values(), t.grad(), state.m[i], state.v[i], state.t, cfg, lr);
    }
}

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
    if (total_steps <= 0) return cfg.learning_rate;
    const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
    return cfg.learning_rate * std::pow(1.0 - frac, cfg.decay_power);
}

ad::Tensor<float> stack_inputs(const std::vector<const Sample*>& batch) {
    if (batch.empty()) throw Error(Errc::EmptyDataset, "empty batch");
    const auto& shape = batch.front()->input.shape();
    if (shape.size() != 3) throw Error(Errc::ShapeMismatch, "sample inputs must be [C,H,W]");
    std::vector<float> values;
    values.reserve(batch.size() * batch.front()->input.numel());
    for (const auto* s : batch) {
        if (s->input.shape() != shape)
            throw Error(Errc::ShapeMismatch, "batch samples differ in shape");
        values.insert(values.end(), s->input.values().begin(), s->input.values().end());
    }
    return ad::Tensor<float>::from({static_cast<int>(batch.size()), shape[0], shape[1], shape[2]},
                                   std::move(values));
}

namespace {

double validation_dice(const models::Model<float>& model, const std::vector<Sample>& val_set, int batch_size,
                       double threshold) {
    metrics::ConfusionCounts total;
    for (std::size_t start = 0; start < val_set.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(val_set.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const Sample*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&val_set[i]);
        const auto probs = models::predict_probability(model, stack_inputs(batch));
        const auto p = probs.values();
        const std::size_t hw = static_cast<std::size_t>(probs.dim(1)) * static_cast<std::size_t>(probs.dim(2));
        for (std::size_t k = 0; k < batch.size(); ++k) {
            mask::BitMask pred(probs.dim(1), probs.dim(2));
            for (std::size_t i = 0; i < hw; ++i) pred.set_flat(i, p[k * hw + i] > threshold);
            total += metrics::confusion(pred, batch[k]->target);
        }
    }
    return metrics::dice(total);
}

} // namespace

TrainResult train(models::Model<float>& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg, const EpochCallback& on_epoch_end) {
    cfg.validate();
    if (train_set.empty()) throw Error(Errc::EmptyDataset, "training set is empty");

    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t steps_per_epoch = (train_set.size() + batch - 1) / batch;
    const auto total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs;
    const ad::ClassWeights weights{1.0, cfg.pos_weight};

    Rng rng(mix_seed(cfg.seed, 0x7261696EULL));
    OptState<float> state;
    TrainResult result;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::int64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        double lr = cfg.learning_rate;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<const Sample*> members;
            std::vector<mask::BitMask> targets;
            for (std::size_t i = start; i < end; ++i) {
                members.push_back(&train_set[order[i]]);
                targets.push_back(train_set[order[i]].target);
            }
            ad::Tape<float> tape;
            model.zero_grad();
            auto logits = model.forward(tape, stack_inputs(members));
            auto loss = ad::weighted_cross_entropy(tape, logits, targets, weights);
            tape.backward(loss);
            lr = lr_at(step, total_steps, cfg);
            adamw_step(model.parameters(), state, cfg, lr);
            ++step;
            const double value = loss.item();
            result.step_losses.push_back(value);
            epoch_loss += value;
        }
        EpochRecord record;
        record.epoch = epoch;
        record.loss = epoch_loss / static_cast<double>(steps_per_epoch);
        record.val_dice = val_set.empty() ? 0.0 : validation_dice(model, val_set, cfg.batch_size, cfg.val_threshold);
        record.lr = lr;
        result.history.push_back(record);
        if (on_epoch_end) on_epoch_end(record, model);
    }
    return result;
}

std::vector<std::size_t> filter_positive(const std::vector<mask::BitMask>& masks) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < masks.size(); ++i)
        if (masks[i].count() > 0) keep.push_back(i);
    return keep;
}

std::vector<std::vector<std::string>> split_kfold(const std::vector<std::string>& record_ids, int k,
                                                  std::uint64_t seed) {
    if (k < 2) throw Error(Errc::TooFewRecords, "k-fold split needs k >= 2");
    if (record_ids.size() < static_cast<std::size_t>(k))
        throw Error(Errc::TooFewRecords, std::to_string(record_ids.size()) + " records for " +
                                             std::to_string(k) + " folds");
    std::vector<std::string> ids = record_ids;
    Rng rng(mix_seed(seed, 0x6B666F6CULL));
    rng.shuffle(ids);
    std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < ids.size(); ++i) folds[i % static_cast<std::size_t>(k)].push_back(std::move(ids[i]));
    return folds;
}

template void adamw_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                  std::int64_t, const TrainConfig&, double);
template void adamw_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                   std::span<double>, std::int64_t, const TrainConfig&, double);
template void adamw_step<float>(std::vector<models::Parameter<float>>&, OptState<float>&, const TrainConfig&,
                                double);
template void adamw_step<double>(std::vector<models::Parameter<double>>&, OptState<double>&, const TrainConfig&,
                                 double);

} // namespace contrail::train
