#include "contrail/workflow.hpp"

#include "contrail/error.hpp"
#include "contrail/pipeline.hpp"
#include "contrail/random.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

namespace contrail::workflow {

namespace fs = std::filesystem;

void TrainJob::validate() const {
    model.validate();
    train.validate();
    if (folds < 2) throw Error(Errc::BadConfig, "folds must be >= 2");
    if (val_fold < 0 || val_fold >= folds) throw Error(Errc::BadConfig, "val_fold must lie in [0, folds)");
}

TrainJob TrainJob::from_config(const KeyValueConfig& cfg) {
    TrainJob job;
    job.model.architecture =
        models::parse_architecture(cfg.get_string("architecture", models::to_string(job.model.architecture)));
    job.model.base_width = cfg.get_int("base_width", job.model.base_width);
    job.model.depth = cfg.get_int("depth", job.model.depth);
    auto& t = job.train;
    t.learning_rate = cfg.get_double("learning_rate", t.learning_rate);
    t.beta1 = cfg.get_double("beta1", t.beta1);
    t.beta2 = cfg.get_double("beta2", t.beta2);
    t.eps = cfg.get_double("eps", t.eps);
    t.weight_decay = cfg.get_double("weight_decay", t.weight_decay);
    t.epochs = cfg.get_int("epochs", t.epochs);
    t.batch_size = cfg.get_int("batch_size", t.batch_size);
    t.pos_weight = cfg.get_double("pos_weight", t.pos_weight);
    t.decay_power = cfg.get_double("decay_power", t.decay_power);
    t.val_threshold = cfg.get_double("val_threshold", t.val_threshold);
    t.seed = cfg.get_u64("seed", t.seed);
    job.folds = cfg.get_int("folds", job.folds);
    job.val_fold = cfg.get_int("val_fold", job.val_fold);
    const auto positive = cfg.get_string("positive_only", job.positive_only ? "true" : "false");
    if (positive != "true" && positive != "false")
        throw Error(Errc::BadConfig, "positive_only must be true or false");
    job.positive_only = positive == "true";
    const auto spread = cfg.get_string("spread", "std");
    if (spread == "std") job.spread_mode = falsecolor::SpreadMode::StdDev;
    else if (spread == "variance") job.spread_mode = falsecolor::SpreadMode::Variance;
    else throw Error(Errc::BadConfig, "spread must be std or variance");
    cfg.require_all_used();
    job.validate();
    return job;
}

std::string history_csv(const std::vector<train::EpochRecord>& history) {
    std::string out = "epoch,loss,val_dice,lr\n";
    char line[128];
    for (const auto& e : history) {
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.loss, e.val_dice, e.lr);
        out += line;
    }
    return out;
}

TrainOutcome run_training(const TrainJob& job, const std::vector<dataset::RecordBundle>& records,
                          const fs::path& out_dir) {
    job.validate();
    std::map<std::string, const dataset::RecordBundle*> by_id;
    for (const auto& r : records)
        if (!by_id.emplace(r.record_id, &r).second) throw Error(Errc::DuplicateId, "duplicate record id " + r.record_id);
    std::vector<std::string> ids;
    for (const auto& [id, r] : by_id) ids.push_back(id);

    const auto folds = train::split_kfold(ids, job.folds, job.train.seed);
    TrainOutcome outcome;
    outcome.val_ids = folds[static_cast<std::size_t>(job.val_fold)];
    for (int f = 0; f < job.folds; ++f)
        if (f != job.val_fold) outcome.train_ids.insert(outcome.train_ids.end(), folds[f].begin(), folds[f].end());
    std::sort(outcome.train_ids.begin(), outcome.train_ids.end());
    std::sort(outcome.val_ids.begin(), outcome.val_ids.end());
    if (job.positive_only) {
        std::erase_if(outcome.train_ids, [&](const std::string& id) { return by_id.at(id)->truth.empty_mask(); });
        if (outcome.train_ids.empty()) throw Error(Errc::EmptyDataset, "no training record has a labeled contrail");
    }

    const auto channels = falsecolor::default_input_channels();
    std::vector<const falsecolor::BandCube*> cubes;
    for (const auto& id : outcome.train_ids) cubes.push_back(&by_id.at(id)->cube);
    const int frame = by_id.at(outcome.train_ids.front())->labeled_frame();
    const auto stats = falsecolor::compute_channel_stats(cubes, frame, channels, job.spread_mode);

    auto to_samples = [&](const std::vector<std::string>& subset) {
        std::vector<train::Sample> out;
        for (const auto& id : subset) {
            const auto& r = *by_id.at(id);
            out.push_back({id, falsecolor::model_input_stack(r.cube, r.labeled_frame(), stats, channels), r.truth});
        }
        return out;
    };
    const auto train_set = to_samples(outcome.train_ids);
    const auto val_set = to_samples(outcome.val_ids);

    auto model_cfg = job.model;
    model_cfg.in_channels = static_cast<int>(channels.size());
    auto model = models::build_model<float>(model_cfg, mix_seed(job.train.seed, 1));
    auto train_cfg = job.train;
    train_cfg.seed = mix_seed(job.train.seed, 2);

    fs::create_directories(out_dir);
    outcome.result = train::train(*model, train_set, val_set, train_cfg,
                                  [&](const train::EpochRecord& e, const models::Model<float>& m) {
                                      char name[32];
                                      std::snprintf(name, sizeof name, "epoch_%02d", e.epoch);
                                      pipeline::save_checkpoint(out_dir / name, m, channels, stats, job.spread_mode);
                                  });
    pipeline::save_checkpoint(out_dir, *model, channels, stats, job.spread_mode);
    std::ofstream hist(out_dir / "history.csv");
    hist << history_csv(outcome.result.history);
    if (!hist) throw Error(Errc::Io, "cannot write " + (out_dir / "history.csv").string());
    return outcome;
}

} // namespace contrail::workflow
