#pragma once

#include "contrail/config.hpp"
#include "contrail/dataset.hpp"
#include "contrail/falsecolor.hpp"
#include "contrail/models.hpp"
#include "contrail/train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace contrail::workflow {

// Everything `contrail train` reads from its config file.
struct TrainJob {
    models::ModelConfig model;
    train::TrainConfig train;
    int folds = 5;
    int val_fold = 0;
    // Drop training records whose label is empty.
    bool positive_only = false;
    falsecolor::SpreadMode spread_mode = falsecolor::SpreadMode::StdDev;

    void validate() const;
    static TrainJob from_config(const KeyValueConfig& cfg);
};

struct TrainOutcome {
    train::TrainResult result;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

// Splits by k-fold, fits channel statistics on the training part, trains,
// and writes to `out_dir`: the final checkpoint, one checkpoint per epoch in
// epoch_NN/, and history.csv.
TrainOutcome run_training(const TrainJob& job, const std::vector<dataset::RecordBundle>& records,
                          const std::filesystem::path& out_dir);

// epoch,loss,val_dice,lr with round-trip precision.
std::string history_csv(const std::vector<train::EpochRecord>& history);

} // namespace contrail::workflow
