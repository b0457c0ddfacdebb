#pragma once

#include "contrail/falsecolor.hpp"
#include "contrail/mask.hpp"
#include "contrail/metrics.hpp"
#include "contrail/models.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace contrail::pipeline {

// A model plus the input recipe it was trained with.
struct TrainedModel {
    std::unique_ptr<models::Model<float>> model;
    std::vector<falsecolor::InputChannel> channels;
    std::vector<falsecolor::ChannelStats> stats;
    falsecolor::SpreadMode spread_mode = falsecolor::SpreadMode::StdDev;
};

// manifest.json plus one float32 .npy per parameter tensor.
void save_checkpoint(const std::filesystem::path& dir, const models::Model<float>& model,
                     const std::vector<falsecolor::InputChannel>& channels,
                     const std::vector<falsecolor::ChannelStats>& stats, falsecolor::SpreadMode mode);
TrainedModel load_checkpoint(const std::filesystem::path& dir);

// Mean of the per-model probability maps, then strict `> threshold`.
// Throws EmptyModelList, ShapeMismatch, or BadConfig for a threshold outside (0, 1).
mask::BitMask fuse_probabilities(const std::vector<std::vector<float>>& maps, int height, int width,
                                 double threshold);

// Every model sees the same [C,H,W] input.
mask::BitMask predict_fused(const std::vector<const models::Model<float>*>& models, const ad::Tensor<float>& input,
                            double threshold);

// Each model gets the input built from its own channel recipe and statistics.
mask::BitMask predict_record(const std::vector<TrainedModel>& models, const falsecolor::BandCube& cube, int frame,
                             double threshold);

struct SubmissionRow {
    std::string record_id;
    std::string encoded_pixels; // RLE text, empty for an empty mask
};

// Header `record_id,encoded_pixels`, rows in input order, `-` for an empty mask.
// Throws DuplicateId.
std::string write_submission(const std::vector<std::pair<std::string, mask::BitMask>>& results);
std::vector<SubmissionRow> parse_submission(std::string_view csv);

// Scores rows against truths supplied by `truth_of` (which throws MissingTruth
// when it has none). Per-record entries are ordered by record id.
metrics::EvaluationReport evaluate_submission(const std::vector<SubmissionRow>& rows,
                                              const std::function<mask::BitMask(const std::string&)>& truth_of);
metrics::EvaluationReport evaluate_submission(std::string_view csv, const std::filesystem::path& truth_dir);

} // namespace contrail::pipeline
