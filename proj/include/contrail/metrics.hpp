#pragma once

#include "contrail/mask.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace contrail::metrics {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const noexcept { return tp + fp + fn + tn; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) noexcept { return a += b; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion(const mask::BitMask& pred, const mask::BitMask& truth);

// Both return 1.0 when tp = fp = fn = 0.
double dice(const ConfusionCounts& c) noexcept;
double iou(const ConfusionCounts& c) noexcept;
double precision(const ConfusionCounts& c) noexcept;
double recall(const ConfusionCounts& c) noexcept;

using MaskPair = std::pair<mask::BitMask, mask::BitMask>; // (pred, truth)

enum class Aggregation { Global, PerImageMean };

// Global: Dice of the summed counts. PerImageMean: mean of per-pair Dice.
double dice_global(const std::vector<MaskPair>& pairs);
double dice_aggregate(const std::vector<MaskPair>& pairs, Aggregation mode);

struct RecordScore {
    std::string record_id;
    ConfusionCounts counts;
};

struct EvaluationReport {
    double global_dice = 1.0;
    double global_iou = 1.0;
    std::vector<RecordScore> per_record;
};

EvaluationReport make_report(std::vector<RecordScore> records);

// {global_dice, global_iou, per_record: [{record_id, dice, iou, tp, fp, fn}]}
std::string to_json(const EvaluationReport& report, int indent = 2);

} // namespace contrail::metrics
