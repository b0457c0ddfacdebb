#include "contrail/metrics.hpp"

#include "contrail/error.hpp"

#include <json.hpp>

namespace contrail::metrics {

ConfusionCounts confusion(const mask::BitMask& pred, const mask::BitMask& truth) {
    if (pred.height() != truth.height() || pred.width() != truth.width())
        throw Error(Errc::ShapeMismatch, "prediction and truth masks differ in size");
    ConfusionCounts c;
    const auto& p = pred.bits();
    const auto& t = truth.bits();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const unsigned cell = (p[i] << 1) | t[i];
        switch (cell) {
        case 0b11: ++c.tp; break;
        case 0b10: ++c.fp; break;
        case 0b01: ++c.fn; break;
        default: ++c.tn; break;
        }
    }
    return c;
}

double dice(const ConfusionCounts& c) noexcept {
    const auto denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double iou(const ConfusionCounts& c) noexcept {
    const auto denom = c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

double precision(const ConfusionCounts& c) noexcept {
    const auto denom = c.tp + c.fp;
    return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double recall(const ConfusionCounts& c) noexcept {
    const auto denom = c.tp + c.fn;
    return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double dice_global(const std::vector<MaskPair>& pairs) {
    return dice_aggregate(pairs, Aggregation::Global);
}

double dice_aggregate(const std::vector<MaskPair>& pairs, Aggregation mode) {
    ConfusionCounts total;
    double sum = 0.0;
    for (const auto& [pred, truth] : pairs) {
        const auto c = confusion(pred, truth);
        total += c;
        sum += dice(c);
    }
    if (mode == Aggregation::Global) return dice(total);
    return pairs.empty() ? 1.0 : sum / static_cast<double>(pairs.size());
}

EvaluationReport make_report(std::vector<RecordScore> records) {
    EvaluationReport report;
    ConfusionCounts total;
    for (const auto& r : records) total += r.counts;
    report.global_dice = dice(total);
    report.global_iou = iou(total);
    report.per_record = std::move(records);
    return report;
}

std::string to_json(const EvaluationReport& report, int indent) {
    nlohmann::ordered_json j;
    j["global_dice"] = report.global_dice;
    j["global_iou"] = report.global_iou;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : report.per_record) {
        rows.push_back({{"record_id", r.record_id},
                        {"dice", dice(r.counts)},
                        {"iou", iou(r.counts)},
                        {"tp", r.counts.tp},
                        {"fp", r.counts.fp},
                        {"fn", r.counts.fn}});
    }
    j["per_record"] = std::move(rows);
    return j.dump(indent);
}

} // namespace contrail::metrics
