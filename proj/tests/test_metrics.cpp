#include "support.hpp"

#include "contrail/error.hpp"
#include "contrail/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <json.hpp>

using namespace contrail;
using namespace contrail::metrics;
using mask::BitMask;
using test_support::random_mask;

namespace {

struct LoopScore {
    double dice;
    double iou;
    std::uint64_t tp, fp, fn, tn;
};

LoopScore loop_oracle(const BitMask& pred, const BitMask& truth) {
    LoopScore s{0, 0, 0, 0, 0, 0};
    for (int r = 0; r < pred.height(); ++r)
        for (int c = 0; c < pred.width(); ++c) {
            const bool p = pred.at(r, c), t = truth.at(r, c);
            if (p && t) ++s.tp;
            else if (p) ++s.fp;
            else if (t) ++s.fn;
            else ++s.tn;
        }
    const double denom_d = 2.0 * s.tp + s.fp + s.fn;
    const double denom_i = static_cast<double>(s.tp + s.fp + s.fn);
    s.dice = denom_d == 0 ? 1.0 : 2.0 * s.tp / denom_d;
    s.iou = denom_i == 0 ? 1.0 : s.tp / denom_i;
    return s;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("confusion examples") {
    const auto m = mask::from_pixels(4, 4, {{0, 0}, {1, 1}, {2, 2}});
    const auto same = confusion(m, m);
    CHECK(same.tp == 3);
    CHECK(same.fp == 0);
    CHECK(same.fn == 0);
    BitMask all(4, 4);
    for (std::size_t i = 0; i < all.size(); ++i) all.set_flat(i);
    CHECK(confusion(all, BitMask(4, 4)).fp == 16);
    CHECK_THROWS_AS(confusion(BitMask(4, 4), BitMask(4, 5)), Error);
}

TEST_CASE("dice and iou by hand") {
    const ConfusionCounts c{3, 1, 1, 0};
    CHECK(dice(c) == doctest::Approx(0.75));
    CHECK(iou(c) == doctest::Approx(0.6));
    CHECK(dice(ConfusionCounts{}) == 1.0);
    CHECK(iou(ConfusionCounts{}) == 1.0);
    CHECK(dice(ConfusionCounts{0, 4, 5, 7}) == 0.0);
    CHECK(precision(c) == doctest::Approx(0.75));
    CHECK(recall(c) == doctest::Approx(0.75));
}

TEST_CASE("random pairs match a per-pixel loop") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const int h = rng.range(1, 40), w = rng.range(1, 40);
        const auto pred = random_mask(rng, h, w, rng.uniform());
        const auto truth = random_mask(rng, h, w, rng.uniform());
        const auto c = confusion(pred, truth);
        const auto o = loop_oracle(pred, truth);
        CHECK(c.tp == o.tp);
        CHECK(c.fp == o.fp);
        CHECK(c.fn == o.fn);
        CHECK(c.tn == o.tn);
        CHECK(dice(c) == o.dice);
        CHECK(iou(c) == o.iou);
        CHECK(std::abs(dice(c) - 2.0 * iou(c) / (1.0 + iou(c))) <= 1e-12);
        CHECK(iou(c) <= dice(c));
        const auto swapped = confusion(truth, pred);
        CHECK(dice(swapped) == dice(c));
        CHECK(iou(swapped) == iou(c));
    }
}

TEST_CASE("global versus per-image aggregation") {
    const auto one = mask::from_pixels(2, 2, {{0, 0}});
    const BitMask none(2, 2);
    const std::vector<MaskPair> pairs{{one, one}, {none, one}};
    CHECK(dice_global(pairs) == 2.0 / 3.0);
    CHECK(dice_aggregate(pairs, Aggregation::PerImageMean) == 0.5);
    CHECK(dice_aggregate(pairs, Aggregation::Global) == 2.0 / 3.0);
    CHECK(dice_global({{one, one}, {one, one}}) == 1.0);
    CHECK(dice_global({{one, none}}) == dice(confusion(one, none)));
}

TEST_CASE("json report layout") {
    auto report = make_report({{"b", {1, 0, 1, 2}}, {"a", {2, 0, 0, 2}}});
    CHECK(report.global_dice == doctest::Approx(6.0 / 7.0));
    const auto j = nlohmann::json::parse(to_json(report));
    CHECK(j.at("global_dice").get<double>() == report.global_dice);
    CHECK(j.at("global_iou").get<double>() == report.global_iou);
    REQUIRE(j.at("per_record").size() == 2);
    const auto& r0 = j.at("per_record")[0];
    for (const char* key : {"record_id", "dice", "iou", "tp", "fp", "fn"}) CHECK(r0.contains(key));
}

}
