#include "support.hpp"

#include "contrail/error.hpp"
#include "contrail/falsecolor.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace contrail;
using namespace contrail::falsecolor;

namespace {

const std::vector<BandId> kBands{kBand8_4um, kBand10_3um, kBand11_2um, kBand12_3um};

BandCube random_cube(Rng& rng, int frames, int h, int w) {
    std::vector<float> v(static_cast<std::size_t>(frames) * kBands.size() * h * w);
    for (auto& x : v) x = static_cast<float>(rng.uniform(230.0, 310.0));
    return BandCube(frames, kBands, h, w, v);
}

BandCube uniform_cube(int h, int w, const std::vector<double>& per_band) {
    std::vector<float> v;
    for (double t : per_band)
        for (int i = 0; i < h * w; ++i) v.push_back(static_cast<float>(t));
    return BandCube(1, kBands, h, w, v);
}

double window_oracle(double x, double lo, double hi) {
    double t = (x - lo) / (hi - lo);
    if (t < 0) t = 0;
    if (t > 1) t = 1;
    return t;
}

Errc code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return Errc::Io;
}

} // namespace

TEST_SUITE("falsecolor") {

TEST_CASE("band wavelengths") {
    CHECK(kBand8_4um.wavelength_um() == doctest::Approx(8.4));
    CHECK(kBand11_2um.wavelength_um() == doctest::Approx(11.2));
    CHECK(kBand12_3um.wavelength_um() == doctest::Approx(12.3));
    for (int ch = 8; ch <= 16; ++ch) CHECK_NOTHROW(BandId::checked(ch));
    CHECK_THROWS_AS(BandId::checked(7), Error);
    CHECK_THROWS_AS(BandId::checked(17), Error);
}

TEST_CASE("normalize_range examples") {
    CHECK(normalize_range(243.0, kBlueWindow) == 0.0);
    CHECK(normalize_range(303.0, kBlueWindow) == 1.0);
    CHECK(normalize_range(-1.0, kRedWindow) == 0.5);
    CHECK(normalize_range(-4.0, kRedWindow) == 0.0);
    CHECK(normalize_range(2.0, kRedWindow) == 1.0);
    CHECK(normalize_range(-4.0, kGreenWindow) == 0.0);
    CHECK(normalize_range(5.0, kGreenWindow) == 1.0);
    CHECK(normalize_range(-100.0, kRedWindow) == 0.0);
    CHECK(normalize_range(100.0, kRedWindow) == 1.0);
    // gamma 2: value^(1/2)
    CHECK(normalize_range(0.25, {0.0, 1.0, 2.0}) == doctest::Approx(0.5));
}

TEST_CASE("normalize_range is monotone and idempotent") {
    Rng rng(4);
    double prev = -1.0;
    for (double x = -10.0; x <= 10.0; x += 0.01) {
        const double y = normalize_range(x, kRedWindow);
        CHECK(y >= prev);
        prev = y;
    }
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-4.0, 2.0);
        const double y = normalize_range(x, kRedWindow);
        CHECK(normalize_range(y * 6.0 - 4.0, kRedWindow) == doctest::Approx(y).epsilon(1e-12));
    }
}

TEST_CASE("uniform 273 K scene") {
    const auto img = ash_rgb(uniform_cube(3, 2, {273, 273, 273, 273}), 0);
    REQUIRE(img.rgb.size() == 6);
    for (const auto& px : img.rgb) {
        CHECK(px[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
        CHECK(px[1] == doctest::Approx(4.0 / 9.0).epsilon(1e-6));
        CHECK(px[2] == doctest::Approx(0.5).epsilon(1e-6));
    }
    const auto red_floor = ash_rgb(uniform_cube(2, 2, {280, 280, 280, 276}), 0);
    for (const auto& px : red_floor.rgb) CHECK(px[0] == 0.0f);
}

TEST_CASE("ash_rgb matches a scalar oracle") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const auto cube = random_cube(rng, 2, 9, 7);
        for (int f = 0; f < 2; ++f) {
            const auto img = ash_rgb(cube, f);
            const auto b8 = cube.plane(f, kBand8_4um);
            const auto b11 = cube.plane(f, kBand11_2um);
            const auto b12 = cube.plane(f, kBand12_3um);
            for (std::size_t i = 0; i < img.rgb.size(); ++i) {
                const double r = window_oracle(double(b12[i]) - double(b11[i]), -4, 2);
                const double g = window_oracle(double(b11[i]) - double(b8[i]), -4, 5);
                const double b = window_oracle(b11[i], 243, 303);
                CHECK(std::abs(img.rgb[i][0] - r) <= 1e-6);
                CHECK(std::abs(img.rgb[i][1] - g) <= 1e-6);
                CHECK(std::abs(img.rgb[i][2] - b) <= 1e-6);
            }
        }
    }
}

TEST_CASE("ash_rgb needs its three bands") {
    std::vector<float> v(2 * 4, 280.0f);
    const BandCube cube(1, {kBand11_2um, kBand12_3um}, 2, 2, v);
    CHECK(code_of([&] { ash_rgb(cube, 0); }) == Errc::MissingBand);
}

TEST_CASE("cube ingest gate") {
    std::vector<float> v(4, 280.0f);
    v[2] = 400.0f;
    CHECK(code_of([&] { BandCube(1, {kBand11_2um}, 2, 2, v); }) == Errc::OutOfPhysicalRange);
    v[2] = std::nanf("");
    CHECK(code_of([&] { BandCube(1, {kBand11_2um}, 2, 2, v); }) == Errc::NonFinite);
}

TEST_CASE("model input standardization") {
    const auto cube = uniform_cube(2, 3, {260, 270, 280, 278});
    const auto channels = default_input_channels();
    REQUIRE(channels.size() == 6);
    // Channel values: 260, 270, 280, 278, 278-280, 280-260.
    const std::vector<double> raw{260, 270, 280, 278, -2, 20};
    std::vector<ChannelStats> centred, unit;
    for (double x : raw) {
        centred.push_back({x, 3.0});
        unit.push_back({x - 2.5, 2.5});
    }
    const auto zero = model_input_stack(cube, 0, centred, channels);
    CHECK(zero.shape() == ad::Shape{6, 2, 3});
    for (float x : zero.values()) CHECK(x == 0.0f);
    const auto one = model_input_stack(cube, 0, unit, channels);
    for (float x : one.values()) CHECK(x == doctest::Approx(1.0));

    centred[2].spread = 0.0;
    CHECK(code_of([&] { model_input_stack(cube, 0, centred, channels); }) == Errc::NonPositiveSpread);
}

TEST_CASE("model input matches a scalar oracle and centres its own stats") {
    Rng rng(21);
    const auto cube = random_cube(rng, 1, 8, 8);
    const auto channels = default_input_channels();
    const auto stats = compute_channel_stats({&cube}, 0, channels);
    const auto t = model_input_stack(cube, 0, stats, channels);
    const auto vals = t.values();
    for (std::size_t c = 0; c < channels.size(); ++c) {
        const auto a = cube.plane(0, channels[c].band);
        double sum = 0.0;
        for (std::size_t i = 0; i < 64; ++i) {
            double x = a[i];
            if (channels[c].minus) x -= cube.plane(0, *channels[c].minus)[i];
            const double expect = (x - stats[c].mean) / stats[c].spread;
            CHECK(std::abs(vals[c * 64 + i] - expect) <= 1e-6);
            sum += vals[c * 64 + i];
        }
        CHECK(std::abs(sum / 64.0) <= 1e-6);
    }
    const auto var_stats = compute_channel_stats({&cube}, 0, channels, SpreadMode::Variance);
    for (std::size_t c = 0; c < channels.size(); ++c)
        CHECK(var_stats[c].spread == doctest::Approx(stats[c].spread * stats[c].spread));
}

TEST_CASE("center crop") {
    const auto o = center_crop_offsets(281, 281, 256, 256);
    CHECK(o.row == 12);
    CHECK(o.col == 12);
    Rng rng(2);
    const auto m = test_support::random_mask(rng, 9, 9, 0.5);
    CHECK(center_crop(m, 9, 9) == m);
    CHECK(code_of([&] { center_crop(m, 10, 10); }) == Errc::CropTooLarge);
    const auto c = center_crop(m, 5, 4);
    for (int r = 0; r < 5; ++r)
        for (int col = 0; col < 4; ++col) CHECK(c.at(r, col) == m.at(r + 2, col + 2));
    const auto cube = random_cube(rng, 2, 9, 9);
    const auto cc = center_crop(cube, 5, 5);
    CHECK(cc.plane(1, kBand11_2um)[0] == cube.plane(1, kBand11_2um)[2 * 9 + 2]);
}

TEST_CASE("8-bit export rounds") {
    AshImage img{1, 2, {{0.0f, 0.5f, 1.0f}, {0.2f, 0.998f, 0.002f}}};
    const auto bytes = to_rgb8(img);
    CHECK(bytes == std::vector<std::uint8_t>{0, 128, 255, 51, 254, 1});
}

}
