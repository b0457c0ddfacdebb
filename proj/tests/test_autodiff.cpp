#include "gradcheck.hpp"
#include "support.hpp"

#include "contrail/autodiff.hpp"
#include "contrail/error.hpp"

#include <doctest.h>

#include <cmath>

using namespace contrail;
using namespace contrail::ad;
using gradcheck::project;
using gradcheck::random_tensor;
using gradcheck::random_values;

namespace {

constexpr double kTol = 1e-3;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

std::vector<double> vals(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

// Six nested loops over (n, co, oy, ox, ci, ky, kx) with explicit padding checks.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride,
                               int pad, int groups) {
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int cin_g = cin / groups, cout_g = cout / groups;
    const int oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(n) * cout * oh * ow);
    auto X = x.values();
    auto W = w.values();
    for (int in = 0; in < n; ++in)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b.defined() ? b.values()[co] : 0.0;
                    const int g = co / cout_g;
                    for (int ci = 0; ci < cin_g; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                                acc += X[((in * cin + g * cin_g + ci) * h + iy) * wd + ix] *
                                       W[((co * cin_g + ci) * kh + ky) * kw + kx];
                            }
                    out[((in * cout + co) * oh + oy) * ow + ox] = acc;
                }
    return out;
}

// Direct half-pixel interpolation of one plane.
double bilinear_at(const std::vector<double>& plane, int h, int w, int oh, int ow, int y, int x) {
    auto src = [](int d, int in, int out) { return std::max(0.0, (d + 0.5) * in / out - 0.5); };
    const double sy = src(y, h, oh), sx = src(x, w, ow);
    const int y0 = std::min(static_cast<int>(sy), h - 1), x0 = std::min(static_cast<int>(sx), w - 1);
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = sy - y0, fx = sx - x0;
    auto p = [&](int r, int c) { return plane[static_cast<std::size_t>(r * w + c)]; };
    return (1 - fy) * ((1 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1 - fx) * p(y1, x0) + fx * p(y1, x1));
}

} // namespace

TEST_SUITE("autodiff") {

TEST_CASE("conv2d hand examples") {
    Tape<double> tape;
    auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto w = Tensor<double>::full({1, 1, 2, 2}, 1.0);
    auto y = conv2d(tape, x, w, Tensor<double>::zeros({1}));
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.values()) CHECK(v == 4.0);

    Rng rng(1);
    auto img = random_tensor(rng, {2, 3, 4, 5});
    std::vector<double> eye(9, 0.0);
    for (int c = 0; c < 3; ++c) eye[static_cast<std::size_t>(c * 3 + c)] = 1.0;
    auto id = conv2d(tape, img, Tensor<double>::from({3, 3, 1, 1}, eye), Tensor<double>::zeros({3}));
    CHECK(vals(id) == vals(img));
}

TEST_CASE("conv2d matches a naive loop") {
    Rng rng(42);
    struct Case {
        int n, cin, h, w, cout, k, stride, pad, groups;
    };
    for (const Case c : {Case{1, 1, 5, 5, 1, 3, 1, 0, 1}, Case{2, 3, 7, 6, 4, 3, 1, 1, 1}, Case{1, 4, 8, 8, 8, 2, 2, 0, 1},
                         Case{2, 4, 9, 9, 4, 7, 1, 3, 4}, Case{1, 6, 6, 5, 4, 3, 2, 1, 2}, Case{1, 2, 4, 4, 3, 1, 1, 0, 1}}) {
        Tape<double> tape;
        auto x = random_tensor(rng, {c.n, c.cin, c.h, c.w});
        auto w = random_tensor(rng, {c.cout, c.cin / c.groups, c.k, c.k});
        auto b = random_tensor(rng, {c.cout});
        auto y = conv2d(tape, x, w, b, {c.stride, c.pad, c.groups});
        const auto ref = naive_conv(x, w, b, c.stride, c.pad, c.groups);
        REQUIRE(y.numel() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.values()[i] - ref[i]) <= 1e-6);
    }
}

TEST_CASE("conv2d is linear in its input") {
    Rng rng(9);
    Tape<double> tape;
    auto x = random_tensor(rng, {1, 3, 6, 6});
    auto w = random_tensor(rng, {2, 3, 3, 3});
    auto y = conv2d(tape, x, w, Tensor<double>{}, {1, 1, 1});
    auto y3 = conv2d(tape, scale(tape, x, 3.0), w, Tensor<double>{}, {1, 1, 1});
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y3.values()[i] - 3.0 * y.values()[i]) <= 1e-6);
}

TEST_CASE("conv2d rejects bad shapes") {
    Tape<double> tape;
    CHECK_THROWS_AS(conv2d(tape, Tensor<double>::zeros({1, 3, 4, 4}), Tensor<double>::zeros({2, 3, 5, 5}),
                           Tensor<double>::zeros({2})),
                    Error);
    CHECK_THROWS_AS(conv2d(tape, Tensor<double>::zeros({1, 3, 4, 4}), Tensor<double>::zeros({2, 1, 3, 3}),
                           Tensor<double>::zeros({2}), {1, 1, 2}),
                    Error);
}

TEST_CASE("max_pool2d examples") {
    Tape<double> tape;
    auto c = max_pool2d(tape, Tensor<double>::full({1, 1, 4, 4}, 2.5), 2, 2);
    CHECK(c.shape() == Shape{1, 1, 2, 2});
    for (double v : c.values()) CHECK(v == 2.5);
    std::vector<double> v(16, 0.0);
    v[5] = 9.0;
    auto p = max_pool2d(tape, Tensor<double>::from({1, 1, 4, 4}, v), 2, 2);
    CHECK(vals(p) == std::vector<double>{9, 0, 0, 0});

    // Ties route the gradient to the first maximum.
    Tape<double> t2;
    auto x = Tensor<double>::full({1, 1, 2, 2}, 1.0, true);
    auto s = sum(t2, max_pool2d(t2, x, 2, 2));
    t2.backward(s);
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("bilinear resampling") {
    Rng rng(6);
    Tape<double> tape;
    auto x = random_tensor(rng, {1, 2, 3, 3});
    CHECK(vals(upsample_bilinear(tape, x, 1)) == vals(x));
    const auto flat = upsample_bilinear(tape, Tensor<double>::full({1, 1, 3, 3}, 4.0), 3);
    for (double v : flat.values()) CHECK(v == doctest::Approx(4.0));
    for (int s : {2, 3}) {
        auto y = upsample_bilinear(tape, x, s);
        REQUIRE(y.shape() == Shape{1, 2, 3 * s, 3 * s});
        for (int c = 0; c < 2; ++c) {
            std::vector<double> plane(x.values().begin() + c * 9, x.values().begin() + (c + 1) * 9);
            for (int r = 0; r < 3 * s; ++r)
                for (int q = 0; q < 3 * s; ++q)
                    CHECK(std::abs(y.values()[static_cast<std::size_t>((c * 3 * s + r) * 3 * s + q)] -
                                   bilinear_at(plane, 3, 3, 3 * s, 3 * s, r, q)) <= 1e-12);
        }
    }
    auto z = resize_bilinear(tape, x, 5, 4);
    std::vector<double> plane(x.values().begin(), x.values().begin() + 9);
    for (int r = 0; r < 5; ++r)
        for (int q = 0; q < 4; ++q)
            CHECK(std::abs(z.values()[static_cast<std::size_t>(r * 4 + q)] - bilinear_at(plane, 3, 3, 5, 4, r, q)) <= 1e-12);
}

TEST_CASE("adaptive average pooling") {
    Tape<double> tape;
    std::vector<double> ramp(16);
    for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = i;
    auto x = Tensor<double>::from({1, 1, 4, 4}, ramp);
    CHECK(vals(adaptive_avg_pool(tape, x, 4, 4)) == ramp);
    CHECK(adaptive_avg_pool(tape, x, 1, 1).values()[0] == doctest::Approx(7.5));
    // Quadrants {0,1,4,5}, {2,3,6,7}, {8,9,12,13}, {10,11,14,15}.
    CHECK(vals(adaptive_avg_pool(tape, x, 2, 2)) == std::vector<double>{2.5, 4.5, 10.5, 12.5});
    // 3 bins over 4 rows: [0,2), [1,3), [2,4).
    auto y = adaptive_avg_pool(tape, x, 3, 1);
    CHECK(y.values()[0] == doctest::Approx(3.5));
    CHECK(y.values()[1] == doctest::Approx(7.5));
    CHECK(y.values()[2] == doctest::Approx(11.5));
}

TEST_CASE("elementwise examples") {
    Tape<double> tape;
    auto x = Tensor<double>::from({3}, {-1.0, 0.0, 2.0});
    CHECK(vals(relu(tape, x)) == std::vector<double>{0.0, 0.0, 2.0});
    CHECK(sigmoid(tape, x).values()[1] == 0.5);
    CHECK(gelu(tape, x).values()[1] == 0.0);
    CHECK(gelu(tape, x).values()[2] == doctest::Approx(1.9545977).epsilon(1e-6));
}

TEST_CASE("channel norm examples") {
    Tape<double> tape;
    auto one = channel_norm(tape, Tensor<double>::from({1, 1, 1, 2}, {3.0, -7.0}), Tensor<double>::from({1}, {2.0}),
                            Tensor<double>::from({1}, {0.25}));
    CHECK(vals(one) == std::vector<double>{0.25, 0.25});
    auto two = channel_norm(tape, Tensor<double>::from({1, 2, 1, 1}, {1.0, 3.0}), Tensor<double>::full({2}, 1.0),
                            Tensor<double>::zeros({2}));
    CHECK(two.values()[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(two.values()[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("concat and softmax examples") {
    Tape<double> tape;
    Rng rng(3);
    auto x = random_tensor(rng, {2, 3, 2, 2});
    CHECK(vals(concat(tape, {x}, 1)) == vals(x));
    auto y = concat(tape, {x, x}, 1);
    CHECK(y.shape() == Shape{2, 6, 2, 2});
    CHECK_THROWS_AS(concat(tape, {x, random_tensor(rng, {2, 3, 3, 2})}, 1), Error);

    CHECK(vals(softmax(tape, Tensor<double>::from({2}, {0.0, 0.0}), 0)) == std::vector<double>{0.5, 0.5});
    const auto big = softmax(tape, Tensor<double>::from({2}, {1000.0, 0.0}), 0);
    CHECK(big.values()[0] == doctest::Approx(1.0));
    CHECK(big.values()[1] >= 0.0);
    CHECK(big.values()[1] < 1e-300);
    auto s = softmax(tape, x, 1);
    for (int n = 0; n < 2; ++n)
        for (int p = 0; p < 4; ++p) {
            double total = 0.0;
            for (int c = 0; c < 3; ++c) total += s.values()[static_cast<std::size_t>((n * 3 + c) * 4 + p)];
            CHECK(std::abs(total - 1.0) <= 1e-6);
        }
}

TEST_CASE("weighted cross entropy hand values") {
    Tape<double> tape;
    const auto logits = Tensor<double>::from({1, 2, 1, 1}, {0.0, 0.0});
    const std::vector<mask::BitMask> target{mask::from_pixels(1, 1, {{0, 0}})};
    CHECK(std::abs(weighted_cross_entropy(tape, logits, target, {1.0, 10.0}).item() - 6.9314718) <= 1e-4);
    CHECK(std::abs(weighted_cross_entropy(tape, logits, target, {1.0, 1.0}).item() - std::log(2.0)) <= 1e-6);
    const auto sure = Tensor<double>::from({1, 2, 1, 1}, {-40.0, 40.0});
    CHECK(weighted_cross_entropy(tape, sure, target, {1.0, 10.0}).item() < 1e-30);
    CHECK_THROWS_AS(weighted_cross_entropy(tape, logits, {mask::BitMask(2, 2)}, {1.0, 10.0}), Error);
}

TEST_CASE("backward basics") {
    Tape<double> tape;
    auto x = Tensor<double>::from({3}, {1.0, 2.0, 3.0}, true);
    auto s = sum(tape, x);
    tape.backward(s);
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});

    Tape<double> t2;
    auto y = Tensor<double>::from({3}, {1.0, 2.0, 3.0}, true);
    auto s2 = sum(t2, add(t2, y, y));
    t2.backward(s2);
    CHECK(std::vector<double>(y.grad().begin(), y.grad().end()) == std::vector<double>{2, 2, 2});

    auto not_scalar = add(t2, y, y);
    try {
        t2.backward(not_scalar);
        FAIL("expected NotScalar");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::NotScalar);
    }
}

TEST_CASE("finite-difference checks per op") {
    for (auto seed : kSeeds) {
        CAPTURE(seed);
        Rng rng(seed);
        auto check = [&](const char* name, auto loss, std::vector<std::pair<std::string, Tensor<double>>> leaves) {
            const auto res = gradcheck::check(loss, leaves, rng, 1e-4, 1e-6, 0, kTol);
            INFO(name << " worst " << res.worst);
            CHECK(res.checked > 0);
            CHECK(res.kinks == 0);
            CHECK(res.max_rel <= kTol);
        };

        {
            auto x = random_tensor(rng, {2, 4, 5, 5});
            auto w = random_tensor(rng, {6, 2, 3, 3});
            auto b = random_tensor(rng, {6});
            const auto r = random_values(rng, 2 * 6 * 3 * 3);
            check("conv2d", [&](Tape<double>& t) { return project(t, conv2d(t, x, w, b, {2, 1, 2}), r); },
                  {{"x", x}, {"w", w}, {"b", b}});
        }
        {
            auto x = random_tensor(rng, {1, 3, 6, 6});
            const auto r = random_values(rng, 3 * 3 * 3);
            check("max_pool2d", [&](Tape<double>& t) { return project(t, max_pool2d(t, x, 2, 2), r); }, {{"x", x}});
        }
        {
            auto x = random_tensor(rng, {1, 2, 3, 3});
            const auto r = random_values(rng, 2 * 6 * 6);
            check("upsample_bilinear", [&](Tape<double>& t) { return project(t, upsample_bilinear(t, x, 2), r); },
                  {{"x", x}});
            const auto r2 = random_values(rng, 2 * 5 * 7);
            check("resize_bilinear", [&](Tape<double>& t) { return project(t, resize_bilinear(t, x, 5, 7), r2); },
                  {{"x", x}});
        }
        {
            auto x = random_tensor(rng, {2, 2, 6, 6});
            const auto r = random_values(rng, 2 * 2 * 3 * 3);
            check("adaptive_avg_pool", [&](Tape<double>& t) { return project(t, adaptive_avg_pool(t, x, 3, 3), r); },
                  {{"x", x}});
        }
        for (auto kind : {Activation::Relu, Activation::Gelu, Activation::Sigmoid}) {
            auto x = random_tensor(rng, {16});
            const auto r = random_values(rng, 16);
            check("elementwise", [&](Tape<double>& t) { return project(t, elementwise(t, x, kind), r); }, {{"x", x}});
        }
        {
            auto x = random_tensor(rng, {2, 4, 3, 3});
            auto g = random_tensor(rng, {4});
            auto o = random_tensor(rng, {4});
            const auto r = random_values(rng, 2 * 4 * 9);
            check("channel_norm", [&](Tape<double>& t) { return project(t, channel_norm(t, x, g, o), r); },
                  {{"x", x}, {"gain", g}, {"offset", o}});
        }
        {
            auto a = random_tensor(rng, {2, 2, 3, 3});
            auto b = random_tensor(rng, {2, 3, 3, 3});
            const auto r = random_values(rng, 2 * 5 * 9);
            check("concat", [&](Tape<double>& t) { return project(t, concat(t, {a, b}, 1), r); }, {{"a", a}, {"b", b}});
        }
        {
            auto x = random_tensor(rng, {2, 3, 2, 2});
            const auto r = random_values(rng, 24);
            check("softmax", [&](Tape<double>& t) { return project(t, softmax(t, x, 1), r); }, {{"x", x}});
        }
        {
            auto a = random_tensor(rng, {2, 3});
            auto b = random_tensor(rng, {2, 3});
            const auto r = random_values(rng, 6);
            check("add+scale",
                  [&](Tape<double>& t) { return project(t, scale(t, add(t, a, b), -1.7), r); },
                  {{"a", a}, {"b", b}});
        }
        {
            auto logits = random_tensor(rng, {2, 2, 3, 3});
            std::vector<mask::BitMask> targets{test_support::random_mask(rng, 3, 3, 0.4),
                                               test_support::random_mask(rng, 3, 3, 0.4)};
            check("weighted_cross_entropy",
                  [&](Tape<double>& t) { return weighted_cross_entropy(t, logits, targets, {1.0, 10.0}); },
                  {{"logits", logits}});
        }
    }
}

TEST_CASE("backward is deterministic") {
    auto run = [] {
        Rng rng(12);
        auto x = random_tensor(rng, {1, 2, 6, 6});
        auto w = random_tensor(rng, {3, 2, 3, 3});
        Tape<double> tape;
        auto l = sum(tape, gelu(tape, conv2d(tape, x, w, Tensor<double>{}, {1, 1, 1})));
        tape.backward(l);
        return std::vector<double>(w.grad().begin(), w.grad().end());
    };
    CHECK(run() == run());
}

TEST_CASE("item and shape errors") {
    CHECK(Tensor<double>::from({}, {2.5}).item() == 2.5);
    CHECK_THROWS_AS(Tensor<double>::zeros({2}).item(), Error);
    CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1.0}), Error);
}

}
