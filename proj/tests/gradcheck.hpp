#pragma once

// Central finite-difference gradient checks in double precision.

#include "contrail/autodiff.hpp"
#include "contrail/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gradcheck {

using contrail::ad::Tape;
using contrail::ad::Tensor;

struct Result {
    double max_rel = 0.0;
    std::size_t checked = 0;
    // Coordinates whose difference stencil straddles a relu kink or a pooling
    // tie; excluded from max_rel.
    std::size_t kinks = 0;
    std::string worst;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// gradient is zero (dead relu units, masked pixels) from dividing by noise.
inline double rel_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline std::vector<double> random_values(contrail::Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

inline Tensor<double> random_tensor(contrail::Rng& rng, contrail::ad::Shape shape, double scale = 1.0) {
    const auto n = contrail::ad::numel(shape);
    return Tensor<double>::from(std::move(shape), random_values(rng, n, scale), true);
}

// Scalar sum_i r_i * y_i, recorded on the tape. Turns any tensor-valued op
// into a scalar loss whose gradient w.r.t. y is r.
inline Tensor<double> project(Tape<double>& tape, const Tensor<double>& y, const std::vector<double>& r) {
    double s = 0.0;
    const auto v = y.values();
    for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * r[i];
    auto out = Tensor<double>::from({}, {s}, tape.recording() && y.requires_grad());
    if (out.requires_grad()) {
        tape.record([yi = y.handle(), yo = out.handle(), r] {
            if (yo->grad.empty()) return;
            auto& d = yi->ensure_grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += r[i] * yo->grad[0];
        });
    }
    return out;
}

using LossFn = std::function<Tensor<double>(Tape<double>&)>;

// For a smooth loss the one-sided slopes differ by h * f'' + O(h^3), so the
// gap at step eps is twice the gap at eps / 2. A non-differentiable point
// inside the stencil breaks that scaling.
inline bool stencil_has_kink(const LossFn& loss, std::span<double> vals, std::size_t i, double eps) {
    const double saved = vals[i];
    Tape<double> off(Tape<double>::Mode::Inference);
    auto at = [&](double delta) {
        vals[i] = saved + delta;
        const double l = loss(off).item();
        vals[i] = saved;
        return l;
    };
    const double l0 = at(0.0);
    const double gap_full = (at(eps) - l0) / eps - (l0 - at(-eps)) / eps;
    const double gap_half = (at(eps / 2) - l0) / (eps / 2) - (l0 - at(-eps / 2)) / (eps / 2);
    return std::abs(gap_full - 2.0 * gap_half) > 0.1 * std::abs(gap_full) + 1e-7;
}

// Compares the taped gradient of `loss` with central differences for every
// coordinate of each named tensor, or for `max_coords` sampled coordinates
// of tensors larger than that (0 = all). Coordinates above `tol` are
// re-examined for a kink inside the stencil before counting as failures.
inline Result check(const LossFn& loss, std::vector<std::pair<std::string, Tensor<double>>> params,
                    contrail::Rng& rng, double eps = 1e-4, double floor = 1e-6, std::size_t max_coords = 0,
                    double tol = 1e-4) {
    for (auto& [name, p] : params) p.zero_grad();
    {
        Tape<double> tape;
        auto l = loss(tape);
        tape.backward(l);
    }
    Result res;
    for (auto& [name, p] : params) {
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        auto vals = p.values();
        std::vector<std::size_t> coords(vals.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (max_coords != 0 && coords.size() > max_coords) {
            rng.shuffle(coords);
            coords.resize(max_coords);
        }
        for (const auto i : coords) {
            const double saved = vals[i];
            Tape<double> off(Tape<double>::Mode::Inference);
            vals[i] = saved + eps;
            const double up = loss(off).item();
            vals[i] = saved - eps;
            const double down = loss(off).item();
            vals[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double e = rel_error(analytic[i], numeric, floor);
            ++res.checked;
            if (e > tol && stencil_has_kink(loss, vals, i, eps)) {
                ++res.kinks;
                continue;
            }
            if (e > res.max_rel) {
                res.max_rel = e;
                res.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) +
                            " numeric " + std::to_string(numeric);
            }
        }
    }
    return res;
}

} // namespace gradcheck
