#include "contrail/synth.hpp"

#include "contrail/error.hpp"
#include "contrail/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace contrail::synth {

namespace {

struct Vec2 {
    double y = 0.0;
    double x = 0.0;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.y + b.y, a.x + b.x}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.y - b.y, a.x - b.x}; }
Vec2 operator*(Vec2 a, double s) { return {a.y * s, a.x * s}; }
double dot(Vec2 a, Vec2 b) { return a.y * b.y + a.x * b.x; }

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    const double t = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
    const Vec2 d = p - (a + ab * t);
    return std::sqrt(dot(d, d));
}

double cross(Vec2 a, Vec2 b) { return a.y * b.x - a.x * b.y; }

double segment_distance(Vec2 a0, Vec2 a1, Vec2 b0, Vec2 b1) {
    const double d1 = cross(a1 - a0, b0 - a0), d2 = cross(a1 - a0, b1 - a0);
    const double d3 = cross(b1 - b0, a0 - b0), d4 = cross(b1 - b0, a1 - b0);
    if (((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0))) return 0.0;
    return std::min({point_segment_distance(a0, b0, b1), point_segment_distance(a1, b0, b1),
                     point_segment_distance(b0, a0, a1), point_segment_distance(b1, a0, a1)});
}

struct Streak {
    int first_frame = 0;
    Vec2 a, b;      // endpoints on the first frame
    Vec2 velocity;  // px per frame, perpendicular to the segment
    double width = 1.0;
    double depression = 2.0;

    double width_at(int frame, double growth) const { return width + growth * (frame - first_frame); }
    Vec2 shift_at(int frame) const { return velocity * static_cast<double>(frame - first_frame); }
    double depression_at(int frame) const { return depression * (1.0 - 0.08 * (frame - first_frame)); }
};

// Smooth field in [0, 1]: bilinear interpolation of a coarse random grid.
std::vector<double> smooth_field(Rng& rng, int h, int w, int grid) {
    std::vector<double> coarse(static_cast<std::size_t>(grid * grid));
    for (auto& v : coarse) v = rng.uniform();
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    for (int r = 0; r < h; ++r) {
        const double gy = (r + 0.5) / h * (grid - 1);
        const int y0 = std::min(static_cast<int>(gy), grid - 2);
        const double fy = gy - y0;
        for (int c = 0; c < w; ++c) {
            const double gx = (c + 0.5) / w * (grid - 1);
            const int x0 = std::min(static_cast<int>(gx), grid - 2);
            const double fx = gx - x0;
            auto at = [&](int yy, int xx) { return coarse[static_cast<std::size_t>(yy * grid + xx)]; };
            const double top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx;
            const double bot = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx;
            out[static_cast<std::size_t>(r) * w + c] = top * (1 - fy) + bot * fy;
        }
    }
    return out;
}

bool inside(Vec2 p, double margin, int h, int w) {
    return p.y >= margin && p.y <= h - margin && p.x >= margin && p.x <= w - margin;
}

std::optional<Streak> propose(const SyntheticSceneSpec& spec, Rng& rng) {
    const int h = spec.height, w = spec.width;
    Streak s;
    s.first_frame = rng.range(0, std::min(1, spec.frames - 2));
    s.width = rng.uniform(spec.min_width, spec.max_width);
    s.depression = rng.uniform(spec.min_depression, spec.max_depression);
    const double length = rng.uniform(spec.min_length, spec.max_length);
    const int last = spec.frames - 1;
    const double final_half_width = 0.5 * s.width + spec.growth * (last - s.first_frame);

    Vec2 dir;
    if (rng.uniform() < 0.5) {
        // Enters from an edge: a quarter of the segment lies outside the image.
        const int edge = rng.range(0, 3);
        const double corner = 8.0;
        Vec2 entry, inward;
        switch (edge) {
        case 0: entry = {0.0, rng.uniform(corner, w - corner)}; inward = {1.0, 0.0}; break;
        case 1: entry = {static_cast<double>(h), rng.uniform(corner, w - corner)}; inward = {-1.0, 0.0}; break;
        case 2: entry = {rng.uniform(corner, h - corner), 0.0}; inward = {0.0, 1.0}; break;
        default: entry = {rng.uniform(corner, h - corner), static_cast<double>(w)}; inward = {0.0, -1.0}; break;
        }
        const double tilt = rng.uniform(-50.0, 50.0) * std::numbers::pi / 180.0;
        dir = {inward.y * std::cos(tilt) - inward.x * std::sin(tilt),
               inward.y * std::sin(tilt) + inward.x * std::cos(tilt)};
        s.a = entry - dir * (0.25 * length);
        s.b = entry + dir * (0.75 * length);
        const Vec2 normal{-dir.x, dir.y};
        s.velocity = normal * rng.uniform(-spec.max_drift, spec.max_drift);
        for (int f = s.first_frame; f <= last; ++f)
            if (!inside(s.b + s.shift_at(f), final_half_width + 2.0, h, w)) return std::nullopt;
    } else {
        // Appears whole in the interior.
        const double theta = rng.uniform(0.0, std::numbers::pi);
        dir = {std::sin(theta), std::cos(theta)};
        const Vec2 centre{rng.uniform(0.0, h), rng.uniform(0.0, w)};
        s.a = centre - dir * (0.5 * length);
        s.b = centre + dir * (0.5 * length);
        const Vec2 normal{-dir.x, dir.y};
        s.velocity = normal * rng.uniform(-spec.max_drift, spec.max_drift);
        for (int f = s.first_frame; f <= last; ++f) {
            const Vec2 shift = s.shift_at(f);
            if (!inside(s.a + shift, final_half_width + 2.0, h, w) || !inside(s.b + shift, final_half_width + 2.0, h, w))
                return std::nullopt;
        }
    }
    return s;
}

// Streaks keep a gap of at least 2.5 px between their edges on the same and
// on adjacent frames, so their pixels never touch or overlap a neighbour's.
bool separated(const Streak& s, const Streak& o, const SyntheticSceneSpec& spec) {
    for (int f = s.first_frame; f < spec.frames; ++f) {
        for (int g = std::max(f - 1, o.first_frame); g <= std::min(f + 1, spec.frames - 1); ++g) {
            const double gap = segment_distance(s.a + s.shift_at(f), s.b + s.shift_at(f), o.a + o.shift_at(g),
                                                o.b + o.shift_at(g));
            if (gap < 0.5 * (s.width_at(f, spec.growth) + o.width_at(g, spec.growth)) + 2.5) return false;
        }
    }
    return true;
}

mask::PixelSet rasterize(const Streak& s, int frame, const SyntheticSceneSpec& spec) {
    const Vec2 a = s.a + s.shift_at(frame);
    const Vec2 b = s.b + s.shift_at(frame);
    const double half = 0.5 * s.width_at(frame, spec.growth);
    mask::PixelSet pixels;
    for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c)
            if (point_segment_distance({r + 0.5, c + 0.5}, a, b) <= half) pixels.push_back({r, c});
    return pixels;
}

} // namespace

void SyntheticSceneSpec::validate() const {
    auto bad = [](const std::string& what) { throw Error(Errc::BadSpec, what); };
    if (frames < 2) bad("frames must be >= 2 (contrails must persist over two frames)");
    if (height < 32 || width < 32) bad("scene must be at least 32x32");
    if (min_contrails < 0 || max_contrails < min_contrails) bad("contrail count range is inverted");
    if (!(min_width >= 1.0) || max_width < min_width) bad("streak width range must satisfy 1 <= min <= max");
    if (max_length < min_length) bad("length range is inverted");
    if (min_length < 24.0 || min_length < 8.0 * max_width)
        bad("min_length must be >= 24 px and >= 8 * max_width so streaks meet the size and elongation rules");
    if (max_length > 0.75 * std::min(height, width)) bad("max_length must fit inside the scene");
    if (!(min_depression > 0.0) || max_depression < min_depression) bad("depression range must be positive");
    if (!(background_lo < background_hi)) bad("background range is inverted");
    if (background_lo - 1.5 * max_depression - 3.0 < 150.0 || background_hi + 1.0 > 350.0)
        bad("background and depression ranges leave the physical [150, 350] K window");
    if (growth < 0.0 || max_drift < 0.0 || max_drift > 1.0 || noise < 0.0)
        bad("growth, noise and drift must be >= 0 and drift <= 1 px/frame");
}

SyntheticSceneSpec SyntheticSceneSpec::from_config(const KeyValueConfig& cfg) {
    SyntheticSceneSpec s;
    s.frames = cfg.get_int("frames", s.frames);
    s.height = cfg.get_int("height", s.height);
    s.width = cfg.get_int("width", s.width);
    s.min_contrails = cfg.get_int("min_contrails", s.min_contrails);
    s.max_contrails = cfg.get_int("max_contrails", s.max_contrails);
    s.min_width = cfg.get_double("min_width", s.min_width);
    s.max_width = cfg.get_double("max_width", s.max_width);
    s.min_length = cfg.get_double("min_length", s.min_length);
    s.max_length = cfg.get_double("max_length", s.max_length);
    s.min_depression = cfg.get_double("min_depression", s.min_depression);
    s.max_depression = cfg.get_double("max_depression", s.max_depression);
    s.background_lo = cfg.get_double("background_lo", s.background_lo);
    s.background_hi = cfg.get_double("background_hi", s.background_hi);
    s.growth = cfg.get_double("growth", s.growth);
    s.max_drift = cfg.get_double("max_drift", s.max_drift);
    s.noise = cfg.get_double("noise", s.noise);
    s.seed = cfg.get_u64("seed", s.seed);
    cfg.require_all_used();
    s.validate();
    return s;
}

dataset::RecordBundle synth_record(const SyntheticSceneSpec& spec, int index) {
    spec.validate();
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
    const int h = spec.height, w = spec.width, frames = spec.frames;
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    const int wanted = rng.range(spec.min_contrails, spec.max_contrails);
    std::vector<Streak> streaks;
    constexpr int kMaxAttempts = 2000;
    for (int attempt = 0; attempt < kMaxAttempts && static_cast<int>(streaks.size()) < wanted; ++attempt) {
        auto s = propose(spec, rng);
        if (!s) continue;
        if (std::all_of(streaks.begin(), streaks.end(), [&](const Streak& o) { return separated(*s, o, spec); }))
            streaks.push_back(*s);
    }
    if (static_cast<int>(streaks.size()) < spec.min_contrails)
        throw Error(Errc::BadSpec, "could not place " + std::to_string(spec.min_contrails) +
                                       " separated contrails; scene too small for the requested count");

    const auto base = smooth_field(rng, h, w, 5);
    const auto s13 = smooth_field(rng, h, w, 4);
    const auto s15 = smooth_field(rng, h, w, 4);
    const auto s11 = smooth_field(rng, h, w, 4);

    dataset::RecordBundle record;
    char id[64];
    std::snprintf(id, sizeof id, "rec_%llu_%06d", static_cast<unsigned long long>(spec.seed), index);
    record.record_id = id;

    std::vector<mask::BitMask> masks(static_cast<std::size_t>(frames), mask::BitMask(h, w));
    // Per-frame depression of the 11.2 um band, 0 off-streak.
    std::vector<std::vector<double>> depression(static_cast<std::size_t>(frames), std::vector<double>(hw, 0.0));
    for (const auto& s : streaks) {
        mask::ComponentTrack track{h, w, {}};
        for (int f = s.first_frame; f < frames; ++f) {
            auto pixels = rasterize(s, f, spec);
            for (const auto& p : pixels) {
                masks[static_cast<std::size_t>(f)].set(p.row, p.col);
                depression[static_cast<std::size_t>(f)][static_cast<std::size_t>(p.row) * w + p.col] = s.depression_at(f);
            }
            track.frames.push_back({f, std::move(pixels)});
        }
        record.tracks.push_back(std::move(track));
    }

    const std::vector<falsecolor::BandId> bands{falsecolor::kBand8_4um, falsecolor::kBand10_3um,
                                                falsecolor::kBand11_2um, falsecolor::kBand12_3um};
    std::vector<float> values(static_cast<std::size_t>(frames) * bands.size() * hw);
    for (int f = 0; f < frames; ++f) {
        const auto& dep = depression[static_cast<std::size_t>(f)];
        for (std::size_t i = 0; i < hw; ++i) {
            const double t14 = spec.background_lo + (spec.background_hi - spec.background_lo) * base[i];
            const double d = dep[i];
            // Thin ice cloud: colder at 11.2 um, colder still at 12.3 um, less so at 8.4 um.
            const double bt[4] = {t14 - 1.5 + 0.8 * (2.0 * s11[i] - 1.0) - 0.5 * d,
                                  t14 + 0.5 + 0.2 * (2.0 * s13[i] - 1.0) - d,
                                  t14 - d,
                                  t14 - 0.8 + 0.5 * (2.0 * s15[i] - 1.0) - 1.5 * d};
            for (std::size_t b = 0; b < bands.size(); ++b) {
                const double noisy = bt[b] + spec.noise * rng.normal();
                values[(static_cast<std::size_t>(f) * bands.size() + b) * hw + i] = static_cast<float>(noisy);
            }
        }
    }
    record.cube = falsecolor::BandCube(frames, bands, h, w, std::move(values));
    record.truth = masks[static_cast<std::size_t>(dataset::RecordBundle::labeled_frame_of(frames))];
    record.frame_masks = std::move(masks);
    return record;
}

std::vector<dataset::RecordBundle> synth_generate(const SyntheticSceneSpec& spec, int n_records) {
    spec.validate();
    if (n_records < 0) throw Error(Errc::BadSpec, "record count must be >= 0");
    std::vector<dataset::RecordBundle> out;
    out.reserve(static_cast<std::size_t>(n_records));
    for (int i = 0; i < n_records; ++i) out.push_back(synth_record(spec, i));
    return out;
}

} // namespace contrail::synth
