#include "contrail/mask.hpp"

#include "contrail/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace contrail::mask {

BitMask::BitMask(int height, int width)
    : BitMask(height, width,
              std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(height, 0)) *
                                        static_cast<std::size_t>(std::max(width, 0)))) {}

BitMask::BitMask(int height, int width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
    if (height <= 0 || width <= 0)
        throw Error(Errc::ShapeMismatch, "mask dimensions must be positive");
    if (bits_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
        throw Error(Errc::ShapeMismatch, "bit count does not match mask dimensions");
    for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BitMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BitMask from_pixels(int height, int width, const PixelSet& pixels) {
    BitMask m(height, width);
    for (const auto& p : pixels) {
        if (p.row < 0 || p.col < 0 || p.row >= height || p.col >= width)
            throw Error(Errc::OutOfBounds, "pixel outside mask");
        m.set(p.row, p.col);
    }
    return m;
}

std::vector<Run> rle_runs(const BitMask& mask) {
    std::vector<Run> runs;
    const std::size_t n = mask.size();
    std::size_t i = 0;
    while (i < n) {
        if (!mask[i]) {
            ++i;
            continue;
        }
        const std::size_t begin = i;
        while (i < n && mask[i]) ++i;
        runs.push_back({begin + 1, i - begin});
    }
    return runs;
}

std::string rle_encode(const BitMask& mask) {
    std::string out;
    for (const auto& run : rle_runs(mask)) {
        if (!out.empty()) out += ' ';
        out += std::to_string(run.start);
        out += ' ';
        out += std::to_string(run.length);
    }
    return out;
}

std::vector<Run> rle_parse(std::string_view text) {
    std::vector<std::size_t> numbers;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == ' ' || text[i] == '\t' || text[i] == '\r' || text[i] == '\n') {
            ++i;
            continue;
        }
        std::size_t value = 0;
        auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + text.size(), value);
        const auto consumed = static_cast<std::size_t>(ptr - (text.data() + i));
        if (ec != std::errc{} || consumed == 0)
            throw Error(Errc::MalformedRle, "non-numeric token in '" + std::string(text) + "'");
        i += consumed;
        if (i < text.size() && text[i] != ' ' && text[i] != '\t' && text[i] != '\r' && text[i] != '\n')
            throw Error(Errc::MalformedRle, "non-numeric token in '" + std::string(text) + "'");
        numbers.push_back(value);
    }
    if (numbers.size() % 2 != 0) throw Error(Errc::MalformedRle, "odd number of tokens");
    std::vector<Run> runs;
    runs.reserve(numbers.size() / 2);
    for (std::size_t k = 0; k < numbers.size(); k += 2) {
        if (numbers[k + 1] == 0) throw Error(Errc::MalformedRle, "zero-length run");
        runs.push_back({numbers[k], numbers[k + 1]});
    }
    return runs;
}

BitMask rle_decode(std::string_view text, int height, int width) {
    BitMask m(height, width);
    const std::size_t total = m.size();
    std::size_t prev_end = 0; // one past the last covered 1-based index
    for (const auto& run : rle_parse(text)) {
        if (run.start < 1 || run.start > total || run.length > total - run.start + 1)
            throw Error(Errc::OutOfBounds, "run " + std::to_string(run.start) + " " +
                                               std::to_string(run.length) + " exceeds " +
                                               std::to_string(total) + " pixels");
        if (run.start < prev_end)
            throw Error(Errc::OverlappingRuns, "run at " + std::to_string(run.start) +
                                                   " overlaps or precedes the previous run");
        for (std::size_t k = run.start - 1; k < run.start - 1 + run.length; ++k) m.set_flat(k);
        prev_end = run.start + run.length;
    }
    return m;
}

std::vector<PixelSet> connected_components(const BitMask& mask) {
    const int h = mask.height();
    const int w = mask.width();
    std::vector<std::uint8_t> seen(mask.size(), 0);
    std::vector<PixelSet> out;
    std::vector<Pixel> stack;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const auto flat = static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(c);
            if (!mask[flat] || seen[flat]) continue;
            PixelSet comp;
            seen[flat] = 1;
            stack.push_back({r, c});
            while (!stack.empty()) {
                const Pixel p = stack.back();
                stack.pop_back();
                comp.push_back(p);
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nr = p.row + dr;
                        const int nc = p.col + dc;
                        if (nr < 0 || nc < 0 || nr >= h || nc >= w) continue;
                        const auto nf = static_cast<std::size_t>(nr) * static_cast<std::size_t>(w) +
                                        static_cast<std::size_t>(nc);
                        if (mask[nf] && !seen[nf]) {
                            seen[nf] = 1;
                            stack.push_back({nr, nc});
                        }
                    }
                }
            }
            std::sort(comp.begin(), comp.end(), [](const Pixel& a, const Pixel& b) {
                return a.row != b.row ? a.row < b.row : a.col < b.col;
            });
            out.push_back(std::move(comp));
        }
    }
    return out;
}

double elongation(const PixelSet& pixels) {
    if (pixels.empty()) throw Error(Errc::EmptyComponent, "elongation of an empty pixel set");
    const double n = static_cast<double>(pixels.size());
    double mr = 0.0, mc = 0.0;
    for (const auto& p : pixels) {
        mr += p.row;
        mc += p.col;
    }
    mr /= n;
    mc /= n;
    double srr = 0.0, scc = 0.0, src = 0.0;
    for (const auto& p : pixels) {
        const double dr = p.row - mr;
        const double dc = p.col - mc;
        srr += dr * dr;
        scc += dc * dc;
        src += dr * dc;
    }
    constexpr double kSelfMoment = 1.0 / 12.0;
    srr = srr / n + kSelfMoment;
    scc = scc / n + kSelfMoment;
    src /= n;
    const double mean = 0.5 * (srr + scc);
    const double half_diff = 0.5 * (srr - scc);
    const double radius = std::sqrt(half_diff * half_diff + src * src);
    const double major = mean + radius;
    const double minor = mean - radius;
    if (minor <= std::numeric_limits<double>::min() * 1e6) return kElongationCap;
    return std::min(std::sqrt(major / minor), kElongationCap);
}

bool touches_border(const PixelSet& pixels, int height, int width) {
    return std::any_of(pixels.begin(), pixels.end(), [&](const Pixel& p) {
        return p.row == 0 || p.col == 0 || p.row == height - 1 || p.col == width - 1;
    });
}

RuleReport validate_track(const ComponentTrack& track, const std::optional<BitMask>& prior_frame_mask,
                          const RuleOptions& options) {
    RuleReport report;
    if (track.frames.empty()) return report;

    const auto min_pixels = static_cast<std::size_t>(options.min_pixels);
    bool every_frame_big = true;
    for (const auto& f : track.frames) {
        report.pixel_count_max = std::max(report.pixel_count_max, f.pixels.size());
        if (f.pixels.size() < min_pixels) every_frame_big = false;
        if (!f.pixels.empty())
            report.elongation_max = std::max(report.elongation_max, elongation(f.pixels));
    }
    report.min_pixels_ok = options.min_pixels_every_frame ? every_frame_big
                                                          : report.pixel_count_max >= min_pixels;
    report.elongation_ok = report.elongation_max >= options.min_elongation;
    report.persistence_ok = static_cast<int>(track.frames.size()) >= options.min_frames;

    const auto& first = track.frames.front().pixels;
    if (touches_border(first, track.height, track.width)) {
        report.entry_ok = true;
    } else if (!prior_frame_mask) {
        report.entry_ok = true;
    } else {
        const auto& prior = *prior_frame_mask;
        report.entry_ok = std::none_of(first.begin(), first.end(), [&](const Pixel& p) {
            return p.row < prior.height() && p.col < prior.width() && prior.at(p.row, p.col);
        });
    }
    return report;
}

std::vector<ComponentTrack> link_tracks(const std::vector<BitMask>& frames) {
    std::vector<ComponentTrack> tracks;
    if (frames.empty()) return tracks;
    const int h = frames.front().height();
    const int w = frames.front().width();
    // Track id per pixel of the previous frame, -1 where unlabeled.
    std::vector<int> prev_owner;
    for (std::size_t t = 0; t < frames.size(); ++t) {
        if (frames[t].height() != h || frames[t].width() != w)
            throw Error(Errc::ShapeMismatch, "frame masks differ in size");
        std::vector<int> owner(frames[t].size(), -1);
        std::vector<char> extended(tracks.size(), 0);
        for (auto& comp : connected_components(frames[t])) {
            int match = -1;
            if (!prev_owner.empty()) {
                for (const auto& p : comp) {
                    for (int dr = -1; dr <= 1 && match < 0; ++dr) {
                        for (int dc = -1; dc <= 1 && match < 0; ++dc) {
                            const int r = p.row + dr, c = p.col + dc;
                            if (r < 0 || c < 0 || r >= h || c >= w) continue;
                            const int id = prev_owner[static_cast<std::size_t>(r * w + c)];
                            if (id >= 0 && !extended[static_cast<std::size_t>(id)]) match = id;
                        }
                    }
                    if (match >= 0) break;
                }
            }
            if (match < 0) {
                match = static_cast<int>(tracks.size());
                tracks.push_back({h, w, {}});
                extended.push_back(0);
            }
            extended[static_cast<std::size_t>(match)] = 1;
            for (const auto& p : comp) owner[static_cast<std::size_t>(p.row * w + p.col)] = match;
            tracks[static_cast<std::size_t>(match)].frames.push_back({static_cast<int>(t), std::move(comp)});
        }
        prev_owner = std::move(owner);
    }
    return tracks;
}

} // namespace contrail::mask
