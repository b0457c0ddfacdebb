#include "contrail/falsecolor.hpp"

#include "contrail/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace contrail::falsecolor {

BandId BandId::checked(int abi_channel) {
    if (abi_channel < 8 || abi_channel > 16)
        throw Error(Errc::MissingBand, "ABI channel " + std::to_string(abi_channel) + " is not an IR band 8..16");
    return BandId(abi_channel);
}

double BandId::wavelength_um() const {
    static constexpr std::array<double, 9> kCentres{6.2, 6.9, 7.3, 8.4, 9.6, 10.3, 11.2, 12.3, 13.3};
    if (channel_ < 8 || channel_ > 16)
        throw Error(Errc::MissingBand, "ABI channel " + std::to_string(channel_) + " is not an IR band 8..16");
    return kCentres[static_cast<std::size_t>(channel_ - 8)];
}

BandCube::BandCube(int frames, std::vector<BandId> bands, int height, int width, std::vector<float> values)
    : frames_(frames), bands_(std::move(bands)), height_(height), width_(width), values_(std::move(values)) {
    if (frames <= 0 || height <= 0 || width <= 0 || bands_.empty())
        throw Error(Errc::ShapeMismatch, "band cube needs positive frames, bands and dimensions");
    for (auto b : bands_) (void)BandId::checked(b.channel());
    const std::size_t expected = static_cast<std::size_t>(frames) * bands_.size() *
                                 static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    if (values_.size() != expected)
        throw Error(Errc::ShapeMismatch, "band cube holds " + std::to_string(values_.size()) +
                                             " values, expected " + std::to_string(expected));
    for (const float v : values_) {
        if (!std::isfinite(v)) throw Error(Errc::NonFinite, "non-finite brightness temperature");
        if (v < kMinPlausibleKelvin || v > kMaxPlausibleKelvin)
            throw Error(Errc::OutOfPhysicalRange,
                        "brightness temperature " + std::to_string(v) + " K outside [150, 350] K");
    }
}

bool BandCube::has_band(BandId band) const noexcept {
    return std::find(bands_.begin(), bands_.end(), band) != bands_.end();
}

std::size_t BandCube::band_index(BandId band) const {
    auto it = std::find(bands_.begin(), bands_.end(), band);
    if (it == bands_.end())
        throw Error(Errc::MissingBand, "band " + std::to_string(band.channel()) + " not present");
    return static_cast<std::size_t>(it - bands_.begin());
}

std::span<const float> BandCube::plane(int frame, BandId band) const {
    if (frame < 0 || frame >= frames_)
        throw Error(Errc::OutOfBounds, "frame " + std::to_string(frame) + " out of range");
    const std::size_t hw = static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
    const std::size_t offset = (static_cast<std::size_t>(frame) * bands_.size() + band_index(band)) * hw;
    return std::span<const float>(values_).subspan(offset, hw);
}

double normalize_range(double x, const CalibrationWindow& window) {
    const double unit = std::clamp((x - window.lo) / (window.hi - window.lo), 0.0, 1.0);
    return window.gamma == 1.0 ? unit : std::pow(unit, 1.0 / window.gamma);
}

AshImage ash_rgb(const BandCube& cube, int frame) {
    const auto b11 = cube.plane(frame, kBand8_4um);
    const auto b14 = cube.plane(frame, kBand11_2um);
    const auto b15 = cube.plane(frame, kBand12_3um);
    AshImage img{cube.height(), cube.width(), {}};
    img.rgb.resize(b14.size());
    for (std::size_t i = 0; i < b14.size(); ++i) {
        const double t11 = b11[i], t14 = b14[i], t15 = b15[i];
        img.rgb[i] = {static_cast<float>(normalize_range(t15 - t14, kRedWindow)),
                      static_cast<float>(normalize_range(t14 - t11, kGreenWindow)),
                      static_cast<float>(normalize_range(t14, kBlueWindow))};
    }
    return img;
}

double luminance(const std::array<float, 3>& rgb) {
    return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
}

std::vector<InputChannel> default_input_channels() {
    return {InputChannel::of(kBand8_4um),
            InputChannel::of(kBand10_3um),
            InputChannel::of(kBand11_2um),
            InputChannel::of(kBand12_3um),
            InputChannel::difference(kBand12_3um, kBand11_2um),
            InputChannel::difference(kBand11_2um, kBand8_4um)};
}

namespace {
double channel_value(std::span<const float> a, std::span<const float> b, std::size_t i) {
    return b.empty() ? static_cast<double>(a[i]) : static_cast<double>(a[i]) - static_cast<double>(b[i]);
}
} // namespace

std::vector<ChannelStats> compute_channel_stats(const std::vector<const BandCube*>& cubes, int frame,
                                                const std::vector<InputChannel>& channels, SpreadMode mode) {
    if (cubes.empty()) throw Error(Errc::EmptyDataset, "no cubes to compute channel statistics from");
    std::vector<ChannelStats> stats;
    for (const auto& ch : channels) {
        double sum = 0.0;
        double count = 0.0;
        for (const auto* cube : cubes) {
            const auto a = cube->plane(frame, ch.band);
            const auto b = ch.minus ? cube->plane(frame, *ch.minus) : std::span<const float>{};
            for (std::size_t i = 0; i < a.size(); ++i) sum += channel_value(a, b, i);
            count += static_cast<double>(a.size());
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (const auto* cube : cubes) {
            const auto a = cube->plane(frame, ch.band);
            const auto b = ch.minus ? cube->plane(frame, *ch.minus) : std::span<const float>{};
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = channel_value(a, b, i) - mean;
                sq += d * d;
            }
        }
        const double variance = sq / count;
        double spread = mode == SpreadMode::StdDev ? std::sqrt(variance) : variance;
        // A constant channel would otherwise divide by zero.
        if (!(spread > 0.0)) spread = 1.0;
        stats.push_back({mean, spread});
    }
    return stats;
}

ad::Tensor<float> model_input_stack(const BandCube& cube, int frame, const std::vector<ChannelStats>& stats,
                                    const std::vector<InputChannel>& channels) {
    if (stats.size() != channels.size())
        throw Error(Errc::ShapeMismatch, std::to_string(stats.size()) + " stats for " +
                                             std::to_string(channels.size()) + " channels");
    for (const auto& s : stats)
        if (!(s.spread > 0.0)) throw Error(Errc::NonPositiveSpread, "channel spread must be positive");
    const std::size_t hw = static_cast<std::size_t>(cube.height()) * static_cast<std::size_t>(cube.width());
    std::vector<float> out(channels.size() * hw);
    for (std::size_t c = 0; c < channels.size(); ++c) {
        const auto a = cube.plane(frame, channels[c].band);
        const auto b = channels[c].minus ? cube.plane(frame, *channels[c].minus) : std::span<const float>{};
        const double mean = stats[c].mean;
        const double inv = 1.0 / stats[c].spread;
        for (std::size_t i = 0; i < hw; ++i)
            out[c * hw + i] = static_cast<float>((channel_value(a, b, i) - mean) * inv);
    }
    return ad::Tensor<float>::from({static_cast<int>(channels.size()), cube.height(), cube.width()},
                                   std::move(out));
}

CropOffsets center_crop_offsets(int in_h, int in_w, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0 || out_h > in_h || out_w > in_w)
        throw Error(Errc::CropTooLarge, std::to_string(out_h) + "x" + std::to_string(out_w) + " crop of " +
                                            std::to_string(in_h) + "x" + std::to_string(in_w));
    return {(in_h - out_h) / 2, (in_w - out_w) / 2};
}

mask::BitMask center_crop(const mask::BitMask& m, int out_h, int out_w) {
    const auto off = center_crop_offsets(m.height(), m.width(), out_h, out_w);
    mask::BitMask out(out_h, out_w);
    for (int r = 0; r < out_h; ++r)
        for (int c = 0; c < out_w; ++c) out.set(r, c, m.at(r + off.row, c + off.col));
    return out;
}

BandCube center_crop(const BandCube& cube, int out_h, int out_w) {
    const auto off = center_crop_offsets(cube.height(), cube.width(), out_h, out_w);
    std::vector<float> values;
    values.reserve(static_cast<std::size_t>(cube.frames()) * cube.bands().size() * out_h * out_w);
    for (int f = 0; f < cube.frames(); ++f) {
        for (auto band : cube.bands()) {
            const auto plane = cube.plane(f, band);
            for (int r = 0; r < out_h; ++r) {
                const auto* row = plane.data() + static_cast<std::size_t>(r + off.row) * cube.width() + off.col;
                values.insert(values.end(), row, row + out_w);
            }
        }
    }
    return BandCube(cube.frames(), cube.bands(), out_h, out_w, std::move(values));
}

AshImage center_crop(const AshImage& image, int out_h, int out_w) {
    const auto off = center_crop_offsets(image.height, image.width, out_h, out_w);
    AshImage out{out_h, out_w, {}};
    out.rgb.reserve(static_cast<std::size_t>(out_h) * out_w);
    for (int r = 0; r < out_h; ++r)
        for (int c = 0; c < out_w; ++c)
            out.rgb.push_back(image.rgb[static_cast<std::size_t>(r + off.row) * image.width + c + off.col]);
    return out;
}

std::vector<std::uint8_t> to_rgb8(const AshImage& image) {
    std::vector<std::uint8_t> out;
    out.reserve(image.rgb.size() * 3);
    for (const auto& px : image.rgb)
        for (const float v : px)
            out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    return out;
}

} // namespace contrail::falsecolor
