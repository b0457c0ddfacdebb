#pragma once

#include "contrail/autodiff.hpp"
#include "contrail/mask.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

namespace contrail::falsecolor {

// GOES-16 ABI infrared channel, 8..16.
class BandId {
public:
    constexpr explicit BandId(int abi_channel) : channel_(abi_channel) {}
    static BandId checked(int abi_channel);

    constexpr int channel() const noexcept { return channel_; }
    // Central wavelength in micrometres.
    double wavelength_um() const;

    friend constexpr bool operator==(BandId, BandId) = default;

private:
    int channel_;
};

inline constexpr BandId kBand8_4um{11};
inline constexpr BandId kBand10_3um{13};
inline constexpr BandId kBand11_2um{14};
inline constexpr BandId kBand12_3um{15};

inline constexpr double kMinPlausibleKelvin = 150.0;
inline constexpr double kMaxPlausibleKelvin = 350.0;

// Brightness temperatures in Kelvin, laid out [frame][band][row][col].
class BandCube {
public:
    BandCube() = default;
    // Throws NonFinite / OutOfPhysicalRange unless every value lies in [150, 350] K.
    BandCube(int frames, std::vector<BandId> bands, int height, int width, std::vector<float> values);

    int frames() const noexcept { return frames_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    const std::vector<BandId>& bands() const noexcept { return bands_; }

    bool has_band(BandId band) const noexcept;
    // Row-major H*W plane; throws MissingBand.
    std::span<const float> plane(int frame, BandId band) const;
    const std::vector<float>& values() const noexcept { return values_; }

private:
    std::size_t band_index(BandId band) const;

    int frames_ = 0;
    std::vector<BandId> bands_;
    int height_ = 0;
    int width_ = 0;
    std::vector<float> values_;
};

struct CalibrationWindow {
    double lo = 0.0;
    double hi = 1.0;
    double gamma = 1.0;
};

inline constexpr CalibrationWindow kRedWindow{-4.0, 2.0, 1.0};   // BT(12.3) - BT(11.2)
inline constexpr CalibrationWindow kGreenWindow{-4.0, 5.0, 1.0}; // BT(11.2) - BT(8.4)
inline constexpr CalibrationWindow kBlueWindow{243.0, 303.0, 1.0}; // BT(11.2)

// clamp((x - lo) / (hi - lo), 0, 1) ^ (1 / gamma)
double normalize_range(double x, const CalibrationWindow& window);

struct AshImage {
    int height = 0;
    int width = 0;
    std::vector<std::array<float, 3>> rgb; // row-major, components in [0, 1]
};

AshImage ash_rgb(const BandCube& cube, int frame);

// Rec. 601 luma of one ash-RGB pixel.
double luminance(const std::array<float, 3>& rgb);

// One model input channel: a band, or the difference a - b of two bands.
struct InputChannel {
    BandId band;
    std::optional<BandId> minus;

    static InputChannel of(BandId b) { return {b, std::nullopt}; }
    static InputChannel difference(BandId a, BandId b) { return {a, b}; }
};

// BT 8.4, 10.3, 11.2, 12.3 um, then 12.3 - 11.2 and 11.2 - 8.4.
std::vector<InputChannel> default_input_channels();

struct ChannelStats {
    double mean = 0.0;
    double spread = 1.0;
};

enum class SpreadMode { StdDev, Variance };

// Global per-channel mean and spread over the given frame of every cube.
std::vector<ChannelStats> compute_channel_stats(const std::vector<const BandCube*>& cubes, int frame,
                                                const std::vector<InputChannel>& channels,
                                                SpreadMode mode = SpreadMode::StdDev);

// [C,H,W] tensor of (x - mean) / spread per configured channel.
ad::Tensor<float> model_input_stack(const BandCube& cube, int frame, const std::vector<ChannelStats>& stats,
                                    const std::vector<InputChannel>& channels = default_input_channels());

struct CropOffsets {
    int row = 0;
    int col = 0;
};

// Leading offsets floor((in - out) / 2); throws CropTooLarge.
CropOffsets center_crop_offsets(int in_h, int in_w, int out_h, int out_w);

mask::BitMask center_crop(const mask::BitMask& m, int out_h, int out_w);
BandCube center_crop(const BandCube& cube, int out_h, int out_w);
AshImage center_crop(const AshImage& image, int out_h, int out_w);

// 8-bit RGB, value = round(v * 255).
std::vector<std::uint8_t> to_rgb8(const AshImage& image);
void write_png(const std::filesystem::path& path, const AshImage& image);

} // namespace contrail::falsecolor
