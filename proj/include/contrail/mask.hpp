#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace contrail::mask {

struct Pixel {
    int row = 0;
    int col = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

using PixelSet = std::vector<Pixel>;

// Binary mask, row-major, one byte per pixel.
class BitMask {
public:
    BitMask() = default;
    BitMask(int height, int width);
    BitMask(int height, int width, std::vector<std::uint8_t> bits);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool at(int row, int col) const { return bits_[index(row, col)] != 0; }
    void set(int row, int col, bool value = true) { bits_[index(row, col)] = value ? 1 : 0; }
    bool operator[](std::size_t flat) const { return bits_[flat] != 0; }
    void set_flat(std::size_t flat, bool value = true) { bits_[flat] = value ? 1 : 0; }

    std::size_t count() const noexcept;
    bool empty_mask() const noexcept { return count() == 0; }
    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

    friend bool operator==(const BitMask&, const BitMask&) = default;

private:
    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(col);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> bits_;
};

BitMask from_pixels(int height, int width, const PixelSet& pixels);

// One (start, length) pair of a run-length code; `start` is 1-based.
struct Run {
    std::size_t start = 0;
    std::size_t length = 0;
    friend bool operator==(const Run&, const Run&) = default;
};

// Maximal runs of set pixels over the 1-based row-major flattening, rendered
// as space-separated "start length" pairs. An empty mask encodes to "".
std::string rle_encode(const BitMask& mask);
std::vector<Run> rle_runs(const BitMask& mask);

std::vector<Run> rle_parse(std::string_view text);
BitMask rle_decode(std::string_view text, int height, int width);

// 8-connected components, ordered by their smallest flattened index; pixels
// inside a component are listed in row-major order.
std::vector<PixelSet> connected_components(const BitMask& mask);

inline constexpr double kElongationCap = 1e6;

// sqrt(lambda_max / lambda_min) of the second central moments of the pixel
// centres, each pixel also carrying the 1/12 self-moment of a unit square.
double elongation(const PixelSet& pixels);

struct TrackFrame {
    int frame = 0;
    PixelSet pixels;
};

struct ComponentTrack {
    int height = 0;
    int width = 0;
    std::vector<TrackFrame> frames;
};

struct RuleOptions {
    int min_pixels = 10;
    double min_elongation = 3.0;
    int min_frames = 2;
    // Require min_pixels on every frame instead of on at least one.
    bool min_pixels_every_frame = false;
};

struct RuleReport {
    bool min_pixels_ok = false;
    bool elongation_ok = false;
    bool entry_ok = false;
    bool persistence_ok = false;
    double elongation_max = 0.0;
    std::size_t pixel_count_max = 0;

    bool valid() const noexcept {
        return min_pixels_ok && elongation_ok && entry_ok && persistence_ok;
    }
};

bool touches_border(const PixelSet& pixels, int height, int width);

// `prior_frame_mask` is the full label mask of the frame before the track's
// first frame, when that frame exists.
RuleReport validate_track(const ComponentTrack& track, const std::optional<BitMask>& prior_frame_mask,
                          const RuleOptions& options = {});

// Links per-frame components into tracks: a component continues the track of
// any previous-frame component it touches (8-neighbourhood). Used when only
// per-frame label masks are available.
std::vector<ComponentTrack> link_tracks(const std::vector<BitMask>& frames);

} // namespace contrail::mask
