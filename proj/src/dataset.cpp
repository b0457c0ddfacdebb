#include "contrail/dataset.hpp"

#include "contrail/error.hpp"
#include "contrail/npy.hpp"

#include <algorithm>
#include <cstdio>

namespace contrail::dataset {

namespace fs = std::filesystem;

namespace {

std::string band_file(int channel) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "band_%02d.npy", channel);
    return buf;
}

constexpr const char* kTruthFile = "human_pixel_masks.npy";
constexpr const char* kFrameMasksFile = "frame_masks.npy";

} // namespace

void save_record(const fs::path& root, const RecordBundle& record) {
    const fs::path dir = root / record.record_id;
    fs::create_directories(dir);
    const auto& cube = record.cube;
    const auto h = static_cast<std::size_t>(cube.height());
    const auto w = static_cast<std::size_t>(cube.width());
    const auto t = static_cast<std::size_t>(cube.frames());
    for (auto band : cube.bands()) {
        std::vector<float> hwt(h * w * t);
        for (std::size_t f = 0; f < t; ++f) {
            const auto plane = cube.plane(static_cast<int>(f), band);
            for (std::size_t i = 0; i < h * w; ++i) hwt[i * t + f] = plane[i];
        }
        npy::save(dir / band_file(band.channel()), npy::DenseArray::f32({h, w, t}, std::move(hwt)));
    }
    npy::save(dir / kTruthFile, npy::DenseArray::u8({h, w, 1}, record.truth.bits()));
    if (!record.frame_masks.empty()) {
        std::vector<std::uint8_t> bits;
        for (const auto& m : record.frame_masks) bits.insert(bits.end(), m.bits().begin(), m.bits().end());
        npy::save(dir / kFrameMasksFile, npy::DenseArray::u8({record.frame_masks.size(), h, w}, std::move(bits)));
    }
}

falsecolor::BandCube load_cube(const fs::path& record_dir) {
    std::vector<falsecolor::BandId> bands;
    std::vector<std::vector<double>> raw;
    std::size_t h = 0, w = 0, t = 0;
    for (int ch = 8; ch <= 16; ++ch) {
        const fs::path file = record_dir / band_file(ch);
        if (!fs::exists(file)) continue;
        const auto arr = npy::load(file, {.strict_finite = true});
        if (arr.dtype() != npy::Dtype::F32 && arr.dtype() != npy::Dtype::F64)
            throw Error(Errc::UnsupportedDtype, file.string() + ": band data must be f32 or f64");
        if (arr.shape().size() != 3)
            throw Error(Errc::ShapeMismatch, file.string() + ": band data must be (H, W, T)");
        if (bands.empty()) {
            h = arr.shape()[0];
            w = arr.shape()[1];
            t = arr.shape()[2];
        } else if (arr.shape() != npy::Shape{h, w, t}) {
            throw Error(Errc::ShapeMismatch, file.string() + ": band shapes disagree");
        }
        bands.emplace_back(ch);
        raw.push_back(arr.to_f64());
    }
    if (bands.empty()) throw Error(Errc::MissingBand, "no band_NN.npy files in " + record_dir.string());
    std::vector<float> values(t * bands.size() * h * w);
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t b = 0; b < bands.size(); ++b)
            for (std::size_t i = 0; i < h * w; ++i)
                values[(f * bands.size() + b) * h * w + i] = static_cast<float>(raw[b][i * t + f]);
    return falsecolor::BandCube(static_cast<int>(t), std::move(bands), static_cast<int>(h), static_cast<int>(w),
                                std::move(values));
}

mask::BitMask load_truth(const fs::path& record_dir) {
    const fs::path file = record_dir / kTruthFile;
    if (!fs::exists(file)) throw Error(Errc::MissingTruth, "no " + std::string(kTruthFile) + " in " + record_dir.string());
    const auto arr = npy::load(file);
    const auto& shape = arr.shape();
    if (shape.size() < 2 || (shape.size() == 3 && shape[2] != 1) || shape.size() > 3)
        throw Error(Errc::ShapeMismatch, file.string() + ": label must be (H, W) or (H, W, 1)");
    const auto values = arr.to_f64();
    std::vector<std::uint8_t> bits(values.size());
    std::transform(values.begin(), values.end(), bits.begin(), [](double v) { return v != 0.0 ? 1 : 0; });
    return mask::BitMask(static_cast<int>(shape[0]), static_cast<int>(shape[1]), std::move(bits));
}

RecordBundle load_record(const fs::path& record_dir, bool require_truth) {
    RecordBundle r;
    r.record_id = record_dir.filename().string();
    r.cube = load_cube(record_dir);
    if (fs::exists(record_dir / kTruthFile)) {
        r.truth = load_truth(record_dir);
        if (r.truth.height() != r.cube.height() || r.truth.width() != r.cube.width())
            throw Error(Errc::ShapeMismatch, r.record_id + ": label and bands differ in size");
    } else if (require_truth) {
        throw Error(Errc::MissingTruth, "record " + r.record_id + " has no label");
    } else {
        r.truth = mask::BitMask(r.cube.height(), r.cube.width());
    }
    const fs::path frames_file = record_dir / kFrameMasksFile;
    if (fs::exists(frames_file)) {
        const auto arr = npy::load(frames_file);
        const auto& s = arr.shape();
        if (s.size() != 3 || s[1] != static_cast<std::size_t>(r.cube.height()) ||
            s[2] != static_cast<std::size_t>(r.cube.width()))
            throw Error(Errc::ShapeMismatch, frames_file.string() + ": expected (T, H, W)");
        const auto bytes = arr.as_bytes();
        const std::size_t hw = s[1] * s[2];
        for (std::size_t f = 0; f < s[0]; ++f)
            r.frame_masks.emplace_back(static_cast<int>(s[1]), static_cast<int>(s[2]),
                                       std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(f * hw),
                                                                 bytes.begin() + static_cast<std::ptrdiff_t>((f + 1) * hw)));
    }
    return r;
}

std::vector<std::string> list_record_ids(const fs::path& root) {
    if (!fs::is_directory(root)) throw Error(Errc::Io, root.string() + " is not a directory");
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        for (int ch = 8; ch <= 16; ++ch) {
            if (fs::exists(entry.path() / band_file(ch))) {
                ids.push_back(entry.path().filename().string());
                break;
            }
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

} // namespace contrail::dataset
