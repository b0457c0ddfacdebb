#pragma once

#include "contrail/falsecolor.hpp"
#include "contrail/mask.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace contrail::dataset {

struct RecordBundle {
    std::string record_id;
    falsecolor::BandCube cube;
    // Label of the labeled frame.
    mask::BitMask truth;
    // Optional per-frame labels (synthetic data carries them; real records do not).
    std::vector<mask::BitMask> frame_masks;
    // Optional ground-truth object tracks, when the producer knows them.
    std::vector<mask::ComponentTrack> tracks;

    int labeled_frame() const { return labeled_frame_of(cube.frames()); }
    static int labeled_frame_of(int frames) { return frames >= 2 ? frames - 2 : 0; }
};

// On disk, one directory per record:
//   band_NN.npy           (H, W, T) float32 brightness temperatures, NN = 08..16
//   human_pixel_masks.npy (H, W, 1) uint8 label of the labeled frame
//   frame_masks.npy       (T, H, W) uint8 per-frame labels, optional
void save_record(const std::filesystem::path& root, const RecordBundle& record);

// Band files are read in strict-finite mode. Records without a label file
// get an empty truth mask unless `require_truth` is set (MissingTruth).
RecordBundle load_record(const std::filesystem::path& record_dir, bool require_truth = false);

falsecolor::BandCube load_cube(const std::filesystem::path& record_dir);
mask::BitMask load_truth(const std::filesystem::path& record_dir);

// Sorted ids of the sub-directories of `root` that hold at least one band file.
std::vector<std::string> list_record_ids(const std::filesystem::path& root);

} // namespace contrail::dataset
