#include "contrail/error.hpp"

namespace contrail {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::UnsupportedDtype: return "UnsupportedDtype";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::NonFinite: return "NonFinite";
    case Errc::MissingBand: return "MissingBand";
    case Errc::NonPositiveSpread: return "NonPositiveSpread";
    case Errc::OutOfPhysicalRange: return "OutOfPhysicalRange";
    case Errc::CropTooLarge: return "CropTooLarge";
    case Errc::MalformedRle: return "MalformedRle";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::OverlappingRuns: return "OverlappingRuns";
    case Errc::EmptyComponent: return "EmptyComponent";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NotScalar: return "NotScalar";
    case Errc::BadConfig: return "BadConfig";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::TooFewRecords: return "TooFewRecords";
    case Errc::BadSpec: return "BadSpec";
    case Errc::EmptyModelList: return "EmptyModelList";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::MissingTruth: return "MissingTruth";
    case Errc::Io: return "Io";
    }
    return "Unknown";
}

} // namespace contrail
