#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace contrail {

enum class Errc {
    BadMagic,
    UnsupportedVersion,
    UnsupportedDtype,
    TruncatedPayload,
    NonFinite,
    MissingBand,
    NonPositiveSpread,
    OutOfPhysicalRange,
    CropTooLarge,
    MalformedRle,
    OutOfBounds,
    OverlappingRuns,
    EmptyComponent,
    ShapeMismatch,
    NotScalar,
    BadConfig,
    EmptyDataset,
    TooFewRecords,
    BadSpec,
    EmptyModelList,
    DuplicateId,
    MissingTruth,
    Io,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace contrail
