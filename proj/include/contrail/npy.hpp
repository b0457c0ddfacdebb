#pragma once

// Reader/writer for the NPY v1.0 array format.
//
// Only little-endian element encodings are handled. Fortran-ordered files are
// transposed into row-major order on load; the writer always emits row-major
// data with a header laid out the way numpy writes it, so files produced here
// are byte-identical to numpy.save() output for the same array.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace contrail::npy {

enum class Dtype { F32, F64, I64, U8, Bool };

std::string_view descr(Dtype dtype) noexcept;
std::size_t item_size(Dtype dtype) noexcept;

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape) noexcept;

struct ArrayHeader {
    Dtype dtype = Dtype::F64;
    bool fortran_order = false;
    Shape shape;
};

class DenseArray {
public:
    // Bool and U8 share byte storage; bool elements are 0 or 1.
    using Storage = std::variant<std::vector<float>, std::vector<double>,
                                 std::vector<std::int64_t>, std::vector<std::uint8_t>>;

    DenseArray() = default;
    DenseArray(Dtype dtype, Shape shape, Storage data);

    static DenseArray f32(Shape shape, std::vector<float> values);
    static DenseArray f64(Shape shape, std::vector<double> values);
    static DenseArray i64(Shape shape, std::vector<std::int64_t> values);
    static DenseArray u8(Shape shape, std::vector<std::uint8_t> values);
    static DenseArray boolean(Shape shape, std::vector<std::uint8_t> values);

    const ArrayHeader& header() const noexcept { return header_; }
    Dtype dtype() const noexcept { return header_.dtype; }
    const Shape& shape() const noexcept { return header_.shape; }
    std::size_t size() const noexcept { return element_count(header_.shape); }
    const Storage& data() const noexcept { return data_; }

    // Typed views; a dtype mismatch throws Error(UnsupportedDtype).
    std::span<const float> as_f32() const;
    std::span<const double> as_f64() const;
    std::span<const std::int64_t> as_i64() const;
    std::span<const std::uint8_t> as_bytes() const;

    // Any dtype widened to double.
    std::vector<double> to_f64() const;

    friend bool operator==(const DenseArray& a, const DenseArray& b);

private:
    ArrayHeader header_;
    Storage data_{std::vector<double>{}};
};

struct ReadOptions {
    // Reject NaN/Inf in floating arrays.
    bool strict_finite = false;
};

DenseArray read_npy(std::span<const std::byte> bytes, ReadOptions options = {});
std::vector<std::byte> write_npy(const DenseArray& array);

DenseArray load(const std::filesystem::path& path, ReadOptions options = {});
void save(const std::filesystem::path& path, const DenseArray& array);

} // namespace contrail::npy
