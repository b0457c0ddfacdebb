#include "contrail/npy.hpp"

#include "contrail/error.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

static_assert(std::endian::native == std::endian::little,
              "NPY payloads are read and written in host order");

namespace contrail::npy {

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kPreambleLen = kMagicLen + 2 + 2;
constexpr std::size_t kAlign = 64;
// numpy reserves room so the leading extent can grow in place up to this many digits.
constexpr std::size_t kGrowthDigits = 21;

std::string shape_repr(const Shape& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) out += ", ";
        out += std::to_string(shape[i]);
    }
    if (shape.size() == 1) out += ",";
    out += ")";
    return out;
}

Dtype parse_descr(std::string_view d) {
    if (d.size() < 2) throw Error(Errc::UnsupportedDtype, "descr '" + std::string(d) + "'");
    const char order = d[0];
    const std::string_view code = d.substr(1);
    if (order == '>') throw Error(Errc::UnsupportedDtype, "big-endian descr '" + std::string(d) + "'");
    if (order != '<' && order != '|' && order != '=')
        throw Error(Errc::UnsupportedDtype, "descr '" + std::string(d) + "'");
    if (code == "f4") return Dtype::F32;
    if (code == "f8") return Dtype::F64;
    if (code == "i8") return Dtype::I64;
    if (code == "u1") return Dtype::U8;
    if (code == "b1") return Dtype::Bool;
    throw Error(Errc::UnsupportedDtype, "descr '" + std::string(d) + "'");
}

// Returns the text following `'key':`, with leading blanks removed.
std::string_view value_after_key(std::string_view dict, std::string_view key) {
    const std::string quoted = "'" + std::string(key) + "'";
    auto pos = dict.find(quoted);
    if (pos == std::string_view::npos) throw Error(Errc::BadMagic, "header lacks key " + quoted);
    pos = dict.find(':', pos + quoted.size());
    if (pos == std::string_view::npos) throw Error(Errc::BadMagic, "header key without value");
    auto rest = dict.substr(pos + 1);
    while (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
    return rest;
}

ArrayHeader parse_header(std::string_view text) {
    ArrayHeader header;

    auto descr_text = value_after_key(text, "descr");
    if (descr_text.empty() || descr_text.front() != '\'')
        throw Error(Errc::UnsupportedDtype, "descr is not a plain string");
    auto close = descr_text.find('\'', 1);
    if (close == std::string_view::npos) throw Error(Errc::BadMagic, "unterminated descr");
    header.dtype = parse_descr(descr_text.substr(1, close - 1));

    auto fortran_text = value_after_key(text, "fortran_order");
    if (fortran_text.starts_with("True"))
        header.fortran_order = true;
    else if (fortran_text.starts_with("False"))
        header.fortran_order = false;
    else
        throw Error(Errc::BadMagic, "bad fortran_order value");

    auto shape_text = value_after_key(text, "shape");
    if (shape_text.empty() || shape_text.front() != '(') throw Error(Errc::BadMagic, "bad shape value");
    auto end = shape_text.find(')');
    if (end == std::string_view::npos) throw Error(Errc::BadMagic, "unterminated shape");
    auto inner = shape_text.substr(1, end - 1);
    while (!inner.empty()) {
        while (!inner.empty() && (inner.front() == ' ' || inner.front() == ',')) inner.remove_prefix(1);
        if (inner.empty()) break;
        std::size_t extent = 0;
        auto [ptr, ec] = std::from_chars(inner.data(), inner.data() + inner.size(), extent);
        if (ec != std::errc{}) throw Error(Errc::BadMagic, "non-numeric shape extent");
        header.shape.push_back(extent);
        inner.remove_prefix(static_cast<std::size_t>(ptr - inner.data()));
    }
    return header;
}

template <class T>
std::vector<T> copy_elements(std::span<const std::byte> payload, std::size_t n) {
    std::vector<T> out(n);
    if (n > 0) std::memcpy(out.data(), payload.data(), n * sizeof(T));
    return out;
}

// Column-major -> row-major reorder.
template <class T>
std::vector<T> fortran_to_c(const std::vector<T>& in, const Shape& shape) {
    const std::size_t rank = shape.size();
    if (rank < 2) return in;
    std::vector<std::size_t> fstride(rank, 1);
    for (std::size_t k = 1; k < rank; ++k) fstride[k] = fstride[k - 1] * shape[k - 1];
    std::vector<T> out(in.size());
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < in.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t k = 0; k < rank; ++k) src += idx[k] * fstride[k];
        out[flat] = in[src];
        for (std::size_t k = rank; k-- > 0;) {
            if (++idx[k] < shape[k]) break;
            idx[k] = 0;
        }
    }
    return out;
}

template <class T>
void check_finite(const std::vector<T>& values) {
    for (const T v : values)
        if (!std::isfinite(v)) throw Error(Errc::NonFinite, "non-finite element in strict mode");
}

} // namespace

std::string_view descr(Dtype dtype) noexcept {
    switch (dtype) {
    case Dtype::F32: return "<f4";
    case Dtype::F64: return "<f8";
    case Dtype::I64: return "<i8";
    case Dtype::U8: return "|u1";
    case Dtype::Bool: return "|b1";
    }
    return "";
}

std::size_t item_size(Dtype dtype) noexcept {
    switch (dtype) {
    case Dtype::F32: return 4;
    case Dtype::F64: return 8;
    case Dtype::I64: return 8;
    case Dtype::U8:
    case Dtype::Bool: return 1;
    }
    return 0;
}

std::size_t element_count(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

DenseArray::DenseArray(Dtype dtype, Shape shape, Storage data) : data_(std::move(data)) {
    header_.dtype = dtype;
    header_.shape = std::move(shape);
    const std::size_t stored = std::visit([](const auto& v) { return v.size(); }, data_);
    const bool storage_ok = [&] {
        switch (dtype) {
        case Dtype::F32: return std::holds_alternative<std::vector<float>>(data_);
        case Dtype::F64: return std::holds_alternative<std::vector<double>>(data_);
        case Dtype::I64: return std::holds_alternative<std::vector<std::int64_t>>(data_);
        case Dtype::U8:
        case Dtype::Bool: return std::holds_alternative<std::vector<std::uint8_t>>(data_);
        }
        return false;
    }();
    if (!storage_ok) throw Error(Errc::UnsupportedDtype, "storage type does not match dtype");
    if (stored != element_count(header_.shape))
        throw Error(Errc::ShapeMismatch, "element count " + std::to_string(stored) +
                                             " does not match shape " + shape_repr(header_.shape));
    if (dtype == Dtype::Bool) {
        for (auto& b : std::get<std::vector<std::uint8_t>>(data_)) b = b ? 1 : 0;
    }
}

DenseArray DenseArray::f32(Shape shape, std::vector<float> values) {
    return {Dtype::F32, std::move(shape), std::move(values)};
}
DenseArray DenseArray::f64(Shape shape, std::vector<double> values) {
    return {Dtype::F64, std::move(shape), std::move(values)};
}
DenseArray DenseArray::i64(Shape shape, std::vector<std::int64_t> values) {
    return {Dtype::I64, std::move(shape), std::move(values)};
}
DenseArray DenseArray::u8(Shape shape, std::vector<std::uint8_t> values) {
    return {Dtype::U8, std::move(shape), std::move(values)};
}
DenseArray DenseArray::boolean(Shape shape, std::vector<std::uint8_t> values) {
    return {Dtype::Bool, std::move(shape), std::move(values)};
}

std::span<const float> DenseArray::as_f32() const {
    if (dtype() != Dtype::F32) throw Error(Errc::UnsupportedDtype, "array is not f32");
    return std::get<std::vector<float>>(data_);
}
std::span<const double> DenseArray::as_f64() const {
    if (dtype() != Dtype::F64) throw Error(Errc::UnsupportedDtype, "array is not f64");
    return std::get<std::vector<double>>(data_);
}
std::span<const std::int64_t> DenseArray::as_i64() const {
    if (dtype() != Dtype::I64) throw Error(Errc::UnsupportedDtype, "array is not i64");
    return std::get<std::vector<std::int64_t>>(data_);
}
std::span<const std::uint8_t> DenseArray::as_bytes() const {
    if (dtype() != Dtype::U8 && dtype() != Dtype::Bool)
        throw Error(Errc::UnsupportedDtype, "array is not u8/bool");
    return std::get<std::vector<std::uint8_t>>(data_);
}

std::vector<double> DenseArray::to_f64() const {
    return std::visit(
        [](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
}

bool operator==(const DenseArray& a, const DenseArray& b) {
    return a.header_.dtype == b.header_.dtype && a.header_.shape == b.header_.shape &&
           a.data_ == b.data_;
}

DenseArray read_npy(std::span<const std::byte> bytes, ReadOptions options) {
    if (bytes.size() < kPreambleLen ||
        std::memcmp(bytes.data(), kMagic, kMagicLen) != 0)
        throw Error(Errc::BadMagic, "missing \\x93NUMPY magic");
    const auto major = static_cast<unsigned>(bytes[6]);
    const auto minor = static_cast<unsigned>(bytes[7]);
    if (major != 1 || minor != 0)
        throw Error(Errc::UnsupportedVersion,
                    "version " + std::to_string(major) + "." + std::to_string(minor));
    const std::size_t header_len = static_cast<std::size_t>(bytes[8]) |
                                   (static_cast<std::size_t>(bytes[9]) << 8);
    if (bytes.size() < kPreambleLen + header_len)
        throw Error(Errc::TruncatedPayload, "header runs past end of input");
    std::string_view text(reinterpret_cast<const char*>(bytes.data() + kPreambleLen), header_len);
    ArrayHeader header = parse_header(text);

    const std::size_t n = element_count(header.shape);
    const auto payload = bytes.subspan(kPreambleLen + header_len);
    if (payload.size() != n * item_size(header.dtype))
        throw Error(Errc::TruncatedPayload, "payload holds " + std::to_string(payload.size()) +
                                                " bytes, shape " + shape_repr(header.shape) +
                                                " needs " + std::to_string(n * item_size(header.dtype)));

    auto build = [&]<class T>(std::vector<T> values) {
        if (header.fortran_order) values = fortran_to_c(values, header.shape);
        if constexpr (std::is_floating_point_v<T>) {
            if (options.strict_finite) check_finite(values);
        }
        return DenseArray(header.dtype, header.shape, std::move(values));
    };

    switch (header.dtype) {
    case Dtype::F32: return build(copy_elements<float>(payload, n));
    case Dtype::F64: return build(copy_elements<double>(payload, n));
    case Dtype::I64: return build(copy_elements<std::int64_t>(payload, n));
    case Dtype::U8:
    case Dtype::Bool: return build(copy_elements<std::uint8_t>(payload, n));
    }
    throw Error(Errc::UnsupportedDtype, "unreachable dtype");
}

std::vector<std::byte> write_npy(const DenseArray& array) {
    const auto& h = array.header();
    std::string dict = "{'descr': '" + std::string(descr(h.dtype)) +
                       "', 'fortran_order': False, 'shape': " + shape_repr(h.shape) + ", }";
    if (!h.shape.empty()) {
        const std::size_t digits = std::to_string(h.shape.front()).size();
        if (digits < kGrowthDigits) dict.append(kGrowthDigits - digits, ' ');
    }
    const std::size_t unpadded = kPreambleLen + dict.size() + 1;
    const std::size_t pad = (kAlign - unpadded % kAlign) % kAlign;
    dict.append(pad, ' ');
    dict.push_back('\n');
    if (dict.size() > 0xFFFF) throw Error(Errc::UnsupportedVersion, "header too long for v1.0");

    const std::size_t payload = array.size() * item_size(h.dtype);
    std::vector<std::byte> out(kPreambleLen + dict.size() + payload);
    std::memcpy(out.data(), kMagic, kMagicLen);
    out[6] = std::byte{1};
    out[7] = std::byte{0};
    out[8] = static_cast<std::byte>(dict.size() & 0xFF);
    out[9] = static_cast<std::byte>((dict.size() >> 8) & 0xFF);
    std::memcpy(out.data() + kPreambleLen, dict.data(), dict.size());
    std::visit(
        [&](const auto& v) {
            if (!v.empty()) std::memcpy(out.data() + kPreambleLen + dict.size(), v.data(), payload);
        },
        array.data());
    return out;
}

DenseArray load(const std::filesystem::path& path, ReadOptions options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return read_npy(std::as_bytes(std::span(raw)), options);
}

void save(const std::filesystem::path& path, const DenseArray& array) {
    const auto bytes = write_npy(array);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

} // namespace contrail::npy
