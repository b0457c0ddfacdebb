#include "support.hpp"

#include "contrail/error.hpp"
#include "contrail/npy.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

using namespace contrail;
using namespace contrail::npy;
using test_support::fixture;
using test_support::read_bytes;

namespace {

DenseArray load_fixture(const std::string& name) { return read_npy(read_bytes(fixture("npy/" + name))); }

void check_writer_matches(const std::string& name, const DenseArray& expected) {
    const auto golden = read_bytes(fixture("npy/" + name));
    CHECK(write_npy(expected) == golden);
}

std::vector<std::byte> as_bytes(const std::string& s) {
    std::vector<std::byte> out;
    for (char c : s) out.push_back(static_cast<std::byte>(c));
    return out;
}

} // namespace

TEST_SUITE("npy") {

TEST_CASE("golden f32 2x2") {
    const auto a = load_fixture("f32_2x2.npy");
    CHECK(a.dtype() == Dtype::F32);
    CHECK(a.shape() == Shape{2, 2});
    const auto v = a.as_f32();
    CHECK(std::vector<float>(v.begin(), v.end()) == std::vector<float>{1, 2, 3, 4});
    check_writer_matches("f32_2x2.npy", DenseArray::f32({2, 2}, {1, 2, 3, 4}));
}

TEST_CASE("golden scalar") {
    const auto a = load_fixture("f64_scalar.npy");
    CHECK(a.shape().empty());
    REQUIRE(a.size() == 1);
    CHECK(a.as_f64()[0] == 5.0);
    check_writer_matches("f64_scalar.npy", DenseArray::f64({}, {5.0}));
}

TEST_CASE("golden empty vector") {
    const auto a = load_fixture("f64_empty.npy");
    CHECK(a.shape() == Shape{0});
    CHECK(a.size() == 0);
    check_writer_matches("f64_empty.npy", DenseArray::f64({0}, {}));
}

TEST_CASE("fortran order is transposed to row-major") {
    const auto a = load_fixture("f64_fortran_2x3.npy");
    CHECK(a.shape() == Shape{2, 3});
    CHECK_FALSE(a.header().fortran_order);
    const auto v = a.as_f64();
    CHECK(std::vector<double>(v.begin(), v.end()) == std::vector<double>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("golden integer and bool files") {
    const auto u8 = load_fixture("u8_2x3.npy");
    CHECK(u8 == DenseArray::u8({2, 3}, {0, 1, 2, 253, 254, 255}));
    check_writer_matches("u8_2x3.npy", u8);

    const auto b = load_fixture("bool_3.npy");
    CHECK(b == DenseArray::boolean({3}, {1, 0, 1}));
    check_writer_matches("bool_3.npy", b);

    const auto i = load_fixture("i64_2.npy");
    CHECK(i == DenseArray::i64({2}, {-1, std::int64_t{1} << 40}));
    check_writer_matches("i64_2.npy", i);
}

TEST_CASE("golden rank 3") {
    std::vector<double> expect(24);
    for (int k = 0; k < 24; ++k) expect[k] = k / 8.0;
    const auto ref = DenseArray::f64({2, 3, 4}, expect);
    CHECK(load_fixture("f64_2x3x4.npy") == ref);
    check_writer_matches("f64_2x3x4.npy", ref);
}

TEST_CASE("header is padded to a multiple of 64 bytes") {
    for (std::size_t n : {0u, 1u, 7u, 100u, 123456u}) {
        const auto bytes = write_npy(DenseArray::f64({n}, std::vector<double>(n, 1.0)));
        const std::size_t header_len = static_cast<std::size_t>(bytes[8]) | (static_cast<std::size_t>(bytes[9]) << 8);
        CHECK((10 + header_len) % 64 == 0);
        CHECK(bytes[10 + header_len - 1] == std::byte{'\n'});
    }
}

TEST_CASE("roundtrip of random arrays") {
    Rng rng(20240601);
    for (int trial = 0; trial < 1000; ++trial) {
        const int rank = rng.range(0, 4);
        Shape shape;
        for (int d = 0; d < rank; ++d) shape.push_back(rng.below(17));
        const std::size_t n = element_count(shape);
        DenseArray a;
        switch (rng.range(0, 4)) {
        case 0: {
            std::vector<float> v(n);
            for (auto& x : v) x = static_cast<float>(rng.normal() * 100.0);
            a = DenseArray::f32(shape, v);
            break;
        }
        case 1: {
            std::vector<double> v(n);
            for (auto& x : v) x = rng.normal() * 1e6;
            a = DenseArray::f64(shape, v);
            break;
        }
        case 2: {
            std::vector<std::int64_t> v(n);
            for (auto& x : v) x = static_cast<std::int64_t>(rng.next());
            a = DenseArray::i64(shape, v);
            break;
        }
        case 3: {
            std::vector<std::uint8_t> v(n);
            for (auto& x : v) x = static_cast<std::uint8_t>(rng.below(256));
            a = DenseArray::u8(shape, v);
            break;
        }
        default: {
            std::vector<std::uint8_t> v(n);
            for (auto& x : v) x = static_cast<std::uint8_t>(rng.below(2));
            a = DenseArray::boolean(shape, v);
            break;
        }
        }
        const auto back = read_npy(write_npy(a));
        REQUIRE(back == a);
    }
}

TEST_CASE("corrupted magic") {
    auto bytes = read_bytes(fixture("npy/f32_2x2.npy"));
    bytes[1] = std::byte{'X'};
    try {
        read_npy(bytes);
        FAIL("expected BadMagic");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::BadMagic);
    }
}

TEST_CASE("truncated payload") {
    auto bytes = read_bytes(fixture("npy/f32_2x2.npy"));
    bytes.pop_back();
    try {
        read_npy(bytes);
        FAIL("expected TruncatedPayload");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::TruncatedPayload);
    }
}

TEST_CASE("unsupported dtype and version") {
    auto bytes = write_npy(DenseArray::f32({2}, {1, 2}));
    const auto needle = as_bytes("<f4");
    auto descr_at = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
    REQUIRE(descr_at != bytes.end());
    *(descr_at + 1) = std::byte{'c'};
    try {
        read_npy(bytes);
        FAIL("expected UnsupportedDtype");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UnsupportedDtype);
    }

    auto v2 = write_npy(DenseArray::f32({2}, {1, 2}));
    v2[6] = std::byte{2};
    try {
        read_npy(v2);
        FAIL("expected UnsupportedVersion");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UnsupportedVersion);
    }
}

TEST_CASE("strict mode rejects non-finite values") {
    const auto bytes = write_npy(DenseArray::f32({3}, {1.0f, std::numeric_limits<float>::quiet_NaN(), 2.0f}));
    CHECK_NOTHROW(read_npy(bytes));
    try {
        read_npy(bytes, {.strict_finite = true});
        FAIL("expected NonFinite");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::NonFinite);
    }
}

TEST_CASE("element count mismatch on construction") {
    CHECK_THROWS_AS(DenseArray::f64({2, 2}, {1.0, 2.0}), Error);
}

}
