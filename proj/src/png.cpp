#include "contrail/error.hpp"
#include "contrail/falsecolor.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace contrail::falsecolor {

void write_png(const std::filesystem::path& path, const AshImage& image) {
    const auto pixels = to_rgb8(image);
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!file) throw Error(Errc::Io, "cannot write " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error(Errc::Io, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(Errc::Io, "libpng failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
    for (int r = 0; r < image.height; ++r)
        png_write_row(png, pixels.data() + static_cast<std::size_t>(r) * stride);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace contrail::falsecolor
