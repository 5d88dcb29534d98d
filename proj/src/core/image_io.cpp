#include "core/image_io.hpp"

#include <fstream>
#include <string>

#include "core/common.hpp"

namespace preview {

void write_pgm(const std::filesystem::path& path, const gray_image& img) {
    require(img.height > 0 && img.width > 0 &&
                img.pixels.size() == size_t(img.height) * size_t(img.width),
            errc::config, "write_pgm: inconsistent image");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot write image: " + path.string());
    f << "P5\n" << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    if (!f) throw_io("image write failed: " + path.string());
}

gray_image read_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open image: " + path.string());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
        throw_io("not an 8-bit P5 PGM: " + path.string());
    f.get();  // single whitespace after the header
    gray_image img;
    img.height = h;
    img.width = w;
    img.pixels.resize(size_t(w) * size_t(h));
    f.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    if (!f) throw_io("truncated image: " + path.string());
    return img;
}

}  // namespace preview
