#include "dnact/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dnact {

void write_ppm(const std::string& path, const std::vector<float>& rgb, int height, int width) {
    if (rgb.size() != static_cast<size_t>(height) * width * 3)
        throw ImageError("ppm: size mismatch for " + path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("ppm: cannot write " + path);
    out << "P6\n" << width << ' ' << height << "\n255\n";
    std::vector<unsigned char> bytes(rgb.size());
    for (size_t i = 0; i < rgb.size(); ++i) {
        const float v = std::clamp(rgb[i], 0.0f, 1.0f);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageError("ppm: write failed for " + path);
}

void write_raster(const std::string& path, const std::vector<float>& data, int height, int width,
                  int channels) {
    if (data.size() != static_cast<size_t>(height) * width * channels)
        throw ImageError("raster: size mismatch for " + path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("raster: cannot write " + path);
    out.write("DNR1", 4);
    const std::int32_t dims[3] = {height, width, channels};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw ImageError("raster: write failed for " + path);
}

std::vector<float> read_raster(const std::string& path, int& height, int& width, int& channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("raster: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DNR1", 4) != 0)
        throw ImageError("raster: bad magic in " + path);
    std::int32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
        throw ImageError("raster: bad header in " + path);
    height = dims[0];
    width = dims[1];
    channels = dims[2];
    std::vector<float> data(static_cast<size_t>(dims[0]) * dims[1] * dims[2]);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw ImageError("raster: truncated payload in " + path);
    return data;
}

}  // namespace dnact
