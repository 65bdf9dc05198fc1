#pragma once

// Minimal raster output: binary PPM for RGB and a tagged little-endian f32
// format for depth/feature planes.

#include <stdexcept>
#include <string>
#include <vector>

namespace dnact {

struct ImageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// rgb: H*W*3 floats in [0,1], clamped on write.
void write_ppm(const std::string& path, const std::vector<float>& rgb, int height, int width);

/// "DNR1" + i32 height, width, channels + raw f32 payload.
void write_raster(const std::string& path, const std::vector<float>& data, int height, int width,
                  int channels);
std::vector<float> read_raster(const std::string& path, int& height, int& width, int& channels);

}  // namespace dnact
