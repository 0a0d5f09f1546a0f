#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cgsa {

// 8-bit RGB image, row-major, channel-interleaved. Pixels are quantized at
// generation time so in-memory scenes and PPM round trips are bit-identical.
struct ImageU8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return rgb[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }
};

// Binary PPM (P6), 8-bit, bit-exact across platforms.
void write_ppm(const std::string& path, const ImageU8& image);
ImageU8 read_ppm(const std::string& path);

}  // namespace cgsa
