#include "cgsa/image.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cgsa {

void write_ppm(const std::string& path, const ImageU8& image) {
  if (image.rgb.size() != image.height * image.width * 3)
    throw std::invalid_argument("write_ppm: image buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

ImageU8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  std::size_t w = 0, h = 0;
  int maxval = 0;
  in >> w >> h >> maxval;
  if (!in || maxval != 255)
    throw std::runtime_error("read_ppm: unsupported header in " + path);
  in.get();  // single whitespace after maxval
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.rgb.resize(w * h * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.rgb.size())
    throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  return img;
}

}  // namespace cgsa
