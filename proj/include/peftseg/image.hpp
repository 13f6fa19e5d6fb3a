#pragma once

#include <cstdint>
#include <vector>

namespace peftseg {

/// Interleaved 8-bit raster held in row-major HWC order.
struct ImageU8 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
  std::vector<std::uint8_t> data;

  ImageU8() = default;
  ImageU8(std::int64_t h, std::int64_t w, std::int64_t c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h * w * c), fill) {}

  std::uint8_t& at(std::int64_t y, std::int64_t x, std::int64_t ch = 0) {
    return data[static_cast<std::size_t>((y * width + x) * channels + ch)];
  }
  std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t ch = 0) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + ch)];
  }
  bool operator==(const ImageU8&) const = default;
};

}  // namespace peftseg
