#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace geoloc {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Pixel = std::array<std::uint8_t, 3>;

/// Decoded 8-bit, 3-channel image, row-major, channels in BGR order.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  static Image filled(int width, int height, Pixel color);

  bool empty() const { return width == 0 || height == 0; }
  Pixel at(int x, int y) const;
  void set(int x, int y, Pixel color);

  friend bool operator==(const Image&, const Image&) = default;
};

/// Half-open integer pixel rectangle [x0, x1) x [y0, y1).
struct PixelBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

/// Sub-image covering exactly `box`. Throws ImageError for degenerate or
/// out-of-bounds boxes.
Image crop(const Image& image, const PixelBox& box);

/// Encoded image bytes as read from disk or sent on the wire.
struct ImagePayload {
  std::vector<std::uint8_t> bytes;

  static ImagePayload read_file(const std::filesystem::path& path);

  // Sniffed from the magic bytes; application/octet-stream when unknown.
  std::string mime_type() const;
  std::string base64() const;
  std::string data_url() const;
  std::string digest() const;

  friend bool operator==(const ImagePayload&, const ImagePayload&) = default;
};

/// Decodes PNG/JPEG/etc. Throws ImageError when the bytes are not an image.
Image decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image& image);

}  // namespace geoloc
