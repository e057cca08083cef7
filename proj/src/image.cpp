#include "geoloc/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cstring>
#include <fstream>
#include <iterator>

#include "geoloc/digest.hpp"

namespace geoloc {

Image Image::filled(int width, int height, Pixel color) {
  if (width <= 0 || height <= 0) throw ImageError("image dimensions must be positive");
  Image image{width, height, {}};
  image.data.reserve(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
  for (int i = 0; i < width * height; ++i) image.data.insert(image.data.end(), color.begin(), color.end());
  return image;
}

Pixel Image::at(int x, int y) const {
  const std::size_t offset = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                              static_cast<std::size_t>(x)) * 3;
  return {data[offset], data[offset + 1], data[offset + 2]};
}

void Image::set(int x, int y, Pixel color) {
  const std::size_t offset = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                              static_cast<std::size_t>(x)) * 3;
  std::memcpy(data.data() + offset, color.data(), 3);
}

Image crop(const Image& image, const PixelBox& box) {
  if (box.width() <= 0 || box.height() <= 0) throw ImageError("crop box has zero area");
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > image.width || box.y1 > image.height) {
    throw ImageError("crop box exceeds image bounds");
  }
  Image out{box.width(), box.height(), {}};
  out.data.reserve(static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height) * 3);
  const std::size_t row_bytes = static_cast<std::size_t>(out.width) * 3;
  for (int y = box.y0; y < box.y1; ++y) {
    const auto* row = image.data.data() +
                      (static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width) +
                       static_cast<std::size_t>(box.x0)) * 3;
    out.data.insert(out.data.end(), row, row + row_bytes);
  }
  return out;
}

ImagePayload ImagePayload::read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image file " + path.string());
  ImagePayload payload;
  payload.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return payload;
}

std::string ImagePayload::mime_type() const {
  auto starts_with = [this](std::initializer_list<std::uint8_t> magic) {
    return bytes.size() >= magic.size() && std::equal(magic.begin(), magic.end(), bytes.begin());
  };
  if (starts_with({0x89, 'P', 'N', 'G'})) return "image/png";
  if (starts_with({0xff, 0xd8, 0xff})) return "image/jpeg";
  if (starts_with({'G', 'I', 'F', '8'})) return "image/gif";
  if (starts_with({'B', 'M'})) return "image/bmp";
  if (bytes.size() >= 12 && starts_with({'R', 'I', 'F', 'F'}) &&
      std::equal(bytes.begin() + 8, bytes.begin() + 12, "WEBP")) {
    return "image/webp";
  }
  return "application/octet-stream";
}

std::string ImagePayload::base64() const { return base64_encode(bytes); }

std::string ImagePayload::data_url() const { return "data:" + mime_type() + ";base64," + base64(); }

std::string ImagePayload::digest() const { return sha256_hex(bytes); }

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw ImageError("empty image payload");
  const cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1,
                       const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(buffer, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw ImageError(std::string("cannot decode image: ") + e.what());
  }
  if (decoded.empty()) throw ImageError("cannot decode image payload");
  Image image{decoded.cols, decoded.rows, {}};
  const std::size_t row_bytes = static_cast<std::size_t>(decoded.cols) * 3;
  image.data.reserve(row_bytes * static_cast<std::size_t>(decoded.rows));
  for (int y = 0; y < decoded.rows; ++y) {
    const auto* row = decoded.ptr<std::uint8_t>(y);
    image.data.insert(image.data.end(), row, row + row_bytes);
  }
  return image;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.empty()) throw ImageError("cannot encode an empty image");
  const cv::Mat mat(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.data.data()));
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", mat, out)) throw ImageError("PNG encoding failed");
  return out;
}

}  // namespace geoloc
