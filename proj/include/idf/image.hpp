#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "idf/tensor.hpp"

namespace idf {

inline constexpr std::size_t kDefaultHeight = 256;
inline constexpr std::size_t kDefaultWidth = 128;

// 3 x H x W intensities in [0, 1], channels ordered R, G, B.
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, double fill = 0.0);

  // Validates shape (3, H, W) and the [0, 1] range.
  static Image from_tensor(Tensor t);

  std::size_t height() const noexcept { return tensor_.rank() == 3 ? tensor_.dim(1) : 0; }
  std::size_t width() const noexcept { return tensor_.rank() == 3 ? tensor_.dim(2) : 0; }
  std::size_t pixels() const noexcept { return height() * width(); }
  bool empty() const noexcept { return tensor_.empty(); }

  double at(std::size_t c, std::size_t y, std::size_t x) const { return tensor_.at(c, y, x); }
  const double* channel(std::size_t c) const { return tensor_.data() + c * pixels(); }

  const Tensor& tensor() const noexcept { return tensor_; }

 private:
  Tensor tensor_;
};

// Interleaved 8-bit RGB raster, the on-disk representation.
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;
};

Raster read_ppm(const std::filesystem::path& path);
void write_ppm(const Raster& raster, const std::filesystem::path& path);

Image raster_to_image(const Raster& raster);
// Rounds half away from zero after scaling by 255.
Raster image_to_raster(const Image& image);

// Half-pixel-centre bilinear resampling with edge clamping.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

Image load_image(const std::filesystem::path& path);
Image load_and_resize(const std::filesystem::path& path, std::size_t height = kDefaultHeight,
                      std::size_t width = kDefaultWidth);
void save_image(const Image& image, const std::filesystem::path& path);

Image gamma_degrade(const Image& image, double gamma);

// 255 x the unweighted mean over all channels and pixels.
double mean_lightness(const Image& image);

enum class IlluminationLevel { Low, Medium, High };
enum class ScaleLevel { Small, Medium, Big };

std::string_view to_string(IlluminationLevel level);
std::string_view to_string(ScaleLevel level);

// Boundary values (255/10, 255/5, 100, 200) fall in Medium.
IlluminationLevel classify_lightness(double mean_lightness_0_255);
IlluminationLevel classify_illumination(const Image& image);
ScaleLevel classify_height(std::size_t original_height);

struct PersonRecord {
  std::size_t identity = 0;
  std::size_t camera = 0;
  std::size_t frame = 0;
  std::size_t original_height = 0;
  std::string path;
  Image image;
};

ScaleLevel classify_scale(const PersonRecord& record);

// counts[c][b]: pixels of channel c in equal-width bin b over [0, 1].
using ChannelHistogram = std::array<std::vector<std::size_t>, 3>;
ChannelHistogram channel_histogram(const Image& image, std::size_t bins);

}  // namespace idf
