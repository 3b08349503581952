#include "idf/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "idf/error.hpp"

namespace idf {

namespace {

void require_unit_range(const Tensor& t, const std::string& what) {
  for (double v : t.values()) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::Contract, what + ": intensity " + std::to_string(v) + " outside [0, 1]");
  }
}

// Next header token of a netpbm file, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

std::size_t parse_header_number(std::istream& in, const std::filesystem::path& path, const char* field) {
  const std::string token = next_token(in);
  std::size_t value = 0;
  try {
    std::size_t used = 0;
    value = std::stoul(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
  } catch (const std::exception&) {
    fail(ErrorKind::Ingestion, path.string() + ": bad " + field + " in header ('" + token + "')");
  }
  return value;
}

}  // namespace

Image::Image(std::size_t height, std::size_t width, double fill) : tensor_(Shape{3, height, width}, fill) {
  require(fill >= 0.0 && fill <= 1.0, ErrorKind::Contract, "image fill value outside [0, 1]");
}

Image Image::from_tensor(Tensor t) {
  require(t.rank() == 3 && t.dim(0) == 3, ErrorKind::Dimension,
          "image tensor must be 3 x H x W, got " + shape_string(t.shape()));
  require_unit_range(t, "image");
  Image img;
  img.tensor_ = std::move(t);
  return img;
}

Raster read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Ingestion, path.string() + ": cannot open file");
  const std::string magic = next_token(in);
  if (magic == "P5" || magic == "P2" || magic == "P4" || magic == "P1")
    fail(ErrorKind::Format, path.string() + ": not an RGB raster (netpbm " + magic + ")");
  if (magic != "P6" && magic != "P3") fail(ErrorKind::Ingestion, path.string() + ": not a portable pixmap");

  Raster r;
  r.width = parse_header_number(in, path, "width");
  r.height = parse_header_number(in, path, "height");
  const std::size_t maxval = parse_header_number(in, path, "maxval");
  if (r.width == 0 || r.height == 0) fail(ErrorKind::Ingestion, path.string() + ": empty raster");
  if (maxval == 0 || maxval > 255) fail(ErrorKind::Format, path.string() + ": only 8-bit pixmaps are supported");

  const std::size_t count = r.width * r.height * 3;
  r.rgb.resize(count);
  if (magic == "P6") {
    in.read(reinterpret_cast<char*>(r.rgb.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) fail(ErrorKind::Ingestion, path.string() + ": truncated pixel data");
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::string tok = next_token(in);
      if (tok.empty()) fail(ErrorKind::Ingestion, path.string() + ": truncated pixel data");
      r.rgb[i] = static_cast<std::uint8_t>(std::min<unsigned long>(std::stoul(tok), maxval));
    }
  }
  if (maxval != 255) {
    for (auto& v : r.rgb) v = static_cast<std::uint8_t>(std::lround(255.0 * v / static_cast<double>(maxval)));
  }
  return r;
}

void write_ppm(const Raster& raster, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, path.string() + ": cannot open for writing");
  out << "P6\n" << raster.width << ' ' << raster.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.rgb.data()), static_cast<std::streamsize>(raster.rgb.size()));
  if (!out) fail(ErrorKind::Io, path.string() + ": write failed");
}

Image raster_to_image(const Raster& raster) {
  require(raster.rgb.size() == raster.width * raster.height * 3, ErrorKind::Dimension, "raster buffer size mismatch");
  Tensor t(Shape{3, raster.height, raster.width});
  const std::size_t plane = raster.width * raster.height;
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + p] = raster.rgb[p * 3 + c] / 255.0;
  return Image::from_tensor(std::move(t));
}

Raster image_to_raster(const Image& image) {
  Raster r;
  r.width = image.width();
  r.height = image.height();
  const std::size_t plane = image.pixels();
  r.rgb.resize(plane * 3);
  const Tensor& t = image.tensor();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      // Values are non-negative, so floor(x + 0.5) is round-half-away-from-zero.
      const double scaled = std::floor(t[c * plane + p] * 255.0 + 0.5);
      r.rgb[p * 3 + c] = static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
    }
  return r;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  require(height > 0 && width > 0, ErrorKind::Parameter, "resize target must be non-empty");
  require(!image.empty(), ErrorKind::State, "resize of an empty image");
  const std::size_t ih = image.height();
  const std::size_t iw = image.width();
  if (ih == height && iw == width) return image;

  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in - 1);
      result[o] = {lo, hi, src - static_cast<double>(lo)};
    }
    return result;
  };
  const auto ty = taps(ih, height);
  const auto tx = taps(iw, width);

  Tensor out(Shape{3, height, width});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const Tap& vy = ty[y];
        const Tap& vx = tx[x];
        const double a = image.at(c, vy.lo, vx.lo);
        const double b = image.at(c, vy.lo, vx.hi);
        const double cc = image.at(c, vy.hi, vx.lo);
        const double d = image.at(c, vy.hi, vx.hi);
        const double top = a + vx.t * (b - a);
        const double bottom = cc + vx.t * (d - cc);
        out.at(c, y, x) = std::clamp(top + vy.t * (bottom - top), 0.0, 1.0);
      }
  return Image::from_tensor(std::move(out));
}

Image load_image(const std::filesystem::path& path) { return raster_to_image(read_ppm(path)); }

Image load_and_resize(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  return resize_bilinear(load_image(path), height, width);
}

void save_image(const Image& image, const std::filesystem::path& path) { write_ppm(image_to_raster(image), path); }

Image gamma_degrade(const Image& image, double gamma) {
  require(gamma > 0.0 && std::isfinite(gamma), ErrorKind::Parameter, "gamma must be positive, got " + std::to_string(gamma));
  Tensor out = image.tensor();
  for (double& v : out.values()) v = std::pow(v, gamma);
  return Image::from_tensor(std::move(out));
}

double mean_lightness(const Image& image) {
  require(!image.empty(), ErrorKind::State, "mean lightness of an empty image");
  return 255.0 * image.tensor().sum() / static_cast<double>(image.tensor().size());
}

std::string_view to_string(IlluminationLevel level) {
  switch (level) {
    case IlluminationLevel::Low: return "low";
    case IlluminationLevel::Medium: return "medium";
    case IlluminationLevel::High: return "high";
  }
  return "unknown";
}

std::string_view to_string(ScaleLevel level) {
  switch (level) {
    case ScaleLevel::Small: return "small";
    case ScaleLevel::Medium: return "medium";
    case ScaleLevel::Big: return "big";
  }
  return "unknown";
}

IlluminationLevel classify_lightness(double m) {
  if (m < 255.0 / 10.0) return IlluminationLevel::Low;
  if (m > 255.0 / 5.0) return IlluminationLevel::High;
  return IlluminationLevel::Medium;
}

IlluminationLevel classify_illumination(const Image& image) { return classify_lightness(mean_lightness(image)); }

ScaleLevel classify_height(std::size_t h) {
  if (h < 100) return ScaleLevel::Small;
  if (h > 200) return ScaleLevel::Big;
  return ScaleLevel::Medium;
}

ScaleLevel classify_scale(const PersonRecord& record) { return classify_height(record.original_height); }

ChannelHistogram channel_histogram(const Image& image, std::size_t bins) {
  require(bins >= 1, ErrorKind::Parameter, "histogram needs at least one bin");
  ChannelHistogram hist;
  const std::size_t plane = image.pixels();
  for (std::size_t c = 0; c < 3; ++c) {
    hist[c].assign(bins, 0);
    const double* ch = image.channel(c);
    for (std::size_t p = 0; p < plane; ++p) {
      const auto b = static_cast<std::size_t>(ch[p] * static_cast<double>(bins));
      ++hist[c][std::min(b, bins - 1)];
    }
  }
  return hist;
}

}  // namespace idf
