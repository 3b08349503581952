#include "idf/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "idf/error.hpp"
#include "idf/nn.hpp"

namespace idf {

namespace fs = std::filesystem;

std::string market_file_name(std::size_t identity, std::size_t camera, std::size_t frame, const std::string& ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04zu_c%zu_%06zu.%s", identity, camera, frame, ext.c_str());
  return buf;
}

std::optional<ManifestEntry> parse_market_name(const std::string& file_name) {
  auto number = [](std::string_view s, std::size_t& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
  };
  const auto dot = file_name.rfind('.');
  const std::string_view stem = std::string_view(file_name).substr(0, dot);
  const auto u1 = stem.find("_c");
  if (u1 == std::string_view::npos) return std::nullopt;
  const auto u2 = stem.find('_', u1 + 2);
  if (u2 == std::string_view::npos) return std::nullopt;
  ManifestEntry e;
  e.path = file_name;
  if (!number(stem.substr(0, u1), e.identity) || !number(stem.substr(u1 + 2, u2 - u1 - 2), e.camera) ||
      !number(stem.substr(u2 + 1), e.frame))
    return std::nullopt;
  return e;
}

std::vector<ManifestEntry> read_manifest(const fs::path& dataset_dir) {
  const fs::path file = dataset_dir / kManifestName;
  std::ifstream in(file);
  if (!in) fail(ErrorKind::Ingestion, file.string() + ": cannot open manifest");
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 5)
      fail(ErrorKind::Ingestion, file.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    ManifestEntry e;
    e.path = fields[0];
    try {
      e.identity = std::stoul(fields[1]);
      e.camera = std::stoul(fields[2]);
      e.frame = std::stoul(fields[3]);
      e.original_height = std::stoul(fields[4]);
    } catch (const std::exception&) {
      fail(ErrorKind::Ingestion, file.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& dataset_dir) {
  const fs::path file = dataset_dir / kManifestName;
  std::ofstream out(file);
  if (!out) fail(ErrorKind::Io, file.string() + ": cannot write manifest");
  for (const auto& e : entries)
    out << e.path << ',' << e.identity << ',' << e.camera << ',' << e.frame << ',' << e.original_height << '\n';
  if (!out) fail(ErrorKind::Io, file.string() + ": write failed");
}

std::size_t worker_count_from_env() {
  if (const char* env = std::getenv("IDF_NUM_WORKERS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<PersonRecord> load_dataset(const fs::path& dataset_dir, std::size_t height, std::size_t width,
                                       std::size_t workers) {
  const auto entries = read_manifest(dataset_dir);
  std::vector<PersonRecord> records(entries.size());
  if (workers == 0) workers = worker_count_from_env();
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, entries.size()));

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = next++; i < entries.size(); i = next++) {
        const auto& e = entries[i];
        PersonRecord& r = records[i];
        r.identity = e.identity;
        r.camera = e.camera;
        r.frame = e.frame;
        r.original_height = e.original_height;
        r.path = e.path;
        r.image = load_and_resize(dataset_dir / e.path, height, width);
      }
    } catch (...) {
      errors[w] = std::current_exception();
      next = entries.size();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return records;
}

IdentityPartition partition_identities(const std::vector<std::size_t>& identities, double train_fraction) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorKind::Config, "train fraction must be in (0, 1)");
  std::vector<std::size_t> ids = identities;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(ids.size())));
  IdentityPartition p;
  p.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, ids.size())));
  p.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(p.train.size()), ids.end());
  return p;
}

// ---------------------------------------------------------------------------
// Toy corpus: each identity is a figure with its own clothing colours and
// pattern; each camera contributes a background texture and a colour cast.

namespace {

using Rgb = std::array<double, 3>;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return seed_mix(a, b); }

Rgb random_colour(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

struct IdentityLook {
  Rgb shirt, shirt_alt, pants, hair, bag;
  int pattern;  // 0 plain, 1 horizontal stripes, 2 vertical stripes
  bool has_bag;
  double body_width;
  double stripe_period;
};

struct CameraLook {
  Rgb bg_a, bg_b, cast;
  double freq_x, freq_y;
};

IdentityLook identity_look(std::uint64_t seed, std::size_t identity) {
  std::mt19937_64 rng(mix(seed, 0x1d000000ULL + identity));
  IdentityLook look;
  look.shirt = random_colour(rng, 0.15, 1.0);
  look.shirt_alt = random_colour(rng, 0.15, 1.0);
  look.pants = random_colour(rng, 0.1, 0.9);
  look.hair = random_colour(rng, 0.05, 0.5);
  look.bag = random_colour(rng, 0.1, 1.0);
  look.pattern = std::uniform_int_distribution<int>(0, 2)(rng);
  look.has_bag = std::bernoulli_distribution(0.5)(rng);
  look.body_width = std::uniform_real_distribution<double>(0.26, 0.4)(rng);
  look.stripe_period = std::uniform_real_distribution<double>(0.05, 0.1)(rng);
  return look;
}

CameraLook camera_look(std::uint64_t seed, std::size_t camera) {
  std::mt19937_64 rng(mix(seed, 0xca000000ULL + camera));
  CameraLook look;
  look.bg_a = random_colour(rng, 0.2, 0.7);
  look.bg_b = random_colour(rng, 0.2, 0.7);
  look.cast = random_colour(rng, 0.85, 1.15);
  look.freq_x = std::uniform_real_distribution<double>(2.0, 9.0)(rng);
  look.freq_y = std::uniform_real_distribution<double>(2.0, 9.0)(rng);
  return look;
}

}  // namespace

Image render_person(std::uint64_t seed, std::size_t identity, std::size_t camera, std::size_t height,
                    std::uint64_t image_seed) {
  require(height >= 2, ErrorKind::Parameter, "render height must be at least 2");
  const std::size_t width = std::max<std::size_t>(1, height / 2);
  const IdentityLook id = identity_look(seed, identity);
  const CameraLook cam = camera_look(seed, camera);
  std::mt19937_64 rng(image_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cx = 0.5 + 0.16 * (u(rng) - 0.5);
  const double top = 0.03 + 0.06 * u(rng);
  const double scale = 0.9 + 0.15 * u(rng);
  const double phase_x = 6.283 * u(rng);
  const double phase_y = 6.283 * u(rng);
  const double brightness = 0.75 + 0.25 * u(rng);
  const double bag_side = u(rng) < 0.5 ? -1.0 : 1.0;
  const double stride = 0.04 * (u(rng) - 0.5);

  Tensor t(Shape{3, height, width});
  const double half_body = 0.5 * id.body_width * scale;
  for (std::size_t y = 0; y < height; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
    const double pv = (v - top) / scale;  // figure-relative vertical coordinate
    for (std::size_t x = 0; x < width; ++x) {
      const double uu = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
      const double dx = uu - cx;
      const double tex = 0.5 + 0.5 * std::sin(cam.freq_x * 6.283 * uu + phase_x) * std::sin(cam.freq_y * 6.283 * v + phase_y);
      Rgb px;
      for (int c = 0; c < 3; ++c) px[c] = cam.bg_a[c] + tex * (cam.bg_b[c] - cam.bg_a[c]);

      const double head_dy = (pv - 0.1) * 0.5;
      if (dx * dx + head_dy * head_dy < 0.11 * 0.11 * scale * scale) {
        px = id.hair;
      } else if (pv >= 0.18 && pv < 0.56 && std::abs(dx) < half_body) {
        bool alt = false;
        if (id.pattern == 1) alt = std::fmod(pv, 2.0 * id.stripe_period) < id.stripe_period;
        if (id.pattern == 2) alt = std::fmod(dx + 1.0, 2.0 * id.stripe_period) < id.stripe_period;
        px = alt ? id.shirt_alt : id.shirt;
      } else if (pv >= 0.56 && pv < 0.97) {
        const double leg_w = 0.4 * half_body;
        const double left = dx + 0.5 * half_body + stride;
        const double right = dx - 0.5 * half_body - stride;
        if (std::abs(left) < leg_w || std::abs(right) < leg_w) px = id.pants;
      }
      if (id.has_bag && pv >= 0.3 && pv < 0.5) {
        const double bx = dx - bag_side * (half_body + 0.06);
        if (std::abs(bx) < 0.06) px = id.bag;
      }
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = std::clamp(px[c] * cam.cast[c] * brightness, 0.0, 1.0);
    }
  }
  return Image::from_tensor(std::move(t));
}

std::vector<SynthSample> synthesize(const SynthConfig& cfg) {
  require(cfg.identities >= 2, ErrorKind::Parameter, "synthesis needs at least 2 identities");
  require(cfg.cameras >= 2, ErrorKind::Protocol, "synthesis needs at least 2 cameras for cross-camera evaluation");
  require(cfg.images_per_camera >= 1, ErrorKind::Parameter, "synthesis needs at least 1 image per camera");
  require(cfg.gamma_min > 0.0 && cfg.gamma_max >= cfg.gamma_min, ErrorKind::Parameter, "invalid gamma range");
  require(cfg.min_height >= 2 && cfg.max_height >= cfg.min_height, ErrorKind::Parameter, "invalid height range");

  std::vector<SynthSample> samples;
  samples.reserve(cfg.identities * cfg.cameras * cfg.images_per_camera);
  for (std::size_t id = 0; id < cfg.identities; ++id) {
    for (std::size_t cam = 0; cam < cfg.cameras; ++cam) {
      for (std::size_t k = 0; k < cfg.images_per_camera; ++k) {
        const std::uint64_t image_seed = mix(mix(cfg.seed, id), mix(cam, k));
        std::mt19937_64 rng(mix(image_seed, 0x5eedULL));
        const auto height = std::uniform_int_distribution<std::size_t>(cfg.min_height, cfg.max_height)(rng);
        const double gamma = std::uniform_real_distribution<double>(cfg.gamma_min, cfg.gamma_max)(rng);
        Image clean = render_person(cfg.seed, id, cam, height, image_seed);
        Image dark = gamma_degrade(clean, gamma);
        Tensor noisy = dark.tensor();
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        if (cfg.noise_sigma > 0.0)
          for (double& v : noisy.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);

        SynthSample s;
        s.entry.identity = id;
        s.entry.camera = cam;
        s.entry.frame = k;
        s.entry.original_height = height;
        s.entry.path = market_file_name(id, cam, k);
        s.raster = image_to_raster(Image::from_tensor(std::move(noisy)));
        samples.push_back(std::move(s));
      }
    }
  }
  return samples;
}

std::vector<ManifestEntry> write_synthetic_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
  auto samples = synthesize(cfg);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::Io, out_dir.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  entries.reserve(samples.size());
  for (auto& s : samples) {
    write_ppm(s.raster, out_dir / s.entry.path);
    entries.push_back(s.entry);
  }
  write_manifest(entries, out_dir);
  return entries;
}

}  // namespace idf
