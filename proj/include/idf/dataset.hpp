#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "idf/image.hpp"

namespace idf {

// One manifest line: path (relative to the dataset directory), identity,
// camera, frame, original_height.
struct ManifestEntry {
  std::string path;
  std::size_t identity = 0;
  std::size_t camera = 0;
  std::size_t frame = 0;
  std::size_t original_height = 0;
};

inline constexpr const char* kManifestName = "manifest.csv";

// "<identity>_c<camera>_<frame>.<ext>"
std::string market_file_name(std::size_t identity, std::size_t camera, std::size_t frame,
                             const std::string& ext = "ppm");
std::optional<ManifestEntry> parse_market_name(const std::string& file_name);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dataset_dir);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& dataset_dir);

// Decodes and resizes every manifest entry. Decoding runs on up to `workers`
// threads (0: IDF_NUM_WORKERS, else hardware concurrency); output order always
// follows the manifest.
std::vector<PersonRecord> load_dataset(const std::filesystem::path& dataset_dir, std::size_t height,
                                       std::size_t width, std::size_t workers = 0);

std::size_t worker_count_from_env();

// Identities sorted ascending; the first `train_fraction` of them train, the
// rest are held out for retrieval.
struct IdentityPartition {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
IdentityPartition partition_identities(const std::vector<std::size_t>& identities, double train_fraction);

struct SynthConfig {
  std::size_t identities = 20;
  std::size_t images_per_camera = 10;  // per identity and camera
  std::size_t cameras = 4;
  std::uint64_t seed = 1;
  double gamma_min = 2.0;
  double gamma_max = 5.0;
  double noise_sigma = 0.01;
  std::size_t min_height = 60;
  std::size_t max_height = 300;
};

// Renders one clean (not yet degraded) toy person raster.
Image render_person(std::uint64_t seed, std::size_t identity, std::size_t camera, std::size_t height,
                    std::uint64_t image_seed);

struct SynthSample {
  ManifestEntry entry;
  Raster raster;  // degraded and quantized, at original size
};

// Deterministic under cfg.seed.
std::vector<SynthSample> synthesize(const SynthConfig& cfg);

// Writes Market-style files plus the manifest; returns the entries written.
std::vector<ManifestEntry> write_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace idf
