#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include "idf/dataset.hpp"
#include "idf/error.hpp"
#include "testing.hpp"

namespace {

using testing_util::ScratchDir;

TEST(MarketNames, FormatAndParse) {
  EXPECT_EQ(idf::market_file_name(12, 3, 45), "0012_c3_000045.ppm");
  const auto e = idf::parse_market_name("0012_c3_000045.ppm");
  ASSERT_TRUE(e.has_value());
  EXPECT_EQ(e->identity, 12u);
  EXPECT_EQ(e->camera, 3u);
  EXPECT_EQ(e->frame, 45u);
  EXPECT_FALSE(idf::parse_market_name("readme.txt").has_value());
  EXPECT_FALSE(idf::parse_market_name("0012_x3_000045.ppm").has_value());
}

TEST(Manifest, RoundTrips) {
  ScratchDir dir("manifest");
  const std::vector<idf::ManifestEntry> entries{{"0001_c0_000000.ppm", 1, 0, 0, 120},
                                                {"0002_c1_000003.ppm", 2, 1, 3, 61}};
  idf::write_manifest(entries, dir.path());
  const auto back = idf::read_manifest(dir.path());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].path, "0002_c1_000003.ppm");
  EXPECT_EQ(back[1].original_height, 61u);
  EXPECT_EQ(back[0].identity, 1u);
}

TEST(Manifest, MalformedLinesAreIngestionErrors) {
  ScratchDir dir("manifest_bad");
  std::ofstream(dir / idf::kManifestName) << "a.ppm,1,2\n";
  try {
    idf::read_manifest(dir.path());
    FAIL();
  } catch (const idf::Error& e) {
    EXPECT_EQ(e.kind(), idf::ErrorKind::Ingestion);
  }
  std::ofstream(dir / idf::kManifestName) << "a.ppm,1,2,x,4\n";
  EXPECT_THROW(idf::read_manifest(dir.path()), idf::Error);
  ScratchDir empty("manifest_none");
  EXPECT_THROW(idf::read_manifest(empty.path()), idf::Error);
}

TEST(Synthesis, CountsFilesAndManifestLines) {
  ScratchDir dir("synth_count");
  idf::SynthConfig cfg;  // 20 identities x 10 images x 4 cameras
  const auto entries = idf::write_synthetic_dataset(cfg, dir.path());
  EXPECT_EQ(entries.size(), 800u);
  std::size_t files = 0;
  for (const auto& f : std::filesystem::directory_iterator(dir.path()))
    if (f.path().extension() == ".ppm") ++files;
  EXPECT_EQ(files, 800u);
  std::ifstream manifest(dir / idf::kManifestName);
  std::size_t lines = 0;
  for (std::string l; std::getline(manifest, l);) ++lines;
  EXPECT_EQ(lines, 800u);
}

TEST(Synthesis, DeterministicUnderSeed) {
  idf::SynthConfig cfg;
  cfg.identities = 3;
  cfg.images_per_camera = 2;
  cfg.cameras = 2;
  const auto a = idf::synthesize(cfg), b = idf::synthesize(cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].raster.rgb, b[i].raster.rgb);
    EXPECT_EQ(a[i].entry.path, b[i].entry.path);
  }
  cfg.seed = 2;
  const auto c = idf::synthesize(cfg);
  EXPECT_NE(a[0].raster.rgb, c[0].raster.rgb);
}

TEST(Synthesis, RespectsConfiguredRanges) {
  idf::SynthConfig cfg;
  cfg.identities = 4;
  cfg.images_per_camera = 5;
  cfg.cameras = 3;
  std::set<std::size_t> cameras;
  for (const auto& s : idf::synthesize(cfg)) {
    EXPECT_GE(s.entry.original_height, cfg.min_height);
    EXPECT_LE(s.entry.original_height, cfg.max_height);
    EXPECT_EQ(s.raster.height, s.entry.original_height);
    EXPECT_EQ(s.raster.rgb.size(), s.raster.width * s.raster.height * 3);
    EXPECT_EQ(idf::parse_market_name(s.entry.path)->identity, s.entry.identity);
    cameras.insert(s.entry.camera);
  }
  EXPECT_EQ(cameras.size(), 3u);
}

TEST(Synthesis, SingleCameraIsAProtocolError) {
  idf::SynthConfig cfg;
  cfg.cameras = 1;
  try {
    idf::synthesize(cfg);
    FAIL();
  } catch (const idf::Error& e) {
    EXPECT_EQ(e.kind(), idf::ErrorKind::Protocol);
  }
}

TEST(Synthesis, CorpusIsMostlyDark) {
  idf::SynthConfig cfg;
  cfg.identities = 6;
  cfg.images_per_camera = 4;
  double lightness = 0.0;
  std::size_t n = 0;
  for (const auto& s : idf::synthesize(cfg)) {
    lightness += idf::mean_lightness(idf::raster_to_image(s.raster));
    ++n;
  }
  EXPECT_LT(lightness / n, 255.0 / 5.0);
}

TEST(LoadDataset, OrderIndependentOfWorkerCount) {
  ScratchDir dir("load");
  idf::SynthConfig cfg;
  cfg.identities = 3;
  cfg.images_per_camera = 3;
  cfg.cameras = 2;
  idf::write_synthetic_dataset(cfg, dir.path());
  const auto one = idf::load_dataset(dir.path(), 32, 16, 1);
  const auto four = idf::load_dataset(dir.path(), 32, 16, 4);
  ASSERT_EQ(one.size(), 18u);
  ASSERT_EQ(four.size(), 18u);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].path, four[i].path);
    EXPECT_EQ(one[i].image.tensor().storage(), four[i].image.tensor().storage());
    EXPECT_EQ(one[i].image.height(), 32u);
  }
}

TEST(LoadDataset, MissingImageNamesThePath) {
  ScratchDir dir("load_missing");
  idf::write_manifest({{"0000_c0_000000.ppm", 0, 0, 0, 100}}, dir.path());
  try {
    idf::load_dataset(dir.path(), 8, 4, 1);
    FAIL();
  } catch (const idf::Error& e) {
    EXPECT_EQ(e.kind(), idf::ErrorKind::Ingestion);
    EXPECT_NE(std::string(e.what()).find("0000_c0_000000.ppm"), std::string::npos);
  }
}

TEST(Workers, EnvironmentBoundsParallelism) {
  ::setenv("IDF_NUM_WORKERS", "3", 1);
  EXPECT_EQ(idf::worker_count_from_env(), 3u);
  ::setenv("IDF_NUM_WORKERS", "junk", 1);
  EXPECT_GE(idf::worker_count_from_env(), 1u);
  ::unsetenv("IDF_NUM_WORKERS");
}

TEST(Partition, SortedAndDisjoint) {
  const auto p = idf::partition_identities({7, 3, 3, 9, 1, 5}, 0.4);
  EXPECT_EQ(p.train, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(p.test, (std::vector<std::size_t>{5, 7, 9}));
  EXPECT_THROW(idf::partition_identities({1, 2}, 1.0), idf::Error);
}

}  // namespace
