#pragma once

// Cross-camera query/gallery evaluation: distances, split construction,
// CMC and mAP.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "idf/image.hpp"
#include "idf/model.hpp"

namespace idf {

enum class Metric { Cosine, Euclidean };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view text);

// cosine: 1 - <a,b> / (|a| |b|); euclidean: |a - b|
double distance(std::span<const double> a, std::span<const double> b, Metric metric);

struct RecordInfo {
  std::size_t identity = 0;
  std::size_t camera = 0;
  std::size_t frame = 0;
  std::string path;

  static RecordInfo of(const PersonRecord& r) { return {r.identity, r.camera, r.frame, r.path}; }
};

// Records with their embeddings; every feature has the same dimension.
class GalleryIndex {
 public:
  void add(RecordInfo info, std::vector<double> feature);
  std::size_t size() const noexcept { return records_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const RecordInfo& record(std::size_t i) const { return records_.at(i); }
  std::span<const double> feature(std::size_t i) const { return features_.at(i); }

 private:
  std::vector<RecordInfo> records_;
  std::vector<std::vector<double>> features_;
  std::size_t dim_ = 0;
};

// Embeds records with the model in evaluation mode. Work is spread over up to
// `workers` threads (0: IDF_NUM_WORKERS); the result follows input order.
GalleryIndex build_index(const IdfModel& model, std::span<const PersonRecord> records, std::size_t workers = 0);

// Indices into the record list the split was built from.
struct RetrievalSplit {
  std::vector<std::size_t> query;
  std::vector<std::size_t> gallery;
  std::size_t excluded_identities = 0;  // seen by a single camera only
};

// Per (identity, camera) group holding at least probes_per_view images,
// exactly that many become queries and the rest join the gallery. Gallery
// order is shuffled so that tied distances rank in seeded random order.
RetrievalSplit build_split(std::span<const RecordInfo> records, std::size_t probes_per_view, std::uint64_t seed);

struct EvalOptions {
  Metric metric = Metric::Cosine;
  bool exclude_same_camera = true;  // drop gallery items sharing identity and camera with the query
  std::size_t keep_top = 0;         // ranked gallery positions retained per query
};

struct RankedList {
  std::size_t query = 0;
  std::vector<std::size_t> gallery;  // best first
};

struct RetrievalMetrics {
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  double map = 0.0;
  std::vector<double> cmc;  // cmc[k] = fraction matched within the top k + 1
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // queries without a valid positive
  std::vector<RankedList> ranked;
};

// distances[q][g]; labels describe the rows and columns.
RetrievalMetrics evaluate_distances(const std::vector<std::vector<double>>& distances,
                                    std::span<const RecordInfo> queries, std::span<const RecordInfo> gallery,
                                    const EvalOptions& options = {});

RetrievalMetrics evaluate(const GalleryIndex& queries, const GalleryIndex& gallery, const EvalOptions& options = {});

// Expected rank-1 under uniformly random ranking: the mean over evaluable
// queries of (#valid positives / #valid gallery items).
double random_rank1_baseline(std::span<const RecordInfo> queries, std::span<const RecordInfo> gallery,
                             bool exclude_same_camera = true);

std::string metrics_table(const RetrievalMetrics& m);
std::string metrics_csv(const RetrievalMetrics& m);
// One line per query: query path, then the retained gallery paths.
void write_ranked_lists(const RetrievalMetrics& m, const GalleryIndex& queries, const GalleryIndex& gallery,
                        const std::filesystem::path& path);

}  // namespace idf
