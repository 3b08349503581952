#include "idf/retrieval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "idf/dataset.hpp"
#include "idf/error.hpp"
#include "idf/simd/kernels.hpp"

namespace idf {

namespace {

bool is_valid(const RecordInfo& q, const RecordInfo& g, bool exclude_same_camera) {
  return !(exclude_same_camera && q.identity == g.identity && q.camera == g.camera);
}

}  // namespace

std::string_view to_string(Metric m) { return m == Metric::Cosine ? "cosine" : "euclidean"; }

Metric parse_metric(std::string_view text) {
  if (text == "cosine") return Metric::Cosine;
  if (text == "euclidean") return Metric::Euclidean;
  fail(ErrorKind::Config, "unknown distance metric '" + std::string(text) + "' (cosine, euclidean)");
}

double distance(std::span<const double> a, std::span<const double> b, Metric metric) {
  require(a.size() == b.size(), ErrorKind::Dimension,
          "feature dimensions differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (metric == Metric::Euclidean) return std::sqrt(simd::squared_distance(a.data(), b.data(), a.size()));
  const double na = simd::dot(a.data(), a.data(), a.size());
  const double nb = simd::dot(b.data(), b.data(), b.size());
  require(na > 0.0 && nb > 0.0, ErrorKind::Parameter, "cosine distance of a zero vector");
  return 1.0 - simd::dot(a.data(), b.data(), a.size()) / (std::sqrt(na) * std::sqrt(nb));
}

void GalleryIndex::add(RecordInfo info, std::vector<double> feature) {
  require(!feature.empty(), ErrorKind::Dimension, "empty feature vector");
  if (records_.empty()) dim_ = feature.size();
  require(feature.size() == dim_, ErrorKind::Dimension,
          "feature of dimension " + std::to_string(feature.size()) + " added to an index of dimension " +
              std::to_string(dim_));
  records_.push_back(std::move(info));
  features_.push_back(std::move(feature));
}

GalleryIndex build_index(const IdfModel& model, std::span<const PersonRecord> records, std::size_t workers) {
  require(model.initialized(), ErrorKind::State, "no trained model loaded");
  if (workers == 0) workers = worker_count_from_env();
  workers = std::max<std::size_t>(1, std::min(workers, records.size()));
  std::vector<std::vector<double>> features(records.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      try {
        features[i] = model.assemble_features(records[i].image);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = records.size();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  GalleryIndex index;
  for (std::size_t i = 0; i < records.size(); ++i) index.add(RecordInfo::of(records[i]), std::move(features[i]));
  return index;
}

RetrievalSplit build_split(std::span<const RecordInfo> records, std::size_t probes_per_view, std::uint64_t seed) {
  require(probes_per_view >= 1, ErrorKind::Parameter, "probes_per_view must be at least 1");
  std::map<std::size_t, std::map<std::size_t, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].identity][records[i].camera].push_back(i);

  Rng rng(seed_mix(seed, 0x5b));
  RetrievalSplit split;
  for (auto& [identity, cameras] : groups) {
    if (cameras.size() < 2) {
      ++split.excluded_identities;
      continue;
    }
    for (auto& [camera, members] : cameras) {
      if (members.size() < probes_per_view) {
        split.gallery.insert(split.gallery.end(), members.begin(), members.end());
        continue;
      }
      std::shuffle(members.begin(), members.end(), rng);
      std::sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(probes_per_view));
      split.query.insert(split.query.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(probes_per_view));
      split.gallery.insert(split.gallery.end(), members.begin() + static_cast<std::ptrdiff_t>(probes_per_view), members.end());
    }
  }
  std::shuffle(split.gallery.begin(), split.gallery.end(), rng);
  return split;
}

RetrievalMetrics evaluate_distances(const std::vector<std::vector<double>>& distances,
                                    std::span<const RecordInfo> queries, std::span<const RecordInfo> gallery,
                                    const EvalOptions& options) {
  require(distances.size() == queries.size(), ErrorKind::Dimension, "distance rows differ from query count");
  RetrievalMetrics m;
  const std::size_t depth = std::max<std::size_t>(gallery.size(), 10);
  std::vector<double> hits(depth, 0.0);
  std::vector<std::size_t> order;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    require(distances[q].size() == gallery.size(), ErrorKind::Dimension, "distance columns differ from gallery size");
    order.clear();
    std::size_t positives = 0;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (!is_valid(queries[q], gallery[g], options.exclude_same_camera)) continue;
      order.push_back(g);
      if (gallery[g].identity == queries[q].identity) ++positives;
    }
    if (positives == 0) {
      ++m.skipped;
      continue;
    }
    const auto& d = distances[q];
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    std::size_t found = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < order.size() && found < positives; ++r) {
      if (gallery[order[r]].identity != queries[q].identity) continue;
      if (found == 0) hits[r] += 1.0;
      ++found;
      ap += static_cast<double>(found) / static_cast<double>(r + 1);
    }
    m.map += ap / static_cast<double>(positives);
    ++m.evaluated;
    if (options.keep_top > 0) {
      order.resize(std::min(order.size(), options.keep_top));
      m.ranked.push_back({q, order});
    }
  }
  m.cmc.assign(depth, 0.0);
  if (m.evaluated > 0) {
    double running = 0.0;
    for (std::size_t k = 0; k < depth; ++k) {
      running += hits[k];
      m.cmc[k] = running / static_cast<double>(m.evaluated);
    }
    m.map /= static_cast<double>(m.evaluated);
  }
  m.rank1 = m.cmc[0];
  m.rank5 = m.cmc[4];
  m.rank10 = m.cmc[9];
  return m;
}

RetrievalMetrics evaluate(const GalleryIndex& queries, const GalleryIndex& gallery, const EvalOptions& options) {
  require(queries.size() == 0 || gallery.size() == 0 || queries.dim() == gallery.dim(), ErrorKind::Dimension,
          "query and gallery features differ in dimension");
  std::vector<std::vector<double>> distances(queries.size(), std::vector<double>(gallery.size()));
  std::vector<RecordInfo> q_info, g_info;
  for (std::size_t g = 0; g < gallery.size(); ++g) g_info.push_back(gallery.record(g));
  for (std::size_t q = 0; q < queries.size(); ++q) {
    q_info.push_back(queries.record(q));
    for (std::size_t g = 0; g < gallery.size(); ++g)
      distances[q][g] = distance(queries.feature(q), gallery.feature(g), options.metric);
  }
  return evaluate_distances(distances, q_info, g_info, options);
}

double random_rank1_baseline(std::span<const RecordInfo> queries, std::span<const RecordInfo> gallery,
                             bool exclude_same_camera) {
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& q : queries) {
    std::size_t valid = 0, positives = 0;
    for (const auto& g : gallery) {
      if (!is_valid(q, g, exclude_same_camera)) continue;
      ++valid;
      if (g.identity == q.identity) ++positives;
    }
    if (positives == 0) continue;
    sum += static_cast<double>(positives) / static_cast<double>(valid);
    ++counted;
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

std::string metrics_table(const RetrievalMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%-8s %-8s %-8s %-8s\n%7.2f%% %7.2f%% %7.2f%% %7.2f%%\nqueries evaluated: %zu, skipped: %zu\n", "R-1",
                "R-5", "R-10", "mAP", 100.0 * m.rank1, 100.0 * m.rank5, 100.0 * m.rank10, 100.0 * m.map, m.evaluated,
                m.skipped);
  return buf;
}

std::string metrics_csv(const RetrievalMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "rank1,rank5,rank10,map,evaluated,skipped\n%.10f,%.10f,%.10f,%.10f,%zu,%zu\n",
                m.rank1, m.rank5, m.rank10, m.map, m.evaluated, m.skipped);
  return buf;
}

void write_ranked_lists(const RetrievalMetrics& m, const GalleryIndex& queries, const GalleryIndex& gallery,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  for (const auto& list : m.ranked) {
    out << queries.record(list.query).path;
    for (std::size_t g : list.gallery) out << ',' << gallery.record(g).path;
    out << '\n';
  }
  require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace idf
