#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"

namespace mdkt {

enum class EvalMode { kImageToVideo, kVideoToVideo };
enum class EvalNetwork { kTeacher, kStudent };
enum class EvalDistance { kEuclidean, kSqEuclidean };

struct EvalProtocol {
  EvalMode mode = EvalMode::kImageToVideo;
  EvalNetwork network = EvalNetwork::kStudent;
  EvalDistance distance = EvalDistance::kEuclidean;
  // standard Re-ID validity rule: gallery entries sharing both identity and
  // camera with the query are excluded
  bool exclude_same_camera = true;

  std::uint32_t query_frames(std::uint32_t frames_per_clip) const {
    return mode == EvalMode::kImageToVideo ? 1 : frames_per_clip;
  }
};

struct ItemMeta {
  std::uint32_t identity = 0;
  std::uint32_t camera = 0;
};

// Per query: valid gallery indices ordered by ascending distance (ties by
// gallery index) and the same-identity match flag per position. Queries with
// no valid positive are skipped and counted.
struct RankingResult {
  struct QueryRanking {
    std::vector<std::size_t> ordered_gallery;
    std::vector<char> is_match;
    bool skipped = false;
  };
  std::vector<QueryRanking> queries;

  std::size_t n_skipped() const;
  std::size_t n_scored() const { return queries.size() - n_skipped(); }
};

// Embeds and pools clips without gradient recording: one row per clip.
Tensor extract_gallery(const EmbeddingNet& net, const std::vector<ClipSample>& clips);

RankingResult rank(const Tensor& query_reps, const Tensor& gallery_reps,
                   const std::vector<ItemMeta>& query_meta,
                   const std::vector<ItemMeta>& gallery_meta, EvalDistance distance,
                   bool exclude_same_camera);

// Fraction of scored queries whose first correct match appears at rank <= k.
double cmc(const RankingResult& results, std::size_t k);
// Mean over scored queries of average precision.
double mean_average_precision(const RankingResult& results);

struct EvalReport {
  std::string mode;
  std::string network;
  double cmc1 = 0.0;
  double cmc5 = 0.0;
  double map = 0.0;
  std::size_t n_queries = 0;
  std::size_t n_skipped = 0;
};

// Full protocol over a dataset's test split: every test clip contributes a
// query (its first frame for I2V, the whole clip for V2V) and the full
// clips form the gallery.
EvalReport evaluate(const EmbeddingNet& net, const Dataset& dataset, const EvalProtocol& protocol);

}  // namespace mdkt
