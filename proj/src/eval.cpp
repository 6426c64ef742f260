#include "eval.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace mdkt {

std::size_t RankingResult::n_skipped() const {
  std::size_t n = 0;
  for (const auto& q : queries) n += q.skipped ? 1 : 0;
  return n;
}

Tensor extract_gallery(const EmbeddingNet& net, const std::vector<ClipSample>& clips) {
  if (clips.empty()) throw ShapeError("extract_gallery: no clips");
  return net.clip_representations(nullptr, clips);
}

RankingResult rank(const Tensor& query_reps, const Tensor& gallery_reps,
                   const std::vector<ItemMeta>& query_meta,
                   const std::vector<ItemMeta>& gallery_meta, EvalDistance distance,
                   bool exclude_same_camera) {
  if (query_reps.rank() != 2 || gallery_reps.rank() != 2 ||
      query_reps.cols() != gallery_reps.cols()) {
    throw ShapeError("rank: representation dimensions disagree");
  }
  if (query_meta.size() != query_reps.rows() || gallery_meta.size() != gallery_reps.rows()) {
    throw ShapeError("rank: metadata counts disagree with representations");
  }
  const std::size_t nq = query_reps.rows();
  const std::size_t ng = gallery_reps.rows();
  const std::size_t d = query_reps.cols();

  RankingResult out;
  out.queries.resize(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    auto& ranking = out.queries[q];
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(ng);
    bool any_positive = false;
    for (std::size_t g = 0; g < ng; ++g) {
      const bool same_id = gallery_meta[g].identity == query_meta[q].identity;
      if (exclude_same_camera && same_id && gallery_meta[g].camera == query_meta[q].camera) {
        continue;  // invalid gallery entry for this query
      }
      double sq = 0.0;
      for (std::size_t l = 0; l < d; ++l) {
        const double diff = query_reps.at(q, l) - gallery_reps.at(g, l);
        sq += diff * diff;
      }
      const double dist = distance == EvalDistance::kEuclidean ? std::sqrt(sq) : sq;
      scored.emplace_back(dist, g);
      any_positive = any_positive || same_id;
    }
    if (!any_positive) {
      ranking.skipped = true;
      continue;
    }
    std::sort(scored.begin(), scored.end());  // ties fall back to gallery index
    ranking.ordered_gallery.reserve(scored.size());
    ranking.is_match.reserve(scored.size());
    for (const auto& [dist, g] : scored) {
      ranking.ordered_gallery.push_back(g);
      ranking.is_match.push_back(gallery_meta[g].identity == query_meta[q].identity ? 1 : 0);
    }
  }
  return out;
}

double cmc(const RankingResult& results, std::size_t k) {
  if (k < 1) throw UsageError("cmc: k must be >= 1");
  const std::size_t scored = results.n_scored();
  if (scored == 0) throw UsageError("cmc: every query was skipped, metric undefined");
  std::size_t hits = 0;
  for (const auto& q : results.queries) {
    if (q.skipped) continue;
    const std::size_t limit = std::min(k, q.is_match.size());
    for (std::size_t r = 0; r < limit; ++r) {
      if (q.is_match[r]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(scored);
}

double mean_average_precision(const RankingResult& results) {
  const std::size_t scored = results.n_scored();
  if (scored == 0) throw UsageError("map: every query was skipped, metric undefined");
  double acc = 0.0;
  for (const auto& q : results.queries) {
    if (q.skipped) continue;
    std::size_t positives = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < q.is_match.size(); ++r) {
      if (q.is_match[r]) {
        ++positives;
        ap += static_cast<double>(positives) / static_cast<double>(r + 1);
      }
    }
    acc += ap / static_cast<double>(positives);
  }
  return acc / static_cast<double>(scored);
}

EvalReport evaluate(const EmbeddingNet& net, const Dataset& dataset,
                    const EvalProtocol& protocol) {
  const auto& clips = dataset.test_clips;
  if (clips.empty()) throw UsageError("evaluate: dataset has no test clips");

  std::vector<ItemMeta> gallery_meta;
  gallery_meta.reserve(clips.size());
  for (const ClipSample& clip : clips) gallery_meta.push_back({clip.identity, clip.camera});

  const Tensor gallery = extract_gallery(net, clips);

  Tensor queries;
  if (protocol.mode == EvalMode::kVideoToVideo) {
    queries = gallery;
  } else {
    // each test clip contributes its first frame, treated as a 1-frame video
    std::vector<ClipSample> single_frame;
    single_frame.reserve(clips.size());
    for (const ClipSample& clip : clips) {
      ClipSample one;
      one.identity = clip.identity;
      one.camera = clip.camera;
      one.n_frames = 1;
      one.frame_dim = clip.frame_dim;
      one.frames.assign(clip.frames.begin(), clip.frames.begin() + clip.frame_dim);
      one.source_frames = {0};
      single_frame.push_back(std::move(one));
    }
    queries = extract_gallery(net, single_frame);
  }

  const RankingResult results =
      rank(queries, gallery, gallery_meta, gallery_meta, protocol.distance,
           protocol.exclude_same_camera);

  EvalReport report;
  report.mode = protocol.mode == EvalMode::kImageToVideo ? "I2V" : "V2V";
  report.network = protocol.network == EvalNetwork::kTeacher ? "teacher" : "student";
  report.cmc1 = cmc(results, 1);
  report.cmc5 = cmc(results, 5);
  report.map = mean_average_precision(results);
  report.n_queries = results.queries.size();
  report.n_skipped = results.n_skipped();
  return report;
}

}  // namespace mdkt
