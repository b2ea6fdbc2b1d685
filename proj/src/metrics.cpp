#include "saln/metrics.hpp"

#include <algorithm>
#include <string>

#include "saln/similarity.hpp"

namespace saln {

RankList rank_from_scores(const Tensor& scores, const std::vector<int>& truth) {
  const int q = scores.rows(), g = scores.cols();
  if (static_cast<int>(truth.size()) != q) fail(ErrCode::ShapeMismatch, "one truth entry per query");
  RankList out;
  out.gallery_size = g;
  out.ranks.reserve(truth.size());
  for (int i = 0; i < q; ++i) {
    const int target = truth[i];
    if (target < 0 || target >= g)
      fail(ErrCode::TruthNotInGallery, "query " + std::to_string(i) + " maps outside the gallery");
    const double s_true = scores.at(i, target);
    int rank = 1;
    for (int j = 0; j < g; ++j) {
      if (scores.at(i, j) > s_true) ++rank;
      else if (scores.at(i, j) == s_true && j < target) ++rank;
    }
    out.ranks.push_back(rank);
  }
  return out;
}

RankList rank_queries(const std::vector<Tensor>& query_texts, const std::vector<Tensor>& gallery_videos,
                      const std::vector<int>& truth, const ModelState& state) {
  return rank_from_scores(score_matrix(query_texts, gallery_videos, state), truth);
}

double recall_at_k(const RankList& ranks, int k) {
  if (ranks.ranks.empty()) fail(ErrCode::EmptyRankList, "recall of empty rank list");
  if (k < 1) fail(ErrCode::InvalidConfig, "k must be >= 1");
  int hits = 0;
  for (int r : ranks.ranks)
    if (r <= k) ++hits;
  return 100.0 * hits / static_cast<double>(ranks.ranks.size());
}

double median_rank(const RankList& ranks) {
  if (ranks.ranks.empty()) fail(ErrCode::EmptyRankList, "median of empty rank list");
  std::vector<int> sorted = ranks.ranks;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

double mean_rank(const RankList& ranks) {
  if (ranks.ranks.empty()) fail(ErrCode::EmptyRankList, "mean of empty rank list");
  double s = 0.0;
  for (int r : ranks.ranks) s += r;
  return s / static_cast<double>(ranks.ranks.size());
}

double bwf(const std::vector<std::vector<double>>& recall_matrix, int k) {
  if (k < 2) fail(ErrCode::InsufficientTasks, "BWF needs at least 2 tasks");
  if (static_cast<int>(recall_matrix.size()) < k) fail(ErrCode::ShapeMismatch, "recall matrix too small");
  double acc = 0.0;
  for (int i = 0; i < k - 1; ++i)
    acc += recall_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] -
           recall_matrix[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(i)];
  return acc / (k - 1);
}

}  // namespace saln
