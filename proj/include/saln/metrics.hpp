#ifndef SALN_METRICS_HPP
#define SALN_METRICS_HPP

#include <vector>

#include "saln/encoders.hpp"
#include "saln/tensor.hpp"

namespace saln {

// 1-based rank of each query's ground-truth video in the gallery ordering by
// descending similarity (ties broken by ascending gallery index).
struct RankList {
  std::vector<int> ranks;
  int gallery_size = 0;
};

// Ranks from a precomputed query x gallery score matrix.
RankList rank_from_scores(const Tensor& scores, const std::vector<int>& truth);

// Encodes queries and gallery under `state`, scores with frame_word_sim and
// ranks the true video of each query.
RankList rank_queries(const std::vector<Tensor>& query_texts, const std::vector<Tensor>& gallery_videos,
                      const std::vector<int>& truth, const ModelState& state);

double recall_at_k(const RankList& ranks, int k);  // percentage in [0, 100]
double median_rank(const RankList& ranks);         // average-of-middle-two for even counts
double mean_rank(const RankList& ranks);

// BWF_k = (1/(k-1)) sum_{i<k} (R[i][i] - R[k][i]); k is 1-based and the
// matrix is lower-triangular with rows 1..k populated (0-based storage).
double bwf(const std::vector<std::vector<double>>& recall_matrix, int k);

}  // namespace saln

#endif
