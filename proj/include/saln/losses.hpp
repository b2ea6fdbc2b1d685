#ifndef SALN_LOSSES_HPP
#define SALN_LOSSES_HPP

#include <cstdint>
#include <map>
#include <vector>

#include "saln/encoders.hpp"
#include "saln/etf.hpp"
#include "saln/similarity.hpp"
#include "saln/tensor.hpp"

namespace saln {

struct LossConfig {
  double lambda1 = 0.1;   // ETF alignment weight
  double lambda2 = 10.0;  // CRP weight
  double tau = 0.07;      // contrastive temperature
  double tau2 = 1.0;      // CRP temperature
  double sigma = 0.1;     // pseudo-feature noise scale
  int pseudo_per_category = 2;
  bool crp_rowwise_only = false;

  void validate() const;
};

// Pooled modality-level representation of one pair, in prototype space.
struct PooledPair {
  Tensor w_bar;  // pooled text vector (d)
  Tensor f_bar;  // pooled video vector (d)
  int category = -1;
};

// Prototype-guided attention pooling: softmax (temperature 1) over inner
// products with the prototype, then the weighted sum of the inputs.
Tensor attention_pool(Tape& tape, const Tensor& projected, const Tensor& prototype);

// Mean over the batch of (1 - <w_hat, p_c>) + (1 - <f_hat, p_c>); pooled
// vectors are normalized inside.
Tensor etf_alignment_loss(Tape& tape, const std::vector<PooledPair>& batch, const EtfPrototypes& protos);

// Gaussian-perturbed copies of the stored per-category modality means
// (un-normalized; normalization happens inside the alignment loss).
std::vector<PooledPair> synth_pseudo_features(const std::map<int, Tensor>& text_means,
                                              const std::map<int, Tensor>& video_means, double sigma,
                                              int count_per_category, std::uint64_t seed);

// Row-wise KL between softened similarity distributions of the previous and
// current model, with the symmetric column-wise term averaged in unless
// rowwise_only is set. The previous matrix is treated as a constant.
Tensor crp_loss(Tape& tape, const SimilarityMatrix& curr, const SimilarityMatrix& prev, double tau2,
                bool rowwise_only = false);

// Symmetric InfoNCE over rows and columns of a square similarity matrix whose
// diagonal holds the matched pairs.
Tensor scl_loss(Tape& tape, const SimilarityMatrix& sim, double tau);

struct Batch {
  std::vector<Tensor> texts;   // raw N x D token sequences
  std::vector<Tensor> videos;  // raw M x D frame sequences
  std::vector<int> categories;
};

struct LossBreakdown {
  Tensor total;
  double scl = 0.0;
  double etf = 0.0;
  double crp = 0.0;
};

// Composite objective: L_SCL + lambda1 * L_ETF for the base task, plus
// lambda2 * L_CRP (and pseudo features for every old category in the ETF
// term) for incremental tasks. `state` supplies the stored category means;
// `bound` carries the tape-bound parameters being optimized.
LossBreakdown total_loss(Tape& tape, const Batch& batch, const ModelState& state, const BoundModel& bound,
                         const ModelState* prev, const EtfPrototypes& protos, const LossConfig& cfg,
                         int task_index, std::uint64_t pseudo_seed);

}  // namespace saln

#endif
