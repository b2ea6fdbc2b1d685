#ifndef SALN_SIMILARITY_HPP
#define SALN_SIMILARITY_HPP

#include <string>
#include <vector>

#include "saln/encoders.hpp"
#include "saln/tensor.hpp"

namespace saln {

// Cross-modal similarity matrix over a batch of text-video pairs, tagged with
// the parameter snapshot that produced it.
struct SimilarityMatrix {
  Tensor S;  // B x B
  std::string model_tag;
};

// Symmetric max-mean aggregation of word/frame cosines: rows are
// l2-normalized inside the kernel before the cosines are taken.
Tensor frame_word_sim(Tape& tape, const Tensor& word_feats, const Tensor& frame_feats);

// All-pairs frame_word_sim between stacked word features (rows grouped per
// text, n_per each) and stacked frame features (m_per per video).
Tensor pairwise_sim(Tape& tape, const Tensor& all_words, int n_per, const Tensor& all_frames, int m_per);

// S[i][j] = frame_word_sim(encode_text(t_i), encode_video(v_j)); equal batch
// sizes required. All texts must share a token count and all videos a frame
// count.
SimilarityMatrix sim_matrix(Tape& tape, const std::vector<Tensor>& texts, const std::vector<Tensor>& videos,
                            const BoundModel& m, const std::string& tag);

// Rectangular query x gallery score matrix under a model snapshot (no
// gradient use).
Tensor score_matrix(const std::vector<Tensor>& query_texts, const std::vector<Tensor>& gallery_videos,
                    const ModelState& state);

}  // namespace saln

#endif
