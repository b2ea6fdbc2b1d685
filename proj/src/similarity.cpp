#include "saln/similarity.hpp"

namespace saln {

Tensor pairwise_sim(Tape& tape, const Tensor& all_words, int n_per, const Tensor& all_frames, int m_per) {
  if (n_per < 1 || m_per < 1) fail(ErrCode::EmptySequence, "empty word or frame sequence");
  if (all_words.cols() != all_frames.cols()) fail(ErrCode::ShapeMismatch, "feature widths differ");
  Tensor w = tape.normalize_rows(all_words);
  Tensor f = tape.normalize_rows(all_frames);
  Tensor cos = tape.matmul(w, tape.transpose(f));
  return tape.block_maxmean(cos, n_per, m_per);
}

Tensor frame_word_sim(Tape& tape, const Tensor& word_feats, const Tensor& frame_feats) {
  if (word_feats.rank() != 2 || frame_feats.rank() != 2)
    fail(ErrCode::ShapeMismatch, "frame_word_sim expects feature matrices");
  if (word_feats.rows() < 1 || frame_feats.rows() < 1)
    fail(ErrCode::EmptySequence, "empty word or frame sequence");
  Tensor s = pairwise_sim(tape, word_feats, word_feats.rows(), frame_feats, frame_feats.rows());
  return tape.reshape(s, {});
}

SimilarityMatrix sim_matrix(Tape& tape, const std::vector<Tensor>& texts, const std::vector<Tensor>& videos,
                            const BoundModel& m, const std::string& tag) {
  if (texts.size() != videos.size()) fail(ErrCode::BatchSizeMismatch, "batch sizes differ");
  if (texts.empty()) fail(ErrCode::BatchSizeMismatch, "empty batch");
  const int n_per = texts[0].rows();
  const int m_per = videos[0].rows();
  for (const auto& t : texts)
    if (t.rows() != n_per) fail(ErrCode::ShapeMismatch, "texts must share a token count");
  for (const auto& v : videos)
    if (v.rows() != m_per) fail(ErrCode::ShapeMismatch, "videos must share a frame count");

  Tensor stacked_tokens = tape.concat_rows(texts);
  Tensor word_feats = encode_text_rows(tape, stacked_tokens, m);

  std::vector<Tensor> frame_parts;
  frame_parts.reserve(videos.size());
  for (const auto& v : videos) frame_parts.push_back(encode_video(tape, v, m));
  Tensor frame_feats = tape.concat_rows(frame_parts);

  return SimilarityMatrix{pairwise_sim(tape, word_feats, n_per, frame_feats, m_per), tag};
}

Tensor score_matrix(const std::vector<Tensor>& query_texts, const std::vector<Tensor>& gallery_videos,
                    const ModelState& state) {
  if (query_texts.empty() || gallery_videos.empty()) fail(ErrCode::EmptySequence, "empty query or gallery");
  Tape tape;
  BoundModel m = bind(tape, state, false);
  const int n_per = query_texts[0].rows();
  const int m_per = gallery_videos[0].rows();

  Tensor words = encode_text_rows(tape, tape.concat_rows(query_texts), m);
  std::vector<Tensor> frame_parts;
  frame_parts.reserve(gallery_videos.size());
  for (const auto& v : gallery_videos) frame_parts.push_back(encode_video(tape, v, m));
  Tensor frames = tape.concat_rows(frame_parts);
  return pairwise_sim(tape, words, n_per, frames, m_per);
}

}  // namespace saln
