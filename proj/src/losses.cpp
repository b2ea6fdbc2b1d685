#include "saln/losses.hpp"

#include <cmath>
#include <string>

#include "saln/rng.hpp"

namespace saln {

void LossConfig::validate() const {
  if (tau <= 0.0 || tau2 <= 0.0) fail(ErrCode::NonPositiveTemperature, "loss temperatures must be > 0");
  if (sigma < 0.0) fail(ErrCode::InvalidConfig, "sigma must be >= 0");
  if (lambda1 < 0.0 || lambda2 < 0.0) fail(ErrCode::InvalidConfig, "loss weights must be >= 0");
  if (pseudo_per_category < 0) fail(ErrCode::InvalidConfig, "pseudo_per_category must be >= 0");
}

Tensor attention_pool(Tape& tape, const Tensor& projected, const Tensor& prototype) {
  if (projected.rank() != 2) fail(ErrCode::ShapeMismatch, "attention_pool expects a sequence matrix");
  if (projected.rows() < 1) fail(ErrCode::EmptySequence, "attention_pool on empty sequence");
  if (projected.cols() != prototype.numel()) fail(ErrCode::ShapeMismatch, "prototype width mismatch");
  Tensor scores = tape.matvec(projected, prototype);
  Tensor weights = tape.softmax_rows(scores, 1.0);
  return tape.matvec(tape.transpose(projected), weights);
}

Tensor etf_alignment_loss(Tape& tape, const std::vector<PooledPair>& batch, const EtfPrototypes& protos) {
  if (batch.empty()) fail(ErrCode::EmptySequence, "empty batch");
  Tensor acc;
  bool first = true;
  for (const auto& pair : batch) {
    if (pair.category < 0 || pair.category >= protos.C)
      fail(ErrCode::UnknownCategory, "no prototype for category " + std::to_string(pair.category));
    Tensor p = protos.prototype(pair.category);
    Tensor w_hat = tape.normalize_rows(pair.w_bar);
    Tensor f_hat = tape.normalize_rows(pair.f_bar);
    Tensor term = tape.sub(Tensor::scalar(2.0), tape.add(tape.dot(w_hat, p), tape.dot(f_hat, p)));
    acc = first ? term : tape.add(acc, term);
    first = false;
  }
  return tape.scale(acc, 1.0 / static_cast<double>(batch.size()));
}

std::vector<PooledPair> synth_pseudo_features(const std::map<int, Tensor>& text_means,
                                              const std::map<int, Tensor>& video_means, double sigma,
                                              int count_per_category, std::uint64_t seed) {
  if (sigma < 0.0) fail(ErrCode::InvalidConfig, "sigma must be >= 0");
  std::vector<PooledPair> out;
  for (const auto& [cat, mu_t] : text_means) {
    auto it = video_means.find(cat);
    if (it == video_means.end())
      fail(ErrCode::CategoryCountMismatch, "missing video mean for category " + std::to_string(cat));
    const Tensor& mu_v = it->second;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cat)));
    for (int i = 0; i < count_per_category; ++i) {
      Tensor w = mu_t, f = mu_v;
      for (auto& x : w.values) x += rng.normal(0.0, sigma);
      for (auto& x : f.values) x += rng.normal(0.0, sigma);
      out.push_back(PooledPair{std::move(w), std::move(f), cat});
    }
  }
  return out;
}

namespace {

// averaged row-wise KL(prev || curr) of the softened distributions
Tensor crp_direction(Tape& tape, const Tensor& curr, const Tensor& prev, double tau2) {
  Tensor p = tape.softmax_rows(tape.scale(prev, 1.0 / tau2), 1.0);  // constant anchor
  Tensor q = tape.softmax_rows(tape.scale(curr, 1.0 / tau2), 1.0);
  Tensor log_ratio = tape.sub(tape.log_floor(p, kKlFloor), tape.log_floor(q, kKlFloor));
  Tensor row_kl = tape.row_sum(tape.mul(p, log_ratio));
  return tape.mean(row_kl);
}

}  // namespace

Tensor crp_loss(Tape& tape, const SimilarityMatrix& curr, const SimilarityMatrix& prev, double tau2,
                bool rowwise_only) {
  if (tau2 <= 0.0) fail(ErrCode::NonPositiveTemperature, "tau2 must be > 0");
  if (curr.S.shape != prev.S.shape) fail(ErrCode::ShapeMismatch, "similarity matrices differ in shape");
  if (curr.S.rank() != 2 || curr.S.rows() != curr.S.cols())
    fail(ErrCode::ShapeMismatch, "similarity matrix must be square");
  // the previous model's matrix is a fixed relational anchor
  Tensor prev_const(prev.S.shape, prev.S.values);
  Tensor row_term = crp_direction(tape, curr.S, prev_const, tau2);
  if (rowwise_only) return row_term;
  Tensor col_term = crp_direction(tape, tape.transpose(curr.S), tape.transpose(prev_const), tau2);
  return tape.scale(tape.add(row_term, col_term), 0.5);
}

Tensor scl_loss(Tape& tape, const SimilarityMatrix& sim, double tau) {
  if (tau <= 0.0) fail(ErrCode::NonPositiveTemperature, "tau must be > 0");
  if (sim.S.rank() != 2 || sim.S.rows() != sim.S.cols())
    fail(ErrCode::ShapeMismatch, "contrastive loss needs a square matrix");
  Tensor logits = tape.scale(sim.S, 1.0 / tau);
  Tensor t2v = tape.mean(tape.sub(tape.logsumexp_rows(logits), tape.diag(logits)));
  Tensor logits_t = tape.transpose(logits);
  Tensor v2t = tape.mean(tape.sub(tape.logsumexp_rows(logits_t), tape.diag(logits_t)));
  return tape.scale(tape.add(t2v, v2t), 0.5);
}

LossBreakdown total_loss(Tape& tape, const Batch& batch, const ModelState& state, const BoundModel& bound,
                         const ModelState* prev, const EtfPrototypes& protos, const LossConfig& cfg,
                         int task_index, std::uint64_t pseudo_seed) {
  cfg.validate();
  if (task_index > 1 && prev == nullptr)
    fail(ErrCode::MissingSnapshot, "incremental task needs the previous model snapshot");
  if (task_index <= 1 && prev != nullptr)
    fail(ErrCode::InvalidConfig, "base task must not receive a snapshot");
  if (batch.texts.size() != batch.videos.size() || batch.texts.size() != batch.categories.size())
    fail(ErrCode::BatchSizeMismatch, "batch components differ in size");

  LossBreakdown out;
  // encode the batch once; similarity and pooling share the same subgraph
  const int n_per = batch.texts[0].rows();
  const int m_per = batch.videos[0].rows();
  for (const auto& t : batch.texts)
    if (t.rows() != n_per) fail(ErrCode::ShapeMismatch, "texts must share a token count");
  for (const auto& v : batch.videos)
    if (v.rows() != m_per) fail(ErrCode::ShapeMismatch, "videos must share a frame count");
  Tensor word_feats = encode_text_rows(tape, tape.concat_rows(batch.texts), bound);
  std::vector<Tensor> frame_parts;
  for (const auto& v : batch.videos) frame_parts.push_back(encode_video(tape, v, bound));
  Tensor frame_feats = tape.concat_rows(frame_parts);

  SimilarityMatrix s_curr{pairwise_sim(tape, word_feats, n_per, frame_feats, m_per), "theta_k"};
  Tensor scl = scl_loss(tape, s_curr, cfg.tau);
  out.scl = scl.item();
  Tensor total = scl;

  if (cfg.lambda1 > 0.0) {
    Tensor proj_words = project_to_prototype_space(tape, word_feats, bound, true);
    Tensor proj_frames = project_to_prototype_space(tape, frame_feats, bound, false);

    std::vector<PooledPair> pooled;
    for (std::size_t i = 0; i < batch.texts.size(); ++i) {
      const int cat = batch.categories[i];
      Tensor p = protos.prototype(cat);
      Tensor w_seq = tape.slice_rows(proj_words, static_cast<int>(i) * n_per, static_cast<int>(i + 1) * n_per);
      Tensor f_seq = tape.slice_rows(proj_frames, static_cast<int>(i) * m_per, static_cast<int>(i + 1) * m_per);
      pooled.push_back(PooledPair{attention_pool(tape, w_seq, p), attention_pool(tape, f_seq, p), cat});
    }
    if (task_index > 1 && !state.text_means.empty() && cfg.pseudo_per_category > 0) {
      // pseudo features are noisy pre-head category means; passing them
      // through the current heads keeps old categories anchored to their
      // prototypes without touching old data
      auto pseudo = synth_pseudo_features(state.text_means, state.video_means, cfg.sigma,
                                          cfg.pseudo_per_category, pseudo_seed);
      std::vector<Tensor> w_rows, f_rows;
      for (const auto& pp : pseudo) {
        w_rows.push_back(tape.reshape(pp.w_bar, {1, bound.cfg.width}));
        f_rows.push_back(tape.reshape(pp.f_bar, {1, bound.cfg.width}));
      }
      Tensor w_proj = project_to_prototype_space(tape, tape.concat_rows(w_rows), bound, true);
      Tensor f_proj = project_to_prototype_space(tape, tape.concat_rows(f_rows), bound, false);
      for (std::size_t i = 0; i < pseudo.size(); ++i) {
        Tensor w = tape.reshape(tape.slice_rows(w_proj, static_cast<int>(i), static_cast<int>(i) + 1),
                                {bound.cfg.proj_dim});
        Tensor f = tape.reshape(tape.slice_rows(f_proj, static_cast<int>(i), static_cast<int>(i) + 1),
                                {bound.cfg.proj_dim});
        pooled.push_back(PooledPair{std::move(w), std::move(f), pseudo[i].category});
      }
    }
    Tensor etf = etf_alignment_loss(tape, pooled, protos);
    out.etf = etf.item();
    total = tape.add(total, tape.scale(etf, cfg.lambda1));
  }

  if (task_index > 1 && cfg.lambda2 > 0.0) {
    Tape prev_tape;  // snapshot forward pass carries no gradients
    BoundModel prev_bound = bind(prev_tape, *prev, false);
    SimilarityMatrix s_prev = sim_matrix(prev_tape, batch.texts, batch.videos, prev_bound, "theta_prev");
    Tensor crp = crp_loss(tape, s_curr, s_prev, cfg.tau2, cfg.crp_rowwise_only);
    out.crp = crp.item();
    total = tape.add(total, tape.scale(crp, cfg.lambda2));
  }

  if (!std::isfinite(total.item())) fail(ErrCode::NonFiniteFunctionValue, "non-finite total loss");
  out.total = total;
  return out;
}

}  // namespace saln
