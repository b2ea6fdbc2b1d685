#ifndef SALN_ENCODERS_HPP
#define SALN_ENCODERS_HPP

#include <cstdint>
#include <map>
#include <string>

#include "saln/tensor.hpp"

namespace saln {

struct EncoderConfig {
  int layers = 2;       // L
  int width = 32;       // token/frame feature width D
  int proj_dim = 24;    // ETF prototype dimension d (must cover the category count)
  int experts = 4;      // I
  int k_active = 2;     // k_e
  int rank = 4;         // LoRA rank r
  int max_tokens = 8;   // N_max
  int frames = 4;       // M
  int head_hidden = 32;

  void validate() const;
};

// Frozen base projections plus trainable adapters / heads, and the stored
// per-category modality means used for pseudo-feature replay. Copyable; a
// copy is a snapshot.
struct ModelState {
  EncoderConfig cfg;
  std::map<std::string, Tensor> frozen;
  std::map<std::string, Tensor> trainable;
  std::map<int, Tensor> text_means;   // unit-norm, in prototype space
  std::map<int, Tensor> video_means;

  static ModelState init(const EncoderConfig& cfg, std::uint64_t seed);
};

// FNV-1a over the raw parameter bytes, in name order.
std::uint64_t checksum(const std::map<std::string, Tensor>& params);
std::uint64_t frozen_checksum(const ModelState& s);
std::uint64_t trainable_checksum(const ModelState& s);

// Model parameters materialized on a tape: trainable entries become tape
// parameters when `train` is set, everything else stays constant.
struct BoundModel {
  EncoderConfig cfg;
  std::map<std::string, Tensor> p;

  const Tensor& at(const std::string& name) const;
};

BoundModel bind(Tape& tape, const ModelState& s, bool train);

// Gating weights for one token: softmax over the top-k_e router logits,
// zeros elsewhere (exactly k_e nonzero entries summing to 1).
Tensor moe_gates(Tape& tape, const Tensor& x, const BoundModel& m, int layer);
// One adapted text layer for a single token: frozen linear output plus the
// gated expert LoRA residual.
Tensor moe_forward(Tape& tape, const Tensor& x, const BoundModel& m, int layer);

// Self-attention over an M x D frame sequence with LoRA-augmented query and
// value projections; the key path is the frozen projection.
Tensor lora_attention(Tape& tape, const Tensor& x, const BoundModel& m, int layer);

// Token rows through the adapted text stack; rows are independent, so any
// number of stacked sequences can be encoded in one call.
Tensor encode_text_rows(Tape& tape, const Tensor& tokens, const BoundModel& m);
// N x D token sequence -> N x D word features (validates 1 <= N <= N_max).
Tensor encode_text(Tape& tape, const Tensor& tokens, const BoundModel& m);
// M x D frame sequence -> M x D frame features.
Tensor encode_video(Tape& tape, const Tensor& frames, const BoundModel& m);

// Two-layer projection head (linear -> tanh -> linear) applied row-wise,
// mapping width-D features into the prototype space. `text_head` selects g_t.
Tensor project_to_prototype_space(Tape& tape, const Tensor& feats, const BoundModel& m, bool text_head);

// Binary checkpoint container: "SALN" magic, u32 version, u32 block count,
// then per block: u32 name length, name bytes, u32 rank, u32 dims,
// little-endian f64 data.
void save_checkpoint(const ModelState& s, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace saln

#endif
