#include "saln/encoders.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "saln/rng.hpp"

namespace saln {

void EncoderConfig::validate() const {
  if (layers < 1 || width < 1 || proj_dim < 1 || head_hidden < 1 || max_tokens < 1 || frames < 1)
    fail(ErrCode::InvalidConfig, "encoder dimensions must be positive");
  if (experts < 1) fail(ErrCode::InvalidConfig, "need at least one expert");
  if (k_active < 1 || k_active > experts) fail(ErrCode::KTooLarge, "k_active outside [1, experts]");
  if (rank < 1 || rank > width / 2) fail(ErrCode::InvalidConfig, "lora rank outside [1, width/2]");
}

namespace {

std::string text_name(int layer, const std::string& leaf) {
  return "text." + std::to_string(layer) + "." + leaf;
}
std::string video_name(int layer, const std::string& leaf) {
  return "video." + std::to_string(layer) + "." + leaf;
}

}  // namespace

ModelState ModelState::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState s;
  s.cfg = cfg;
  const int d = cfg.width;
  Rng rng(mix_seed(seed, 0x30de1));
  auto gauss = [&rng](int r, int c, double sd) {
    return Tensor::matrix(r, c, rng.normal_vec(static_cast<std::size_t>(r) * c, sd));
  };
  const double wsd = 1.0 / std::sqrt(static_cast<double>(d));

  // The frozen text stack mimics a pre-trained, cross-modally aligned
  // backbone: identity plus a Gaussian perturbation, so raw matched pairs
  // keep a usable zero-shot signal that the adapters then refine.
  for (int l = 0; l < cfg.layers; ++l) {
    Tensor w = gauss(d, d, 0.5 * wsd);
    for (int i = 0; i < d; ++i) w.values[static_cast<std::size_t>(i) * d + i] += 1.0;
    s.frozen[text_name(l, "W")] = std::move(w);
    s.trainable[text_name(l, "router")] = gauss(d, cfg.experts, wsd);
    for (int i = 0; i < cfg.experts; ++i) {
      s.trainable[text_name(l, "expert" + std::to_string(i) + ".A")] = gauss(d, cfg.rank, wsd);
      s.trainable[text_name(l, "expert" + std::to_string(i) + ".B")] = Tensor::zeros({cfg.rank, d});
    }
  }
  for (int l = 0; l < cfg.layers; ++l) {
    s.frozen[video_name(l, "Wq")] = gauss(d, d, wsd);
    s.frozen[video_name(l, "Wk")] = gauss(d, d, wsd);
    s.frozen[video_name(l, "Wv")] = gauss(d, d, wsd);
    s.trainable[video_name(l, "loraq.A")] = gauss(d, cfg.rank, wsd);
    s.trainable[video_name(l, "loraq.B")] = Tensor::zeros({cfg.rank, d});
    s.trainable[video_name(l, "lorav.A")] = gauss(d, cfg.rank, wsd);
    s.trainable[video_name(l, "lorav.B")] = Tensor::zeros({cfg.rank, d});
  }
  const double hsd = 1.0 / std::sqrt(static_cast<double>(cfg.head_hidden));
  // small W1 keeps the tanh hidden layer near its linear regime at init, so
  // per-task head updates interfere little across category subspaces
  for (const char* h : {"head.t.", "head.v."}) {
    s.trainable[std::string(h) + "W1"] = gauss(d, cfg.head_hidden, 0.3 * wsd);
    s.trainable[std::string(h) + "b1"] = Tensor::zeros({cfg.head_hidden});
    s.trainable[std::string(h) + "W2"] = gauss(cfg.head_hidden, cfg.proj_dim, hsd);
    s.trainable[std::string(h) + "b2"] = Tensor::zeros({cfg.proj_dim});
  }
  return s;
}

std::uint64_t checksum(const std::map<std::string, Tensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    feed(name.data(), name.size());
    feed(t.values.data(), t.values.size() * sizeof(double));
  }
  return h;
}

std::uint64_t frozen_checksum(const ModelState& s) { return checksum(s.frozen); }
std::uint64_t trainable_checksum(const ModelState& s) { return checksum(s.trainable); }

const Tensor& BoundModel::at(const std::string& name) const {
  auto it = p.find(name);
  if (it == p.end()) fail(ErrCode::InvalidConfig, "missing model parameter " + name);
  return it->second;
}

BoundModel bind(Tape& tape, const ModelState& s, bool train) {
  BoundModel m;
  m.cfg = s.cfg;
  for (const auto& [name, t] : s.frozen) m.p[name] = t;
  for (const auto& [name, t] : s.trainable) m.p[name] = train ? tape.param(t, name) : t;
  return m;
}

namespace {

// gating + expert LoRA residual for a block of token rows
Tensor moe_residual(Tape& t, const Tensor& x, const BoundModel& m, int layer) {
  const Tensor& router = m.at(text_name(layer, "router"));
  Tensor gates = t.softmax_topk_rows(t.matmul(x, router), m.cfg.k_active);
  Tensor out;
  for (int i = 0; i < m.cfg.experts; ++i) {
    const Tensor& a = m.at(text_name(layer, "expert" + std::to_string(i) + ".A"));
    const Tensor& b = m.at(text_name(layer, "expert" + std::to_string(i) + ".B"));
    Tensor expert = t.matmul(t.matmul(x, a), b);
    Tensor gated = t.scale_rows(expert, t.col(gates, i));
    out = (i == 0) ? gated : t.add(out, gated);
  }
  return out;
}

}  // namespace

Tensor moe_gates(Tape& tape, const Tensor& x, const BoundModel& m, int layer) {
  if (x.rank() != 1 || x.numel() != m.cfg.width) fail(ErrCode::ShapeMismatch, "moe_gates: bad token width");
  Tensor row = tape.reshape(x, {1, m.cfg.width});
  Tensor g = tape.softmax_topk_rows(tape.matmul(row, m.at(text_name(layer, "router"))), m.cfg.k_active);
  return tape.reshape(g, {m.cfg.experts});
}

Tensor moe_forward(Tape& tape, const Tensor& x, const BoundModel& m, int layer) {
  if (x.rank() != 1 || x.numel() != m.cfg.width) fail(ErrCode::ShapeMismatch, "moe_forward: bad token width");
  Tensor row = tape.reshape(x, {1, m.cfg.width});
  Tensor frozen_out = tape.matmul(row, m.at(text_name(layer, "W")));
  Tensor out = tape.add(frozen_out, moe_residual(tape, row, m, layer));
  return tape.reshape(out, {m.cfg.width});
}

Tensor lora_attention(Tape& tape, const Tensor& x, const BoundModel& m, int layer) {
  if (x.rank() != 2 || x.cols() != m.cfg.width) fail(ErrCode::ShapeMismatch, "lora_attention: bad input");
  const Tensor& wq = m.at(video_name(layer, "Wq"));
  const Tensor& wk = m.at(video_name(layer, "Wk"));
  const Tensor& wv = m.at(video_name(layer, "Wv"));
  Tensor dwq = tape.matmul(m.at(video_name(layer, "loraq.A")), m.at(video_name(layer, "loraq.B")));
  Tensor dwv = tape.matmul(m.at(video_name(layer, "lorav.A")), m.at(video_name(layer, "lorav.B")));
  Tensor q = tape.matmul(x, tape.add(wq, dwq));
  Tensor k = tape.matmul(x, wk);
  Tensor v = tape.matmul(x, tape.add(wv, dwv));
  Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(static_cast<double>(m.cfg.width)));
  return tape.matmul(tape.softmax_rows(scores, 1.0), v);
}

Tensor encode_text_rows(Tape& tape, const Tensor& tokens, const BoundModel& m) {
  if (tokens.rank() != 2 || tokens.cols() != m.cfg.width)
    fail(ErrCode::ShapeMismatch, "encode_text_rows: bad token width");
  Tensor x = tokens;
  for (int l = 0; l < m.cfg.layers; ++l) {
    Tensor frozen_out = tape.matmul(x, m.at(text_name(l, "W")));
    x = tape.add(frozen_out, moe_residual(tape, x, m, l));
    if (l + 1 < m.cfg.layers) x = tape.tanh_map(x);
  }
  return x;
}

Tensor encode_text(Tape& tape, const Tensor& tokens, const BoundModel& m) {
  if (tokens.rank() != 2) fail(ErrCode::ShapeMismatch, "encode_text expects N x D tokens");
  if (tokens.rows() < 1) fail(ErrCode::EmptySequence, "no tokens");
  if (tokens.rows() > m.cfg.max_tokens) fail(ErrCode::InvalidConfig, "token count exceeds max_tokens");
  return encode_text_rows(tape, tokens, m);
}

Tensor encode_video(Tape& tape, const Tensor& frames, const BoundModel& m) {
  if (frames.rank() != 2) fail(ErrCode::ShapeMismatch, "encode_video expects M x D frames");
  if (frames.rows() < 1) fail(ErrCode::EmptySequence, "no frames");
  Tensor x = frames;
  for (int l = 0; l < m.cfg.layers; ++l) x = tape.add(x, lora_attention(tape, x, m, l));
  return x;
}

Tensor project_to_prototype_space(Tape& tape, const Tensor& feats, const BoundModel& m, bool text_head) {
  if (feats.rank() != 2 || feats.cols() != m.cfg.width)
    fail(ErrCode::ShapeMismatch, "projection expects rows of width D");
  const std::string h = text_head ? "head.t." : "head.v.";
  Tensor hidden = tape.tanh_map(tape.add_rowvec(tape.matmul(feats, m.at(h + "W1")), m.at(h + "b1")));
  return tape.add_rowvec(tape.matmul(hidden, m.at(h + "W2")), m.at(h + "b2"));
}

// --- checkpoint container ----------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'A', 'L', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) fail(ErrCode::IoError, "truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double x) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(x);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) fail(ErrCode::IoError, "truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

void put_block(std::ostream& os, const std::string& name, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
  for (double x : t.values) put_f64(os, x);
}

std::pair<std::string, Tensor> get_block(std::istream& is) {
  const std::uint32_t name_len = get_u32(is);
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  if (!is) fail(ErrCode::IoError, "truncated checkpoint");
  const std::uint32_t rank = get_u32(is);
  Shape shape;
  int n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape.push_back(static_cast<int>(get_u32(is)));
    n *= shape.back();
  }
  std::vector<double> vals(static_cast<std::size_t>(n));
  for (auto& x : vals) x = get_f64(is);
  return {name, Tensor(std::move(shape), std::move(vals))};
}

}  // namespace

void save_checkpoint(const ModelState& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrCode::IoError, "cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  const std::uint32_t count = 1u + static_cast<std::uint32_t>(s.frozen.size() + s.trainable.size() +
                                                              s.text_means.size() + s.video_means.size());
  put_u32(os, count);
  const auto& c = s.cfg;
  put_block(os, "__config__",
            Tensor::vec({static_cast<double>(c.layers), static_cast<double>(c.width),
                         static_cast<double>(c.proj_dim), static_cast<double>(c.experts),
                         static_cast<double>(c.k_active), static_cast<double>(c.rank),
                         static_cast<double>(c.max_tokens), static_cast<double>(c.frames),
                         static_cast<double>(c.head_hidden)}));
  for (const auto& [name, t] : s.frozen) put_block(os, "frozen." + name, t);
  for (const auto& [name, t] : s.trainable) put_block(os, "train." + name, t);
  for (const auto& [cat, t] : s.text_means) put_block(os, "mean.text." + std::to_string(cat), t);
  for (const auto& [cat, t] : s.video_means) put_block(os, "mean.video." + std::to_string(cat), t);
  if (!os) fail(ErrCode::IoError, "write failed for " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrCode::IoError, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) fail(ErrCode::IoError, "bad checkpoint magic");
  if (get_u32(is) != kVersion) fail(ErrCode::IoError, "unsupported checkpoint version");
  const std::uint32_t count = get_u32(is);
  ModelState s;
  bool have_config = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = get_block(is);
    if (name == "__config__") {
      if (t.numel() != 9) fail(ErrCode::IoError, "bad config block");
      s.cfg.layers = static_cast<int>(t.at(0));
      s.cfg.width = static_cast<int>(t.at(1));
      s.cfg.proj_dim = static_cast<int>(t.at(2));
      s.cfg.experts = static_cast<int>(t.at(3));
      s.cfg.k_active = static_cast<int>(t.at(4));
      s.cfg.rank = static_cast<int>(t.at(5));
      s.cfg.max_tokens = static_cast<int>(t.at(6));
      s.cfg.frames = static_cast<int>(t.at(7));
      s.cfg.head_hidden = static_cast<int>(t.at(8));
      have_config = true;
    } else if (name.rfind("frozen.", 0) == 0) {
      s.frozen[name.substr(7)] = std::move(t);
    } else if (name.rfind("train.", 0) == 0) {
      s.trainable[name.substr(6)] = std::move(t);
    } else if (name.rfind("mean.text.", 0) == 0) {
      s.text_means[std::stoi(name.substr(10))] = std::move(t);
    } else if (name.rfind("mean.video.", 0) == 0) {
      s.video_means[std::stoi(name.substr(11))] = std::move(t);
    } else {
      fail(ErrCode::IoError, "unknown checkpoint block " + name);
    }
  }
  if (!have_config) fail(ErrCode::IoError, "checkpoint missing config block");
  return s;
}

}  // namespace saln
