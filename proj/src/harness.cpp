#include "saln/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "saln/csv.hpp"
#include "saln/log.hpp"
#include "saln/rng.hpp"
#include "saln/similarity.hpp"

namespace saln {

void StreamConfig::validate() const {
  if (k_tasks < 1 || cats_per_task < 1 || shots < 1 || test_per_category < 1 || n_tokens < 1 ||
      m_frames < 1 || width < 1 || latent_dim < 1)
    fail(ErrCode::InvalidConfig, "stream counts must be >= 1");
  if (noise_offset < 0 || noise_token < 0) fail(ErrCode::InvalidConfig, "noise levels must be >= 0");
}

namespace {

Tensor gaussian_matrix(Rng& rng, int r, int c, double sd) {
  return Tensor::matrix(r, c, rng.normal_vec(static_cast<std::size_t>(r) * c, sd));
}

LabeledPair make_pair(const Tensor& base_t, const Tensor& base_v, const StreamConfig& cfg, int category,
                      Rng& rng) {
  const int d = cfg.width;
  std::vector<double> offset = rng.normal_vec(static_cast<std::size_t>(d), cfg.noise_offset);
  Tensor text = Tensor::zeros({cfg.n_tokens, d});
  for (int n = 0; n < cfg.n_tokens; ++n)
    for (int i = 0; i < d; ++i)
      text.values[static_cast<std::size_t>(n) * d + i] =
          base_t.at(i) + offset[i] + rng.normal(0.0, cfg.noise_token);
  Tensor video = Tensor::zeros({cfg.m_frames, d});
  for (int m = 0; m < cfg.m_frames; ++m)
    for (int i = 0; i < d; ++i)
      video.values[static_cast<std::size_t>(m) * d + i] =
          base_v.at(i) + offset[i] + rng.normal(0.0, cfg.noise_token);
  return LabeledPair{std::move(text), std::move(video), category};
}

}  // namespace

TaskStream generate_task_stream(const StreamConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TaskStream stream;
  stream.cfg = cfg;
  stream.seed = seed;
  stream.total_categories = cfg.k_tasks * cfg.cats_per_task;

  // fixed per-modality linear maps, distinct but shared across the stream
  Rng map_rng(mix_seed(seed, 0x11));
  const double msd = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  Tensor map_t = gaussian_matrix(map_rng, cfg.width, cfg.latent_dim, msd);
  Tensor map_v = gaussian_matrix(map_rng, cfg.width, cfg.latent_dim, msd);

  Tape tape;
  for (int k = 1; k <= cfg.k_tasks; ++k) {
    TaskDataset task;
    task.index = k;
    for (int j = 0; j < cfg.cats_per_task; ++j) {
      const int c = (k - 1) * cfg.cats_per_task + j;
      task.categories.push_back(c);
      Rng cat_rng(mix_seed(seed, 0x100 + static_cast<std::uint64_t>(c)));
      Tensor u = l2_normalize(tape, Tensor::vec(cat_rng.normal_vec(static_cast<std::size_t>(cfg.latent_dim))));
      Tensor base_t = tape.matvec(map_t, u);
      Tensor base_v = tape.matvec(map_v, u);
      Rng pair_rng(mix_seed(seed, 0x10000 + static_cast<std::uint64_t>(c)));
      for (int s = 0; s < cfg.shots; ++s) task.train.push_back(make_pair(base_t, base_v, cfg, c, pair_rng));
      for (int s = 0; s < cfg.test_per_category; ++s)
        task.test.push_back(make_pair(base_t, base_v, cfg, c, pair_rng));
    }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

// --- config ------------------------------------------------------------------

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrCode::InvalidConfig, "cannot open config " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrCode::InvalidConfig, "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "k_tasks") cfg.stream.k_tasks = std::stoi(value);
      else if (key == "cats_per_task") cfg.stream.cats_per_task = std::stoi(value);
      else if (key == "shots") cfg.stream.shots = std::stoi(value);
      else if (key == "test_per_cat") cfg.stream.test_per_category = std::stoi(value);
      else if (key == "n_tokens") cfg.stream.n_tokens = std::stoi(value);
      else if (key == "m_frames") cfg.stream.m_frames = std::stoi(value);
      else if (key == "latent_dim") cfg.stream.latent_dim = std::stoi(value);
      else if (key == "noise_offset") cfg.stream.noise_offset = std::stod(value);
      else if (key == "noise_token") cfg.stream.noise_token = std::stod(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "batch") cfg.batch = std::stoi(value);
      else if (key == "lr_base") cfg.lr_base = std::stod(value);
      else if (key == "lr_incr") cfg.lr_incr = std::stod(value);
      else if (key == "head_lr_mult") cfg.head_lr_mult = std::stod(value);
      else if (key == "lambda1") cfg.loss.lambda1 = std::stod(value);
      else if (key == "lambda2") cfg.loss.lambda2 = std::stod(value);
      else if (key == "tau") cfg.loss.tau = std::stod(value);
      else if (key == "tau2") cfg.loss.tau2 = std::stod(value);
      else if (key == "sigma") cfg.loss.sigma = std::stod(value);
      else if (key == "pseudo_per_category") cfg.loss.pseudo_per_category = std::stoi(value);
      else if (key == "crp_rowwise") cfg.loss.crp_rowwise_only = std::stoi(value) != 0;
      else if (key == "experts") cfg.enc.experts = std::stoi(value);
      else if (key == "k_e") cfg.enc.k_active = std::stoi(value);
      else if (key == "lora_rank") cfg.enc.rank = std::stoi(value);
      else if (key == "layers") cfg.enc.layers = std::stoi(value);
      else if (key == "dims") {
        const auto comma = value.find(',');
        if (comma == std::string::npos) fail(ErrCode::InvalidConfig, "dims expects D,d");
        cfg.enc.width = std::stoi(value.substr(0, comma));
        cfg.enc.proj_dim = std::stoi(value.substr(comma + 1));
      } else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "ablation") cfg.ablation = value;
      else fail(ErrCode::InvalidConfig, "unknown config key '" + key + "'");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail(ErrCode::InvalidConfig, "bad value for '" + key + "' on line " + std::to_string(lineno));
    }
  }
  cfg.stream.width = cfg.enc.width;
  cfg.enc.max_tokens = std::max(cfg.enc.max_tokens, cfg.stream.n_tokens);
  cfg.enc.frames = cfg.stream.m_frames;
  cfg.stream.validate();
  cfg.enc.validate();
  cfg.loss.validate();
  if (cfg.epochs < 0 || cfg.batch < 1) fail(ErrCode::InvalidConfig, "bad epochs/batch");
  if (cfg.lr_base < 0 || cfg.lr_incr < 0) fail(ErrCode::InvalidConfig, "learning rates must be >= 0");
  apply_ablation(cfg, cfg.ablation);
  return cfg;
}

void apply_ablation(RunConfig& cfg, const std::string& arm) {
  if (arm == "framework") {
    cfg.loss.lambda1 = 0.0;
    cfg.loss.lambda2 = 0.0;
  } else if (arm == "crp") {
    cfg.loss.lambda1 = 0.0;
  } else if (arm == "cetf") {
    cfg.loss.lambda2 = 0.0;
  } else if (arm != "full") {
    fail(ErrCode::InvalidConfig, "unknown ablation arm '" + arm + "'");
  }
  cfg.ablation = arm;
}

std::vector<std::pair<std::string, std::string>> config_echo(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  auto add = [&kv](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
  add("k_tasks", std::to_string(cfg.stream.k_tasks));
  add("cats_per_task", std::to_string(cfg.stream.cats_per_task));
  add("shots", std::to_string(cfg.stream.shots));
  add("test_per_cat", std::to_string(cfg.stream.test_per_category));
  add("n_tokens", std::to_string(cfg.stream.n_tokens));
  add("m_frames", std::to_string(cfg.stream.m_frames));
  add("latent_dim", std::to_string(cfg.stream.latent_dim));
  add("noise_offset", fmt_double(cfg.stream.noise_offset, 4));
  add("noise_token", fmt_double(cfg.stream.noise_token, 4));
  add("epochs", std::to_string(cfg.epochs));
  add("batch", std::to_string(cfg.batch));
  add("lr_base", fmt_double(cfg.lr_base, 6));
  add("lr_incr", fmt_double(cfg.lr_incr, 6));
  add("head_lr_mult", fmt_double(cfg.head_lr_mult, 2));
  add("lambda1", fmt_double(cfg.loss.lambda1, 4));
  add("lambda2", fmt_double(cfg.loss.lambda2, 4));
  add("tau", fmt_double(cfg.loss.tau, 4));
  add("tau2", fmt_double(cfg.loss.tau2, 4));
  add("sigma", fmt_double(cfg.loss.sigma, 4));
  add("pseudo_per_category", std::to_string(cfg.loss.pseudo_per_category));
  add("crp_rowwise", cfg.loss.crp_rowwise_only ? "1" : "0");
  add("experts", std::to_string(cfg.enc.experts));
  add("k_e", std::to_string(cfg.enc.k_active));
  add("lora_rank", std::to_string(cfg.enc.rank));
  add("layers", std::to_string(cfg.enc.layers));
  add("dims", std::to_string(cfg.enc.width) + "," + std::to_string(cfg.enc.proj_dim));
  add("seed", std::to_string(cfg.seed));
  add("ablation", cfg.ablation);
  return kv;
}

// --- optimizer ---------------------------------------------------------------

void Adam::step(std::map<std::string, Tensor>& params, Tape& tape,
                const std::vector<std::pair<std::string, Tensor>>& bound_params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (const auto& [name, bound] : bound_params) {
    const std::vector<double> g = tape.grad(bound);
    auto& target = params.at(name).values;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      target[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

// --- training ----------------------------------------------------------------

namespace {

// pooled representations of a set of pairs: normalized pooled projections
// (prototype space) plus the same attention pooling applied to the pre-head
// encoder features (width D, used for the replay means)
struct PooledFeatures {
  std::vector<Tensor> text;       // unit d-vectors
  std::vector<Tensor> video;      // unit d-vectors
  std::vector<Tensor> text_raw;   // unit D-vectors
  std::vector<Tensor> video_raw;  // unit D-vectors
  std::vector<int> category;
};

PooledFeatures pooled_features(const std::vector<LabeledPair>& pairs, const ModelState& state,
                               const EtfPrototypes& protos) {
  PooledFeatures out;
  if (pairs.empty()) return out;
  Tape tape;
  BoundModel m = bind(tape, state, false);
  std::vector<Tensor> texts, videos;
  for (const auto& p : pairs) {
    texts.push_back(p.text);
    videos.push_back(p.video);
  }
  const int n_per = texts[0].rows(), m_per = videos[0].rows();
  Tensor words = encode_text_rows(tape, tape.concat_rows(texts), m);
  std::vector<Tensor> frame_parts;
  for (const auto& v : videos) frame_parts.push_back(encode_video(tape, v, m));
  Tensor frames = tape.concat_rows(frame_parts);
  Tensor proj_w = project_to_prototype_space(tape, words, m, true);
  Tensor proj_f = project_to_prototype_space(tape, frames, m, false);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Tensor p = protos.prototype(pairs[i].category);
    Tensor w_seq = tape.slice_rows(proj_w, static_cast<int>(i) * n_per, static_cast<int>(i + 1) * n_per);
    Tensor f_seq = tape.slice_rows(proj_f, static_cast<int>(i) * m_per, static_cast<int>(i + 1) * m_per);
    // prototype-guided weights (Eq.-11 style), reused on the raw features
    Tensor alpha = tape.softmax_rows(tape.matvec(w_seq, p), 1.0);
    Tensor beta = tape.softmax_rows(tape.matvec(f_seq, p), 1.0);
    Tensor w_rows = tape.slice_rows(words, static_cast<int>(i) * n_per, static_cast<int>(i + 1) * n_per);
    Tensor f_rows = tape.slice_rows(frames, static_cast<int>(i) * m_per, static_cast<int>(i + 1) * m_per);
    out.text.push_back(tape.normalize_rows(attention_pool(tape, w_seq, p)));
    out.video.push_back(tape.normalize_rows(attention_pool(tape, f_seq, p)));
    out.text_raw.push_back(tape.normalize_rows(tape.matvec(tape.transpose(w_rows), alpha)));
    out.video_raw.push_back(tape.normalize_rows(tape.matvec(tape.transpose(f_rows), beta)));
    out.category.push_back(pairs[i].category);
  }
  return out;
}

void store_category_means(ModelState& state, const TaskDataset& task, const EtfPrototypes& protos) {
  PooledFeatures feats = pooled_features(task.train, state, protos);
  Tape tape;
  const int width = state.cfg.width;
  for (int c : task.categories) {
    Tensor sum_t = Tensor::zeros({width});
    Tensor sum_v = Tensor::zeros({width});
    int count = 0;
    for (std::size_t i = 0; i < feats.category.size(); ++i) {
      if (feats.category[i] != c) continue;
      for (int j = 0; j < width; ++j) {
        sum_t.values[j] += feats.text_raw[i].at(j);
        sum_v.values[j] += feats.video_raw[i].at(j);
      }
      ++count;
    }
    if (count == 0) fail(ErrCode::InsufficientSamples, "no training pairs for category " + std::to_string(c));
    state.text_means[c] = l2_normalize(tape, sum_t);
    state.video_means[c] = l2_normalize(tape, sum_v);
  }
}

}  // namespace

void train_task(ModelState& state, const TaskDataset& task, const ModelState* prev, const RunConfig& cfg,
                const EtfPrototypes& protos, std::vector<StepLog>& log, int first_step_index) {
  const int k = task.index;
  if (k > 1 && prev == nullptr) fail(ErrCode::MissingSnapshot, "task " + std::to_string(k) + " needs a snapshot");
  const std::set<int> allowed(task.categories.begin(), task.categories.end());
  for (const auto& p : task.train)
    if (!allowed.contains(p.category))
      fail(ErrCode::DataLeak, "training pair of category " + std::to_string(p.category) +
                                  " accessed during task " + std::to_string(k));

  const std::uint64_t before = frozen_checksum(state);
  const double lr = k == 1 ? cfg.lr_base : cfg.lr_incr;
  Adam opt(lr);
  Adam head_opt(lr * cfg.head_lr_mult);
  int step = first_step_index;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(task.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cfg.seed, 0xab0000 + static_cast<std::uint64_t>(k) * 1000 + epoch));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      Batch batch;
      for (std::size_t i = start; i < end; ++i) {
        const auto& p = task.train[static_cast<std::size_t>(order[i])];
        batch.texts.push_back(p.text);
        batch.videos.push_back(p.video);
        batch.categories.push_back(p.category);
      }
      Tape tape;
      BoundModel bound = bind(tape, state, true);
      const std::uint64_t pseudo_seed = mix_seed(cfg.seed, 0xcd0000 + static_cast<std::uint64_t>(step));
      LossBreakdown lb =
          total_loss(tape, batch, state, bound, k > 1 ? prev : nullptr, protos, cfg.loss, k, pseudo_seed);
      tape.backward(lb.total);
      std::vector<std::pair<std::string, Tensor>> body_params, head_params;
      for (const auto& [name, t] : state.trainable)
        (name.rfind("head.", 0) == 0 ? head_params : body_params).emplace_back(name, bound.at(name));
      opt.step(state.trainable, tape, body_params);
      head_opt.step(state.trainable, tape, head_params);
      log.push_back(StepLog{k, step, lb.scl, lb.etf, lb.crp, lb.total.item()});
      ++step;
    }
  }
  store_category_means(state, task, protos);
  if (frozen_checksum(state) != before)
    fail(ErrCode::FrozenBaseMutated, "frozen base changed during task " + std::to_string(k));
}

ModelState snapshot(const ModelState& state) { return state; }

// --- continual run -------------------------------------------------------------

namespace {

GeometryRow geometry_checkpoint(int after_task, const std::vector<const TaskDataset*>& seen,
                                const ModelState& state, const EtfPrototypes& protos) {
  FeatureSet combined;
  std::map<int, std::vector<Tensor>> text_feats, video_feats;
  for (const TaskDataset* task : seen) {
    PooledFeatures feats = pooled_features(task->test, state, protos);
    for (std::size_t i = 0; i < feats.category.size(); ++i) {
      combined.add(feats.category[i], feats.text[i]);
      combined.add(feats.category[i], feats.video[i]);
      text_feats[feats.category[i]].push_back(feats.text[i]);
      video_feats[feats.category[i]].push_back(feats.video[i]);
    }
  }
  GeometryRow row;
  row.step = after_task;
  row.report.eta = intra_concentration(combined);
  row.report.micd = micd(combined);

  Tape tape;
  auto modality_means = [&tape](std::map<int, std::vector<Tensor>>& by_cat) {
    std::vector<Tensor> means;
    for (auto& [c, feats] : by_cat) {
      Tensor sum = Tensor::zeros({feats[0].numel()});
      for (const auto& f : feats)
        for (int j = 0; j < sum.numel(); ++j) sum.values[j] += f.at(j);
      means.push_back(l2_normalize(tape, sum));
    }
    return means;
  };
  std::vector<Tensor> mu_t = modality_means(text_feats);
  std::vector<Tensor> mu_v = modality_means(video_feats);
  auto cm = cross_modal_discrepancy(mu_t, mu_v);
  row.report.gamma = cm.gamma;
  row.report.per_category_delta = cm.per_category_delta;

  if (combined.groups.size() >= 2) {
    std::vector<Tensor> means;
    for (auto& [c, m] : combined.category_means()) means.push_back(m);
    auto centered = center_and_normalize(means, combined.global_mean());
    row.report.epsilon = equiangular_deviation(centered, protos).epsilon;
  }
  return row;
}

}  // namespace

ExperimentResult run_continual(const RunConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig effective = cfg;
  effective.seed = seed;
  apply_ablation(effective, effective.ablation);
  effective.stream.validate();
  effective.enc.validate();
  effective.loss.validate();

  TaskStream stream = generate_task_stream(effective.stream, seed);
  EtfPrototypes protos = build_etf(stream.total_categories, effective.enc.proj_dim, seed);
  ModelState state = ModelState::init(effective.enc, mix_seed(seed, 0x5ee));
  const std::uint64_t frozen_before = frozen_checksum(state);

  ExperimentResult result;
  result.config = effective;
  const int K = effective.stream.k_tasks;
  result.recall.assign(static_cast<std::size_t>(K), {});

  ModelState prev;  // snapshot of theta_{k-1}, valid for k > 1
  std::vector<const TaskDataset*> seen;
  int step_index = 0;

  for (int k = 1; k <= K; ++k) {
    const TaskDataset& task = stream.tasks[static_cast<std::size_t>(k - 1)];
    train_task(state, task, k > 1 ? &prev : nullptr, effective, protos, result.train_log, step_index);
    step_index = result.train_log.empty() ? 0 : result.train_log.back().step + 1;
    seen.push_back(&task);

    // retrieval gallery = test videos of tasks 1..k; queries = their texts
    std::vector<Tensor> queries, gallery;
    std::vector<int> truth, query_task;
    for (const TaskDataset* t : seen)
      for (const auto& p : t->test) {
        queries.push_back(p.text);
        gallery.push_back(p.video);
        truth.push_back(static_cast<int>(gallery.size()) - 1);
        query_task.push_back(t->index);
      }
    Tensor scores = score_matrix(queries, gallery, state);
    RankList all_ranks = rank_from_scores(scores, truth);
    if (effective.dump_sims) result.eval_scores.push_back(scores);

    result.recall[static_cast<std::size_t>(k - 1)].assign(static_cast<std::size_t>(k), 0.0);
    for (int i = 1; i <= k; ++i) {
      RankList task_ranks;
      task_ranks.gallery_size = all_ranks.gallery_size;
      for (std::size_t q = 0; q < query_task.size(); ++q)
        if (query_task[q] == i) task_ranks.ranks.push_back(all_ranks.ranks[q]);
      EvalRow row;
      row.after_task = k;
      row.eval_task = i;
      row.r1 = recall_at_k(task_ranks, 1);
      row.r5 = recall_at_k(task_ranks, 5);
      row.r10 = recall_at_k(task_ranks, 10);
      row.medr = median_rank(task_ranks);
      row.meanr = mean_rank(task_ranks);
      result.rows.push_back(row);
      result.recall[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(i - 1)] = row.r1;
    }
    if (k >= 2) result.bwf_per_task.push_back(bwf(result.recall, k));

    result.geometry.push_back(geometry_checkpoint(k, seen, state, protos));

    if (k < K) prev = snapshot(state);
  }

  if (frozen_checksum(state) != frozen_before)
    fail(ErrCode::FrozenBaseMutated, "frozen base changed across the run");

  result.final_bwf = (K >= 2) ? result.bwf_per_task.back() : 0.0;
  result.final_state = std::move(state);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace saln
