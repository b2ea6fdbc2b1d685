#ifndef SALN_HARNESS_HPP
#define SALN_HARNESS_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "saln/encoders.hpp"
#include "saln/etf.hpp"
#include "saln/losses.hpp"
#include "saln/metrics.hpp"

namespace saln {

// Synthetic CTVR stream: per category a latent unit direction, pushed through
// fixed per-modality linear maps; each pair adds a shared instance offset and
// per-token / per-frame noise.
struct StreamConfig {
  int k_tasks = 5;
  int cats_per_task = 4;
  int shots = 16;             // train pairs per category
  int test_per_category = 8;  // test pairs per category
  int n_tokens = 8;
  int m_frames = 4;
  int width = 32;       // raw feature width D
  int latent_dim = 32;  // dimension of the category/instance latent space
  double noise_offset = 0.3;
  double noise_token = 0.2;

  void validate() const;
};

struct LabeledPair {
  Tensor text;   // N x D
  Tensor video;  // M x D
  int category = -1;
};

struct TaskDataset {
  int index = 0;  // 1-based task id
  std::vector<int> categories;
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> test;
};

struct TaskStream {
  StreamConfig cfg;
  std::uint64_t seed = 0;
  int total_categories = 0;
  std::vector<TaskDataset> tasks;
};

TaskStream generate_task_stream(const StreamConfig& cfg, std::uint64_t seed);

struct RunConfig {
  StreamConfig stream;
  EncoderConfig enc;
  LossConfig loss;
  int epochs = 20;
  int batch = 32;
  double lr_base = 2e-3;
  double lr_incr = 3e-4;
  // the projection heads are trained only by the alignment term; they get a
  // larger step so they converge within a task's budget
  double head_lr_mult = 10.0;
  std::uint64_t seed = 0;
  std::string ablation = "full";
  bool dump_sims = false;
};

RunConfig parse_config_file(const std::string& path);
// framework -> lambda1=lambda2=0; crp -> lambda1=0; cetf -> lambda2=0;
// full -> config values.
void apply_ablation(RunConfig& cfg, const std::string& arm);
// effective settings as ordered key/value pairs (the summary echo)
std::vector<std::pair<std::string, std::string>> config_echo(const RunConfig& cfg);

// adaptive per-parameter moment estimation over the trainable set
class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}
  void step(std::map<std::string, Tensor>& params, Tape& tape,
            const std::vector<std::pair<std::string, Tensor>>& bound_params);

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct StepLog {
  int task = 0;
  int step = 0;  // global step index within the run
  double scl = 0, etf = 0, crp = 0, total = 0;
};

// One task of mini-batch training; asserts data isolation (every pair's
// category must belong to the task), keeps the frozen base untouched, and
// stores category means for the task's categories at the end.
void train_task(ModelState& state, const TaskDataset& task, const ModelState* prev, const RunConfig& cfg,
                const EtfPrototypes& protos, std::vector<StepLog>& log, int first_step_index);

// Immutable deep copy of the model.
ModelState snapshot(const ModelState& state);

struct EvalRow {
  int after_task = 0;
  int eval_task = 0;
  double r1 = 0, r5 = 0, r10 = 0, medr = 0, meanr = 0;
};

struct GeometryRow {
  int step = 0;  // checkpoint = after this task
  GeometryReport report;
};

struct ExperimentResult {
  std::vector<std::vector<double>> recall;  // recall[k-1][i-1] = R@1 of task i after task k
  std::vector<EvalRow> rows;
  std::vector<GeometryRow> geometry;
  std::vector<StepLog> train_log;
  std::vector<double> bwf_per_task;  // entry k-2 = BWF after task k (k >= 2)
  double final_bwf = 0.0;            // 0 by convention when K = 1
  RunConfig config;
  double wall_seconds = 0.0;
  ModelState final_state;
  // query x gallery score matrices per checkpoint, kept only when dump_sims
  std::vector<Tensor> eval_scores;
};

ExperimentResult run_continual(const RunConfig& cfg, std::uint64_t seed);

}  // namespace saln

#endif
