#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "saln/harness.hpp"
#include "saln/similarity.hpp"

using namespace saln;

namespace {

// small, fast configuration for harness-level tests
RunConfig tiny_config() {
  RunConfig cfg;
  cfg.stream.k_tasks = 3;
  cfg.stream.cats_per_task = 2;
  cfg.stream.shots = 4;
  cfg.stream.test_per_category = 3;
  cfg.stream.n_tokens = 4;
  cfg.stream.m_frames = 3;
  cfg.enc.frames = 3;
  cfg.epochs = 2;
  cfg.batch = 8;
  return cfg;
}

}  // namespace

TEST_CASE("generate_task_stream") {
  StreamConfig cfg;
  cfg.k_tasks = 5;
  cfg.cats_per_task = 4;
  cfg.shots = 3;
  cfg.test_per_category = 2;

  SUBCASE("disjoint category sets covering the universe") {
    auto stream = generate_task_stream(cfg, 1);
    REQUIRE(stream.tasks.size() == 5);
    std::set<int> all;
    for (const auto& t : stream.tasks) {
      for (int c : t.categories) {
        CHECK_FALSE(all.contains(c));
        all.insert(c);
      }
      for (const auto& p : t.train)
        CHECK(std::find(t.categories.begin(), t.categories.end(), p.category) != t.categories.end());
      CHECK(t.train.size() == 3u * 4u);
      CHECK(t.test.size() == 2u * 4u);
    }
    CHECK(static_cast<int>(all.size()) == stream.total_categories);
    CHECK(stream.total_categories == 20);
  }
  SUBCASE("K=1 puts all categories in one task") {
    cfg.k_tasks = 1;
    auto stream = generate_task_stream(cfg, 2);
    CHECK(stream.tasks.size() == 1);
    CHECK(stream.tasks[0].categories.size() == 4);
  }
  SUBCASE("zero noise collapses a category to identical raw features") {
    cfg.noise_offset = 0.0;
    cfg.noise_token = 0.0;
    auto stream = generate_task_stream(cfg, 3);
    const auto& t = stream.tasks[0];
    const auto& a = t.train[0];
    const auto& b = t.train[1];
    REQUIRE(a.category == b.category);
    CHECK(a.text.values == b.text.values);
    CHECK(a.video.values == b.video.values);
    // and every token row equals the first row
    for (int n = 1; n < 4; ++n)
      for (int j = 0; j < 32; ++j) CHECK(a.text.at(n, j) == a.text.at(0, j));
  }
  SUBCASE("deterministic per seed") {
    auto s1 = generate_task_stream(cfg, 9);
    auto s2 = generate_task_stream(cfg, 9);
    CHECK(s1.tasks[2].train[5].text.values == s2.tasks[2].train[5].text.values);
    auto s3 = generate_task_stream(cfg, 10);
    CHECK(s1.tasks[2].train[5].text.values != s3.tasks[2].train[5].text.values);
  }
  SUBCASE("invalid config rejected") {
    cfg.shots = 0;
    CHECK_THROWS_WITH_AS(generate_task_stream(cfg, 0), doctest::Contains("InvalidConfig"), Error);
  }
}

TEST_CASE("train_task guards") {
  auto cfg = tiny_config();
  auto stream = generate_task_stream(cfg.stream, 4);
  auto protos = build_etf(stream.total_categories, cfg.enc.proj_dim, 4);
  auto state = ModelState::init(cfg.enc, 4);
  std::vector<StepLog> log;

  SUBCASE("incremental task without snapshot rejected") {
    CHECK_THROWS_WITH_AS(train_task(state, stream.tasks[1], nullptr, cfg, protos, log, 0),
                         doctest::Contains("MissingSnapshot"), Error);
  }
  SUBCASE("foreign-category pair aborts with DataLeak") {
    auto task = stream.tasks[0];
    task.train[0].category = stream.tasks[1].categories[0];
    CHECK_THROWS_WITH_AS(train_task(state, task, nullptr, cfg, protos, log, 0),
                         doctest::Contains("DataLeak"), Error);
  }
  SUBCASE("zero epochs leaves parameters unchanged but stores means") {
    auto cfg0 = cfg;
    cfg0.epochs = 0;
    const auto before = trainable_checksum(state);
    train_task(state, stream.tasks[0], nullptr, cfg0, protos, log, 0);
    CHECK(trainable_checksum(state) == before);
    CHECK(log.empty());
    for (int c : stream.tasks[0].categories) {
      CHECK(state.text_means.contains(c));
      CHECK(state.video_means.contains(c));
      double nrm = 0;
      for (double x : state.text_means[c].values) nrm += x * x;
      CHECK(std::sqrt(nrm) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("training changes adapters, never the frozen base") {
    const auto frozen_before = frozen_checksum(state);
    const auto train_before = trainable_checksum(state);
    train_task(state, stream.tasks[0], nullptr, cfg, protos, log, 0);
    CHECK(frozen_checksum(state) == frozen_before);
    CHECK(trainable_checksum(state) != train_before);
    CHECK(log.size() == 2u);  // 2 epochs x 1 batch (8 pairs, batch size 8)
  }
}

TEST_CASE("snapshot isolation") {
  auto cfg = tiny_config();
  auto stream = generate_task_stream(cfg.stream, 5);
  auto protos = build_etf(stream.total_categories, cfg.enc.proj_dim, 5);
  auto state = ModelState::init(cfg.enc, 5);
  std::vector<StepLog> log;
  train_task(state, stream.tasks[0], nullptr, cfg, protos, log, 0);

  ModelState snap = snapshot(state);
  const auto snap_frozen = frozen_checksum(snap);
  const auto snap_train = trainable_checksum(snap);

  // sim matrices agree at copy time
  std::vector<Tensor> texts, videos;
  for (int i = 0; i < 4; ++i) {
    texts.push_back(stream.tasks[1].train[static_cast<std::size_t>(i)].text);
    videos.push_back(stream.tasks[1].train[static_cast<std::size_t>(i)].video);
  }
  Tensor s_state = score_matrix(texts, videos, state);
  Tensor s_snap = score_matrix(texts, videos, snap);
  CHECK(s_state.values == s_snap.values);

  train_task(state, stream.tasks[1], &snap, cfg, protos, log, 0);
  CHECK(frozen_checksum(snap) == snap_frozen);
  CHECK(trainable_checksum(snap) == snap_train);

  // trained model now disagrees with the snapshot
  Tensor s_after = score_matrix(texts, videos, state);
  CHECK(s_after.values != s_snap.values);
}

TEST_CASE("train_task determinism") {
  auto cfg = tiny_config();
  auto stream = generate_task_stream(cfg.stream, 6);
  auto protos = build_etf(stream.total_categories, cfg.enc.proj_dim, 6);
  std::uint64_t sum1 = 0, sum2 = 0;
  for (int run = 0; run < 2; ++run) {
    auto state = ModelState::init(cfg.enc, 6);
    std::vector<StepLog> log;
    train_task(state, stream.tasks[0], nullptr, cfg, protos, log, 0);
    (run == 0 ? sum1 : sum2) = trainable_checksum(state);
  }
  CHECK(sum1 == sum2);
}

TEST_CASE("run_continual") {
  auto cfg = tiny_config();

  SUBCASE("K=1 gives a 1x1 recall matrix and BWF 0 by convention") {
    auto cfg1 = cfg;
    cfg1.stream.k_tasks = 1;
    cfg1.epochs = 1;
    auto res = run_continual(cfg1, 7);
    REQUIRE(res.recall.size() == 1);
    REQUIRE(res.recall[0].size() == 1);
    CHECK(res.final_bwf == 0.0);
    CHECK(res.geometry.size() == 1);
  }
  SUBCASE("frozen LR reproduces diagonal recalls and exactly zero BWF") {
    auto cfg0 = cfg;
    cfg0.lr_base = 0.0;
    cfg0.lr_incr = 0.0;
    auto res = run_continual(cfg0, 8);
    for (int k = 2; k <= 3; ++k)
      for (int i = 1; i <= k; ++i)
        CHECK(res.recall[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(i - 1)] ==
              res.recall[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(i - 1)]);
    CHECK(res.final_bwf == 0.0);
  }
  SUBCASE("structure of the result") {
    auto res = run_continual(cfg, 9);
    CHECK(res.recall.size() == 3);
    CHECK(res.rows.size() == 1u + 2u + 3u);
    CHECK(res.geometry.size() == 3);
    CHECK(res.bwf_per_task.size() == 2);
    CHECK(res.wall_seconds > 0.0);
    for (const auto& row : res.rows) {
      CHECK(row.r1 >= 0.0);
      CHECK(row.r1 <= 100.0);
      CHECK(row.medr >= 1.0);
      CHECK(row.meanr >= 1.0);
    }
    for (const auto& g : res.geometry) {
      CHECK(g.report.eta >= 0.0);
      CHECK(g.report.epsilon >= 0.0);
      CHECK(g.report.gamma >= 0.0);
      CHECK(g.report.gamma <= 2.0);
      CHECK(g.report.micd >= 0.0);
      CHECK(g.report.micd <= 2.0);
    }
    // means stored for every seen category
    CHECK(res.final_state.text_means.size() == 6);
  }
  SUBCASE("bit-for-bit determinism of the whole experiment") {
    auto r1 = run_continual(cfg, 11);
    auto r2 = run_continual(cfg, 11);
    CHECK(trainable_checksum(r1.final_state) == trainable_checksum(r2.final_state));
    CHECK(r1.recall == r2.recall);
    REQUIRE(r1.train_log.size() == r2.train_log.size());
    for (std::size_t i = 0; i < r1.train_log.size(); ++i)
      CHECK(r1.train_log[i].total == r2.train_log[i].total);
    REQUIRE(r1.geometry.size() == r2.geometry.size());
    for (std::size_t i = 0; i < r1.geometry.size(); ++i) {
      CHECK(r1.geometry[i].report.eta == r2.geometry[i].report.eta);
      CHECK(r1.geometry[i].report.micd == r2.geometry[i].report.micd);
    }
  }
}

TEST_CASE("config parsing") {
  namespace fs = std::filesystem;
  auto dir = std::filesystem::temp_directory_path() / "saln_cfg_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "run.cfg").string();

  SUBCASE("round trip of documented keys") {
    std::ofstream os(path);
    os << "# experiment\n"
       << "k_tasks = 4\n"
       << "cats_per_task = 3\n"
       << "shots = 5\n"
       << "epochs = 7\n"
       << "batch = 16\n"
       << "lr_base = 0.001\n"
       << "lr_incr = 0.0002\n"
       << "lambda1 = 0.5\n"
       << "lambda2 = 2.5\n"
       << "tau = 0.1\n"
       << "tau2 = 0.9\n"
       << "sigma = 0.05\n"
       << "experts = 2\n"
       << "k_e = 1\n"
       << "lora_rank = 2\n"
       << "dims = 16,8\n"
       << "seed = 123\n"
       << "ablation = cetf\n";
    os.close();
    auto cfg = parse_config_file(path);
    CHECK(cfg.stream.k_tasks == 4);
    CHECK(cfg.stream.cats_per_task == 3);
    CHECK(cfg.enc.width == 16);
    CHECK(cfg.enc.proj_dim == 8);
    CHECK(cfg.stream.width == 16);
    CHECK(cfg.seed == 123);
    CHECK(cfg.loss.lambda1 == doctest::Approx(0.5));
    CHECK(cfg.loss.lambda2 == 0.0);  // cetf arm zeroes lambda2
    CHECK(cfg.ablation == "cetf");
  }
  SUBCASE("unknown key rejected") {
    std::ofstream os(path);
    os << "bogus = 1\n";
    os.close();
    CHECK_THROWS_WITH_AS(parse_config_file(path), doctest::Contains("InvalidConfig"), Error);
  }
  SUBCASE("missing file rejected") {
    CHECK_THROWS_WITH_AS(parse_config_file((dir / "nope.cfg").string()), doctest::Contains("InvalidConfig"),
                         Error);
  }
  SUBCASE("ablation arms map to lambda overrides") {
    RunConfig cfg;
    cfg.loss.lambda1 = 0.3;
    cfg.loss.lambda2 = 7.0;
    apply_ablation(cfg, "framework");
    CHECK(cfg.loss.lambda1 == 0.0);
    CHECK(cfg.loss.lambda2 == 0.0);
    RunConfig cfg2;
    cfg2.loss.lambda1 = 0.3;
    apply_ablation(cfg2, "crp");
    CHECK(cfg2.loss.lambda1 == 0.0);
    CHECK(cfg2.loss.lambda2 > 0.0);
    CHECK_THROWS_AS(apply_ablation(cfg2, "nonsense"), Error);
  }
  std::filesystem::remove_all(dir);
}
