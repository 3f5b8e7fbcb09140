#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "nbscreen/set_transformer.hpp"

using namespace nbscreen;
using namespace nbscreen::tf;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.h = 2;
  cfg.L = 1;
  cfg.dropout = 0.0;
  cfg.ff_mult = 4;
  cfg.cross_blocks = 1;
  return cfg;
}

Problem small_problem(std::uint64_t seed = 77) {
  const Priors priors;
  RngStream rng(seed, 0);
  auto theta_rng = rng.substream(0);
  auto data_rng = rng.substream(1);
  const auto [theta, design] = sample_theta(priors, theta_rng);
  return generate_problem(theta, design, data_rng);
}

Problem permuted_within_groups(const Problem& p, RngStream& rng) {
  std::vector<std::size_t> idx0, idx1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    (p.labels[i] ? idx1 : idx0).push_back(i);
  }
  auto shuffle = [&](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  };
  shuffle(idx0);
  shuffle(idx1);
  Problem q;
  for (std::size_t i : idx0) {
    q.counts.push_back(p.counts[i]);
    q.exposures.push_back(p.exposures[i]);
    q.labels.push_back(0);
  }
  for (std::size_t i : idx1) {
    q.counts.push_back(p.counts[i]);
    q.exposures.push_back(p.exposures[i]);
    q.labels.push_back(1);
  }
  return q;
}

}  // namespace

TEST_SUITE_BEGIN("transformer");

TEST_CASE("parameter count at the published configuration") {
  RngStream rng(1, 0);
  const ModelConfig cfg;  // d = 128, h = 8, L = 3
  const auto w = init_model(cfg, rng);
  const auto count = w.parameter_count();
  MESSAGE("parameter count at d=128,h=8,L=3: ", count);
  CHECK(count >= 2000000);
  CHECK(count <= 3000000);
  // xi = [phi1; phi2; phi1-phi2; phi1 o phi2] enters the head at width 4d
  CHECK(w.head.w1.rows() == 4 * cfg.d);
}

TEST_CASE("smaller configurations initialize and report their size") {
  RngStream rng(2, 0);
  ModelConfig cfg;
  cfg.d = 32;
  cfg.h = 4;
  cfg.L = 2;
  const auto w = init_model(cfg, rng);
  MESSAGE("parameter count at d=32,h=4,L=2: ", w.parameter_count());
  CHECK(w.parameter_count() > 0);
  for (const auto& t : {w.input_scale, w.target_scale}) {
    for (double x : t.v) {
      CHECK(x == 1.0);
    }
  }
}

TEST_CASE("initialization is deterministic in the seed") {
  const ModelConfig cfg = tiny_config();
  RngStream a(9, 0);
  RngStream b(9, 0);
  const auto w1 = init_model(cfg, a);
  const auto w2 = init_model(cfg, b);
  bool equal = true;
  w1.visit([&](const std::string& name, const Tensor& t) {
    const Tensor* other = nullptr;
    w2.visit([&](const std::string& n2, const Tensor& t2) {
      if (n2 == name) {
        other = &t2;
      }
    });
    REQUIRE(other != nullptr);
    equal = equal && (t.v == other->v);
  });
  CHECK(equal);
}

TEST_CASE("invalid configurations are rejected") {
  ModelConfig cfg = tiny_config();
  cfg.h = 3;  // d = 8 not divisible
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.L = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("loss examples") {
  const LossWeights lw;
  const Prediction a{0.5, -1.0, 2.0};
  CHECK(loss(a, a, lw) == 0.0);
  const Prediction target{1.0, 1.0, 1.0};
  const Prediction off{2.0, 2.0, 2.0};
  CHECK(loss(off, target, lw) == doctest::Approx(4.0).epsilon(1e-15));
  RngStream rng(3, 0);
  for (int i = 0; i < 100; ++i) {
    const Prediction x{rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2)};
    const Prediction y{rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2)};
    CHECK(loss(x, y, lw) >= 0.0);
  }
}

TEST_CASE("forward is deterministic and permutation invariant") {
  ModelConfig cfg = tiny_config();
  cfg.d = 16;
  cfg.L = 2;
  RngStream rng(21, 0);
  const auto w = init_model(cfg, rng);
  RngStream perm_rng(22, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Problem p = small_problem(100 + static_cast<std::uint64_t>(rep));
    const auto out1 = forward(w, p);
    const auto out2 = forward(w, p);
    CHECK(out1.mu == out2.mu);
    CHECK(out1.beta == out2.beta);
    CHECK(out1.alpha == out2.alpha);
    for (int perm = 0; perm < 5; ++perm) {
      const Problem q = permuted_within_groups(p, perm_rng);
      const auto out3 = forward(w, q);
      const double scale = std::max({1.0, std::fabs(out1.mu),
                                     std::fabs(out1.beta), std::fabs(out1.alpha)});
      CHECK(std::fabs(out3.mu - out1.mu) < 1e-6 * scale);
      CHECK(std::fabs(out3.beta - out1.beta) < 1e-6 * scale);
      CHECK(std::fabs(out3.alpha - out1.alpha) < 1e-6 * scale);
    }
  }
}

TEST_CASE("forward rejects out-of-range set sizes") {
  RngStream rng(5, 0);
  const auto w = init_model(tiny_config(), rng);
  Problem p;
  p.counts = {1, 2, 3};
  p.exposures = {1, 1, 1};
  p.labels = {0, 1, 1};  // one control observation only
  CHECK_THROWS_AS(forward(w, p), std::invalid_argument);
}

TEST_CASE("backward matches central finite differences on every tensor") {
  const ModelConfig cfg = tiny_config();
  RngStream rng(31, 0);
  auto w = init_model(cfg, rng);
  const Problem p = small_problem(55);
  const Prediction target{-0.8, 0.3, -1.7};
  const LossWeights lw;

  auto grads = zeros_like(w);
  const double base_loss = backward(w, p, target, lw, &grads);
  CHECK(std::isfinite(base_loss));

  std::vector<Tensor*> wt;
  w.visit([&](const std::string&, Tensor& t) { wt.push_back(&t); });
  std::vector<Tensor*> gt;
  grads.visit([&](const std::string&, Tensor& t) { gt.push_back(&t); });

  double worst_rel = 0.0;
  for (std::size_t ti = 0; ti < wt.size(); ++ti) {
    for (std::size_t j = 0; j < wt[ti]->v.size(); ++j) {
      const double keep = wt[ti]->v[j];
      const double step = 1e-4;
      wt[ti]->v[j] = keep + step;
      const double up = loss(forward(w, p), target, lw);
      wt[ti]->v[j] = keep - step;
      const double down = loss(forward(w, p), target, lw);
      wt[ti]->v[j] = keep;
      const double fd = (up - down) / (2.0 * step);
      const double got = gt[ti]->v[j];
      const double denom = std::max({1e-6, std::fabs(fd), std::fabs(got)});
      worst_rel = std::max(worst_rel, std::fabs(fd - got) / denom);
    }
  }
  MESSAGE("worst relative gradient error: ", worst_rel);
  CHECK(worst_rel < 1e-3);
}

TEST_CASE("gradients vanish at a zero-loss point and are deterministic") {
  const ModelConfig cfg = tiny_config();
  RngStream rng(41, 0);
  const auto w = init_model(cfg, rng);
  const Problem p = small_problem(66);
  const Prediction self_target = forward(w, p);
  auto grads = zeros_like(w);
  const double l0 = backward(w, p, self_target, LossWeights{}, &grads);
  CHECK(l0 == 0.0);
  double max_abs = 0.0;
  grads.visit([&](const std::string&, const Tensor& t) {
    for (double x : t.v) {
      max_abs = std::max(max_abs, std::fabs(x));
    }
  });
  CHECK(max_abs < 1e-12);

  const Prediction target{0.4, -0.2, 1.0};
  auto g1 = zeros_like(w);
  auto g2 = zeros_like(w);
  backward(w, p, target, LossWeights{}, &g1);
  backward(w, p, target, LossWeights{}, &g2);
  bool equal = true;
  std::vector<const Tensor*> t1, t2;
  g1.visit([&](const std::string&, const Tensor& t) { t1.push_back(&t); });
  g2.visit([&](const std::string&, const Tensor& t) { t2.push_back(&t); });
  for (std::size_t i = 0; i < t1.size(); ++i) {
    equal = equal && (t1[i]->v == t2[i]->v);
  }
  CHECK(equal);
}

TEST_CASE("weights round trip bit-exactly through NBTF files") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path();
  const auto path = (dir / "nbscreen_test_weights.nbtf").string();
  const auto path2 = (dir / "nbscreen_test_weights2.nbtf").string();

  RngStream rng(51, 0);
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.1;
  const auto w = init_model(cfg, rng);
  save_weights(w, path);
  const auto loaded = load_weights(path);
  CHECK(loaded.config == cfg);

  const Problem p = small_problem(88);
  const auto out1 = forward(w, p);
  const auto out2 = forward(loaded, p);
  CHECK(out1.mu == out2.mu);      // init values are f32-exact by construction
  CHECK(out1.beta == out2.beta);
  CHECK(out1.alpha == out2.alpha);

  save_weights(loaded, path2);
  std::ifstream f1(path, std::ios::binary);
  std::ifstream f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(b1.substr(0, 4) == "NBTF");

  // corrupt magic: load must fail without returning a partial model
  std::string corrupted = b1;
  corrupted[0] = 'X';
  const auto bad_path = (dir / "nbscreen_test_weights_bad.nbtf").string();
  std::ofstream bad(bad_path, std::ios::binary);
  bad << corrupted;
  bad.close();
  CHECK_THROWS_WITH_AS(load_weights(bad_path),
                       doctest::Contains("bad magic"), std::runtime_error);

  // truncated payload
  std::ofstream trunc(bad_path, std::ios::binary);
  trunc << b1.substr(0, b1.size() / 2);
  trunc.close();
  CHECK_THROWS_AS(load_weights(bad_path), std::runtime_error);

  fs::remove(path);
  fs::remove(path2);
  fs::remove(bad_path);
}

TEST_CASE("batched forward agrees with the reference forward") {
  ModelConfig cfg;
  cfg.d = 32;
  cfg.h = 4;
  cfg.L = 2;
  cfg.dropout = 0.1;  // must be ignored at inference
  RngStream rng(61, 0);
  const auto w = init_model(cfg, rng);
  const BatchedForward engine(w);
  std::vector<Problem> problems;
  for (int i = 0; i < 40; ++i) {
    problems.push_back(small_problem(500 + static_cast<std::uint64_t>(i)));
  }
  const auto batched = engine.run(problems);
  REQUIRE(batched.size() == problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto ref = forward(w, problems[i]);
    const double scale =
        std::max({1.0, std::fabs(ref.mu), std::fabs(ref.beta), std::fabs(ref.alpha)});
    CHECK(std::fabs(batched[i].mu - ref.mu) < 2e-4 * scale);
    CHECK(std::fabs(batched[i].beta - ref.beta) < 2e-4 * scale);
    CHECK(std::fabs(batched[i].alpha - ref.alpha) < 2e-4 * scale);
  }
}

TEST_CASE("tiny training run learns and is reproducible") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.1;
  TrainConfig tc;
  tc.n_epoch_problems = 256;
  tc.batch_size = 32;
  tc.epochs = 3;
  tc.learning_rate = 3e-4;
  tc.validation_size = 64;
  tc.threads = 1;
  const Priors priors;

  RngStream rng1(71, 0);
  const auto r1 = train(cfg, tc, priors, rng1);
  CHECK(r1.log.size() == 3);
  CHECK(r1.best_epoch >= 0);
  double best = 1e300;
  for (const auto& row : r1.log) {
    CHECK(std::isfinite(row.train_loss));
    CHECK(std::isfinite(row.val_loss));
    best = std::min(best, row.val_loss);
  }
  CHECK(best <= r1.log.front().val_loss);

  RngStream rng2(71, 0);
  const auto r2 = train(cfg, tc, priors, rng2);
  REQUIRE(r2.log.size() == r1.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    CHECK(r1.log[i].val_loss == r2.log[i].val_loss);
    CHECK(r1.log[i].lr == r2.log[i].lr);
  }
}

TEST_CASE("training aborts with a diagnostic when the loss diverges") {
  ModelConfig cfg = tiny_config();
  TrainConfig tc;
  tc.n_epoch_problems = 64;
  tc.batch_size = 32;
  tc.epochs = 3;
  tc.learning_rate = 1e18;  // guaranteed blow-up
  tc.validation_size = 16;
  tc.threads = 1;
  RngStream rng(81, 0);
  CHECK_THROWS_AS(train(cfg, tc, Priors{}, rng), TrainingDiverged);
}

TEST_SUITE_END();
