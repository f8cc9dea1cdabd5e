#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "xda/error.hpp"
#include "xda/gradcheck.hpp"
#include "xda/losses.hpp"
#include "xda/model.hpp"
#include "xda/rng.hpp"

using namespace xda;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_h = 3;
  c.input_w = 3;
  c.extractor_hidden = {6, 4};
  c.embed_dim = 3;
  c.head_hidden = {3, 2};
  c.seed = 17;
  return c;
}

Tensor random_batch(Rng& rng, int64_t rows, int64_t cols) {
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data) v = rng.uniform();
  return t;
}

struct FiniteCheckGuard {
  FiniteCheckGuard() { Tape::set_finite_checks(true); }
  ~FiniteCheckGuard() { Tape::set_finite_checks(false); }
};

}  // namespace

TEST_CASE("init_params is deterministic with zero biases") {
  const ModelConfig cfg = tiny_config();
  const SiameseModel a = init_params(cfg);
  const SiameseModel b = init_params(cfg);

  REQUIRE(a.params.size() == b.params.size());
  for (size_t i = 0; i < a.params.size(); ++i)
    CHECK(a.params[i].data == b.params[i].data);

  for (size_t i = 0; i < a.names.size(); ++i) {
    if (a.names[i].ends_with(".b")) {
      for (double v : a.params[i].data) CHECK(v == 0.0);
    }
  }

  ModelConfig other = cfg;
  other.seed = 18;
  const SiameseModel c = init_params(other);
  CHECK(c.params[0].data != a.params[0].data);
}

TEST_CASE("weight statistics match the uniform init bound") {
  ModelConfig cfg;
  cfg.input_h = 16;
  cfg.input_w = 16;
  cfg.seed = 5;
  const SiameseModel m = init_params(cfg);

  // first layer: 256x256 draws from Uniform(-a, a)
  const Tensor& w = m.params[0];
  REQUIRE(w.numel() == 256 * 256);
  const double a = std::sqrt(6.0 / (256.0 + 256.0));
  double mean = 0.0, max_abs = 0.0;
  for (double v : w.data) {
    mean += v;
    max_abs = std::max(max_abs, std::fabs(v));
  }
  mean /= static_cast<double>(w.numel());
  CHECK(max_abs <= a);
  // mean of N uniform draws has stddev a / sqrt(3N)
  const double sigma = a / std::sqrt(3.0 * static_cast<double>(w.numel()));
  CHECK(std::fabs(mean) < 3.0 * sigma);
}

TEST_CASE("parameter count matches the closed form") {
  SUBCASE("default architecture") {
    ModelConfig cfg;
    cfg.input_h = 16;
    cfg.input_w = 16;
    const SiameseModel m = init_params(cfg);
    // 256->256->64->32->16 extractor, 16->8->4->1 head, biases included
    const int64_t expected = (256 * 256 + 256) + (256 * 64 + 64) +
                             (64 * 32 + 32) + (32 * 16 + 16) + (16 * 8 + 8) +
                             (8 * 4 + 4) + (4 * 1 + 1);
    CHECK(m.param_count() == expected);
    CHECK(SiameseModel::expected_param_count(cfg) == expected);
  }

  SUBCASE("conv extractor") {
    ModelConfig cfg = tiny_config();
    cfg.extractor = ModelConfig::Extractor::Conv;
    cfg.input_h = 6;
    cfg.input_w = 6;
    cfg.conv_filters = 2;
    cfg.conv_kernel = 3;
    cfg.extractor_hidden = {5};
    const SiameseModel m = init_params(cfg);
    // conv 2x3x3 (+2), flatten 2*4*4=32 -> 5 -> embed 3, head 3->3->2->1
    const int64_t expected = (2 * 3 * 3 + 2) + (32 * 5 + 5) + (5 * 3 + 3) +
                             (3 * 3 + 3) + (3 * 2 + 2) + (2 * 1 + 1);
    CHECK(m.param_count() == expected);
    CHECK(SiameseModel::expected_param_count(cfg) == expected);
  }
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig cfg = tiny_config();
  cfg.extractor_hidden = {6, 0};
  CHECK_THROWS_AS(init_params(cfg), ConfigError);

  cfg = tiny_config();
  cfg.embed_dim = 0;
  CHECK_THROWS_AS(init_params(cfg), ConfigError);

  cfg = tiny_config();
  cfg.extractor = ModelConfig::Extractor::Conv;
  cfg.conv_kernel = 99;
  CHECK_THROWS_AS(init_params(cfg), ConfigError);
}

TEST_CASE("embed is pure and one function for both branches") {
  FiniteCheckGuard guard;
  SiameseModel m = init_params(tiny_config());
  Rng rng(2);
  const Tensor batch = random_batch(rng, 7, 9);

  const Tensor e1 = embed_values(m, batch);
  const Tensor e2 = embed_values(m, batch);
  CHECK(e1.shape == std::vector<int64_t>{7, 3});
  CHECK(e1.data == e2.data);

  // Weight sharing is structural: the graph binds each parameter tensor
  // once, and both the "source" and "target" forward passes read those same
  // leaves.
  Tape tape;
  ModelGraph graph(tape, m);
  Var src = graph.embed(batch);
  Var tgt = graph.embed(batch);
  CHECK(tape.value(src).data == tape.value(tgt).data);
  CHECK(graph.param_vars().size() == m.params.size());
  for (size_t i = 0; i < m.params.size(); ++i)
    CHECK(&tape.value(graph.param_vars()[i]) == &m.params[i]);
}

TEST_CASE("embed rejects a mismatched batch width") {
  SiameseModel m = init_params(tiny_config());
  Rng rng(3);
  const Tensor bad = random_batch(rng, 2, 8);
  CHECK_THROWS_AS(embed_values(m, bad), DimensionError);
}

TEST_CASE("predict stays in (0,1) and is 0.5 for a zeroed head") {
  FiniteCheckGuard guard;
  SiameseModel m = init_params(tiny_config());
  Rng rng(4);
  const Tensor batch = random_batch(rng, 5, 9);

  const Tensor probs = predict_values(m, batch);
  CHECK(probs.shape == std::vector<int64_t>{5, 1});
  for (double p : probs.data) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }

  const Tensor again = predict_values(m, batch);
  CHECK(probs.data == again.data);

  for (size_t i = 0; i < m.names.size(); ++i)
    if (m.names[i].starts_with("g"))
      for (double& v : m.params[i].data) v = 0.0;
  const Tensor half = predict_values(m, batch);
  for (double p : half.data) CHECK(p == 0.5);
}

TEST_CASE("predict rejects non-embedding widths") {
  SiameseModel m = init_params(tiny_config());
  Tape tape;
  ModelGraph graph(tape, m);
  Tensor wrong = Tensor::zeros({2, 5});
  CHECK_THROWS_AS(graph.predict(tape.constant(wrong)), DimensionError);
}

TEST_CASE("classification loss is differentiable end-to-end") {
  SiameseModel m = init_params(tiny_config());
  Rng rng(6);
  const Tensor batch = random_batch(rng, 4, 9);
  Tensor labels = Tensor::of({4}, {1, 0, 1, 0});

  std::vector<Tensor*> params;
  for (Tensor& p : m.params) params.push_back(&p);
  auto build = [&](Tape& t) {
    ModelGraph graph(t, m);
    Var probs = graph.predict(graph.embed(batch));
    return classification_loss(t, probs, labels);
  };
  CHECK(grad_check(params, build, 1e-5) < 1e-4);
}

TEST_CASE("conv extractor is differentiable") {
  ModelConfig cfg = tiny_config();
  cfg.extractor = ModelConfig::Extractor::Conv;
  cfg.input_h = 5;
  cfg.input_w = 5;
  cfg.conv_filters = 2;
  cfg.conv_kernel = 3;
  cfg.extractor_hidden = {4};
  SiameseModel m = init_params(cfg);

  Rng rng(7);
  const Tensor batch = random_batch(rng, 3, 25);
  Tensor labels = Tensor::of({3}, {1, 0, 1});

  std::vector<Tensor*> params;
  for (Tensor& p : m.params) params.push_back(&p);
  auto build = [&](Tape& t) {
    ModelGraph graph(t, m);
    Var probs = graph.predict(graph.embed(batch));
    return classification_loss(t, probs, labels);
  };
  CHECK(grad_check(params, build, 1e-5) < 1e-4);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "xda_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();

  ModelConfig cfg = tiny_config();
  SiameseModel m = init_params(cfg);
  // perturb away from init so the round trip is not trivially the init state
  Rng rng(8);
  for (Tensor& p : m.params)
    for (double& v : p.data) v += rng.uniform(-0.5, 0.5);

  save_checkpoint(path, m);
  SiameseModel loaded = load_checkpoint(path);

  CHECK(loaded.names == m.names);
  CHECK(loaded.config.embed_dim == cfg.embed_dim);
  CHECK(loaded.config.seed == cfg.seed);
  for (size_t i = 0; i < m.params.size(); ++i)
    CHECK(loaded.params[i].data == m.params[i].data);

  SUBCASE("corrupt magic is rejected") {
    const std::string bad = (dir / "bad.ckpt").string();
    std::FILE* f = std::fopen(bad.c_str(), "wb");
    std::fwrite("NOPE", 1, 4, f);
    std::fclose(f);
    CHECK_THROWS_AS(load_checkpoint(bad), IoError);
  }

  SUBCASE("truncated checkpoint is rejected") {
    std::error_code ec;
    const auto full = fs::file_size(path, ec);
    fs::resize_file(path, full / 2, ec);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
  }
}
