// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "invrender/checkpoint.h"
#include "invrender/models.h"
#include "invrender/tensor_ops.h"

using namespace invrender;
namespace fs = std::filesystem;

namespace {

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.input_height = 48;
  cfg.input_width = 64;
  cfg.base_channels = 8;
  return cfg;
}

Tensor random_image(const ModelConfig& cfg, uint64_t seed, int batch = 1) {
  Rng rng(seed);
  std::vector<real> v(static_cast<size_t>(batch) * 3 * cfg.input_height *
                      cfg.input_width);
  for (real& x : v) x = rng.uniform();
  return Tensor::from_vector({batch, 3, cfg.input_height, cfg.input_width},
                             std::move(v));
}

bool all_unit_normals(const Tensor& normal, real tol) {
  int n = normal.dim(0), h = normal.dim(2), w = normal.dim(3);
  size_t plane = static_cast<size_t>(h) * w;
  for (int bn = 0; bn < n; ++bn)
    for (size_t p = 0; p < plane; ++p) {
      const real* d = normal.data() + static_cast<size_t>(bn) * 3 * plane;
      real norm = std::sqrt(d[p] * d[p] + d[plane + p] * d[plane + p] +
                            d[2 * plane + p] * d[2 * plane + p]);
      if (std::abs(norm - 1.0) > tol) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("irn forward contracts at desk scale") {
  ModelConfig cfg = desk_config();
  Irn irn(cfg, 4242);
  Tensor image = random_image(cfg, 7, 2);
  NoGradGuard guard;
  IrnOutputs out = irn.forward(image, false);

  CHECK(out.albedo.shape() == std::vector<int>{2, 3, 48, 64});
  CHECK(out.normal.shape() == std::vector<int>{2, 3, 48, 64});
  CHECK(out.env.shape() == std::vector<int>{2, 3, kEnvRows * kEnvCols});
  CHECK(all_unit_normals(out.normal, 1e-5));
  for (int64_t i = 0; i < out.albedo.size(); ++i) {
    CHECK(out.albedo.data()[i] >= 0.0);
    CHECK(out.albedo.data()[i] <= 1.0);
  }
  for (int64_t i = 0; i < out.env.size(); ++i) CHECK(out.env.data()[i] >= 0.0);

  // Stride bookkeeping: encoder is H/4 x W/4, light block H/32 x W/32.
  Irn::Shapes shapes = irn.shapes();
  CHECK(shapes.enc_h == 12);
  CHECK(shapes.enc_w == 16);
  CHECK(shapes.enc_c == 32);
  CHECK(shapes.light_pre_h == 2);
  CHECK(shapes.light_pre_w == 2);

  // Determinism under identical params and input.
  IrnOutputs out2 = irn.forward(image, false);
  for (int64_t i = 0; i < out.albedo.size(); ++i)
    CHECK(out.albedo.data()[i] == out2.albedo.data()[i]);

  // Wrong input resolution is rejected.
  Tensor small = Tensor::zeros({1, 3, 32, 32});
  CHECK_THROWS_AS(irn.forward(small, false), ArgumentError);
}

TEST_CASE("irn forward at paper scale emits the published shapes") {
  ModelConfig cfg;  // 240x320, base 64
  Irn irn(cfg, 1);
  Irn::Shapes shapes = irn.shapes();
  CHECK(shapes.enc_h == 60);
  CHECK(shapes.enc_w == 80);
  CHECK(shapes.enc_c == 256);
  CHECK(shapes.light_pre_h == 8);
  CHECK(shapes.light_pre_w == 10);

  Tensor image = random_image(cfg, 3);
  NoGradGuard guard;
  IrnOutputs out = irn.forward(image, false);
  CHECK(out.albedo.shape() == std::vector<int>{1, 3, 240, 320});
  CHECK(out.normal.shape() == std::vector<int>{1, 3, 240, 320});
  CHECK(out.env.shape() == std::vector<int>{1, 3, 18 * 36});
  CHECK(all_unit_normals(out.normal, 1e-5));
}

TEST_CASE("rar forward contract and latent width") {
  ModelConfig cfg = desk_config();
  Rar rar(cfg, 99);
  Tensor image = random_image(cfg, 11);
  Tensor albedo = random_image(cfg, 12);
  Tensor normal = random_image(cfg, 13);
  NoGradGuard guard;
  Tensor residual = rar.forward(image, albedo, normal, false);
  CHECK(residual.shape() == std::vector<int>{1, 3, 48, 64});
  CHECK(rar.last_stats().latent_dim == 300);
  CHECK(rar.latent_dim() == 300);
  // Residual output is unbounded in sign: at random init both signs occur.
  bool has_neg = false, has_pos = false;
  for (int64_t i = 0; i < residual.size(); ++i) {
    if (residual.data()[i] < 0) has_neg = true;
    if (residual.data()[i] > 0) has_pos = true;
  }
  CHECK(has_neg);
  CHECK(has_pos);

  // The latent width is a hard contract.
  ModelConfig bad = cfg;
  bad.rar_latent = 128;
  CHECK_THROWS_AS(Rar(bad, 1), ArgumentError);
}

TEST_CASE("env estimator forward contract") {
  ModelConfig cfg = desk_config();
  EnvEstimator net(cfg, 5);
  Tensor image = random_image(cfg, 21);
  Tensor albedo = random_image(cfg, 22);
  Tensor normal = random_image(cfg, 23);
  NoGradGuard guard;
  Tensor env = net.forward(image, albedo, normal, false);
  CHECK(env.shape() == std::vector<int>{1, 3, kEnvRows * kEnvCols});
  for (int64_t i = 0; i < env.size(); ++i) CHECK(env.data()[i] >= 0.0);

  Tensor env2 = net.forward(image, albedo, normal, false);
  for (int64_t i = 0; i < env.size(); ++i)
    CHECK(env.data()[i] == env2.data()[i]);
}

TEST_CASE("finite-difference probe of an irn weight") {
  ModelConfig cfg = desk_config();
  cfg.input_height = 32;
  cfg.input_width = 32;
  cfg.base_channels = 4;
  Irn irn(cfg, 31);
  Tensor image = random_image(cfg, 17);

  auto loss_fn = [&] {
    IrnOutputs out = irn.forward(image, false);
    return sum(out.albedo);
  };
  for (auto& p : irn.parameters()) p.value.zero_grad();
  Tensor loss = loss_fn();
  loss.backward();

  // Probe a handful of weights in the first encoder conv.
  Tensor& w = irn.parameters()[0].value;
  REQUIRE(w.has_grad());
  const auto& grad = w.grad();
  Rng pick(3);
  int checked = 0;
  for (int trial = 0; trial < 20 && checked < 5; ++trial) {
    int64_t idx = static_cast<int64_t>(pick.next_u64() % w.size());
    if (std::abs(grad[idx]) < 1e-6) continue;
    real step = 1e-4;
    real saved = w.data()[idx];
    w.data()[idx] = saved + step;
    real up = loss_fn().item();
    w.data()[idx] = saved - step;
    real down = loss_fn().item();
    w.data()[idx] = saved;
    real fd = (up - down) / (2 * step);
    real rel = std::abs(fd - grad[idx]) /
               std::max({std::abs(fd), std::abs(grad[idx]), 1e-10});
    CHECK(rel < 1e-2);
    ++checked;
  }
  CHECK(checked >= 3);
}

TEST_CASE("gradients reach every parameter (no dead graph)") {
  ModelConfig cfg = desk_config();
  cfg.input_height = 32;
  cfg.input_width = 32;
  cfg.base_channels = 4;
  Irn irn(cfg, 77);
  Tensor image = random_image(cfg, 19);

  for (auto& p : irn.parameters()) p.value.zero_grad();
  IrnOutputs out = irn.forward(image, true);
  Tensor loss = add(add(sum(out.albedo), sum(out.normal)), sum(out.env));
  loss.backward();
  for (auto& p : irn.parameters()) {
    REQUIRE_MESSAGE(p.value.has_grad(), p.name);
    for (real g : p.value.grad()) CHECK(std::isfinite(g));
  }
}

TEST_CASE("checkpoint round trip preserves parameters exactly") {
  ModelConfig cfg = desk_config();
  Irn a(cfg, 123);
  Irn b(cfg, 456);

  fs::path dir = fs::temp_directory_path() / "invrender_ckpt_test";
  fs::create_directories(dir);
  fs::path path = dir / "irn.ckpt";
  CheckpointMeta meta{"irn_syn", "cfg123", 123, 777};
  save_checkpoint(path, a.parameters(), a.buffers(), meta);

  CheckpointMeta loaded = load_checkpoint(path, b.parameters(), b.buffers());
  CHECK(loaded.stage == "irn_syn");
  CHECK(loaded.seed == 123);
  CHECK(loaded.step == 777);
  CHECK(parameters_hash(a.parameters()) == parameters_hash(b.parameters()));

  // Mismatched architecture is rejected.
  ModelConfig other = cfg;
  other.base_channels = 4;
  Irn c(other, 1);
  CHECK_THROWS_AS(load_checkpoint(path, c.parameters(), c.buffers()),
                  ValidationError);
}

TEST_CASE("model config validation and hashing") {
  ModelConfig cfg = desk_config();
  CHECK_NOTHROW(cfg.validate());
  uint64_t h1 = cfg.hash();
  cfg.base_channels = 16;
  CHECK(h1 != cfg.hash());

  ModelConfig bad = cfg;
  bad.input_height = 50;  // not divisible by 4
  CHECK_THROWS_AS(bad.validate(), ArgumentError);

  ModelConfig round = ModelConfig::from_json(cfg.to_json());
  CHECK(round.hash() == cfg.hash());
}
