// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "invrender/models.h"
#include "invrender/nn.h"
#include "invrender/tensor_ops.h"

namespace {

using namespace invrender;

ModelConfig desk_config(int base) {
  ModelConfig cfg;
  cfg.input_height = 60;
  cfg.input_width = 80;
  cfg.base_channels = base;
  return cfg;
}

Tensor random_image(const ModelConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  std::vector<real> data(static_cast<size_t>(3) * cfg.input_height *
                         cfg.input_width);
  for (real& v : data) v = rng.uniform();
  return Tensor::from_vector({1, 3, cfg.input_height, cfg.input_width},
                             std::move(data));
}

void BM_IrnForward(benchmark::State& state) {
  ModelConfig cfg = desk_config(static_cast<int>(state.range(0)));
  Irn irn(cfg, 11);
  Tensor image = random_image(cfg, 3);
  NoGradGuard guard;
  for (auto _ : state) {
    IrnOutputs out = irn.forward(image, false);
    benchmark::DoNotOptimize(out.albedo.data());
  }
}
BENCHMARK(BM_IrnForward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_IrnForwardBackward(benchmark::State& state) {
  ModelConfig cfg = desk_config(static_cast<int>(state.range(0)));
  Irn irn(cfg, 11);
  Tensor image = random_image(cfg, 3);
  for (auto _ : state) {
    for (auto& p : irn.parameters()) p.value.zero_grad();
    IrnOutputs out = irn.forward(image, true);
    Tensor loss = mean_abs(out.albedo);
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_IrnForwardBackward)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Conv2d(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  Rng rng(5);
  ParamRegistry reg;
  Conv2d conv(reg, "conv", c, c, 3, 1, 1, rng);
  std::vector<real> data(static_cast<size_t>(c) * 15 * 20);
  for (real& v : data) v = rng.normal();
  Tensor x = Tensor::from_vector({1, c, 15, 20}, std::move(data));
  NoGradGuard guard;
  for (auto _ : state) {
    Tensor y = conv.forward(x);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Conv2d)->Arg(32)->Arg(64)->Arg(256);

}  // namespace
