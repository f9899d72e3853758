// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks for every autograd primitive. Central
// differences with step 1e-4 against analytic gradients, double precision.

#include <doctest.h>

#include <cmath>
#include <functional>

#include "invrender/nn.h"
#include "invrender/tensor.h"
#include "invrender/tensor_ops.h"

using namespace invrender;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, real lo = -1.0,
                     real hi = 1.0, bool requires_grad = true) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<real> v(static_cast<size_t>(n));
  for (real& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_vector(std::move(shape), std::move(v), requires_grad);
}

// Max relative error between analytic gradient and central differences over
// up to `probes` coordinates of `input`.
real fd_check(Tensor& input, const std::function<Tensor()>& loss_fn,
              int probes = 20, real step = 1e-4) {
  for (int i = 0; i < 1; ++i) input.zero_grad();
  Tensor loss = loss_fn();
  loss.backward();
  const auto grad = input.grad();

  Rng pick(99);
  real worst = 0.0;
  int64_t n = input.size();
  for (int p = 0; p < probes; ++p) {
    int64_t idx = static_cast<int64_t>(pick.next_u64() % static_cast<uint64_t>(n));
    real saved = input.data()[idx];
    input.data()[idx] = saved + step;
    real up = loss_fn().item();
    input.data()[idx] = saved - step;
    real down = loss_fn().item();
    input.data()[idx] = saved;
    real fd = (up - down) / (2 * step);
    real denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
    worst = std::max(worst, std::abs(fd - grad[idx]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(7);
  Tensor a = random_tensor({3, 5}, rng, 0.3, 2.0);
  Tensor b = random_tensor({3, 5}, rng, 0.5, 1.5);

  CHECK(fd_check(a, [&] { return sum(mul(a, b)); }) < 1e-6);
  CHECK(fd_check(b, [&] { return sum(div(a, b)); }) < 1e-6);
  CHECK(fd_check(a, [&] { return sum(tanh_op(a)); }) < 1e-6);
  CHECK(fd_check(a, [&] { return sum(softplus(a)); }) < 1e-6);
  CHECK(fd_check(a, [&] { return sum(abs_op(add_scalar(a, -1.0))); }) < 1e-5);
  CHECK(fd_check(a, [&] { return mean(relu(add_scalar(a, -1.0))); }) < 1e-5);
  CHECK(fd_check(a, [&] { return sum(clamp_min(a, 1.0)); }) < 1e-5);
  CHECK(fd_check(a, [&] { return sum(mul_scalar(sub(a, b), 2.5)); }) < 1e-6);
}

TEST_CASE("matmul and linear gradients") {
  Rng rng(11);
  Tensor a = random_tensor({4, 6}, rng);
  Tensor b = random_tensor({6, 3}, rng);
  CHECK(fd_check(a, [&] { return sum(abs_op(matmul(a, b))); }) < 1e-5);
  CHECK(fd_check(b, [&] { return sum(abs_op(matmul(a, b))); }) < 1e-5);

  ParamRegistry reg;
  Linear fc(reg, "fc", 6, 4, rng);
  Tensor x = random_tensor({2, 6}, rng);
  CHECK(fd_check(x, [&] { return sum(tanh_op(fc.forward(x))); }) < 1e-5);
  for (auto& p : reg.params) {
    CHECK(fd_check(p.value, [&] { return sum(tanh_op(fc.forward(x))); }) <
          1e-5);
  }
}

TEST_CASE("conv2d gradients (input, weight, bias)") {
  Rng rng(13);
  ParamRegistry reg;
  Conv2d conv(reg, "conv", 2, 3, 3, 2, 1, rng);
  Tensor x = random_tensor({2, 2, 7, 9}, rng);
  auto loss = [&] { return sum(tanh_op(conv.forward(x))); };
  CHECK(fd_check(x, loss) < 1e-5);
  for (auto& p : reg.params) CHECK(fd_check(p.value, loss) < 1e-5);
}

TEST_CASE("conv_transpose2d gradients") {
  Rng rng(17);
  ParamRegistry reg;
  ConvTranspose2d tconv(reg, "tconv", 3, 2, 3, 2, 1, rng);
  Tensor x = random_tensor({2, 3, 5, 6}, rng);
  auto loss = [&] { return sum(tanh_op(tconv.forward(x))); };
  Tensor y = tconv.forward(x);
  CHECK(y.dim(2) == 10);
  CHECK(y.dim(3) == 12);
  CHECK(fd_check(x, loss) < 1e-5);
  for (auto& p : reg.params) CHECK(fd_check(p.value, loss) < 1e-5);
}

TEST_CASE("batch norm gradients in train and eval modes") {
  Rng rng(19);
  ParamRegistry reg;
  BatchNorm2d bn(reg, "bn", 3);
  Tensor x = random_tensor({2, 3, 4, 5}, rng);

  // Train mode: batch statistics. Running buffers drift per call, which
  // does not affect the train-mode output.
  auto train_loss = [&] { return sum(tanh_op(bn.forward(x, true))); };
  CHECK(fd_check(x, train_loss) < 1e-4);
  for (auto& p : reg.params) CHECK(fd_check(p.value, train_loss) < 1e-4);

  auto eval_loss = [&] { return sum(tanh_op(bn.forward(x, false))); };
  CHECK(fd_check(x, eval_loss) < 1e-5);
}

TEST_CASE("bilinear upsample gradients and exactness") {
  Rng rng(23);
  Tensor x = random_tensor({1, 2, 4, 5}, rng);
  auto loss = [&] { return sum(tanh_op(upsample_bilinear(x, 9, 11))); };
  CHECK(fd_check(x, loss) < 1e-5);

  // Upsampling a constant map stays constant.
  Tensor c = Tensor::full({1, 1, 3, 3}, 0.7);
  Tensor up = upsample_bilinear(c, 8, 8);
  for (int64_t i = 0; i < up.size(); ++i)
    CHECK(up.data()[i] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("normalize3 emits unit vectors with correct gradients") {
  Rng rng(29);
  Tensor x = random_tensor({2, 3, 3, 4}, rng, 0.2, 1.5);
  Tensor n = normalize3(x);
  const size_t plane = 12;
  for (int bn = 0; bn < 2; ++bn)
    for (size_t p = 0; p < plane; ++p) {
      const real* d = n.data() + static_cast<size_t>(bn) * 3 * plane;
      real norm = std::sqrt(d[p] * d[p] + d[plane + p] * d[plane + p] +
                            d[2 * plane + p] * d[2 * plane + p]);
      CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
    }
  auto loss = [&] { return sum(mul(normalize3(x), x)); };
  CHECK(fd_check(x, loss) < 1e-5);
}

TEST_CASE("masked_mean_abs respects the mask") {
  Rng rng(31);
  Tensor x = random_tensor({1, 2, 2, 2}, rng);
  Tensor mask = Tensor::from_vector({1, 1, 2, 2}, {1, 0, 1, 1});
  Tensor v = masked_mean_abs(x, mask);
  real expect = 0.0;
  const real* p = x.data();
  // channel 0 plane then channel 1 plane; entries 0, 2, 3 valid.
  for (int c = 0; c < 2; ++c)
    expect += std::abs(p[c * 4 + 0]) + std::abs(p[c * 4 + 2]) +
              std::abs(p[c * 4 + 3]);
  expect /= 3.0 * 2.0;
  CHECK(v.item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(fd_check(x, [&] { return masked_mean_abs(x, mask); }) < 1e-5);
}

TEST_CASE("concat, reshape and broadcast gradients") {
  Rng rng(37);
  Tensor a = random_tensor({1, 2, 3, 3}, rng);
  Tensor b = random_tensor({1, 1, 3, 3}, rng);
  auto loss = [&] {
    return sum(tanh_op(concat_channels({a, b})));
  };
  CHECK(fd_check(a, loss) < 1e-5);
  CHECK(fd_check(b, loss) < 1e-5);

  Tensor v = random_tensor({2, 4}, rng);
  auto loss2 = [&] { return sum(tanh_op(broadcast_spatial(v, 3, 2))); };
  CHECK(fd_check(v, loss2) < 1e-5);

  auto loss3 = [&] { return sum(tanh_op(reshape(a, {2, 9}))); };
  CHECK(fd_check(a, loss3) < 1e-5);
}

TEST_CASE("backward accumulates over shared subexpressions") {
  Tensor x = Tensor::from_vector({1}, {3.0}, true);
  Tensor y = mul(x, x);       // x^2
  Tensor z = add(y, mul_scalar(x, 4.0));  // x^2 + 4x
  z.backward();
  CHECK(x.grad()[0] == doctest::Approx(2 * 3.0 + 4.0));
}

TEST_CASE("no-grad guard suppresses graph construction") {
  Tensor x = Tensor::from_vector({1}, {2.0}, true);
  NoGradGuard guard;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam reduces a quadratic") {
  ParamRegistry reg;
  Tensor w = reg.add_param("w", {4}, {2.0, -3.0, 1.5, 0.5});
  AdamOptimizer opt(reg.params, 0.05);
  real first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    Tensor loss = sum(mul(w, w));
    loss.backward();
    if (step == 0) first = loss.item();
    last = loss.item();
    opt.step();
  }
  CHECK(last < 0.01 * first);
}

TEST_CASE("rng is deterministic and platform-pinned") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  Rng f1 = c.fork("x");
  Rng c2(42);
  Rng f2 = c2.fork("x");
  CHECK(f1.next_u64() == f2.next_u64());
}
