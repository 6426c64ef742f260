#include <cmath>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using namespace mdkt;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> data(n);
  for (double& v : data) v = scale * rng.gaussian();
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor dot_self(Tape* tape, const Tensor& x) { return sum(tape, mul(tape, x, x)); }

}  // namespace

TEST_CASE("matmul matches hand-computed products") {
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(7);
  Tensor x = random_tensor({3, 4}, rng, false);
  Tensor ix = matmul(nullptr, eye, x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(ix.data()[i] == x.data()[i]);

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {1, 1});
  Tensor c = matmul(nullptr, a, b);
  CHECK(c.at(0, 0) == 3.0);
  CHECK(c.at(1, 0) == 7.0);

  Tensor z = Tensor::zeros({2, 3});
  Tensor zz = matmul(nullptr, z, x);
  REQUIRE(zz.shape() == Shape{2, 4});
  for (double v : zz.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(matmul(nullptr, a, x), ShapeError);
}

TEST_CASE("softmax_rows closed forms and stability") {
  Tensor uniform = Tensor::from_data({1, 3}, {5, 5, 5});
  for (double tau : {0.5, 1.0, 10.0}) {
    Tensor p = softmax_rows(nullptr, uniform, tau);
    for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  Tensor two = Tensor::from_data({1, 2}, {0.0, std::log(3.0)});
  Tensor p = softmax_rows(nullptr, two, 1.0);
  CHECK(p.at(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p.at(0, 1) == doctest::Approx(0.75).epsilon(1e-14));

  // smoothing limit: huge temperature flattens the row
  Tensor wide = Tensor::from_data({1, 2}, {0.0, 10.0});
  Tensor flat = softmax_rows(nullptr, wide, 1e6);
  CHECK(std::abs(flat.at(0, 0) - 0.5) < 1e-5);
  CHECK(std::abs(flat.at(0, 1) - 0.5) < 1e-5);

  CHECK_THROWS_AS(softmax_rows(nullptr, two, 0.0), ConfigError);
  CHECK_THROWS_AS(softmax_rows(nullptr, two, -1.0), ConfigError);
}

TEST_CASE("softmax_rows rows sum to one for entries in [-50, 50]") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> data(6 * 8);
    for (double& v : data) v = (rng.uniform() * 2.0 - 1.0) * 50.0;
    Tensor logits = Tensor::from_data({6, 8}, std::move(data));
    Tensor p = softmax_rows(nullptr, logits, trial % 2 == 0 ? 1.0 : 4.0);
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 8; ++j) s += p.at(i, j);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("kl_divergence closed forms, clamp, and domain checks") {
  Tensor p = Tensor::from_data({1, 2}, {0.25, 0.75});
  CHECK(kl_divergence(nullptr, p, p).value() == 0.0);

  Tensor point = Tensor::from_data({1, 2}, {1.0, 0.0});
  Tensor half = Tensor::from_data({1, 2}, {0.5, 0.5});
  CHECK(kl_divergence(nullptr, point, half).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // clamp keeps the value finite when the target of the log vanishes
  Tensor nearly = Tensor::from_data({1, 2}, {1.0 - 1e-12, 1e-12});
  Tensor v = kl_divergence(nullptr, half, nearly);
  CHECK(std::isfinite(v.value()));

  Tensor neg = Tensor::from_data({1, 2}, {1.5, -0.5});
  CHECK_THROWS_AS(kl_divergence(nullptr, neg, half), UsageError);
  Tensor not_stochastic = Tensor::from_data({1, 2}, {0.6, 0.6});
  CHECK_THROWS_AS(kl_divergence(nullptr, not_stochastic, half), UsageError);
}

TEST_CASE("kl_divergence is non-negative and zero iff equal") {
  Rng rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    Tensor lp = random_tensor({3, 5}, rng, false, 3.0);
    Tensor lq = random_tensor({3, 5}, rng, false, 3.0);
    Tensor p = softmax_rows(nullptr, lp, 1.0);
    Tensor q = softmax_rows(nullptr, lq, 1.0);
    CHECK(kl_divergence(nullptr, p, q).value() >= 0.0);
    CHECK(kl_divergence(nullptr, p, p).value() == 0.0);
  }
}

TEST_CASE("pairwise_sq_euclidean hand cases and brute-force oracle") {
  Tensor same = Tensor::from_data({2, 3}, {1, 2, 3, 1, 2, 3});
  Tensor d0 = pairwise_sq_euclidean(nullptr, same);
  for (double v : d0.data()) CHECK(v == 0.0);

  Tensor pts = Tensor::from_data({2, 2}, {0, 0, 3, 4});
  Tensor d1 = pairwise_sq_euclidean(nullptr, pts);
  CHECK(d1.at(0, 1) == doctest::Approx(25.0).epsilon(1e-14));
  CHECK(d1.at(1, 0) == doctest::Approx(25.0).epsilon(1e-14));

  Rng rng(5);
  Tensor x = random_tensor({5, 8}, rng, false, 2.0);
  Tensor d = pairwise_sq_euclidean(nullptr, x);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(d.at(i, i) == 0.0);
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < 8; ++l) {
        const double diff = x.at(i, l) - x.at(j, l);
        acc += diff * diff;
      }
      CHECK(std::abs(d.at(i, j) - acc) <= 1e-10);
      CHECK(d.at(i, j) == d.at(j, i));
      CHECK(d.at(i, j) >= 0.0);
    }
  }

  CHECK_THROWS_AS(pairwise_sq_euclidean(nullptr, Tensor::from_data({1, 3}, {1, 2, 3})),
                  ShapeError);
}

TEST_CASE("backward basics: sum, quadratic, accumulation doubling") {
  Rng rng(3);
  Tensor x = random_tensor({4}, rng, true);

  Tape tape;
  Tensor s = sum(&tape, x);
  tape.backward(s);
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  Tape tape2;
  Tensor q = dot_self(&tape2, x);
  tape2.backward(q);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-15));
  }

  // calling backward again without zeroing doubles every leaf gradient
  std::vector<double> once(x.grad().begin(), x.grad().end());
  tape2.backward(q);
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("backward usage errors") {
  Rng rng(9);
  Tensor x = random_tensor({3}, rng, true);
  Tape tape;
  Tensor v = scale(&tape, x, 2.0);  // not scalar
  CHECK_THROWS_AS(tape.backward(v), UsageError);

  Tape other;
  Tensor s = sum(&other, x);
  CHECK_THROWS_AS(tape.backward(s), UsageError);  // produced on a different tape

  CHECK(other.size() == 1);
  other.clear();
  CHECK(other.size() == 0);
}

TEST_CASE("non-finite results are an error state") {
  Tensor big = Tensor::from_data({2}, {800.0, 1.0});
  CHECK_THROWS_AS(exp(nullptr, big), NumericError);
  Tensor neg = Tensor::from_data({2}, {-1.0, 1.0});
  CHECK_THROWS_AS(log(nullptr, neg), NumericError);
  CHECK_THROWS_AS(sqrt(nullptr, neg), NumericError);
}

TEST_CASE("detach cuts the gradient path") {
  Rng rng(17);
  Tensor x = random_tensor({4}, rng, true);
  Tape tape;
  Tensor loss = sum(&tape, mul(&tape, x.detach(), x.detach()));
  // nothing on the tape depends on a live leaf
  CHECK(tape.size() == 0);
  CHECK_THROWS_AS(tape.backward(loss), UsageError);
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("grad_check on simple closed-form expressions") {
  Rng rng(29);
  Tensor x = random_tensor({6}, rng, true);
  const double err = grad_check(dot_self, x, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check flags a broken backward rule") {
  Rng rng(31);
  Tensor x = random_tensor({4}, rng, true);
  auto broken = [](Tape* tape, const Tensor& in) {
    // forward is sum(in * in); backward rule deliberately reports d/dx = x
    std::vector<double> out(1, 0.0);
    for (double v : in.data()) out[0] += v * v;
    Tensor result = Tensor::from_data({1}, std::move(out), tape != nullptr);
    if (tape != nullptr) {
      auto in_node = in.shared_node();
      auto out_node = result.shared_node();
      tape->record({in_node}, out_node, [in_node, out_node](GradStore& gs) {
        auto go = gs.of(out_node.get());
        auto gi = gs.of(in_node.get());
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[0] * in_node->data[i];
      });
    }
    return result;
  };
  const double err = grad_check(broken, x, 1e-5);
  CHECK(err > 1e-2);
}

TEST_CASE("every differentiable op passes grad_check over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(1234, seed));
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor m = random_tensor({4, 5}, rng);
    Tensor v = random_tensor({4}, rng);
    Tensor srow = random_tensor({3}, rng);
    const Tensor pair2[2] = {a, b};

    auto check2 = [&](const TensorExpr& f, std::span<const Tensor> in) {
      CHECK(grad_check(f, in, 1e-5) < 1e-4);
    };

    check2([](Tape* t, std::span<const Tensor> in) { return sum(t, add(t, in[0], in[1])); },
           pair2);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return mean(t, mul(t, sub(t, in[0], in[1]), in[0]));
        },
        pair2);

    const Tensor am[2] = {a, m};
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, matmul(t, in[0], in[1]));
        },
        am);

    const Tensor av[2] = {a, v};
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, mul(t, add_rowvec(t, in[0], in[1]), add_rowvec(t, in[0], in[1])));
        },
        av);

    const Tensor as[2] = {a, srow};
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, mul(t, scale_rows(t, in[0], in[1]), in[0]));
        },
        as);

    const Tensor single[1] = {a};
    check2([](Tape* t, std::span<const Tensor> in) { return sum(t, relu(t, in[0])); }, single);
    check2([](Tape* t, std::span<const Tensor> in) { return sum(t, exp(t, scale(t, in[0], 0.3))); },
           single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, log(t, add_scalar(t, exp(t, in[0]), 1.0)));
        },
        single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, sqrt(t, add_scalar(t, mul(t, in[0], in[0]), 0.1)));
        },
        single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, pow_scalar(t, add_scalar(t, mul(t, in[0], in[0]), 0.5), -0.5));
        },
        single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, clamp_min(t, in[0], 0.25));
        },
        single);
    check2([](Tape* t, std::span<const Tensor> in) { return mean(t, in[0]); }, single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, mul(t, sum_rowwise(t, in[0]), sum_rowwise(t, in[0])));
        },
        single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, mul(t, mean_colwise(t, in[0]), mean_colwise(t, in[0])));
        },
        single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          const Tensor parts[2] = {in[0], in[1]};
          Tensor stacked = concat_rows(t, parts);
          return sum(t, mul(t, stacked, stacked));
        },
        pair2);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          const std::size_t rows[3] = {0, 2, 2};
          return sum(t, mul(t, row_select(t, in[0], rows), row_select(t, in[0], rows)));
        },
        single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          const std::size_t flat[4] = {0, 3, 7, 7};
          Tensor picked = select(t, in[0], flat);
          return sum(t, mul(t, picked, picked));
        },
        single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          return sum(t, mul(t, reshape(t, in[0], {4, 3}), reshape(t, in[0], {4, 3})));
        },
        single);

    const Tensor vecs[2] = {v, reshape(nullptr, srow, {3})};
    (void)vecs;
    const Tensor vv[2] = {random_tensor({5}, rng), random_tensor({5}, rng)};
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          const Tensor cols[2] = {in[0], in[1]};
          Tensor s = stack_cols(t, cols);
          return sum(t, mul(t, s, s));
        },
        vv);

    check2(
        [](Tape* t, std::span<const Tensor> in) {
          Tensor p = softmax_rows(t, in[0], 2.5);
          return sum(t, mul(t, p, p));
        },
        single);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          Tensor p = softmax_rows(t, in[0], 1.0);
          Tensor q = softmax_rows(t, in[1], 1.0);
          return kl_divergence(t, p, q);
        },
        pair2);
    check2(
        [](Tape* t, std::span<const Tensor> in) {
          Tensor d = pairwise_sq_euclidean(t, in[0]);
          return sum(t, mul(t, d, d));
        },
        single);
  }
}

TEST_CASE("backward accumulates into both operands of matmul") {
  Rng rng(41);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  Tape tape;
  Tensor loss = sum(&tape, matmul(&tape, a, b));
  tape.backward(loss);
  // d(sum(AB))/dA = ones * B^T
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t p = 0; p < 3; ++p) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 2; ++j) expect += b.at(p, j);
      CHECK(a.grad()[i * 3 + p] == doctest::Approx(expect).epsilon(1e-14));
    }
  }
}
