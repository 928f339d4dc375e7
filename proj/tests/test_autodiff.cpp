#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "getam/autodiff.hpp"
#include "getam/gradcheck.hpp"
#include "getam/rng.hpp"

using namespace getam;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Sums the op output against fixed random weights so every output entry
// contributes a distinct amount to the scalar.
Var weighted_sum(const Var& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(y.shape(), rng);
  return sum(mul(y, y.tape().constant(std::move(w))));
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape t;
  auto m = Tensor::from_rows({{1, 2}, {3, 4}});
  auto eye = Tensor::from_rows({{1, 0}, {0, 1}});
  CHECK(matmul(t.constant(eye), t.constant(m)).value() == m);

  auto col = Tensor::from_rows({{0}, {1}});
  CHECK(matmul(t.constant(m), t.constant(col)).value() == Tensor::from_rows({{2}, {4}}));

  Rng rng(3);
  auto z = matmul(t.constant(Tensor({2, 3})), t.constant(random_tensor({3, 4}, rng)));
  CHECK(z.value() == Tensor({2, 4}));

  SUBCASE("shape mismatch names both shapes") {
    try {
      matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3})));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("[2x3] x [2x3]") != std::string::npos);
    }
  }
}

TEST_CASE("softmax_rows examples and invariants") {
  Tape t;
  auto y = softmax_rows(t.constant(Tensor::from_rows({{0, 0}, {1000, 1000}, {0, std::log(3.0)}})));
  const auto& Y = y.value();
  CHECK(Y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(Y.at(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(Y.at(1, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(Y.at(2, 0) - 0.25) < 1e-15);
  CHECK(std::abs(Y.at(2, 1) - 0.75) < 1e-15);

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, -20, 20);
    Tensor shifted = x;
    for (std::size_t i = 0; i < 4; ++i) {
      const double s = rng.uniform(-100, 100);
      for (std::size_t j = 0; j < 7; ++j) shifted.at(i, j) += s;
    }
    const Tensor a = softmax_rows(t.constant(x)).value();
    const Tensor b = softmax_rows(t.constant(shifted)).value();
    for (std::size_t i = 0; i < 4; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        row += a.at(i, j);
        CHECK(a.at(i, j) >= 0.0);
        CHECK(std::abs(a.at(i, j) - b.at(i, j)) < 1e-12);
      }
      CHECK(std::abs(row - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("elementwise examples") {
  Tape t;
  CHECK(relu(t.constant(Tensor::vector({-1, 0, 2}))).value() == Tensor::vector({0, 0, 2}));
  Rng rng(5);
  Tensor x = random_tensor({3, 2}, rng);
  CHECK(mul(t.constant(x), t.constant(Tensor::ones({3, 2}))).value() == x);
  CHECK(power(t.constant(Tensor::vector({0.5})), 2.0).value()[0] == 0.25);
  CHECK(elementwise(ElementwiseKind::kPower, t.constant(Tensor::vector({0.5})), 2.0).value()[0] ==
        0.25);
  CHECK_THROWS_AS(add(t.constant(Tensor({2, 2})), t.constant(Tensor({4}))), DimensionError);

  SUBCASE("relu subgradient at zero is zero") {
    Tape g;
    Var v = g.leaf(Tensor::vector({-1, 0, 2}), true);
    g.backward(sum(relu(v)));
    CHECK(g.grad(v) == Tensor::vector({0, 0, 1}));
  }
}

TEST_CASE("transformer constituents") {
  Tape t;
  auto ln = layer_norm(t.constant(Tensor::from_rows({{3, 3, 3, 3}})));
  for (double v : ln.value().data()) CHECK(v == 0.0);

  auto tok = Tensor::from_rows({{1, -2, 3}, {1, -2, 3}, {1, -2, 3}});
  CHECK(mean_rows(t.constant(tok)).value() == Tensor::from_rows({{1, -2, 3}}));

  CHECK(gelu(t.constant(Tensor::vector({0.0}))).value()[0] == 0.0);

  auto lin = linear(t.constant(Tensor::from_rows({{1, 2}})),
                    t.constant(Tensor::from_rows({{1, 0, 1}, {0, 1, 1}})),
                    t.constant(Tensor::vector({10, 20, 30})));
  CHECK(lin.value() == Tensor::from_rows({{11, 22, 33}}));
}

TEST_CASE("backward examples") {
  Rng rng(17);
  Tensor x = random_tensor({3, 4}, rng);
  {
    Tape t;
    Var v = t.leaf(x, true);
    t.backward(sum(v));
    CHECK(t.grad(v) == Tensor::ones({3, 4}));
  }
  {
    Tape t;
    Var v = t.leaf(x, true);
    t.backward(sum(mul(v, v)));
    const Tensor g = t.grad(v);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(g[i] == 2.0 * x[i]);
  }
  SUBCASE("non-scalar root and stale vars") {
    Tape t;
    Var v = t.leaf(x, true);
    CHECK_THROWS_AS(t.backward(v), TapeError);
    Var s = sum(v);
    t.reset();
    CHECK_FALSE(s.valid());
    CHECK_THROWS_AS(t.backward(s), TapeError);
  }
  SUBCASE("repeated backward accumulates, clearing restores") {
    Tape t;
    Var v = t.leaf(x, true);
    Var r = sum(mul(v, softmax_rows(v)));
    t.backward(r);
    const Tensor first = t.grad(v);
    t.backward(r);
    const Tensor twice = t.grad(v);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(twice[i] == 2.0 * first[i]);
    t.clear_gradients();
    CHECK_FALSE(t.has_grad(v));
    t.backward(r);
    CHECK(bitwise_equal(t.grad(v), first));
  }
}

TEST_CASE("retained interior node matches explicit leaf") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({2, 3}, rng);
    Tensor w = random_tensor({2, 3}, rng);
    Tensor retained_grad;
    Tensor y_value;
    {
      Tape t;
      Var xv = t.leaf(x, true);
      Var y = softmax_rows(xv);
      t.retain(y);
      t.backward(sum(mul(power(y, 2.0), t.constant(w))));
      retained_grad = t.grad(y);
      y_value = y.value();
    }
    Tape t;
    Var y = t.leaf(y_value, true);
    t.backward(sum(mul(power(y, 2.0), t.constant(w))));
    CHECK(bitwise_equal(t.grad(y), retained_grad));
  }
}

TEST_CASE("unretained interior nodes keep no gradient") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}), true);
  Var y = scale(x, 3.0);
  t.backward(sum(y));
  CHECK_FALSE(t.has_grad(y));
  CHECK(t.has_grad(x));
}

TEST_CASE("isolated ops pass finite-difference check") {
  Rng rng(101);
  struct Case {
    const char* name;
    std::function<Var(const Var&)> f;
    Shape shape;
    double lo, hi;
  };
  Tensor other = random_tensor({3, 4}, rng);
  Tensor rhs = random_tensor({4, 2}, rng);
  Tensor gamma = random_tensor({4}, rng, 0.5, 1.5);
  Tensor beta = random_tensor({4}, rng);
  std::vector<int> labels = {0, 2, 255, 1};
  Tensor targets = random_tensor({3, 4}, rng, 0.0, 1.0);
  const std::vector<Case> cases = {
      {"matmul_left", [&](const Var& x) { return weighted_sum(matmul(x, x.tape().constant(rhs)), 1); }, {3, 4}, -1, 1},
      {"matmul_right", [&](const Var& x) { return weighted_sum(matmul(x.tape().constant(other), x), 2); }, {4, 2}, -1, 1},
      {"transpose", [](const Var& x) { return weighted_sum(transpose(x), 3); }, {3, 4}, -1, 1},
      {"add", [&](const Var& x) { return weighted_sum(add(x, x.tape().constant(other)), 4); }, {3, 4}, -1, 1},
      {"sub", [&](const Var& x) { return weighted_sum(sub(x.tape().constant(other), x), 5); }, {3, 4}, -1, 1},
      {"mul", [&](const Var& x) { return weighted_sum(mul(x, x), 6); }, {3, 4}, -1, 1},
      {"scale", [](const Var& x) { return weighted_sum(scale(add(x, 0.3), -2.5), 7); }, {3, 4}, -1, 1},
      {"relu", [](const Var& x) { return weighted_sum(relu(x), 8); }, {3, 4}, -1, 1},
      {"power", [](const Var& x) { return weighted_sum(power(x, 2.5), 9); }, {3, 4}, 0.2, 2},
      {"gelu", [](const Var& x) { return weighted_sum(gelu(x), 10); }, {3, 4}, -3, 3},
      {"softmax_rows", [](const Var& x) { return weighted_sum(softmax_rows(x), 11); }, {3, 4}, -3, 3},
      {"layer_norm", [](const Var& x) { return weighted_sum(layer_norm(x), 12); }, {3, 4}, -2, 2},
      {"layer_norm_affine",
       [&](const Var& x) {
         auto& t = x.tape();
         return weighted_sum(layer_norm(x, t.constant(gamma), t.constant(beta)), 13);
       },
       {3, 4}, -2, 2},
      {"layer_norm_gamma",
       [&](const Var& g) {
         auto& t = g.tape();
         return weighted_sum(layer_norm(t.constant(other), g, t.constant(beta)), 14);
       },
       {4}, 0.5, 1.5},
      {"linear_bias",
       [&](const Var& b) {
         auto& t = b.tape();
         return weighted_sum(linear(t.constant(other), t.constant(rhs), b), 15);
       },
       {2}, -1, 1},
      {"mean_rows", [](const Var& x) { return weighted_sum(mean_rows(x), 16); }, {3, 4}, -1, 1},
      {"slices", [](const Var& x) { return weighted_sum(slice_cols(slice_rows(x, 1, 3), 1, 4), 17); }, {3, 4}, -1, 1},
      {"concat",
       [](const Var& x) {
         const Var rows[] = {x, scale(x, 2.0)};
         const Var cols[] = {concat_rows(rows), concat_rows(rows)};
         return weighted_sum(concat_cols(cols), 18);
       },
       {3, 4}, -1, 1},
      {"reshape", [](const Var& x) { return weighted_sum(reshape(x, {2, 6}), 19); }, {3, 4}, -1, 1},
      {"bce", [&](const Var& x) { return bce_with_logits(x, targets); }, {3, 4}, -4, 4},
      {"softmax_xent", [&](const Var& x) { return softmax_cross_entropy(x, labels); }, {3, 4}, -3, 3},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (int trial = 0; trial < 3; ++trial) {
      Tensor x = random_tensor(c.shape, rng, c.lo, c.hi);
      const auto res = finite_difference_check(c.f, x, 1e-5);
      CHECK(res.checked == x.size());
      CHECK(res.max_rel_error < 1e-6);
    }
  }
}

TEST_CASE("finite_difference_check examples") {
  Rng rng(29);
  Tensor x = random_tensor({3, 5}, rng, -2, 2);
  CHECK(finite_difference_check([](const Var& v) { return sum(v); }, x).max_rel_error < 1e-9);
  // Row normalization makes the gradient identically zero. The central
  // difference is pure cancellation noise (~1e-11), which the 1e-8 floor turns
  // into a relative error near 1e-3, so the zero is asserted in absolute terms.
  auto res = finite_difference_check([](const Var& v) { return sum(softmax_rows(v)); }, x);
  CHECK(std::abs(res.worst_analytic) < 1e-15);
  CHECK(std::abs(res.worst_numeric) < 1e-9);
  CHECK(res.max_rel_error < 1e-2);
}

TEST_CASE("composed expression passes finite-difference check") {
  Rng rng(31);
  Tensor w1 = random_tensor({4, 6}, rng);
  Tensor w2 = random_tensor({6, 3}, rng);
  auto f = [&](const Var& x) {
    auto& t = x.tape();
    Var h = gelu(matmul(layer_norm(x), t.constant(w1)));
    Var a = softmax_rows(matmul(h, transpose(h)));
    Var o = matmul(matmul(a, h), t.constant(w2));
    return sum(mul(o, o));
  };
  for (int trial = 0; trial < 5; ++trial) {
    CHECK(finite_difference_check(f, random_tensor({5, 4}, rng)).max_rel_error < 1e-6);
  }
}

TEST_CASE("softmax cross-entropy ignores 255 and handles all-ignored") {
  Tape t;
  std::vector<int> all_ignored(6, 255);
  CHECK(softmax_cross_entropy(t.constant(Tensor({3, 6}, 1.0)), all_ignored).value()[0] == 0.0);
  std::vector<int> lab = {0, 1, 2, 0, 1, 2};
  const double v = softmax_cross_entropy(t.constant(Tensor({3, 6}, 0.7)), lab).value()[0];
  CHECK(std::abs(v - std::log(3.0)) < 1e-14);
  std::vector<int> bad = {0, 5, 0, 0, 0, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(t.constant(Tensor({3, 6})), bad), DimensionError);
}

TEST_CASE("GTT1 round trip and layout") {
  Rng rng(41);
  Tensor x = random_tensor({2, 3, 4}, rng);
  const auto bytes = encode_gtt(x);
  REQUIRE(bytes.size() == 4 + 4 + 3 * 8 + 24 * 8);
  CHECK(bytes[0] == 'G');
  CHECK(bytes[3] == '1');
  CHECK(bytes[4] == 3);
  CHECK(bytes[5] == 0);
  CHECK(bytes[8] == 2);   // first dim, little-endian u64
  CHECK(bytes[16] == 3);
  CHECK(bitwise_equal(decode_gtt(bytes), x));

  const auto dir = std::filesystem::temp_directory_path() / "getam_gtt_test";
  std::filesystem::create_directories(dir);
  write_gtt(dir / "x.gtt", x);
  CHECK(bitwise_equal(read_gtt(dir / "x.gtt"), x));
  std::filesystem::remove_all(dir);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_gtt(truncated), ValidationError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_gtt(bad_magic), ValidationError);
}
