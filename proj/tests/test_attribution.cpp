#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "getam/attribution.hpp"
#include "getam/rng.hpp"

using namespace getam;

namespace {

ClsAttentionRow make_row(std::vector<double> a, std::vector<double> g) {
  ClsAttentionRow r;
  r.a_cls = std::move(a);
  r.grad_cls = std::move(g);
  return r;
}

ClassAttentionMap raw(Shape s, std::vector<double> v) {
  return {0, Tensor(std::move(s), std::move(v)), false};
}

AttentionTap make_tap(std::size_t tokens, double a, double g, std::optional<std::size_t> cls) {
  AttentionTap t;
  t.attention = Tensor({tokens, tokens}, a);
  if (cls) {
    t.grad = Tensor({tokens, tokens}, g);
    t.class_id = cls;
  }
  return t;
}

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.seed = 5;
  return cfg;
}

Tensor random_image(std::uint64_t seed) {
  Rng rng(seed);
  Tensor img({3, 32, 32});
  for (auto& v : img.data()) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("extract_cls_row slices row 0 without the class column") {
  auto tap = make_tap(5, 0.2, 0.0, 1);
  auto row = extract_cls_row(tap, 1);
  CHECK(row.a_cls.size() == 4);
  CHECK(row.grad_cls.size() == 4);
  for (double v : row.a_cls) CHECK(v == 0.2);
  for (double v : row.grad_cls) CHECK(v == 0.0);

  CHECK_THROWS_AS(extract_cls_row(make_tap(5, 0.2, 0.0, std::nullopt), 0), std::invalid_argument);
  CHECK_THROWS_AS(extract_cls_row(tap, 0), std::invalid_argument);
}

TEST_CASE("getam_block hand-evaluated examples") {
  auto m = getam_block(make_row({0.5}, {2.0}));
  CHECK(m.map[0] == 2.0);
  CHECK_FALSE(m.normalized);

  auto m2 = getam_block(make_row({0.1, 0.3}, {-1.0, 4.0}), 1, 2);
  CHECK(m2.map[0] == 0.0);
  CHECK(m2.map[1] == doctest::Approx(4.8).epsilon(1e-15));

  auto z = getam_block(make_row({0.1, 0.2, 0.3, 0.4}, {-1, 0, -2, -0.5}));
  CHECK(z.map.shape() == Shape{2, 2});
  for (double v : z.map.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(getam_block(make_row({0.1, 0.2, 0.3}, {1, 1, 1})), DimensionError);
}

TEST_CASE("getam_block properties on random signed inputs") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(16), g(16);
    for (auto& v : a) v = rng.uniform(-1.0, 1.0);
    for (auto& v : g) v = rng.uniform(-3.0, 3.0);
    auto m = getam_block(make_row(a, g));
    for (double v : m.map.data()) CHECK(v >= 0.0);

    std::vector<double> zero(16, 0.0);
    auto mz = getam_block(make_row(a, zero));
    for (double v : mz.map.data()) CHECK(v == 0.0);

    bool pos = false;
    for (std::size_t i = 0; i < 16; ++i) pos = pos || (a[i] > 0 && g[i] > 0);
    std::vector<double> neg(16);
    std::transform(g.begin(), g.end(), neg.begin(), [](double v) { return -v; });
    if (pos) CHECK_FALSE(getam_block(make_row(a, neg)).map == m.map);

    for (double lambda : {0.5, 2.0}) {
      std::vector<double> gs(16);
      std::transform(g.begin(), g.end(), gs.begin(), [&](double v) { return lambda * v; });
      auto ms = getam_block(make_row(a, gs));
      for (std::size_t i = 0; i < 16; ++i) CHECK(ms.map[i] == lambda * lambda * m.map[i]);
    }
  }
}

TEST_CASE("aggregate modes") {
  std::vector<ClassAttentionMap> blocks{raw({1, 2}, {0, 2}), raw({1, 2}, {4, 0})};
  auto s = aggregate(blocks, Fusion::kSum);
  CHECK(s.normalized);
  CHECK(s.map[0] == 1.0);
  CHECK(s.map[1] == 0.5);

  for (Fusion f : {Fusion::kSum, Fusion::kEwMul, Fusion::kMatMul}) {
    std::vector<ClassAttentionMap> one{raw({2, 2}, {1, 2, 4, 0})};
    auto r = aggregate(one, f);
    CHECK(r.map == Tensor({2, 2}, {0.25, 0.5, 1.0, 0.0}));
  }

  std::vector<ClassAttentionMap> with_zero{raw({2, 2}, {1, 2, 3, 4}), raw({2, 2}, {0, 0, 0, 0})};
  auto e = aggregate(with_zero, Fusion::kEwMul);
  for (double v : e.map.data()) CHECK(v == 0.0);

  // [[1,0],[0,1]] x [[0,2],[1,0]] = [[0,2],[1,0]] -> normalized [[0,1],[0.5,0]]
  std::vector<ClassAttentionMap> mm{raw({2, 2}, {1, 0, 0, 1}), raw({2, 2}, {0, 2, 1, 0})};
  CHECK(aggregate(mm, Fusion::kMatMul).map == Tensor({2, 2}, {0, 1, 0.5, 0}));

  CHECK_THROWS_AS(aggregate(std::span<const ClassAttentionMap>{}, Fusion::kSum),
                  std::invalid_argument);
  std::vector<ClassAttentionMap> bad{raw({2, 2}, {1, 1, 1, 1}), raw({1, 4}, {1, 1, 1, 1})};
  CHECK_THROWS_AS(aggregate(bad, Fusion::kSum), DimensionError);
  std::vector<ClassAttentionMap> rect{raw({1, 2}, {1, 1})};
  CHECK_THROWS_AS(aggregate(rect, Fusion::kMatMul), DimensionError);
}

TEST_CASE("sum aggregation keeps the argmax of the raw sum") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ClassAttentionMap> blocks;
    Tensor rawsum({4, 4});
    for (int b = 0; b < 3; ++b) {
      Tensor m({4, 4});
      for (auto& v : m.data()) v = rng.uniform(0.0, 2.0);
      for (std::size_t i = 0; i < 16; ++i) rawsum[i] += m[i];
      blocks.push_back({0, m, false});
    }
    auto fused = aggregate(blocks, Fusion::kSum);
    auto d = rawsum.data();
    auto f = fused.map.data();
    CHECK(std::max_element(d.begin(), d.end()) - d.begin() ==
          std::max_element(f.begin(), f.end()) - f.begin());
    CHECK(fused.map.max() == 1.0);
  }
}

TEST_CASE("fusion distribution stats") {
  std::vector<std::vector<ClassAttentionMap>> constant(
      12, std::vector<ClassAttentionMap>{raw({2, 2}, std::vector<double>(4, 0.3)),
                                         raw({2, 2}, std::vector<double>(4, 0.7))});
  for (Fusion f : {Fusion::kSum, Fusion::kEwMul, Fusion::kMatMul}) {
    auto st = fusion_distribution_stats(constant, f);
    CHECK(st.suppressed_mass == 0.0);
    CHECK(st.count == 48);
    CHECK(st.histogram[kFusionHistogramBins - 1] == 48);
  }
  CHECK_THROWS_AS(fusion_distribution_stats(std::span(constant).first(9), Fusion::kSum),
                  std::invalid_argument);

  Rng rng(3);
  Tensor a({3, 3}), b({3, 3});
  for (auto& v : a.data()) v = rng.uniform();
  for (auto& v : b.data()) v = rng.uniform();
  Tensor prod({3, 3});
  for (std::size_t i = 0; i < 9; ++i) {
    prod[i] = a[i] * b[i];
    CHECK(prod[i] <= std::min(a[i], b[i]));
  }
  std::vector<ClassAttentionMap> pair{{0, a, false}, {0, b, false}};
  CHECK(aggregate(pair, Fusion::kEwMul).map == max_normalize(prod));
}

TEST_CASE("grad-cam baseline") {
  Tensor feats({5, 3}), zero({5, 3});
  Rng rng(8);
  for (auto& v : feats.data()) v = rng.uniform(-1.0, 1.0);
  auto m = gradcam_baseline(feats, zero, 0);
  for (double v : m.map.data()) CHECK(v == 0.0);

  Tensor f1({5, 1}, {9.0, 1.0, -2.0, 3.0, 0.5}), g1({5, 1}, 1.0);
  auto m1 = gradcam_baseline(f1, g1, 0);
  CHECK(m1.map == Tensor({2, 2}, {1.0 / 3.0, 0.0, 1.0, 0.5 / 3.0}));

  CHECK_THROWS_AS(gradcam_baseline(feats, Tensor({4, 3}), 0), DimensionError);
}

TEST_CASE("attribute on the toy model") {
  VisionTransformer model(toy_config());
  randomize_parameters(model.parameters(), 17, 0.3);
  const Tensor img = random_image(4);
  const std::vector<std::size_t> classes{0, 1, 2};
  const auto before = model.parameters().hash();

  for (auto method : {AttributionMethod::kGetam, AttributionMethod::kGradCam,
                      AttributionMethod::kCamAdd, AttributionMethod::kCamIgnore}) {
    auto maps = attribute(model, img, classes, method);
    REQUIRE(maps.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(maps[i].class_id == classes[i]);
      CHECK(maps[i].map.shape() == Shape{4, 4});
      CHECK(maps[i].normalized);
      for (double v : maps[i].map.data()) CHECK(v >= 0.0);
      double mx = maps[i].map.max();
      CHECK((mx == 1.0 || mx == 0.0));
    }
  }
  CHECK(model.parameters().hash() == before);

  // Single-class attribution matches the same class inside a batch, bitwise.
  const std::vector<std::size_t> only{2};
  auto solo = attribute(model, img, only, AttributionMethod::kGetam);
  auto all = attribute(model, img, classes, AttributionMethod::kGetam);
  CHECK(bitwise_equal(solo[0].map, all[2].map));

  VisionTransformer fresh(toy_config());
  for (const auto& m : attribute(fresh, img, classes, AttributionMethod::kGetam)) {
    for (double v : m.map.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("name parsing") {
  CHECK(parse_fusion("ewmul") == Fusion::kEwMul);
  CHECK(fusion_name(Fusion::kMatMul) == "matmul");
  CHECK_THROWS_AS(parse_fusion("max"), ValidationError);
  CHECK(parse_method("cam-ignore") == AttributionMethod::kCamIgnore);
  CHECK(method_name(AttributionMethod::kGradCam) == "gradcam");
  CHECK_THROWS_AS(parse_method("rollout"), ValidationError);
}
