#include <cmath>

#include "doctest.h"
#include "getam/label_completion.hpp"
#include "oracles.hpp"

using namespace getam;

namespace {

LabelImage sal_from(std::size_t h, std::size_t w, std::vector<std::uint8_t> v) {
  LabelImage s(h, w);
  s.data = std::move(v);
  return s;
}

ActivationStack stack_of(Tensor fg, Tensor bg) {
  ActivationStack st;
  st.fg = std::move(fg);
  st.bg = std::move(bg);
  return st;
}

}  // namespace

TEST_CASE("background channel") {
  Tensor fg({2, 1, 3}, {1.0, 0.0, 0.5, 0.2, 0.0, 0.1});
  auto bg = background_channel(fg, 2.0);
  CHECK(bg[0] == 0.0);
  CHECK(bg[1] == 1.0);
  CHECK(bg[2] == 0.25);
  CHECK(background_channel(fg, 7.0)[1] == 1.0);
  CHECK_THROWS_AS(background_channel(fg, 1.0), ValidationError);
  CHECK_THROWS_AS(background_channel(fg, 0.5), ValidationError);

  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    Tensor a({2, 1, 1}, {rng.uniform(), rng.uniform()});
    Tensor b = a;
    b[t % 2] = std::min(1.0, b[t % 2] + rng.uniform(0.0, 0.5));
    CHECK(background_channel(b, 4.0)[0] <= background_channel(a, 4.0)[0]);
  }
}

TEST_CASE("activation stack normalizes present classes and zeroes the rest") {
  Tensor maps({3, 1, 2}, {2.0, 4.0, 5.0, 5.0, 0.0, 3.0});
  const std::vector<int> present{1, 3};
  auto st = build_activation_stack(maps, present, 4.0);
  CHECK(st.fg == Tensor({3, 1, 2}, {0.5, 1.0, 0.0, 0.0, 0.0, 1.0}));
  CHECK(st.bg == Tensor({1, 2}, {std::pow(0.5, 4.0), 0.0}));
  CHECK(st.stacked().shape() == Shape{4, 1, 2});
  const std::vector<int> bad{4};
  CHECK_THROWS_AS(build_activation_stack(maps, bad, 4.0), ValidationError);
}

TEST_CASE("saliency-constrained masking cases") {
  auto s = stack_of(Tensor({1, 1, 2}, {0.9, 0.1}), Tensor({1, 2}, {0.1, 0.9}));
  auto p = saliency_constrained_masking(s, sal_from(1, 2, {1, 1}));
  CHECK(p.data[0] == 1);
  CHECK(p.data[1] == 255);

  auto none = saliency_constrained_masking(s, sal_from(1, 2, {0, 0}));
  CHECK(none.data == std::vector<std::uint8_t>{0, 0});

  // tie between background and class goes to background
  auto tie = stack_of(Tensor({1, 1, 1}, {0.5}), Tensor({1, 1}, {0.5}));
  CHECK(saliency_constrained_masking(tie, sal_from(1, 1, {1})).data[0] == 255);

  CHECK_THROWS_AS(saliency_constrained_masking(s, sal_from(1, 1, {1})), DimensionError);
  CHECK_THROWS_AS(saliency_constrained_masking(s, sal_from(1, 2, {1, 2})), ValidationError);
}

TEST_CASE("high-activation mining cases") {
  // 3 classes on a 1x5 strip; thresholds at alpha = 0.75 are the 4th-ranked value.
  Tensor fg({3, 1, 5}, {0.0, 0.0, 0.0, 0.0, 0.0,
                        0.1, 0.2, 0.3, 0.4, 1.0,
                        0.0, 0.0, 0.0, 0.0, 0.0});
  LabelImage p(1, 5, 0);
  auto sal = sal_from(1, 5, {0, 0, 0, 0, 0});
  auto out = high_activation_mining(p, fg, sal, 0.75);
  CHECK(out.data == std::vector<std::uint8_t>{0, 0, 0, 0, 2});

  Tensor two({3, 1, 5}, {0.1, 0.2, 0.3, 0.4, 1.0,
                         0.0, 0.0, 0.0, 0.0, 0.0,
                         0.1, 0.2, 0.3, 0.4, 1.0});
  CHECK(high_activation_mining(p, two, sal, 0.75).data ==
        std::vector<std::uint8_t>{0, 0, 0, 0, 255});

  // nothing above the max at alpha = 1
  CHECK(high_activation_mining(p, two, sal, 1.0) == p);

  // salient pixels are never touched
  LabelImage q(1, 5, 0);
  q.data[4] = 255;
  CHECK(high_activation_mining(q, fg, sal_from(1, 5, {0, 0, 0, 0, 1}), 0.75) == q);

  auto t = mining_thresholds(fg, 0.9);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == doctest::Approx(0.4 + 0.6 * 0.6).epsilon(1e-14));
}

TEST_CASE("complete_labels matches the case-analysis oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    auto cc = oracle::random_case(rng, trial % 5 == 0 ? 3 : 2);
    REQUIRE(oracle::run_pipeline(cc).data == oracle::complete(cc));
  }
}

TEST_CASE("complete_labels value domain, saliency respect and empty label set") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    auto cc = oracle::random_case(rng, 3);
    auto p = oracle::run_pipeline(cc);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto v = p.data[i];
      if (v == 0 || v == 255) continue;
      CHECK(std::find(cc.present.begin(), cc.present.end(), v) != cc.present.end());
    }
    // Mining only writes non-salient pixels: salient output equals masking alone.
    Tensor maps({cc.classes, 4, 4}, cc.maps);
    LabelImage sal(4, 4);
    sal.data = cc.saliency;
    auto eq4 = saliency_constrained_masking(build_activation_stack(maps, cc.present, cc.gamma), sal);
    for (std::size_t i = 0; i < p.size(); ++i)
      if (cc.saliency[i]) CHECK(p.data[i] == eq4.data[i]);
  }

  oracle::CompletionCase empty = oracle::random_case(rng);
  empty.present.clear();
  auto p = oracle::run_pipeline(empty);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.data[i] == (empty.saliency[i] ? 255 : 0));
}

TEST_CASE("single class covering the salient blob") {
  std::vector<double> maps(2 * 16, 0.0);
  std::vector<std::uint8_t> sal(16, 0);
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t c = 1; c < 3; ++c) {
      maps[r * 4 + c] = 1.0;
      sal[r * 4 + c] = 1;
    }
  oracle::CompletionCase cc;
  cc.maps = maps;
  cc.present = {1};
  cc.saliency = sal;
  auto p = oracle::run_pipeline(cc);
  for (std::size_t i = 0; i < 16; ++i) CHECK(p.data[i] == (sal[i] ? 1 : 0));
  CHECK(p.data == oracle::complete(cc));
}

TEST_CASE("mining is monotone in alpha") {
  Rng rng(9);
  const double alphas[] = {0.5, 0.7, 0.85, 0.9, 0.95, 1.0};
  for (int trial = 0; trial < 300; ++trial) {
    auto cc = oracle::random_case(rng, 3);
    std::size_t prev = 16;
    for (double a : alphas) {
      cc.alpha = a;
      auto p = oracle::run_pipeline(cc);
      std::size_t mined = 0;
      for (std::size_t i = 0; i < 16; ++i) mined += (!cc.saliency[i] && p.data[i] != 0) ? 1 : 0;
      CHECK(mined <= prev);
      prev = mined;
    }
    CHECK(prev == 0);
  }
}

TEST_CASE("PAMR") {
  Tensor image({3, 6, 6}, 0.4);
  Tensor flat({2, 6, 6}, 0.7);
  auto step = pamr_step(flat, image);
  for (std::size_t i = 0; i < step.size(); ++i) CHECK(step[i] == doctest::Approx(0.7).epsilon(1e-15));

  Rng rng(4);
  Tensor maps({1, 6, 6});
  for (auto& v : maps.data()) v = rng.uniform();
  CHECK(bitwise_equal(pamr_refine(maps, image, 0), maps));
  CHECK_THROWS_AS(pamr_refine(maps, image, -1), ValidationError);
  CHECK_THROWS_AS(pamr_step(maps, Tensor({3, 5, 6})), DimensionError);

  // Uniform affinities: one step is the mean over the 32 clamped neighbours.
  auto once = pamr_step(maps, image);
  double acc = 0.0;
  for (int r : {1, 2, 4, 8})
    for (int dy : {-1, 0, 1})
      for (int dx : {-1, 0, 1}) {
        if (!dy && !dx) continue;
        int y = std::clamp(2 + dy * r, 0, 5), x = std::clamp(3 + dx * r, 0, 5);
        acc += maps.at(0, y, x);
      }
  CHECK(once.at(0, 2, 3) == doctest::Approx(acc / 32.0).epsilon(1e-13));

  // Two-colour image with the colour edge between columns 7 and 8; the map
  // steps one column late. After 10 iterations its 0.5 crossing sits on the edge.
  const std::size_t h = 16, w = 16, edge = 8;
  Tensor two({3, h, w});
  Tensor late({1, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const bool left = x < edge;
      two.at(0, y, x) = left ? 0.9 : 0.1;
      two.at(1, y, x) = left ? 0.2 : 0.8;
      two.at(2, y, x) = 0.3;
      late.at(0, y, x) = x < edge + 1 ? 1.0 : 0.0;
    }
  auto refined = pamr_refine(late, two, 10);
  for (std::size_t y = 0; y < h; ++y) {
    std::size_t crossing = w;
    for (std::size_t x = 0; x < w; ++x)
      if (refined.at(0, y, x) < 0.5) {
        crossing = x;
        break;
      }
    CHECK(crossing >= edge - 1);
    CHECK(crossing <= edge + 1);
  }
}
