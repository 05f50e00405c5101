#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "anymodal/ops.hpp"
#include "anymodal/veh.hpp"
#include "doctest.h"

using namespace am;
using nn::ParamStore;
using nn::Tensor;

namespace {

Tensor randn(nn::Shape shape, uint64_t seed, float sd = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed);
  rng.fill_normal(t.ptr(), t.size(), sd);
  return t;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.ptr(), b.ptr(), sizeof(float) * static_cast<size_t>(a.size())) == 0;
}

bool all_zero_bits(const Tensor& t) {
  std::vector<float> z(static_cast<size_t>(t.size()), 0.0f);
  return std::memcmp(t.ptr(), z.data(), sizeof(float) * z.size()) == 0;
}

enc::Pyramid random_pyramid(uint64_t seed) {
  enc::Pyramid p;
  int r = 16;
  for (int c : {8, 16, 24, 32}) {
    p.push_back(randn({c, r, r}, seed_for(seed, "stage" + std::to_string(r))));
    r /= 2;
  }
  return p;
}

}  // namespace

TEST_CASE("highway extractor matches a straight-line resample-project-sum") {
  ParamStore ps;
  Rng rng(seed_for(11, "hw"));
  veh::HighwayExtractor hw(ps, "hw", {8, 16, 24, 32}, 16, rng);
  nn::NoGrad ng;
  enc::Pyramid pyr = random_pyramid(1);

  Tensor got = hw.forward(pyr);
  REQUIRE(got.shape == nn::Shape{16, 16, 16});

  std::vector<double> want(16 * 16 * 16, 0.0);
  int r = 16;
  for (int s = 0; s < 4; ++s, r /= 2) {
    const Tensor& f = pyr[static_cast<size_t>(s)];
    int cin = f.dim(0);
    const float* w = hw.proj[static_cast<size_t>(s)].w->ptr();  // (16, cin, 1, 1)
    const float* b = hw.proj[static_cast<size_t>(s)].b->ptr();
    for (int oc = 0; oc < 16; ++oc)
      for (int oy = 0; oy < 16; ++oy)
        for (int ox = 0; ox < 16; ++ox) {
          int iy = oy * r / 16, ix = ox * r / 16;
          double acc = b[oc];
          for (int ic = 0; ic < cin; ++ic)
            acc += static_cast<double>(w[oc * cin + ic]) * f.ptr()[(ic * r + iy) * r + ix];
          want[static_cast<size_t>((oc * 16 + oy) * 16 + ox)] += acc;
        }
  }
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(got.ptr()[static_cast<int64_t>(i)] == doctest::Approx(want[i]).epsilon(1e-4));

  // an empty pyramid contributes nothing anywhere
  enc::Pyramid zeros;
  r = 16;
  for (int c : {8, 16, 24, 32}) {
    zeros.push_back(Tensor::zeros({c, r, r}));
    r /= 2;
  }
  CHECK(all_zero_bits(hw.forward(zeros)));

  // one hot stage equals its own resample-project term
  for (int s = 0; s < 4; ++s) {
    enc::Pyramid solo = zeros;
    solo[static_cast<size_t>(s)] = pyr[static_cast<size_t>(s)];
    Tensor part = hw.forward(solo);
    enc::Pyramid rest = pyr;
    rest[static_cast<size_t>(s)] = zeros[static_cast<size_t>(s)];
    Tensor other = hw.forward(rest);
    for (int64_t i = 0; i < got.size(); ++i)
      CHECK(part.ptr()[i] + other.ptr()[i] == doctest::Approx(got.ptr()[i]).epsilon(1e-4));
  }

  enc::Pyramid three(pyr.begin(), pyr.begin() + 3);
  CHECK_THROWS_WITH_AS(hw.forward(three), doctest::Contains("4 pyramid stages"),
                       std::invalid_argument);
  enc::Pyramid bad = pyr;
  bad[1] = Tensor::zeros({16, 4, 4});
  CHECK_THROWS_WITH_AS(hw.forward(bad), doctest::Contains("stage 1"), std::invalid_argument);
}

TEST_CASE("highway projections start semi-orthogonal with zero bias") {
  ParamStore ps;
  Rng rng(seed_for(12, "hw"));
  veh::HighwayExtractor hw(ps, "hw", {8, 16, 24, 32}, 16, rng);
  std::vector<int> cin = {8, 16, 24, 32};
  for (int s = 0; s < 4; ++s) {
    const float* w = hw.proj[static_cast<size_t>(s)].w->ptr();
    int c = cin[static_cast<size_t>(s)];
    int small = std::min(16, c);
    // gram matrix over the orthonormalized side
    for (int i = 0; i < small; ++i)
      for (int j = 0; j <= i; ++j) {
        double dot = 0;
        if (c >= 16) {  // rows orthonormal
          for (int k = 0; k < c; ++k)
            dot += static_cast<double>(w[i * c + k]) * w[j * c + k];
        } else {  // columns orthonormal
          for (int k = 0; k < 16; ++k)
            dot += static_cast<double>(w[k * c + i]) * w[k * c + j];
        }
        CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-5).scale(1.0));
      }
    CHECK(all_zero_bits(*hw.proj[static_cast<size_t>(s)].b));
  }
}

TEST_CASE("fresh controller emits exact zeros at every stage") {
  ParamStore ps;
  Rng rng(seed_for(13, "veh"));
  veh::VisualController ctrl(ps, "veh", 16, {4, 6, 8, 10}, rng);
  nn::NoGrad ng;

  Tensor e = randn({16, 16, 16}, 2);
  std::vector<Tensor> sig = ctrl.forward(e);
  REQUIRE(sig.size() == 4);
  int r = 16;
  std::vector<int> widths = {4, 6, 8, 10};
  for (int s = 0; s < 4; ++s, r /= 2) {
    CHECK(sig[static_cast<size_t>(s)].shape == nn::Shape{widths[static_cast<size_t>(s)], r, r});
    CHECK(all_zero_bits(sig[static_cast<size_t>(s)]));
  }

  // still a pure function of e
  std::vector<Tensor> again = ctrl.forward(e);
  for (int s = 0; s < 4; ++s)
    CHECK(same_bits(sig[static_cast<size_t>(s)], again[static_cast<size_t>(s)]));

  CHECK_THROWS_WITH_AS(ctrl.forward(randn({16, 8, 8}, 3)), doctest::Contains("(16,16,16)"),
                       std::invalid_argument);
}

TEST_CASE("one optimizer step wakes the controller up") {
  ParamStore ps;
  Rng rng(seed_for(14, "veh"));
  veh::VisualController ctrl(ps, "veh", 16, {4, 6, 8, 10}, rng);
  Tensor e = randn({16, 16, 16}, 4);

  {
    nn::Tape tape;
    std::vector<Tensor> sig = ctrl.forward(e);
    Tensor loss = nn::sum_all(sig[0]);
    for (int s = 1; s < 4; ++s) loss = nn::add(loss, nn::sum_all(sig[static_cast<size_t>(s)]));
    tape.backward(loss);
  }
  nn::Adam opt(ps, {.lr = 0.05f});
  opt.step();

  nn::NoGrad ng;
  std::vector<Tensor> sig = ctrl.forward(e);
  for (int s = 0; s < 4; ++s)
    CHECK_FALSE(all_zero_bits(sig[static_cast<size_t>(s)]));
}

TEST_CASE("gated prediction: fresh controller never changes the plain branch") {
  ParamStore ps;
  Rng rng(seed_for(15, "g"));
  diff::UNet2d unet(ps, "g/unet", 3, {4, 6, 8, 10}, 8, false, rng);
  veh::VisualController ctrl(ps, "g/veh", 16, {4, 6, 8, 10}, rng);
  nn::NoGrad ng;

  Tensor z = randn({1, 3, 16, 16}, 5);
  Tensor cond = randn({4, 8}, 6);
  Tensor e = randn({16, 16, 16}, 7);

  for (int t = 0; t < 10; ++t) {
    Tensor plain = unet.forward(z, t, cond, nullptr);
    for (int k = 0; k <= 10; ++k) {
      Tensor out = veh::gated_predict_noise(unet, ctrl, z, t, cond, &e, 10, k / 10.0);
      CHECK(same_bits(out, plain));
    }
    CHECK(same_bits(veh::gated_predict_noise(unet, ctrl, z, t, cond, nullptr, 10, 1.0), plain));
  }

  CHECK_THROWS_WITH_AS(veh::gated_predict_noise(unet, ctrl, z, 0, cond, nullptr, 10, 1.5),
                       doctest::Contains("rate"), std::invalid_argument);
  CHECK_THROWS(veh::gated_predict_noise(unet, ctrl, z, 0, cond, &e, 10, -0.2));
}

TEST_CASE("gated prediction: live controller conditions exactly the gated steps") {
  ParamStore ps;
  Rng rng(seed_for(16, "g"));
  diff::UNet2d unet(ps, "g/unet", 3, {4, 6, 8, 10}, 8, false, rng);
  veh::VisualController ctrl(ps, "g/veh", 16, {4, 6, 8, 10}, rng);
  for (auto* p : ps.all())
    if (p->name.find("/emit/") != std::string::npos)
      std::fill(p->value.ptr(), p->value.ptr() + p->value.size(), 0.05f);
  nn::NoGrad ng;

  Tensor z = randn({1, 3, 16, 16}, 8);
  Tensor cond = randn({4, 8}, 9);
  Tensor e = randn({16, 16, 16}, 10);
  std::vector<Tensor> signals = ctrl.forward(e);

  for (int t = 0; t < 10; ++t) {
    Tensor plain = unet.forward(z, t, cond, nullptr);
    Tensor conditioned = unet.forward(z, t, cond, &signals);
    CHECK_FALSE(same_bits(plain, conditioned));
    for (int k = 0; k <= 10; ++k) {
      Tensor out = veh::gated_predict_noise(unet, ctrl, z, t, cond, &e, 10, k / 10.0);
      CHECK(same_bits(out, 10 * t < 10 * k ? conditioned : plain));
    }
  }
}

TEST_CASE("audio branch refuses highway input") {
  ParamStore ps;
  Rng rng(seed_for(17, "a"));
  diff::UNet1d unet(ps, "a/unet", 1, {2, 3, 4, 5}, 8, rng);
  nn::NoGrad ng;
  Tensor z = randn({1, 1, 256}, 11);
  Tensor cond = randn({4, 8}, 12);
  Tensor e = randn({16, 16, 16}, 13);

  CHECK_THROWS_WITH_AS(veh::gated_predict_noise(unet, z, 0, cond, &e),
                       doctest::Contains("no visual highway"), std::invalid_argument);
  CHECK(same_bits(veh::gated_predict_noise(unet, z, 0, cond, nullptr),
                  unet.forward(z, 0, cond)));
}

TEST_CASE("highway sampling collapses to the plain sampler when inert") {
  ParamStore ps;
  Rng rng(seed_for(18, "s"));
  diff::UNet2d unet(ps, "s/unet", 3, {4, 6, 8, 10}, 8, false, rng);
  veh::VisualController ctrl(ps, "s/veh", 16, {4, 6, 8, 10}, rng);
  diff::Schedule sched = diff::Schedule::linear(10);
  Tensor cond = randn({4, 8}, 14);
  Tensor e = randn({16, 16, 16}, 15);

  Tensor plain = diff::ddpm_sample(unet, sched, {1, 3, 16, 16}, cond, 55, nullptr, 0.0);
  // fresh controller: gate position is irrelevant
  CHECK(same_bits(plain, veh::sample_with_highway(unet, sched, {1, 3, 16, 16}, cond, 55,
                                                  ctrl, e, 1.0)));
  // live controller, closed gate: still the plain path
  for (auto* p : ps.all())
    if (p->name.find("/emit/") != std::string::npos)
      std::fill(p->value.ptr(), p->value.ptr() + p->value.size(), 0.05f);
  CHECK(same_bits(plain, veh::sample_with_highway(unet, sched, {1, 3, 16, 16}, cond, 55,
                                                  ctrl, e, 0.0)));
  // open gate changes the trajectory
  CHECK_FALSE(same_bits(plain, veh::sample_with_highway(unet, sched, {1, 3, 16, 16}, cond,
                                                        55, ctrl, e, 1.0)));
}
