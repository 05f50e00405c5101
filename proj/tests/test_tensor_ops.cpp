#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "anymodal/ops.hpp"
#include "anymodal/rng.hpp"

using namespace am;
using namespace am::nn;

namespace {

Tensor randn(Shape s, uint64_t seed, double sd = 1.0) {
  Tensor t = Tensor::zeros(std::move(s));
  Rng r(seed);
  r.fill_normal(t.ptr(), t.size(), sd);
  return t;
}

// Straight-line conv2d reference, double accumulation, independent of the
// im2col path in the library.
std::vector<double> conv2d_ref(const float* x, int N, int C, int H, int W, const float* w,
                               int OC, int KH, int KW, const float* bias, int stride,
                               bool same, int& OH, int& OW) {
  int pad_y = 0, pad_x = 0;
  if (same) {
    OH = (H + stride - 1) / stride;
    OW = (W + stride - 1) / stride;
    pad_y = std::max((OH - 1) * stride + KH - H, 0) / 2;
    pad_x = std::max((OW - 1) * stride + KW - W, 0) / 2;
  } else {
    OH = (H - KH) / stride + 1;
    OW = (W - KW) / stride + 1;
  }
  std::vector<double> out(static_cast<size_t>(N) * OC * OH * OW, 0.0);
  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < OC; ++oc)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = bias ? bias[oc] : 0.0;
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                int iy = oy * stride + ky - pad_y;
                int ix = ox * stride + kx - pad_x;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += static_cast<double>(x[((n * C + c) * H + iy) * W + ix]) *
                       static_cast<double>(w[((oc * C + c) * KH + ky) * KW + kx]);
              }
          out[static_cast<size_t>(((n * OC + oc) * OH + oy) * OW + ox)] = acc;
        }
  return out;
}

std::vector<double> tconv2d_ref(const float* x, int N, int IC, int H, int W, const float* w,
                                int OC, int KH, int KW, const float* bias, int stride,
                                int& OH, int& OW) {
  OH = (H - 1) * stride + KH;
  OW = (W - 1) * stride + KW;
  std::vector<double> out(static_cast<size_t>(N) * OC * OH * OW, 0.0);
  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc)
      for (int ic = 0; ic < IC; ++ic)
        for (int iy = 0; iy < H; ++iy)
          for (int ix = 0; ix < W; ++ix)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx)
                out[static_cast<size_t>(
                    ((n * OC + oc) * OH + iy * stride + ky) * OW + ix * stride + kx)] +=
                    static_cast<double>(x[((n * IC + ic) * H + iy) * W + ix]) *
                    static_cast<double>(w[((ic * OC + oc) * KH + ky) * KW + kx]);
    if (bias)
      for (int oc = 0; oc < OC; ++oc)
        for (int i = 0; i < OH * OW; ++i)
          out[static_cast<size_t>((n * OC + oc) * OH * OW + i)] += bias[oc];
  }
  return out;
}

}  // namespace

TEST_CASE("elementwise values") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 2}, {10, 20, 30, 40});
  CHECK((*add(a, b).data) == std::vector<float>{11, 22, 33, 44});
  CHECK((*sub(b, a).data) == std::vector<float>{9, 18, 27, 36});
  CHECK((*mul(a, b).data) == std::vector<float>{10, 40, 90, 160});
  CHECK((*scale(a, 0.5f).data) == std::vector<float>{0.5f, 1.0f, 1.5f, 2.0f});
}

TEST_CASE("shape mismatch errors name the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 3});
  try {
    add(a, b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({4, 2})), std::invalid_argument);
  CHECK_THROWS_AS(reshape(a, {7}), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 3, 3, 3}),
                         Tensor(), 1, Pad::Same),
                  std::invalid_argument);
}

TEST_CASE("matmul known values") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul(a, b);
  CHECK((*c.data) == std::vector<float>{58, 64, 139, 154});
}

TEST_CASE("conv2d matches straight-line reference") {
  Rng r(7);
  for (auto [stride, same] : {std::pair{1, true}, {2, true}, {1, false}, {2, false}}) {
    Tensor x = randn({2, 3, 8, 8}, r.raw()());
    Tensor w = randn({4, 3, 3, 3}, r.raw()());
    Tensor b = randn({4}, r.raw()());
    Tensor out = conv2d(x, w, b, stride, same ? Pad::Same : Pad::Valid);
    int oh = 0, ow = 0;
    auto ref = conv2d_ref(x.ptr(), 2, 3, 8, 8, w.ptr(), 4, 3, 3, b.ptr(), stride, same, oh, ow);
    REQUIRE(out.shape == Shape{2, 4, oh, ow});
    for (int64_t i = 0; i < out.size(); ++i)
      CHECK(out.ptr()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-4));
  }
}

TEST_CASE("conv2d same stride-2 halves 16 to 8") {
  Tensor x = randn({1, 3, 16, 16}, 11);
  Tensor w = randn({5, 3, 3, 3}, 12);
  CHECK(conv2d(x, w, Tensor(), 2, Pad::Same).shape == Shape{1, 5, 8, 8});
  CHECK(conv2d(x, w, Tensor(), 2, Pad::Same).shape == Shape{1, 5, 8, 8});
}

TEST_CASE("conv1d matches 2d reference on a height-1 layout") {
  Tensor x = randn({2, 3, 12}, 21);
  Tensor w = randn({4, 3, 5}, 22);
  Tensor b = randn({4}, 23);
  Tensor out = conv1d(x, w, b, 2, Pad::Same);
  int oh = 0, ow = 0;
  auto ref = conv2d_ref(x.ptr(), 2, 3, 1, 12, w.ptr(), 4, 1, 5, b.ptr(), 2, true, oh, ow);
  REQUIRE(out.shape == Shape{2, 4, 6});
  for (int64_t i = 0; i < out.size(); ++i)
    CHECK(out.ptr()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-4));
}

TEST_CASE("tconv2d matches straight-line reference") {
  Tensor x = randn({2, 3, 4, 4}, 31);
  Tensor w = randn({3, 2, 2, 2}, 32);
  Tensor b = randn({2}, 33);
  Tensor out = tconv2d(x, w, b, 2);
  int oh = 0, ow = 0;
  auto ref = tconv2d_ref(x.ptr(), 2, 3, 4, 4, w.ptr(), 2, 2, 2, b.ptr(), 2, oh, ow);
  REQUIRE(out.shape == Shape{2, 2, oh, ow});
  CHECK(oh == 8);
  for (int64_t i = 0; i < out.size(); ++i)
    CHECK(out.ptr()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-4));
}

TEST_CASE("softmax rows are distributions") {
  Tensor x = randn({3, 7}, 41);
  Tensor y = softmax(x);
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int j = 0; j < 7; ++j) {
      float v = y.ptr()[r * 7 + j];
      CHECK(v >= 0.0f);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("l2_normalize yields exact unit vectors") {
  Tensor x = randn({6, 5}, 47);
  Tensor y = l2_normalize(x);
  double ss = 0, dot = 0, nx = 0;
  for (int64_t i = 0; i < y.size(); ++i) {
    ss += static_cast<double>(y.ptr()[i]) * y.ptr()[i];
    dot += static_cast<double>(y.ptr()[i]) * x.ptr()[i];
    nx += static_cast<double>(x.ptr()[i]) * x.ptr()[i];
  }
  CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-6));
  // direction preserved
  CHECK(dot == doctest::Approx(std::sqrt(nx)).epsilon(1e-5));

  Tensor tiny = Tensor::zeros({4});
  CHECK_THROWS_WITH_AS(l2_normalize(tiny), doctest::Contains("l2_normalize"),
                       std::invalid_argument);
}

TEST_CASE("layer_norm standardizes the last axis") {
  Tensor x = randn({4, 16}, 51, 3.0);
  Tensor g = Tensor::full({16}, 1.0f);
  Tensor b = Tensor::zeros({16});
  Tensor y = layer_norm(x, g, b);
  for (int r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (int j = 0; j < 16; ++j) mu += y.ptr()[r * 16 + j];
    mu /= 16;
    for (int j = 0; j < 16; ++j) {
      double c = y.ptr()[r * 16 + j] - mu;
      var += c * c;
    }
    var /= 16;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("gather_rows copies and validates") {
  Tensor t = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor out = gather_rows(t, {2, 0, 2});
  CHECK((*out.data) == std::vector<float>{5, 6, 1, 2, 5, 6});
  CHECK_THROWS_AS(gather_rows(t, {3}), std::invalid_argument);
  CHECK_THROWS_AS(gather_rows(t, {-1}), std::invalid_argument);
}

TEST_CASE("concat along both axes") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({1, 2}, {5, 6});
  CHECK((*concat<float>({a, b}, 0).data) == std::vector<float>{1, 2, 3, 4, 5, 6});
  Tensor c = Tensor::from({2, 1}, {7, 8});
  CHECK((*concat<float>({a, c}, 1).data) == std::vector<float>{1, 2, 7, 3, 4, 8});
  CHECK_THROWS_AS(concat<float>({a, Tensor::zeros({2, 3})}, 0), std::invalid_argument);
}

TEST_CASE("nearest resample index map") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor up = resample_nearest2d(x, 4, 4);
  CHECK((*up.data) ==
        std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  Tensor same = resample_nearest2d(x, 2, 2);
  CHECK(std::memcmp(same.ptr(), x.ptr(), sizeof(float) * 4) == 0);
  Tensor line = Tensor::from({1, 1, 4}, {1, 2, 3, 4});
  CHECK((*resample_nearest1d(line, 2).data) == std::vector<float>{1, 3});
}

TEST_CASE("cross_entropy on uniform logits equals log V") {
  Tensor logits = Tensor::zeros({3, 11});
  Tensor loss = cross_entropy(logits, {0, 5, 10});
  CHECK((*loss.data)[0] == doctest::Approx(std::log(11.0)).epsilon(1e-6));
  Tensor masked = cross_entropy(logits, {0, -1, 10});
  CHECK((*masked.data)[0] == doctest::Approx(std::log(11.0)).epsilon(1e-6));
  CHECK_THROWS_AS(cross_entropy(logits, {-1, -1, -1}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(logits, {0, 11, 0}), std::invalid_argument);
}

TEST_CASE("mse and cosine basics") {
  Tensor a = randn({4, 4}, 61);
  CHECK((*mse(a, a).data)[0] == 0.0f);
  Tensor u = Tensor::from({3}, {1, 0, 0});
  Tensor v = Tensor::from({3}, {0, 1, 0});
  CHECK((*cosine_sim(u, v).data)[0] == doctest::Approx(0.0));
  CHECK((*cosine_sim(u, scale(u, -2.0f)).data)[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(cosine_exact(u.ptr(), u.ptr(), 3) == 1.0);
  Tensor z = Tensor::zeros({3});
  CHECK(cosine_exact(z.ptr(), u.ptr(), 3) == 0.0);
}

TEST_CASE("cosine_exact is exactly one for any nonzero vector against itself") {
  for (uint64_t seed = 0; seed < 32; ++seed) {
    Tensor a = randn({64}, 100 + seed, 2.0);
    CHECK(cosine_exact(a.ptr(), a.ptr(), a.size()) == 1.0);
  }
}

TEST_CASE("causal sdpa ignores future positions") {
  Tensor q = randn({1, 4, 8}, 71);
  Tensor k = randn({1, 4, 8}, 72);
  Tensor v = randn({1, 4, 8}, 73);
  Tensor out1 = sdpa(q, k, v, true);
  k.ptr()[3 * 8 + 2] += 5.0f;
  v.ptr()[3 * 8 + 1] -= 3.0f;
  Tensor out2 = sdpa(q, k, v, true);
  CHECK(std::memcmp(out1.ptr(), out2.ptr(), sizeof(float) * 3 * 8) == 0);
  CHECK(out1.ptr()[3 * 8] != out2.ptr()[3 * 8]);
}

TEST_CASE("axis reductions") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK((*sum_axis(x, 0).data) == std::vector<float>{5, 7, 9});
  CHECK((*sum_axis(x, 1).data) == std::vector<float>{6, 15});
  CHECK((*mean_axis(x, 0).data) == std::vector<float>{2.5f, 3.5f, 4.5f});
  CHECK((*sum_all(x).data)[0] == 21.0f);
  CHECK((*mean_all(x).data)[0] == 3.5f);
}

TEST_CASE("permute round trip") {
  Tensor x = randn({2, 3, 4}, 81);
  Tensor p = permute(x, {2, 0, 1});
  REQUIRE(p.shape == Shape{4, 2, 3});
  Tensor back = permute(p, {1, 2, 0});
  CHECK(std::memcmp(back.ptr(), x.ptr(), sizeof(float) * static_cast<size_t>(x.size())) == 0);
  CHECK_THROWS_AS(permute(x, {0, 0, 1}), std::invalid_argument);
}

TEST_CASE("sinusoidal embedding is unit-bounded and step-distinct") {
  Tensor e0 = sinusoidal_embedding<float>(0, 32);
  Tensor e5 = sinusoidal_embedding<float>(5, 32);
  for (int i = 0; i < 32; ++i) CHECK(std::fabs(e0.ptr()[i]) <= 1.0f);
  CHECK(std::memcmp(e0.ptr(), e5.ptr(), sizeof(float) * 32) != 0);
}
