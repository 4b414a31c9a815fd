#include <catch2/catch_amalgamated.hpp>

#include "hpnet/gradcheck.hpp"
#include "hpnet/layers.hpp"
#include "hpnet/rng.hpp"
#include "support/reference.hpp"

using namespace hpnet;

namespace {
const Dims3 kOne{1, 1, 1};
const Dims3 kZero{0, 0, 0};
}  // namespace

TEST_CASE("conv3d identity kernel is the identity map") {
    Rng rng(11);
    auto in = reference::random_tensor<float>(1, {5, 4, 3}, rng);
    ConvWeights<float> kw(1, 1, kOne);
    kw.w[0] = 1.0f;
    auto out = conv3d(in, kw, kZero, kOne);
    REQUIRE(out.same_shape(in));
    for (std::size_t i = 0; i < in.size(); ++i) REQUIRE(out.values[i] == in.values[i]);
}

TEST_CASE("conv3d constant field with all-ones 3x3x3 kernel") {
    const float v = 2.5f;
    Tensor4<float> in(1, {6, 6, 6}, v);
    ConvWeights<float> kw(1, 1, {3, 3, 3});
    std::fill(kw.w.begin(), kw.w.end(), 1.0f);
    auto out = conv3d(in, kw, kOne, kOne);
    REQUIRE(out.dims == in.dims);
    // interior voxels see the full 27-point window
    for (int z = 1; z < 5; ++z)
        for (int y = 1; y < 5; ++y)
            for (int x = 1; x < 5; ++x)
                REQUIRE(out.at(0, x, y, z) == Catch::Approx(27.0 * v));
    // a corner sees only the 8 in-bounds taps
    REQUIRE(out.at(0, 0, 0, 0) == Catch::Approx(8.0 * v));
}

TEST_CASE("conv3d matches the nested-loop oracle exactly") {
    Rng rng(42);
    for (int trial = 0; trial < 3; ++trial) {
        auto in = reference::random_tensor<float>(2, {4, 4, 4}, rng);
        ConvWeights<float> kw(3, 2, {3, 3, 3});
        for (auto& w : kw.w) w = float(rng.normal() * 0.5);
        for (auto& b : kw.b) b = float(rng.normal() * 0.1);
        auto got = conv3d(in, kw, kOne, kOne);
        auto want = reference::conv3d_direct(in, kw, kOne, kOne);
        REQUIRE(got.same_shape(want));
        for (std::size_t i = 0; i < got.size(); ++i)
            REQUIRE(got.values[i] == Catch::Approx(want.values[i]).margin(1e-6));
    }
}

TEST_CASE("conv3d handles stride and asymmetric padding like the oracle") {
    Rng rng(7);
    auto in = reference::random_tensor<float>(2, {7, 6, 5}, rng);
    ConvWeights<float> kw(2, 2, {3, 2, 3});
    for (auto& w : kw.w) w = float(rng.normal());
    const Dims3 pad{1, 0, 2}, stride{2, 1, 2};
    auto got = conv3d(in, kw, pad, stride);
    auto want = reference::conv3d_direct(in, kw, pad, stride);
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i)
        REQUIRE(got.values[i] == Catch::Approx(want.values[i]).margin(1e-6));
}

TEST_CASE("conv3d is linear in the input") {
    Rng rng(3);
    auto x = reference::random_tensor<float>(2, {4, 3, 5}, rng);
    auto y = reference::random_tensor<float>(2, {4, 3, 5}, rng);
    ConvWeights<float> kw(2, 2, {3, 3, 3});
    for (auto& w : kw.w) w = float(rng.normal());
    const double a = 1.7, b = -0.6;
    Tensor4<float> mix(2, x.dims);
    for (std::size_t i = 0; i < x.size(); ++i)
        mix.values[i] = float(a * x.values[i] + b * y.values[i]);
    auto fx = conv3d(x, kw, kOne, kOne);
    auto fy = conv3d(y, kw, kOne, kOne);
    auto fmix = conv3d(mix, kw, kOne, kOne);
    for (std::size_t i = 0; i < fmix.size(); ++i) {
        const double want = a * fx.values[i] + b * fy.values[i];
        REQUIRE(fmix.values[i] == Catch::Approx(want).epsilon(1e-5).margin(1e-5));
    }
}

TEST_CASE("conv3d rejects bad inputs") {
    Tensor4<float> in(2, {4, 4, 4});
    ConvWeights<float> kw(1, 3, {3, 3, 3});  // expects 3 channels
    REQUIRE_THROWS_AS(conv3d(in, kw, kOne, kOne), ShapeError);

    ConvWeights<float> kw2(1, 2, {3, 3, 3});
    kw2.w[0] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(conv3d(in, kw2, kOne, kOne), NumericError);

    ConvWeights<float> kw3(1, 2, {5, 5, 5});  // output would be empty
    Tensor4<float> tiny(2, {4, 4, 4});
    REQUIRE_THROWS_AS(conv3d(tiny, kw3, kZero, kOne), ShapeError);
}

TEST_CASE("conv3d_backward zero upstream gives zero gradients") {
    Rng rng(5);
    auto in = reference::random_tensor<float>(1, {4, 4, 4}, rng);
    ConvWeights<float> kw(2, 1, {3, 3, 3});
    for (auto& w : kw.w) w = float(rng.normal());
    auto out = conv3d(in, kw, kOne, kOne);
    Tensor4<float> zero_up(out.c, out.dims);
    auto g = conv3d_backward(in, kw, zero_up, kOne, kOne);
    for (float v : g.dweights.w) REQUIRE(v == 0.0f);
    for (float v : g.dweights.b) REQUIRE(v == 0.0f);
    for (float v : g.dinput.values) REQUIRE(v == 0.0f);
}

TEST_CASE("conv3d_backward identity kernel passes upstream through") {
    Rng rng(6);
    auto in = reference::random_tensor<float>(1, {3, 3, 3}, rng);
    ConvWeights<float> kw(1, 1, kOne);
    kw.w[0] = 1.0f;
    auto up = reference::random_tensor<float>(1, {3, 3, 3}, rng);
    auto g = conv3d_backward(in, kw, up, kZero, kOne);
    for (std::size_t i = 0; i < up.size(); ++i) REQUIRE(g.dinput.values[i] == up.values[i]);
}

TEST_CASE("conv3d gradients match finite differences") {
    Rng rng(17);
    auto in = reference::random_tensor<double>(2, {4, 4, 4}, rng);
    ConvWeights<double> kw(3, 2, {3, 3, 3});
    for (auto& w : kw.w) w = rng.normal() * 0.5;
    for (auto& b : kw.b) b = rng.normal() * 0.2;
    auto probe = reference::random_tensor<double>(3, {4, 4, 4}, rng);
    auto rep = finite_difference_check(in, kw, kOne, kOne, probe, 1e-4);
    INFO("max rel err " << rep.max_rel_err << " over " << rep.checked);
    REQUIRE(rep.pass());
}

TEST_CASE("maxpool3d halves dims and matches window-max oracle") {
    Rng rng(8);
    auto in = reference::random_tensor<float>(1, {4, 4, 4}, rng);
    auto got = maxpool3d(in);
    auto want = reference::maxpool_direct(in);
    REQUIRE(got.out.same_shape(want));
    for (std::size_t i = 0; i < want.size(); ++i) REQUIRE(got.out.values[i] == want.values[i]);
}

TEST_CASE("maxpool3d fixtures") {
    Tensor4<float> c(2, {5, 4, 7}, 3.25f);
    auto r = maxpool3d(c);
    REQUIRE(r.out.dims == Dims3{2, 2, 3});
    for (float v : r.out.values) REQUIRE(v == 3.25f);

    Tensor4<float> crop(1, {29, 21, 55});
    REQUIRE(maxpool3d(crop).out.dims == Dims3{14, 10, 27});

    Tensor4<float> too_thin(1, {4, 1, 4});
    REQUIRE_THROWS_AS(maxpool3d(too_thin), ShapeError);
}

TEST_CASE("maxpool3d output bounded by input extremes; ties take first in scan order") {
    Rng rng(9);
    auto in = reference::random_tensor<float>(2, {6, 6, 6}, rng);
    auto r = maxpool3d(in);
    const float lo = *std::min_element(in.values.begin(), in.values.end());
    const float hi = *std::max_element(in.values.begin(), in.values.end());
    for (float v : r.out.values) {
        REQUIRE(v >= lo);
        REQUIRE(v <= hi);
    }

    Tensor4<float> tied(1, {2, 2, 2}, 1.0f);
    auto rt = maxpool3d(tied);
    REQUIRE(rt.argmax[0] == 0);  // first occurrence
}

TEST_CASE("maxpool3d backward routes through argmax") {
    Rng rng(10);
    auto in = reference::random_tensor<double>(1, {4, 4, 4}, rng, 1.0, 1e-3);
    auto probe = reference::random_tensor<double>(1, {2, 2, 2}, rng);
    auto rep = finite_difference_check_maxpool(in, probe, 1e-6);
    REQUIRE(rep.pass());
}

TEST_CASE("batch_norm train mode normalizes per channel") {
    Rng rng(12);
    std::vector<Tensor4<float>> batch;
    for (int s = 0; s < 4; ++s) batch.push_back(reference::random_tensor<float>(3, {5, 4, 3}, rng, 2.0));
    BnParams<float> bn(3);
    auto out = batch_norm(batch, bn, Mode::train, 0.9, 1e-5);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        std::size_t count = 0;
        for (const auto& t : out) {
            const float* p = t.channel(c);
            for (std::size_t i = 0; i < t.spatial(); ++i, ++count) mean += p[i];
        }
        mean /= double(count);
        for (const auto& t : out) {
            const float* p = t.channel(c);
            for (std::size_t i = 0; i < t.spatial(); ++i) var += (p[i] - mean) * (p[i] - mean);
        }
        var /= double(count);
        REQUIRE(std::fabs(mean) < 1e-3);
        REQUIRE(std::fabs(var - 1.0) < 1e-3);
    }
}

TEST_CASE("batch_norm affine law: gamma=2 beta=5 on normalized data") {
    Rng rng(13);
    std::vector<Tensor4<float>> batch;
    for (int s = 0; s < 8; ++s) batch.push_back(reference::random_tensor<float>(1, {4, 4, 4}, rng));
    BnParams<float> bn(1);
    bn.gamma[0] = 2.0f;
    bn.beta[0] = 5.0f;
    auto out = batch_norm(batch, bn, Mode::train, 0.9, 1e-5);
    double mean = 0.0, var = 0.0;
    std::size_t count = 0;
    for (const auto& t : out)
        for (float v : t.values) { mean += v; ++count; }
    mean /= double(count);
    for (const auto& t : out)
        for (float v : t.values) var += (v - mean) * (v - mean);
    var /= double(count);
    REQUIRE(mean == Catch::Approx(5.0).margin(1e-3));
    REQUIRE(std::sqrt(var) == Catch::Approx(2.0).margin(2e-3));
}

TEST_CASE("batch_norm infer mode matches the scalar formula") {
    // independent scalar evaluation of (x-mu)/sqrt(var+eps)*gamma+beta
    std::vector<Tensor4<float>> batch{Tensor4<float>(1, {2, 1, 1})};
    batch[0].values = {3.0f, -1.5f};
    BnParams<float> bn(1);
    bn.running_mean[0] = 0.75f;
    bn.running_var[0] = 4.0f;
    bn.gamma[0] = 1.5f;
    bn.beta[0] = -2.0f;
    const double eps = 1e-5;
    auto out = batch_norm(batch, bn, Mode::infer, 0.9, eps);
    const double scale = 1.5 / std::sqrt(4.0 + eps);
    REQUIRE(out[0].values[0] == Catch::Approx((3.0 - 0.75) * scale - 2.0).margin(1e-6));
    REQUIRE(out[0].values[1] == Catch::Approx((-1.5 - 0.75) * scale - 2.0).margin(1e-6));
}

TEST_CASE("batch_norm running stats update and preconditions") {
    Rng rng(14);
    std::vector<Tensor4<float>> batch;
    for (int s = 0; s < 2; ++s) batch.push_back(reference::random_tensor<float>(1, {3, 3, 3}, rng));
    BnParams<float> bn(1);
    batch_norm(batch, bn, Mode::train, 0.9, 1e-5);
    // running <- 0.9*initial + 0.1*batch
    double bmean = 0.0;
    for (const auto& t : batch)
        for (float v : t.values) bmean += v;
    bmean /= double(2 * 27);
    REQUIRE(bn.running_mean[0] == Catch::Approx(0.9 * 0.0 + 0.1 * bmean).margin(1e-6));

    std::vector<Tensor4<float>> single{batch[0]};
    REQUIRE_THROWS_AS(batch_norm(single, bn, Mode::train, 0.9, 1e-5), PreconditionError);
    REQUIRE_THROWS_AS(batch_norm(batch, bn, Mode::train, 0.9, 0.0), PreconditionError);
}

TEST_CASE("batch_norm gradients match finite differences") {
    Rng rng(15);
    std::vector<Tensor4<double>> batch, probe;
    for (int s = 0; s < 3; ++s) {
        batch.push_back(reference::random_tensor<double>(2, {3, 2, 2}, rng));
        probe.push_back(reference::random_tensor<double>(2, {3, 2, 2}, rng));
    }
    BnParams<double> bn(2);
    bn.gamma = {1.3, 0.7};
    bn.beta = {0.2, -0.4};
    auto rep = finite_difference_check(batch, bn, 0.9, 1e-5, probe, 1e-4);
    INFO("max rel err " << rep.max_rel_err);
    REQUIRE(rep.pass());
}

TEST_CASE("relu, gap and dropout fixtures") {
    Tensor4<float> t(1, {3, 1, 1});
    t.values = {-1.0f, 0.0f, 2.0f};
    auto r = relu(t);
    REQUIRE(r.values == std::vector<float>{0.0f, 0.0f, 2.0f});

    Tensor4<float> c(2, {4, 4, 4}, 0.0f);
    std::fill(c.channel(1), c.channel(1) + c.spatial(), 3.5f);
    auto g = gap(c);
    REQUIRE(g[0] == 0.0f);
    REQUIRE(g[1] == Catch::Approx(3.5));

    // law of large numbers under inverted dropout
    Rng rng(99);
    std::vector<float> ones(100000, 1.0f);
    auto d = dropout(ones, 0.5, Mode::train, rng);
    double mean = 0.0;
    for (float v : d.out) mean += v;
    mean /= double(d.out.size());
    REQUIRE(mean == Catch::Approx(1.0).epsilon(0.01));

    Rng rng2(100);
    auto infer = dropout(ones, 0.5, Mode::infer, rng2);
    REQUIRE(infer.out == ones);
    REQUIRE_THROWS_AS(dropout(ones, 1.0, Mode::train, rng2), PreconditionError);
}

TEST_CASE("gap equals exhaustive mean") {
    Rng rng(16);
    auto t = reference::random_tensor<float>(3, {5, 3, 4}, rng);
    auto g = gap(t);
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int z = 0; z < 4; ++z)
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 5; ++x) acc += t.at(c, x, y, z);
        REQUIRE(g[c] == Catch::Approx(acc / 60.0).epsilon(1e-6));
    }
}

TEST_CASE("fully_connected is exact to rounding under finite differences") {
    Rng rng(18);
    std::vector<double> in(7), probe(4);
    for (auto& v : in) v = rng.normal();
    for (auto& v : probe) v = rng.normal();
    FcWeights<double> fc(4, 7);
    for (auto& w : fc.w) w = rng.normal();
    for (auto& b : fc.b) b = rng.normal();
    auto rep = finite_difference_check(in, fc, probe, 1e-9);
    REQUIRE(rep.pass());
}

TEST_CASE("softmax cross entropy fixtures") {
    auto sym = softmax_cross_entropy<double>({0.0, 0.0}, 0);
    REQUIRE(sym.loss == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    REQUIRE(sym.dlogits[0] == Catch::Approx(-0.5).margin(1e-12));
    REQUIRE(sym.dlogits[1] == Catch::Approx(0.5).margin(1e-12));

    // scalar oracle: -log(e^10/(e^10+e^-10)) = log1p(exp(-20))
    auto easy = softmax_cross_entropy<double>({10.0, -10.0}, 0);
    REQUIRE(easy.loss == Catch::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));
    REQUIRE(easy.loss == Catch::Approx(2.06e-9).epsilon(0.01));

    REQUIRE_THROWS_AS(softmax_cross_entropy<double>({0.0, 0.0}, 2), PreconditionError);
    REQUIRE_THROWS_AS(softmax_cross_entropy<double>({0.0, 0.0}, -1), PreconditionError);
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(19);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> logits(2);
        for (auto& v : logits) v = 3.0 * rng.normal();
        auto rep = finite_difference_check_softmax(logits, int(rng.below(2)), 1e-6);
        REQUIRE(rep.pass());
    }
}

TEST_CASE("relu and gap finite-difference checks away from kinks") {
    Rng rng(20);
    auto in = reference::random_tensor<double>(2, {3, 3, 3}, rng, 1.0, 1e-2);
    auto probe = reference::random_tensor<double>(2, {3, 3, 3}, rng);
    REQUIRE(finite_difference_check_relu(in, probe, 1e-6).pass());

    std::vector<double> gprobe(2);
    for (auto& v : gprobe) v = rng.normal();
    REQUIRE(finite_difference_check_gap(in, gprobe, 1e-6).pass());
}
