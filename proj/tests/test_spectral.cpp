#include <doctest.h>

#include <cmath>
#include <vector>

#include "specfit/spectral.hpp"
#include "testutil.hpp"

using namespace specfit;

namespace {

template <class Real>
Tensor<Real> dense_forward(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
    NoGradGuard ng;
    return add_rowvec(matmul(x, w), b);
}

} // namespace

TEST_CASE("decompose of identity keeps unit singular values and identity weight") {
    auto w = Tensor<double>::from({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
    auto b = Tensor<double>::zeros({4});
    auto layer = SpectralLinear<double>::decompose(w, &b, {0, ModuleTag::q});
    for (double s : layer.sigma.data()) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    auto [wm, bm] = layer.merge();
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 4; ++j)
            CHECK(wm.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    for (double x : bm.data()) CHECK(x == 0.0);
}

TEST_CASE("a layer without bias synthesizes a trainable zero bias") {
    Rng rng(101);
    auto w = testutil::random_tensor<double>({5, 3}, rng);
    auto layer = SpectralLinear<double>::decompose(w, nullptr, {1, ModuleTag::f1});
    CHECK(layer.bias.numel() == 3);
    for (double x : layer.bias.data()) CHECK(x == 0.0);
    for (double x : layer.bias0) CHECK(x == 0.0);
    layer.bias.set_requires_grad(true);
    CHECK(layer.bias.requires_grad());
}

TEST_CASE("factored forward reproduces the dense layer at init (32-bit)") {
    Rng rng(103);
    auto w = testutil::random_tensor<float>({16, 8}, rng);
    auto b = testutil::random_tensor<float>({8}, rng, 0.3f);
    auto layer = SpectralLinear<float>::decompose(w, &b, {0, ModuleTag::f1});
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto x = testutil::random_tensor<float>({3, 16}, rng);
        auto yd = dense_forward(x, w, b);
        auto ys = layer.forward(x);
        for (std::size_t i = 0; i < yd.data().size(); ++i) {
            const double denom = std::max({1.0, std::abs((double)yd.data()[i])});
            worst = std::max(worst, std::abs((double)yd.data()[i] - (double)ys.data()[i]) / denom);
        }
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("identity factors pass input through, zero input returns the bias") {
    auto w = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto b = Tensor<double>::from({3}, {0.5, -1.0, 2.0});
    auto layer = SpectralLinear<double>::decompose(w, &b, {0, ModuleTag::v});
    Rng rng(107);
    auto x = testutil::random_tensor<double>({4, 3}, rng);
    auto y = layer.forward(x);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 3; ++j)
            CHECK(y.at(i, j) == doctest::Approx(x.at(i, j) + b.data()[j]).epsilon(1e-12));

    auto zero = Tensor<double>::zeros({2, 3});
    auto yb = layer.forward(zero);
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 3; ++j)
            CHECK(yb.at(i, j) == doctest::Approx(b.data()[j]).epsilon(1e-12));
}

TEST_CASE("sigma and bias gradients match finite differences (64-bit)") {
    Rng rng(109);
    auto w = testutil::random_tensor<double>({6, 4}, rng);
    auto b = testutil::random_tensor<double>({4}, rng, 0.2);
    auto layer = SpectralLinear<double>::decompose(w, &b, {0, ModuleTag::o});
    layer.sigma.set_requires_grad(true);
    layer.bias.set_requires_grad(true);
    auto x = testutil::random_tensor<double>({5, 6}, rng);

    auto make_loss = [&]() { return sum(mul(layer.forward(x), layer.forward(x))); };
    auto loss = make_loss();
    loss.backward();
    auto lv = [&]() {
        NoGradGuard ng;
        return make_loss().item();
    };
    std::vector<double> gs(layer.sigma.grad().begin(), layer.sigma.grad().end());
    CHECK(testutil::finite_diff_max_rel_err(layer.sigma, lv, gs) <= 1e-6);
    std::vector<double> gb(layer.bias.grad().begin(), layer.bias.grad().end());
    CHECK(testutil::finite_diff_max_rel_err(layer.bias, lv, gb) <= 1e-6);
}

TEST_CASE("merge tracks trained sigma and bias") {
    Rng rng(113);
    auto w = testutil::random_tensor<float>({7, 5}, rng);
    auto b = testutil::random_tensor<float>({5}, rng, 0.1f);
    auto layer = SpectralLinear<float>::decompose(w, &b, {0, ModuleTag::f2});

    // Untouched layer merges back to the original pair.
    auto [w0, b0] = layer.merge();
    for (std::size_t i = 0; i < w.data().size(); ++i)
        CHECK(std::abs(w0.data()[i] - w.data()[i]) <= 1e-5f * std::max(1.0f, std::abs(w.data()[i])));
    for (std::size_t i = 0; i < b.data().size(); ++i) CHECK(b0.data()[i] == b.data()[i]);

    // Perturb the trainable vectors, then dense and factored forwards agree.
    for (auto& s : layer.sigma.data()) s *= 1.3f;
    for (auto& x : layer.bias.data()) x += 0.25f;
    auto [w1, b1] = layer.merge();
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto x = testutil::random_tensor<float>({2, 7}, rng);
        auto yd = dense_forward(x, w1, b1);
        auto ys = layer.forward(x);
        for (std::size_t i = 0; i < yd.data().size(); ++i) {
            const double denom = std::max(1.0, std::abs((double)yd.data()[i]));
            worst = std::max(worst, std::abs((double)yd.data()[i] - (double)ys.data()[i]) / denom);
        }
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("doubling sigma on an identity layer doubles the merged weight") {
    auto w = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
    auto layer = SpectralLinear<double>::decompose(w, nullptr, {0, ModuleTag::q});
    for (auto& s : layer.sigma.data()) s *= 2.0;
    auto [wm, bm] = layer.merge();
    CHECK(wm.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(wm.at(1, 1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(wm.at(0, 1) == doctest::Approx(0.0));
    (void)bm;
}

TEST_CASE("delta_star captures exactly the sigma movement") {
    Rng rng(127);
    auto w = testutil::random_tensor<double>({9, 6}, rng);
    auto b = testutil::random_tensor<double>({6}, rng);
    auto layer = SpectralLinear<double>::decompose(w, &b, {2, ModuleTag::k});

    auto d0 = layer.delta_star();
    for (double x : d0.data()) CHECK(x == 0.0);

    // A unit bump on one singular value is a rank-1 move of unit norm.
    layer.sigma.data()[2] += 1.0;
    auto d1 = layer.delta_star();
    CHECK(std::abs(frobenius_norm(d1) - 1.0) <= 1e-10);
    CHECK(effective_rank(d1) == 1);

    layer.sigma.data()[0] += 0.3;
    layer.sigma.data()[5] -= 0.8;
    auto d3 = layer.delta_star();
    CHECK(effective_rank(d3) == 3);

    layer.bias.data()[1] += 2.0;
    auto db = layer.delta_bias();
    CHECK(db[1] == doctest::Approx(2.0));
    CHECK(db[0] == 0.0);
}

TEST_CASE("factors stay frozen and the forward never builds the dense weight") {
    Rng rng(131);
    auto w = testutil::random_tensor<double>({10, 6}, rng);
    auto b = testutil::random_tensor<double>({6}, rng);
    auto layer = SpectralLinear<double>::decompose(w, &b, {0, ModuleTag::q});
    layer.sigma.set_requires_grad(true);
    layer.bias.set_requires_grad(true);

    const auto hash_u = testutil::tensor_hash(layer.U);
    const auto hash_v = testutil::tensor_hash(layer.V);

    auto x = testutil::random_tensor<double>({3, 10}, rng);
    auto loss = sum(mul(layer.forward(x), layer.forward(x)));
    auto shapes = loss.graph_shapes();
    for (const auto& s : shapes) {
        const bool dense_w = (s == Shape{10, 6}) || (s == Shape{6, 10});
        CHECK_FALSE(dense_w);
    }
    loss.backward();
    CHECK_FALSE(layer.U.has_grad());
    CHECK_FALSE(layer.V.has_grad());
    CHECK_FALSE(layer.Ut.has_grad());
    // Simulated update touches only sigma/bias; the factors are bit-frozen.
    for (auto& s : layer.sigma.data()) s += 0.01;
    CHECK(testutil::tensor_hash(layer.U) == hash_u);
    CHECK(testutil::tensor_hash(layer.V) == hash_v);
}

TEST_CASE("sigma dropout mode draws from the provided stream") {
    Rng rng(137);
    auto w = testutil::random_tensor<double>({4, 4}, rng);
    auto layer = SpectralLinear<double>::decompose(w, nullptr, {0, ModuleTag::q});
    auto x = testutil::random_tensor<double>({2, 4}, rng);

    Rng r1(5), r2(5);
    FwdCtx<double> ctx1{true, 0.5, &r1};
    FwdCtx<double> ctx2{true, 0.5, &r2};
    auto y1 = layer.forward(x, ctx1);
    auto y2 = layer.forward(x, ctx2);
    CHECK(testutil::bit_equal(y1, y2));

    FwdCtx<double> eval_ctx{false, 0.5, &r1};
    auto ye = layer.forward(x, eval_ctx);
    auto yp = layer.forward(x);
    CHECK(testutil::bit_equal(ye, yp));

    FwdCtx<double> bad{true, 0.5, nullptr};
    CHECK_THROWS_AS(layer.forward(x, bad), ContractError);
}
