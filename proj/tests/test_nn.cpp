#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "micrograin/nn.hpp"

using namespace micrograin;
using namespace micrograin::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float scale = 1.0f) {
    Tensor t(std::move(shape));
    for (float& v : t.v) v = scale * rng.normal_f();
    return t;
}

// Scalar loss used by every finite-difference check: a fixed random
// projection of the output, L = sum_k p_k * y_k.
struct Probe {
    std::vector<float> p;

    explicit Probe(std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        p.resize(n);
        for (float& v : p) v = rng.normal_f();
    }

    double loss(const Tensor& y) const {
        double acc = 0.0;
        for (std::size_t k = 0; k < y.v.size(); ++k) acc += static_cast<double>(p[k]) * y.v[k];
        return acc;
    }

    Tensor grad(const std::vector<int>& shape) const {
        Tensor g(shape);
        g.v.assign(p.begin(), p.end());
        return g;
    }
};

// Central finite differences on a handful of coordinates of `target`,
// compared against the analytic gradient left in `grad` by backward().
void check_grad(std::vector<float>& target, const std::vector<float>& grad,
                const std::function<double()>& loss, Rng& pick, int n_coords = 12,
                float eps = 1e-2f, double tol = 2e-2) {
    REQUIRE(target.size() == grad.size());
    for (int trial = 0; trial < n_coords; ++trial) {
        const std::size_t k = pick.uniform_index(target.size());
        const float saved = target[k];
        target[k] = saved + eps;
        const double lp = loss();
        target[k] = saved - eps;
        const double lm = loss();
        target[k] = saved;
        const double fd = (lp - lm) / (2.0 * static_cast<double>(eps));
        const double an = grad[k];
        const double scale = std::max({std::abs(fd), std::abs(an), 1e-3});
        INFO("coord " << k << " fd " << fd << " analytic " << an);
        CHECK(std::abs(fd - an) <= tol * scale);
    }
}

}  // namespace

TEST_CASE("linear layer: forward oracle and gradients") {
    Linear lin(3, 2, "lin");
    // tiny hand-checkable case: w = [[1,2,3],[4,5,6]], b = [10, 20]
    lin.w.w.v = {1, 2, 3, 4, 5, 6};
    lin.b.w.v = {10, 20};
    Tensor x({1, 3});
    x.v = {1, 1, 2};
    Tensor y = lin.forward(x);
    CHECK(y.v[0] == 19.0f);  // 1+2+6+10
    CHECK(y.v[1] == 41.0f);  // 4+5+12+20

    Rng rng(1);
    Tensor xr = random_tensor({4, 3}, rng);
    Probe probe(8, 2);
    auto loss = [&] { return probe.loss(lin.forward(xr)); };

    lin.w.zero_grad();
    lin.b.zero_grad();
    Tensor y2 = lin.forward(xr);
    Tensor gx = lin.backward(probe.grad({4, 2}));

    Rng pick(3);
    check_grad(lin.w.w.v, lin.w.g.v, loss, pick);
    check_grad(lin.b.w.v, lin.b.g.v, loss, pick);
    check_grad(xr.v, gx.v, loss, pick);
}

TEST_CASE("silu: values and gradient") {
    SiLU act;
    Tensor x({1, 4});
    x.v = {0.0f, 1.0f, -1.0f, 5.0f};
    Tensor y = act.forward(x);
    CHECK(y.v[0] == 0.0f);
    CHECK_THAT(static_cast<double>(y.v[1]), Catch::Matchers::WithinAbs(1.0 / (1.0 + std::exp(-1.0)), 1e-6));

    Rng rng(4);
    Tensor xr = random_tensor({2, 6}, rng);
    Probe probe(12, 5);
    auto loss = [&] { return probe.loss(act.forward(xr)); };
    act.forward(xr);
    Tensor gx = act.backward(probe.grad({2, 6}));
    Rng pick(6);
    check_grad(xr.v, gx.v, loss, pick);
}

TEST_CASE("conv3x3: identity kernel, padding, gradients") {
    // kernel with a single 1 at the center behaves as identity
    Conv3x3 conv(1, 1, "id");
    conv.init_zero();
    conv.w.w.v[4] = 1.0f;  // center tap of the 3x3 window
    Rng rng(7);
    Tensor x = random_tensor({1, 1, 5, 5}, rng);
    Tensor y = conv.forward(x);
    CHECK(y.v == x.v);

    // an all-ones kernel on an all-ones image counts the 3x3 neighborhood,
    // exposing the zero padding at corners and edges
    std::fill(conv.w.w.v.begin(), conv.w.w.v.end(), 1.0f);
    Tensor ones({1, 1, 4, 4});
    std::fill(ones.v.begin(), ones.v.end(), 1.0f);
    Tensor counts = conv.forward(ones);
    CHECK(counts.v[0] == 4.0f);   // corner
    CHECK(counts.v[1] == 6.0f);   // edge
    CHECK(counts.v[5] == 9.0f);   // interior

    Conv3x3 c2(2, 3, "c2");
    c2.init(rng);
    Tensor xr = random_tensor({2, 2, 4, 4}, rng);
    Probe probe(2 * 3 * 16, 8);
    auto loss = [&] { return probe.loss(c2.forward(xr)); };
    c2.w.zero_grad();
    c2.b.zero_grad();
    c2.forward(xr);
    Tensor gx = c2.backward(probe.grad({2, 3, 4, 4}));
    Rng pick(9);
    check_grad(c2.w.w.v, c2.w.g.v, loss, pick, 16);
    check_grad(c2.b.w.v, c2.b.g.v, loss, pick, 3);
    check_grad(xr.v, gx.v, loss, pick, 16);
}

TEST_CASE("pooling and upsampling are exact adjoints") {
    Rng rng(10);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor y = avg_pool2(x);
    CHECK(y.shape == std::vector<int>{2, 3, 3, 3});
    CHECK_THAT(static_cast<double>(y.v[0]),
               Catch::Matchers::WithinAbs(0.25 * (x.v[0] + x.v[1] + x.v[6] + x.v[7]), 1e-6));

    // adjoint identity: <pool(x), u> == <x, pool^T(u)> for random u
    Tensor u = random_tensor({2, 3, 3, 3}, rng);
    Tensor ut = avg_pool2_backward(u);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t k = 0; k < y.v.size(); ++k) lhs += static_cast<double>(y.v[k]) * u.v[k];
    for (std::size_t k = 0; k < x.v.size(); ++k) rhs += static_cast<double>(x.v[k]) * ut.v[k];
    CHECK_THAT(lhs, Catch::Matchers::WithinRel(rhs, 1e-5));

    Tensor up = upsample2(y);
    CHECK(up.shape == std::vector<int>{2, 3, 6, 6});
    CHECK(up.v[0] == y.v[0]);
    CHECK(up.v[1] == y.v[0]);
    Tensor w = random_tensor({2, 3, 6, 6}, rng);
    Tensor wt = upsample2_backward(w);
    lhs = rhs = 0.0;
    for (std::size_t k = 0; k < up.v.size(); ++k) lhs += static_cast<double>(up.v[k]) * w.v[k];
    for (std::size_t k = 0; k < y.v.size(); ++k) rhs += static_cast<double>(y.v[k]) * wt.v[k];
    CHECK_THAT(lhs, Catch::Matchers::WithinRel(rhs, 1e-5));

    CHECK_THROWS_AS(avg_pool2(Tensor({1, 1, 5, 4})), ShapeError);
}

TEST_CASE("channel concat and split are inverse") {
    Rng rng(12);
    Tensor a = random_tensor({2, 2, 3, 3}, rng);
    Tensor b = random_tensor({2, 5, 3, 3}, rng);
    Tensor y = concat_channels(a, b);
    CHECK(y.shape == std::vector<int>{2, 7, 3, 3});
    auto [a2, b2] = split_channels(y, 2);
    CHECK(a2.v == a.v);
    CHECK(b2.v == b.v);
    CHECK_THROWS_AS(concat_channels(a, Tensor({2, 1, 4, 4})), ShapeError);
}

TEST_CASE("conv block injects the embedding and backpropagates") {
    Rng rng(13);
    ConvBlock block(2, 4, 8, "blk");
    block.init(rng);

    Tensor x = random_tensor({2, 2, 4, 4}, rng, 0.5f);
    Tensor emb = random_tensor({2, 8}, rng, 0.5f);

    // the embedding must actually reach the output
    Tensor y0 = block.forward(x, emb);
    Tensor emb2 = emb;
    emb2.v[0] += 1.0f;
    Tensor y1 = block.forward(x, emb2);
    CHECK(y0.v != y1.v);

    Probe probe(2 * 4 * 16, 14);
    auto loss = [&] { return probe.loss(block.forward(x, emb)); };
    std::vector<Param*> params;
    block.collect(params);
    REQUIRE(params.size() == 6);
    for (Param* p : params) p->zero_grad();
    block.forward(x, emb);
    Tensor gx = block.backward(probe.grad({2, 4, 4, 4}));
    Rng pick(15);
    for (Param* p : params) check_grad(p->w.v, p->g.v, loss, pick, 8);
    check_grad(x.v, gx.v, loss, pick, 8);
}

TEST_CASE("unet: shape preservation, zero start, determinism, gradients") {
    UNet net(4, 16);
    net.init(77);

    Rng rng(16);
    for (std::vector<int> shape : {std::vector<int>{1, 2, 8, 8}, std::vector<int>{2, 2, 16, 16}}) {
        Tensor x = random_tensor(shape, rng);
        Tensor emb = random_tensor({shape[0], 16}, rng);
        Tensor y = net.forward(x, emb);
        CHECK(y.shape == shape);
        // zero-initialized head: untrained output is exactly zero
        for (float v : y.v) CHECK(v == 0.0f);
    }

    CHECK_THROWS_AS(net.forward(Tensor({1, 3, 8, 8}), Tensor({1, 16})), ShapeError);
    CHECK_THROWS_AS(net.forward(Tensor({1, 2, 6, 6}), Tensor({1, 16})), ShapeError);

    // nudge the head so outputs are nontrivial, then check determinism
    Rng wrng(18);
    for (float& v : net.out_conv.w.w.v) v = 0.05f * wrng.normal_f();
    Tensor x = random_tensor({2, 2, 8, 8}, rng);
    Tensor emb = random_tensor({2, 16}, rng);
    Tensor y1 = net.forward(x, emb);
    Tensor y2 = net.forward(x, emb);
    CHECK(y1.v == y2.v);

    // full-chain gradient check on a few coordinates of every layer family
    Probe probe(2 * 2 * 64, 19);
    auto loss = [&] { return probe.loss(net.forward(x, emb)); };
    net.zero_grad();
    net.forward(x, emb);
    Tensor gx = net.backward(probe.grad({2, 2, 8, 8}));
    Rng pick(20);
    check_grad(net.enc1.conv1.w.w.v, net.enc1.conv1.w.g.v, loss, pick, 6);
    check_grad(net.enc2.proj.w.w.v, net.enc2.proj.w.g.v, loss, pick, 6);
    check_grad(net.mid.conv2.w.w.v, net.mid.conv2.w.g.v, loss, pick, 6);
    check_grad(net.dec2.conv1.w.w.v, net.dec2.conv1.w.g.v, loss, pick, 6);
    check_grad(net.dec1.conv2.b.w.v, net.dec1.conv2.b.g.v, loss, pick, 4);
    check_grad(net.out_conv.w.w.v, net.out_conv.w.g.v, loss, pick, 6);
    check_grad(x.v, gx.v, loss, pick, 6);
}

TEST_CASE("adam: converges on a quadratic and rejects list changes") {
    Param p({4}, "q");
    Rng rng(21);
    for (float& v : p.w.v) v = 2.0f + rng.normal_f();
    const std::vector<float> target{1.0f, -2.0f, 0.5f, 3.0f};

    Adam opt;
    opt.lr = 0.05;
    std::vector<Param*> params{&p};
    for (int it = 0; it < 400; ++it) {
        p.zero_grad();
        for (int k = 0; k < 4; ++k) p.g.v[k] = 2.0f * (p.w.v[k] - target[k]);
        opt.step(params);
    }
    for (int k = 0; k < 4; ++k)
        CHECK_THAT(static_cast<double>(p.w.v[k]),
                   Catch::Matchers::WithinAbs(static_cast<double>(target[k]), 1e-2));

    Param extra({2}, "extra");
    params.push_back(&extra);
    CHECK_THROWS_AS(opt.step(params), ShapeError);
}
