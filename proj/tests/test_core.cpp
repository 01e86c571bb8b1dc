// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bevsplat/core/checkpoint.hpp"
#include "bevsplat/core/gradcheck.hpp"
#include "bevsplat/core/nn.hpp"
#include "bevsplat/core/ops.hpp"
#include "bevsplat/core/optim.hpp"

#include <cstdio>

using namespace bevsplat;
using T = Tensor<double>;

namespace {

T random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return T::from(std::move(s), rng.uniform_vec<double>(numel(s), lo, hi));
}

double max_abs_diff(const VecX<double>& a, const VecX<double>& b) {
    return (a - b).abs().maxCoeff();
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TEST_CASE("matmul: identity and zero cases") {
    Rng rng(1);
    VecX<double> eye = VecX<double>::Zero(9);
    eye[0] = eye[4] = eye[8] = 1.0;
    T I = T::from({3, 3}, eye);
    T b = random_tensor({3, 3}, rng);
    T c = matmul(I, b);
    CHECK(max_abs_diff(c.vals(), b.vals()) == 0.0);

    T z = T::zeros({2, 4});
    T any = random_tensor({4, 5}, rng);
    T zc = matmul(z, any);
    CHECK(zc.vals().abs().maxCoeff() == 0.0);
    CHECK(zc.shape() == Shape{2, 5});
}

TEST_CASE("matmul: shape mismatch reports both shapes") {
    T a = T::zeros({2, 3});
    T b = T::zeros({4, 5});
    try {
        matmul(a, b);
        FAIL("expected exception");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("matmul: gradient vs central finite differences") {
    Rng rng(7);
    T a = random_tensor({5, 7}, rng);
    T b = random_tensor({7, 3}, rng);
    a.set_requires_grad();
    b.set_requires_grad();
    auto f = [&] { return sum(matmul(a, b)); };
    auto rep = gradcheck<double>(f, {{"a", a}, {"b", b}}, 1e-6);
    CHECK(rep.worst <= 1e-6);
}

TEST_CASE("matmul: broadcast batch dims against a plain matrix") {
    Rng rng(3);
    T a = random_tensor({2, 3, 4}, rng);
    T b = random_tensor({4, 5}, rng);
    T c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 5});
    for (int64_t bat = 0; bat < 2; ++bat)
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 5; ++j) {
                double acc = 0;
                for (int64_t k = 0; k < 4; ++k)
                    acc += a.vals()[bat * 12 + i * 4 + k] * b.vals()[k * 5 + j];
                CHECK(std::abs(c.vals()[bat * 15 + i * 5 + j] - acc) <= 1e-14);
            }
    a.set_requires_grad();
    b.set_requires_grad();
    Rng rw(11);
    T w = random_tensor({2, 3, 5}, rw);
    auto f = [&] { return sum(mul(matmul(a, b), w)); };
    auto rep = gradcheck<double>(f, {{"a", a}, {"b", b}}, 1e-6);
    CHECK(rep.worst <= 1e-6);
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

TEST_CASE("softmax: symmetry and overflow stability") {
    T x = T::from({3}, std::vector<double>{0, 0, 0});
    T y = softmax(x, 0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(y.vals()[i] - 1.0 / 3.0) <= 1e-15);

    T big = T::from({2}, std::vector<double>{1000, 0});
    T yb = softmax(big, 0);
    CHECK(std::abs(yb.vals()[0] - 1.0) <= 1e-12);
    CHECK(std::abs(yb.vals()[1]) <= 1e-12);
}

TEST_CASE("softmax: rows sum to one, strictly positive, FD gradient") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed + 100);
        T x = random_tensor({4, 6}, rng, -5, 5);
        T y = softmax(x, 1);
        for (int64_t r = 0; r < 4; ++r) {
            double s = 0;
            for (int64_t c = 0; c < 6; ++c) {
                double v = y.vals()[r * 6 + c];
                CHECK(v > 0.0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
        x.set_requires_grad();
        T w = random_tensor({4, 6}, rng);
        auto f = [&] { return sum(mul(softmax(x, 1), w)); };
        auto rep = gradcheck<double>(f, {{"x", x}}, 1e-6);
        CHECK(rep.worst <= 1e-6);
    }
}

TEST_CASE("softmax: non-last axis matches last-axis via transpose") {
    Rng rng(5);
    T x = random_tensor({3, 4}, rng, -2, 2);
    T a = softmax(x, 0);
    T b = transpose_last(softmax(transpose_last(x), 1));
    CHECK(max_abs_diff(a.vals(), b.vals()) <= 1e-15);
}

// ---------------------------------------------------------------------------
// bilinear sampling
// ---------------------------------------------------------------------------

namespace {

// Independent scalar reference: forward value plus hand-derived gradients for
// the four-corner interpolation, written directly from the formula.
void bilinear_reference(const VecX<double>& feat, int64_t d, int64_t H, int64_t W, double u,
                        double v, const VecX<double>& gout, int64_t gout_off, VecX<double>& out,
                        VecX<double>& gfeat, double& du, double& dv) {
    out = VecX<double>::Zero(d);
    du = dv = 0;
    if (!(u >= 0 && u <= double(W - 1) && v >= 0 && v <= double(H - 1))) return;
    int64_t x0 = std::min<int64_t>(int64_t(std::floor(u)), W - 1);
    int64_t y0 = std::min<int64_t>(int64_t(std::floor(v)), H - 1);
    int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    double fx = u - double(x0), fy = v - double(y0);
    for (int64_t c = 0; c < d; ++c) {
        auto F = [&](int64_t y, int64_t x) { return feat[c * H * W + y * W + x]; };
        out[c] = (1 - fx) * (1 - fy) * F(y0, x0) + fx * (1 - fy) * F(y0, x1) +
                 (1 - fx) * fy * F(y1, x0) + fx * fy * F(y1, x1);
        double g = gout[gout_off + c];
        gfeat[c * H * W + y0 * W + x0] += g * (1 - fx) * (1 - fy);
        gfeat[c * H * W + y0 * W + x1] += g * fx * (1 - fy);
        gfeat[c * H * W + y1 * W + x0] += g * (1 - fx) * fy;
        gfeat[c * H * W + y1 * W + x1] += g * fx * fy;
        du += g * ((F(y0, x1) - F(y0, x0)) * (1 - fy) + (F(y1, x1) - F(y1, x0)) * fy);
        dv += g * ((F(y1, x0) - F(y0, x0)) * (1 - fx) + (F(y1, x1) - F(y0, x1)) * fx);
    }
}

}  // namespace

TEST_CASE("bilinear_sample: grid node identity and constant map") {
    Rng rng(2);
    T feat = random_tensor({3, 4, 5}, rng);
    T pts = T::from({1, 2}, std::vector<double>{2, 1});  // (u=2, v=1) -> node (y=1, x=2)
    T out = bilinear_sample(feat, pts);
    for (int64_t c = 0; c < 3; ++c)
        CHECK(out.vals()[c] == feat.vals()[c * 20 + 1 * 5 + 2]);

    T cmap = T::full({2, 3, 3}, 0.7);
    T center = T::from({1, 2}, std::vector<double>{0.5, 0.5});
    T oc = bilinear_sample(cmap, center);
    CHECK(std::abs(oc.vals()[0] - 0.7) <= 1e-15);
    CHECK(std::abs(oc.vals()[1] - 0.7) <= 1e-15);
}

TEST_CASE("bilinear_sample: out-of-range points give zeros and zero gradient") {
    Rng rng(4);
    T feat = random_tensor({2, 3, 3}, rng);
    feat.set_requires_grad();
    T pts = T::from({2, 2}, std::vector<double>{-0.5, 1.0, 2.5, 1.0});
    pts.set_requires_grad();
    T out = bilinear_sample(feat, pts);
    CHECK(out.vals()[0] == 0.0);
    CHECK(out.vals()[1] == 0.0);
    backward(sum(out));
    CHECK(feat.grad().abs().maxCoeff() == 0.0);  // nothing flowed from the OOB point
    CHECK(pts.grad()[0] == 0.0);
    CHECK(pts.grad()[1] == 0.0);
}

TEST_CASE("bilinear_sample: value and both gradients vs scalar loop reference") {
    Rng rng(9);
    int64_t d = 4, H = 6, W = 7, n = 24;
    T feat = random_tensor({d, H, W}, rng);
    // mixture of interior, boundary-near and out-of-range points
    VecX<double> p(n * 2);
    for (int64_t i = 0; i < n; ++i) {
        p[2 * i] = rng.uniform(-1.5, double(W));
        p[2 * i + 1] = rng.uniform(-1.5, double(H));
    }
    T pts = T::from({n, 2}, p);
    feat.set_requires_grad();
    pts.set_requires_grad();
    T out = bilinear_sample(feat, pts);

    Rng rw(13);
    T w = random_tensor({n, d}, rw);
    backward(sum(mul(out, w)));

    VecX<double> gfeat_ref = VecX<double>::Zero(d * H * W);
    for (int64_t i = 0; i < n; ++i) {
        VecX<double> oref;
        double du, dv;
        bilinear_reference(feat.vals(), d, H, W, p[2 * i], p[2 * i + 1], w.vals(), i * d, oref,
                           gfeat_ref, du, dv);
        for (int64_t c = 0; c < d; ++c)
            CHECK(std::abs(out.vals()[i * d + c] - oref[c]) <= 1e-10);
        CHECK(std::abs(pts.grad()[2 * i] - du) <= 1e-10);
        CHECK(std::abs(pts.grad()[2 * i + 1] - dv) <= 1e-10);
    }
    CHECK(max_abs_diff(feat.grad(), gfeat_ref) <= 1e-10);
}

TEST_CASE("bilinear_sample: FD gradients at interior points") {
    Rng rng(21);
    T feat = random_tensor({2, 5, 5}, rng);
    VecX<double> p(6);
    for (int i = 0; i < 3; ++i) {
        p[2 * i] = rng.uniform(0.3, 3.4);
        p[2 * i + 1] = rng.uniform(0.3, 3.4);
    }
    T pts = T::from({3, 2}, p);
    feat.set_requires_grad();
    pts.set_requires_grad();
    Rng rw(5);
    T w = random_tensor({3, 2}, rw);
    auto f = [&] { return sum(mul(bilinear_sample(feat, pts), w)); };
    auto rep = gradcheck<double>(f, {{"feat", feat}, {"pts", pts}}, 1e-6);
    CHECK(rep.worst <= 1e-6);
}

// ---------------------------------------------------------------------------
// linear / mlp / layer_norm / conv2d
// ---------------------------------------------------------------------------

TEST_CASE("mlp: zero final layer gives zero output, identity layer passes x") {
    Rng rng(6);
    T x = random_tensor({3, 4}, rng);
    std::vector<MlpLayer<double>> layers;
    layers.push_back({random_tensor({4, 5}, rng), random_tensor({5}, rng), Activation::Relu});
    layers.push_back({T::zeros({5, 2}), T::zeros({2}), Activation::Identity});
    T y = mlp_forward(x, layers);
    CHECK(y.vals().abs().maxCoeff() == 0.0);

    VecX<double> eye = VecX<double>::Zero(16);
    for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1;
    std::vector<MlpLayer<double>> id_layer{{T::from({4, 4}, eye), T::zeros({4}), Activation::Identity}};
    T yi = mlp_forward(x, id_layer);
    CHECK(max_abs_diff(yi.vals(), x.vals()) == 0.0);
}

TEST_CASE("mlp: 2-layer ReLU gradient check") {
    Rng rng(8);
    T x = random_tensor({4, 3}, rng);
    T w1 = random_tensor({3, 6}, rng);
    T b1 = random_tensor({6}, rng);
    T w2 = random_tensor({6, 2}, rng);
    T b2 = random_tensor({2}, rng);
    for (auto* t : {&x, &w1, &b1, &w2, &b2}) t->set_requires_grad();
    auto f = [&] {
        std::vector<MlpLayer<double>> ls{{w1, b1, Activation::Relu}, {w2, b2, Activation::Identity}};
        return sum(square(mlp_forward(x, ls)));
    };
    auto rep = gradcheck<double>(
        f, {{"x", x}, {"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}}, 1e-6);
    CHECK(rep.worst <= 1e-6);
}

TEST_CASE("layer_norm: normalizes rows and passes FD") {
    Rng rng(10);
    T x = random_tensor({5, 8}, rng, -3, 3);
    T gamma = T::full({8}, 1.0);
    T beta = T::zeros({8});
    T y = layer_norm(x, gamma, beta);
    for (int64_t r = 0; r < 5; ++r) {
        double m = 0, v = 0;
        for (int64_t c = 0; c < 8; ++c) m += y.vals()[r * 8 + c];
        m /= 8;
        for (int64_t c = 0; c < 8; ++c) v += std::pow(y.vals()[r * 8 + c] - m, 2);
        CHECK(std::abs(m) <= 1e-12);
        CHECK(std::abs(v / 8 - 1.0) <= 1e-4);  // eps-shifted variance
    }
    T g2 = random_tensor({8}, rng);
    T b2 = random_tensor({8}, rng);
    x.set_requires_grad();
    g2.set_requires_grad();
    b2.set_requires_grad();
    Rng rw(3);
    T w = random_tensor({5, 8}, rw);
    auto f = [&] { return sum(mul(layer_norm(x, g2, b2), w)); };
    auto rep = gradcheck<double>(f, {{"x", x}, {"gamma", g2}, {"beta", b2}}, 1e-6);
    CHECK(rep.worst <= 1e-5);
}

TEST_CASE("conv2d: matches direct loop and passes FD") {
    Rng rng(12);
    int64_t Cin = 3, H = 7, W = 6, Cout = 4, kh = 3, kw = 3;
    int stride = 2, pad = 1;
    T x = random_tensor({Cin, H, W}, rng);
    T w = random_tensor({Cout, Cin, kh, kw}, rng);
    T b = random_tensor({Cout}, rng);
    T y = conv2d(x, w, b, stride, pad);
    int64_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
    CHECK(y.shape() == Shape{Cout, Ho, Wo});
    for (int64_t co = 0; co < Cout; ++co)
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
                double acc = b.vals()[co];
                for (int64_t ci = 0; ci < Cin; ++ci)
                    for (int64_t i = 0; i < kh; ++i)
                        for (int64_t j = 0; j < kw; ++j) {
                            int64_t yy = oy * stride - pad + i, xx = ox * stride - pad + j;
                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                            acc += x.vals()[(ci * H + yy) * W + xx] *
                                   w.vals()[((co * Cin + ci) * kh + i) * kw + j];
                        }
                CHECK(std::abs(y.vals()[(co * Ho + oy) * Wo + ox] - acc) <= 1e-12);
            }
    x.set_requires_grad();
    w.set_requires_grad();
    b.set_requires_grad();
    Rng rw(17);
    T wt = random_tensor({Cout, Ho, Wo}, rw);
    auto f = [&] { return sum(mul(conv2d(x, w, b, stride, pad), wt)); };
    auto rep = gradcheck<double>(f, {{"x", x}, {"w", w}, {"b", b}}, 1e-6);
    CHECK(rep.worst <= 1e-6);
}

// ---------------------------------------------------------------------------
// broadcasting, shape surgery, misc ops
// ---------------------------------------------------------------------------

TEST_CASE("broadcasting: row, column and interior patterns with FD") {
    Rng rng(14);
    T a = random_tensor({2, 3}, rng);
    T col = random_tensor({3}, rng);
    T row = random_tensor({2, 1}, rng);
    T s1 = add(a, col);
    T s2 = mul(a, row);
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j) {
            CHECK(s1.vals()[i * 3 + j] == a.vals()[i * 3 + j] + col.vals()[j]);
            CHECK(s2.vals()[i * 3 + j] == a.vals()[i * 3 + j] * row.vals()[i]);
        }
    T p = random_tensor({2, 1, 3}, rng);
    T q = random_tensor({1, 4, 1}, rng);
    T pq = mul(p, q);
    CHECK(pq.shape() == Shape{2, 4, 3});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 4; ++j)
            for (int64_t k = 0; k < 3; ++k)
                CHECK(pq.vals()[(i * 4 + j) * 3 + k] == p.vals()[i * 3 + k] * q.vals()[j]);
    for (auto* t : {&a, &col, &row, &p, &q}) t->set_requires_grad();
    auto f = [&] { return sum(mul(add(a, col), row)) + sum(square(mul(p, q))); };
    auto rep = gradcheck<double>(
        f, {{"a", a}, {"col", col}, {"row", row}, {"p", p}, {"q", q}}, 1e-6);
    CHECK(rep.worst <= 1e-6);
}

TEST_CASE("shape surgery: reshape, slice, concat, gather, transpose FD") {
    Rng rng(15);
    T x = random_tensor({4, 6}, rng);
    x.set_requires_grad();
    auto f = [&] {
        T a = slice_last(x, 1, 3);                                     // [4,3]
        T b = reshape(slice(x, 0, 0, 2), Shape{2, 6});                 // [2,6]
        T c = concat<double>({a, transpose_last(reshape(b, Shape{3, 4}))}, 1);  // [4,3]+[4,3]
        T g = gather_rows(c, {3, 0, 0, 2});
        return sum(square(g));
    };
    auto rep = gradcheck<double>(f, {{"x", x}}, 1e-6);
    CHECK(rep.worst <= 1e-6);
}

TEST_CASE("normalize_last: unit norms and FD") {
    Rng rng(16);
    T x = random_tensor({5, 2}, rng, -2, 2);
    T y = normalize_last(x);
    for (int64_t r = 0; r < 5; ++r) {
        double n = std::hypot(y.vals()[2 * r], y.vals()[2 * r + 1]);
        CHECK(std::abs(n - 1.0) <= 1e-9);
    }
    x.set_requires_grad();
    Rng rw(2);
    T w = random_tensor({5, 2}, rw);
    auto f = [&] { return sum(mul(normalize_last(x), w)); };
    auto rep = gradcheck<double>(f, {{"x", x}}, 1e-6);
    CHECK(rep.worst <= 1e-6);
}

TEST_CASE("unary ops: FD sweep") {
    Rng rng(18);
    T x = random_tensor({3, 5}, rng, 0.2, 2.0);  // positive for log/sqrt
    x.set_requires_grad();
    auto f = [&] {
        T t = add(sin(x), cos(x));
        t = add(t, mul(log(x), sqrt(x)));
        t = add(t, sigmoid(x));
        t = add(t, tanh(x));
        t = add(t, softplus(x));
        t = add(t, square(x));
        return sum(t);
    };
    auto rep = gradcheck<double>(f, {{"x", x}}, 1e-6);
    CHECK(rep.worst <= 1e-6);
}

TEST_CASE("finite check: overflow is an error state") {
    T x = T::full({2}, 1000.0);
    CHECK_THROWS_AS((void)bevsplat::exp(x), std::runtime_error);
}

TEST_CASE("gradcheck harness flags a subgradient mismatch at a kink") {
    T x = T::zeros({1});
    x.set_requires_grad();
    auto f = [&] { return sum(relu(x)); };
    auto rep = gradcheck<double>(f, {{"x", x}}, 1e-6);
    CHECK(rep.worst > 1e-5);  // analytic 0 vs FD 0.5 at the ReLU kink
}

// ---------------------------------------------------------------------------
// AdamW + cosine schedule
// ---------------------------------------------------------------------------

TEST_CASE("adamw: zero grads and zero weight decay leave parameters unchanged") {
    ParameterStore<double> store(1);
    T w = store.param("w", {4}, Init<double>::uniform(-1, 1));
    VecX<double> before = w.vals();
    std::map<std::string, VecX<double>> grads{{"w", VecX<double>::Zero(4)}};
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step(store, grads, cfg);
    CHECK(max_abs_diff(w.vals(), before) == 0.0);
}

TEST_CASE("adamw: one step on f(w)=w^2 from w=1 moves toward 0") {
    ParameterStore<double> store(1);
    T w = store.param("w", {1}, Init<double>::constant(1.0));
    w.zero_grad();
    backward(sum(square(w)));
    adamw_step(store, collect_grads(store), AdamWConfig{});
    CHECK(w.vals()[0] < 1.0);
    CHECK(w.vals()[0] > 0.0);
}

TEST_CASE("adamw: 200 steps reach the closed-form minimum of a 10-d quadratic") {
    Rng rng(23);
    ParameterStore<double> store(5);
    T w = store.param("w", {10}, Init<double>::zeros());
    VecX<double> target = rng.uniform_vec<double>(10, -1, 1);
    VecX<double> curv = rng.uniform_vec<double>(10, 0.5, 2.0);
    T tgt = T::from({10}, target);
    T c = T::from({10}, curv);
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    for (int step = 0; step < 200; ++step) {
        store.zero_grad();
        backward(sum(mul(c, square(sub(w, tgt)))));
        cfg.lr = cosine_lr(step, 200, 0.1);
        adamw_step(store, collect_grads(store), cfg);
    }
    double dist = std::sqrt((w.vals() - target).square().sum());
    CHECK(dist <= 1e-3);
}

TEST_CASE("adamw: missing and extra grads are contract errors") {
    ParameterStore<double> store(1);
    store.param("a", {2}, Init<double>::zeros());
    std::map<std::string, VecX<double>> none;
    CHECK_THROWS_AS(adamw_step(store, none, AdamWConfig{}), std::runtime_error);
    std::map<std::string, VecX<double>> extra{{"a", VecX<double>::Zero(2)},
                                              {"ghost", VecX<double>::Zero(2)}};
    CHECK_THROWS_AS(adamw_step(store, extra, AdamWConfig{}), std::runtime_error);
}

TEST_CASE("cosine_lr: endpoints, midpoint and monotonicity") {
    CHECK(cosine_lr(0, 100, 6e-4) == doctest::Approx(6e-4).epsilon(1e-12));
    CHECK(cosine_lr(100, 100, 6e-4) == 0.0);
    CHECK(cosine_lr(50, 100, 6e-4) == doctest::Approx(3e-4).epsilon(1e-12));
    double prev = 1e9;
    for (int s = 0; s <= 100; ++s) {
        double lr = cosine_lr(s, 100, 6e-4);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
    CHECK(cosine_lr(0, 100, 6e-4, 1e-5) == doctest::Approx(6e-4));
    CHECK(cosine_lr(100, 100, 6e-4, 1e-5) == doctest::Approx(1e-5));
}

// ---------------------------------------------------------------------------
// ParameterStore + checkpoint
// ---------------------------------------------------------------------------

TEST_CASE("store: duplicate paths rejected, deterministic init") {
    ParameterStore<double> s1(99), s2(99);
    T a1 = s1.param("m.w", {3, 3}, Init<double>::fan_in_uniform(3));
    T a2 = s2.param("m.w", {3, 3}, Init<double>::fan_in_uniform(3));
    CHECK(max_abs_diff(a1.vals(), a2.vals()) == 0.0);
    CHECK_THROWS_AS(s1.param("m.w", {1}, Init<double>::zeros()), std::runtime_error);
}

TEST_CASE("checkpoint: bit-exact round trip including moments and step") {
    ParameterStore<double> store(7);
    T w = store.param("enc.w", {4, 2}, Init<double>::normal(0, 1));
    T b = store.param("enc.b", {2}, Init<double>::uniform(-1, 1));
    store.buffer("init.means", {3}, Init<double>::uniform(0, 1));
    store.zero_grad();
    backward(sum(square(w)) + sum(square(b)));
    adamw_step(store, collect_grads(store), AdamWConfig{});

    std::string path = "checkpoint_roundtrip_test.bsc";
    save_checkpoint(store, path);

    ParameterStore<double> loaded(7);
    loaded.param("enc.w", {4, 2}, Init<double>::zeros());
    loaded.param("enc.b", {2}, Init<double>::zeros());
    loaded.buffer("init.means", {3}, Init<double>::zeros());
    load_checkpoint(loaded, path);
    CHECK(loaded.step() == 1);
    CHECK(max_abs_diff(loaded.get("enc.w").vals(), w.vals()) == 0.0);
    CHECK(max_abs_diff(loaded.get("enc.b").vals(), b.vals()) == 0.0);
    CHECK(max_abs_diff(loaded.get("init.means").vals(), store.get("init.means").vals()) == 0.0);
    auto [m, v] = loaded.moments("enc.w", 8);
    auto [m0, v0] = store.moments("enc.w", 8);
    CHECK(max_abs_diff(m, m0) == 0.0);
    CHECK(max_abs_diff(v, v0) == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("forward passes are bit-reproducible for a fixed seed") {
    auto run = [] {
        Rng rng(31);
        T x = random_tensor({6, 6}, rng);
        T w = random_tensor({6, 6}, rng);
        return matmul(softmax(x, 1), tanh(w));
    };
    T a = run(), b = run();
    CHECK(max_abs_diff(a.vals(), b.vals()) == 0.0);
}

TEST_CASE("float32 instantiation smoke test") {
    using Tf = Tensor<float>;
    Rng rng(3);
    Tf x = Tf::from({3, 3}, rng.uniform_vec<float>(9, -1, 1));
    Tf y = softmax(matmul(x, x), 1);
    CHECK(y.vals().isFinite().all());
}
