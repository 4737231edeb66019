#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "invjoint/encoders.hpp"
#include "invjoint/errors.hpp"

using namespace invjoint;
using doctest::Approx;

namespace {

Tensor rand_t(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

ModalityEncoder identity_encoder(std::size_t d) {
    ModalityEncoder e;
    e.layers.push_back({Linear::identity(d), Activation::Identity});
    return e;
}

void check_close(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
    REQUIRE(t.numel() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(t.data()[i] == Approx(want[i]).epsilon(tol).scale(1.0));
}

}  // namespace

TEST_CASE("identity affine encoder passes its input through") {
    const auto enc = identity_encoder(3);
    check_close(encode_3d(enc, Tensor::vector({0.5, -1, 2})), {0.5, -1, 2});
}

TEST_CASE("zero input through zero-bias layers gives zero") {
    Rng rng(1);
    EncoderConfig cfg{5, 8, 4, 2, false, 0.1};
    const auto enc = make_encoder(Modality::ThreeD, cfg, rng);
    check_close(encode_3d(enc, Tensor::zeros({2, 5})), std::vector<double>(8, 0.0));
}

TEST_CASE("encoder matches a hand-rolled matrix product") {
    Rng rng(2);
    EncoderConfig cfg{4, 6, 3, 1, false, 0.1};
    const auto enc = make_encoder(Modality::ThreeD, cfg, rng);
    for (auto& layer : enc.layers) {
        auto b = layer.affine.bias;
        for (auto& v : b.mutable_data()) v = rng.uniform(-1, 1);
    }
    const auto x = rand_t({2, 4}, rng);
    std::vector<double> h(x.data().begin(), x.data().end());
    std::size_t in = 4;
    for (const auto& layer : enc.layers) {
        const std::size_t out = layer.affine.out_dim();
        std::vector<double> next(2 * out);
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t j = 0; j < out; ++j) {
                double s = layer.affine.bias.at(j);
                for (std::size_t k = 0; k < in; ++k) s += h[r * in + k] * layer.affine.weight.at(k, j);
                if (layer.activation == Activation::Relu) s = std::max(0.0, s);
                next[r * out + j] = s;
            }
        h = next;
        in = out;
    }
    check_close(encode_3d(enc, x), h, 1e-13);
}

TEST_CASE("encoder rejects the wrong input dimension") {
    Rng rng(3);
    const auto enc = make_encoder(Modality::ThreeD, {}, rng);
    CHECK_THROWS_AS(encode_3d(enc, Tensor::zeros({2, 7})), ContractError);
}

TEST_CASE("residual encoders start aligned with their input") {
    Rng rng(4);
    EncoderConfig cfg;
    cfg.input_dim = cfg.output_dim = 16;
    const auto enc = make_encoder(Modality::TwoD, cfg, rng);
    REQUIRE(enc.skip.has_value());
    const auto x = rand_t({3, 16}, rng);
    const auto y = encode_3d(enc, x);
    double dot = 0, nx = 0, ny = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        dot += x.data()[i] * y.data()[i];
        nx += x.data()[i] * x.data()[i];
        ny += y.data()[i] * y.data()[i];
    }
    CHECK(dot / std::sqrt(nx * ny) > 0.9);
}

TEST_CASE("2D encoder averages views") {
    const auto enc = identity_encoder(2);
    {
        const std::vector<Tensor> views{Tensor::vector({1, 0}), Tensor::vector({0, 1})};
        check_close(encode_2d(enc, views).x2, {0.5, 0.5});
    }
    {
        const std::vector<Tensor> views{Tensor::vector({3, -1})};
        const auto r = encode_2d(enc, views);
        check_close(r.x2, {3, -1});
        check_close(r.per_view[0], {3, -1});
    }
    Rng rng(5);
    const auto rnd = make_encoder(Modality::TwoD, {2, 4, 2, 1, true, 0.1}, rng);
    const auto v = rand_t({2}, rng);
    const std::vector<Tensor> same{v, v, v, v};
    const auto single = encode_3d(rnd, v);
    check_close(encode_2d(rnd, same).x2, std::vector<double>(single.data().begin(), single.data().end()), 1e-14);
    CHECK_THROWS_AS(encode_2d(enc, std::vector<Tensor>{}), ContractError);
    CHECK(encode_2d(rnd, same).x2.dim(encode_2d(rnd, same).x2.rank() - 1) == rnd.output_dim());
}

TEST_CASE("multi-view aggregation examples") {
    Rng rng(6);
    auto adapter = MultiViewAdapter::make(2, 2, 4, 1.0, rng);
    const auto v = Tensor::vector({0.7, -0.3});
    const std::vector<Tensor> same{v, v};
    check_close(multi_view_aggregate(same, adapter, 1.0), {0.7, 0.0});

    const std::vector<Tensor> ortho{Tensor::vector({1, 0}), Tensor::vector({0, 1})};
    check_close(view_weights(ortho), {0.5, 0.5});
    check_close(multi_view_aggregate(ortho, adapter, 1.0), {0.5, 0.5});

    const auto global = adapter.f2.forward(relu(adapter.f1.forward(Tensor::matrix(1, 4, {1, 0, 0, 1}))));
    const auto at0 = multi_view_aggregate(ortho, adapter, 0.0);
    for (std::size_t i = 0; i < 2; ++i) CHECK(at0.data()[i] == global.data()[i]);

    CHECK_THROWS_AS(multi_view_aggregate(ortho, adapter, 1.5), ContractError);
    CHECK_THROWS_AS(multi_view_aggregate(ortho, adapter, -0.1), ContractError);
}

TEST_CASE("view weights are permutation invariant") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Tensor> views;
        for (int i = 0; i < 4; ++i) views.push_back(rand_t({3, 5}, rng));
        auto adapter = MultiViewAdapter::make(4, 5, 6, 1.0, rng);
        adapter.proj = Linear::xavier(5, 5, rng);
        const auto a = multi_view_aggregate(views, adapter, 1.0);
        std::vector<Tensor> perm{views[2], views[0], views[3], views[1]};
        const auto b = multi_view_aggregate(perm, adapter, 1.0);
        for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == Approx(b.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("gate examples") {
    auto x = Tensor::vector({4, 4});
    check_close(gate_apply(GateMask::constant(2, 0.0), x), {2, 2});
    const auto sat = gate_apply(GateMask::constant(2, 40.0), x);
    for (double z : sat.data()) CHECK(std::abs(z - 4.0) < 1e-6);
    GateMask g{Tensor::vector({std::log(3.0), 0.0}, true)};
    check_close(gate_apply(g, x), {3, 2});
    CHECK_THROWS_AS(gate_apply(g, Tensor::vector({1, 2, 3})), ContractError);
}

TEST_CASE("gate weights lie in the open unit interval and are monotone") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        GateMask g{rand_t({6}, rng, -10, 10)};
        for (double w : g.weights()) CHECK((w > 0 && w < 1));
        const auto x = rand_t({6}, rng);
        const auto z0 = gate_apply(g, x);
        auto logits = g.mask_logits.clone();
        const std::size_t i = rng.below(6);
        logits.mutable_data()[i] += rng.uniform(0, 3);
        const auto z1 = gate_apply(GateMask{logits}, x);
        CHECK(std::abs(z1.data()[i]) >= std::abs(z0.data()[i]));
    }
}

TEST_CASE("gate without update leaves mask logits without gradient") {
    GateMask g = GateMask::constant(3, 0.2);
    auto x = Tensor::vector({1, -2, 3}, true);
    backward(sum(gate_apply(g, x, false)));
    CHECK_FALSE(g.mask_logits.has_grad());
    CHECK(x.has_grad());
    backward(sum(gate_apply(g, x, true)));
    CHECK(g.mask_logits.has_grad());
}

TEST_CASE("cosine head examples") {
    ClassHead head{Tensor::matrix(3, 2, {1, 0, 0, 2, -1, 1}), Tensor(), HeadMode::Cosine};
    const auto l = classify(Tensor::matrix(1, 2, {0, 5}), head);
    CHECK(l.at(0, 1) == Approx(1.0));
    CHECK(l.at(0, 1) >= l.at(0, 0));
    CHECK(l.at(0, 1) >= l.at(0, 2));

    ClassHead flat{Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0}), Tensor(), HeadMode::Cosine};
    check_close(classify(Tensor::matrix(1, 3, {0, 0, 2}), flat), {0, 0});

    StrictNumericsGuard strict(true);
    CHECK_THROWS_AS(classify(Tensor::matrix(1, 2, {0, 0}), head), NumericError);

    ClassHead id{Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor(), HeadMode::Cosine};
    const std::vector<Tensor> views{Tensor::matrix(1, 2, {1, 0}), Tensor::matrix(1, 2, {0, 1})};
    check_close(classify_views(views, id), {0.5, 0.5});
}

TEST_CASE("cosine head is scale invariant and shaped batch by classes") {
    Rng rng(9);
    const auto head = ClassHead::make(HeadMode::Cosine, 5, 4, rng);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = rand_t({3, 4}, rng);
        const auto a = classify(x, head);
        const auto b = classify(scale(x, rng.uniform(0.01, 100)), head);
        CHECK(a.shape() == Shape{3, 5});
        for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == Approx(b.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("cross-attention examples") {
    const auto v = Tensor::matrix(1, 3, {0.2, -1, 0.5});
    check_close(cross_attention_fuse(v, v, CrossAttention::identity(3)), {0.2, -1, 0.5});

    Rng rng(10);
    auto zero_v = CrossAttention::xavier(3, rng);
    zero_v.wv = Tensor::zeros({3, 3});
    zero_v.wv_r = Tensor::zeros({3, 3});
    check_close(cross_attention_fuse(rand_t({2, 3}, rng), rand_t({2, 3}, rng), zero_v), std::vector<double>(6, 0));

    // two tokens per modality in two dims, hand-set projections
    CrossAttention a = CrossAttention::identity(2);
    a.wq = Tensor::matrix(2, 2, {2, 0, 0, 1});
    a.wv_r = Tensor::matrix(2, 2, {0, 1, 1, 0});
    const double t2[2][2] = {{1, 0}, {0, 1}};
    const double t3[2][2] = {{1, 1}, {0.5, -1}};
    auto attend = [](const double q[2][2], const double kv[2][2], const double wq[2][2], const double wv[2][2],
                     double out[2]) {
        out[0] = out[1] = 0;
        for (int i = 0; i < 2; ++i) {
            double qi[2] = {q[i][0] * wq[0][0] + q[i][1] * wq[1][0], q[i][0] * wq[0][1] + q[i][1] * wq[1][1]};
            double s[2], z = 0;
            for (int j = 0; j < 2; ++j) z += s[j] = std::exp(qi[0] * kv[j][0] + qi[1] * kv[j][1]);
            for (int j = 0; j < 2; ++j)
                for (int c = 0; c < 2; ++c)
                    out[c] += 0.5 * s[j] / z * (kv[j][0] * wv[0][c] + kv[j][1] * wv[1][c]);
        }
    };
    const double I[2][2] = {{1, 0}, {0, 1}}, Q[2][2] = {{2, 0}, {0, 1}}, P[2][2] = {{0, 1}, {1, 0}};
    double fwd[2], rev[2];
    attend(t3, t2, Q, I, fwd);
    attend(t2, t3, I, P, rev);
    const auto got = cross_attention_tokens(Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::matrix(2, 2, {1, 1, 0.5, -1}), a);
    check_close(got, {(fwd[0] + rev[0]) / 2, (fwd[1] + rev[1]) / 2});

    CHECK_THROWS_AS(cross_attention_fuse(Tensor::zeros({1, 3}), Tensor::zeros({1, 2}), a), ContractError);
}

TEST_CASE("cross-attention with identity projections is idempotent on equal inputs") {
    Rng rng(11);
    const auto attn = CrossAttention::identity(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = rand_t({3, 4}, rng);
        const auto y = cross_attention_fuse(x, x, attn);
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == Approx(x.data()[i]).epsilon(1e-12));
    }
}
