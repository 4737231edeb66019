#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "invjoint/errors.hpp"
#include "invjoint/gradcheck.hpp"
#include "invjoint/optim.hpp"
#include "invjoint/rng.hpp"
#include "invjoint/tensor.hpp"

using namespace invjoint;
using doctest::Approx;

namespace {

Tensor rand_leaf(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), true);
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("softmax examples") {
    auto s = softmax(Tensor::vector({0, 0}));
    CHECK(s.at(0) == Approx(0.5));
    CHECK(s.at(1) == Approx(0.5));
    s = softmax(Tensor::vector({std::log(2.0), 0}));
    CHECK(s.at(0) == Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s.at(1) == Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax sums to one and is permutation equivariant") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 2 + rng.below(9);
        std::vector<double> x(d);
        for (auto& v : x) v = rng.uniform(-20, 20);
        const auto s = vec(softmax(Tensor::vector(x)));
        double total = 0;
        for (double v : s) total += v;
        CHECK(std::abs(total - 1.0) < 1e-9);

        std::vector<std::size_t> perm(d);
        for (std::size_t i = 0; i < d; ++i) perm[i] = i;
        for (std::size_t i = d; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        std::vector<double> xp(d);
        for (std::size_t i = 0; i < d; ++i) xp[i] = x[perm[i]];
        const auto sp = vec(softmax(Tensor::vector(xp)));
        for (std::size_t i = 0; i < d; ++i) CHECK(sp[i] == Approx(s[perm[i]]).epsilon(1e-14));
    }
}

TEST_CASE("cosine similarity of a vector with itself") {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        auto v = rand_leaf({7}, rng);
        CHECK(cosine_similarity(v, v).item() == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("backward examples") {
    auto x = Tensor::vector({0.3, -1.0, 2.0}, true);
    backward(sum(x));
    CHECK(vec(Tensor::vector({x.grad()[0], x.grad()[1], x.grad()[2]})) == std::vector<double>{1, 1, 1});

    auto y = Tensor::vector({1, 2}, true);
    backward(sum(mul(y, y)));
    CHECK(y.grad()[0] == Approx(2.0));
    CHECK(y.grad()[1] == Approx(4.0));
}

TEST_CASE("backward accumulates until grads are zeroed and is deterministic") {
    Rng rng(9);
    auto a = rand_leaf({3, 4}, rng);
    auto b = rand_leaf({4, 2}, rng);
    const auto loss = sum(softplus(matmul(a, b)));
    backward(loss);
    const auto first = std::vector<double>(a.grad().begin(), a.grad().end());
    backward(loss);
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == Approx(2 * first[i]).epsilon(1e-14));
    a.zero_grad();
    b.zero_grad();
    backward(loss);
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == first[i]);
}

TEST_CASE("backward rejects non-scalar losses") {
    auto x = Tensor::vector({1, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("shape mismatch is a dimension error") {
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), DimensionError);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("strict numerics signals domain violations") {
    StrictNumericsGuard strict(true);
    CHECK_THROWS_AS(log(Tensor::vector({0.0})), NumericError);
    CHECK_THROWS_AS(log(Tensor::vector({-1.0})), NumericError);
    CHECK_THROWS_AS(exp(Tensor::vector({1000.0})), NumericError);
    CHECK_THROWS_AS(normalize(Tensor::vector({0.0, 0.0})), NumericError);
    StrictNumericsGuard lax(false);
    CHECK(std::isinf(exp(Tensor::vector({1000.0})).item()));
}

TEST_CASE("batch broadcast over the leading axis") {
    auto x = Tensor::matrix(2, 2, {1, 2, 3, 4}, true);
    auto w = Tensor::vector({10, 100}, true);
    auto y = mul(x, w);
    CHECK(vec(y) == std::vector<double>{10, 200, 30, 400});
    backward(sum(y));
    CHECK(w.grad()[0] == Approx(4));
    CHECK(w.grad()[1] == Approx(6));
}

TEST_CASE("every differentiable op matches central finite differences") {
    Rng rng(17);
    struct Case {
        const char* name;
        std::function<Tensor(const std::vector<Tensor>&)> f;
        std::vector<Shape> shapes;
    };
    auto sq = [](const Tensor& t) { return sum(mul(t, t)); };
    const std::vector<Case> cases = {
        {"add", [&](auto& in) { return sq(add(in[0], in[1])); }, {{3, 4}, {3, 4}}},
        {"add_broadcast", [&](auto& in) { return sq(add(in[0], in[1])); }, {{3, 4}, {4}}},
        {"sub", [&](auto& in) { return sq(sub(in[0], in[1])); }, {{5}, {5}}},
        {"mul", [&](auto& in) { return sum(mul(in[0], in[1])); }, {{2, 3}, {2, 3}}},
        {"mul_scalar", [&](auto& in) { return sq(mul(in[0], in[1])); }, {{2, 3}, {1}}},
        {"scale", [&](auto& in) { return sq(scale(in[0], -1.7)); }, {{4}}},
        {"add_scalar", [&](auto& in) { return sq(add_scalar(in[0], 0.3)); }, {{4}}},
        {"neg", [&](auto& in) { return sq(neg(in[0])); }, {{4}}},
        {"exp", [&](auto& in) { return sum(exp(in[0])); }, {{2, 3}}},
        {"log", [&](auto& in) { return sum(log(add_scalar(square(in[0]), 0.5))); }, {{6}}},
        {"sigmoid", [&](auto& in) { return sq(sigmoid(in[0])); }, {{6}}},
        {"relu", [&](auto& in) { return sq(relu(in[0])); }, {{6}}},
        {"tanh", [&](auto& in) { return sq(tanh(in[0])); }, {{6}}},
        {"square", [&](auto& in) { return sum(square(in[0])); }, {{6}}},
        {"softplus", [&](auto& in) { return sum(softplus(in[0])); }, {{6}}},
        {"matmul", [&](auto& in) { return sq(matmul(in[0], in[1])); }, {{3, 4}, {4, 2}}},
        {"transpose", [&](auto& in) { return sum(mul(transpose(in[0]), in[1])); }, {{3, 2}, {2, 3}}},
        {"reshape", [&](auto& in) { return sum(mul(reshape(in[0], {3, 2}), in[1])); }, {{2, 3}, {3, 2}}},
        {"mean", [&](auto& in) { return square(mean(in[0])); }, {{2, 5}}},
        {"max", [&](auto& in) { return square(max(in[0])); }, {{7}}},
        {"sum_last", [&](auto& in) { return sq(sum_last(in[0])); }, {{3, 4}}},
        {"mean_last", [&](auto& in) { return sq(mean_last(in[0])); }, {{3, 4}}},
        {"logsumexp_last", [&](auto& in) { return sq(logsumexp_last(in[0])); }, {{3, 4}}},
        {"softmax", [&](auto& in) { return sum(mul(softmax(in[0]), in[1])); }, {{3, 4}, {3, 4}}},
        {"log_softmax", [&](auto& in) { return sum(mul(log_softmax(in[0]), in[1])); }, {{3, 4}, {3, 4}}},
        {"l2_norm", [&](auto& in) { return sum(l2_norm(in[0])); }, {{3, 4}}},
        {"normalize", [&](auto& in) { return sum(mul(normalize(in[0]), in[1])); }, {{3, 4}, {3, 4}}},
        {"cosine_similarity", [&](auto& in) { return sum(cosine_similarity(in[0], in[1])); }, {{3, 4}, {3, 4}}},
        {"cosine_matrix", [&](auto& in) { return sq(cosine_matrix(in[0], in[1])); }, {{3, 4}, {2, 4}}},
        {"concat0", [&](auto& in) { return sq(concat({in[0], in[1]}, 0)); }, {{2, 3}, {1, 3}}},
        {"concat_last", [&](auto& in) { return sq(sigmoid(concat({in[0], in[1]}, 1))); }, {{2, 3}, {2, 2}}},
        {"take", [&](auto& in) {
             const std::vector<std::size_t> idx{5, 0, 5, 2};
             return sq(take(in[0], idx));
         }, {{2, 3}}},
        {"rows", [&](auto& in) {
             const std::vector<std::size_t> idx{2, 0};
             return sq(exp(rows(in[0], idx)));
         }, {{3, 2}}},
        {"pick", [&](auto& in) {
             const std::vector<std::size_t> labels{1, 0, 2};
             return sq(pick(in[0], labels));
         }, {{3, 3}}},
        {"scale_rows", [&](auto& in) { return sq(scale_rows(in[0], in[1])); }, {{3, 2}, {3}}},
        {"column", [&](auto& in) { return sq(column(in[0], 1)); }, {{3, 2}}},
        {"mean_of", [&](auto& in) { return sq(mean_of({in[0], in[1]})); }, {{2, 2}, {2, 2}}},
    };
    for (const auto& c : cases) {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<Tensor> inputs;
            for (const auto& s : c.shapes) inputs.push_back(rand_leaf(s, rng));
            const double err = gradcheck(c.f, inputs);
            INFO(c.name);
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("cosine learning rate") {
    OptimizerState st;
    st.base_lr = 0.01;
    st.total_epochs = 50;
    st.epoch = 0;
    CHECK(st.learning_rate() == Approx(0.01).epsilon(1e-15));
    st.epoch = 50;
    CHECK(std::abs(st.learning_rate()) < 1e-18);
    st.epoch = 25;
    CHECK(st.learning_rate() == Approx(0.005).epsilon(1e-12));
    double prev = 1;
    for (int e = 0; e <= 50; ++e) {
        st.epoch = e;
        CHECK(st.learning_rate() <= prev);
        prev = st.learning_rate();
    }
}

TEST_CASE("optimizer state validation") {
    OptimizerState st;
    st.momentum = 1.0;
    CHECK_THROWS_AS(st.validate(), ContractError);
    st = {};
    st.base_lr = 0;
    CHECK_THROWS_AS(st.validate(), ContractError);
    st = {};
    st.weight_decay = -1;
    CHECK_THROWS_AS(st.validate(), ContractError);
}

TEST_CASE("sgd step matches the momentum and decoupled decay update") {
    auto p = Tensor::vector({1.0, -2.0}, true);
    Sgd opt({{"A", {p}, false}});
    OptimizerState st{0.1, 0.01, 0.9, 0, 10};
    backward(sum(mul(p, p)));  // grad = 2p
    opt.step(st);
    // v = g = [2, -4]; p = p - lr v - lr wd p
    CHECK(p.at(0) == Approx(1.0 - 0.1 * 2 - 0.1 * 0.01 * 1.0).epsilon(1e-15));
    CHECK(p.at(1) == Approx(-2.0 + 0.1 * 4 + 0.1 * 0.01 * 2.0).epsilon(1e-15));
    const double p0 = p.at(0);
    opt.zero_grad();
    backward(sum(mul(p, p)));
    opt.step(st);
    const double v0 = 0.9 * 2.0 + 2 * p0;
    CHECK(p.at(0) == Approx(p0 - 0.1 * v0 - 0.1 * 0.01 * p0).epsilon(1e-14));
}

TEST_CASE("frozen group bytes are bit-identical after a step") {
    Rng rng(23);
    auto a = rand_leaf({4, 3}, rng);
    auto b = rand_leaf({5}, rng);
    Sgd opt({{"A", {a}, false}, {"B", {b}, true}});
    const auto before = vec(b);
    const auto a_before = vec(a);
    backward(add(sum(square(a)), sum(square(b))));
    opt.step({0.1, 1e-4, 0.9, 0, 10});
    CHECK(std::memcmp(before.data(), b.data().data(), before.size() * sizeof(double)) == 0);
    CHECK(vec(a) != a_before);
}

TEST_CASE("missing gradient in an unfrozen group is a contract error") {
    auto a = Tensor::vector({1.0}, true);
    auto b = Tensor::vector({1.0}, true);
    Sgd opt({{"A", {a}, false}, {"B", {b}, false}});
    backward(sum(square(a)));
    CHECK_THROWS_AS(opt.step({}), ContractError);
    opt.group("B").frozen = true;
    CHECK_NOTHROW(opt.step({}));
}

TEST_CASE("a parameter belongs to exactly one group") {
    auto a = Tensor::vector({1.0}, true);
    CHECK_THROWS_AS(Sgd({{"A", {a}, false}, {"B", {a}, false}}), ContractError);
    CHECK_THROWS_AS(Sgd({{"A", {Tensor::vector({1.0})}, false}}), ContractError);
}
