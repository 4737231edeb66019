#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "invjoint/errors.hpp"
#include "invjoint/rng.hpp"
#include "invjoint/serial.hpp"
#include "invjoint/synthetic.hpp"

using namespace invjoint;
using doctest::Approx;

namespace {

GeneratorConfig small(std::uint64_t seed = 3) {
    GeneratorConfig g;
    g.classes = 5;
    g.shots = 40;
    g.p_conflict = 0.2;
    g.seed = seed;
    return g;
}

double sqdist(const double* a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < b.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
    const auto a = generate(small()), b = generate(small());
    CHECK(a == b);
    CHECK(serialize_dataset(a, DataFormat::Binary) == serialize_dataset(b, DataFormat::Binary));
    CHECK_FALSE(generate(small(4)) == a);
}

TEST_CASE("no conflicts planted at zero probability") {
    auto cfg = small();
    cfg.p_conflict = 0;
    const auto d = generate(cfg);
    for (const auto& s : d.train) CHECK_FALSE(s.planted_hard);
    for (const auto& s : d.test) CHECK_FALSE(s.planted_hard);
}

TEST_CASE("planted count follows the binomial") {
    const auto d = generate(small(11));
    std::size_t planted = 0;
    for (const auto& s : d.train) planted += s.planted_hard;
    CHECK(d.train.size() == 200);
    const double sd = std::sqrt(200 * 0.2 * 0.8);
    CHECK(std::abs(static_cast<double>(planted) - 40.0) <= 3 * sd);
}

TEST_CASE("planted samples carry two distinct wrong targets") {
    const auto d = generate(small(12));
    for (const auto& s : d.train) {
        CHECK(s.planted_hard == s.hard_targets.has_value());
        if (!s.hard_targets) continue;
        const auto [r2, r3] = *s.hard_targets;
        CHECK(r2 != r3);
        CHECK(r2 != s.label);
        CHECK(r3 != s.label);
    }
}

TEST_CASE("generator config validation") {
    auto cfg = small();
    cfg.classes = 2;
    CHECK_THROWS_AS(generate(cfg), ContractError);
    cfg.p_conflict = 0;
    CHECK_NOTHROW(generate(cfg));
    cfg = small();
    cfg.p_conflict = 1.5;
    CHECK_THROWS_AS(generate(cfg), ContractError);
}

TEST_CASE("invariant coordinates are shared noisy copies of the class mean") {
    auto cfg = small();
    cfg.sigma_c = 0;
    const auto d = generate(cfg);
    const std::size_t dc = cfg.invariant_dims;
    for (const auto& s : d.train) {
        for (std::size_t i = 0; i < dc; ++i) {
            CHECK(s.x3[i] == d.class_means[s.label][i]);
            for (const auto& v : s.views) CHECK(v[i] == d.class_means[s.label][i]);
        }
        CHECK(s.views.size() == cfg.views);
        CHECK(s.x3.size() == cfg.feature_dim());
    }
}

TEST_CASE("splits are disjoint") {
    const auto d = generate(small());
    std::set<std::vector<double>> train;
    for (const auto& s : d.train) train.insert(s.x3);
    for (const auto& s : d.test) CHECK(train.count(s.x3) == 0);
}

TEST_CASE("3D augmentation") {
    const std::vector<double> x{0.5, -1.0, 2.0, 0.0};
    const AugmentConfig none{1.0, 1.0, 0.0, 0.0};
    CHECK(augment_3d(x, none, 9) == x);
    const AugmentConfig def;
    CHECK(augment_3d(x, def, 9) == augment_3d(x, def, 9));
    CHECK(augment_3d(x, def, 9) != augment_3d(x, def, 10));
    for (int s = 0; s < 50; ++s) {
        const AugmentConfig signs{1.0, 1.0, 0.0, 0.5};
        const auto y = augment_3d(x, signs, s);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] * x[i] >= 0);
    }
}

TEST_CASE("augmentation preserves the class of the invariant part") {
    auto cfg = small(5);
    cfg.sigma_c = 0.05;
    const auto d = generate(cfg);
    const AugmentConfig aug{0.8, 1.25, cfg.sigma_c / 2, 0.1};
    std::size_t kept3 = 0, kept2 = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        const auto& s = d.train[i % d.train.size()];
        kept3 += nearest_mean(d.class_means, augment_3d(s.x3, aug, i).data()) == s.label;
        const auto views = augment_2d(s, 2, cfg.sigma_c / 2, i);
        kept2 += nearest_mean(d.class_means, views[i % 2].data()) == s.label;
    }
    CHECK(kept3 >= 990);
    CHECK(kept2 >= 990);
}

TEST_CASE("2D augmentation") {
    const auto d = generate(small());
    const auto& s = d.train[0];
    const auto same = augment_2d(s, 3, 0.0, 1);
    std::vector<double> mean(s.views[0].size(), 0.0);
    for (const auto& v : s.views)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i] / static_cast<double>(s.views.size());
    for (const auto& v : same)
        for (std::size_t i = 0; i < mean.size(); ++i) CHECK(v[i] == Approx(mean[i]).epsilon(1e-14));
    CHECK(augment_2d(s, 4, 0.1, 7) == augment_2d(s, 4, 0.1, 7));
    CHECK(augment_2d(s, 4, 0.1, 7).size() == 4);
    CHECK_THROWS_AS(augment_2d(s, 0, 0.1, 7), ContractError);
}

TEST_CASE("bayes oracle examples") {
    auto cfg = small();
    cfg.sigma_c = 0;
    CHECK(bayes_oracle(generate(cfg)) == 1.0);
    cfg.p_conflict = 1.0;
    CHECK(bayes_oracle(generate(cfg)) == 1.0);

    cfg = small();
    cfg.sigma_c = 100;
    cfg.shots = 200;
    const double acc = bayes_oracle(generate(cfg));
    CHECK(std::abs(acc - 0.2) < 4 * std::sqrt(0.2 * 0.8 / 1000));

    Dataset bare = generate(small());
    bare.class_means.clear();
    CHECK_THROWS_AS(bayes_oracle(bare), ContractError);
}

TEST_CASE("confounders point at the planted wrong class") {
    auto cfg = small(21);
    cfg.p_conflict = 0.5;
    const auto probe = generate(cfg);
    double sep = 1e9;
    for (std::size_t e = 0; e < 2; ++e)
        for (std::size_t a = 0; a < cfg.classes; ++a)
            for (std::size_t b = a + 1; b < cfg.classes; ++b)
                sep = std::min(sep, std::sqrt(sqdist(probe.confounder_means[e][a].data(), probe.confounder_means[e][b])));
    cfg.sigma_d = 0.01 * sep;
    const auto d = generate(cfg);
    const std::size_t dc = cfg.invariant_dims;
    std::size_t planted = 0, hit = 0;
    for (const auto& s : d.train) {
        if (!s.planted_hard) continue;
        ++planted;
        hit += nearest_mean(d.confounder_means[0], s.views[0].data() + dc) == s.hard_targets->first;
        hit += nearest_mean(d.confounder_means[1], s.x3.data() + dc) == s.hard_targets->second;
    }
    REQUIRE(planted > 0);
    CHECK(hit == 2 * planted);
}

TEST_CASE("the oracle beats a confounder-inclusive nearest mean classifier") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto cfg = small(seed);
        cfg.sigma_c = 0.05;
        cfg.p_conflict = 0.3;
        const auto d = generate(cfg);
        std::vector<std::vector<double>> joint(cfg.classes);
        for (std::size_t c = 0; c < cfg.classes; ++c) {
            joint[c] = d.class_means[c];
            joint[c].insert(joint[c].end(), d.confounder_means[1][c].begin(), d.confounder_means[1][c].end());
        }
        std::size_t correct = 0;
        for (const auto& s : d.test) correct += nearest_mean(joint, s.x3.data()) == s.label;
        CHECK(bayes_oracle(d) >= static_cast<double>(correct) / static_cast<double>(d.test.size()));
    }
}

TEST_CASE("dataset files round trip byte-stable") {
    const auto d = generate(small());
    for (auto fmt : {DataFormat::Binary, DataFormat::Text}) {
        const auto bytes = serialize_dataset(d, fmt);
        const auto back = deserialize_dataset(bytes);
        CHECK(back == d);
        CHECK(serialize_dataset(back, fmt) == bytes);
        CHECK_THROWS_AS(deserialize_dataset(bytes.substr(0, bytes.size() / 2)), LoadError);
    }
    CHECK_THROWS_AS(deserialize_dataset("garbage"), LoadError);
    const auto manifest = dataset_manifest(d);
    CHECK(manifest.find("train") != std::string::npos);
}

TEST_CASE("serial container primitives") {
    for (auto mode : {serial::Mode::Binary, serial::Mode::Text}) {
        serial::Writer w(mode, "TESTMAG");
        w.section("A");
        w.u64(42);
        w.f64(0.1);
        w.f64(-1e-300);
        w.bytes("hello world");
        w.end_record();
        w.section("B");
        const std::vector<double> v{1.0 / 3.0, 2.5e17};
        w.f64s(v);
        w.end_record();
        serial::Reader r(w.str(), "TESTMAG");
        r.expect_section("A");
        CHECK(r.u64() == 42);
        CHECK(r.f64() == 0.1);
        CHECK(r.f64() == -1e-300);
        CHECK(r.bytes() == "hello world");
        r.expect_section("B");
        CHECK(r.f64s(2) == v);
        CHECK(r.at_end());
        CHECK_THROWS_AS(serial::Reader(w.str(), "OTHER"), LoadError);
    }
}
