#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <cstring>

#include <json.hpp>

#include "invjoint/ablation.hpp"
#include "invjoint/checkpoint.hpp"
#include "invjoint/config.hpp"
#include "invjoint/errors.hpp"
#include "invjoint/metrics.hpp"
#include "invjoint/trainer.hpp"

using namespace invjoint;
using nlohmann::json;

namespace {

RunConfig quick(std::uint64_t seed = 1) {
    RunConfig cfg;
    cfg.generator.classes = 5;
    cfg.generator.shots = 8;
    cfg.optim.epochs = 4;
    cfg.optim.batch_size = 16;
    cfg.mining.warmup = 1;
    return with_seed(cfg, seed);
}

bool same_bytes(const Tensor& a, const Tensor& b) {
    return a.numel() == b.numel() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

bool same_params(const InvJointModel& a, const InvJointModel& b) {
    const auto pa = a.named_parameters(), pb = b.named_parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].first != pb[i].first || !same_bytes(pa[i].second, pb[i].second)) return false;
    return true;
}

}  // namespace

TEST_CASE("run config validation") {
    RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.flags.enable_step1 = false;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg.flags.all_samples_invariance = true;
    CHECK_NOTHROW(cfg.validate());
    cfg = {};
    cfg.mining.rho = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg = {};
    cfg.phi = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("run config json") {
    RunConfig cfg = quick(7);
    cfg.irm.lambda = 2.5;
    cfg.flags.fusion_mode = FusionMode::Additive;
    const auto back = run_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(back.irm.lambda == 2.5);
    CHECK(back.flags.fusion_mode == FusionMode::Additive);

    const auto partial = run_config_from_json(json::parse(R"({"loss": {"lambda": 1}})"));
    CHECK(partial.irm.lambda == 1.0);
    CHECK(partial.alpha == RunConfig{}.alpha);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"loss": {"foo": 1}})")), ContractError);

    const json j = to_json(RunConfig{});
    for (const char* section : {"generator", "model", "loss", "mining", "optim", "flags", "augment", "seed"})
        CHECK(j.contains(section));
}

TEST_CASE("seed override from the environment") {
    RunConfig cfg;
    ::unsetenv(kSeedEnvVar);
    CHECK_FALSE(apply_seed_override(cfg).has_value());
    ::setenv(kSeedEnvVar, "1234", 1);
    CHECK(apply_seed_override(cfg) == std::optional<std::uint64_t>(1234));
    CHECK(cfg.seed == 1234);
    ::setenv(kSeedEnvVar, "nope", 1);
    CHECK_THROWS_AS(apply_seed_override(cfg), ContractError);
    ::unsetenv(kSeedEnvVar);
}

TEST_CASE("without mining, invariance or alignment the branches train independently") {
    RunConfig cfg = quick(3);
    cfg.flags.enable_step1 = cfg.flags.enable_step2 = cfg.flags.enable_align = false;
    cfg.irm.lambda = 0;
    cfg.alpha = 0;
    const auto data = generate(cfg.generator);
    const auto both = train(cfg, data);
    TrainOptions only2, only3;
    only2.train_3d = false;
    only3.train_2d = false;
    const auto r2 = train(cfg, data, only2);
    const auto r3 = train(cfg, data, only3);
    for (std::size_t e = 0; e < both.metrics.size(); ++e) {
        CHECK(std::abs(both.metrics[e].acc2 - r2.metrics[e].acc2) <= 1e-9);
        CHECK(std::abs(both.metrics[e].acc3 - r3.metrics[e].acc3) <= 1e-9);
    }
    // the branch not trained keeps its initialisation
    const auto init = InvJointModel::init(cfg.model, ModelDims::of(cfg.generator), false, mix_seed(cfg.seed, 1));
    CHECK(same_bytes(r2.model.head3.prototypes, init.head3.prototypes));
    CHECK(same_bytes(r3.model.head2.prototypes, init.head2.prototypes));
}

TEST_CASE("an empty hard set leaves the gate untouched") {
    RunConfig cfg = quick(4);
    const auto data = generate(cfg.generator);
    TrainOptions opts;
    opts.fixed_hard_set = std::vector<std::size_t>{};
    const auto res = train(cfg, data, opts);
    const auto init = InvJointModel::init(cfg.model, ModelDims::of(cfg.generator), false, mix_seed(cfg.seed, 1));
    CHECK(same_bytes(res.model.gate.mask_logits, init.gate.mask_logits));
    for (const auto& r : res.metrics) CHECK(r.inv_steps == 0);
}

TEST_CASE("metrics log of a full run") {
    RunConfig cfg = quick(5);
    const auto data = generate(cfg.generator);
    std::vector<int> seen;
    TrainOptions opts;
    opts.on_epoch = [&](const MetricsRecord& r) { seen.push_back(r.epoch); };
    const auto res = train(cfg, data, opts);
    CHECK(res.metrics.size() == static_cast<std::size_t>(cfg.optim.epochs));
    CHECK(seen == std::vector<int>{0, 1, 2, 3});
    for (std::size_t e = 1; e < res.metrics.size(); ++e) CHECK(res.metrics[e].lr <= res.metrics[e - 1].lr);

    const auto parsed = parse_metrics_log(metrics_log(res.metrics));
    CHECK(parsed.records.size() == res.metrics.size());
    CHECK(parsed.header["format"] == "invjoint-metrics");
    for (const auto& rec : parsed.records)
        for (const auto& f : metrics_fields()) CHECK(rec.contains(f));

    bool mined = false;
    for (const auto& r : res.metrics) {
        if (!r.selection) continue;
        mined = true;
        const auto& s = *r.selection;
        for (auto i : s.d_joint)
            CHECK((std::binary_search(s.d2.begin(), s.d2.end(), i) || std::binary_search(s.d3.begin(), s.d3.end(), i)));
    }
    CHECK(mined);
    CHECK_THROWS_AS(parse_metrics_log("{\"format\":\"other\"}\n"), LoadError);
}

TEST_CASE("identical configs give identical logs") {
    const RunConfig cfg = quick(6);
    const auto data = generate(cfg.generator);
    CHECK(metrics_log(train(cfg, data).metrics) == metrics_log(train(cfg, data).metrics));
}

TEST_CASE("a diverging run names the epoch and batch") {
    RunConfig cfg = quick(6);
    cfg.optim.base_lr = 1e12;
    cfg.optim.momentum = 0;
    const auto data = generate(cfg.generator);
    try {
        train(cfg, data);
        FAIL("expected divergence");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("evaluation") {
    const RunConfig cfg = quick(8);
    const auto data = generate(cfg.generator);
    const auto res = train(cfg, data);
    const auto a = evaluate(res.model, data.test, cfg.fusion());
    const auto b = evaluate(res.model, data.test, cfg.fusion());
    CHECK(a.pred_joint == b.pred_joint);
    CHECK(a.acc_joint == b.acc_joint);
    CHECK(a.c_err == b.c_err);
    CHECK(a.acc_joint == res.final_eval.acc_joint);

    FusionConfig flat = cfg.fusion();
    flat.phi = 1e6;
    const auto big = evaluate(res.model, data.test, flat);
    CHECK(big.acc_joint == big.acc3);
    CHECK(big.pred_joint == big.pred3);

    const auto tally = tally_per_sample_csv(per_sample_csv(a), cfg.generator.classes);
    CHECK(tally.acc2 == a.acc2);
    CHECK(tally.acc3 == a.acc3);
    CHECK(tally.acc_joint == a.acc_joint);
    CHECK(tally.c_err == a.c_err);

    auto other = quick(8);
    other.generator.confounder_dims = 4;
    CHECK_THROWS_AS(evaluate(res.model, generate(other.generator).test, cfg.fusion()), ContractError);
}

TEST_CASE("routing audit on an instrumented run") {
    RunConfig cfg = with_seed(RunConfig{}, 9);
    cfg.optim.epochs = 2;
    cfg.mining.warmup = 1;
    const auto data = generate(cfg.generator);
    TrainOptions opts;
    opts.audit = true;
    const auto res = train(cfg, data, opts);
    REQUIRE_FALSE(res.audit.empty());
    std::size_t inv_steps = 0;
    for (const auto& s : res.audit) {
        bool inv = false;
        for (const auto& [term, groups] : s.term_grads) {
            if (term == "inv") {
                inv = true;
                CHECK(groups == std::vector<std::string>{kGroupGate});
            } else {
                CHECK(std::find(groups.begin(), groups.end(), kGroupGate) == groups.end());
            }
        }
        inv_steps += inv;
        const bool gate_changed =
            std::find(s.changed_groups.begin(), s.changed_groups.end(), kGroupGate) != s.changed_groups.end();
        CHECK(gate_changed == inv);
        for (const auto& g : s.changed_groups)
            CHECK(std::find(s.active_groups.begin(), s.active_groups.end(), g) != s.active_groups.end());
    }
    CHECK(inv_steps > 0);
}

TEST_CASE("checkpoint round trip") {
    const RunConfig cfg = quick(10);
    const auto data = generate(cfg.generator);
    const auto res = train(cfg, data);
    const auto ck = make_checkpoint(res);
    for (auto mode : {serial::Mode::Binary, serial::Mode::Text}) {
        const auto bytes = serialize_checkpoint(ck, mode);
        const auto back = deserialize_checkpoint(bytes);
        CHECK(same_params(back.model, res.model));
        CHECK(back.velocity == ck.velocity);
        CHECK(back.epoch == ck.epoch);
        CHECK(serialize_checkpoint(back, mode) == bytes);
        const auto ev = evaluate(back.model, data.test, back.config.fusion());
        CHECK(ev.pred_joint == res.final_eval.pred_joint);
    }
}

TEST_CASE("checkpoint load errors") {
    const RunConfig cfg = quick(11);
    const auto data = generate(cfg.generator);
    auto short_cfg = cfg;
    short_cfg.optim.epochs = 1;
    const auto ck = make_checkpoint(train(short_cfg, data));
    const auto bytes = serialize_checkpoint(ck);

    auto message = [](auto&& fn) {
        try {
            fn();
        } catch (const LoadError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    const auto cut = message([&] { deserialize_checkpoint(bytes.substr(0, bytes.size() - 40)); });
    CHECK(cut.find("OPTIM") != std::string::npos);
    const auto cut_early = message([&] { deserialize_checkpoint(bytes.substr(0, bytes.find("CONFIG") + 12)); });
    CHECK(cut_early.find("CONFIG") != std::string::npos);

    auto mismatched = short_cfg;
    mismatched.model.hidden_dim = 12;
    const auto first = ck.model.named_parameters().front().first;
    const auto err = message([&] { deserialize_checkpoint(bytes, mismatched); });
    CHECK(err.find("'" + first + "'") != std::string::npos);

    auto later = short_cfg;
    later.model.output_dim = 8;
    const auto err2 = message([&] { deserialize_checkpoint(bytes, later); });
    CHECK(err2.find("enc2") != std::string::npos);

    auto attn = short_cfg;
    attn.irm.include_25d = true;
    const auto missing = message([&] { deserialize_checkpoint(bytes, attn); });
    CHECK(missing.find("attn") != std::string::npos);

    std::string wrong_version = serialize_checkpoint(ck, serial::Mode::Text);
    const auto pos = wrong_version.find("[HEADER]\n1");
    REQUIRE(pos != std::string::npos);
    wrong_version[pos + 9] = '9';
    CHECK(message([&] { deserialize_checkpoint(wrong_version); }).find("version") != std::string::npos);
}

TEST_CASE("ablation grids") {
    RunConfig base = quick(12);
    base.optim.epochs = 3;
    const auto data = generate(base.generator);

    AblationCell full;
    full.name = "full";
    const std::vector<AblationCell> one{full};
    const auto r1 = ablate(base, one);
    REQUIRE(r1.rows.size() == 1);
    const auto direct = train(full.apply(base), data);
    CHECK(r1.rows[0].acc_joint == direct.final_eval.acc_joint);
    CHECK(r1.rows[0].c_err == direct.final_eval.c_err);
    CHECK(r1.trainings == 1);

    AblationCell add = full;
    add.name = "full-add";
    add.fusion_mode = FusionMode::Additive;
    const std::vector<AblationCell> pair{full, add};
    const auto r2 = ablate(base, pair);
    CHECK(r2.trainings == 1);
    CHECK(r2.rows[0].acc2 == r2.rows[1].acc2);
    CHECK(r2.rows[0].acc3 == r2.rows[1].acc3);
    const auto alone = evaluate(direct.model, data.test, add.apply(base).fusion());
    CHECK(r2.rows[1].acc_joint == alone.acc_joint);

    const auto grid = standard_grid();
    REQUIRE(grid.size() == 8);
    const auto r8 = ablate(base, grid);
    CHECK(r8.rows.size() == 8);
    CHECK(r8.trainings == 4);
    const auto csv = ablation_csv(r8);
    CHECK(csv.rfind("cell,step1,step2,align,fusion,seed,acc2,acc3,acc_joint,c_err\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);

    const std::vector<std::uint64_t> seeds{1, 2};
    CHECK(ablate(base, one, seeds).rows.size() == 2);
    CHECK_THROWS_AS(ablate(base, std::vector<AblationCell>{}), ContractError);
}

TEST_CASE("grid files") {
    const auto a = parse_grid(json::parse(R"({"standard": true, "seeds": [1, 2, 3]})"));
    CHECK(a.cells.size() == 8);
    CHECK(a.seeds == std::vector<std::uint64_t>{1, 2, 3});
    const auto b = parse_grid(json::parse(R"([{"name": "x", "enable_step2": false, "fusion_mode": "add"}])"));
    REQUIRE(b.cells.size() == 1);
    CHECK_FALSE(b.cells[0].enable_step2);
    CHECK(b.cells[0].fusion_mode == FusionMode::Additive);
    CHECK_THROWS_AS(parse_grid(json::parse(R"([{"bogus": 1}])")), ContractError);
}
