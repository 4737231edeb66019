#include "invjoint/ablation.hpp"

#include <cstdio>
#include <map>

#include "invjoint/errors.hpp"
#include "invjoint/synthetic.hpp"
#include "invjoint/trainer.hpp"

namespace invjoint {

std::string AblationCell::training_key() const {
    std::string k;
    k += enable_step1 ? '1' : '0';
    k += enable_step2 ? '1' : '0';
    k += enable_align ? '1' : '0';
    k += all_samples_invariance ? '1' : '0';
    return k;
}

RunConfig AblationCell::apply(const RunConfig& base) const {
    RunConfig c = base;
    c.flags.enable_step1 = enable_step1;
    c.flags.enable_step2 = enable_step2;
    c.flags.enable_align = enable_align;
    c.flags.all_samples_invariance = all_samples_invariance;
    c.flags.fusion_mode = fusion_mode;
    return c;
}

std::vector<AblationCell> standard_grid() {
    std::vector<AblationCell> grid;
    for (int s1 = 0; s1 < 2; ++s1)
        for (int s2 = 0; s2 < 2; ++s2)
            for (FusionMode mode : {FusionMode::Additive, FusionMode::Multiplicative}) {
                AblationCell c;
                c.enable_step1 = s1;
                c.enable_step2 = s2;
                c.enable_align = s2;
                c.all_samples_invariance = s2 && !s1;
                c.fusion_mode = mode;
                c.name = std::string(s1 ? "step1" : "nostep1") + "-" + (s2 ? "step2" : "nostep2") + "-" +
                         fusion_mode_name(mode);
                grid.push_back(c);
            }
    return grid;
}

RunConfig with_seed(const RunConfig& base, std::uint64_t seed) {
    RunConfig c = base;
    c.seed = seed;
    c.generator.seed = seed;
    return c;
}

AblationResult ablate(const RunConfig& base, std::span<const AblationCell> grid, std::span<const std::uint64_t> seeds) {
    if (grid.empty()) throw ContractError("ablation grid is empty");
    std::vector<std::uint64_t> seed_list(seeds.begin(), seeds.end());
    const bool keep_base = seed_list.empty();
    if (keep_base) seed_list.push_back(base.seed);

    AblationResult out;
    // Trained models by (seed, training key); fusion is applied at evaluation.
    std::map<std::pair<std::uint64_t, std::string>, InvJointModel> trained;
    std::map<std::uint64_t, Dataset> datasets;
    for (const auto& cell : grid) {
        for (std::uint64_t seed : seed_list) {
            const RunConfig seeded = keep_base ? base : with_seed(base, seed);
            const RunConfig cfg = cell.apply(seeded);
            cfg.validate();
            auto data_it = datasets.find(seed);
            if (data_it == datasets.end()) data_it = datasets.emplace(seed, generate(cfg.generator)).first;
            const auto key = std::make_pair(seed, cell.training_key());
            auto it = trained.find(key);
            if (it == trained.end()) {
                it = trained.emplace(key, train(cfg, data_it->second).model).first;
                ++out.trainings;
            }
            const EvalRecord ev = evaluate(it->second, data_it->second.test, cfg.fusion());
            out.rows.push_back({cell, seed, ev.acc2, ev.acc3, ev.acc_joint, ev.c_err});
        }
    }
    return out;
}

GridSpec parse_grid(const nlohmann::json& j) {
    GridSpec spec;
    const nlohmann::json* cells = &j;
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            if (it.key() != "seeds" && it.key() != "cells" && it.key() != "standard")
                throw ContractError("unknown grid key '" + it.key() + "'");
        if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.value("standard", false)) spec.cells = standard_grid();
        cells = j.contains("cells") ? &j.at("cells") : nullptr;
    }
    if (cells) {
        if (!cells->is_array()) throw ContractError("grid cells must be an array");
        for (const auto& c : *cells) {
            AblationCell cell;
            for (auto it = c.begin(); it != c.end(); ++it) {
                const auto& k = it.key();
                if (k == "name") cell.name = it.value();
                else if (k == "enable_step1") cell.enable_step1 = it.value();
                else if (k == "enable_step2") cell.enable_step2 = it.value();
                else if (k == "enable_align") cell.enable_align = it.value();
                else if (k == "all_samples_invariance") cell.all_samples_invariance = it.value();
                else if (k == "fusion_mode") cell.fusion_mode = parse_fusion_mode(it.value());
                else throw ContractError("unknown grid cell key '" + k + "'");
            }
            if (cell.name.empty()) cell.name = "cell" + std::to_string(spec.cells.size());
            spec.cells.push_back(cell);
        }
    }
    if (spec.cells.empty()) throw ContractError("ablation grid is empty");
    return spec;
}

std::string ablation_csv(const AblationResult& result) {
    std::string out = "cell,step1,step2,align,fusion,seed,acc2,acc3,acc_joint,c_err\n";
    char buf[256];
    for (const auto& r : result.rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%s,%llu,%.6f,%.6f,%.6f,%.6f\n", r.cell.name.c_str(),
                      r.cell.enable_step1, r.cell.enable_step2, r.cell.enable_align,
                      fusion_mode_name(r.cell.fusion_mode), static_cast<unsigned long long>(r.seed), r.acc2, r.acc3,
                      r.acc_joint, r.c_err);
        out += buf;
    }
    return out;
}

}  // namespace invjoint
