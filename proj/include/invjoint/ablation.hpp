#pragma once
//
// Ablation grids over the Step 1 / Step 2 toggles and the fusion rule.
//

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "invjoint/config.hpp"
#include "invjoint/fusion.hpp"

namespace invjoint {

struct AblationCell {
    std::string name;
    bool enable_step1 = true;
    bool enable_step2 = true;
    bool enable_align = true;
    bool all_samples_invariance = false;
    FusionMode fusion_mode = FusionMode::Multiplicative;

    // Cells with equal training keys share one trained model.
    std::string training_key() const;
    RunConfig apply(const RunConfig& base) const;
};

struct AblationRow {
    AblationCell cell;
    std::uint64_t seed = 0;
    double acc2 = 0, acc3 = 0, acc_joint = 0, c_err = 0;
};

struct AblationResult {
    std::vector<AblationRow> rows;  // cell-major, then seed
    std::size_t trainings = 0;      // distinct training runs performed
};

// The eight cells {Step1 off/on} x {Step2 off/on} x {add, mul}. Step 2
// switches both the invariance and the alignment term; Step 2 without Step 1
// runs the invariance term over every training sample.
std::vector<AblationCell> standard_grid();

// The same seed drives the dataset and the run.
RunConfig with_seed(const RunConfig& base, std::uint64_t seed);

// An empty `seeds` list means "the base config's seeds as they are".
AblationResult ablate(const RunConfig& base, std::span<const AblationCell> grid,
                      std::span<const std::uint64_t> seeds = {});

// Grid file: {"seeds": [...], "cells": [{...}, ...]} or a bare array of
// cells. Cell keys: name, enable_step1, enable_step2, enable_align,
// all_samples_invariance, fusion_mode; "standard": true expands the standard grid.
struct GridSpec {
    std::vector<AblationCell> cells;
    std::vector<std::uint64_t> seeds;
};
GridSpec parse_grid(const nlohmann::json& j);

// cell,step1,step2,align,fusion,seed,acc2,acc3,acc_joint,c_err
std::string ablation_csv(const AblationResult& result);

}  // namespace invjoint
