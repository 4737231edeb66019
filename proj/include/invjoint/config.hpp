#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "invjoint/fusion.hpp"
#include "invjoint/losses.hpp"
#include "invjoint/synthetic.hpp"

namespace invjoint {

struct ModelConfig {
    std::size_t hidden_dim = 32;
    std::size_t output_dim = 16;
    std::size_t hidden_layers = 2;
    bool residual = true;
    double residual_gain = 0.1;
    // The 2D head returns cosine similarities; training CE sees them times this.
    double logit_scale_2d = 10.0;
    double gate_init_logit = 0.0;
    bool multi_view_adapter = false;
    std::size_t adapter_hidden = 32;
    double adapter_delta = 0.5;

    bool operator==(const ModelConfig&) const = default;
};

struct MiningConfig {
    double rho = 0.25;
    double p2 = 0.5;
    double p3 = 0.5;
    int warmup = 5;
    int period = 1;
    std::size_t k = 0;  // 0: min(5, C - 1)

    bool operator==(const MiningConfig&) const = default;
};

struct OptimConfig {
    double base_lr = 0.01;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    int epochs = 50;
    std::size_t batch_size = 32;

    bool operator==(const OptimConfig&) const = default;
};

struct AblationFlags {
    bool enable_step1 = true;
    bool enable_step2 = true;
    bool enable_align = true;
    FusionMode fusion_mode = FusionMode::Multiplicative;
    // Lets Step 2 run over every training sample when Step 1 is off.
    bool all_samples_invariance = false;

    bool operator==(const AblationFlags&) const = default;
};

struct RunConfig {
    GeneratorConfig generator;
    ModelConfig model;
    IRMConfig irm;
    double alpha = 1.0;
    double tau = 10.0;
    double phi = 0.1;
    MiningConfig mining;
    OptimConfig optim;
    AblationFlags flags;
    AugmentConfig augment;
    std::uint64_t seed = 0;

    void validate() const;
    FusionConfig fusion() const { return {phi, flags.fusion_mode, false}; }
    ObjectiveConfig objective() const { return {irm, alpha, tau}; }
};

nlohmann::json to_json(const RunConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

// Name of the environment variable that overrides RunConfig::seed.
inline constexpr const char* kSeedEnvVar = "INVJOINT_SEED";
// Applies the override if set; returns the value used, if any.
std::optional<std::uint64_t> apply_seed_override(RunConfig& cfg);

}  // namespace invjoint
