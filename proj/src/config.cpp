#include "invjoint/config.hpp"

#include <cstdlib>
#include <fstream>

#include "invjoint/errors.hpp"
#include "invjoint/mining.hpp"
#include "invjoint/optim.hpp"

namespace invjoint {

using nlohmann::json;

void RunConfig::validate() const {
    generator.validate();
    if (model.output_dim == 0 || model.hidden_dim == 0) throw ContractError("model dimensions must be positive");
    if (!(model.logit_scale_2d > 0)) throw ContractError("logit_scale_2d must be positive");
    if (model.adapter_delta < 0 || model.adapter_delta > 1) throw ContractError("adapter_delta must lie in [0,1]");
    irm.validate(irm.include_25d ? 3 : 2);
    if (!(alpha >= 0)) throw ContractError("alpha must be non-negative");
    if (!(tau > 0)) throw ContractError("tau must be positive");
    fusion().validate();
    if (!(mining.rho > 0 && mining.rho <= 1)) throw ContractError("rho must lie in (0,1]");
    if (mining.p2 < 0 || mining.p2 > 1 || mining.p3 < 0 || mining.p3 > 1)
        throw ContractError("posterior thresholds must lie in [0,1]");
    if (mining.warmup < 1 || mining.period < 1) throw ContractError("mining warmup and period must be >= 1");
    if (mining.k > generator.classes) throw ContractError("top-k size exceeds the class count");
    if (optim.epochs <= 0 || optim.batch_size == 0) throw ContractError("epochs and batch_size must be positive");
    OptimizerState{optim.base_lr, optim.weight_decay, optim.momentum, 0, optim.epochs}.validate();
    if (flags.enable_step2 && !flags.enable_step1 && !flags.all_samples_invariance)
        throw ContractError("Step 2 without Step 1 requires all_samples_invariance");
}

namespace {

// Overlays `patch` on `base`, refusing keys that `base` does not declare.
json strict_merge(json base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw ContractError("config section '" + where + "' must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (!base.contains(it.key())) throw ContractError("unknown config key '" + where + it.key() + "'");
        if (base[it.key()].is_object()) base[it.key()] = strict_merge(base[it.key()], it.value(), where + it.key() + ".");
        else base[it.key()] = it.value();
    }
    return base;
}

}  // namespace

json to_json(const GeneratorConfig& g) {
    return {{"classes", g.classes},
            {"shots", g.shots},
            {"invariant_dims", g.invariant_dims},
            {"confounder_dims", g.confounder_dims},
            {"sigma_c", g.sigma_c},
            {"sigma_d", g.sigma_d},
            {"p_conflict", g.p_conflict},
            {"views", g.views},
            {"seed", g.seed}};
}

GeneratorConfig generator_config_from_json(const json& in) {
    const json j = strict_merge(to_json(GeneratorConfig{}), in, "generator.");
    GeneratorConfig g;
    g.classes = j.at("classes");
    g.shots = j.at("shots");
    g.invariant_dims = j.at("invariant_dims");
    g.confounder_dims = j.at("confounder_dims");
    g.sigma_c = j.at("sigma_c");
    g.sigma_d = j.at("sigma_d");
    g.p_conflict = j.at("p_conflict");
    g.views = j.at("views");
    g.seed = j.at("seed");
    return g;
}

json to_json(const RunConfig& c) {
    json j;
    j["generator"] = to_json(c.generator);
    j["model"] = {{"hidden_dim", c.model.hidden_dim},
                  {"output_dim", c.model.output_dim},
                  {"hidden_layers", c.model.hidden_layers},
                  {"residual", c.model.residual},
                  {"residual_gain", c.model.residual_gain},
                  {"logit_scale_2d", c.model.logit_scale_2d},
                  {"gate_init_logit", c.model.gate_init_logit},
                  {"multi_view_adapter", c.model.multi_view_adapter},
                  {"adapter_hidden", c.model.adapter_hidden},
                  {"adapter_delta", c.model.adapter_delta}};
    j["loss"] = {{"lambda", c.irm.lambda},
                 {"variant", irm_variant_name(c.irm.variant)},
                 {"lambda_min", c.irm.lambda_min},
                 {"beta", c.irm.beta},
                 {"include_25d", c.irm.include_25d},
                 {"alpha", c.alpha},
                 {"tau", c.tau},
                 {"phi", c.phi}};
    j["mining"] = {{"rho", c.mining.rho},         {"p2", c.mining.p2},         {"p3", c.mining.p3},
                   {"warmup", c.mining.warmup},   {"period", c.mining.period}, {"k", c.mining.k}};
    j["optim"] = {{"base_lr", c.optim.base_lr},
                  {"weight_decay", c.optim.weight_decay},
                  {"momentum", c.optim.momentum},
                  {"epochs", c.optim.epochs},
                  {"batch_size", c.optim.batch_size}};
    j["flags"] = {{"enable_step1", c.flags.enable_step1},
                  {"enable_step2", c.flags.enable_step2},
                  {"enable_align", c.flags.enable_align},
                  {"fusion_mode", fusion_mode_name(c.flags.fusion_mode)},
                  {"all_samples_invariance", c.flags.all_samples_invariance}};
    j["augment"] = {{"scale_lo", c.augment.scale_lo},
                    {"scale_hi", c.augment.scale_hi},
                    {"jitter_sigma", c.augment.jitter_sigma},
                    {"coord_perturb", c.augment.coord_perturb}};
    j["seed"] = c.seed;
    return j;
}

RunConfig run_config_from_json(const json& in) {
    const json j = strict_merge(to_json(RunConfig{}), in, "");
    RunConfig c;
    c.generator = generator_config_from_json(j.at("generator"));
    const auto& m = j.at("model");
    c.model.hidden_dim = m.at("hidden_dim");
    c.model.output_dim = m.at("output_dim");
    c.model.hidden_layers = m.at("hidden_layers");
    c.model.residual = m.at("residual");
    c.model.residual_gain = m.at("residual_gain");
    c.model.logit_scale_2d = m.at("logit_scale_2d");
    c.model.gate_init_logit = m.at("gate_init_logit");
    c.model.multi_view_adapter = m.at("multi_view_adapter");
    c.model.adapter_hidden = m.at("adapter_hidden");
    c.model.adapter_delta = m.at("adapter_delta");
    const auto& l = j.at("loss");
    c.irm.lambda = l.at("lambda");
    c.irm.variant = parse_irm_variant(l.at("variant"));
    c.irm.lambda_min = l.at("lambda_min");
    c.irm.beta = l.at("beta");
    c.irm.include_25d = l.at("include_25d");
    c.alpha = l.at("alpha");
    c.tau = l.at("tau");
    c.phi = l.at("phi");
    const auto& mi = j.at("mining");
    c.mining.rho = mi.at("rho");
    c.mining.p2 = mi.at("p2");
    c.mining.p3 = mi.at("p3");
    c.mining.warmup = mi.at("warmup");
    c.mining.period = mi.at("period");
    c.mining.k = mi.at("k");
    const auto& o = j.at("optim");
    c.optim.base_lr = o.at("base_lr");
    c.optim.weight_decay = o.at("weight_decay");
    c.optim.momentum = o.at("momentum");
    c.optim.epochs = o.at("epochs");
    c.optim.batch_size = o.at("batch_size");
    const auto& f = j.at("flags");
    c.flags.enable_step1 = f.at("enable_step1");
    c.flags.enable_step2 = f.at("enable_step2");
    c.flags.enable_align = f.at("enable_align");
    c.flags.fusion_mode = parse_fusion_mode(f.at("fusion_mode"));
    c.flags.all_samples_invariance = f.at("all_samples_invariance");
    const auto& a = j.at("augment");
    c.augment.scale_lo = a.at("scale_lo");
    c.augment.scale_hi = a.at("scale_hi");
    c.augment.jitter_sigma = a.at("jitter_sigma");
    c.augment.coord_perturb = a.at("coord_perturb");
    c.seed = j.at("seed");
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ContractError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

std::optional<std::uint64_t> apply_seed_override(RunConfig& cfg) {
    const char* v = std::getenv(kSeedEnvVar);
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    const auto seed = std::strtoull(v, &end, 10);
    if (*end != '\0') throw ContractError(std::string(kSeedEnvVar) + " must be an unsigned integer");
    cfg.seed = seed;
    return seed;
}

}  // namespace invjoint
