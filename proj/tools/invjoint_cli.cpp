#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "invjoint/ablation.hpp"
#include "invjoint/checkpoint.hpp"
#include "invjoint/config.hpp"
#include "invjoint/errors.hpp"
#include "invjoint/gradcheck.hpp"
#include "invjoint/serial.hpp"
#include "invjoint/synthetic.hpp"
#include "invjoint/trainer.hpp"

namespace fs = std::filesystem;
using namespace invjoint;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) { serial::write_file(path.string(), text); }

json eval_summary(const EvalRecord& ev) {
    return {{"acc2", ev.acc2}, {"acc3", ev.acc3}, {"acc_joint", ev.acc_joint}, {"c_err", ev.c_err},
            {"samples", ev.labels.size()}};
}

void write_eval(const fs::path& dir, const EvalRecord& ev) {
    write_text(dir / "per_sample.csv", per_sample_csv(ev));
    write_text(dir / "confusion_2d.csv", confusion_csv(ev.confusion2));
    write_text(dir / "confusion_3d.csv", confusion_csv(ev.confusion3));
    write_text(dir / "confusion_joint.csv", confusion_csv(ev.confusion_joint));
}

struct TrainArgs {
    std::string config, data, out;
    std::optional<double> lambda, alpha, phi, rho;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<std::string> fusion;
    bool no_step1 = false, no_step2 = false, no_align = false, all_samples = false, text_checkpoint = false;
};

int run_train(const TrainArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
    std::string seed_source = "config";
    if (apply_seed_override(cfg)) seed_source = std::string("env:") + kSeedEnvVar;
    if (a.seed) {
        cfg.seed = *a.seed;
        seed_source = "flag";
    }
    if (a.lambda) cfg.irm.lambda = *a.lambda;
    if (a.alpha) cfg.alpha = *a.alpha;
    if (a.phi) cfg.phi = *a.phi;
    if (a.rho) cfg.mining.rho = *a.rho;
    if (a.epochs) cfg.optim.epochs = *a.epochs;
    if (a.fusion) cfg.flags.fusion_mode = parse_fusion_mode(*a.fusion);
    if (a.no_step1) cfg.flags.enable_step1 = false;
    if (a.no_step2) cfg.flags.enable_step2 = false;
    if (a.no_align) cfg.flags.enable_align = false;
    if (a.all_samples) cfg.flags.all_samples_invariance = true;

    const Dataset data = load_dataset(a.data);
    cfg.generator = data.config;
    cfg.validate();

    const fs::path out(a.out);
    fs::create_directories(out);
    json manifest = {{"config", to_json(cfg)}, {"seed", cfg.seed}, {"seed_source", seed_source},
                     {"seed_env_var", kSeedEnvVar}, {"data", a.data}};
    write_text(out / "manifest.json", manifest.dump(2) + "\n");

    std::ofstream log(out / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    log << metrics_log_header();
    TrainOptions opts;
    opts.on_epoch = [&log](const MetricsRecord& r) {
        log << metrics_log_line(r) << std::flush;
        std::fprintf(stderr, "epoch %3d  lr %.5f  ce %.4f  inv %.4f  align %.4f  acc2 %.3f  acc3 %.3f  joint %.3f  c_err %.3f\n",
                     r.epoch, r.lr, r.loss_ce, r.loss_inv, r.loss_align, r.acc2, r.acc3, r.acc_joint, r.c_err);
    };
    const TrainResult res = train(cfg, data, opts);
    save_checkpoint(make_checkpoint(res), (out / "checkpoint.ivjckpt").string(),
                    a.text_checkpoint ? serial::Mode::Text : serial::Mode::Binary);
    write_eval(out, res.final_eval);
    std::cout << eval_summary(res.final_eval).dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"InvJoint: joint hard-sample mining and modality-wise invariance on a synthetic testbed"};
    app.require_subcommand(1);

    std::string gen_config, gen_out, gen_format = "bin";
    auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
    gen->add_option("--config", gen_config, "Run config (JSON); its generator section is used");
    gen->add_option("--out", gen_out, "Dataset file")->required();
    gen->add_option("--format", gen_format, "bin or txt")->check(CLI::IsMember({"bin", "txt"}));

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train and evaluate one configuration");
    tr->add_option("--config", ta.config, "Run config (JSON)");
    tr->add_option("--data", ta.data, "Dataset file")->required();
    tr->add_option("--out", ta.out, "Output directory")->required();
    tr->add_option("--lambda", ta.lambda, "IRM penalty weight");
    tr->add_option("--alpha", ta.alpha, "Alignment weight");
    tr->add_option("--phi", ta.phi, "2D fusion temperature");
    tr->add_option("--rho", ta.rho, "Joint-hard target fraction");
    tr->add_option("--seed", ta.seed, "Run seed");
    tr->add_option("--epochs", ta.epochs, "Epochs");
    tr->add_option("--fusion", ta.fusion, "mul or add")->check(CLI::IsMember({"mul", "add"}));
    tr->add_flag("--no-step1", ta.no_step1, "Disable hard-sample mining");
    tr->add_flag("--no-step2", ta.no_step2, "Disable the invariance term");
    tr->add_flag("--no-align", ta.no_align, "Disable the alignment term");
    tr->add_flag("--all-samples-invariance", ta.all_samples, "Invariance term over every training sample");
    tr->add_flag("--text-checkpoint", ta.text_checkpoint, "Write the checkpoint in text mode");

    std::string ev_ckpt, ev_data, ev_out, ev_fusion;
    std::optional<double> ev_phi;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--data", ev_data, "Dataset file")->required();
    ev->add_option("--phi", ev_phi, "2D fusion temperature");
    ev->add_option("--fusion", ev_fusion, "mul or add")->check(CLI::IsMember({"mul", "add"}));
    ev->add_option("--out", ev_out, "Directory for per-sample and confusion CSVs");

    std::string ab_config, ab_grid, ab_out;
    auto* ab = app.add_subcommand("ablate", "Run an ablation grid");
    ab->add_option("--config", ab_config, "Base run config (JSON)");
    ab->add_option("--grid", ab_grid, "Grid file (JSON)")->required();
    ab->add_option("--out", ab_out, "CSV output file (default: stdout)");

    GradcheckOptions gc;
    auto* gcmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks of every loss");
    gcmd->add_option("--configs", gc.configs, "Random configurations per case");
    gcmd->add_option("--seed", gc.seed, "Seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            RunConfig cfg = gen_config.empty() ? RunConfig{} : load_run_config(gen_config);
            if (const auto s = apply_seed_override(cfg)) cfg.generator.seed = *s;
            const Dataset data = generate(cfg.generator);
            save_dataset(data, gen_out, gen_format == "txt" ? DataFormat::Text : DataFormat::Binary);
            write_text(gen_out + ".manifest.txt", dataset_manifest(data));
            std::cout << "wrote " << data.train.size() << " train / " << data.test.size() << " test samples to "
                      << gen_out << "\n";
        } else if (tr->parsed()) {
            return run_train(ta);
        } else if (ev->parsed()) {
            const Checkpoint ck = load_checkpoint(ev_ckpt);
            const Dataset data = load_dataset(ev_data);
            FusionConfig fusion = ck.config.fusion();
            if (ev_phi) fusion.phi = *ev_phi;
            if (!ev_fusion.empty()) fusion.mode = parse_fusion_mode(ev_fusion);
            fusion.validate();
            if (ModelDims::of(data.config) != ck.model.dims)
                throw ContractError("dataset dimensions do not match the checkpoint");
            const EvalRecord rec = evaluate(ck.model, data.test, fusion);
            if (!ev_out.empty()) {
                fs::create_directories(ev_out);
                write_eval(ev_out, rec);
            }
            std::cout << eval_summary(rec).dump() << "\n";
        } else if (ab->parsed()) {
            RunConfig cfg = ab_config.empty() ? RunConfig{} : load_run_config(ab_config);
            apply_seed_override(cfg);
            std::ifstream in(ab_grid);
            if (!in) throw ContractError("cannot open grid '" + ab_grid + "'");
            const GridSpec spec = parse_grid(json::parse(in));
            const std::string csv = ablation_csv(ablate(cfg, spec.cells, spec.seeds));
            if (ab_out.empty()) std::cout << csv;
            else write_text(ab_out, csv);
        } else if (gcmd->parsed()) {
            bool ok = true;
            for (const auto& c : run_gradcheck_suite(gc)) {
                std::printf("%-18s configs %3d  max rel err %.3e  (< %.0e)  %s\n", c.name.c_str(), c.configs,
                            c.max_rel_error, c.tolerance, c.passed ? "ok" : "FAILED");
                ok = ok && c.passed;
            }
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
