// Command-line front end: dataset generation, training, evaluation,
// single-sample inference, the finite-difference sweep, and the ablation
// matrix. Diagnostics go to stderr; results go to files under --out.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "scafusion/checkpoint.hpp"
#include "scafusion/gradsuite.hpp"
#include "scafusion/train.hpp"

namespace fs = std::filesystem;
using namespace scafusion;

namespace {

RunConfig load_run_config(const std::string& path, int64_t seed_override) {
    RunConfig cfg = load_config(path);
    if (seed_override >= 0) {
        cfg.optim.seed = static_cast<uint64_t>(seed_override);
        cfg.gen.scene.seed = static_cast<uint64_t>(seed_override);
    }
    cfg.validate();
    return cfg;
}

int cmd_gen(const RunConfig& cfg) {
    generate_dataset(cfg);
    std::cerr << "wrote " << cfg.gen.num_samples << " samples to " << cfg.dataset_root
              << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& out) {
    fs::create_directories(out);
    auto samples = load_split(cfg, "train");
    std::cerr << "training on " << samples.size() << " samples for " << cfg.optim.steps
              << " steps\n";
    auto model = build_model<float>(cfg);
    auto history = train_loop(model, samples);
    write_history_csv((fs::path(out) / "history.csv").string(), history);
    save_checkpoint((fs::path(out) / "checkpoint").string(), model.store, cfg);
    std::cerr << "det loss " << history.initial_det << " -> " << history.final_det << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg_ignored, const std::string& ckpt_dir,
             const std::string& out) {
    (void)cfg_ignored;
    RunConfig cfg = checkpoint_config(ckpt_dir);
    auto model = build_model<float>(cfg);
    load_checkpoint(ckpt_dir, model.store);
    auto samples = load_split(cfg, cfg.eval_split);
    std::cerr << "evaluating " << samples.size() << " samples (" << cfg.eval_split << ")\n";
    auto report = evaluate_model(model, samples);
    fs::create_directories(out);
    write_report(out, report, "checkpoint");
    std::cerr << "mAP " << report.mean_ap << "  NDS " << report.nds_value << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt_dir, const std::string& token,
              const std::string& out) {
    RunConfig cfg = checkpoint_config(ckpt_dir);
    auto model = build_model<float>(cfg);
    load_checkpoint(ckpt_dir, model.store);
    std::string tok = token;
    if (tok.empty()) {
        auto splits = read_splits(cfg.dataset_root);
        const auto& split = splits.count(cfg.eval_split) ? splits.at(cfg.eval_split)
                                                         : splits.begin()->second;
        if (split.empty()) throw std::runtime_error("infer: dataset split is empty");
        tok = split.front();
    }
    auto prepared = prepare_sample<float>(read_sample(cfg.dataset_root, tok), cfg);
    auto boxes = infer_sample(model, prepared);
    fs::create_directories(out);
    {
        std::ofstream f((fs::path(out) / (tok + "_boxes.csv")).string());
        f << "class,score,x,y,z,l,w,h,yaw\n";
        for (const auto& b : boxes)
            f << class_names()[static_cast<size_t>(b.cls)] << "," << b.score << "," << b.x
              << "," << b.y << "," << b.z << "," << b.l << "," << b.w << "," << b.h << ","
              << b.yaw << "\n";
    }
    render_bev_ppm((fs::path(out) / (tok + "_bev.ppm")).string(), cfg.grid, prepared.gts,
                   boxes);
    std::cerr << tok << ": " << boxes.size() << " detections, " << prepared.gts.size()
              << " ground-truth boxes\n";
    return 0;
}

int cmd_gradcheck(uint64_t seed) {
    auto results = run_gradient_suite(seed);
    bool ok = true;
    for (const auto& fr : results) {
        const bool pass = fr.max_rel_error < 1e-4;
        ok = ok && pass;
        std::cout << (pass ? "PASS " : "FAIL ") << fr.family << "  instances="
                  << fr.instances << "  max_rel_error=" << fr.max_rel_error;
        if (!pass) std::cout << "  worst=" << fr.worst_tensor;
        std::cout << "\n";
    }
    return ok ? 0 : 1;
}

int cmd_ablate(const RunConfig& cfg, const std::string& out) {
    const std::vector<uint64_t> seeds = {cfg.optim.seed, cfg.optim.seed + 1,
                                         cfg.optim.seed + 2};
    run_ablation(cfg, out, seeds);
    std::cerr << "wrote ablate.csv and summary.txt to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal BEV detection pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "runs";
    std::string ckpt_dir;
    std::string token;
    int64_t seed = -1;

    auto add_common = [&](CLI::App* sub, bool need_config) {
        auto* opt = sub->add_option("--config", config_path, "run configuration JSON");
        if (need_config) opt->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override the configured seed");
        sub->add_option("--out", out_dir, "output directory");
    };

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    add_common(gen, true);
    auto* train = app.add_subcommand("train", "train a model on the train split");
    add_common(train, true);
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, false);
    eval->add_option("--checkpoint", ckpt_dir, "checkpoint directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    auto* infer = app.add_subcommand("infer", "run detection on one sample");
    add_common(infer, false);
    infer->add_option("--checkpoint", ckpt_dir, "checkpoint directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    infer->add_option("--token", token, "sample token (default: first eval sample)");
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient sweep");
    grad->add_option("--seed", seed, "sweep seed");
    auto* ablate = app.add_subcommand("ablate", "train the module toggle matrix");
    add_common(ablate, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (grad->parsed()) return cmd_gradcheck(seed >= 0 ? static_cast<uint64_t>(seed) : 12345);
        if (gen->parsed()) return cmd_gen(load_run_config(config_path, seed));
        if (train->parsed()) return cmd_train(load_run_config(config_path, seed), out_dir);
        if (eval->parsed()) return cmd_eval(RunConfig{}, ckpt_dir, out_dir);
        if (infer->parsed()) return cmd_infer(ckpt_dir, token, out_dir);
        if (ablate->parsed()) return cmd_ablate(load_run_config(config_path, seed), out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
