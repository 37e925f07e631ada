#include "scafusion/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace scafusion {

TrainHistory train_loop(Model<float>& model, const std::vector<PreparedSample<float>>& samples) {
    if (samples.empty()) throw std::invalid_argument("train_loop: no training samples");
    const auto& cfg = model.cfg;
    Adam<float> opt(cfg.optim.lr);
    TrainHistory history;
    const int64_t n = static_cast<int64_t>(samples.size());
    const int64_t batch = std::min<int64_t>(cfg.optim.batch_size, n);

    for (int step = 0; step < cfg.optim.steps; ++step) {
        std::vector<const PreparedSample<float>*> picks;
        std::vector<RenderedTargets> targets;
        for (int64_t b = 0; b < batch; ++b) {
            const auto& s = samples[static_cast<size_t>((step * batch + b) % n)];
            picks.push_back(&s);
            targets.push_back(s.targets);
        }
        // cosine decay to 5% of the base rate over the run
        const double warm = cfg.optim.steps > 1
                                ? static_cast<double>(step) / (cfg.optim.steps - 1)
                                : 0.0;
        opt.set_lr(cfg.optim.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * warm))));

        StepRecord rec;
        rec.step = step;
        try {
            model.store.zero_grads();
            auto fw = forward_model(model, picks, /*training=*/true);
            auto lc = compute_losses(fw.main, fw.aux ? &*fw.aux : nullptr,
                                     fw.align_loss ? &*fw.align_loss : nullptr, targets,
                                     cfg.grid, cfg.loss);
            rec.total = static_cast<double>(lc.total.item());
            rec.det_main = lc.det_main;
            rec.det_aux = lc.det_aux;
            rec.align = lc.align;
            if (!std::isfinite(rec.total)) throw std::runtime_error("non-finite total loss");
            backward(lc.total);
            opt.step(model.store);
        } catch (const std::exception& e) {
            std::ostringstream msg;
            msg << "train_loop: aborted at step " << step << ": " << e.what()
                << " (det_main=" << rec.det_main << ", det_aux=" << rec.det_aux
                << ", align=" << rec.align << ")";
            throw std::runtime_error(msg.str());
        }
        if (step == 0) history.initial_det = rec.det_main;
        history.final_det = rec.det_main;
        history.steps.push_back(rec);
    }
    return history;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_history_csv: cannot write " + path);
    f << "step,total,det_main,det_aux,align\n";
    for (const auto& r : history.steps)
        f << r.step << "," << r.total << "," << r.det_main << "," << r.det_aux << ","
          << r.align << "\n";
}

MetricsReport evaluate_model(Model<float>& model,
                             const std::vector<PreparedSample<float>>& samples) {
    std::vector<SampleDetections> dets;
    for (const auto& s : samples) {
        SampleDetections d;
        d.preds = infer_sample(model, s);
        d.gts = s.gts;
        dets.push_back(std::move(d));
    }
    return evaluate_detections(dets);
}

void generate_dataset(const RunConfig& cfg) {
    std::vector<SceneSample> samples;
    std::vector<std::string> tokens;
    Rng seeder(cfg.gen.scene.seed);
    for (int i = 0; i < cfg.gen.num_samples; ++i) {
        SceneSpec spec = cfg.gen.scene;
        spec.seed = seeder.fork(static_cast<uint64_t>(i)).next_u64();
        spec.camera = default_camera(cfg.model.image_width, cfg.model.image_height);
        char token[32];
        std::snprintf(token, sizeof(token), "sample_%04d", i);
        samples.push_back(make_sample(spec, token));
        tokens.push_back(token);
    }
    const int n_train = std::max(
        1, static_cast<int>(std::lround(cfg.gen.train_fraction * cfg.gen.num_samples)));
    std::map<std::string, std::vector<std::string>> splits;
    for (int i = 0; i < cfg.gen.num_samples; ++i)
        splits[i < n_train ? "train" : "val"].push_back(tokens[static_cast<size_t>(i)]);
    if (!splits.count("val")) splits["val"] = {};
    write_dataset(cfg.dataset_root, samples, splits);
}

std::vector<PreparedSample<float>> load_split(const RunConfig& cfg, const std::string& split) {
    auto splits = read_splits(cfg.dataset_root);
    if (!splits.count(split))
        throw std::runtime_error("load_split: dataset has no split '" + split + "'");
    std::vector<PreparedSample<float>> out;
    for (const auto& token : splits.at(split))
        out.push_back(prepare_sample<float>(read_sample(cfg.dataset_root, token), cfg));
    return out;
}

namespace {

void draw_box(std::vector<uint8_t>& img, int64_t W, int64_t H, const BEVGridSpec& grid,
              int scale, const Box3D& b, uint8_t r, uint8_t g, uint8_t bl) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    auto plot = [&](double x, double y) {
        const int64_t px = static_cast<int64_t>((x - grid.x_min) / grid.cell * scale);
        const int64_t py = static_cast<int64_t>((y - grid.y_min) / grid.cell * scale);
        if (px < 0 || px >= W || py < 0 || py >= H) return;
        const size_t idx = static_cast<size_t>((py * W + px) * 3);
        img[idx] = r;
        img[idx + 1] = g;
        img[idx + 2] = bl;
    };
    // four edges, sampled densely
    const double hx[4] = {b.l / 2, b.l / 2, -b.l / 2, -b.l / 2};
    const double hy[4] = {b.w / 2, -b.w / 2, -b.w / 2, b.w / 2};
    for (int e = 0; e < 4; ++e) {
        const double x0 = hx[e], y0 = hy[e];
        const double x1 = hx[(e + 1) % 4], y1 = hy[(e + 1) % 4];
        for (int t = 0; t <= 64; ++t) {
            const double u = t / 64.0;
            const double lx = x0 + u * (x1 - x0), ly = y0 + u * (y1 - y0);
            plot(b.x + c * lx - s * ly, b.y + s * lx + c * ly);
        }
    }
}

}  // namespace

void render_bev_ppm(const std::string& path, const BEVGridSpec& grid,
                    const std::vector<Box3D>& gts, const std::vector<Box3D>& dets) {
    const int scale = 8;
    const int64_t W = grid.width() * scale, H = grid.height() * scale;
    std::vector<uint8_t> img(static_cast<size_t>(W * H * 3), 24);
    // matched detections are drawn yellow, unmatched red
    auto m = match_predictions(dets, gts, 2.0, 0);
    auto m1 = match_predictions(dets, gts, 2.0, 1);
    std::vector<bool> matched(dets.size(), false);
    for (const auto& e : m.entries)
        if (e.tp) matched[static_cast<size_t>(e.pred_index)] = true;
    for (const auto& e : m1.entries)
        if (e.tp) matched[static_cast<size_t>(e.pred_index)] = true;
    for (size_t i = 0; i < dets.size(); ++i) {
        if (matched[i])
            draw_box(img, W, H, grid, scale, dets[i], 230, 210, 40);
        else
            draw_box(img, W, H, grid, scale, dets[i], 220, 40, 40);
    }
    for (const auto& g : gts) draw_box(img, W, H, grid, scale, g, 40, 220, 60);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("render_bev_ppm: cannot write " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

std::vector<AblateRow> run_ablation(const RunConfig& base, const std::string& out_dir,
                                    const std::vector<uint64_t>& seeds) {
    struct ConfigRow {
        const char* name;
        bool cam, catb, sca, mona;
    };
    // Table-style toggle matrix: CAM = contrastive alignment, CATB = camera
    // auxiliary branch, SCA = coordinate attention, Mona = frozen-adapter
    const ConfigRow matrix[7] = {
        {"baseline", false, false, false, false},
        {"+CAM", true, false, false, false},
        {"+CATB", false, true, false, false},
        {"+SCA", false, false, true, false},
        {"+CAM+CATB", true, true, false, false},
        {"+CAM+CATB+SCA", true, true, true, false},
        {"full", true, true, true, true},
    };

    fs::create_directories(out_dir);
    auto train_samples = load_split(base, "train");
    auto eval_samples = load_split(base, base.eval_split);

    std::vector<AblateRow> rows;
    for (uint64_t seed : seeds) {
        for (const auto& c : matrix) {
            RunConfig cfg = base;
            cfg.optim.seed = seed;
            cfg.toggles.camera_branch = true;
            cfg.toggles.cam_align = c.cam;
            cfg.toggles.aux_branch = c.catb;
            cfg.toggles.sca = c.sca;
            cfg.toggles.saem = c.sca;
            cfg.toggles.mona = c.mona;
            auto model = build_model<float>(cfg);
            train_loop(model, train_samples);
            auto report = evaluate_model(model, eval_samples);

            AblateRow row;
            row.name = c.name;
            row.toggles = cfg.toggles;
            row.seed = seed;
            row.mean_ap = report.mean_ap;
            row.nds = report.nds_value;
            row.meteor_ap = report.classes[0].mean_ap;
            row.platform_ap = report.classes[1].mean_ap;
            row.total_params = model.store.total_count();
            const int64_t sca_params = model.store.count_matching("sca.");
            const int64_t fused_stage = model.store.count_matching("fuse.") +
                                        model.store.count_matching("head.") + sca_params;
            row.sca_param_ratio =
                fused_stage > 0
                    ? static_cast<double>(sca_params) / static_cast<double>(fused_stage)
                    : 0.0;
            rows.push_back(row);
            std::cerr << "[ablate] seed " << seed << " " << c.name << ": mAP=" << row.mean_ap
                      << " NDS=" << row.nds << "\n";
        }
    }

    std::ofstream csv((fs::path(out_dir) / "ablate.csv").string());
    csv << "config,CAM,CATB,SCA,Mona,seed,mAP,NDS,AP_Meteor,AP_Platform,total_params,"
           "sca_param_ratio\n";
    for (const auto& r : rows)
        csv << r.name << "," << r.toggles.cam_align << "," << r.toggles.aux_branch << ","
            << r.toggles.sca << "," << r.toggles.mona << "," << r.seed << "," << r.mean_ap
            << "," << r.nds << "," << r.meteor_ap << "," << r.platform_ap << ","
            << r.total_params << "," << r.sca_param_ratio << "\n";

    // side-by-side Meteor AP: full model vs the closest no-SCA configuration
    double full_sum = 0, nosca_sum = 0;
    int full_n = 0, nosca_n = 0;
    for (const auto& r : rows) {
        if (r.name == std::string("full")) {
            full_sum += r.meteor_ap;
            ++full_n;
        }
        if (r.name == std::string("+CAM+CATB")) {
            nosca_sum += r.meteor_ap;
            ++nosca_n;
        }
    }
    std::ofstream summary((fs::path(out_dir) / "summary.txt").string());
    if (full_n && nosca_n) {
        const double fm = full_sum / full_n, nm = nosca_sum / nosca_n;
        summary << "mean Meteor AP over " << full_n << " seed(s)\n"
                << "  full model:          " << fm << "\n"
                << "  no-SCA (+CAM+CATB):  " << nm << "\n"
                << "  difference:          " << (fm - nm) << "\n";
    }
    if (!rows.empty())
        summary << "SCA parameter share of the fused stage (full model): "
                << rows.back().sca_param_ratio << "\n";
    return rows;
}

}  // namespace scafusion
