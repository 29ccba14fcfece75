// Command-line surface: synthetic data generation, the two training
// stages, registration and fusion inference, evaluation, and difference
// map rendering.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
// failure (NaN/Inf detected).

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "sfrf/train.hpp"

namespace sfrf::cli {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Helpers

struct ConfigPrinter {
    std::vector<std::pair<std::string, std::string>> rows;

    template <typename T>
    void add(const std::string& key, const T& value) {
        std::ostringstream os;
        os << std::setprecision(17) << value;
        rows.emplace_back(key, os.str());
    }

    void print(const std::string& command) const {
        std::cout << "command = " << command << "\n";
        for (const auto& [k, v] : rows) std::cout << k << " = " << v << "\n";
        std::cout.flush();
    }
};

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= s.size())
        throw CLI::ValidationError("--size", "expected HxW, got '" + s + "'");
    try {
        return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
    } catch (const std::exception&) {
        throw CLI::ValidationError("--size", "expected HxW, got '" + s + "'");
    }
}

void require_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

Image load_image(const std::string& path) {
    Image img = read_pgm(path);
    require_finite(img.pixels, path);
    return img;
}

// Min-max normalized view of a map, for PGM dumps of diagnostics.
Image normalized_image(const Tensor& t) {
    double hi = 0.0;
    for (double v : t.data) hi = std::max(hi, std::abs(v));
    Tensor out(t.shape.size() == 2 ? t.shape : Shape{t.shape[1], t.shape[2]});
    if (hi > 0.0)
        for (std::size_t i = 0; i < t.numel(); ++i) out[i] = std::abs(t[i]) / hi;
    return Image(std::move(out));
}

// |a - b| scaled by the maximum difference (all-black when identical).
void render_diff_map(const Image& a, const Image& b, const std::string& path) {
    if (!a.pixels.same_shape(b.pixels))
        throw std::invalid_argument("diff map extent mismatch");
    Tensor d(a.pixels.shape);
    double hi = 0.0;
    for (std::size_t i = 0; i < d.numel(); ++i) {
        d[i] = std::abs(a.pixels[i] - b.pixels[i]);
        hi = std::max(hi, d[i]);
    }
    if (hi > 0.0)
        for (auto& v : d.data) v /= hi;
    write_pgm(Image(std::move(d)), path);
}

struct LoadedReg {
    TrainConfig cfg;
    ParamStore store;
    std::unique_ptr<MirModel> model;
};

LoadedReg load_reg_model(const std::string& path) {
    CheckpointData ck = load_checkpoint(path);
    LoadedReg r;
    r.cfg = decode_train_config(ck.config);
    Rng init(r.cfg.seed);
    r.model = std::make_unique<MirModel>(r.store, r.cfg.reg, init);
    std::map<std::string, Tensor> params;
    for (const auto& [name, t] : ck.tensors)
        if (name.rfind("opt.", 0) != 0 && name.rfind("state.", 0) != 0) params[name] = t;
    r.store.restore(params);
    return r;
}

struct LoadedFuse {
    TrainConfig cfg;
    ParamStore store;
    std::unique_ptr<DsffModel> model;
};

LoadedFuse load_fuse_model(const std::string& path) {
    CheckpointData ck = load_checkpoint(path);
    LoadedFuse r;
    r.cfg = decode_train_config(ck.config);
    Rng init(r.cfg.seed);
    r.model = std::make_unique<DsffModel>(r.store, init);
    std::map<std::string, Tensor> params;
    for (const auto& [name, t] : ck.tensors)
        if (name.rfind("opt.", 0) != 0 && name.rfind("state.", 0) != 0) params[name] = t;
    r.store.restore(params);
    return r;
}

// ---------------------------------------------------------------------------
// Shared training flag block

struct TrainFlags {
    std::string data, out, config_file, log_file, resume;
    std::size_t steps = 100;
    TrainConfig cfg;

    void attach(CLI::App* cmd, bool with_resume) {
        cmd->add_option("--data", data, "dataset directory")->required();
        cmd->add_option("--out", out, "output checkpoint path")->required();
        cmd->add_option("--steps", steps, "training steps to run");
        cmd->add_option("--config", config_file, "key = value config file");
        cmd->add_option("--log", log_file, "JSON-lines loss log (default: <out>.log)");
        if (with_resume) cmd->add_option("--resume", resume, "checkpoint to resume from");
        cmd->add_option("--seed", cfg.seed, "RNG seed");
        cmd->add_option("--lr0", cfg.lr0, "initial learning rate");
        cmd->add_option("--gamma", cfg.gamma, "per-epoch learning-rate decay");
        cmd->add_option("--patch", cfg.patch, "training patch extent");
        cmd->add_option("--batch", cfg.batch, "batch size");
        cmd->add_option("--scales", cfg.reg.scales, "coarse-to-fine scale count");
        cmd->add_option("--mc-samples", cfg.reg.mc_samples, "Monte Carlo dropout samples");
        cmd->add_option("--dropout", cfg.reg.dropout_rate, "dropout rate");
        cmd->add_option("--gru-steps", cfg.reg.gru_steps, "recurrent refinement steps");
        cmd->add_option("--int-steps", cfg.reg.int_steps, "field integration steps");
        cmd->add_option("--beta", cfg.reg.beta, "scale-fusion sharpness");
        cmd->add_option("--corr-window", cfg.reg.corr_window, "field correlation window");
    }

    // Config-file values fill in everything the command line left at its
    // default; flags always win.
    void resolve(const CLI::App* cmd) {
        if (config_file.empty()) return;
        std::ifstream in(config_file);
        if (!in) throw std::invalid_argument("cannot open config file " + config_file);
        auto kv = parse_kv(in);
        auto take = [&](const char* flag, const char* key, auto& dst) {
            if (!kv.count(key) || cmd->count(flag) > 0) return;
            std::istringstream is(kv.at(key));
            is >> dst;
            if (is.fail())
                throw std::invalid_argument(std::string("bad config value for ") + key);
        };
        take("--steps", "steps", steps);
        take("--seed", "seed", cfg.seed);
        take("--lr0", "lr0", cfg.lr0);
        take("--gamma", "gamma", cfg.gamma);
        take("--patch", "patch", cfg.patch);
        take("--batch", "batch", cfg.batch);
        take("--scales", "scales", cfg.reg.scales);
        take("--mc-samples", "mc_samples", cfg.reg.mc_samples);
        take("--dropout", "dropout_rate", cfg.reg.dropout_rate);
        take("--gru-steps", "gru_steps", cfg.reg.gru_steps);
        take("--int-steps", "int_steps", cfg.reg.int_steps);
        take("--beta", "beta", cfg.reg.beta);
        take("--corr-window", "corr_window", cfg.reg.corr_window);
    }

    ConfigPrinter printer() const {
        ConfigPrinter p;
        p.add("data", data);
        p.add("out", out);
        p.add("steps", steps);
        p.add("log", log_file);
        std::istringstream enc(encode_train_config(cfg));
        for (auto& [k, v] : parse_kv(enc)) p.add(k, v);
        return p;
    }
};

// ---------------------------------------------------------------------------
// Subcommands

int cmd_gen(const std::string& out, std::size_t count, std::uint64_t seed,
            const std::string& size, double affine_mag, double elastic_mag) {
    auto [h, w] = parse_size(size);
    ConfigPrinter p;
    p.add("out", out);
    p.add("count", count);
    p.add("seed", seed);
    p.add("height", h);
    p.add("width", w);
    p.add("affine_mag", affine_mag);
    p.add("elastic_mag", elastic_mag);
    p.print("gen");

    std::filesystem::create_directories(out);
    for (std::size_t i = 0; i < count; ++i) {
        SyntheticPair pair = gen_pair(seed + i, h, w, affine_mag, elastic_mag);
        char name[32];
        std::snprintf(name, sizeof(name), "pair_%04zu", i);
        write_pair(pair, (std::filesystem::path(out) / name).string());
    }
    std::cout << "wrote " << count << " pairs to " << out << "\n";
    return 0;
}

int cmd_train_reg(TrainFlags& f) {
    f.printer().print("train-reg");
    RegTrainer trainer(f.cfg, load_dataset(f.data));
    const bool resuming = !f.resume.empty();
    if (resuming) trainer.load_state(load_checkpoint(f.resume));
    const std::string log_path = f.log_file.empty() ? f.out + ".log" : f.log_file;
    std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
    if (!log) throw std::invalid_argument("cannot open log file " + log_path);
    trainer.train(f.steps, &log);
    trainer.save(f.out);
    std::cout << "trained to step " << trainer.step() << ", checkpoint " << f.out << "\n";
    return 0;
}

int cmd_train_fuse(TrainFlags& f, const std::string& reg_ckpt) {
    ConfigPrinter p = f.printer();
    p.add("reg", reg_ckpt);
    p.print("train-fuse");
    FuseTrainer trainer(f.cfg, load_dataset(f.data), load_checkpoint(reg_ckpt));
    const bool resuming = !f.resume.empty();
    if (resuming) trainer.load_state(load_checkpoint(f.resume));
    const std::string log_path = f.log_file.empty() ? f.out + ".log" : f.log_file;
    std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
    if (!log) throw std::invalid_argument("cannot open log file " + log_path);
    trainer.train(f.steps, &log);
    trainer.save(f.out);
    std::cout << "trained to step " << trainer.step() << ", checkpoint " << f.out << "\n";
    return 0;
}

int cmd_register(const std::string& reg_ckpt, const std::string& ir_path,
                 const std::string& vis_path, const std::string& out_img,
                 const std::string& out_field, std::uint64_t seed,
                 const std::string& dump_uncertainty) {
    ConfigPrinter p;
    p.add("reg", reg_ckpt);
    p.add("ir", ir_path);
    p.add("vis", vis_path);
    p.add("out_img", out_img);
    p.add("out_field", out_field);
    p.add("seed", seed);
    p.print("register");

    LoadedReg reg = load_reg_model(reg_ckpt);
    Image ir = load_image(ir_path), vis = load_image(vis_path);
    RegistrationOutput out = register_images(ir, vis, *reg.model, seed);
    require_finite(out.registered.pixels, "registered image");
    require_finite(out.final_field.displacement, "deformation field");
    write_pgm(out.registered, out_img);
    write_field(out.final_field, out_field);
    if (!dump_uncertainty.empty()) {
        std::filesystem::create_directories(dump_uncertainty);
        for (std::size_t k = 0; k < out.per_scale.size(); ++k) {
            char name[32];
            std::snprintf(name, sizeof(name), "sigma_scale_%zu.pgm", k);
            write_pgm(normalized_image(out.per_scale[k].sigma),
                      (std::filesystem::path(dump_uncertainty) / name).string());
        }
    }
    std::cout << "registered " << ir_path << " -> " << out_img << "\n";
    return 0;
}

int cmd_fuse(const std::string& reg_ckpt, const std::string& fuse_ckpt,
             const std::string& ir_path, const std::string& vis_path,
             const std::string& out_path, std::uint64_t seed,
             const std::string& dump_spectra) {
    ConfigPrinter p;
    p.add("reg", reg_ckpt);
    p.add("fuse", fuse_ckpt);
    p.add("ir", ir_path);
    p.add("vis", vis_path);
    p.add("out", out_path);
    p.add("seed", seed);
    p.print("fuse");

    LoadedReg reg = load_reg_model(reg_ckpt);
    LoadedFuse fuse = load_fuse_model(fuse_ckpt);
    Image ir = load_image(ir_path), vis = load_image(vis_path);
    RegistrationOutput rout = register_images(ir, vis, *reg.model, seed);
    require_finite(rout.registered.pixels, "registered image");
    Image fused = fuse_images(rout.registered, vis, *fuse.model);
    require_finite(fused.pixels, "fused image");
    write_pgm(fused, out_path);
    if (!dump_spectra.empty()) {
        std::filesystem::create_directories(dump_spectra);
        auto dump = [&](const Image& img, const char* name) {
            Tensor amp = decompose_fft(img).amplitude;
            for (auto& v : amp.data) v = std::log1p(v);
            write_pgm(normalized_image(amp),
                      (std::filesystem::path(dump_spectra) / name).string());
        };
        dump(rout.registered, "ir_amplitude.pgm");
        dump(vis, "vis_amplitude.pgm");
        dump(fused, "fused_amplitude.pgm");
    }
    std::cout << "fused " << ir_path << " + " << vis_path << " -> " << out_path << "\n";
    return 0;
}

void write_metric_outputs(const std::vector<ordered_json>& rows,
                          const std::string& json_path, const std::string& csv_path) {
    // aggregate row: mean of every numeric field
    ordered_json agg;
    agg["id"] = "aggregate";
    if (!rows.empty())
        for (auto& [key, val] : rows.front().items()) {
            if (!val.is_number()) continue;
            double sum = 0.0;
            for (const auto& r : rows) sum += r.at(key).get<double>();
            agg[key] = sum / static_cast<double>(rows.size());
        }

    std::ofstream js(json_path);
    if (!js) throw std::invalid_argument("cannot open " + json_path);
    js << std::setprecision(17);
    for (const auto& r : rows) js << r.dump() << "\n";
    js << agg.dump() << "\n";

    if (!csv_path.empty()) {
        std::ofstream cs(csv_path);
        if (!cs) throw std::invalid_argument("cannot open " + csv_path);
        cs << std::setprecision(17);
        std::vector<std::string> cols;
        for (auto& [key, val] : rows.front().items()) cols.push_back(key);
        for (std::size_t i = 0; i < cols.size(); ++i)
            cs << cols[i] << (i + 1 < cols.size() ? "," : "\n");
        auto emit = [&](const ordered_json& r) {
            for (std::size_t i = 0; i < cols.size(); ++i) {
                const auto& v = r.at(cols[i]);
                if (v.is_string())
                    cs << v.get<std::string>();
                else
                    cs << v.get<double>();
                cs << (i + 1 < cols.size() ? "," : "\n");
            }
        };
        for (const auto& r : rows) emit(r);
        emit(agg);
    }
}

int cmd_eval(const std::string& mode, const std::string& pred_path,
             const std::string& gt_path, const std::string& ir_path,
             const std::string& vis_path, const std::string& pred_field,
             const std::string& gt_field, const std::string& json_path,
             const std::string& csv_path, const std::string& diff_map) {
    ConfigPrinter p;
    p.add("mode", mode);
    p.add("pred", pred_path);
    p.add("gt", gt_path);
    p.add("ir", ir_path);
    p.add("vis", vis_path);
    p.add("json", json_path);
    p.print("eval");

    if (mode != "reg" && mode != "fuse")
        throw CLI::ValidationError("--mode", "must be reg or fuse, got '" + mode + "'");
    Image pred = load_image(pred_path);
    ordered_json row;
    row["id"] = std::filesystem::path(pred_path).filename().string();
    row["height"] = static_cast<double>(pred.height());
    row["width"] = static_cast<double>(pred.width());

    if (mode == "reg") {
        if (gt_path.empty()) throw CLI::ValidationError("--gt", "required in reg mode");
        Image gt = load_image(gt_path);
        row["ncc"] = ncc(pred, gt);
        auto [rmse, mee] = rmse_mee(pred, gt);
        row["rmse"] = rmse;
        row["mee"] = mee;
        if (!pred_field.empty() != !gt_field.empty())
            throw CLI::ValidationError("--pred-field", "needs both field paths");
        if (!pred_field.empty())
            row["epe"] = mean_endpoint_error(read_field(pred_field), read_field(gt_field));
        if (!diff_map.empty()) render_diff_map(pred, gt, diff_map);
    } else if (mode == "fuse") {
        if (ir_path.empty() || vis_path.empty())
            throw CLI::ValidationError("--ir", "both --ir and --vis required in fuse mode");
        Image ir = load_image(ir_path), vis = load_image(vis_path);
        row["cc"] = cc(pred, ir, vis);
        row["ssim"] = 0.5 * (ssim(pred, ir) + ssim(pred, vis));
        auto [mg, ei] = gradient_metrics(pred);
        row["mg"] = mg;
        row["ei"] = ei;
        if (!diff_map.empty()) render_diff_map(pred, ir, diff_map);
    } else {
        throw CLI::ValidationError("--mode", "must be reg or fuse, got '" + mode + "'");
    }

    for (auto& [key, val] : row.items())
        if (val.is_number() && !std::isfinite(val.get<double>()))
            throw NumericError("non-finite metric " + key);
    write_metric_outputs({row}, json_path, csv_path);
    std::cout << "metrics written to " << json_path << "\n";
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"infrared-visible registration and fusion toolkit"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string gen_out, gen_size = "64x64";
    std::size_t gen_count = 1;
    std::uint64_t gen_seed = 0;
    double gen_affine = 5.0, gen_elastic = 3.0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_count, "number of pairs");
    gen->add_option("--seed", gen_seed, "RNG seed");
    gen->add_option("--size", gen_size, "image extents as HxW");
    gen->add_option("--affine-mag", gen_affine, "affine distortion magnitude (px)");
    gen->add_option("--elastic-mag", gen_elastic, "elastic distortion magnitude (px)");

    // train-reg
    auto* treg = app.add_subcommand("train-reg", "train the registration model");
    TrainFlags reg_flags;
    reg_flags.attach(treg, true);

    // train-fuse
    auto* tfuse = app.add_subcommand("train-fuse", "train the fusion model");
    TrainFlags fuse_flags;
    std::string tfuse_reg;
    fuse_flags.attach(tfuse, true);
    tfuse->add_option("--reg", tfuse_reg, "frozen registration checkpoint")->required();

    // register
    auto* reg = app.add_subcommand("register", "register an infrared image onto a visible one");
    std::string r_ckpt, r_ir, r_vis, r_out_img, r_out_field, r_dump;
    std::uint64_t r_seed = 0;
    reg->add_option("--reg", r_ckpt, "registration checkpoint")->required();
    reg->add_option("--ir", r_ir, "infrared input (PGM)")->required();
    reg->add_option("--vis", r_vis, "visible input (PGM)")->required();
    reg->add_option("--out-img", r_out_img, "registered output (PGM)")->required();
    reg->add_option("--out-field", r_out_field, "deformation field output")->required();
    reg->add_option("--seed", r_seed, "sampling seed");
    reg->add_option("--dump-uncertainty", r_dump, "directory for per-scale sigma maps");

    // fuse
    auto* fuse = app.add_subcommand("fuse", "register then fuse an image pair");
    std::string f_reg, f_fuse, f_ir, f_vis, f_out, f_dump;
    std::uint64_t f_seed = 0;
    fuse->add_option("--reg", f_reg, "registration checkpoint")->required();
    fuse->add_option("--fuse", f_fuse, "fusion checkpoint")->required();
    fuse->add_option("--ir", f_ir, "infrared input (PGM)")->required();
    fuse->add_option("--vis", f_vis, "visible input (PGM)")->required();
    fuse->add_option("--out", f_out, "fused output (PGM)")->required();
    fuse->add_option("--seed", f_seed, "sampling seed");
    fuse->add_option("--dump-spectra", f_dump, "directory for amplitude spectra dumps");

    // eval
    auto* eval = app.add_subcommand("eval", "compute metrics");
    std::string e_mode, e_pred, e_gt, e_ir, e_vis, e_pf, e_gf, e_json, e_csv, e_diff;
    eval->add_option("--mode", e_mode, "reg or fuse")->required();
    eval->add_option("--pred", e_pred, "predicted image (PGM)")->required();
    eval->add_option("--gt", e_gt, "ground-truth image (reg mode)");
    eval->add_option("--ir", e_ir, "infrared source (fuse mode)");
    eval->add_option("--vis", e_vis, "visible source (fuse mode)");
    eval->add_option("--pred-field", e_pf, "predicted deformation field");
    eval->add_option("--gt-field", e_gf, "ground-truth deformation field");
    eval->add_option("--json", e_json, "JSON-lines output path")->required();
    eval->add_option("--csv", e_csv, "optional CSV output path");
    eval->add_option("--diff-map", e_diff, "optional difference-map PGM path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed())
            return cmd_gen(gen_out, gen_count, gen_seed, gen_size, gen_affine, gen_elastic);
        if (treg->parsed()) {
            reg_flags.resolve(treg);
            reg_flags.cfg.validate();
            return cmd_train_reg(reg_flags);
        }
        if (tfuse->parsed()) {
            fuse_flags.resolve(tfuse);
            fuse_flags.cfg.validate();
            return cmd_train_fuse(fuse_flags, tfuse_reg);
        }
        if (reg->parsed())
            return cmd_register(r_ckpt, r_ir, r_vis, r_out_img, r_out_field, r_seed, r_dump);
        if (fuse->parsed())
            return cmd_fuse(f_reg, f_fuse, f_ir, f_vis, f_out, f_seed, f_dump);
        if (eval->parsed())
            return cmd_eval(e_mode, e_pred, e_gt, e_ir, e_vis, e_pf, e_gf, e_json, e_csv,
                            e_diff);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const MetricError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace sfrf::cli

int main(int argc, char** argv) { return sfrf::cli::run(argc, argv); }
