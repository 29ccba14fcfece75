#pragma once

// Training: Adam with bias correction, exponential learning-rate decay,
// and the two staged trainers (registration first, then fusion against a
// frozen registration model). Both trainers checkpoint their full state —
// parameters, optimizer moments, RNG, step counter, config — so a resumed
// run is bit-identical to an uninterrupted one.

#include <filesystem>
#include <iomanip>
#include <set>
#include <sstream>

#include "sfrf/dsff.hpp"
#include "sfrf/reg_loss.hpp"

namespace sfrf {

// Raised when a computation produces NaN/Inf; callers distinguish this
// from data and usage errors.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    std::map<std::string, Tensor> m, v;
    std::size_t t = 0;
};

// One bias-corrected Adam update over every parameter in the store, in
// name order, consuming the gradients accumulated by backward().
inline void adam_step(ParamStore& params, AdamState& state, double lr) {
    if (lr <= 0.0) throw std::invalid_argument("adam_step needs lr > 0");
    ++state.t;
    const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.t));
    for (auto& [name, var] : params.items) {
        Tensor& g = var->grad;
        Tensor& m = state.m.try_emplace(name, Tensor(var->value.shape)).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor(var->value.shape)).first->second;
        if (!m.same_shape(g) || !v.same_shape(g))
            throw std::invalid_argument("adam_step moment shape mismatch for " + name);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            m[i] = AdamState::kBeta1 * m[i] + (1.0 - AdamState::kBeta1) * g[i];
            v[i] = AdamState::kBeta2 * v[i] + (1.0 - AdamState::kBeta2) * g[i] * g[i];
            var->value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + AdamState::kEps);
        }
    }
}

inline double lr_schedule(double lr0, double gamma, std::size_t epoch) {
    return lr0 * std::pow(gamma, static_cast<double>(epoch));
}

// Global-norm gradient clipping. Early in registration training the
// uncertainty-weighted reconstruction term can spike several orders of
// magnitude above the alignment terms (its 1/σ weight is huge while σ is
// still uncalibrated); without clipping those spikes inflate Adam's second
// moments and stall learning for hundreds of steps.
inline double clip_grad_norm(ParamStore& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, var] : params.items)
        for (double g : var->grad.data) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [name, var] : params.items)
            for (auto& g : var->grad.data) g *= s;
    }
    return norm;
}

inline constexpr double kClipNorm = 1.0;

// ---------------------------------------------------------------------------
// Config

struct TrainConfig {
    double lr0 = 1e-3;
    double gamma = 0.95;          // decay per epoch (one pass over the dataset)
    std::size_t patch = 64;
    std::size_t batch = 2;
    std::uint64_t seed = 0;
    RegConfig reg;                // architecture scale factors

    // ablation switches (all on for the full model)
    bool use_uncertainty = true;   // registration: keep the uncertainty loss terms
    bool use_freq_branch = true;   // fusion: keep the spectral branch
    bool use_spatial_branch = true;  // fusion: keep the spatial branch
    bool use_freq_loss = true;     // fusion: keep the spectral loss terms

    void validate() const {
        if (lr0 <= 0.0) throw std::invalid_argument("lr0 must be > 0");
        if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must be in (0, 1]");
        if (patch % 4 != 0 || patch == 0)
            throw std::invalid_argument("patch must be a positive multiple of 4");
        if (batch == 0) throw std::invalid_argument("batch must be >= 1");
    }
};

inline std::string encode_train_config(const TrainConfig& c) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "lr0 = " << c.lr0 << "\n";
    os << "gamma = " << c.gamma << "\n";
    os << "patch = " << c.patch << "\n";
    os << "batch = " << c.batch << "\n";
    os << "seed = " << c.seed << "\n";
    os << "scales = " << c.reg.scales << "\n";
    os << "mc_samples = " << c.reg.mc_samples << "\n";
    os << "dropout_rate = " << c.reg.dropout_rate << "\n";
    os << "gru_steps = " << c.reg.gru_steps << "\n";
    os << "int_steps = " << c.reg.int_steps << "\n";
    os << "beta = " << c.reg.beta << "\n";
    os << "corr_window = " << c.reg.corr_window << "\n";
    os << "use_uncertainty = " << (c.use_uncertainty ? 1 : 0) << "\n";
    os << "use_freq_branch = " << (c.use_freq_branch ? 1 : 0) << "\n";
    os << "use_spatial_branch = " << (c.use_spatial_branch ? 1 : 0) << "\n";
    os << "use_freq_loss = " << (c.use_freq_loss ? 1 : 0) << "\n";
    return os.str();
}

// key = value lines, '#' comments, blank lines ignored.
inline std::map<std::string, std::string> parse_kv(std::istream& in) {
    std::map<std::string, std::string> out;
    std::string line;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line has no '=': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument("config line has empty key: " + line);
        out[key] = val;
    }
    return out;
}

inline TrainConfig decode_train_config(const std::string& text) {
    std::istringstream in(text);
    auto kv = parse_kv(in);
    TrainConfig c;
    auto getd = [&](const char* k, double& dst) {
        if (kv.count(k)) dst = std::stod(kv.at(k));
    };
    auto getz = [&](const char* k, std::size_t& dst) {
        if (kv.count(k)) dst = static_cast<std::size_t>(std::stoull(kv.at(k)));
    };
    getd("lr0", c.lr0);
    getd("gamma", c.gamma);
    getz("patch", c.patch);
    getz("batch", c.batch);
    if (kv.count("seed")) c.seed = std::stoull(kv.at("seed"));
    getz("scales", c.reg.scales);
    getz("mc_samples", c.reg.mc_samples);
    getd("dropout_rate", c.reg.dropout_rate);
    getz("gru_steps", c.reg.gru_steps);
    getz("int_steps", c.reg.int_steps);
    getd("beta", c.reg.beta);
    getz("corr_window", c.reg.corr_window);
    auto getb = [&](const char* k, bool& dst) {
        if (kv.count(k)) dst = std::stoi(kv.at(k)) != 0;
    };
    getb("use_uncertainty", c.use_uncertainty);
    getb("use_freq_branch", c.use_freq_branch);
    getb("use_spatial_branch", c.use_spatial_branch);
    getb("use_freq_loss", c.use_freq_loss);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Dataset

inline std::vector<std::string> dataset_prefixes(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string suffix = "_vis.pgm";
    std::vector<std::string> prefixes;
    if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            prefixes.push_back((fs::path(dir) / name.substr(0, name.size() - suffix.size()))
                                   .string());
    }
    std::sort(prefixes.begin(), prefixes.end());
    if (prefixes.empty()) throw std::invalid_argument("no image pairs found in " + dir);
    return prefixes;
}

inline std::vector<SyntheticPair> load_dataset(const std::string& dir) {
    std::vector<SyntheticPair> out;
    for (const auto& p : dataset_prefixes(dir)) out.push_back(read_pair(p));
    return out;
}

// ---------------------------------------------------------------------------
// Trainer internals shared by both stages

namespace train_detail {

inline Tensor crop2(const Tensor& t, std::size_t oy, std::size_t ox, std::size_t s) {
    Tensor out({s, s});
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) out.at2(y, x) = t.at2(oy + y, ox + x);
    return out;
}

inline Tensor rng_to_tensor(const Rng& rng) {
    auto words = rng.serialize();
    Tensor t({words.size()});
    for (std::size_t i = 0; i < words.size(); ++i) {
        double d;
        __builtin_memcpy(&d, &words[i], 8);
        t[i] = d;
    }
    return t;
}

inline Rng rng_from_tensor(const Tensor& t) {
    if (t.numel() != 6) throw std::invalid_argument("bad RNG state tensor");
    std::array<std::uint64_t, 6> words{};
    for (std::size_t i = 0; i < 6; ++i) {
        const double d = t[i];
        __builtin_memcpy(&words[i], &d, 8);
    }
    Rng rng(0);
    rng.deserialize(words);
    return rng;
}

inline std::string json_line(std::size_t step, const char* const* keys,
                             const double* vals, std::size_t n, double lr) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "{\"step\": " << step;
    for (std::size_t i = 0; i < n; ++i) os << ", \"" << keys[i] << "\": " << vals[i];
    os << ", \"lr\": " << lr << "}";
    return os.str();
}

inline void record_live_grads(const ParamStore& store, std::set<std::string>& live) {
    for (const auto& [name, var] : store.items) {
        if (live.count(name)) continue;
        for (double g : var->grad.data)
            if (g != 0.0) {
                live.insert(name);
                break;
            }
    }
}

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Registration trainer

class RegTrainer {
public:
    RegTrainer(TrainConfig cfg, std::vector<SyntheticPair> dataset)
        : cfg_(cfg), data_(std::move(dataset)), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
        cfg_.validate();
        if (data_.empty()) throw std::invalid_argument("training dataset is empty");
        Rng init_rng(cfg_.seed);
        model_ = std::make_unique<MirModel>(store_, cfg_.reg, init_rng);
        for (const auto& p : data_) {
            if (p.visible.height() < cfg_.patch || p.visible.width() < cfg_.patch)
                throw std::invalid_argument("dataset images smaller than the patch size");
        }
    }

    std::size_t step() const { return step_; }
    const TrainConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    MirModel& model() { return *model_; }
    const std::set<std::string>& live_grads() const { return live_grads_; }
    double current_lr() const {
        const std::size_t epoch = step_ * cfg_.batch / data_.size();
        return lr_schedule(cfg_.lr0, cfg_.gamma, epoch);
    }

    RegLossBreakdown train_step(std::ostream* log = nullptr) {
        const double lr = current_lr();
        ad::Var total;
        RegLossBreakdown avg;
        for (std::size_t b = 0; b < cfg_.batch; ++b) {
            const SyntheticPair& pair = data_[rng_.uniform_index(data_.size())];
            const std::size_t h = pair.visible.height(), w = pair.visible.width();
            const std::size_t oy = rng_.uniform_index(h - cfg_.patch + 1);
            const std::size_t ox = rng_.uniform_index(w - cfg_.patch + 1);
            Tensor vis = train_detail::crop2(pair.visible.pixels, oy, ox, cfg_.patch);
            Tensor ir_in = train_detail::crop2(pair.infrared_warped.pixels, oy, ox, cfg_.patch);
            Tensor ir_gt = train_detail::crop2(pair.infrared_gt.pixels, oy, ox, cfg_.patch);
            Tensor pseudo = modality_bridge(Image(vis)).pixels;

            Rng sample_rng = rng_.split();
            RegistrationGraph g =
                register_graph(ad::constant(std::move(ir_in)), vis, *model_, sample_rng);
            std::vector<ad::Var> sigmas;
            for (const auto& rec : g.per_scale) sigmas.push_back(rec.sigma);
            RegLossGraph l = total_reg_loss_v(g.registered, ir_gt, pseudo, sigmas, g.final_field);
            ad::Var used = cfg_.use_uncertainty
                               ? l.total
                               : ad::add(l.freq, ad::add(l.sim, l.smooth));

            RegLossBreakdown v = l.values();
            const double inv = 1.0 / static_cast<double>(cfg_.batch);
            avg.freq += v.freq * inv;
            avg.u1 += v.u1 * inv;
            avg.u2 += v.u2 * inv;
            avg.sim += v.sim * inv;
            avg.smooth += v.smooth * inv;
            avg.total += used->value[0] * inv;
            total = total ? ad::add(total, used) : used;
        }
        total = ad::mul_scalar(total, 1.0 / static_cast<double>(cfg_.batch));
        if (!std::isfinite(total->value[0]))
            throw NumericError("non-finite training loss at step " +
                                     std::to_string(step_ + 1));
        ad::zero_all_grads(total);
        ad::backward(total);
        train_detail::record_live_grads(store_, live_grads_);
        clip_grad_norm(store_, kClipNorm);
        adam_step(store_, opt_, lr);
        ++step_;
        if (log) {
            static const char* keys[] = {"freq", "u1", "u2", "sim", "smooth", "total"};
            const double vals[] = {avg.freq, avg.u1, avg.u2, avg.sim, avg.smooth, avg.total};
            *log << train_detail::json_line(step_, keys, vals, 6, lr) << "\n";
        }
        return avg;
    }

    void train(std::size_t steps, std::ostream* log = nullptr) {
        for (std::size_t i = 0; i < steps; ++i) train_step(log);
    }

    void save(const std::string& path) const {
        std::map<std::string, Tensor> out = store_.snapshot();
        for (const auto& [name, t] : opt_.m) out["opt.m." + name] = t;
        for (const auto& [name, t] : opt_.v) out["opt.v." + name] = t;
        out["state.step"] = Tensor({1}, static_cast<double>(step_));
        out["state.opt_t"] = Tensor({1}, static_cast<double>(opt_.t));
        out["state.rng"] = train_detail::rng_to_tensor(rng_);
        save_checkpoint(out, path, encode_train_config(cfg_));
    }

    // Restores parameters, optimizer moments, RNG, and step counter. The
    // trainer must have been built with the same config the checkpoint
    // records.
    void load_state(const CheckpointData& ckpt) {
        std::map<std::string, Tensor> params;
        opt_ = AdamState{};
        for (const auto& [name, t] : ckpt.tensors) {
            if (name.rfind("opt.m.", 0) == 0)
                opt_.m[name.substr(6)] = t;
            else if (name.rfind("opt.v.", 0) == 0)
                opt_.v[name.substr(6)] = t;
            else if (name == "state.step")
                step_ = static_cast<std::size_t>(t[0]);
            else if (name == "state.opt_t")
                opt_.t = static_cast<std::size_t>(t[0]);
            else if (name == "state.rng")
                rng_ = train_detail::rng_from_tensor(t);
            else if (name.rfind("state.", 0) != 0)
                params[name] = t;
        }
        store_.restore(params);
    }

private:
    TrainConfig cfg_;
    std::vector<SyntheticPair> data_;
    ParamStore store_;
    std::unique_ptr<MirModel> model_;
    AdamState opt_;
    Rng rng_;
    std::size_t step_ = 0;
    std::set<std::string> live_grads_;
};

// ---------------------------------------------------------------------------
// Fusion trainer (registration frozen)

struct FuseLossBreakdownAvg : FusionLossBreakdown {};

class FuseTrainer {
public:
    FuseTrainer(TrainConfig cfg, std::vector<SyntheticPair> dataset,
                const CheckpointData& reg_ckpt)
        : cfg_(cfg), data_(std::move(dataset)), rng_(cfg.seed ^ 0x6a09e667f3bcc909ULL) {
        cfg_.validate();
        if (data_.empty()) throw std::invalid_argument("training dataset is empty");
        TrainConfig reg_cfg = decode_train_config(reg_ckpt.config);
        Rng reg_init(reg_cfg.seed);
        reg_model_ = std::make_unique<MirModel>(reg_store_, reg_cfg.reg, reg_init);
        std::map<std::string, Tensor> reg_params;
        for (const auto& [name, t] : reg_ckpt.tensors)
            if (name.rfind("opt.", 0) != 0 && name.rfind("state.", 0) != 0)
                reg_params[name] = t;
        reg_store_.restore(reg_params);

        Rng init_rng(cfg_.seed);
        model_ = std::make_unique<DsffModel>(store_, init_rng);
    }

    std::size_t step() const { return step_; }
    ParamStore& params() { return store_; }
    ParamStore& reg_params() { return reg_store_; }
    DsffModel& model() { return *model_; }
    MirModel& reg_model() { return *reg_model_; }
    const std::set<std::string>& live_grads() const { return live_grads_; }
    double current_lr() const {
        const std::size_t epoch = step_ * cfg_.batch / data_.size();
        return lr_schedule(cfg_.lr0, cfg_.gamma, epoch);
    }

    FusionLossBreakdown train_step(std::ostream* log = nullptr) {
        const double lr = current_lr();
        ad::Var total;
        FusionLossBreakdown avg;
        for (std::size_t b = 0; b < cfg_.batch; ++b) {
            const SyntheticPair& pair = data_[rng_.uniform_index(data_.size())];
            const std::size_t h = pair.visible.height(), w = pair.visible.width();
            const std::size_t oy = rng_.uniform_index(h - cfg_.patch + 1);
            const std::size_t ox = rng_.uniform_index(w - cfg_.patch + 1);
            Tensor vis = train_detail::crop2(pair.visible.pixels, oy, ox, cfg_.patch);
            Tensor ir_in = train_detail::crop2(pair.infrared_warped.pixels, oy, ox, cfg_.patch);

            // frozen registration: forward only, its parameters never updated
            RegistrationOutput reg =
                register_images(Image(ir_in), Image(vis), *reg_model_, rng_.next_u64());
            const Tensor& ir_reg = reg.registered.pixels;

            FuseOptions opt{cfg_.use_freq_branch, cfg_.use_spatial_branch};
            FusionGraph g = fuse_graph(ad::constant(ir_reg), ad::constant(vis), *model_, opt);
            FusionLossGraph l = total_fusion_loss_v(g.final_image, ir_reg, vis);
            ad::Var used = cfg_.use_freq_loss
                               ? l.total
                               : ad::add(l.int_l, ad::add(l.grad_l, l.ssim_l));

            FusionLossBreakdown v = l.values();
            const double inv = 1.0 / static_cast<double>(cfg_.batch);
            avg.phase_l += v.phase_l * inv;
            avg.amp_l += v.amp_l * inv;
            avg.int_l += v.int_l * inv;
            avg.grad_l += v.grad_l * inv;
            avg.ssim_l += v.ssim_l * inv;
            avg.total += v.total * inv;
            total = total ? ad::add(total, l.total) : l.total;
        }
        total = ad::mul_scalar(total, 1.0 / static_cast<double>(cfg_.batch));
        if (!std::isfinite(total->value[0]))
            throw NumericError("non-finite training loss at step " +
                                     std::to_string(step_ + 1));
        ad::zero_all_grads(total);
        ad::backward(total);
        train_detail::record_live_grads(store_, live_grads_);
        clip_grad_norm(store_, kClipNorm);
        adam_step(store_, opt_, lr);
        ++step_;
        if (log) {
            static const char* keys[] = {"phase", "amp", "int", "grad", "ssim", "total"};
            const double vals[] = {avg.phase_l, avg.amp_l, avg.int_l,
                                   avg.grad_l,  avg.ssim_l, avg.total};
            *log << train_detail::json_line(step_, keys, vals, 6, lr) << "\n";
        }
        return avg;
    }

    void train(std::size_t steps, std::ostream* log = nullptr) {
        for (std::size_t i = 0; i < steps; ++i) train_step(log);
    }

    void save(const std::string& path) const {
        std::map<std::string, Tensor> out = store_.snapshot();
        for (const auto& [name, t] : opt_.m) out["opt.m." + name] = t;
        for (const auto& [name, t] : opt_.v) out["opt.v." + name] = t;
        out["state.step"] = Tensor({1}, static_cast<double>(step_));
        out["state.opt_t"] = Tensor({1}, static_cast<double>(opt_.t));
        out["state.rng"] = train_detail::rng_to_tensor(rng_);
        save_checkpoint(out, path, encode_train_config(cfg_));
    }

    void load_state(const CheckpointData& ckpt) {
        std::map<std::string, Tensor> params;
        opt_ = AdamState{};
        for (const auto& [name, t] : ckpt.tensors) {
            if (name.rfind("opt.m.", 0) == 0)
                opt_.m[name.substr(6)] = t;
            else if (name.rfind("opt.v.", 0) == 0)
                opt_.v[name.substr(6)] = t;
            else if (name == "state.step")
                step_ = static_cast<std::size_t>(t[0]);
            else if (name == "state.opt_t")
                opt_.t = static_cast<std::size_t>(t[0]);
            else if (name == "state.rng")
                rng_ = train_detail::rng_from_tensor(t);
            else if (name.rfind("state.", 0) != 0)
                params[name] = t;
        }
        store_.restore(params);
    }

private:
    TrainConfig cfg_;
    std::vector<SyntheticPair> data_;
    ParamStore reg_store_;
    std::unique_ptr<MirModel> reg_model_;
    ParamStore store_;
    std::unique_ptr<DsffModel> model_;
    AdamState opt_;
    Rng rng_;
    std::size_t step_ = 0;
    std::set<std::string> live_grads_;
};

}  // namespace sfrf
