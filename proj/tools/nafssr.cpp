// nafssr command-line entry point: synth, train, infer, eval, gradcheck.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "nafssr/config.hpp"
#include "nafssr/gradcheck.hpp"
#include "nafssr/metrics.hpp"
#include "nafssr/training.hpp"

namespace fs = std::filesystem;
using namespace nafssr;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericalError = 4 };

// Flag values that were given on the command line, keyed by config key.
struct Bindings {
    std::vector<std::tuple<CLI::Option*, std::string, std::string*, bool>> opts;  // option, key, storage, is_path
    std::vector<std::pair<CLI::Option*, std::string>> flags;
    std::vector<std::unique_ptr<std::string>> storage;

    void option(CLI::App* app, const std::string& name, const std::string& key, const std::string& help,
                bool is_path = false) {
        storage.push_back(std::make_unique<std::string>());
        opts.emplace_back(app->add_option(name, *storage.back(), help), key, storage.back().get(), is_path);
    }
    CLI::Option* flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
        flags.emplace_back(app->add_flag(name, help), key);
        return flags.back().first;
    }
};

struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    Bindings bind;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_file, "flat key = value config file");
    app->add_option("--set", c.overrides, "override a config key (key=value); repeatable");
}

Config effective_config(const Common& c) {
    Config cfg = c.config_file.empty() ? Config() : Config::load(c.config_file);
    if (!c.config_file.empty()) cfg.set_base_dir(fs::absolute(c.config_file).parent_path());
    for (const auto& [opt, key, value, is_path] : c.bind.opts)
        if (opt->count()) cfg.set(key, is_path ? fs::absolute(*value).string() : *value);
    for (const auto& [opt, key] : c.bind.flags)
        if (opt->count()) cfg.set(key, "true");
    for (const auto& o : c.overrides) cfg.set_override(o);
    return cfg;
}

// Echoes the effective configuration before any work happens.
void echo_config(const Config& cfg, const fs::path& out_dir, const std::string& subcommand) {
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "config.txt");
    out << "# nafssr " << subcommand << " effective configuration\n" << cfg.dump();
    if (!out) throw DataError((out_dir / "config.txt").string() + ": cannot write");
}

fs::path require_path(const Config& cfg, const std::string& key) {
    if (!cfg.has(key)) throw ConfigError("missing required setting '" + key + "'");
    return cfg.get_path(key, {});
}

std::string format_millions(std::size_t n) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu (%.2fM)", n, n / 1e6);
    return buf;
}

PoolingPolicy pooling_from(const Config& cfg, const TrainState& st) {
    const bool auto_window = cfg.get_bool("tlsc.auto", false);
    const std::string window = cfg.get("tlsc.window", "");
    if (auto_window && !window.empty()) throw ConfigError("use either --tlsc-window or --tlsc-auto, not both");
    if (auto_window) {
        if (st.patch_h <= 0 || st.patch_w <= 0) throw ConfigError("checkpoint does not record a training patch");
        return PoolingPolicy::local(tlsc_window_from_patch(st.patch_h, st.patch_w));
    }
    if (!window.empty()) {
        const auto [h, w] = parse_size(window);
        return PoolingPolicy::local({h, w});
    }
    return PoolingPolicy::global();
}

int cmd_synth(const Config& cfg) {
    const fs::path out = require_path(cfg, "out");
    if (fs::exists(out) && !fs::is_empty(out) && !cfg.get_bool("force", false))
        throw ConfigError(out.string() + ": output directory is not empty (use --force)");
    SynthConfig sc;
    sc.seed = cfg.get_u64("seed", 0);
    sc.count = cfg.get_int("synth.count", sc.count);
    const auto [h, w] = parse_size(cfg.get("synth.size", "64x192"));
    sc.hr_h = h;
    sc.hr_w = w;
    sc.scale = cfg.get_int("synth.scale", sc.scale);
    sc.max_disparity = cfg.get_int("synth.max_disparity", sc.max_disparity);
    sc.layers = cfg.get_int("synth.layers", sc.layers);
    sc.max_frequency = cfg.get_double("synth.max_frequency", sc.max_frequency);
    sc.blur_sigma = cfg.get_double("synth.blur_sigma", sc.blur_sigma);
    if (sc.blur_sigma < 0) throw ConfigError("synth.blur_sigma must be non-negative");
    if (sc.count < 1) throw ConfigError("synth.count must be positive");
    if (sc.scale != 2 && sc.scale != 4) throw ConfigError("synth.scale must be 2 or 4");
    if (h % sc.scale || w % sc.scale) throw ConfigError("synth.size must be divisible by the scale");
    if (sc.max_disparity < 0 || 4 * sc.max_disparity >= w) throw ConfigError("synth.max_disparity must be below width/4");
    echo_config(cfg, out, "synth");
    const Manifest m = synth_stereo(sc, out);
    std::cout << "wrote " << m.records.size() << " samples (" << 4 * m.records.size() << " PNGs) to " << out.string()
              << "\n";
    return kOk;
}

int cmd_train(const Config& cfg) {
    const fs::path out = require_path(cfg, "out");
    const fs::path manifest_path = require_path(cfg, "data.manifest");

    TrainConfig tc;
    ModelConfig mc;
    const std::string variant = cfg.get("model.variant", "T");
    if (variant.size() != 1) throw ConfigError("model.variant must be one of T, S, B, L");
    try {
        mc = ModelConfig::variant(variant[0], cfg.get_int("model.scale", 4));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    mc.width = cfg.get_int("model.width", mc.width);
    mc.blocks = cfg.get_int("model.blocks", mc.blocks);
    mc.scam_count = cfg.get_int("model.scam_count", std::min(mc.scam_count, mc.blocks));
    tc.drop_prob = cfg.get_double("train.drop_prob", mc.drop_prob);
    tc.iters = cfg.get_int("train.iters", tc.iters);
    tc.batch = cfg.get_int("train.batch", tc.batch);
    tc.lr_init = cfg.get_double("train.lr_init", tc.lr_init);
    tc.lr_final = cfg.get_double("train.lr_final", tc.lr_final);
    tc.beta1 = cfg.get_double("train.beta1", tc.beta1);
    tc.beta2 = cfg.get_double("train.beta2", tc.beta2);
    tc.weight_decay = cfg.get_double("train.weight_decay", tc.weight_decay);
    tc.seed = cfg.get_u64("seed", 0);
    const auto [ph, pw] = parse_size(cfg.get("train.patch", "30x90"));
    tc.patch_h = ph;
    tc.patch_w = pw;
    tc.stride = cfg.get_int("train.stride", tc.stride);
    tc.checkpoint_every = cfg.get_int("train.checkpoint_every", tc.checkpoint_every);
    tc.augment.hflip = cfg.get_bool("augment.hflip", true);
    tc.augment.vflip = cfg.get_bool("augment.vflip", true);
    tc.augment.channel_shuffle = cfg.get_bool("augment.channel_shuffle", true);
    mc.drop_prob = tc.drop_prob;
    try {
        tc.validate();
        mc.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    echo_config(cfg, out, "train");
    const Manifest manifest = Manifest::read(manifest_path);
    for (const auto& r : manifest.records)
        if (r.scale != mc.scale)
            throw ConfigError(r.id + ": dataset scale x" + std::to_string(r.scale) + " does not match model scale x" +
                              std::to_string(mc.scale));
    auto pool = build_patch_pool(manifest, tc.patch_h, tc.patch_w, tc.stride);

    std::optional<Trainer> trainer;
    if (cfg.has("train.resume")) {
        TrainState st = load_checkpoint(cfg.get_path("train.resume", {}));
        mc = st.model;
        trainer.emplace(tc, std::move(st), std::move(pool));
        std::cout << "resuming at iteration " << trainer->iteration() << "\n";
    } else {
        trainer.emplace(tc, mc, std::move(pool));
    }
    std::cout << "model C=" << mc.width << " N=" << mc.blocks << " SCAMs=" << mc.scam_count << " x" << mc.scale
              << " drop_prob=" << tc.drop_prob << "\n";
    std::cout << "parameters: " << format_millions(count_params(trainer->params())) << "\n";

    std::ofstream log(out / "train_log.txt", std::ios::app);
    if (!log) throw DataError((out / "train_log.txt").string() + ": cannot open");
    const int every = std::max(1, cfg.get_int("log.every", 100));
    trainer->run(&log, out, [&](std::int64_t t, double loss) {
        if ((t + 1) % every == 0 || t + 1 == tc.iters)
            std::printf("iter %lld  lr %.3e  loss %.6f\n", static_cast<long long>(t + 1),
                        cosine_lr(static_cast<int>(t), tc), loss);
    });
    if (trainer->rejected_steps()) std::cout << "rejected steps: " << trainer->rejected_steps() << "\n";
    std::cout << "final checkpoint: " << (out / "final.bin").string() << "\n";
    return kOk;
}

std::vector<TrainState> load_members(const Config& cfg) {
    std::vector<TrainState> members;
    members.push_back(load_checkpoint(require_path(cfg, "checkpoint")));
    std::istringstream extra(cfg.get("infer.average_with", ""));
    std::string path;
    while (std::getline(extra, path, ',')) {
        if (path.empty()) continue;
        fs::path p = path;
        if (p.is_relative() && !cfg.base_dir().empty()) p = cfg.base_dir() / p;
        members.push_back(load_checkpoint(p));
    }
    for (const auto& m : members)
        if (m.model.scale != members[0].model.scale)
            throw ConfigError("ensemble members disagree on scale");
    if (cfg.has("model.scale") && cfg.get_int("model.scale", 0) != members[0].model.scale)
        throw ConfigError("requested scale x" + cfg.get("model.scale", "") + " but the checkpoint is x" +
                          std::to_string(members[0].model.scale));
    return members;
}

StereoPair<float> predict(const std::vector<TrainState>& members, const Image& l, const Image& r,
                          const PoolingPolicy& pool, bool self_ensemble) {
    if (!self_ensemble) {
        std::vector<EnsembleMember> em;
        for (const auto& m : members) em.push_back({m.model, &m.params});
        return average_outputs(em, l, r, pool);
    }
    std::vector<Image> outs_l, outs_r;
    for (const auto& m : members) {
        auto [a, b] = self_ensemble_infer(m.model, m.params, l, r, pool);
        outs_l.push_back(a);
        outs_r.push_back(b);
    }
    if (members.size() == 1) return {outs_l[0], outs_r[0]};
    NoGradGuard guard;
    Image sl = outs_l[0], sr = outs_r[0];
    for (std::size_t i = 1; i < members.size(); ++i) {
        sl = add(sl, outs_l[i]);
        sr = add(sr, outs_r[i]);
    }
    const float inv = 1.0f / static_cast<float>(members.size());
    return {scale(sl, inv), scale(sr, inv)};
}

int cmd_infer(const Config& cfg) {
    const fs::path out = require_path(cfg, "out");
    const auto members = load_members(cfg);
    const PoolingPolicy pool = pooling_from(cfg, members[0]);
    const bool ens = cfg.get_bool("infer.self_ensemble", false);
    const Image l = load_png(require_path(cfg, "infer.left"));
    const Image r = load_png(require_path(cfg, "infer.right"));
    echo_config(cfg, out, "infer");
    const auto [sl, sr] = predict(members, l, r, pool, ens);
    save_png(out / "sr_left.png", sl);
    save_png(out / "sr_right.png", sr);
    std::cout << "pooling " << pool.str() << (ens ? ", self-ensemble of 24 transforms" : "") << ", " << members.size()
              << " checkpoint(s); wrote " << (out / "sr_left.png").string() << " and sr_right.png\n";
    return kOk;
}

int cmd_eval(const Config& cfg) {
    const fs::path out = require_path(cfg, "out");
    const Manifest manifest = Manifest::read(require_path(cfg, "data.manifest"));
    EvalProtocol protocol;
    const std::string prot = cfg.get("eval.protocol", "left_crop64,pair_average");
    protocol.left_crop64 = prot.find("left_crop64") != std::string::npos;
    protocol.pair_average = prot.find("pair_average") != std::string::npos;
    if (!protocol.left_crop64 && !protocol.pair_average) throw ConfigError("eval.protocol selects no mode: " + prot);
    const std::string pair_mode = cfg.get("eval.pair_mode", "mean_of_views");
    if (pair_mode == "averaged_image")
        protocol.pair_mode = PairMode::averaged_image;
    else if (pair_mode != "mean_of_views")
        throw ConfigError("eval.pair_mode must be mean_of_views or averaged_image");

    MetricReport report;
    std::string label = cfg.get("eval.label", "");
    if (cfg.get_bool("eval.ground_truth", false)) {
        echo_config(cfg, out, "eval");
        report = evaluate_with(
            manifest, [](const StereoSample& s) { return StereoPair<float>{s.hr_l, s.hr_r}; }, protocol, "none");
        if (label.empty()) label = "ground_truth";
    } else {
        const auto members = load_members(cfg);
        const PoolingPolicy pool = pooling_from(cfg, members[0]);
        const bool ens = cfg.get_bool("infer.self_ensemble", false);
        for (const auto& r : manifest.records)
            if (r.scale != members[0].model.scale)
                throw ConfigError(r.id + ": dataset scale x" + std::to_string(r.scale) +
                                  " does not match checkpoint scale x" + std::to_string(members[0].model.scale));
        echo_config(cfg, out, "eval");
        report = evaluate_with(
            manifest, [&](const StereoSample& s) { return predict(members, s.lr_l, s.lr_r, pool, ens); }, protocol,
            pool.str());
        if (label.empty()) label = pool.mode == PoolingPolicy::Mode::global ? "global" : "tlsc";
        if (ens) label += "_ensemble";
    }
    report.label = label;
    std::ofstream table(out / ("report_" + label + ".txt")), jsonl(out / ("report_" + label + ".jsonl"));
    report.write_table(table);
    report.write_jsonl(jsonl);
    if (!table || !jsonl) throw DataError(out.string() + ": cannot write report");
    report.write_table(std::cout);
    return kOk;
}

int cmd_gradcheck(const Config& cfg) {
    GradCheckOptions opts;
    opts.precision = cfg.get_int("gradcheck.precision", 32);
    if (opts.precision != 32 && opts.precision != 64) throw ConfigError("gradcheck.precision must be 32 or 64");
    opts.configs = cfg.get_int("gradcheck.configs", opts.configs);
    opts.seed = cfg.get_u64("seed", 1);
    std::istringstream only(cfg.get("gradcheck.only", ""));
    std::string name;
    while (std::getline(only, name, ','))
        if (!name.empty()) opts.only.push_back(name);
    fault_injection::set_flip_simple_gate_adjoint(cfg.get_bool("gradcheck.inject_simple_gate_fault", false));
    const auto results = run_gradcheck_suite(opts);
    print_gradcheck(std::cout, results);
    bool ok = true;
    for (const auto& r : results) ok = ok && r.passed();
    std::cout << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
    return ok ? kOk : kNumericalError;
}

}  // namespace

int main(int argc, char** argv) {
    nafssr::retain_heap_memory();
    CLI::App app{"Stereo image super-resolution toolkit"};
    app.require_subcommand(1);

    Common synth_c, train_c, infer_c, eval_c, grad_c;

    auto* synth = app.add_subcommand("synth", "render a synthetic stereo dataset");
    add_common(synth, synth_c);
    synth_c.bind.option(synth, "--out", "out", "output directory", true);
    synth_c.bind.option(synth, "--seed", "seed", "random seed");
    synth_c.bind.option(synth, "--count", "synth.count", "number of stereo pairs");
    synth_c.bind.option(synth, "--size", "synth.size", "HR size HxW");
    synth_c.bind.option(synth, "--scale", "synth.scale", "downsampling factor (2 or 4)");
    synth_c.bind.option(synth, "--max-disparity", "synth.max_disparity", "largest layer disparity in HR pixels");
    synth_c.bind.option(synth, "--layers", "synth.layers", "depth layers per scene");
    synth_c.bind.flag(synth, "--force", "force", "write into a non-empty directory");

    auto* train = app.add_subcommand("train", "train a model on a manifest");
    add_common(train, train_c);
    train_c.bind.option(train, "--manifest", "data.manifest", "training manifest", true);
    train_c.bind.option(train, "--out", "out", "run directory", true);
    train_c.bind.option(train, "--variant", "model.variant", "T, S, B or L");
    train_c.bind.option(train, "--scale", "model.scale", "upscale factor (2 or 4)");
    train_c.bind.option(train, "--width", "model.width", "override channel width");
    train_c.bind.option(train, "--blocks", "model.blocks", "override block count");
    train_c.bind.option(train, "--scam-count", "model.scam_count", "number of SCAMs");
    train_c.bind.option(train, "--drop-prob", "train.drop_prob", "stochastic depth probability");
    train_c.bind.option(train, "--iters", "train.iters", "iterations");
    train_c.bind.option(train, "--batch", "train.batch", "batch size");
    train_c.bind.option(train, "--lr", "train.lr_init", "initial learning rate");
    train_c.bind.option(train, "--patch", "train.patch", "LR training patch HxW");
    train_c.bind.option(train, "--stride", "train.stride", "patch extraction stride");
    train_c.bind.option(train, "--seed", "seed", "random seed");
    train_c.bind.option(train, "--checkpoint-every", "train.checkpoint_every", "checkpoint cadence");
    train_c.bind.option(train, "--resume", "train.resume", "checkpoint to resume from", true);
    train_c.bind.option(train, "--log-every", "log.every", "console log cadence");
    train_c.bind.flag(train, "--no-augment", "augment.off", "disable flips and channel shuffle");

    auto* infer = app.add_subcommand("infer", "super-resolve one stereo pair");
    add_common(infer, infer_c);
    infer_c.bind.option(infer, "--checkpoint", "checkpoint", "model checkpoint", true);
    infer_c.bind.option(infer, "--left", "infer.left", "LR left PNG", true);
    infer_c.bind.option(infer, "--right", "infer.right", "LR right PNG", true);
    infer_c.bind.option(infer, "--out", "out", "output directory", true);
    infer_c.bind.option(infer, "--scale", "model.scale", "expected scale");
    infer_c.bind.option(infer, "--tlsc-window", "tlsc.window", "local pooling window HxW");
    infer_c.bind.flag(infer, "--tlsc-auto", "tlsc.auto", "window = 1.5x the recorded training patch");
    infer_c.bind.flag(infer, "--self-ensemble", "infer.self_ensemble", "average over 24 flips/permutations");
    std::vector<std::string> infer_avg, eval_avg;
    infer->add_option("--average-with", infer_avg, "more checkpoints to average with");

    auto* eval = app.add_subcommand("eval", "score a checkpoint on a manifest");
    add_common(eval, eval_c);
    eval_c.bind.option(eval, "--checkpoint", "checkpoint", "model checkpoint", true);
    eval_c.bind.option(eval, "--manifest", "data.manifest", "evaluation manifest", true);
    eval_c.bind.option(eval, "--out", "out", "report directory", true);
    eval_c.bind.option(eval, "--label", "eval.label", "report label");
    eval_c.bind.option(eval, "--protocol", "eval.protocol", "left_crop64,pair_average");
    eval_c.bind.option(eval, "--pair-mode", "eval.pair_mode", "mean_of_views or averaged_image");
    eval_c.bind.option(eval, "--scale", "model.scale", "expected scale");
    eval_c.bind.option(eval, "--tlsc-window", "tlsc.window", "local pooling window HxW");
    eval_c.bind.flag(eval, "--tlsc-auto", "tlsc.auto", "window = 1.5x the recorded training patch");
    eval_c.bind.flag(eval, "--self-ensemble", "infer.self_ensemble", "average over 24 flips/permutations");
    eval_c.bind.flag(eval, "--ground-truth", "eval.ground_truth", "score the HR images against themselves");
    eval->add_option("--average-with", eval_avg, "more checkpoints to average with");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    add_common(grad, grad_c);
    grad_c.bind.option(grad, "--precision", "gradcheck.precision", "32 or 64");
    grad_c.bind.option(grad, "--configs", "gradcheck.configs", "random configurations per layer");
    grad_c.bind.option(grad, "--only", "gradcheck.only", "comma-separated layer names");
    grad_c.bind.option(grad, "--seed", "seed", "random seed");
    grad_c.bind.flag(grad, "--inject-simple-gate-fault", "gradcheck.inject_simple_gate_fault", "")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        auto join = [](const std::vector<std::string>& v) {
            std::string s;
            for (const auto& p : v) s += (s.empty() ? "" : ",") + fs::absolute(p).string();
            return s;
        };
        if (synth->parsed()) return cmd_synth(effective_config(synth_c));
        if (train->parsed()) {
            Config cfg = effective_config(train_c);
            if (cfg.get_bool("augment.off", false)) {
                for (const char* k : {"augment.hflip", "augment.vflip", "augment.channel_shuffle"}) cfg.set(k, "false");
            }
            return cmd_train(cfg);
        }
        if (infer->parsed()) {
            Config cfg = effective_config(infer_c);
            if (!infer_avg.empty()) cfg.set("infer.average_with", join(infer_avg));
            return cmd_infer(cfg);
        }
        if (eval->parsed()) {
            Config cfg = effective_config(eval_c);
            if (!eval_avg.empty()) cfg.set("infer.average_with", join(eval_avg));
            return cmd_eval(cfg);
        }
        if (grad->parsed()) return cmd_gradcheck(effective_config(grad_c));
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumericalError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kOk;
}
