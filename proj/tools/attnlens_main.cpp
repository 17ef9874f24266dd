#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnlens/attribution.hpp"
#include "attnlens/evaluation.hpp"
#include "attnlens/io.hpp"
#include "attnlens/model.hpp"
#include "attnlens/selftest.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace attnlens;

namespace {

struct MethodFlags {
    std::string method = "attn-ln";
    bool method_given = false;
    int start_stage = -1;
    bool start_stage_given = false;
    bool no_gradients = false;
    bool no_std = false;
    bool no_normalize = false;
    std::string target_class = "predicted";
    std::string upsample = "bilinear";
};

AttributionOptions options_from_flags(const MethodFlags& flags) {
    AttributionOptions opts;
    if (flags.method == "attn") {
        opts.use_std_scaling = false;
        opts.use_sum_normalize = false;
    } else if (flags.method == "attn-ln") {
        opts.use_std_scaling = true;
        opts.use_sum_normalize = true;
    } else {
        throw ConfigError("unknown method: " + flags.method);
    }
    opts.use_gradients = !flags.no_gradients;
    if (flags.no_std) opts.use_std_scaling = false;
    if (flags.no_normalize) opts.use_sum_normalize = false;
    opts.start_stage = flags.start_stage;
    if (flags.target_class == "predicted") {
        opts.target = TargetMode::predicted;
    } else {
        opts.target = TargetMode::specified;
        try {
            opts.target_class = std::stoi(flags.target_class);
        } catch (const std::exception&) {
            throw ConfigError("--target-class must be an integer or 'predicted'");
        }
    }
    return opts;
}

UpsampleMethod upsample_from_flags(const MethodFlags& flags) {
    if (flags.upsample == "nearest") return UpsampleMethod::nearest;
    if (flags.upsample == "bilinear") return UpsampleMethod::bilinear;
    throw ConfigError("unknown upsample method: " + flags.upsample);
}

json method_json(const AttributionOptions& opts) {
    json j;
    j["use_gradients"] = opts.use_gradients;
    j["use_std_scaling"] = opts.use_std_scaling;
    j["use_sum_normalize"] = opts.use_sum_normalize;
    j["start_stage"] = opts.start_stage;
    return j;
}

struct EvalVariant {
    std::string name;
    bool rollout = false;
    AttributionOptions opts;
};

std::vector<EvalVariant> eval_variants(const ModelConfig& cfg, const MethodFlags& flags) {
    std::vector<EvalVariant> variants;
    if (flags.method_given || flags.no_gradients || flags.no_std || flags.no_normalize ||
        flags.start_stage_given) {
        variants.push_back({flags.method, false, options_from_flags(flags)});
        return variants;
    }
    if (cfg.variant == Variant::vit) {
        variants.push_back({"rollout", true, {}});
    }
    {
        MethodFlags f = flags;
        f.method = "attn";
        variants.push_back({"attn", false, options_from_flags(f)});
    }
    {
        MethodFlags f = flags;
        f.method = "attn-ln";
        variants.push_back({"attn-ln", false, options_from_flags(f)});
    }
    if (cfg.stages() >= 3) {
        MethodFlags f = flags;
        f.method = "attn-ln";
        AttributionOptions opts = options_from_flags(f);
        opts.start_stage = 1;
        variants.push_back({"attn-ln-layer1", false, opts});
    }
    return variants;
}

std::string pct(Scalar value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", static_cast<double>(value * 100.0));
    return buf;
}

int cmd_attribute(const std::string& config_path, const std::string& weights_path,
                  const std::string& image_path, const std::string& out_dir,
                  const MethodFlags& flags) {
    const ModelConfig cfg = load_config(config_path);
    Model model(cfg, load_weights(weights_path));
    const Tensor image = load_image(image_path);
    const AttributionOptions opts = options_from_flags(flags);
    const UpsampleMethod method = upsample_from_flags(flags);
    const AttributionResult result = attribute(model, image, opts, method);

    fs::create_directories(out_dir);
    save_pgm((fs::path(out_dir) / "heatmap.pgm").string(), result.heatmap.pixels);
    save_csv((fs::path(out_dir) / "heatmap.csv").string(), result.heatmap.pixels);
    save_csv((fs::path(out_dir) / "grid.csv").string(), result.heatmap.grid);

    json summary;
    summary["predicted_class"] = result.predicted;
    summary["target_class"] = result.target_class;
    summary["degenerate"] = result.heatmap.degenerate;
    summary["variant"] = cfg.variant == Variant::vit ? "vit" : "swin";
    summary["start_stage"] = resolve_start_stage(cfg, opts.start_stage);
    summary["method"] = method_json(opts);
    summary["upsample"] = flags.upsample;
    write_file((fs::path(out_dir) / "result.json").string(), summary.dump(2) + "\n");

    std::cout << "wrote " << out_dir << " (predicted class " << result.predicted << ")\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& weights_path,
             const std::string& dataset_dir, const std::string& mode, const std::string& out_dir,
             const MethodFlags& flags, Scalar fill) {
    const ModelConfig cfg = load_config(config_path);
    Model model(cfg, load_weights(weights_path));
    const std::vector<LabeledSample> dataset = load_dataset(dataset_dir);
    const UpsampleMethod method = upsample_from_flags(flags);
    const std::vector<EvalVariant> variants = eval_variants(cfg, flags);

    fs::create_directories(out_dir);
    json summary;
    summary["mode"] = mode;
    summary["n_samples"] = dataset.size();
    json methods = json::object();
    std::string csv;

    if (mode == "perturbation") {
        csv = "method,top_neg,top_pos,target_neg,target_pos\n";
        for (const EvalVariant& variant : variants) {
            const AttributionFn fn = variant.rollout
                                         ? make_rollout_fn(model, method)
                                         : make_attribution_fn(model, variant.opts, method);
            json entry;
            json row = json::object();
            std::vector<std::string> cells = {variant.name};
            for (const auto& [key, target] :
                 std::vector<std::pair<std::string, EvalTarget>>{{"top", EvalTarget::top},
                                                                 {"target", EvalTarget::target}}) {
                for (const auto& [pkey, polarity] :
                     std::vector<std::pair<std::string, Polarity>>{{"neg", Polarity::negative},
                                                                   {"pos", Polarity::positive}}) {
                    const PerturbationResult curve =
                        perturbation_curve(model, dataset, fn, polarity, target, fill);
                    json c;
                    c["auc"] = curve.auc;
                    c["fractions"] = curve.fractions;
                    c["accuracy"] = curve.accuracy;
                    row[key + "_" + pkey] = c;
                }
            }
            // Column order mirrors the neg/pos pairing per target.
            cells.push_back(pct(row["top_neg"]["auc"].get<Scalar>()));
            cells.push_back(pct(row["top_pos"]["auc"].get<Scalar>()));
            cells.push_back(pct(row["target_neg"]["auc"].get<Scalar>()));
            cells.push_back(pct(row["target_pos"]["auc"].get<Scalar>()));
            for (size_t i = 0; i < cells.size(); ++i) {
                if (i) csv.push_back(',');
                csv += cells[i];
            }
            csv.push_back('\n');
            methods[variant.name] = row;
        }
    } else if (mode == "segmentation") {
        csv = "method,mIoU,mAP,pixel_acc,mF1\n";
        for (const EvalVariant& variant : variants) {
            const AttributionFn fn = variant.rollout
                                         ? make_rollout_fn(model, method)
                                         : make_attribution_fn(model, variant.opts, method);
            const SegMetrics metrics = evaluate_segmentation(model, dataset, fn);
            json row;
            row["miou"] = metrics.miou;
            row["map"] = metrics.map;
            row["pixel_acc"] = metrics.pixel_acc;
            row["mf1"] = metrics.mf1;
            methods[variant.name] = row;
            csv += variant.name + "," + pct(metrics.miou) + "," + pct(metrics.map) + "," +
                   pct(metrics.pixel_acc) + "," + pct(metrics.mf1) + "\n";
        }
    } else {
        throw ConfigError("unknown eval mode: " + mode);
    }

    summary["methods"] = methods;
    const std::string stem = mode;
    write_file((fs::path(out_dir) / (stem + ".csv")).string(), csv);
    write_file((fs::path(out_dir) / (stem + ".json")).string(), summary.dump(2) + "\n");
    std::cout << "wrote " << out_dir << " (" << variants.size() << " methods, " << dataset.size()
              << " samples)\n";
    return 0;
}

int cmd_make_toy(const std::string& variant, const std::string& out_dir, unsigned long long seed,
                 int n_samples, Scalar noise) {
    ModelConfig cfg;
    if (variant == "vit") {
        cfg = ModelConfig::vit_toy();
    } else if (variant == "swin") {
        cfg = ModelConfig::swin_toy();
    } else {
        throw ConfigError("unknown variant: " + variant);
    }
    fs::create_directories(out_dir);
    save_config((fs::path(out_dir) / "config.json").string(), cfg);
    save_weights((fs::path(out_dir) / "weights.bin").string(), random_weights(cfg, seed));
    const std::vector<LabeledSample> dataset =
        make_synthetic_dataset(seed + 1, n_samples, cfg.image_size, noise);
    save_dataset((fs::path(out_dir) / "dataset").string(), dataset, seed + 1, noise);
    std::cout << "wrote " << out_dir << " (config.json, weights.bin, dataset/" << ")\n";
    return 0;
}

int cmd_selftest(unsigned long long seed) {
    const std::vector<CheckResult> results = run_selftest(seed);
    int failures = 0;
    for (const CheckResult& r : results) {
        std::cout << (r.passed ? "ok   " : "FAIL ") << r.name;
        if (!r.detail.empty()) std::cout << " — " << r.detail;
        std::cout << "\n";
        failures += r.passed ? 0 : 1;
    }
    std::cout << (failures == 0 ? "selftest passed" : "selftest FAILED") << " ("
              << results.size() - failures << "/" << results.size() << ")\n";
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention attribution for toy ViT/Swin transformers"};
    app.require_subcommand(1);

    MethodFlags flags;
    std::string config_path, weights_path, image_path, dataset_dir, out_dir = "out";
    std::string mode = "perturbation", variant = "vit";
    unsigned long long seed = 7;
    int n_samples = 24;
    double noise = 0.1;
    double fill = 0.0;

    auto add_method_flags = [&](CLI::App* cmd) {
        cmd->add_option("--method", flags.method, "attn|attn-ln")
            ->check(CLI::IsMember({"attn", "attn-ln"}))
            ->each([&](const std::string&) { flags.method_given = true; });
        cmd->add_option("--start-stage", flags.start_stage, "first stage entering the composition")
            ->each([&](const std::string&) { flags.start_stage_given = true; });
        cmd->add_flag("--no-gradients", flags.no_gradients, "unit gradients (rollout-style)");
        cmd->add_flag("--no-std", flags.no_std, "disable per-token std scaling");
        cmd->add_flag("--no-normalize", flags.no_normalize, "disable sum normalization");
        cmd->add_option("--target-class", flags.target_class, "class index or 'predicted'");
        cmd->add_option("--upsample", flags.upsample, "nearest|bilinear")
            ->check(CLI::IsMember({"nearest", "bilinear"}));
    };

    CLI::App* attribute_cmd = app.add_subcommand("attribute", "heatmap for one image");
    attribute_cmd->add_option("--config", config_path, "model config JSON")->required();
    attribute_cmd->add_option("--weights", weights_path, "weight container")->required();
    attribute_cmd->add_option("--image", image_path, "PGM/PPM input image")->required();
    attribute_cmd->add_option("--out", out_dir, "output directory");
    add_method_flags(attribute_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "perturbation / segmentation protocol");
    eval_cmd->add_option("--config", config_path, "model config JSON")->required();
    eval_cmd->add_option("--weights", weights_path, "weight container")->required();
    eval_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
    eval_cmd->add_option("--mode", mode, "perturbation|segmentation")
        ->check(CLI::IsMember({"perturbation", "segmentation"}));
    eval_cmd->add_option("--out", out_dir, "output directory");
    eval_cmd->add_option("--fill", fill, "value written into removed pixels");
    add_method_flags(eval_cmd);

    CLI::App* make_toy_cmd = app.add_subcommand("make-toy", "toy model + synthetic dataset");
    make_toy_cmd->add_option("--variant", variant, "vit|swin")
        ->check(CLI::IsMember({"vit", "swin"}));
    make_toy_cmd->add_option("--out", out_dir, "output directory");
    make_toy_cmd->add_option("--seed", seed, "RNG seed");
    make_toy_cmd->add_option("--n-samples", n_samples, "dataset size");
    make_toy_cmd->add_option("--noise", noise, "background noise level");

    CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the invariant suite");
    selftest_cmd->add_option("--seed", seed, "RNG seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (attribute_cmd->parsed()) {
            return cmd_attribute(config_path, weights_path, image_path, out_dir, flags);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(config_path, weights_path, dataset_dir, mode, out_dir, flags,
                            static_cast<Scalar>(fill));
        }
        if (make_toy_cmd->parsed()) {
            return cmd_make_toy(variant, out_dir, seed, n_samples, static_cast<Scalar>(noise));
        }
        if (selftest_cmd->parsed()) {
            return cmd_selftest(seed);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
