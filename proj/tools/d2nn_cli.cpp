// Command-line front end: train, eval, sweep, gradcheck, compare-propagators, export-masks.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "d2nn/commands.hpp"

namespace {

using namespace d2nn;

struct Overrides {
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::optional<std::string> out;
    std::optional<std::size_t> layers;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> delta_z;
    std::optional<double> lr;
    std::optional<std::string> loss;
    std::optional<std::string> modulation;
    std::optional<std::string> parameterization;
    std::optional<std::string> mode;
    std::optional<std::string> electronic;
    std::optional<std::size_t> sensor_p;
    std::optional<std::size_t> grid_n;
};

RunConfig resolve(const std::string& path, const Overrides& o) {
    nlohmann::json j = path.empty() ? nlohmann::json::object() : RunConfig::load(path).to_json();
    if (o.seed) j["seed"] = *o.seed;
    if (o.deterministic) j["deterministic"] = true;
    if (o.out) j["output_dir"] = *o.out;
    if (o.layers) j["layers"] = *o.layers;
    if (o.epochs) j["epochs"] = *o.epochs;
    if (o.batch_size) j["batch_size"] = *o.batch_size;
    if (o.delta_z) j["delta_z"] = *o.delta_z;
    if (o.lr) j["lr"] = *o.lr;
    if (o.loss) j["loss"] = *o.loss;
    if (o.modulation) j["modulation"] = *o.modulation;
    if (o.parameterization) j["parameterization"] = *o.parameterization;
    if (o.mode) j["mode"] = *o.mode;
    if (o.electronic) j["electronic"] = *o.electronic;
    if (o.grid_n) j["grid"]["n"] = *o.grid_n;
    if (o.sensor_p) j["sensor"] = {{"p", *o.sensor_p}, {"region", 0}};
    return RunConfig::from_json(j);
}

template <typename T>
std::vector<T> parse_list(const std::vector<std::string>& items, T (*parse)(const std::string&)) {
    std::vector<T> out;
    for (const auto& s : items) out.push_back(parse(s));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffractive network simulator and trainer"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    Overrides o;
    app.add_option("--config", config_path, "Run configuration (JSON)");
    app.add_option("--seed", o.seed, "Override the seed");
    app.add_flag("--deterministic", o.deterministic, "Force deterministic execution");
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--layers", o.layers);
    app.add_option("--epochs", o.epochs);
    app.add_option("--batch-size", o.batch_size);
    app.add_option("--delta-z", o.delta_z, "Layer spacing in wavelengths");
    app.add_option("--lr", o.lr);
    app.add_option("--loss", o.loss, "mse | sce");
    app.add_option("--modulation", o.modulation, "phase_only | complex");
    app.add_option("--parameterization", o.parameterization, "sigmoid | relu_norm");
    app.add_option("--mode", o.mode, "all-optical | stage1 | stage2 | direct | perfect-imager");
    app.add_option("--electronic", o.electronic, "fc | conv2f1");
    app.add_option("--sensor-p", o.sensor_p, "Sensor pixels per axis");
    app.add_option("--grid-n", o.grid_n, "Samples per side");

    auto* train_cmd = app.add_subcommand("train", "Train a system and write checkpoint + training curve");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write eval_report.csv");
    std::string ckpt_path, split = "test";
    eval_cmd->add_option("checkpoint", ckpt_path)->required();
    eval_cmd->add_option("--split", split, "test | validation");

    auto* sweep_cmd = app.add_subcommand("sweep", "Depth x loss (x spacing x modulation) sweep");
    std::vector<std::size_t> sweep_layers{1, 3, 5};
    std::vector<std::string> sweep_losses{"mse", "sce"}, sweep_mods;
    std::vector<double> sweep_dz;
    sweep_cmd->add_option("--sweep-layers", sweep_layers);
    sweep_cmd->add_option("--sweep-losses", sweep_losses);
    sweep_cmd->add_option("--sweep-delta-z", sweep_dz);
    sweep_cmd->add_option("--sweep-modulations", sweep_mods);

    auto* grad_cmd = app.add_subcommand("gradcheck", "Adjoint versus central finite differences");
    std::size_t probes = 20, batch = 4;
    double h = 1e-5;
    grad_cmd->add_option("--probes", probes);
    grad_cmd->add_option("--step", h, "Finite-difference step");
    grad_cmd->add_option("--batch", batch);

    auto* cmp_cmd = app.add_subcommand("compare-propagators", "ASM versus direct Rayleigh-Sommerfeld sum");
    std::size_t cmp_n = 16;
    int cmp_pad = 16;
    std::vector<double> cmp_z{4.0, 40.0};
    cmp_cmd->add_option("--n", cmp_n);
    cmp_cmd->add_option("--z", cmp_z);
    cmp_cmd->add_option("--padding", cmp_pad);

    auto* export_cmd = app.add_subcommand("export-masks", "Write per-layer PGM masks and a JSON sidecar");
    std::string export_ckpt;
    export_cmd->add_option("checkpoint", export_ckpt)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (cmp_cmd->parsed()) {
            std::cout << cmd_compare_propagators(cmp_n, cmp_z, cmp_pad, o.seed.value_or(0));
            return 0;
        }
        if (export_cmd->parsed()) {
            for (const auto& f : cmd_export_masks(export_ckpt, o.out.value_or("masks"))) std::cout << f << '\n';
            return 0;
        }
        const RunConfig config = resolve(config_path, o);
        if (train_cmd->parsed()) {
            const auto r = cmd_train(config, [](const EpochRecord& e) {
                std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " val_acc " << e.validation_accuracy
                          << '\n';
            });
            std::cout << "best_epoch " << r.result.best_epoch << " validation_accuracy "
                      << r.result.best_validation_accuracy << '\n'
                      << r.checkpoint_path << '\n'
                      << r.curve_path << '\n';
        } else if (eval_cmd->parsed()) {
            if (split != "test" && split != "validation") throw ValidationError("--split: test | validation");
            const auto r = cmd_eval(config, ckpt_path, split == "test" ? EvalSplit::test : EvalSplit::validation);
            std::cout << "accuracy " << r.accuracy << '\n';
            if (r.mean_efficiency) std::cout << "efficiency " << *r.mean_efficiency << '\n';
            if (r.mean_contrast) std::cout << "contrast " << *r.mean_contrast << '\n';
        } else if (sweep_cmd->parsed()) {
            SweepAxes axes;
            axes.layers = sweep_layers;
            axes.losses = parse_list(sweep_losses, loss_from_string);
            axes.delta_z = sweep_dz;
            axes.modulations = parse_list(sweep_mods, modulation_from_string);
            std::cout << cmd_sweep(config, axes);
        } else if (grad_cmd->parsed()) {
            const auto r = cmd_gradcheck(config, probes, h, batch);
            std::cout << "max_relative_error " << r.max_relative_error << " probes " << r.probes << '\n';
        }
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
}
