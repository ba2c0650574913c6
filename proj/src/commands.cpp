#include "d2nn/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace d2nn {
namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    os << text;
}

nlohmann::json base_metadata(const RunConfig& config) {
    return {{"config", config.to_json()}, {"config_hash", config.hash()}, {"detectors", config.layout().to_json()}};
}

std::string format_double(double v) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

DataSplits load_data(const RunConfig& config) {
    const auto& d = config.dataset;
    if (d.train_images.empty() || d.train_labels.empty() || d.test_images.empty() || d.test_labels.empty())
        throw ValidationError("dataset: train_images, train_labels, test_images and test_labels are required");
    DataSplits out;
    out.pool = load_idx(d.train_images, d.train_labels);
    out.test_set = load_idx(d.test_images, d.test_labels);
    const Split s = split(out.pool, out.test_set, config.seed, d.validation_size);
    out.train = {&out.pool, d.train_subset ? stratified_subset(out.pool, s.train, d.train_subset, config.seed + 1) : s.train};
    out.validation = {&out.pool, d.validation_subset
                                     ? stratified_subset(out.pool, s.validation, d.validation_subset, config.seed + 2)
                                     : s.validation};
    out.test = {&out.test_set,
                d.test_subset ? stratified_subset(out.test_set, s.test, d.test_subset, config.seed + 3) : s.test};
    return out;
}

void randomize_latents(D2NNModel& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0), amp(0.2, 1.5);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& l : model.layers) {
        const bool relu = l.parameterization == Parameterization::relu_norm;
        for (double& b : l.beta) b = relu ? unit(rng) : normal(rng);
        for (double& a : l.alpha) a = relu ? amp(rng) : normal(rng);
    }
}

std::unique_ptr<TrainableSystem> system_from_checkpoint(const Checkpoint& ckpt, const RunConfig& config) {
    if (ckpt.model.grid != config.grid())
        throw ValidationError("checkpoint grid " + std::to_string(ckpt.model.grid.n_x) + "x" +
                              std::to_string(ckpt.model.grid.n_y) + " conflicts with the configured grid");
    const DetectorLayout layout = config.layout();
    if (ckpt.metadata.contains("detectors") && ckpt.metadata.at("detectors") != layout.to_json())
        throw ValidationError("checkpoint detector layout conflicts with the configured layout");
    if (ckpt.metadata.contains("hybrid")) return std::make_unique<HybridSystem>(HybridSystem::from_checkpoint(ckpt));
    if (ckpt.metadata.value("virtual_layers", std::size_t{0}) > 0) {
        auto sys = std::make_unique<Stage1System>(
            stage1_front(ckpt), SensorSpec::from_json(ckpt.model.grid, ckpt.metadata.at("sensor")), layout);
        sys->virtual_model().layers.front() = ckpt.model.layers.back();
        return sys;
    }
    const LossKind loss = ckpt.metadata.contains("config")
                              ? loss_from_string(ckpt.metadata.at("config").at("loss").get<std::string>())
                              : config.loss;
    return std::make_unique<AllOpticalSystem>(ckpt.model, layout, loss);
}

TrainOutcome cmd_train(const RunConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    const DataSplits data = load_data(config);
    const fs::path out_dir(config.output_dir);
    fs::create_directories(out_dir);
    const auto encoder = config.encoder();
    const auto meta = base_metadata(config);
    TrainConfig tc = config.train_config();

    TrainOutcome o;
    auto finish = [&](Checkpoint ckpt) {
        ckpt.metadata["best_epoch"] = o.result.best_epoch;
        ckpt.metadata["validation_accuracy"] = o.result.best_validation_accuracy;
        o.checkpoint = std::move(ckpt);
        o.checkpoint_path = (out_dir / "checkpoint.bin").string();
        save_checkpoint(o.checkpoint, o.checkpoint_path);
        o.curve_csv = training_curve_csv(o.result, config.hash());
        o.curve_path = (out_dir / "training_curve.csv").string();
        write_text(o.curve_path, o.curve_csv);
    };

    switch (config.mode) {
        case SystemMode::all_optical: {
            AllOpticalSystem system(config.initial_model(), config.layout(), config.loss);
            o.result = train(system, encoder, data.train, data.validation, tc, on_epoch);
            Checkpoint c{system.model(), meta, {}, {}};
            finish(std::move(c));
            break;
        }
        case SystemMode::stage1: {
            Stage1System system(config.initial_model(), config.sensor_spec(), config.layout());
            o.result = train(system, encoder, data.train, data.validation, tc, on_epoch);
            finish(system.checkpoint(meta));
            break;
        }
        case SystemMode::stage2: {
            Checkpoint stage1;
            if (!config.stage1_checkpoint.empty()) {
                stage1 = load_checkpoint(config.stage1_checkpoint);
            } else {
                Stage1System s1(config.initial_model(), config.sensor_spec(), config.layout());
                TrainConfig tc1 = tc;
                tc1.epochs = config.stage1_epochs;
                const TrainResult r1 = train(s1, encoder, data.train, data.validation, tc1, on_epoch);
                stage1 = s1.checkpoint(meta);
                stage1.metadata["best_epoch"] = r1.best_epoch;
                stage1.metadata["validation_accuracy"] = r1.best_validation_accuracy;
                save_checkpoint(stage1, (out_dir / "stage1_checkpoint.bin").string());
                write_text(out_dir / "stage1_curve.csv", training_curve_csv(r1, config.hash()));
            }
            HybridSystem system(stage1_front(stage1), config.sensor_spec(),
                                ElectronicNet(*config.electronic, config.sensor->p, 10, config.seed));
            o.result = train(system, encoder, data.train, data.validation, tc, on_epoch);
            finish(system.checkpoint(meta));
            break;
        }
        case SystemMode::direct:
        case SystemMode::perfect_imager: {
            std::optional<D2NNModel> front;
            if (config.mode == SystemMode::direct) front = config.initial_model();
            HybridSystem system(std::move(front), config.sensor_spec(),
                                ElectronicNet(*config.electronic, config.sensor->p, 10, config.seed));
            o.result = train(system, encoder, data.train, data.validation, tc, on_epoch);
            finish(system.checkpoint(meta));
            break;
        }
    }
    return o;
}

EvalReport cmd_eval(const RunConfig& config, const std::string& checkpoint_path, EvalSplit which) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    auto system = system_from_checkpoint(ckpt, config);
    const DataSplits data = load_data(config);
    const EvalReport report =
        evaluate(*system, config.encoder(), which == EvalSplit::test ? data.test : data.validation, 10);
    const std::string hash = ckpt.metadata.value("config_hash", config.hash());
    write_text(fs::path(config.output_dir) / "eval_report.csv", eval_report_csv(report, hash));
    return report;
}

std::string cmd_sweep(const RunConfig& config, const SweepAxes& axes) {
    const std::vector<double> dzs = axes.delta_z.empty() ? std::vector<double>{config.delta_z} : axes.delta_z;
    const std::vector<ModulationMode> mods =
        axes.modulations.empty() ? std::vector<ModulationMode>{config.modulation} : axes.modulations;
    const DataSplits data = load_data(config);
    std::ostringstream os;
    os << "dataset,layers,loss,delta_z,modulation,accuracy,efficiency,contrast\n";
    const std::string dataset = fs::path(config.dataset.train_images).filename().string();
    for (ModulationMode mod : mods)
        for (double dz : dzs)
            for (std::size_t layers : axes.layers)
                for (LossKind loss : axes.losses) {
                    RunConfig c = config;
                    c.mode = SystemMode::all_optical;
                    c.layers = layers;
                    c.loss = loss;
                    c.delta_z = dz;
                    c.modulation = mod;
                    c.validate();
                    AllOpticalSystem system(c.initial_model(), c.layout(), c.loss);
                    train(system, c.encoder(), data.train, data.validation, c.train_config());
                    const EvalReport r = evaluate(system, c.encoder(), data.test, 10);
                    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
                    os << dataset << ',' << layers << ',' << to_string(loss) << ',' << format_double(dz) << ','
                       << to_string(mod) << ',' << format_double(r.accuracy) << ',' << opt(r.mean_efficiency) << ','
                       << opt(r.mean_contrast) << '\n';
                }
    os << "# config_hash=" << config.hash() << '\n';
    write_text(fs::path(config.output_dir) / "sweep.csv", os.str());
    return os.str();
}

GradCheckReport cmd_gradcheck(const RunConfig& config, std::size_t probes, double h, std::size_t batch) {
    config.validate();
    if (batch < 2) throw ValidationError("gradcheck: batch must be >= 2");
    const auto encoder = config.encoder();
    std::vector<ComplexField> inputs;
    std::vector<std::size_t> labels;
    std::mt19937_64 rng(config.seed);
    if (!config.dataset.train_images.empty()) {
        const DataSplits data = load_data(config);
        for (std::size_t k = 0; k < batch && k < data.train.size(); ++k) {
            inputs.push_back(encoder(data.pool.image(data.train.indices[k])));
            labels.push_back(data.pool.label(data.train.indices[k]));
        }
    } else {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t k = 0; k < batch; ++k) {
            const std::size_t side = std::min<std::size_t>(28, std::max<std::size_t>(1, config.grid_n / 2));
            Image img{side, side, std::vector<double>(side * side)};
            for (double& p : img.pixels) p = u(rng);
            inputs.push_back(encoder(img));
            labels.push_back(k % 10);
        }
    }

    D2NNModel model = config.initial_model();
    randomize_latents(model, config.seed + 7);
    std::unique_ptr<TrainableSystem> system;
    switch (config.mode) {
        case SystemMode::all_optical:
            system = std::make_unique<AllOpticalSystem>(model, config.layout(), config.loss);
            break;
        case SystemMode::stage1: {
            auto s = std::make_unique<Stage1System>(model, config.sensor_spec(), config.layout());
            randomize_latents(s->virtual_model(), config.seed + 8);
            system = std::move(s);
            break;
        }
        default: {
            std::optional<D2NNModel> front;
            if (config.mode != SystemMode::perfect_imager) front = model;
            system = std::make_unique<HybridSystem>(std::move(front), config.sensor_spec(),
                                                    ElectronicNet(*config.electronic, config.sensor->p, 10, config.seed));
        }
    }
    return grad_check(*system, inputs, labels, probes, h, config.seed + 9);
}

std::string cmd_compare_propagators(std::size_t n, const std::vector<double>& z_list, int padding_factor,
                                    std::uint64_t seed, double dx) {
    const GridSpec grid = GridSpec::square(n, dx);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ComplexField field(grid);
    for (auto& v : field.values) v = std::polar(u(rng), 2.0 * std::numbers::pi * u(rng));
    std::ostringstream os;
    os << "z,relative_l2\n";
    for (double z : z_list) {
        const ComplexField a = asm_propagate(field, PropagationPlan{grid, z, padding_factor});
        const ComplexField r = rs_propagate(field, z);
        os << format_double(z) << ',' << format_double(relative_l2(a.values, r.values)) << '\n';
    }
    return os.str();
}

std::vector<std::string> cmd_export_masks(const std::string& checkpoint_path, const std::string& out_dir) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    const GridSpec& g = ckpt.model.grid;
    auto write_pgm = [&](const fs::path& path, const std::vector<double>& values, double lo, double hi) {
        std::string bytes = "P5\n" + std::to_string(g.n_x) + " " + std::to_string(g.n_y) + "\n65535\n";
        for (double v : values) {
            const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
            const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
            bytes.push_back(static_cast<char>(q >> 8));
            bytes.push_back(static_cast<char>(q & 0xff));
        }
        write_text(path, bytes);
    };
    std::vector<std::string> files;
    nlohmann::json sidecar = {{"n_x", g.n_x},
                              {"n_y", g.n_y},
                              {"dx", g.dx},
                              {"phase_range", {0.0, 2.0 * std::numbers::pi}},
                              {"amplitude_range", {0.0, 1.0}},
                              {"virtual_layers", ckpt.metadata.value("virtual_layers", 0)},
                              {"layers", nlohmann::json::array()}};
    for (std::size_t l = 0; l < ckpt.model.layers.size(); ++l) {
        const Modulation m = layer_modulation(ckpt.model.layers[l]);
        nlohmann::json entry;
        const std::string phase_name = "layer_" + std::to_string(l) + "_phase.pgm";
        std::vector<double> wrapped(m.phase.size());
        for (std::size_t i = 0; i < wrapped.size(); ++i) {
            const double p = std::fmod(m.phase[i], 2.0 * std::numbers::pi);
            wrapped[i] = p < 0.0 ? p + 2.0 * std::numbers::pi : p;
        }
        write_pgm(dir / phase_name, wrapped, 0.0, 2.0 * std::numbers::pi);
        files.push_back((dir / phase_name).string());
        entry["phase"] = phase_name;
        if (ckpt.model.layers[l].modulation == ModulationMode::complex) {
            const std::string amp_name = "layer_" + std::to_string(l) + "_amplitude.pgm";
            write_pgm(dir / amp_name, m.amplitude, 0.0, 1.0);
            files.push_back((dir / amp_name).string());
            entry["amplitude"] = amp_name;
        }
        sidecar["layers"].push_back(entry);
    }
    write_text(dir / "masks.json", sidecar.dump(2) + "\n");
    files.push_back((dir / "masks.json").string());
    return files;
}

}  // namespace d2nn
