#include "d2nn/config.hpp"

#include <fstream>
#include <set>

namespace d2nn {
namespace {

constexpr std::size_t kImageSide = 28;

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(where + "." + key + ": wrong type");
    }
}

template <typename T, typename F>
void read_enum(const nlohmann::json& j, const char* key, T& out, F parse, const std::string& where) {
    if (!j.contains(key)) return;
    std::string s;
    read(j, key, s, where);
    try {
        out = parse(s);
    } catch (const std::invalid_argument& e) {
        throw ValidationError(where + "." + key + ": " + e.what());
    }
}

}  // namespace

std::string to_string(SystemMode m) {
    switch (m) {
        case SystemMode::all_optical: return "all-optical";
        case SystemMode::stage1: return "stage1";
        case SystemMode::stage2: return "stage2";
        case SystemMode::direct: return "direct";
        case SystemMode::perfect_imager: return "perfect-imager";
    }
    return "all-optical";
}

SystemMode system_mode_from_string(const std::string& s) {
    for (auto m : {SystemMode::all_optical, SystemMode::stage1, SystemMode::stage2, SystemMode::direct,
                   SystemMode::perfect_imager})
        if (to_string(m) == s) return m;
    throw ValidationError("unknown mode '" + s + "' (all-optical, stage1, stage2, direct, perfect-imager)");
}

void RunConfig::validate() const {
    if (grid_n < 2) throw ValidationError("grid.n: must be >= 2");
    if (!(dx > 0.0)) throw ValidationError("grid.dx: must be > 0");
    if (object_size > grid_n) throw ValidationError("object_size: larger than the grid");
    if (!(delta_z > 0.0)) throw ValidationError("delta_z: must be > 0");
    if (padding_factor < 2) throw ValidationError("padding_factor: must be >= 2");
    if (epochs == 0) throw ValidationError("epochs: must be >= 1");
    if (batch_size == 0) throw ValidationError("batch_size: must be >= 1");
    if (!(lr > 0.0)) throw ValidationError("lr: must be > 0");
    if (mode != SystemMode::perfect_imager && layers == 0) throw ValidationError("layers: must be >= 1");
    if (mode != SystemMode::all_optical && !sensor) throw ValidationError("sensor: required for mode " + to_string(mode));
    const bool needs_net = mode == SystemMode::stage2 || mode == SystemMode::direct || mode == SystemMode::perfect_imager;
    if (needs_net && !electronic) throw ValidationError("electronic: required for mode " + to_string(mode));
    if (mode == SystemMode::stage2 && stage1_checkpoint.empty() && stage1_epochs == 0)
        throw ValidationError("stage1_epochs: must be >= 1 when no stage1_checkpoint is given");
    if (mode != SystemMode::all_optical && mode != SystemMode::stage1 && loss != LossKind::sce)
        throw ValidationError("loss: electronic read-outs are trained with sce");
    if (sensor) (void)sensor_spec();
    (void)layout();
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["dataset"] = {{"train_images", dataset.train_images},   {"train_labels", dataset.train_labels},
                    {"test_images", dataset.test_images},     {"test_labels", dataset.test_labels},
                    {"validation_size", dataset.validation_size}, {"train_subset", dataset.train_subset},
                    {"validation_subset", dataset.validation_subset}, {"test_subset", dataset.test_subset}};
    j["encoding"] = to_string(encoding);
    j["grid"] = {{"n", grid_n}, {"dx", dx}};
    j["object_size"] = object_size;
    j["layers"] = layers;
    j["delta_z"] = delta_z;
    j["padding_factor"] = padding_factor;
    j["modulation"] = to_string(modulation);
    j["parameterization"] = to_string(parameterization);
    j["loss"] = to_string(loss);
    j["epochs"] = epochs;
    j["stage1_epochs"] = stage1_epochs;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["seed"] = seed;
    j["deterministic"] = deterministic;
    j["detectors"] = detectors ? *detectors : nlohmann::json(nullptr);
    j["sensor"] = sensor ? nlohmann::json{{"p", sensor->p}, {"region", sensor->region}} : nlohmann::json(nullptr);
    j["electronic"] = electronic ? nlohmann::json(to_string(*electronic)) : nlohmann::json(nullptr);
    j["mode"] = to_string(mode);
    j["stage1_checkpoint"] = stage1_checkpoint;
    j["output_dir"] = output_dir;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"dataset", "encoding", "grid", "object_size", "layers", "delta_z", "padding_factor", "modulation",
                    "parameterization", "loss", "epochs", "stage1_epochs", "batch_size", "lr", "seed",
                    "deterministic", "detectors", "sensor", "electronic", "mode", "stage1_checkpoint", "output_dir"},
                   "config");
    RunConfig c;
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        reject_unknown(d,
                       {"train_images", "train_labels", "test_images", "test_labels", "validation_size",
                        "train_subset", "validation_subset", "test_subset"},
                       "dataset");
        read(d, "train_images", c.dataset.train_images, "dataset");
        read(d, "train_labels", c.dataset.train_labels, "dataset");
        read(d, "test_images", c.dataset.test_images, "dataset");
        read(d, "test_labels", c.dataset.test_labels, "dataset");
        read(d, "validation_size", c.dataset.validation_size, "dataset");
        read(d, "train_subset", c.dataset.train_subset, "dataset");
        read(d, "validation_subset", c.dataset.validation_subset, "dataset");
        read(d, "test_subset", c.dataset.test_subset, "dataset");
    }
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        reject_unknown(g, {"n", "dx"}, "grid");
        read(g, "n", c.grid_n, "grid");
        read(g, "dx", c.dx, "grid");
    }
    read_enum(j, "encoding", c.encoding, encoding_from_string, "config");
    read(j, "object_size", c.object_size, "config");
    read(j, "layers", c.layers, "config");
    read(j, "delta_z", c.delta_z, "config");
    read(j, "padding_factor", c.padding_factor, "config");
    read_enum(j, "modulation", c.modulation, modulation_from_string, "config");
    read_enum(j, "parameterization", c.parameterization, parameterization_from_string, "config");
    read_enum(j, "loss", c.loss, loss_from_string, "config");
    read(j, "epochs", c.epochs, "config");
    read(j, "stage1_epochs", c.stage1_epochs, "config");
    read(j, "batch_size", c.batch_size, "config");
    read(j, "lr", c.lr, "config");
    read(j, "seed", c.seed, "config");
    read(j, "deterministic", c.deterministic, "config");
    if (j.contains("detectors") && !j.at("detectors").is_null()) c.detectors = j.at("detectors");
    if (j.contains("sensor") && !j.at("sensor").is_null()) {
        const auto& s = j.at("sensor");
        reject_unknown(s, {"p", "region"}, "sensor");
        SensorConfig sc;
        read(s, "p", sc.p, "sensor");
        read(s, "region", sc.region, "sensor");
        c.sensor = sc;
    }
    if (j.contains("electronic") && !j.at("electronic").is_null()) {
        ElectronicKind k{};
        read_enum(j, "electronic", k, electronic_from_string, "config");
        c.electronic = k;
    }
    read_enum(j, "mode", c.mode, system_mode_from_string, "config");
    read(j, "stage1_checkpoint", c.stage1_checkpoint, "config");
    read(j, "output_dir", c.output_dir, "config");
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config '" + path + "': " + e.what());
    }
    return from_json(j);
}

std::string RunConfig::hash() const {
    auto j = to_json();
    j.erase("output_dir");
    return config_hash(j);
}

DetectorLayout RunConfig::layout() const {
    if (detectors) return DetectorLayout::from_json(grid(), *detectors);
    return DetectorLayout::standard(grid(), 10);
}

SensorSpec RunConfig::sensor_spec() const {
    if (!sensor) throw ValidationError("sensor: not configured");
    if (sensor->region == 0 && mode == SystemMode::perfect_imager) {
        // the imaging optics map the whole object onto the array
        const std::size_t extent = (object_size ? object_size : grid_n) / kImageSide * kImageSide;
        return SensorSpec::covering(grid(), sensor->p, extent / sensor->p * sensor->p);
    }
    if (sensor->region == 0) return SensorSpec::standard(grid(), sensor->p);
    return SensorSpec::covering(grid(), sensor->p, sensor->region);
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.lr = lr;
    t.seed = seed;
    t.deterministic = deterministic;
    return t;
}

D2NNModel RunConfig::initial_model() const {
    D2NNModel m = D2NNModel::initialized(grid(), layers, delta_z, modulation, parameterization);
    m.padding_factor = padding_factor;
    return m;
}

}  // namespace d2nn
