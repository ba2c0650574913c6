#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2nn/detection.hpp"
#include "d2nn/electronic.hpp"
#include "d2nn/hybrid.hpp"
#include "d2nn/layer.hpp"
#include "d2nn/training.hpp"

namespace d2nn {

enum class SystemMode { all_optical, stage1, stage2, direct, perfect_imager };
std::string to_string(SystemMode m);
SystemMode system_mode_from_string(const std::string& s);

struct DatasetConfig {
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    std::size_t validation_size = 5000;
    /// Stratified subset sizes; 0 keeps the whole split.
    std::size_t train_subset = 0;
    std::size_t validation_subset = 0;
    std::size_t test_subset = 0;
};

struct SensorConfig {
    std::size_t p = 10;
    std::size_t region = 0;  ///< samples per side; 0 picks the standard covered region
};

/// Everything a command needs. Parsed from JSON with unknown keys rejected.
struct RunConfig {
    DatasetConfig dataset;
    InputEncoding encoding = InputEncoding::amplitude;
    std::size_t grid_n = 64;
    double dx = 0.53;
    std::size_t object_size = 0;
    std::size_t layers = 5;
    double delta_z = 12.8;
    int padding_factor = 2;
    ModulationMode modulation = ModulationMode::phase_only;
    Parameterization parameterization = Parameterization::relu_norm;
    LossKind loss = LossKind::sce;
    std::size_t epochs = 10;
    std::size_t stage1_epochs = 10;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    bool deterministic = true;
    std::optional<nlohmann::json> detectors;  ///< explicit layout; standard layout otherwise
    std::optional<SensorConfig> sensor;
    std::optional<ElectronicKind> electronic;
    SystemMode mode = SystemMode::all_optical;
    std::string stage1_checkpoint;  ///< optional starting point for stage2
    std::string output_dir = "out";

    /// Field-level consistency checks; throws ValidationError.
    void validate() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);

    GridSpec grid() const { return GridSpec::square(grid_n, dx); }
    DetectorLayout layout() const;
    SensorSpec sensor_spec() const;
    InputEncoder encoder() const { return InputEncoder{grid(), encoding, object_size}; }
    TrainConfig train_config() const;
    D2NNModel initial_model() const;
    /// Hash of every field except the output directory.
    std::string hash() const;
};

}  // namespace d2nn
