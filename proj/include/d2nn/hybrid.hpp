#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2nn/electronic.hpp"
#include "d2nn/training.hpp"

namespace d2nn {

/// p x p pixel array over a centered square of the output plane. Every pixel averages a
/// block x block patch of simulation samples.
struct SensorSpec {
    GridSpec grid;
    std::size_t p = 10;
    std::size_t block = 1;

    std::size_t region() const { return p * block; }
    std::size_t offset_x() const { return (grid.n_x - region()) / 2; }
    std::size_t offset_y() const { return (grid.n_y - region()) / 2; }
    void validate() const;

    /// Sensor over `region_samples` x `region_samples` central samples. Rejects regions not
    /// divisible into p x p whole-sample pixels.
    static SensorSpec covering(const GridSpec& grid, std::size_t p, std::size_t region_samples);
    /// 53.3 wavelengths at 200 neurons per side, scaled with the grid and rounded down to a
    /// multiple of p samples.
    static SensorSpec standard(const GridSpec& grid, std::size_t p);

    nlohmann::json to_json() const;
    static SensorSpec from_json(const GridSpec& grid, const nlohmann::json& j);
};

/// Block-average pooling of the covered region; p*p values, row-major.
std::vector<double> sensor_readout(std::span<const double> intensity, const SensorSpec& sensor);
/// Vector-Jacobian product of sensor_readout (grid-sized result).
std::vector<double> sensor_readout_backward(std::span<const double> grad_pixels, const SensorSpec& sensor);

/// Nearest-neighbour upsampling of I_A onto the covered region and a zero-phase field of
/// amplitude sqrt(I'_A). Samples outside the covered region are dark.
ComplexField virtual_relaunch(std::span<const double> pixels, const SensorSpec& sensor);

inline constexpr double kSqrtEpsilon = 1e-12;

/// dL/dI_A from the field adjoint of virtual_relaunch, using d sqrt(x)/dx = 1/(2 sqrt(x + eps)).
std::vector<double> virtual_relaunch_backward(const ComplexField& field_adjoint, std::span<const double> pixels,
                                              const SensorSpec& sensor);

/// Stage-1 pre-training: D2NN -> sensor -> relaunch -> one virtual layer -> detectors, SCE loss.
class Stage1System : public TrainableSystem {
public:
    Stage1System(D2NNModel front, SensorSpec sensor, DetectorLayout layout);

    std::vector<std::vector<double>*> parameters() override;
    std::vector<std::string> parameter_names() const override;
    double batch_loss(const std::vector<ComplexField>& inputs, const std::vector<std::size_t>& labels,
                      ArrayList* grads) override;
    Prediction predict(const ComplexField& input) override;

    D2NNModel& front() { return front_; }
    const D2NNModel& front() const { return front_; }
    D2NNModel& virtual_model() { return virtual_; }
    const SensorSpec& sensor() const { return sensor_; }

    /// Front layers followed by the virtual layer, marked with metadata "virtual_layers": 1.
    Checkpoint checkpoint(const nlohmann::json& metadata) const;

private:
    D2NNModel front_;
    D2NNModel virtual_;
    SensorSpec sensor_;
    DetectorLayout layout_;
    OpticalStack front_stack_;
    OpticalStack virtual_stack_;
};

/// Optical front-end (or none: the sensor reads the object intensity) -> sensor ->
/// batch norm -> electronic net, trained with softmax cross-entropy on the logits.
class HybridSystem : public TrainableSystem {
public:
    HybridSystem(std::optional<D2NNModel> front, SensorSpec sensor, ElectronicNet net);

    std::vector<std::vector<double>*> parameters() override;
    std::vector<std::string> parameter_names() const override;
    std::vector<std::vector<double>*> state() override;
    double batch_loss(const std::vector<ComplexField>& inputs, const std::vector<std::size_t>& labels,
                      ArrayList* grads) override;
    Prediction predict(const ComplexField& input) override;

    bool has_optics() const { return front_.has_value(); }
    const std::optional<D2NNModel>& front() const { return front_; }
    const SensorSpec& sensor() const { return sensor_; }
    ElectronicNet& electronic() { return net_; }
    const ElectronicNet& electronic() const { return net_; }

    /// Sensor image for one input (optical forward when present).
    std::vector<double> sensor_image(const ComplexField& input) const;

    Checkpoint checkpoint(const nlohmann::json& metadata);
    static HybridSystem from_checkpoint(const Checkpoint& ckpt);

private:
    std::optional<D2NNModel> front_;
    SensorSpec sensor_;
    ElectronicNet net_;
    std::optional<OpticalStack> stack_;
};

/// Prefix of the optical arrays in parameter_names(); freeze it to train the electronics only.
inline constexpr const char* kOpticalPrefix = "optical.";

struct Stage1Result {
    TrainResult training;
    Checkpoint checkpoint;
};

Stage1Result train_stage1(const D2NNModel& front, const SensorSpec& sensor, const DetectorLayout& layout,
                          const InputEncoder& encoder, const SampleView& train_set, const SampleView& validation_set,
                          const TrainConfig& config, const nlohmann::json& metadata = nlohmann::json::object());

/// Optical front-end of a stage-1 checkpoint with the virtual layer removed.
D2NNModel stage1_front(const Checkpoint& stage1);

struct HybridResult {
    TrainResult training;
    Checkpoint checkpoint;
};

/// Joint training of the stage-1 front-end with a fresh electronic net.
HybridResult train_stage2(const Checkpoint& stage1, ElectronicNet net, const SensorSpec& sensor,
                          const InputEncoder& encoder, const SampleView& train_set, const SampleView& validation_set,
                          const TrainConfig& config, const nlohmann::json& metadata = nlohmann::json::object());

/// Single-stage joint training from scratch; an empty front gives the imaging baseline.
HybridResult train_direct(std::optional<D2NNModel> front, ElectronicNet net, const SensorSpec& sensor,
                          const InputEncoder& encoder, const SampleView& train_set, const SampleView& validation_set,
                          const TrainConfig& config, const nlohmann::json& metadata = nlohmann::json::object());

}  // namespace d2nn
