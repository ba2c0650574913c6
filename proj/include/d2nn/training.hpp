#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2nn/dataset.hpp"
#include "d2nn/detection.hpp"
#include "d2nn/layer.hpp"

namespace d2nn {

using ArrayList = std::vector<std::vector<double>>;

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    ArrayList first_moment;
    ArrayList second_moment;
};

/// In-place Adam update; moments are created on the first call.
void adam_step(const std::vector<std::vector<double>*>& params, const ArrayList& grads, AdamState& state);

/// Encodes dataset images onto the simulation grid.
struct InputEncoder {
    GridSpec grid;
    InputEncoding encoding = InputEncoding::amplitude;
    std::size_t object_size = 0;

    ComplexField operator()(const Image& image) const { return encode_input(image, encoding, grid, object_size); }
};

/// Class scores for one input and, for all-optical read-outs, the output-plane power E.
struct Prediction {
    std::vector<double> scores;
    double output_power = std::numeric_limits<double>::quiet_NaN();
    std::size_t label() const { return classify(scores); }
};

/// Anything the trainer can optimize: a set of parameter arrays, a batch loss with gradients,
/// and an inference path.
class TrainableSystem {
public:
    virtual ~TrainableSystem() = default;

    virtual std::vector<std::vector<double>*> parameters() = 0;
    virtual std::vector<std::string> parameter_names() const = 0;
    /// Everything that defines the inference behaviour (parameters plus non-trainable state).
    virtual std::vector<std::vector<double>*> state() { return parameters(); }

    /// Mean loss over the batch; when `grads` is non-null it receives the gradient of that mean
    /// for every array of parameters(), in order.
    virtual double batch_loss(const std::vector<ComplexField>& inputs, const std::vector<std::size_t>& labels,
                              ArrayList* grads) = 0;
    virtual Prediction predict(const ComplexField& input) = 0;
};

/// Trainable latent arrays of a model: beta for every layer, alpha too in complex mode.
std::vector<std::vector<double>*> optical_parameters(D2NNModel& model);
std::vector<std::string> optical_parameter_names(const D2NNModel& model);
/// Flattens LayerGradients in the order of optical_parameters().
void append_optical_gradients(const D2NNModel& model, std::vector<LayerGradients>& layer_grads, ArrayList& out);
/// Throws NumericError naming the first layer that holds a non-finite gradient.
void check_finite_gradients(const std::vector<LayerGradients>& grads, const std::string& context = "optical");

/// D2NN followed by class detectors, trained with MSE or softmax-cross-entropy.
class AllOpticalSystem : public TrainableSystem {
public:
    AllOpticalSystem(D2NNModel model, DetectorLayout layout, LossKind loss);

    std::vector<std::vector<double>*> parameters() override { return optical_parameters(model_); }
    std::vector<std::string> parameter_names() const override { return optical_parameter_names(model_); }
    double batch_loss(const std::vector<ComplexField>& inputs, const std::vector<std::size_t>& labels,
                      ArrayList* grads) override;
    Prediction predict(const ComplexField& input) override;

    D2NNModel& model() { return model_; }
    const D2NNModel& model() const { return model_; }
    const DetectorLayout& layout() const { return layout_; }
    LossKind loss_kind() const { return loss_; }

private:
    D2NNModel model_;
    DetectorLayout layout_;
    LossKind loss_;
    OpticalStack stack_;
};

/// Exact gradients of the mean batch loss for an all-optical model.
std::vector<LayerGradients> backward(const D2NNModel& model, const std::vector<ComplexField>& inputs,
                                     const std::vector<std::size_t>& labels, LossKind loss,
                                     const DetectorLayout& layout, double* mean_loss = nullptr);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    bool deterministic = true;
    /// Arrays whose name starts with one of these prefixes are not updated.
    std::vector<std::string> frozen_prefixes;
};

struct SampleView {
    const LabeledImageSet* set = nullptr;
    std::vector<std::size_t> indices;
    std::size_t size() const { return indices.size(); }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_validation_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam training. After each epoch the validation accuracy is measured; at the
/// end the system is restored to the epoch with the highest validation accuracy (earliest on ties).
TrainResult train(TrainableSystem& system, const InputEncoder& encoder, const SampleView& train_set,
                  const SampleView& validation_set, const TrainConfig& config, const EpochCallback& on_epoch = {});

double accuracy(TrainableSystem& system, const InputEncoder& encoder, const SampleView& samples);

/// Training-curve CSV: epoch,train_loss,validation_accuracy.
std::string training_curve_csv(const TrainResult& result, const std::string& config_hash);

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t probes = 0;
    struct Probe {
        std::string array;
        std::size_t index;
        double adjoint;
        double finite_difference;
        double relative_error;
    };
    std::vector<Probe> details;
};

inline constexpr double kGradCheckFloor = 1e-8;

/// Central finite differences on `n_probes` randomly chosen trainable scalars versus the
/// adjoint gradient. Relative error is |a - f| / max(|a|, |f|, kGradCheckFloor).
GradCheckReport grad_check(TrainableSystem& system, const std::vector<ComplexField>& inputs,
                           const std::vector<std::size_t>& labels, std::size_t n_probes, double h,
                           std::uint64_t seed);

/// Binary checkpoint: magic "D2NNCKPT", u32 version, u64-length-prefixed JSON metadata,
/// float64 alpha arrays of every layer, then beta arrays; optionally an appended section of
/// named float64 arrays (u64-length-prefixed JSON directory followed by the data).
struct Checkpoint {
    D2NNModel model;
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<std::string> extra_names;
    ArrayList extra_arrays;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Geometry block stored in checkpoint metadata.
nlohmann::json model_geometry_json(const D2NNModel& model);
D2NNModel model_from_geometry_json(const nlohmann::json& geometry);

/// FNV-1a 64-bit hash of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

}  // namespace d2nn
