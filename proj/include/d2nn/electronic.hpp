#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2nn/optics.hpp"

namespace d2nn {

using Batch = std::vector<std::vector<double>>;  ///< one feature vector per sample

/// Per-feature batch normalization. Running statistics follow
/// running = (1 - momentum) * running + momentum * batch statistic.
struct BatchNormStage {
    enum class Mode { training, inference };

    std::vector<double> scale;
    std::vector<double> shift;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;
    Mode mode = Mode::training;

    explicit BatchNormStage(std::size_t features = 0);
    std::size_t features() const { return scale.size(); }

    struct Cache {
        Batch normalized;
        std::vector<double> inv_std;
    };

    /// Training mode normalizes by batch statistics and updates the running statistics;
    /// inference mode uses the running statistics. `cache` is filled in training mode.
    Batch forward(const Batch& x, Cache* cache = nullptr);
    /// Returns dL/dx; accumulates into grad_scale / grad_shift.
    Batch backward(const Cache& cache, const Batch& grad_out, std::vector<double>& grad_scale,
                   std::vector<double>& grad_shift) const;
};

Batch batchnorm_forward(const Batch& x, BatchNormStage& stage);

struct FCLayer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::vector<double> weights;  ///< inputs x outputs, row-major
    std::vector<double> biases;

    FCLayer() = default;
    FCLayer(std::size_t in, std::size_t out);
    void glorot_init(std::mt19937_64& rng);
    std::size_t parameter_count() const { return weights.size() + biases.size(); }
};

/// y = W^T x + b
std::vector<double> fc_forward(std::span<const double> x, const FCLayer& layer);
/// Returns dL/dx and accumulates dL/dW, dL/db.
std::vector<double> fc_backward(std::span<const double> x, std::span<const double> grad_out, const FCLayer& layer,
                                std::vector<double>& grad_w, std::vector<double>& grad_b);

/// Single-feature "valid" convolution with stride (cross-correlation, as in CNN frameworks).
struct ConvLayer {
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::vector<double> weights;  ///< kernel x kernel
    std::vector<double> bias{0.0};  ///< single feature

    std::size_t output_side(std::size_t input_side) const;
};

std::vector<double> conv_forward(std::span<const double> x, std::size_t side, const ConvLayer& conv);
std::vector<double> conv_backward(std::span<const double> x, std::size_t side, std::span<const double> grad_out,
                                  const ConvLayer& conv, std::vector<double>& grad_w, std::vector<double>& grad_b);

/// Two single-feature convolutions followed by FC(30)+ReLU and FC(classes).
struct Conv2F1Net {
    std::size_t input_side = 0;
    ConvLayer conv1;
    ConvLayer conv2;
    FCLayer fc1;
    FCLayer fc2;

    Conv2F1Net() = default;
    Conv2F1Net(std::size_t sensor_side, std::size_t classes = 10);
    static std::size_t stride_for(std::size_t sensor_side);
    void glorot_init(std::mt19937_64& rng);
};

/// Class probabilities (softmax of the final logits).
std::vector<double> conv2f1_forward(std::span<const double> image, const Conv2F1Net& net);
std::vector<double> conv2f1_logits(std::span<const double> image, const Conv2F1Net& net);

enum class ElectronicKind { fc, conv2f1 };
std::string to_string(ElectronicKind k);
ElectronicKind electronic_from_string(const std::string& s);

/// Batch-norm input stage followed by a single FC layer or the 2C2F-1 CNN.
class ElectronicNet {
public:
    ElectronicNet() = default;
    ElectronicNet(ElectronicKind kind, std::size_t sensor_side, std::size_t classes, std::uint64_t seed);

    ElectronicKind kind() const { return kind_; }
    std::size_t sensor_side() const { return side_; }
    std::size_t classes() const { return classes_; }

    /// Views of every trainable array, in a fixed order.
    std::vector<std::vector<double>*> parameters();
    std::vector<const std::vector<double>*> parameters() const;
    std::vector<std::string> parameter_names() const;
    std::size_t trainable_scalars() const;

    BatchNormStage& batchnorm() { return bn_; }
    const BatchNormStage& batchnorm() const { return bn_; }
    const FCLayer& fc() const { return fc_; }
    FCLayer& fc() { return fc_; }
    const Conv2F1Net& conv() const { return conv_; }
    Conv2F1Net& conv() { return conv_; }

    struct Cache {
        Batch sensor;
        BatchNormStage::Cache bn;
        Batch normalized;
    };

    /// Logits for a batch. Training mode uses batch statistics and fills `cache`.
    Batch forward(const Batch& sensor, bool training, Cache* cache);
    /// Gradient of sum_b grad_logits[b] . logits[b]; accumulates parameter gradients in
    /// `grads` (same order as parameters()) and returns dL/dsensor.
    Batch backward(const Cache& cache, const Batch& grad_logits, std::vector<std::vector<double>>& grads) const;

    nlohmann::json describe() const;
    /// Running statistics are not trainable but are part of the state.
    std::vector<std::vector<double>*> state_arrays();

private:
    std::vector<double> head_logits(std::span<const double> x) const;
    std::vector<double> head_backward(std::span<const double> x, std::span<const double> grad_out,
                                      std::vector<std::vector<double>>& grads) const;

    ElectronicKind kind_ = ElectronicKind::fc;
    std::size_t side_ = 0;
    std::size_t classes_ = 0;
    BatchNormStage bn_;
    FCLayer fc_;
    Conv2F1Net conv_;
};

double relu(double x);

}  // namespace d2nn
