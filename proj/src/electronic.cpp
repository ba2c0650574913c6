#include "d2nn/electronic.hpp"

#include <algorithm>
#include <cmath>

#include "d2nn/detection.hpp"

namespace d2nn {
namespace {

void glorot(std::vector<double>& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : w) v = dist(rng);
}

void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = relu(x);
}

void relu_mask(std::vector<double>& grad, std::span<const double> pre) {
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(pre[i] > 0.0)) grad[i] = 0.0;
}

}  // namespace

double relu(double x) { return x > 0.0 ? x : 0.0; }

BatchNormStage::BatchNormStage(std::size_t features)
    : scale(features, 1.0), shift(features, 0.0), running_mean(features, 0.0), running_var(features, 1.0) {}

Batch BatchNormStage::forward(const Batch& x, Cache* cache) {
    const std::size_t f = features();
    for (const auto& row : x)
        if (row.size() != f) throw ValidationError("batchnorm: feature count mismatch");
    Batch y(x.size(), std::vector<double>(f));
    if (mode == Mode::inference) {
        for (std::size_t b = 0; b < x.size(); ++b)
            for (std::size_t k = 0; k < f; ++k)
                y[b][k] = scale[k] * (x[b][k] - running_mean[k]) / std::sqrt(running_var[k] + epsilon) + shift[k];
        return y;
    }
    if (x.size() < 2) throw ValidationError("batchnorm: training mode needs a batch of at least 2 samples");
    const double n = static_cast<double>(x.size());
    Cache local;
    Cache& c = cache ? *cache : local;
    c.normalized.assign(x.size(), std::vector<double>(f));
    c.inv_std.assign(f, 0.0);
    for (std::size_t k = 0; k < f; ++k) {
        double mean = 0.0;
        for (const auto& row : x) mean += row[k];
        mean /= n;
        double var = 0.0;
        for (const auto& row : x) var += (row[k] - mean) * (row[k] - mean);
        var /= n;
        const double inv_std = 1.0 / std::sqrt(var + epsilon);
        c.inv_std[k] = inv_std;
        for (std::size_t b = 0; b < x.size(); ++b) {
            c.normalized[b][k] = (x[b][k] - mean) * inv_std;
            y[b][k] = scale[k] * c.normalized[b][k] + shift[k];
        }
        running_mean[k] = (1.0 - momentum) * running_mean[k] + momentum * mean;
        running_var[k] = (1.0 - momentum) * running_var[k] + momentum * var;
    }
    return y;
}

Batch BatchNormStage::backward(const Cache& cache, const Batch& grad_out, std::vector<double>& grad_scale,
                               std::vector<double>& grad_shift) const {
    const std::size_t f = features();
    const double n = static_cast<double>(grad_out.size());
    Batch dx(grad_out.size(), std::vector<double>(f));
    for (std::size_t k = 0; k < f; ++k) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t b = 0; b < grad_out.size(); ++b) {
            sum_g += grad_out[b][k];
            sum_gx += grad_out[b][k] * cache.normalized[b][k];
        }
        grad_scale[k] += sum_gx;
        grad_shift[k] += sum_g;
        const double s = scale[k] * cache.inv_std[k] / n;
        for (std::size_t b = 0; b < grad_out.size(); ++b)
            dx[b][k] = s * (n * grad_out[b][k] - sum_g - cache.normalized[b][k] * sum_gx);
    }
    return dx;
}

Batch batchnorm_forward(const Batch& x, BatchNormStage& stage) { return stage.forward(x, nullptr); }

FCLayer::FCLayer(std::size_t in, std::size_t out)
    : inputs(in), outputs(out), weights(in * out, 0.0), biases(out, 0.0) {}

void FCLayer::glorot_init(std::mt19937_64& rng) { glorot(weights, inputs, outputs, rng); }

std::vector<double> fc_forward(std::span<const double> x, const FCLayer& layer) {
    if (x.size() != layer.inputs) throw ValidationError("fc_forward: input size mismatch");
    std::vector<double> y = layer.biases;
    for (std::size_t i = 0; i < layer.inputs; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* w = layer.weights.data() + i * layer.outputs;
        for (std::size_t o = 0; o < layer.outputs; ++o) y[o] += w[o] * xi;
    }
    return y;
}

std::vector<double> fc_backward(std::span<const double> x, std::span<const double> grad_out, const FCLayer& layer,
                                std::vector<double>& grad_w, std::vector<double>& grad_b) {
    std::vector<double> dx(layer.inputs, 0.0);
    for (std::size_t o = 0; o < layer.outputs; ++o) grad_b[o] += grad_out[o];
    for (std::size_t i = 0; i < layer.inputs; ++i) {
        const double* w = layer.weights.data() + i * layer.outputs;
        double* gw = grad_w.data() + i * layer.outputs;
        double acc = 0.0;
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            gw[o] += x[i] * grad_out[o];
            acc += w[o] * grad_out[o];
        }
        dx[i] = acc;
    }
    return dx;
}

std::size_t ConvLayer::output_side(std::size_t input_side) const {
    if (input_side < kernel) throw ValidationError("conv: input smaller than kernel");
    return (input_side - kernel) / stride + 1;
}

std::vector<double> conv_forward(std::span<const double> x, std::size_t side, const ConvLayer& conv) {
    if (x.size() != side * side) throw ValidationError("conv_forward: input is not side x side");
    const std::size_t out = conv.output_side(side);
    std::vector<double> y(out * out, conv.bias[0]);
    for (std::size_t oy = 0; oy < out; ++oy)
        for (std::size_t ox = 0; ox < out; ++ox) {
            double acc = 0.0;
            for (std::size_t ky = 0; ky < conv.kernel; ++ky)
                for (std::size_t kx = 0; kx < conv.kernel; ++kx)
                    acc += conv.weights[ky * conv.kernel + kx] *
                           x[(oy * conv.stride + ky) * side + ox * conv.stride + kx];
            y[oy * out + ox] += acc;
        }
    return y;
}

std::vector<double> conv_backward(std::span<const double> x, std::size_t side, std::span<const double> grad_out,
                                  const ConvLayer& conv, std::vector<double>& grad_w, std::vector<double>& grad_b) {
    const std::size_t out = conv.output_side(side);
    std::vector<double> dx(side * side, 0.0);
    for (std::size_t oy = 0; oy < out; ++oy)
        for (std::size_t ox = 0; ox < out; ++ox) {
            const double g = grad_out[oy * out + ox];
            grad_b[0] += g;
            for (std::size_t ky = 0; ky < conv.kernel; ++ky)
                for (std::size_t kx = 0; kx < conv.kernel; ++kx) {
                    const std::size_t idx = (oy * conv.stride + ky) * side + ox * conv.stride + kx;
                    grad_w[ky * conv.kernel + kx] += g * x[idx];
                    dx[idx] += g * conv.weights[ky * conv.kernel + kx];
                }
        }
    return dx;
}

std::size_t Conv2F1Net::stride_for(std::size_t sensor_side) { return sensor_side <= 10 ? 1 : 2; }

Conv2F1Net::Conv2F1Net(std::size_t sensor_side, std::size_t classes) : input_side(sensor_side) {
    const std::size_t s = stride_for(sensor_side);
    conv1 = ConvLayer{6, s, std::vector<double>(36, 0.0), {0.0}};
    conv2 = ConvLayer{3, s, std::vector<double>(9, 0.0), {0.0}};
    const std::size_t side2 = conv2.output_side(conv1.output_side(sensor_side));
    fc1 = FCLayer(side2 * side2, 30);
    fc2 = FCLayer(30, classes);
}

void Conv2F1Net::glorot_init(std::mt19937_64& rng) {
    glorot(conv1.weights, 36, 36, rng);
    glorot(conv2.weights, 9, 9, rng);
    fc1.glorot_init(rng);
    fc2.glorot_init(rng);
}

std::vector<double> conv2f1_logits(std::span<const double> image, const Conv2F1Net& net) {
    if (image.size() != net.input_side * net.input_side) throw ValidationError("conv2f1: sensor image shape mismatch");
    auto a1 = conv_forward(image, net.input_side, net.conv1);
    relu_inplace(a1);
    auto a2 = conv_forward(a1, net.conv1.output_side(net.input_side), net.conv2);
    relu_inplace(a2);
    auto h = fc_forward(a2, net.fc1);
    relu_inplace(h);
    return fc_forward(h, net.fc2);
}

std::vector<double> conv2f1_forward(std::span<const double> image, const Conv2F1Net& net) {
    const auto logits = conv2f1_logits(image, net);
    return softmax(logits);
}

std::string to_string(ElectronicKind k) { return k == ElectronicKind::fc ? "fc" : "conv2f1"; }

ElectronicKind electronic_from_string(const std::string& s) {
    if (s == "fc") return ElectronicKind::fc;
    if (s == "conv2f1" || s == "2c2f-1") return ElectronicKind::conv2f1;
    throw ValidationError("unknown electronic network '" + s + "' (expected fc|conv2f1)");
}

ElectronicNet::ElectronicNet(ElectronicKind kind, std::size_t sensor_side, std::size_t classes, std::uint64_t seed)
    : kind_(kind), side_(sensor_side), classes_(classes), bn_(sensor_side * sensor_side) {
    std::mt19937_64 rng(seed);
    if (kind == ElectronicKind::fc) {
        fc_ = FCLayer(sensor_side * sensor_side, classes);
        fc_.glorot_init(rng);
    } else {
        conv_ = Conv2F1Net(sensor_side, classes);
        conv_.glorot_init(rng);
    }
}

std::vector<std::vector<double>*> ElectronicNet::parameters() {
    if (kind_ == ElectronicKind::fc) return {&bn_.scale, &bn_.shift, &fc_.weights, &fc_.biases};
    return {&bn_.scale,          &bn_.shift,          &conv_.conv1.weights, &conv_.conv1.bias,
            &conv_.conv2.weights, &conv_.conv2.bias, &conv_.fc1.weights,   &conv_.fc1.biases,
            &conv_.fc2.weights,   &conv_.fc2.biases};
}

std::vector<const std::vector<double>*> ElectronicNet::parameters() const {
    auto mut = const_cast<ElectronicNet*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::vector<std::string> ElectronicNet::parameter_names() const {
    if (kind_ == ElectronicKind::fc) return {"bn.scale", "bn.shift", "fc.weights", "fc.biases"};
    return {"bn.scale",  "bn.shift",   "conv1.weights", "conv1.bias", "conv2.weights",
            "conv2.bias", "fc1.weights", "fc1.biases",    "fc2.weights", "fc2.biases"};
}

std::size_t ElectronicNet::trainable_scalars() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
}

std::vector<std::vector<double>*> ElectronicNet::state_arrays() {
    auto v = parameters();
    v.push_back(&bn_.running_mean);
    v.push_back(&bn_.running_var);
    return v;
}

std::vector<double> ElectronicNet::head_logits(std::span<const double> x) const {
    return kind_ == ElectronicKind::fc ? fc_forward(x, fc_) : conv2f1_logits(x, conv_);
}

Batch ElectronicNet::forward(const Batch& sensor, bool training, Cache* cache) {
    bn_.mode = training ? BatchNormStage::Mode::training : BatchNormStage::Mode::inference;
    Batch normalized;
    if (training) {
        if (!cache) throw ValidationError("electronic forward: training mode requires a cache");
        cache->sensor = sensor;
        normalized = bn_.forward(sensor, &cache->bn);
        cache->normalized = normalized;
    } else {
        normalized = bn_.forward(sensor, nullptr);
    }
    Batch logits;
    logits.reserve(normalized.size());
    for (const auto& x : normalized) logits.push_back(head_logits(x));
    return logits;
}

std::vector<double> ElectronicNet::head_backward(std::span<const double> x, std::span<const double> grad_out,
                                                 std::vector<std::vector<double>>& grads) const {
    if (kind_ == ElectronicKind::fc) return fc_backward(x, grad_out, fc_, grads[2], grads[3]);

    const auto& n = conv_;
    const std::size_t s1 = n.conv1.output_side(n.input_side);
    auto z1 = conv_forward(x, n.input_side, n.conv1);
    auto a1 = z1;
    relu_inplace(a1);
    auto z2 = conv_forward(a1, s1, n.conv2);
    auto a2 = z2;
    relu_inplace(a2);
    auto z3 = fc_forward(a2, n.fc1);
    auto a3 = z3;
    relu_inplace(a3);

    auto g3 = fc_backward(a3, grad_out, n.fc2, grads[8], grads[9]);
    relu_mask(g3, z3);
    auto g2 = fc_backward(a2, g3, n.fc1, grads[6], grads[7]);
    relu_mask(g2, z2);
    auto g1 = conv_backward(a1, s1, g2, n.conv2, grads[4], grads[5]);
    relu_mask(g1, z1);
    return conv_backward(x, n.input_side, g1, n.conv1, grads[2], grads[3]);
}

Batch ElectronicNet::backward(const Cache& cache, const Batch& grad_logits,
                              std::vector<std::vector<double>>& grads) const {
    Batch grad_norm;
    grad_norm.reserve(grad_logits.size());
    for (std::size_t b = 0; b < grad_logits.size(); ++b)
        grad_norm.push_back(head_backward(cache.normalized[b], grad_logits[b], grads));
    return bn_.backward(cache.bn, grad_norm, grads[0], grads[1]);
}

nlohmann::json ElectronicNet::describe() const {
    return {{"kind", to_string(kind_)},
            {"sensor_side", side_},
            {"classes", classes_},
            {"bn_momentum", bn_.momentum},
            {"bn_epsilon", bn_.epsilon},
            {"arrays", parameter_names()}};
}

}  // namespace d2nn
