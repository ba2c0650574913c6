#include "d2nn/hybrid.hpp"

#include <algorithm>
#include <cmath>

namespace d2nn {
namespace {

constexpr double kReferenceNeurons = 200.0;
constexpr double kReferenceSensorSide = 53.3;

std::vector<std::string> prefixed(const std::string& prefix, const std::vector<std::string>& names) {
    std::vector<std::string> out;
    for (const auto& n : names) out.push_back(prefix + n);
    return out;
}

std::vector<std::string> front_names(const D2NNModel& model) {
    // optical_parameter_names already carries the "optical." prefix
    return optical_parameter_names(model);
}

ComplexField intensity_adjoint(const ComplexField& field, std::span<const double> grad_intensity) {
    ComplexField adj(field.grid);
    for (std::size_t i = 0; i < adj.values.size(); ++i) adj.values[i] = 2.0 * grad_intensity[i] * field.values[i];
    return adj;
}

}  // namespace

void SensorSpec::validate() const {
    grid.validate();
    if (p == 0 || block == 0) throw ValidationError("sensor: p and block must be >= 1");
    if (region() > grid.n_x || region() > grid.n_y)
        throw ValidationError("sensor: covered region of " + std::to_string(region()) + " samples exceeds the grid");
}

SensorSpec SensorSpec::covering(const GridSpec& grid, std::size_t p, std::size_t region_samples) {
    if (p == 0) throw ValidationError("sensor: p must be >= 1");
    if (region_samples == 0 || region_samples % p != 0)
        throw ValidationError("sensor: region of " + std::to_string(region_samples) +
                              " samples is not divisible into " + std::to_string(p) + " pixels per axis");
    SensorSpec s{grid, p, region_samples / p};
    s.validate();
    return s;
}

SensorSpec SensorSpec::standard(const GridSpec& grid, std::size_t p) {
    grid.validate();
    if (p == 0) throw ValidationError("sensor: p must be >= 1");
    const double n = static_cast<double>(std::min(grid.n_x, grid.n_y));
    const auto covered = static_cast<std::size_t>(std::floor(n * kReferenceSensorSide / (kReferenceNeurons * grid.dx)));
    const std::size_t region = covered / p * p;
    if (region == 0)
        throw ValidationError("sensor: " + std::to_string(p) + " pixels do not fit the " + std::to_string(covered) +
                              "-sample covered region of this grid");
    return covering(grid, p, region);
}

nlohmann::json SensorSpec::to_json() const { return {{"p", p}, {"block", block}}; }

SensorSpec SensorSpec::from_json(const GridSpec& grid, const nlohmann::json& j) {
    for (const auto& [key, _] : j.items())
        if (key != "p" && key != "block") throw ValidationError("sensor: unknown key '" + key + "'");
    SensorSpec s{grid, j.at("p").get<std::size_t>(), j.at("block").get<std::size_t>()};
    s.validate();
    return s;
}

std::vector<double> sensor_readout(std::span<const double> intensity, const SensorSpec& sensor) {
    if (intensity.size() != sensor.grid.size()) throw ValidationError("sensor_readout: intensity size mismatch");
    const std::size_t k = sensor.block, ox = sensor.offset_x(), oy = sensor.offset_y(), nx = sensor.grid.n_x;
    const double inv_area = 1.0 / static_cast<double>(k * k);
    std::vector<double> out(sensor.p * sensor.p, 0.0);
    for (std::size_t py = 0; py < sensor.p; ++py)
        for (std::size_t px = 0; px < sensor.p; ++px) {
            double sum = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t i = 0; i < k; ++i) {
                    const double v = intensity[(oy + py * k + j) * nx + ox + px * k + i];
                    if (v < 0.0) throw ValidationError("sensor_readout: negative intensity");
                    sum += v;
                }
            out[py * sensor.p + px] = sum * inv_area;
        }
    return out;
}

std::vector<double> sensor_readout_backward(std::span<const double> grad_pixels, const SensorSpec& sensor) {
    if (grad_pixels.size() != sensor.p * sensor.p) throw ValidationError("sensor_readout_backward: size mismatch");
    const std::size_t k = sensor.block, ox = sensor.offset_x(), oy = sensor.offset_y(), nx = sensor.grid.n_x;
    const double inv_area = 1.0 / static_cast<double>(k * k);
    std::vector<double> out(sensor.grid.size(), 0.0);
    for (std::size_t py = 0; py < sensor.p; ++py)
        for (std::size_t px = 0; px < sensor.p; ++px)
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t i = 0; i < k; ++i)
                    out[(oy + py * k + j) * nx + ox + px * k + i] = grad_pixels[py * sensor.p + px] * inv_area;
    return out;
}

ComplexField virtual_relaunch(std::span<const double> pixels, const SensorSpec& sensor) {
    if (pixels.size() != sensor.p * sensor.p) throw ValidationError("virtual_relaunch: pixel count mismatch");
    const std::size_t k = sensor.block, ox = sensor.offset_x(), oy = sensor.offset_y();
    ComplexField f(sensor.grid);
    for (std::size_t py = 0; py < sensor.p; ++py)
        for (std::size_t px = 0; px < sensor.p; ++px) {
            const double v = pixels[py * sensor.p + px];
            if (v < 0.0) throw ValidationError("virtual_relaunch: negative pixel value");
            const double a = std::sqrt(v);
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t i = 0; i < k; ++i) f.at(ox + px * k + i, oy + py * k + j) = a;
        }
    return f;
}

std::vector<double> virtual_relaunch_backward(const ComplexField& field_adjoint, std::span<const double> pixels,
                                              const SensorSpec& sensor) {
    if (pixels.size() != sensor.p * sensor.p || field_adjoint.grid != sensor.grid)
        throw ValidationError("virtual_relaunch_backward: shape mismatch");
    const std::size_t k = sensor.block, ox = sensor.offset_x(), oy = sensor.offset_y();
    std::vector<double> out(pixels.size(), 0.0);
    for (std::size_t py = 0; py < sensor.p; ++py)
        for (std::size_t px = 0; px < sensor.p; ++px) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t i = 0; i < k; ++i) s += field_adjoint.at(ox + px * k + i, oy + py * k + j).real();
            const std::size_t q = py * sensor.p + px;
            out[q] = s / (2.0 * std::sqrt(pixels[q] + kSqrtEpsilon));
        }
    return out;
}

// ---------------------------------------------------------------------------------------------

namespace {

D2NNModel make_virtual(const D2NNModel& front) {
    D2NNModel v;
    v.grid = front.grid;
    v.z_in = v.z_out = v.delta_z = front.delta_z;
    v.padding_factor = front.padding_factor;
    v.layers.push_back(
        LayerParams::initial(front.grid.size(), front.layers.front().modulation, front.layers.front().parameterization));
    return v;
}

}  // namespace

Stage1System::Stage1System(D2NNModel front, SensorSpec sensor, DetectorLayout layout)
    : front_(std::move(front)),
      virtual_(make_virtual(front_)),
      sensor_(std::move(sensor)),
      layout_(std::move(layout)),
      front_stack_(front_),
      virtual_stack_(virtual_) {
    sensor_.validate();
    if (sensor_.grid != front_.grid || layout_.grid() != front_.grid)
        throw ValidationError("stage 1: sensor, layout and model grids differ");
}

std::vector<std::vector<double>*> Stage1System::parameters() {
    auto p = optical_parameters(front_);
    for (auto* a : optical_parameters(virtual_)) p.push_back(a);
    return p;
}

std::vector<std::string> Stage1System::parameter_names() const {
    auto n = front_names(front_);
    std::vector<std::string> v;
    v.push_back("virtual.0.beta");
    if (virtual_.layers.front().modulation == ModulationMode::complex) v.push_back("virtual.0.alpha");
    n.insert(n.end(), v.begin(), v.end());
    return n;
}

double Stage1System::batch_loss(const std::vector<ComplexField>& inputs, const std::vector<std::size_t>& labels,
                                ArrayList* grads) {
    if (inputs.size() != labels.size() || inputs.empty()) throw ValidationError("batch_loss: empty or mismatched batch");
    const double inv_b = 1.0 / static_cast<double>(inputs.size());
    auto g_front = zero_gradients(front_);
    auto g_virtual = zero_gradients(virtual_);
    double total = 0.0;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        const ForwardTrace t1 = front_stack_.forward(inputs[b], front_);
        const auto i1 = t1.output.intensity();
        const auto pixels = sensor_readout(i1, sensor_);
        const ForwardTrace t2 = virtual_stack_.forward(virtual_relaunch(pixels, sensor_), virtual_);
        const LossEvaluation e = evaluate_loss(LossKind::sce, t2.output.intensity(), labels[b], layout_);
        total += e.loss;
        if (!grads) continue;
        std::vector<double> gi(e.intensity_gradient);
        for (double& v : gi) v *= inv_b;
        const ComplexField relaunch_adj = virtual_stack_.backward(t2, virtual_, intensity_adjoint(t2.output, gi), g_virtual);
        const auto g_pixels = virtual_relaunch_backward(relaunch_adj, pixels, sensor_);
        const auto g_i1 = sensor_readout_backward(g_pixels, sensor_);
        front_stack_.backward(t1, front_, intensity_adjoint(t1.output, g_i1), g_front);
    }
    if (grads) {
        check_finite_gradients(g_front, "optical");
        check_finite_gradients(g_virtual, "virtual");
        grads->clear();
        append_optical_gradients(front_, g_front, *grads);
        append_optical_gradients(virtual_, g_virtual, *grads);
    }
    return total * inv_b;
}

Prediction Stage1System::predict(const ComplexField& input) {
    const ForwardTrace t1 = front_stack_.forward(input, front_);
    const auto pixels = sensor_readout(t1.output.intensity(), sensor_);
    const ForwardTrace t2 = virtual_stack_.forward(virtual_relaunch(pixels, sensor_), virtual_);
    const auto intensity = t2.output.intensity();
    Prediction p;
    p.scores = detector_signals(intensity, layout_);
    p.output_power = integrated_intensity(intensity, front_.grid.dx);
    return p;
}

Checkpoint Stage1System::checkpoint(const nlohmann::json& metadata) const {
    Checkpoint c;
    c.model = front_;
    c.model.layers.push_back(virtual_.layers.front());
    c.metadata = metadata;
    c.metadata["virtual_layers"] = 1;
    c.metadata["sensor"] = sensor_.to_json();
    c.metadata["detectors"] = layout_.to_json();
    return c;
}

D2NNModel stage1_front(const Checkpoint& stage1) {
    const auto n_virtual = stage1.metadata.value("virtual_layers", std::size_t{0});
    if (n_virtual == 0) throw ValidationError("not a stage-1 checkpoint (no virtual layer recorded)");
    D2NNModel m = stage1.model;
    if (m.layers.size() <= n_virtual) throw ValidationError("stage-1 checkpoint has no front-end layers");
    m.layers.resize(m.layers.size() - n_virtual);
    return m;
}

// ---------------------------------------------------------------------------------------------

HybridSystem::HybridSystem(std::optional<D2NNModel> front, SensorSpec sensor, ElectronicNet net)
    : front_(std::move(front)), sensor_(std::move(sensor)), net_(std::move(net)) {
    sensor_.validate();
    if (net_.sensor_side() != sensor_.p)
        throw ValidationError("hybrid: electronic net expects a " + std::to_string(net_.sensor_side()) +
                              "-pixel sensor, got " + std::to_string(sensor_.p));
    if (front_) {
        front_->validate();
        if (front_->grid != sensor_.grid) throw ValidationError("hybrid: sensor and model grids differ");
        stack_.emplace(*front_);
    }
}

std::vector<std::vector<double>*> HybridSystem::parameters() {
    std::vector<std::vector<double>*> p;
    if (front_) p = optical_parameters(*front_);
    for (auto* a : net_.parameters()) p.push_back(a);
    return p;
}

std::vector<std::string> HybridSystem::parameter_names() const {
    std::vector<std::string> n;
    if (front_) n = front_names(*front_);
    for (auto& e : prefixed("electronic.", net_.parameter_names())) n.push_back(std::move(e));
    return n;
}

std::vector<std::vector<double>*> HybridSystem::state() {
    std::vector<std::vector<double>*> p;
    if (front_) p = optical_parameters(*front_);
    for (auto* a : net_.state_arrays()) p.push_back(a);
    return p;
}

std::vector<double> HybridSystem::sensor_image(const ComplexField& input) const {
    if (input.grid != sensor_.grid) throw ValidationError("hybrid: input grid differs from the sensor grid");
    if (!stack_) return sensor_readout(input.intensity(), sensor_);
    return sensor_readout(stack_->forward(input, *front_).output.intensity(), sensor_);
}

double HybridSystem::batch_loss(const std::vector<ComplexField>& inputs, const std::vector<std::size_t>& labels,
                                ArrayList* grads) {
    if (inputs.size() != labels.size() || inputs.empty()) throw ValidationError("batch_loss: empty or mismatched batch");
    const double inv_b = 1.0 / static_cast<double>(inputs.size());
    std::vector<ForwardTrace> traces;
    Batch sensor;
    for (const auto& in : inputs) {
        if (stack_) {
            traces.push_back(stack_->forward(in, *front_));
            sensor.push_back(sensor_readout(traces.back().output.intensity(), sensor_));
        } else {
            sensor.push_back(sensor_readout(in.intensity(), sensor_));
        }
    }
    ElectronicNet::Cache cache;
    const Batch logits = net_.forward(sensor, true, &cache);
    double total = 0.0;
    Batch g_logits(logits.size());
    for (std::size_t b = 0; b < logits.size(); ++b) {
        total += softmax_cross_entropy(logits[b], labels[b], &g_logits[b]);
        for (double& v : g_logits[b]) v *= inv_b;
    }
    if (grads) {
        ArrayList g_net;
        for (const auto* a : net_.parameters()) g_net.emplace_back(a->size(), 0.0);
        const Batch g_sensor = net_.backward(cache, g_logits, g_net);
        grads->clear();
        if (front_) {
            auto g_front = zero_gradients(*front_);
            for (std::size_t b = 0; b < inputs.size(); ++b) {
                const auto g_i = sensor_readout_backward(g_sensor[b], sensor_);
                stack_->backward(traces[b], *front_, intensity_adjoint(traces[b].output, g_i), g_front);
            }
            check_finite_gradients(g_front, "optical");
            append_optical_gradients(*front_, g_front, *grads);
        }
        const auto names = net_.parameter_names();
        for (std::size_t a = 0; a < g_net.size(); ++a) {
            for (double v : g_net[a])
                if (!std::isfinite(v)) throw NumericError("non-finite gradient in electronic array " + names[a]);
            grads->push_back(std::move(g_net[a]));
        }
    }
    return total * inv_b;
}

Prediction HybridSystem::predict(const ComplexField& input) {
    const Batch logits = net_.forward({sensor_image(input)}, false, nullptr);
    Prediction p;
    p.scores = logits.front();
    return p;
}

Checkpoint HybridSystem::checkpoint(const nlohmann::json& metadata) {
    Checkpoint c;
    if (front_) {
        c.model = *front_;
    } else {
        c.model.grid = sensor_.grid;
    }
    c.metadata = metadata;
    c.metadata["hybrid"] = {{"optics", front_.has_value()}, {"sensor", sensor_.to_json()}, {"electronic", net_.describe()}};
    auto names = prefixed("electronic.", net_.parameter_names());
    names.push_back("electronic.bn.running_mean");
    names.push_back("electronic.bn.running_var");
    c.extra_names = names;
    for (const auto* a : net_.state_arrays()) c.extra_arrays.push_back(*a);
    return c;
}

HybridSystem HybridSystem::from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.metadata.contains("hybrid")) throw ValidationError("not a hybrid checkpoint");
    const auto& h = ckpt.metadata.at("hybrid");
    const auto& e = h.at("electronic");
    const SensorSpec sensor = SensorSpec::from_json(ckpt.model.grid, h.at("sensor"));
    ElectronicNet net(electronic_from_string(e.at("kind").get<std::string>()), e.at("sensor_side").get<std::size_t>(),
                      e.at("classes").get<std::size_t>(), 0);
    net.batchnorm().momentum = e.at("bn_momentum").get<double>();
    net.batchnorm().epsilon = e.at("bn_epsilon").get<double>();
    auto state = net.state_arrays();
    if (ckpt.extra_arrays.size() != state.size())
        throw CheckpointError("hybrid checkpoint: expected " + std::to_string(state.size()) + " electronic arrays");
    for (std::size_t i = 0; i < state.size(); ++i) {
        if (ckpt.extra_arrays[i].size() != state[i]->size())
            throw CheckpointError("hybrid checkpoint: array '" + ckpt.extra_names[i] + "' has the wrong size");
        *state[i] = ckpt.extra_arrays[i];
    }
    std::optional<D2NNModel> front;
    if (h.at("optics").get<bool>()) front = ckpt.model;
    return HybridSystem(std::move(front), sensor, std::move(net));
}

// ---------------------------------------------------------------------------------------------

Stage1Result train_stage1(const D2NNModel& front, const SensorSpec& sensor, const DetectorLayout& layout,
                          const InputEncoder& encoder, const SampleView& train_set, const SampleView& validation_set,
                          const TrainConfig& config, const nlohmann::json& metadata) {
    Stage1System system(front, sensor, layout);
    Stage1Result r;
    r.training = train(system, encoder, train_set, validation_set, config);
    nlohmann::json meta = metadata;
    meta["best_epoch"] = r.training.best_epoch;
    meta["validation_accuracy"] = r.training.best_validation_accuracy;
    r.checkpoint = system.checkpoint(meta);
    return r;
}

HybridResult train_stage2(const Checkpoint& stage1, ElectronicNet net, const SensorSpec& sensor,
                          const InputEncoder& encoder, const SampleView& train_set, const SampleView& validation_set,
                          const TrainConfig& config, const nlohmann::json& metadata) {
    return train_direct(stage1_front(stage1), std::move(net), sensor, encoder, train_set, validation_set, config,
                        metadata);
}

HybridResult train_direct(std::optional<D2NNModel> front, ElectronicNet net, const SensorSpec& sensor,
                          const InputEncoder& encoder, const SampleView& train_set, const SampleView& validation_set,
                          const TrainConfig& config, const nlohmann::json& metadata) {
    HybridSystem system(std::move(front), sensor, std::move(net));
    HybridResult r;
    r.training = train(system, encoder, train_set, validation_set, config);
    nlohmann::json meta = metadata;
    meta["best_epoch"] = r.training.best_epoch;
    meta["validation_accuracy"] = r.training.best_validation_accuracy;
    r.checkpoint = system.checkpoint(meta);
    return r;
}

}  // namespace d2nn
