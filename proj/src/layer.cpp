#include "d2nn/layer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace d2nn {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double sigmoid(double x) {
    // e^x / (e^x + 1), evaluated without overflow on either tail
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::string to_string(ModulationMode m) { return m == ModulationMode::phase_only ? "phase_only" : "complex"; }
std::string to_string(Parameterization p) { return p == Parameterization::sigmoid ? "sigmoid" : "relu_norm"; }

ModulationMode modulation_from_string(const std::string& s) {
    if (s == "phase_only") return ModulationMode::phase_only;
    if (s == "complex") return ModulationMode::complex;
    throw ValidationError("unknown modulation mode '" + s + "' (expected phase_only|complex)");
}

Parameterization parameterization_from_string(const std::string& s) {
    if (s == "sigmoid") return Parameterization::sigmoid;
    if (s == "relu_norm") return Parameterization::relu_norm;
    throw ValidationError("unknown parameterization '" + s + "' (expected sigmoid|relu_norm)");
}

void LayerParams::validate(std::size_t expected_size) const {
    if (alpha.size() != expected_size || beta.size() != expected_size)
        throw ValidationError("layer: latent arrays do not match the grid size");
    for (std::size_t i = 0; i < expected_size; ++i)
        if (!std::isfinite(alpha[i]) || !std::isfinite(beta[i])) throw ValidationError("layer: non-finite latent value");
}

LayerParams LayerParams::initial(std::size_t neurons, ModulationMode m, Parameterization p) {
    LayerParams layer;
    layer.modulation = m;
    layer.parameterization = p;
    if (p == Parameterization::relu_norm) {
        layer.alpha.assign(neurons, 1.0);
        layer.beta.assign(neurons, 0.5);
    } else {
        // sigmoid(4) ~ 0.982; unit amplitude is only reached in the limit
        layer.alpha.assign(neurons, 4.0);
        layer.beta.assign(neurons, 0.0);
    }
    return layer;
}

Modulation modulation_sigmoid(const LayerParams& layer) {
    Modulation m;
    m.amplitude.resize(layer.alpha.size());
    m.phase.resize(layer.beta.size());
    for (std::size_t i = 0; i < layer.alpha.size(); ++i) m.amplitude[i] = sigmoid(layer.alpha[i]);
    for (std::size_t i = 0; i < layer.beta.size(); ++i) m.phase[i] = kTwoPi * sigmoid(layer.beta[i]);
    return m;
}

Modulation modulation_relu_norm(const LayerParams& layer) {
    Modulation m;
    double peak = 0.0;
    for (double a : layer.alpha) peak = std::max(peak, a);
    const double denom = std::max(peak, kReluNormFloor);
    m.amplitude.resize(layer.alpha.size());
    for (std::size_t i = 0; i < layer.alpha.size(); ++i) m.amplitude[i] = std::max(layer.alpha[i], 0.0) / denom;
    m.phase.resize(layer.beta.size());
    for (std::size_t i = 0; i < layer.beta.size(); ++i) m.phase[i] = kTwoPi * layer.beta[i];
    return m;
}

Modulation layer_modulation(const LayerParams& layer) {
    Modulation m = layer.parameterization == Parameterization::sigmoid ? modulation_sigmoid(layer)
                                                                       : modulation_relu_norm(layer);
    if (layer.modulation == ModulationMode::phase_only) std::fill(m.amplitude.begin(), m.amplitude.end(), 1.0);
    return m;
}

std::vector<Complex> layer_transmission(const LayerParams& layer) {
    const Modulation m = layer_modulation(layer);
    std::vector<Complex> t(m.phase.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::polar(m.amplitude[i], m.phase[i]);
    return t;
}

void D2NNModel::validate() const {
    grid.validate();
    if (layers.empty()) throw ValidationError("model: at least one layer is required");
    if (!(delta_z > 0.0)) throw ValidationError("model: delta_z must be > 0");
    if (!(z_in >= 0.0) || !(z_out >= 0.0)) throw ValidationError("model: z_in and z_out must be >= 0");
    if (padding_factor < 2) throw ValidationError("model: padding_factor must be >= 2");
    for (const auto& l : layers) l.validate(grid.size());
}

std::size_t D2NNModel::trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.modulation == ModulationMode::complex ? 2 * l.size() : l.size();
    return n;
}

D2NNModel D2NNModel::initialized(const GridSpec& grid, std::size_t n_layers, double delta_z, ModulationMode m,
                                 Parameterization p) {
    D2NNModel model;
    model.grid = grid;
    model.z_in = model.delta_z = model.z_out = delta_z;
    for (std::size_t l = 0; l < n_layers; ++l) model.layers.push_back(LayerParams::initial(grid.size(), m, p));
    model.validate();
    return model;
}

OpticalStack::OpticalStack(const D2NNModel& geometry)
    : grid_(geometry.grid),
      n_layers_(geometry.layers.size()),
      to_first_(PropagationPlan{geometry.grid, geometry.z_in, geometry.padding_factor}),
      between_(PropagationPlan{geometry.grid, geometry.delta_z, geometry.padding_factor}),
      to_output_(PropagationPlan{geometry.grid, geometry.z_out, geometry.padding_factor}) {}

ForwardTrace OpticalStack::forward(const ComplexField& input, const D2NNModel& model) const {
    if (input.grid != grid_ || model.grid != grid_) throw ValidationError("model_forward: grid mismatch");
    if (model.layers.size() != n_layers_) throw ValidationError("model_forward: layer count differs from stack");
    ForwardTrace trace;
    trace.incident.reserve(n_layers_);
    trace.transmission.reserve(n_layers_);
    ComplexField u = to_first_.forward(input);
    for (std::size_t l = 0; l < n_layers_; ++l) {
        trace.transmission.push_back(layer_transmission(model.layers[l]));
        trace.incident.push_back(u);
        const auto& t = trace.transmission.back();
        for (std::size_t i = 0; i < u.values.size(); ++i) u.values[i] *= t[i];
        u = (l + 1 == n_layers_ ? to_output_ : between_).forward(u);
    }
    trace.output = std::move(u);
    return trace;
}

void accumulate_latent_gradients(const LayerParams& layer, const std::vector<Complex>& transmission,
                                 const std::vector<Complex>& transmission_adjoint, LayerGradients& out) {
    const std::size_t n = layer.size();
    const Modulation mod = layer_modulation(layer);
    const bool sig = layer.parameterization == Parameterization::sigmoid;

    // dL/dphi = Re(conj(tbar) * j t)
    for (std::size_t i = 0; i < n; ++i) {
        const Complex tb = transmission_adjoint[i];
        const double g_phi = std::real(std::conj(tb) * Complex{0.0, 1.0} * transmission[i]);
        double dphi_dbeta = kTwoPi;
        if (sig) {
            const double s = sigmoid(layer.beta[i]);
            dphi_dbeta = kTwoPi * s * (1.0 - s);
        }
        out.beta[i] += g_phi * dphi_dbeta;
    }
    if (layer.modulation == ModulationMode::phase_only) return;

    // dL/da = Re(conj(tbar) * exp(j phi))
    std::vector<double> g_a(n);
    for (std::size_t i = 0; i < n; ++i)
        g_a[i] = std::real(std::conj(transmission_adjoint[i]) * std::polar(1.0, mod.phase[i]));

    if (sig) {
        for (std::size_t i = 0; i < n; ++i) {
            const double s = mod.amplitude[i];
            out.alpha[i] += g_a[i] * s * (1.0 - s);
        }
        return;
    }
    double peak = 0.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (layer.alpha[i] > peak) {
            peak = layer.alpha[i];
            arg = i;
        }
    if (peak <= kReluNormFloor) return;  // a == 0 identically; gradient defined as zero
    double weighted = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (layer.alpha[i] > 0.0) {
            out.alpha[i] += g_a[i] / peak;
            weighted += g_a[i] * layer.alpha[i];
        }
    }
    out.alpha[arg] -= weighted / (peak * peak);
}

ComplexField OpticalStack::backward(const ForwardTrace& trace, const D2NNModel& model,
                                    const ComplexField& output_adjoint, std::vector<LayerGradients>& grads) const {
    if (grads.size() != n_layers_) throw ValidationError("backward: gradient container does not match the model");
    ComplexField g = output_adjoint;
    std::vector<Complex> t_adj(grid_.size());
    for (std::size_t l = n_layers_; l-- > 0;) {
        g = (l + 1 == n_layers_ ? to_output_ : between_).adjoint(g);
        const auto& v = trace.incident[l].values;
        const auto& t = trace.transmission[l];
        for (std::size_t i = 0; i < t_adj.size(); ++i) {
            t_adj[i] = std::conj(v[i]) * g.values[i];
            g.values[i] *= std::conj(t[i]);
        }
        accumulate_latent_gradients(model.layers[l], t, t_adj, grads[l]);
    }
    return to_first_.adjoint(g);
}

ForwardResult model_forward(const ComplexField& input, const D2NNModel& model) {
    model.validate();
    OpticalStack stack(model);
    ForwardTrace trace = stack.forward(input, model);
    ForwardResult r;
    r.intensity = trace.output.intensity();
    r.output_field = std::move(trace.output);
    return r;
}

std::vector<LayerGradients> zero_gradients(const D2NNModel& model) {
    std::vector<LayerGradients> g(model.layers.size());
    for (std::size_t l = 0; l < g.size(); ++l) {
        g[l].alpha.assign(model.layers[l].size(), 0.0);
        g[l].beta.assign(model.layers[l].size(), 0.0);
    }
    return g;
}

}  // namespace d2nn
