#pragma once

#include <string>
#include <vector>

#include "d2nn/optics.hpp"
#include "d2nn/propagation.hpp"

namespace d2nn {

enum class ModulationMode { phase_only, complex };
enum class Parameterization { sigmoid, relu_norm };

std::string to_string(ModulationMode m);
std::string to_string(Parameterization p);
ModulationMode modulation_from_string(const std::string& s);
Parameterization parameterization_from_string(const std::string& s);

/// Latent variables of one diffractive layer. alpha drives amplitude, beta drives phase.
struct LayerParams {
    std::vector<double> alpha;
    std::vector<double> beta;
    ModulationMode modulation = ModulationMode::phase_only;
    Parameterization parameterization = Parameterization::relu_norm;

    std::size_t size() const { return beta.size(); }
    void validate(std::size_t expected_size) const;

    /// Phase pi and unit amplitude (or the closest reachable value under sigmoid).
    static LayerParams initial(std::size_t neurons, ModulationMode m, Parameterization p);
};

struct Modulation {
    std::vector<double> amplitude;
    std::vector<double> phase;
};

/// a = sigmoid(alpha), phi = 2 pi sigmoid(beta).
Modulation modulation_sigmoid(const LayerParams& layer);
/// a = ReLU(alpha) / max ReLU(alpha), phi = 2 pi beta.
Modulation modulation_relu_norm(const LayerParams& layer);
/// Modulation under the layer's own parameterization, with a == 1 in phase-only mode.
Modulation layer_modulation(const LayerParams& layer);
std::vector<Complex> layer_transmission(const LayerParams& layer);

inline constexpr double kReluNormFloor = 1e-12;

/// Ordered diffractive layers sharing a grid, with the axial geometry (wavelength units).
struct D2NNModel {
    GridSpec grid;
    std::vector<LayerParams> layers;
    double z_in = 40.0;
    double delta_z = 40.0;
    double z_out = 40.0;
    int padding_factor = 2;

    void validate() const;
    std::size_t trainable_scalars() const;

    static D2NNModel initialized(const GridSpec& grid, std::size_t n_layers, double delta_z, ModulationMode m,
                                 Parameterization p);
};

/// Gradient of a real loss with respect to every latent scalar of a model.
struct LayerGradients {
    std::vector<double> alpha;
    std::vector<double> beta;
};

/// Intermediate fields retained by a forward pass for the adjoint sweep.
struct ForwardTrace {
    std::vector<ComplexField> incident;        ///< field arriving at each layer
    std::vector<std::vector<Complex>> transmission;
    ComplexField output;
};

/// Propagators for one model geometry, reusable across forward/backward passes.
class OpticalStack {
public:
    explicit OpticalStack(const D2NNModel& geometry);

    ForwardTrace forward(const ComplexField& input, const D2NNModel& model) const;

    /// Back-propagates `output_adjoint` (dL/dRe u + j dL/dIm u at the output plane).
    /// Accumulates into `grads` (sized like the model). Returns the adjoint at the input plane.
    ComplexField backward(const ForwardTrace& trace, const D2NNModel& model, const ComplexField& output_adjoint,
                          std::vector<LayerGradients>& grads) const;

private:
    GridSpec grid_;
    std::size_t n_layers_;
    Propagator to_first_;
    Propagator between_;
    Propagator to_output_;
};

struct ForwardResult {
    ComplexField output_field;
    std::vector<double> intensity;
};

ForwardResult model_forward(const ComplexField& input, const D2NNModel& model);

std::vector<LayerGradients> zero_gradients(const D2NNModel& model);

/// Chain rule from transmission adjoints to latent gradients for one layer.
void accumulate_latent_gradients(const LayerParams& layer, const std::vector<Complex>& transmission,
                                 const std::vector<Complex>& transmission_adjoint, LayerGradients& out);

}  // namespace d2nn
