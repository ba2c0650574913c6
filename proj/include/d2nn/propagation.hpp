#pragma once

#include <memory>
#include <vector>

#include "d2nn/optics.hpp"

namespace d2nn {

/// How the samples of a field are interpreted when building the transfer function.
///  - point_sources: every sample is a secondary point source (the neuron model). Spectral
///    replicas of the sampled field that still fall inside the propagating band are folded
///    back into the baseband transfer function, so that the transfer-function propagator
///    matches a direct Rayleigh-Sommerfeld sum over the samples.
///  - band_limited: samples of a band-limited field; only the baseband copy is kept.
enum class SourceModel { point_sources, band_limited };

struct PropagationPlan {
    GridSpec grid;
    double z = 0.0;
    int padding_factor = 2;
    SourceModel source_model = SourceModel::point_sources;
    /// Geometric anti-wrap window: plane-wave components whose lateral walk-off
    /// z*f/sqrt(1-f^2) exceeds the grid side are tapered out before they can wrap
    /// around the padded window. Evanescent components are always zeroed.
    bool anti_wrap_taper = true;

    void validate() const;
};

/// Transfer-function (angular spectrum) propagator with a precomputed kernel.
/// Not thread-safe: it owns scratch buffers and FFTW plans.
class Propagator {
public:
    explicit Propagator(const PropagationPlan& plan);
    ~Propagator();
    Propagator(Propagator&&) noexcept;
    Propagator& operator=(Propagator&&) noexcept;
    Propagator(const Propagator&) = delete;
    Propagator& operator=(const Propagator&) = delete;

    const PropagationPlan& plan() const;

    ComplexField forward(const ComplexField& field) const;
    /// Hermitian adjoint of forward(): same transform with the conjugated transfer function.
    ComplexField adjoint(const ComplexField& field) const;

    /// Transfer function on the padded DFT grid (row-major, n_y*pad rows of n_x*pad).
    const std::vector<Complex>& transfer_function() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// One-shot propagation. Rejects non-finite input.
ComplexField asm_propagate(const ComplexField& field, const PropagationPlan& plan);

/// Direct Rayleigh-Sommerfeld summation over all sample pairs (O(N^2) in samples).
/// Output samples are evaluated on the input grid translated by z.
ComplexField rs_propagate(const ComplexField& field, double z);

/// Rayleigh-Sommerfeld secondary-source kernel for a transverse offset (rx, ry) and distance z.
Complex rs_kernel(double rx, double ry, double z);

/// Radius (wavelengths) of the disk that receives `threshold` of the propagating power of a
/// single-sample impulse after distance z.
double impulse_half_width(double z, double threshold, double dx = 0.53);

}  // namespace d2nn
