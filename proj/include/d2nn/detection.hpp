#pragma once

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

#include "d2nn/optics.hpp"

namespace d2nn {

struct DetectorRegion {
    double center_x = 0.0;  ///< wavelengths, relative to the optical axis
    double center_y = 0.0;
    double side = 6.4;
};

/// One square detector per class on the output plane. Region index == class label.
class DetectorLayout {
public:
    DetectorLayout() = default;
    DetectorLayout(const GridSpec& grid, std::vector<DetectorRegion> regions);

    /// 3-4-3 arrangement for 10 classes (square-ish rows otherwise), detectors of side
    /// 6.4 and a layout region of 53.3 wavelengths at 200 neurons per side, scaled with the grid.
    static DetectorLayout standard(const GridSpec& grid, std::size_t classes = 10);

    const GridSpec& grid() const { return grid_; }
    const std::vector<DetectorRegion>& regions() const { return regions_; }
    std::size_t classes() const { return regions_.size(); }
    /// Flat sample indices whose centers lie strictly inside region `l`.
    const std::vector<std::size_t>& samples(std::size_t l) const { return masks_[l]; }

    nlohmann::json to_json() const;
    static DetectorLayout from_json(const GridSpec& grid, const nlohmann::json& j);

private:
    GridSpec grid_;
    std::vector<DetectorRegion> regions_;
    std::vector<std::vector<std::size_t>> masks_;
};

/// Per-label target intensity image.
struct TargetMap {
    GridSpec grid;
    std::vector<double> values;
};

enum class LossKind { mse, sce };
std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);

std::vector<double> detector_signals(std::span<const double> intensity, const DetectorLayout& layout);
std::size_t classify(std::span<const double> signals);

double mse_loss(std::span<const double> output, const TargetMap& target);
std::vector<double> normalize_detectors(std::span<const double> signals);
double sce_loss(std::span<const double> normalized, std::span<const double> one_hot);
/// Convenience overload taking the label index.
double sce_loss(std::span<const double> normalized, std::size_t label);
TargetMap target_map(std::size_t label, const DetectorLayout& layout);

/// Loss of one sample together with dL/dS for every output-plane intensity sample.
struct LossEvaluation {
    double loss = 0.0;
    std::vector<double> signals;
    std::vector<double> intensity_gradient;
};

LossEvaluation evaluate_loss(LossKind kind, std::span<const double> intensity, std::size_t label,
                             const DetectorLayout& layout);

/// Softmax cross-entropy on logits plus its gradient with respect to the logits.
double softmax_cross_entropy(std::span<const double> logits, std::size_t label, std::vector<double>* grad);
std::vector<double> softmax(std::span<const double> logits);

/// Vector-Jacobian product of normalize_detectors.
std::vector<double> normalize_detectors_backward(std::span<const double> signals,
                                                 std::span<const double> grad_normalized);

}  // namespace d2nn
