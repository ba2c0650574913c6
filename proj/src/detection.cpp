#include "d2nn/detection.hpp"

#include <algorithm>
#include <cmath>

namespace d2nn {
namespace {

constexpr double kReferenceNeurons = 200.0;
constexpr double kReferenceDetectorSide = 6.4;
constexpr double kReferenceLayoutSide = 53.3;
constexpr double kNormalizedPeak = 10.0;

// Nearest sample-center coordinate along one axis.
double snap(double v, std::size_t n, double dx) {
    const double origin = -0.5 * static_cast<double>(n - 1) * dx;
    const double k = std::round((v - origin) / dx);
    return origin + std::clamp(k, 0.0, static_cast<double>(n - 1)) * dx;
}

std::vector<std::size_t> row_sizes(std::size_t classes) {
    if (classes == 10) return {3, 4, 3};
    const auto per_row = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(classes))));
    std::vector<std::size_t> rows;
    for (std::size_t left = classes; left > 0; left -= std::min(left, per_row)) rows.push_back(std::min(left, per_row));
    return rows;
}

}  // namespace

DetectorLayout::DetectorLayout(const GridSpec& grid, std::vector<DetectorRegion> regions)
    : grid_(grid), regions_(std::move(regions)) {
    grid_.validate();
    if (regions_.empty()) throw ValidationError("detector layout: at least one region is required");
    const double hx = 0.5 * grid_.side_x(), hy = 0.5 * grid_.side_y();
    for (std::size_t l = 0; l < regions_.size(); ++l) {
        const auto& r = regions_[l];
        if (!(r.side > 0.0)) throw ValidationError("detector layout: region side must be > 0");
        if (std::abs(r.center_x) + 0.5 * r.side > hx || std::abs(r.center_y) + 0.5 * r.side > hy)
            throw ValidationError("detector layout: region " + std::to_string(l) + " extends beyond the output grid");
        for (std::size_t m = 0; m < l; ++m) {
            const auto& q = regions_[m];
            const double sep = 0.5 * (r.side + q.side);
            if (std::abs(r.center_x - q.center_x) < sep && std::abs(r.center_y - q.center_y) < sep)
                throw ValidationError("detector layout: regions " + std::to_string(m) + " and " + std::to_string(l) +
                                      " overlap");
        }
    }
    masks_.resize(regions_.size());
    for (std::size_t l = 0; l < regions_.size(); ++l) {
        const auto& r = regions_[l];
        const double h = 0.5 * r.side;
        for (std::size_t iy = 0; iy < grid_.n_y; ++iy) {
            if (!(std::abs(grid_.y_at(iy) - r.center_y) < h)) continue;
            for (std::size_t ix = 0; ix < grid_.n_x; ++ix)
                if (std::abs(grid_.x_at(ix) - r.center_x) < h) masks_[l].push_back(iy * grid_.n_x + ix);
        }
        if (masks_[l].empty())
            throw ValidationError("detector layout: region " + std::to_string(l) + " contains no sample centers");
    }
}

DetectorLayout DetectorLayout::standard(const GridSpec& grid, std::size_t classes) {
    grid.validate();
    if (classes == 0) throw ValidationError("detector layout: class count must be >= 1");
    const double scale = static_cast<double>(std::min(grid.n_x, grid.n_y)) / kReferenceNeurons;
    const double side = kReferenceDetectorSide * scale;
    const double span = kReferenceLayoutSide * scale - side;  // center-to-center extent
    const auto rows = row_sizes(classes);
    std::vector<DetectorRegion> regions;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double y = rows.size() == 1 ? 0.0 : -0.5 * span + span * static_cast<double>(r) / (rows.size() - 1);
        for (std::size_t c = 0; c < rows[r]; ++c) {
            const double x = rows[r] == 1 ? 0.0 : -0.5 * span + span * static_cast<double>(c) / (rows[r] - 1);
            regions.push_back({snap(x, grid.n_x, grid.dx), snap(y, grid.n_y, grid.dx), side});
        }
    }
    return DetectorLayout(grid, std::move(regions));
}

nlohmann::json DetectorLayout::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : regions_) arr.push_back({{"x", r.center_x}, {"y", r.center_y}, {"side", r.side}});
    return arr;
}

DetectorLayout DetectorLayout::from_json(const GridSpec& grid, const nlohmann::json& j) {
    if (!j.is_array()) throw ValidationError("detector layout: expected an array of {x, y, side}");
    std::vector<DetectorRegion> regions;
    for (const auto& e : j) {
        for (const auto& [key, _] : e.items())
            if (key != "x" && key != "y" && key != "side")
                throw ValidationError("detector layout: unknown key '" + key + "'");
        regions.push_back({e.at("x").get<double>(), e.at("y").get<double>(), e.at("side").get<double>()});
    }
    return DetectorLayout(grid, std::move(regions));
}

std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "sce"; }

LossKind loss_from_string(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "sce") return LossKind::sce;
    throw ValidationError("unknown loss kind '" + s + "' (expected mse|sce)");
}

std::vector<double> detector_signals(std::span<const double> intensity, const DetectorLayout& layout) {
    if (intensity.size() != layout.grid().size()) throw ValidationError("detector_signals: grid mismatch");
    const double area = layout.grid().dx * layout.grid().dx;
    std::vector<double> out(layout.classes(), 0.0);
    for (std::size_t l = 0; l < out.size(); ++l) {
        double acc = 0.0;
        for (std::size_t i : layout.samples(l)) acc += intensity[i];
        out[l] = acc * area;
    }
    return out;
}

std::size_t classify(std::span<const double> signals) {
    if (signals.empty()) throw ValidationError("classify: empty signal vector");
    std::size_t best = 0;
    for (std::size_t l = 1; l < signals.size(); ++l)
        if (signals[l] > signals[best]) best = l;
    return best;
}

double mse_loss(std::span<const double> output, const TargetMap& target) {
    if (output.size() != target.values.size()) throw ValidationError("mse_loss: grid mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < output.size(); ++i) {
        const double d = output[i] - target.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(output.size());
}

std::vector<double> normalize_detectors(std::span<const double> signals) {
    double peak = 0.0;
    for (double v : signals) {
        if (v < 0.0) throw ValidationError("normalize_detectors: negative detector signal");
        peak = std::max(peak, v);
    }
    std::vector<double> out(signals.size(), 0.0);
    if (peak == 0.0) return out;
    for (std::size_t l = 0; l < out.size(); ++l) out[l] = signals[l] / peak * kNormalizedPeak;
    return out;
}

std::vector<double> normalize_detectors_backward(std::span<const double> signals,
                                                 std::span<const double> grad_normalized) {
    std::vector<double> grad(signals.size(), 0.0);
    const std::size_t k = classify(signals);
    const double peak = signals[k];
    if (peak == 0.0) return grad;
    double weighted = 0.0;
    for (std::size_t l = 0; l < signals.size(); ++l) {
        grad[l] = kNormalizedPeak * grad_normalized[l] / peak;
        weighted += grad_normalized[l] * signals[l];
    }
    grad[k] -= kNormalizedPeak * weighted / (peak * peak);
    return grad;
}

std::vector<double> softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
    for (double& v : p) v /= z;
    return p;
}

double softmax_cross_entropy(std::span<const double> logits, std::size_t label, std::vector<double>* grad) {
    if (label >= logits.size()) throw ValidationError("softmax_cross_entropy: label out of range");
    const auto top = std::max_element(logits.begin(), logits.end());
    const double m = *top;
    // log-sum-exp as m + log1p(sum over the other entries) keeps small losses accurate
    double rest = 0.0;
    for (auto it = logits.begin(); it != logits.end(); ++it)
        if (it != top) rest += std::exp(*it - m);
    const double loss = (m - logits[label]) + std::log1p(rest);
    if (grad) {
        *grad = softmax(logits);
        (*grad)[label] -= 1.0;
    }
    return loss;
}

double sce_loss(std::span<const double> normalized, std::span<const double> one_hot) {
    if (normalized.size() != one_hot.size() || normalized.empty()) throw ValidationError("sce_loss: size mismatch");
    std::size_t label = one_hot.size();
    for (std::size_t l = 0; l < one_hot.size(); ++l) {
        if (one_hot[l] == 1.0 && label == one_hot.size())
            label = l;
        else if (one_hot[l] != 0.0)
            throw ValidationError("sce_loss: ground truth is not one-hot");
    }
    if (label == one_hot.size()) throw ValidationError("sce_loss: ground truth is not one-hot");
    return softmax_cross_entropy(normalized, label, nullptr);
}

double sce_loss(std::span<const double> normalized, std::size_t label) {
    return softmax_cross_entropy(normalized, label, nullptr);
}

TargetMap target_map(std::size_t label, const DetectorLayout& layout) {
    if (label >= layout.classes()) throw ValidationError("target_map: label out of range");
    TargetMap t{layout.grid(), std::vector<double>(layout.grid().size(), 0.0)};
    for (std::size_t i : layout.samples(label)) t.values[i] = 1.0;
    return t;
}

LossEvaluation evaluate_loss(LossKind kind, std::span<const double> intensity, std::size_t label,
                             const DetectorLayout& layout) {
    LossEvaluation e;
    e.signals = detector_signals(intensity, layout);
    e.intensity_gradient.assign(intensity.size(), 0.0);
    if (kind == LossKind::mse) {
        const TargetMap g = target_map(label, layout);
        e.loss = mse_loss(intensity, g);
        const double k = 2.0 / static_cast<double>(intensity.size());
        for (std::size_t i = 0; i < intensity.size(); ++i) e.intensity_gradient[i] = k * (intensity[i] - g.values[i]);
        return e;
    }
    const std::vector<double> normalized = normalize_detectors(e.signals);
    std::vector<double> g_norm;
    e.loss = softmax_cross_entropy(normalized, label, &g_norm);
    const std::vector<double> g_sig = normalize_detectors_backward(e.signals, g_norm);
    const double area = layout.grid().dx * layout.grid().dx;
    for (std::size_t l = 0; l < layout.classes(); ++l)
        for (std::size_t i : layout.samples(l)) e.intensity_gradient[i] = g_sig[l] * area;
    return e;
}

}  // namespace d2nn
