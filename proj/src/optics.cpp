#include "d2nn/optics.hpp"

#include <cmath>
#include <numbers>

namespace d2nn {

void GridSpec::validate() const {
    if (n_x < 1 || n_y < 1) throw ValidationError("grid: n_x and n_y must be >= 1");
    if (!(dx > 0.0) || !std::isfinite(dx)) throw ValidationError("grid: dx must be positive and finite");
}

ComplexField::ComplexField(const GridSpec& g, Complex fill) : grid(g), values(g.size(), fill) { g.validate(); }

ComplexField::ComplexField(const GridSpec& g, std::vector<Complex> v) : grid(g), values(std::move(v)) {
    g.validate();
    if (values.size() != g.size()) throw ValidationError("field: value count does not match grid");
}

bool ComplexField::all_finite() const {
    for (const auto& v : values)
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    return true;
}

std::vector<double> ComplexField::intensity() const {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::norm(values[i]);
    return out;
}

std::string to_string(InputEncoding e) { return e == InputEncoding::amplitude ? "amplitude" : "phase"; }

InputEncoding encoding_from_string(const std::string& s) {
    if (s == "amplitude") return InputEncoding::amplitude;
    if (s == "phase") return InputEncoding::phase;
    throw ValidationError("unknown input encoding '" + s + "' (expected amplitude|phase)");
}

ComplexField encode_input(const Image& image, InputEncoding mode, const GridSpec& grid, std::size_t object_size) {
    grid.validate();
    if (image.rows == 0 || image.cols == 0 || image.pixels.size() != image.rows * image.cols)
        throw ValidationError("encode_input: malformed image");
    for (double p : image.pixels)
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("encode_input: pixel value outside [0,1]");

    const std::size_t region = object_size == 0 ? std::min(grid.n_x, grid.n_y) : object_size;
    const std::size_t factor = region / std::max(image.rows, image.cols);
    if (factor == 0 || image.cols * factor > grid.n_x || image.rows * factor > grid.n_y)
        throw ValidationError("encode_input: object region does not fit the grid");

    const Complex background = mode == InputEncoding::amplitude ? Complex{0.0, 0.0} : Complex{1.0, 0.0};
    ComplexField field(grid, background);
    const std::size_t off_x = (grid.n_x - image.cols * factor) / 2;
    const std::size_t off_y = (grid.n_y - image.rows * factor) / 2;
    for (std::size_t r = 0; r < image.rows; ++r) {
        for (std::size_t c = 0; c < image.cols; ++c) {
            const double p = image.pixels[r * image.cols + c];
            const Complex u = mode == InputEncoding::amplitude
                                  ? Complex{p, 0.0}
                                  : std::polar(1.0, 2.0 * std::numbers::pi * p);
            for (std::size_t dy = 0; dy < factor; ++dy)
                for (std::size_t dxi = 0; dxi < factor; ++dxi)
                    field.at(off_x + c * factor + dxi, off_y + r * factor + dy) = u;
        }
    }
    return field;
}

double total_power(const ComplexField& field) {
    double acc = 0.0;
    for (const auto& v : field.values) acc += std::norm(v);
    return acc * field.grid.dx * field.grid.dx;
}

double integrated_intensity(std::span<const double> intensity, double dx) {
    double acc = 0.0;
    for (double v : intensity) acc += v;
    return acc * dx * dx;
}

double relative_l2(std::span<const Complex> a, std::span<const Complex> reference) {
    if (a.size() != reference.size()) throw ValidationError("relative_l2: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::norm(a[i] - reference[i]);
        den += std::norm(reference[i]);
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace d2nn
