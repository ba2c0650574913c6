#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2nn {

using Complex = std::complex<double>;

/// Raised for invalid arguments, shapes or configurations.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces unusable numbers (NaN/Inf).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Uniform sampling grid. All lengths are in units of the wavelength.
struct GridSpec {
    std::size_t n_x = 0;
    std::size_t n_y = 0;
    double dx = 0.53;

    std::size_t size() const { return n_x * n_y; }
    double side_x() const { return static_cast<double>(n_x) * dx; }
    double side_y() const { return static_cast<double>(n_y) * dx; }

    /// Transverse coordinate of sample centers, symmetric about the optical axis.
    double x_at(std::size_t ix) const { return (static_cast<double>(ix) - 0.5 * static_cast<double>(n_x - 1)) * dx; }
    double y_at(std::size_t iy) const { return (static_cast<double>(iy) - 0.5 * static_cast<double>(n_y - 1)) * dx; }

    void validate() const;
    bool operator==(const GridSpec&) const = default;

    static GridSpec square(std::size_t n, double dx = 0.53) { return GridSpec{n, n, dx}; }
};

/// Sampled complex amplitude on a GridSpec, row-major (index = iy * n_x + ix).
struct ComplexField {
    GridSpec grid;
    std::vector<Complex> values;

    ComplexField() = default;
    explicit ComplexField(const GridSpec& g, Complex fill = {0.0, 0.0});
    ComplexField(const GridSpec& g, std::vector<Complex> v);

    Complex& at(std::size_t ix, std::size_t iy) { return values[iy * grid.n_x + ix]; }
    const Complex& at(std::size_t ix, std::size_t iy) const { return values[iy * grid.n_x + ix]; }

    bool all_finite() const;
    std::vector<double> intensity() const;
};

enum class InputEncoding { amplitude, phase };

std::string to_string(InputEncoding e);
InputEncoding encoding_from_string(const std::string& s);

/// Grayscale image with values in [0, 1], row-major.
struct Image {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> pixels;
};

/// Embeds an image as a centered, integer-replicated object on the grid.
/// `object_size` is the side of the region (in samples) available for the object;
/// 0 means the full grid. The replication factor is floor(object_size / image side).
ComplexField encode_input(const Image& image, InputEncoding mode, const GridSpec& grid,
                          std::size_t object_size = 0);

/// Sum of |u|^2 dx^2 over the grid.
double total_power(const ComplexField& field);

/// Fixed-order sum of |u|^2 dx^2 for an intensity image.
double integrated_intensity(std::span<const double> intensity, double dx);

double relative_l2(std::span<const Complex> a, std::span<const Complex> reference);

}  // namespace d2nn
