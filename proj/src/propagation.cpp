#include "d2nn/propagation.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace d2nn {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double dft_frequency(std::size_t k, std::size_t n, double dx) {
    const auto ki = static_cast<double>(k);
    const auto ni = static_cast<double>(n);
    return (k < (n + 1) / 2 ? ki : ki - ni) / (ni * dx);
}

// 1 below `keep`, 0 beyond `cut`, cos^2 ramp in between. keep == cut is a hard edge.
double walkoff_weight(double walkoff, double keep, double cut) {
    if (walkoff <= keep) return 1.0;
    if (walkoff >= cut) return 0.0;
    const double t = (walkoff - keep) / (cut - keep);
    const double c = std::cos(0.5 * std::numbers::pi * t);
    return c * c;
}

struct FftwBuffer {
    fftw_complex* ptr = nullptr;
    explicit FftwBuffer(std::size_t n) : ptr(fftw_alloc_complex(n)) {
        if (!ptr) throw std::bad_alloc();
    }
    ~FftwBuffer() { fftw_free(ptr); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;
    Complex* data() { return reinterpret_cast<Complex*>(ptr); }
};

struct Plan {
    fftw_plan p = nullptr;
    Plan() = default;
    explicit Plan(fftw_plan q) : p(q) {
        if (!p) throw std::runtime_error("FFTW plan creation failed");
    }
    ~Plan() {
        if (p) fftw_destroy_plan(p);
    }
    Plan(const Plan&) = delete;
    Plan& operator=(const Plan&) = delete;
    Plan& operator=(Plan&& o) noexcept {
        std::swap(p, o.p);
        return *this;
    }
};

}  // namespace

void PropagationPlan::validate() const {
    grid.validate();
    if (!(z >= 0.0) || !std::isfinite(z)) throw ValidationError("propagation: z must be finite and >= 0");
    if (padding_factor < 2) throw ValidationError("propagation: padding_factor must be >= 2");
}

struct Propagator::Impl {
    PropagationPlan plan;
    std::size_t nx, ny, px, py;
    std::vector<Complex> transfer;
    FftwBuffer buffer;
    // FFTW_ESTIMATE keeps plan selection, and therefore rounding, identical across runs.
    Plan rows_fwd, cols_fwd, cols_bwd, rows_bwd;

    explicit Impl(const PropagationPlan& p)
        : plan(p),
          nx(p.grid.n_x),
          ny(p.grid.n_y),
          px(p.grid.n_x * static_cast<std::size_t>(p.padding_factor)),
          py(p.grid.n_y * static_cast<std::size_t>(p.padding_factor)),
          buffer(px * py) {
        const int n_row[] = {static_cast<int>(px)};
        const int n_col[] = {static_cast<int>(py)};
        auto* b = buffer.ptr;
        // Only the first ny rows carry data before the forward transform, and only they
        // are needed after the inverse column pass.
        rows_fwd = Plan(fftw_plan_many_dft(1, n_row, static_cast<int>(ny), b, nullptr, 1, static_cast<int>(px),
                                                b, nullptr, 1, static_cast<int>(px), FFTW_FORWARD, FFTW_ESTIMATE));
        rows_bwd = Plan(fftw_plan_many_dft(1, n_row, static_cast<int>(ny), b, nullptr, 1, static_cast<int>(px),
                                                b, nullptr, 1, static_cast<int>(px), FFTW_BACKWARD, FFTW_ESTIMATE));
        cols_fwd = Plan(fftw_plan_many_dft(1, n_col, static_cast<int>(px), b, nullptr, static_cast<int>(px), 1,
                                                b, nullptr, static_cast<int>(px), 1, FFTW_FORWARD, FFTW_ESTIMATE));
        cols_bwd = Plan(fftw_plan_many_dft(1, n_col, static_cast<int>(px), b, nullptr, static_cast<int>(px), 1,
                                                b, nullptr, static_cast<int>(px), 1, FFTW_BACKWARD, FFTW_ESTIMATE));
        build_transfer();
    }

    void build_transfer() {
        const double dx = plan.grid.dx;
        const double z = plan.z;
        const double keep_x = static_cast<double>(nx) * dx, cut_x = static_cast<double>(px - nx) * dx;
        const double keep_y = static_cast<double>(ny) * dx, cut_y = static_cast<double>(py - ny) * dx;
        const int replicas = plan.source_model == SourceModel::point_sources ? static_cast<int>(std::ceil(dx + 0.5)) : 0;
        const double scale = 1.0 / static_cast<double>(px * py);

        transfer.assign(px * py, Complex{});
        for (std::size_t ky = 0; ky < py; ++ky) {
            const double fy = dft_frequency(ky, py, dx);
            for (std::size_t kx = 0; kx < px; ++kx) {
                const double fx = dft_frequency(kx, px, dx);
                Complex h{};
                for (int my = -replicas; my <= replicas; ++my) {
                    const double gy = fy + my / dx;
                    for (int mx = -replicas; mx <= replicas; ++mx) {
                        const double gx = fx + mx / dx;
                        const double arg = 1.0 - gx * gx - gy * gy;
                        if (arg <= 0.0) continue;  // evanescent
                        const double kz = std::sqrt(arg);
                        double w = 1.0;
                        if (plan.anti_wrap_taper && z > 0.0) {
                            w = walkoff_weight(z * std::abs(gx) / kz, keep_x, cut_x) *
                                walkoff_weight(z * std::abs(gy) / kz, keep_y, cut_y);
                            if (w == 0.0) continue;
                        }
                        h += w * std::polar(1.0, kTwoPi * z * kz);
                    }
                }
                transfer[ky * px + kx] = h * scale;
            }
        }
    }

    ComplexField apply(const ComplexField& in, bool conjugate) {
        if (in.grid != plan.grid) throw ValidationError("propagation: field grid does not match plan");
        Complex* b = buffer.data();
        std::fill(b, b + px * py, Complex{});
        for (std::size_t iy = 0; iy < ny; ++iy)
            std::copy_n(in.values.data() + iy * nx, nx, b + iy * px);
        fftw_execute(rows_fwd.p);
        fftw_execute(cols_fwd.p);
        if (conjugate)
            for (std::size_t i = 0; i < px * py; ++i) b[i] *= std::conj(transfer[i]);
        else
            for (std::size_t i = 0; i < px * py; ++i) b[i] *= transfer[i];
        fftw_execute(cols_bwd.p);
        fftw_execute(rows_bwd.p);
        ComplexField out(plan.grid);
        for (std::size_t iy = 0; iy < ny; ++iy)
            std::copy_n(b + iy * px, nx, out.values.data() + iy * nx);
        return out;
    }
};

Propagator::Propagator(const PropagationPlan& plan) {
    plan.validate();
    impl_ = std::make_unique<Impl>(plan);
}
Propagator::~Propagator() = default;
Propagator::Propagator(Propagator&&) noexcept = default;
Propagator& Propagator::operator=(Propagator&&) noexcept = default;

const PropagationPlan& Propagator::plan() const { return impl_->plan; }
ComplexField Propagator::forward(const ComplexField& field) const { return impl_->apply(field, false); }
ComplexField Propagator::adjoint(const ComplexField& field) const { return impl_->apply(field, true); }
const std::vector<Complex>& Propagator::transfer_function() const { return impl_->transfer; }

ComplexField asm_propagate(const ComplexField& field, const PropagationPlan& plan) {
    if (!field.all_finite()) throw ValidationError("asm_propagate: non-finite input field");
    return Propagator(plan).forward(field);
}

Complex rs_kernel(double rx, double ry, double z) {
    const double r2 = rx * rx + ry * ry + z * z;
    const double r = std::sqrt(r2);
    // (z / r^2) * (1/(2 pi r) + 1/j) * exp(j 2 pi r), wavelength = 1
    const Complex amp = (z / r2) * Complex{1.0 / (kTwoPi * r), -1.0};
    return amp * std::polar(1.0, kTwoPi * r);
}

ComplexField rs_propagate(const ComplexField& field, double z) {
    if (!(z > 0.0)) throw ValidationError("rs_propagate: z must be > 0 (kernel is singular at z = 0)");
    if (!field.all_finite()) throw ValidationError("rs_propagate: non-finite input field");
    const GridSpec& g = field.grid;
    const double area = g.dx * g.dx;
    ComplexField out(g);
    for (std::size_t oy = 0; oy < g.n_y; ++oy) {
        for (std::size_t ox = 0; ox < g.n_x; ++ox) {
            Complex acc{};
            for (std::size_t iy = 0; iy < g.n_y; ++iy) {
                const double ry = g.y_at(oy) - g.y_at(iy);
                for (std::size_t ix = 0; ix < g.n_x; ++ix) {
                    const Complex u = field.at(ix, iy);
                    if (u == Complex{}) continue;
                    acc += u * rs_kernel(g.x_at(ox) - g.x_at(ix), ry, z);
                }
            }
            out.at(ox, oy) = acc * area;
        }
    }
    return out;
}

double impulse_half_width(double z, double threshold, double dx) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("impulse_half_width: threshold must be in (0,1)");
    if (!(z >= 0.0)) throw ValidationError("impulse_half_width: z must be >= 0");
    // Window large enough that the far-field estimate rho^2/(z^2+rho^2) exceeds any useful threshold.
    const double half_width = std::max(16.0 * dx, 6.0 * z);
    std::size_t n = static_cast<std::size_t>(std::ceil(2.0 * half_width / dx));
    n = (n + 63) / 64 * 64;
    const GridSpec grid = GridSpec::square(n, dx);
    PropagationPlan plan{grid, z, 2, SourceModel::band_limited, true};
    Propagator prop(plan);

    ComplexField impulse(grid);
    const std::size_t c = n / 2;
    impulse.at(c, c) = 1.0;
    const ComplexField out = prop.forward(impulse);

    // Power of the impulse on the propagating band (Parseval, unit spectrum in every bin).
    std::size_t band_bins = 0;
    const std::size_t pn = n * 2;
    for (std::size_t ky = 0; ky < pn; ++ky) {
        const double fy = dft_frequency(ky, pn, dx);
        for (std::size_t kx = 0; kx < pn; ++kx) {
            const double fx = dft_frequency(kx, pn, dx);
            if (fx * fx + fy * fy < 1.0) ++band_bins;
        }
    }
    const double band_power = static_cast<double>(band_bins) / static_cast<double>(pn * pn) * dx * dx;

    std::vector<std::pair<double, double>> radial;  // (distance, power)
    radial.reserve(grid.size());
    for (std::size_t iy = 0; iy < n; ++iy)
        for (std::size_t ix = 0; ix < n; ++ix) {
            const double rx = grid.x_at(ix) - grid.x_at(c), ry = grid.y_at(iy) - grid.y_at(c);
            radial.emplace_back(std::hypot(rx, ry), std::norm(out.at(ix, iy)) * dx * dx);
        }
    std::stable_sort(radial.begin(), radial.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double acc = 0.0;
    for (const auto& [r, p] : radial) {
        acc += p;
        if (acc >= threshold * band_power) return r + 0.5 * dx;
    }
    return half_width;
}

}  // namespace d2nn
