#pragma once

// Uniform cell-centred grids, conservative remapping and discrete convolution.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <fftw3.h>

namespace vdrop {

/// Density values below this are rejected; anything in (-kNegativeRejection, 0) is clamped.
inline constexpr double kNegativeRejection = 1e-12;

/// Direct summation is used while |a|*|b| stays at or below this many products.
inline constexpr std::size_t kDirectConvolutionWork = 4096 * 64;

struct Axis {
    double lo = 0.0;
    double h = 0.0;
    std::size_t cells = 0;

    double hi() const noexcept { return lo + static_cast<double>(cells) * h; }
    double edge(std::size_t i) const noexcept { return lo + static_cast<double>(i) * h; }
    double center(std::size_t i) const noexcept { return lo + (static_cast<double>(i) + 0.5) * h; }
    bool empty() const noexcept { return cells == 0; }

    static Axis over(double lo, double hi, std::size_t cells) {
        if (cells == 0 || !(hi > lo)) throw std::invalid_argument("Axis::over: need hi > lo and cells > 0");
        return Axis{lo, (hi - lo) / static_cast<double>(cells), cells};
    }

    bool operator==(const Axis&) const = default;
};

/// Cell-centred density on a uniform axis.
struct Grid1D {
    Axis axis;
    std::vector<double> density;

    Grid1D() = default;

    Grid1D(Axis ax, std::vector<double> values) : axis(ax), density(std::move(values)) {
        if (axis.cells < 2) throw std::invalid_argument("Grid1D: need at least two cells");
        if (!(axis.h > 0.0)) throw std::invalid_argument("Grid1D: spacing must be positive");
        if (density.size() != axis.cells) throw std::invalid_argument("Grid1D: value count does not match cells");
        for (double& v : density) {
            if (!(v >= -kNegativeRejection)) throw std::invalid_argument("Grid1D: negative density value");
            if (v < 0.0) v = 0.0;
        }
    }

    double mass() const { return std::accumulate(density.begin(), density.end(), 0.0) * axis.h; }
};

/// Spreads `mass`, uniformly distributed over [a, b], onto `out` (cell masses on
/// `dst`). A degenerate interval deposits into the containing cell. Returns the
/// portion that falls outside the axis.
inline double deposit_interval(double a, double b, double mass, const Axis& dst, std::span<double> out) {
    if (mass == 0.0) return 0.0;
    const double lo = dst.lo;
    const double hi = dst.hi();
    if (!(b > a)) {
        if (a < lo || a > hi || dst.cells == 0) return mass;
        const auto j = std::min<std::size_t>(static_cast<std::size_t>((a - lo) / dst.h), dst.cells - 1);
        out[j] += mass;
        return 0.0;
    }
    if (b <= lo || a >= hi || dst.cells == 0) return mass;
    const double width = b - a;
    const double outside = (std::max(0.0, std::min(b, lo) - a) + std::max(0.0, b - std::max(a, hi))) / width;
    const double inside_mass = mass * (1.0 - outside);
    const double ca = std::max(a, lo);
    const double cb = std::min(b, hi);
    auto j0 = static_cast<std::size_t>(std::max(0.0, std::floor((ca - lo) / dst.h)));
    auto j1 = static_cast<std::size_t>(std::max(0.0, std::ceil((cb - lo) / dst.h) - 1.0));
    j0 = std::min(j0, dst.cells - 1);
    j1 = std::clamp(j1, j0, dst.cells - 1);
    if (j0 == j1) {
        out[j0] += inside_mass;
        return mass - inside_mass;
    }
    double placed = 0.0;
    for (std::size_t j = j0; j < j1; ++j) {
        const double overlap = std::min(cb, dst.edge(j + 1)) - std::max(ca, dst.edge(j));
        const double piece = overlap > 0.0 ? mass * overlap / width : 0.0;
        out[j] += piece;
        placed += piece;
    }
    out[j1] += std::max(0.0, inside_mass - placed);
    return mass - inside_mass;
}

/// Conservative (overlap-weighted) transfer of cell masses between axes.
/// Accumulates into `dst_masses`; returns mass that lands outside `dst`.
inline double remap_masses(const Axis& src, std::span<const double> src_masses, const Axis& dst,
                           std::span<double> dst_masses) {
    double lost = 0.0;
    for (std::size_t i = 0; i < src.cells; ++i) {
        if (src_masses[i] == 0.0) continue;
        lost += deposit_interval(src.edge(i), src.edge(i + 1), src_masses[i], dst, dst_masses);
    }
    return lost;
}

namespace detail {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwRealDeleter {
    void operator()(double* p) const noexcept { fftw_free(p); }
};
struct FftwComplexDeleter {
    void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
};

using RealBuffer = std::unique_ptr<double[], FftwRealDeleter>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwComplexDeleter>;

inline RealBuffer alloc_real(std::size_t n) { return RealBuffer(fftw_alloc_real(n)); }
inline ComplexBuffer alloc_complex(std::size_t n) { return ComplexBuffer(fftw_alloc_complex(n)); }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

inline void direct_convolve(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double ai = a[i];
        if (ai == 0.0) continue;
        double* dst = out.data() + i;
        for (std::size_t j = 0; j < b.size(); ++j) dst[j] += ai * b[j];
    }
}

}  // namespace detail

/// Convolves many signals against one fixed kernel. The kernel spectrum is
/// computed once; `convolve` may be called concurrently from several threads.
class KernelConvolver {
  public:
    KernelConvolver(std::span<const double> kernel, std::size_t max_signal)
        : kernel_(kernel.begin(), kernel.end()), max_signal_(max_signal) {
        if (kernel_.empty()) throw std::invalid_argument("KernelConvolver: empty kernel");
        if (kernel_.size() * max_signal_ <= kDirectConvolutionWork) return;
        size_ = detail::next_pow2(max_signal_ + kernel_.size() - 1);
        auto real = detail::alloc_real(size_);
        auto spec = detail::alloc_complex(size_ / 2 + 1);
        {
            std::lock_guard lock(detail::fftw_planner_mutex());
            forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(size_), real.get(), spec.get(), FFTW_ESTIMATE);
            backward_ = fftw_plan_dft_c2r_1d(static_cast<int>(size_), spec.get(), real.get(), FFTW_ESTIMATE);
        }
        std::fill(real.get(), real.get() + size_, 0.0);
        std::copy(kernel_.begin(), kernel_.end(), real.get());
        fftw_execute_dft_r2c(forward_, real.get(), spec.get());
        kernel_spectrum_.resize(size_ / 2 + 1);
        for (std::size_t i = 0; i < kernel_spectrum_.size(); ++i)
            kernel_spectrum_[i] = {spec[i][0], spec[i][1]};
    }

    KernelConvolver(const KernelConvolver&) = delete;
    KernelConvolver& operator=(const KernelConvolver&) = delete;

    ~KernelConvolver() {
        if (size_ == 0) return;
        std::lock_guard lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(backward_);
    }

    std::size_t kernel_size() const noexcept { return kernel_.size(); }

    /// out.size() must equal signal.size() + kernel_size() - 1. Negative
    /// round-off in the transform path is clamped; the clamped mass is returned.
    double convolve(std::span<const double> signal, std::span<double> out) const {
        if (signal.size() > max_signal_) throw std::invalid_argument("KernelConvolver: signal too long");
        if (out.size() != signal.size() + kernel_.size() - 1)
            throw std::invalid_argument("KernelConvolver: output size mismatch");
        if (size_ == 0 || signal.size() * kernel_.size() <= kDirectConvolutionWork) {
            detail::direct_convolve(signal, kernel_, out);
            return 0.0;
        }
        auto real = detail::alloc_real(size_);
        auto spec = detail::alloc_complex(size_ / 2 + 1);
        std::fill(real.get(), real.get() + size_, 0.0);
        std::copy(signal.begin(), signal.end(), real.get());
        fftw_execute_dft_r2c(forward_, real.get(), spec.get());
        for (std::size_t i = 0; i < kernel_spectrum_.size(); ++i) {
            const std::complex<double> v = std::complex<double>(spec[i][0], spec[i][1]) * kernel_spectrum_[i];
            spec[i][0] = v.real();
            spec[i][1] = v.imag();
        }
        fftw_execute_dft_c2r(backward_, spec.get(), real.get());
        const double scale = 1.0 / static_cast<double>(size_);
        double clamped = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double v = real[i] * scale;
            if (v < 0.0) {
                clamped -= v;
                out[i] = 0.0;
            } else {
                out[i] = v;
            }
        }
        return clamped;
    }

  private:
    std::vector<double> kernel_;
    std::size_t max_signal_ = 0;
    std::size_t size_ = 0;
    fftw_plan forward_ = nullptr;
    fftw_plan backward_ = nullptr;
    std::vector<std::complex<double>> kernel_spectrum_;
};

/// Discrete linear convolution of two sequences (length |a|+|b|-1).
inline std::vector<double> convolve_sequences(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) return {};
    std::vector<double> out(a.size() + b.size() - 1);
    const auto& longer = a.size() >= b.size() ? a : b;
    const auto& shorter = a.size() >= b.size() ? b : a;
    KernelConvolver conv(shorter, longer.size());
    conv.convolve(longer, out);
    return out;
}

/// Density of the sum of two independent variables. `b` is resampled onto the
/// spacing of `a` when the spacings differ. The result lives on
/// [a.lo + b.lo + h/2, a.hi + b.hi - h/2] with |a| + |b| - 1 cells.
inline Grid1D convolve(const Grid1D& a, const Grid1D& b) {
    const double h = a.axis.h;
    const Grid1D* rhs = &b;
    Grid1D resampled;
    if (std::abs(b.axis.h - h) > 1e-12 * h) {
        const auto cells = static_cast<std::size_t>(std::ceil((b.axis.hi() - b.axis.lo) / h));
        Axis ax{b.axis.lo, h, std::max<std::size_t>(cells, 2)};
        std::vector<double> src(b.axis.cells);
        for (std::size_t i = 0; i < src.size(); ++i) src[i] = b.density[i] * b.axis.h;
        std::vector<double> dst(ax.cells, 0.0);
        remap_masses(b.axis, src, ax, dst);
        for (double& v : dst) v /= h;
        resampled = Grid1D(ax, std::move(dst));
        rhs = &resampled;
    }
    auto values = convolve_sequences(a.density, rhs->density);
    for (double& v : values) v *= h;
    Axis out{a.axis.lo + rhs->axis.lo + 0.5 * h, h, values.size()};
    return Grid1D(out, std::move(values));
}

struct TruncatedGrid {
    Grid1D grid;
    double lost_mass = 0.0;
};

/// Keeps the cells whose centres lie in [lo, hi] and reports the dropped mass.
inline TruncatedGrid truncate(const Grid1D& g, double lo, double hi) {
    std::size_t first = g.axis.cells;
    std::size_t last = 0;
    for (std::size_t i = 0; i < g.axis.cells; ++i) {
        const double c = g.axis.center(i);
        if (c >= lo && c <= hi) {
            first = std::min(first, i);
            last = i;
        }
    }
    if (first >= g.axis.cells || last < first + 1) throw std::invalid_argument("truncate: fewer than two cells kept");
    std::vector<double> kept(g.density.begin() + static_cast<std::ptrdiff_t>(first),
                             g.density.begin() + static_cast<std::ptrdiff_t>(last + 1));
    const Axis ax{g.axis.edge(first), g.axis.h, kept.size()};
    Grid1D out(ax, std::move(kept));
    return {out, g.mass() - out.mass()};
}

}  // namespace vdrop
