#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>

#include "difflab/common.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

// Diagonal-covariance Gaussian in d dimensions. All the closed-form kernels
// in this library are isotropic or diagonal, so a diagonal variance vector
// is the whole story.
struct GaussianDensity {
    Vec mean;
    Vec var;

    GaussianDensity(Vec m, Vec v) : mean(std::move(m)), var(std::move(v)) {
        require(mean.size() == var.size(), "GaussianDensity: dim mismatch");
        require(!mean.empty(), "GaussianDensity: empty");
        for (double s2 : var) require(s2 > 0.0, "GaussianDensity: variance must be positive");
    }
    GaussianDensity(double m, double v) : GaussianDensity(Vec{m}, Vec{v}) {}

    std::size_t dim() const { return mean.size(); }
    double mean1() const { return mean[0]; }
    double var1() const { return var[0]; }

    double log_pdf(std::span<const double> x) const {
        require(x.size() == dim(), "log_pdf: dim mismatch");
        double lp = 0.0;
        for (std::size_t i = 0; i < dim(); ++i)
            lp += -0.5 * std::log(2.0 * std::numbers::pi * var[i]) -
                  0.5 * sqr(x[i] - mean[i]) / var[i];
        return lp;
    }
    double pdf(std::span<const double> x) const { return std::exp(log_pdf(x)); }
    double pdf1(double x) const { return pdf(std::span<const double>(&x, 1)); }
    double log_pdf1(double x) const { return log_pdf(std::span<const double>(&x, 1)); }
};

// Convolution of two Gaussians: means and variances add coordinatewise.
inline GaussianDensity convolve(const GaussianDensity& a, const GaussianDensity& b) {
    require(a.dim() == b.dim(), "convolve: dim mismatch");
    Vec m(a.dim()), v(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) {
        m[i] = a.mean[i] + b.mean[i];
        v[i] = a.var[i] + b.var[i];
    }
    return {std::move(m), std::move(v)};
}

// Transition density of drift-free diffusion with constant D over [t0, t].
inline GaussianDensity pure_diffusion_kernel(const Vec& x0, double t0, double t,
                                             double diffusion) {
    require(t > t0, "pure_diffusion_kernel: t must exceed t0");
    require(diffusion > 0.0, "pure_diffusion_kernel: D must be positive");
    Vec v(x0.size(), diffusion * (t - t0));
    return {x0, std::move(v)};
}

inline GaussianDensity pure_diffusion_kernel(double x0, double t0, double t,
                                             double diffusion) {
    return pure_diffusion_kernel(Vec{x0}, t0, t, diffusion);
}

// OU transition density: mean x0 exp(-int beta/2), variance
// (D(t)/beta(t)) (1 - exp(-int beta)), integrals taken on the schedule grid.
// Exact for constant coefficients and whenever D/beta is constant (the DDPM
// case D = beta); time-varying ratios are validated against Monte Carlo.
inline GaussianDensity ou_kernel(const Vec& x0, double t0, double t,
                                 const NoiseSchedule& schedule) {
    require(t > t0, "ou_kernel: t must exceed t0");
    const double B = schedule.int_beta(t0, t);
    require(B > 1e-14,
            "ou_kernel: beta vanishes on [t0,t]; use pure_diffusion_kernel");
    const double beta_t = schedule.beta(t);
    require(beta_t > 0.0, "ou_kernel: beta(t) must be positive at the endpoint");
    const double shrink = std::exp(-0.5 * B);
    const double v = schedule.diffusion(t) / beta_t * (1.0 - std::exp(-B));
    Vec m(x0.size()), vv(x0.size(), v);
    for (std::size_t i = 0; i < x0.size(); ++i) m[i] = x0[i] * shrink;
    return {std::move(m), std::move(vv)};
}

inline GaussianDensity ou_kernel(double x0, double t0, double t,
                                 const NoiseSchedule& schedule) {
    return ou_kernel(Vec{x0}, t0, t, schedule);
}

// DDPM finite-time kernel N(sqrt(abar_t) x_d, (1 - abar_t) 1). Sampling form:
// x = sqrt(abar_t) x_d + sqrt(1 - abar_t) eps.
inline GaussianDensity ddpm_finite_kernel(const Vec& x_d, double t,
                                          const NoiseSchedule& schedule) {
    const double ab = schedule.alpha_bar_at_time(t);
    require(ab < 1.0, "ddpm_finite_kernel: abar = 1 (zero noise, degenerate)");
    require(ab > 0.0, "ddpm_finite_kernel: abar underflow");
    const double root = std::sqrt(ab);
    Vec m(x_d.size()), v(x_d.size(), 1.0 - ab);
    for (std::size_t i = 0; i < x_d.size(); ++i) m[i] = x_d[i] * root;
    return {std::move(m), std::move(v)};
}

inline GaussianDensity ddpm_finite_kernel(double x_d, double t,
                                          const NoiseSchedule& schedule) {
    return ddpm_finite_kernel(Vec{x_d}, t, schedule);
}

// 1D transition-kernel factory: kernel(x0, t0, t1) -> GaussianDensity.
using Kernel1D = std::function<GaussianDensity(double, double, double)>;

// Worst-case gap over x_grid between the one-shot kernel (t0 -> t) and the
// quadrature composition through an intermediate time tau. The split
// tau == t0 (or tau == t) composes with a delta and is an exact identity.
inline double chapman_kolmogorov_residual(const Kernel1D& kernel, double x0,
                                          double t0, double tau, double t,
                                          const Vec& x_grid) {
    require(t > t0, "chapman_kolmogorov_residual: t must exceed t0");
    require(tau >= t0 && tau <= t, "chapman_kolmogorov_residual: tau outside [t0,t]");
    require(x_grid.size() >= 3, "chapman_kolmogorov_residual: grid too small");
    if (tau == t0 || tau == t) return 0.0;

    const double h = x_grid[1] - x_grid[0];
    const GaussianDensity direct = kernel(x0, t0, t);
    const std::size_t m = x_grid.size();

    Vec inner(m);
    for (std::size_t j = 0; j < m; ++j) inner[j] = kernel(x0, t0, tau).pdf1(x_grid[j]);
    const double inner_mass = trapezoid(inner, h);
    require(inner_mass > 1.0 - 1e-6,
            "chapman_kolmogorov_residual: quadrature grid too narrow (mass deficit)");

    double worst = 0.0;
    Vec integrand(m);
    double direct_mass = 0.0;
    Vec direct_vals(m);
    for (std::size_t i = 0; i < m; ++i) direct_vals[i] = direct.pdf1(x_grid[i]);
    direct_mass = trapezoid(direct_vals, h);
    require(direct_mass > 1.0 - 1e-6,
            "chapman_kolmogorov_residual: grid does not capture the kernel");

    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j)
            integrand[j] = kernel(x_grid[j], tau, t).pdf1(x_grid[i]) * inner[j];
        const double composed = trapezoid(integrand, h);
        worst = std::max(worst, std::abs(composed - direct_vals[i]));
    }
    return worst;
}

}  // namespace difflab
