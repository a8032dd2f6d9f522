#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace difflab {

using Vec = std::vector<double>;
using Matrix = std::vector<Vec>;  // row-major dense matrix

// Thrown when a numeric precondition is violated (bad argument, unstable
// configuration, exploding state). Carries a human-readable context string.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw numeric_error(msg);
}

inline void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw numeric_error(what + " is not finite");
}

inline Vec linspace(double lo, double hi, std::size_t n) {
    require(n >= 2, "linspace needs at least 2 nodes");
    Vec x(n);
    const double h = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) x[i] = lo + h * static_cast<double>(i);
    x.back() = hi;
    return x;
}

// Composite trapezoid rule on a uniform grid with spacing h.
inline double trapezoid(std::span<const double> f, double h) {
    if (f.size() < 2) return 0.0;
    double s = 0.5 * (f.front() + f.back());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
    return s * h;
}

// Trapezoid rule on a non-uniform grid.
inline double trapezoid(std::span<const double> f, std::span<const double> x) {
    require(f.size() == x.size(), "trapezoid: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < f.size(); ++i)
        s += 0.5 * (f[i] + f[i + 1]) * (x[i + 1] - x[i]);
    return s;
}

inline double log_sum_exp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

inline double sqr(double x) { return x * x; }

// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
// worker. Chunk boundaries depend only on (n, n_threads), so any
// path-indexed work is reproducible regardless of scheduling order. The
// first worker exception is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, unsigned n_threads, Fn&& fn) {
    if (n == 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    unsigned workers = n_threads == 0 ? hw : n_threads;
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    if (workers <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = static_cast<std::size_t>(w) * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, w, &fn, &errors] {
            try {
                fn(lo, hi);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;  // unbiased sample variance
};

inline MeanVar mean_variance(std::span<const double> v) {
    require(!v.empty(), "mean_variance: empty sample");
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += sqr(x - m);
    if (v.size() > 1) s2 /= static_cast<double>(v.size() - 1);
    return {m, s2};
}

}  // namespace difflab
