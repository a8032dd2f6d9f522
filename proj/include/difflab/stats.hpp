#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "difflab/common.hpp"

namespace difflab {

inline double normal_cdf(double x, double mean = 0.0, double var = 1.0) {
    return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * var));
}

// Kolmogorov Q function: P(sup|B(t)| > lambda) tail series.
inline double kolmogorov_q(double lambda) {
    if (lambda < 1e-8) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline double ks_statistic_two_sample(Vec a, Vec b) {
    require(!a.empty() && !b.empty(), "ks: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na -
                                 static_cast<double>(j) / nb));
    }
    return d;
}

// Asymptotic two-sample p-value with the usual finite-n correction.
inline double ks_p_value_two_sample(double d, std::size_t n, std::size_t m) {
    const double ne = static_cast<double>(n) * static_cast<double>(m) /
                      static_cast<double>(n + m);
    const double s = std::sqrt(ne);
    return kolmogorov_q((s + 0.12 + 0.11 / s) * d);
}

inline double ks_statistic_vs_cdf(Vec sample,
                                  const std::function<double(double)>& cdf) {
    require(!sample.empty(), "ks: empty sample");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double c = cdf(sample[i]);
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - c));
        d = std::max(d, std::abs(c - static_cast<double>(i) / n));
    }
    return d;
}

// L1 distance between the empirical bin fractions of `sample` and the exact
// bin masses of a reference law given by its CDF.
inline double histogram_l1(const Vec& sample,
                           const std::function<double(double)>& cdf, double lo,
                           double hi, std::size_t bins) {
    require(bins >= 2, "histogram_l1: need at least 2 bins");
    std::vector<double> counts(bins, 0.0);
    double inside = 0.0;
    const double w = (hi - lo) / static_cast<double>(bins);
    for (double x : sample) {
        if (x < lo || x >= hi) continue;
        const auto b = static_cast<std::size_t>((x - lo) / w);
        counts[std::min(b, bins - 1)] += 1.0;
        inside += 1.0;
    }
    require(inside > 0.0, "histogram_l1: no samples inside range");
    const double n = static_cast<double>(sample.size());
    double l1 = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        const double mass = cdf(lo + w * static_cast<double>(b + 1)) -
                            cdf(lo + w * static_cast<double>(b));
        l1 += std::abs(counts[b] / n - mass);
    }
    // mass outside the window counts as discrepancy too
    l1 += std::abs((n - inside) / n - (1.0 - (cdf(hi) - cdf(lo))));
    return l1;
}

}  // namespace difflab
