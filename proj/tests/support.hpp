#pragma once

// Brute-force reference implementations and helpers shared by the unit
// tests and the acceptance runner. Everything here works element by element
// on plain vectors so it stays independent of the library code under test.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <torch/torch.h>

namespace oracle {

inline std::vector<double> to_vector(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat64).contiguous().flatten();
    return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

/// Median by full sort; midpoint of the middle pair for even counts.
inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<uint8_t> threshold_strict(const std::vector<double>& v, double t) {
    std::vector<uint8_t> out;
    for (double x : v)
        out.push_back(x > t ? 1 : 0);
    return out;
}

/// Histogram bin of x over 256 bins of (low, high]: bin k covers
/// (low + k w, low + (k + 1) w], with `low` in bin 0.
inline int bin_of(double x, double low, double high) {
    if (high <= low)
        return 0;
    const double w = (high - low) / 256.0;
    int k = 0;
    while (k < 255 && x > low + (k + 1) * w)
        ++k;
    return k;
}

/// Exhaustive Otsu: tries every split bin and keeps the one with the largest
/// between-class variance w0 w1 (mu0 - mu1)^2 (first one on ties).
inline int otsu_bin(const std::vector<double>& v) {
    const double low = *std::min_element(v.begin(), v.end());
    const double high = *std::max_element(v.begin(), v.end());
    std::vector<long double> hist(256, 0.0L);
    for (double x : v)
        hist[bin_of(x, low, high)] += 1.0L;
    const long double n = static_cast<long double>(v.size());
    int best = 0;
    long double best_score = -1.0L;
    for (int t = 0; t < 256; ++t) {
        long double n0 = 0, s0 = 0, n1 = 0, s1 = 0;
        for (int k = 0; k < 256; ++k) {
            if (k <= t) {
                n0 += hist[k];
                s0 += hist[k] * k;
            } else {
                n1 += hist[k];
                s1 += hist[k] * k;
            }
        }
        if (n0 == 0 || n1 == 0)
            continue;
        const long double mu0 = s0 / n0, mu1 = s1 / n1;
        const long double score = (n0 / n) * (n1 / n) * (mu0 - mu1) * (mu0 - mu1);
        if (score > best_score * (1.0L + 1e-15L)) {
            best_score = score;
            best = t;
        }
    }
    return best;
}

inline double rmse(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

/// RMSE over [C, H, W] restricted to pixels where keep[h * W + w] is set.
inline double region_rmse(const torch::Tensor& a, const torch::Tensor& b, const std::vector<uint8_t>& keep) {
    const auto C = a.size(0), H = a.size(1), W = a.size(2);
    auto va = to_vector(a), vb = to_vector(b);
    double s = 0.0;
    int64_t n = 0;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < H * W; ++p)
            if (keep[p]) {
                const double d = va[c * H * W + p] - vb[c * H * W + p];
                s += d * d;
                ++n;
            }
    return std::sqrt(s / static_cast<double>(n));
}

/// Closed-form sRGB -> Lab (D65) for a single pixel.
inline std::array<double, 3> srgb_to_lab(double r, double g, double b) {
    auto lin = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
    const double R = lin(r), G = lin(g), B = lin(b);
    const double X = 0.4124564 * R + 0.3575761 * G + 0.1804375 * B;
    const double Y = 0.2126729 * R + 0.7151522 * G + 0.0721750 * B;
    const double Z = 0.0193339 * R + 0.1191920 * G + 0.9503041 * B;
    const double Xn = 0.4124564 + 0.3575761 + 0.1804375;
    const double Yn = 0.2126729 + 0.7151522 + 0.0721750;
    const double Zn = 0.0193339 + 0.1191920 + 0.9503041;
    auto f = [](double t) {
        const double d = 6.0 / 29.0;
        return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
    };
    const double fx = f(X / Xn), fy = f(Y / Yn), fz = f(Z / Zn);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

struct GradientCheck {
    double max_relative_error = 0.0;
    int coordinates = 0;
};

/// Compares the autograd gradient of `loss` at `input` (float64) with central
/// differences at `count` random coordinates.
inline GradientCheck check_gradient(const std::function<torch::Tensor(const torch::Tensor&)>& loss,
                                    const torch::Tensor& input, int count, uint64_t seed, double step = 1e-3) {
    auto x = input.detach().to(torch::kFloat64).clone().requires_grad_(true);
    auto value = loss(x);
    auto analytic = torch::autograd::grad({value}, {x})[0].detach().flatten();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    GradientCheck result;
    torch::NoGradGuard no_grad;
    for (int i = 0; i < count; ++i) {
        const auto k = pick(rng);
        auto plus = x.detach().clone();
        auto minus = x.detach().clone();
        plus.view(-1)[k] += step;
        minus.view(-1)[k] -= step;
        const double numeric = (loss(plus).item<double>() - loss(minus).item<double>()) / (2.0 * step);
        const double a = analytic[k].item<double>();
        const double scale = std::max({std::abs(a), std::abs(numeric), 1e-12});
        result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / scale);
        ++result.coordinates;
    }
    return result;
}

/// Random tensor whose entries differ from `base` by at least `gap` in
/// magnitude, so L1 kinks stay farther than a finite-difference step away.
inline torch::Tensor offset_away(const torch::Tensor& base, double gap, uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    auto mag = torch::rand(base.sizes(), gen, torch::kFloat64) * 0.5 + gap;
    auto sign = torch::where(torch::rand(base.sizes(), gen, torch::kFloat64) > 0.5, 1.0, -1.0);
    return base.to(torch::kFloat64) + mag * sign;
}

} // namespace oracle
