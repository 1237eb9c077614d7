#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace drcusum::quad {

template <std::size_t K>
using Vec = std::array<double, K>;

struct Result {
    double error_estimate = 0.0;
    std::size_t evaluations = 0;
    bool converged = true;
};

namespace detail {

template <std::size_t K>
double max_abs_diff(const Vec<K>& a, const Vec<K>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < K; ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <std::size_t K, class F>
void simpson_step(F& f, double a, double b, const Vec<K>& fa, const Vec<K>& fm, const Vec<K>& fb,
                  const Vec<K>& whole, double tol, int depth, Vec<K>& acc, Result& res) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const Vec<K> flm = f(lm);
    const Vec<K> frm = f(rm);
    res.evaluations += 2;
    Vec<K> left{}, right{}, both{};
    for (std::size_t i = 0; i < K; ++i) {
        left[i] = (m - a) / 6.0 * (fa[i] + 4.0 * flm[i] + fm[i]);
        right[i] = (b - m) / 6.0 * (fm[i] + 4.0 * frm[i] + fb[i]);
        both[i] = left[i] + right[i];
    }
    const double err = max_abs_diff(both, whole);
    if (depth <= 0 || err <= 15.0 * tol || (b - a) < 1e-14 * (1.0 + std::abs(a))) {
        if (depth <= 0 && err > 15.0 * tol) res.converged = false;
        for (std::size_t i = 0; i < K; ++i) acc[i] += both[i] + (both[i] - whole[i]) / 15.0;
        res.error_estimate += err / 15.0;
        return;
    }
    simpson_step<K>(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, acc, res);
    simpson_step<K>(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, acc, res);
}

}  // namespace detail

// Adaptive Simpson for a K-component integrand over [a, b], pre-split into
// `panels` equal pieces so that features narrower than (b - a) are not
// missed by the first five samples. `tol` is an absolute tolerance on every
// component of the total.
template <std::size_t K, class F>
Vec<K> adaptive_simpson(F&& f, double a, double b, double tol, std::size_t panels, Result* out = nullptr,
                        int max_depth = 48) {
    Vec<K> acc{};
    Result res;
    if (!(b > a)) {
        if (out) *out = res;
        return acc;
    }
    panels = panels == 0 ? 1 : panels;
    const double h = (b - a) / static_cast<double>(panels);
    const double panel_tol = tol / static_cast<double>(panels);
    Vec<K> fa = f(a);
    res.evaluations += 1;
    for (std::size_t p = 0; p < panels; ++p) {
        const double lo = a + h * static_cast<double>(p);
        const double hi = (p + 1 == panels) ? b : a + h * static_cast<double>(p + 1);
        const double mid = 0.5 * (lo + hi);
        const Vec<K> fm = f(mid);
        const Vec<K> fb = f(hi);
        res.evaluations += 2;
        Vec<K> whole{};
        for (std::size_t i = 0; i < K; ++i) whole[i] = (hi - lo) / 6.0 * (fa[i] + 4.0 * fm[i] + fb[i]);
        detail::simpson_step<K>(f, lo, hi, fa, fm, fb, whole, panel_tol, max_depth, acc, res);
        fa = fb;
    }
    if (out) *out = res;
    return acc;
}

template <class F>
double integrate(F&& f, double a, double b, double tol = 1e-10, std::size_t panels = 64, Result* out = nullptr) {
    auto g = [&](double x) { return Vec<1>{f(x)}; };
    return adaptive_simpson<1>(g, a, b, tol, panels, out)[0];
}

}  // namespace drcusum::quad
