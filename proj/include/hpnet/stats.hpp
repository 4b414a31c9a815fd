#pragma once
#include <algorithm>
#include <cmath>
#include <vector>

#include "hpnet/error.hpp"

// Tail probabilities and small dense solves, computed in-repo. erfc follows
// Cody's rational approximations (SPECFUN calerf); the regularized incomplete
// gamma uses the usual series / continued-fraction split.

namespace hpnet {

inline double erfc_approx(double x) {
    static const double a[5] = {3.16112374387056560e+00, 1.13864154151050156e+02,
                                3.77485237685302021e+02, 3.20937758913846947e+03,
                                1.85777706184603153e-01};
    static const double b[4] = {2.36012909523441209e+01, 2.44024637934444173e+02,
                                1.28261652607737228e+03, 2.84423683343917062e+03};
    static const double c[9] = {5.64188496988670089e-01, 8.88314979438837594e+00,
                                6.61191906371416295e+01, 2.98635138197400131e+02,
                                8.81952221241769090e+02, 1.71204761263407058e+03,
                                2.05107837782607147e+03, 1.23033935479799725e+03,
                                2.15311535474403846e-08};
    static const double d[8] = {1.57449261107098347e+01, 1.17693950891312499e+02,
                                5.37181101862009858e+02, 1.62138957456669019e+03,
                                3.29079923573345963e+03, 4.36261909014324716e+03,
                                3.43936767414372164e+03, 1.23033935480374942e+03};
    static const double p[6] = {3.05326634961232344e-01, 3.60344899949804439e-01,
                                1.25781726111229246e-01, 1.60837851487422766e-02,
                                6.58749161529837803e-04, 1.63153871373020978e-02};
    static const double q[5] = {2.56852019228982242e+00, 1.87295284992346047e+00,
                                5.27905102951428412e-01, 6.05183413124413191e-02,
                                2.33520497626869185e-03};

    const double ax = std::fabs(x);
    double result;
    if (ax <= 0.46875) {
        const double y = ax > 1.11e-16 ? x * x : 0.0;
        double xnum = a[4] * y, xden = y;
        for (int i = 0; i < 3; ++i) {
            xnum = (xnum + a[i]) * y;
            xden = (xden + b[i]) * y;
        }
        return 1.0 - x * (xnum + a[3]) / (xden + b[3]);
    }
    if (ax <= 4.0) {
        double xnum = c[8] * ax, xden = ax;
        for (int i = 0; i < 7; ++i) {
            xnum = (xnum + c[i]) * ax;
            xden = (xden + d[i]) * ax;
        }
        result = (xnum + c[7]) / (xden + d[7]);
    } else {
        const double ysq = 1.0 / (ax * ax);
        double xnum = p[5] * ysq, xden = ysq;
        for (int i = 0; i < 4; ++i) {
            xnum = (xnum + p[i]) * ysq;
            xden = (xden + q[i]) * ysq;
        }
        result = ysq * (xnum + p[4]) / (xden + q[4]);
        result = (5.6418958354775628695e-01 - result) / ax;
    }
    // exp(-x^2) split to keep the rounding of large arguments in check
    const double ytrunc = std::trunc(ax * 16.0) / 16.0;
    const double del = (ax - ytrunc) * (ax + ytrunc);
    result *= std::exp(-ytrunc * ytrunc) * std::exp(-del);
    return x < 0 ? 2.0 - result : result;
}

// Upper tail of the standard normal.
inline double normal_sf(double z) { return 0.5 * erfc_approx(z / 1.4142135623730950488); }

inline double normal_two_sided_p(double z) {
    double p = erfc_approx(std::fabs(z) / 1.4142135623730950488);
    return std::min(1.0, p);
}

namespace detail {

// P(a,x) by series.
inline double gamma_p_series(double a, double x) {
    double ap = a, sum = 1.0 / a, term = sum;
    for (int n = 0; n < 1000; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a,x) by modified Lentz continued fraction.
inline double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 1000; ++i) {
        const double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

// Regularized incomplete gamma P(a,x); Q = 1 - P.
inline double gamma_p(double a, double x) {
    if (x < 0 || a <= 0) throw PreconditionError("gamma_p: invalid arguments");
    if (x == 0) return 0.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    return 1.0 - detail::gamma_q_cf(a, x);
}

inline double gamma_q(double a, double x) {
    if (x < 0 || a <= 0) throw PreconditionError("gamma_q: invalid arguments");
    if (x == 0) return 1.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_cf(a, x);
}

// Upper tail of chi-square with df degrees of freedom.
inline double chisq_sf(double x, int df) {
    if (df < 1) throw PreconditionError("chisq_sf: df must be >= 1");
    if (x <= 0) return 1.0;
    return gamma_q(double(df) / 2.0, x / 2.0);
}

// Linear-interpolation quantile (the common "type 7" rule); data need not be sorted.
inline double quantile(std::vector<double> v, double prob) {
    if (v.empty()) throw PreconditionError("quantile: empty data");
    if (prob < 0 || prob > 1) throw PreconditionError("quantile: prob outside [0,1]");
    std::sort(v.begin(), v.end());
    const double h = (double(v.size()) - 1.0) * prob;
    const std::size_t lo = std::size_t(std::floor(h));
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - double(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

// Solves A x = b for symmetric positive definite A (row-major, n x n)
// via Cholesky. Throws NumericError if A is not positive definite.
inline std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    if (a.size() != n * n) throw ShapeError("solve_spd: dimension mismatch");
    std::vector<double> L(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) diag -= L[j * n + k] * L[j * n + k];
        if (!(diag > 0)) throw NumericError("solve_spd: matrix not positive definite");
        L[j * n + j] = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= L[i * n + k] * L[j * n + k];
            L[i * n + j] = s / L[j * n + j];
        }
    }
    // forward then backward substitution
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= L[i * n + k] * b[k];
        b[i] = s / L[i * n + i];
    }
    for (std::size_t ii = n; ii > 0; --ii) {
        const std::size_t i = ii - 1;
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= L[k * n + i] * b[k];
        b[i] = s / L[i * n + i];
    }
    return b;
}

// Inverse of a symmetric positive definite matrix (for standard errors).
inline std::vector<double> invert_spd(const std::vector<double>& a, std::size_t n) {
    std::vector<double> inv(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> e(n, 0.0);
        e[j] = 1.0;
        auto col = solve_spd(a, e);
        for (std::size_t i = 0; i < n; ++i) inv[i * n + j] = col[i];
    }
    return inv;
}

}  // namespace hpnet
