#pragma once
// Independent reference implementations used as test oracles. These stay
// deliberately naive (nested loops, no shared code with the library's
// algorithmic paths) so they can arbitrate correctness.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "hpnet/cox.hpp"
#include "hpnet/layers.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/volume.hpp"

namespace reference {

// Six-nested-loop direct convolution with zero padding.
template <typename T>
hpnet::Tensor4<T> conv3d_direct(const hpnet::Tensor4<T>& in, const hpnet::ConvWeights<T>& kw,
                                hpnet::Dims3 pad, hpnet::Dims3 stride) {
    auto axis = [](int n, int k, int p, int s) { return (n + 2 * p - k) / s + 1; };
    hpnet::Dims3 od{axis(in.dims.x, kw.k.x, pad.x, stride.x),
                    axis(in.dims.y, kw.k.y, pad.y, stride.y),
                    axis(in.dims.z, kw.k.z, pad.z, stride.z)};
    hpnet::Tensor4<T> out(kw.out_c, od);
    for (int o = 0; o < kw.out_c; ++o)
        for (int oz = 0; oz < od.z; ++oz)
            for (int oy = 0; oy < od.y; ++oy)
                for (int ox = 0; ox < od.x; ++ox) {
                    double acc = double(kw.b[o]);
                    for (int c = 0; c < kw.in_c; ++c)
                        for (int dz = 0; dz < kw.k.z; ++dz)
                            for (int dy = 0; dy < kw.k.y; ++dy)
                                for (int dx = 0; dx < kw.k.x; ++dx) {
                                    const int ix = ox * stride.x + dx - pad.x;
                                    const int iy = oy * stride.y + dy - pad.y;
                                    const int iz = oz * stride.z + dz - pad.z;
                                    if (ix < 0 || ix >= in.dims.x || iy < 0 || iy >= in.dims.y ||
                                        iz < 0 || iz >= in.dims.z)
                                        continue;
                                    acc += double(kw.w[kw.windex(o, c, dx, dy, dz)]) *
                                           double(in.at(c, ix, iy, iz));
                                }
                    out.at(o, ox, oy, oz) = T(acc);
                }
    return out;
}

// Exhaustive window-max pooling.
template <typename T>
hpnet::Tensor4<T> maxpool_direct(const hpnet::Tensor4<T>& in) {
    hpnet::Dims3 od{in.dims.x / 2, in.dims.y / 2, in.dims.z / 2};
    hpnet::Tensor4<T> out(in.c, od);
    for (int c = 0; c < in.c; ++c)
        for (int oz = 0; oz < od.z; ++oz)
            for (int oy = 0; oy < od.y; ++oy)
                for (int ox = 0; ox < od.x; ++ox) {
                    T best = in.at(c, ox * 2, oy * 2, oz * 2);
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                best = std::max(best, in.at(c, ox * 2 + dx, oy * 2 + dy, oz * 2 + dz));
                    out.at(c, ox, oy, oz) = best;
                }
    return out;
}

// O(n^2) Mann-Whitney AUC with half credit for score ties.
inline double auc_pair_counting(const std::vector<double>& scores, const std::vector<int>& labels) {
    double num = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    return num / double(pairs);
}

// C-index by unordered-pair enumeration, structured differently from the
// library's loop: walk a < b once and classify orderability explicitly.
struct CIndexRef {
    double c;
    std::size_t pairs;
};

inline CIndexRef cindex_pairs(const std::vector<double>& risk, const std::vector<double>& time,
                              const std::vector<int>& event, bool half_ties) {
    double score = 0.0;
    std::size_t pairs = 0;
    const std::size_t n = risk.size();
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) {
            // earlier subject must be an observed progressor; tied times are not orderable
            std::size_t early, late;
            if (time[a] < time[b]) { early = a; late = b; }
            else if (time[b] < time[a]) { early = b; late = a; }
            else continue;
            if (!event[early]) continue;
            ++pairs;
            if (risk[early] > risk[late]) score += 1.0;
            else if (risk[early] == risk[late] && half_ties) score += 0.5;
        }
    return {score / double(pairs), pairs};
}

// Negative log partial likelihood with Breslow ties, direct risk-set sums
// (no sorting tricks shared with the library).
inline double neg_log_pl_direct(const hpnet::SurvivalData& d, const std::vector<double>& beta) {
    double value = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) {
        if (!d.event[i]) continue;
        double eta_i = 0.0;
        for (std::size_t j = 0; j < d.p; ++j) eta_i += d.xat(i, j) * beta[j];
        double denom = 0.0;
        for (std::size_t r = 0; r < d.n; ++r) {
            if (d.time[r] < d.time[i]) continue;
            double eta_r = 0.0;
            for (std::size_t j = 0; j < d.p; ++j) eta_r += d.xat(r, j) * beta[j];
            denom += std::exp(eta_r);
        }
        value -= eta_i - std::log(denom);
    }
    return value;
}

inline std::vector<double> neg_log_pl_grad_direct(const hpnet::SurvivalData& d,
                                                  const std::vector<double>& beta) {
    std::vector<double> g(d.p, 0.0);
    const double h = 1e-6;
    for (std::size_t k = 0; k < d.p; ++k) {
        auto up = beta, dn = beta;
        up[k] += h;
        dn[k] -= h;
        g[k] = (neg_log_pl_direct(d, up) - neg_log_pl_direct(d, dn)) / (2 * h);
    }
    return g;
}

// Proximal-gradient (FISTA with backtracking) minimizer of
// neg_log_pl(beta) + lambda*||beta||_1 on pre-standardized data.
inline std::vector<double> lasso_prox_gradient(const hpnet::SurvivalData& std_data, double lambda,
                                               int max_iters = 20000, double tol = 1e-12) {
    const std::size_t p = std_data.p;
    std::vector<double> beta(p, 0.0), y(p, 0.0);
    double t_mom = 1.0;
    double L = 1.0;  // local Lipschitz estimate, grown by backtracking

    auto objective = [&](const std::vector<double>& b) {
        double l1 = 0.0;
        for (double v : b) l1 += std::fabs(v);
        return neg_log_pl_direct(std_data, b) + lambda * l1;
    };
    auto smooth = [&](const std::vector<double>& b) { return neg_log_pl_direct(std_data, b); };

    double prev_obj = objective(beta);
    for (int it = 0; it < max_iters; ++it) {
        auto grad = neg_log_pl_grad_direct(std_data, y);
        // backtracking on the smooth part's quadratic model at y
        const double fy = smooth(y);
        std::vector<double> next(p);
        for (;;) {
            for (std::size_t k = 0; k < p; ++k) {
                const double z = y[k] - grad[k] / L;
                const double th = lambda / L;
                next[k] = z > th ? z - th : (z < -th ? z + th : 0.0);
            }
            double quad = fy, diff2 = 0.0;
            for (std::size_t k = 0; k < p; ++k) {
                const double dkk = next[k] - y[k];
                quad += grad[k] * dkk;
                diff2 += dkk * dkk;
            }
            quad += 0.5 * L * diff2;
            if (smooth(next) <= quad + 1e-12) break;
            L *= 2.0;
            if (L > 1e12) break;
        }
        const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t_mom * t_mom)) / 2.0;
        for (std::size_t k = 0; k < p; ++k)
            y[k] = next[k] + (t_mom - 1.0) / t_next * (next[k] - beta[k]);
        beta = next;
        t_mom = t_next;
        const double obj = objective(beta);
        if (it > 10 && std::fabs(prev_obj - obj) < tol * std::max(1.0, std::fabs(obj))) break;
        prev_obj = obj;
    }
    return beta;
}

// Dense 1-D grid maximizer of the partial likelihood for single-covariate fits.
inline double cox_grid_mle(const hpnet::SurvivalData& std_data, double lo = -4.0, double hi = 4.0,
                           double step = 1e-4) {
    double best_b = 0.0, best_v = std::numeric_limits<double>::infinity();
    for (double b = lo; b <= hi + 1e-12; b += step) {
        const double v = neg_log_pl_direct(std_data, {b});
        if (v < best_v) {
            best_v = v;
            best_b = b;
        }
    }
    return best_b;
}

// Random helpers -------------------------------------------------------------

template <typename T>
hpnet::Tensor4<T> random_tensor(int c, hpnet::Dims3 d, hpnet::Rng& rng, double scale = 1.0,
                                double margin = 0.0) {
    hpnet::Tensor4<T> t(c, d);
    for (auto& v : t.values) {
        double x = scale * (2.0 * rng.u01() - 1.0);
        if (margin > 0 && std::fabs(x) < margin) x = x < 0 ? x - margin : x + margin;
        v = T(x);
    }
    return t;
}

// Exponential-hazard survival data with uniform censoring. True model:
// h(t|x) = rate * exp(x . beta_true) with standard normal covariates.
inline hpnet::SurvivalData simulate_cox(std::size_t n, const std::vector<double>& beta_true,
                                        double rate, double censor_lo, double censor_hi,
                                        hpnet::Rng& rng) {
    hpnet::SurvivalData d;
    d.n = n;
    d.p = beta_true.size();
    d.x.resize(n * d.p);
    d.time.resize(n);
    d.event.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double eta = 0.0;
        for (std::size_t j = 0; j < d.p; ++j) {
            const double x = rng.normal();
            d.x[i * d.p + j] = x;
            eta += x * beta_true[j];
        }
        const double u = 1.0 - rng.u01();
        const double t_event = -std::log(u) / (rate * std::exp(eta));
        const double c = rng.uniform(censor_lo, censor_hi);
        d.time[i] = std::max(1e-3, std::min(t_event, c));
        d.event[i] = t_event <= c ? 1 : 0;
    }
    return d;
}

}  // namespace reference
