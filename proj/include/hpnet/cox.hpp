#pragma once
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hpnet/error.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/stats.hpp"

// Cox proportional-hazards machinery: Breslow-tie partial likelihood, Newton
// fit for the clinical/combined models, LASSO path by cyclic coordinate
// descent with 10-fold cross-validation for the deep features, and the
// Breslow baseline cumulative hazard.

namespace hpnet {

struct SurvivalData {
    std::size_t n = 0, p = 0;
    std::vector<double> x;     // row-major n*p covariates
    std::vector<double> time;  // months, > 0
    std::vector<int> event;    // 1 = progressed, 0 = censored

    double xat(std::size_t i, std::size_t j) const { return x[i * p + j]; }
    double& xref(std::size_t i, std::size_t j) { return x[i * p + j]; }

    std::size_t n_events() const {
        std::size_t d = 0;
        for (int e : event) d += e ? 1 : 0;
        return d;
    }

    void validate() const {
        if (time.size() != n || event.size() != n || x.size() != n * p)
            throw ShapeError("SurvivalData: inconsistent sizes");
        for (double t : time)
            if (!(t > 0) || !std::isfinite(t)) throw PreconditionError("SurvivalData: times must be finite and > 0");
        for (int e : event)
            if (e != 0 && e != 1) throw PreconditionError("SurvivalData: event must be 0 or 1");
        for (double v : x)
            if (!std::isfinite(v)) throw NumericError("SurvivalData: non-finite covariate");
    }
};

struct Standardization {
    std::vector<double> mean, sd;
};

// Z-scores every column in place. sd == 0 throws unless allow_constant, in
// which case the column becomes all zeros (sd recorded as 1).
inline Standardization standardize_columns(SurvivalData& d, bool allow_constant = false) {
    Standardization s;
    s.mean.assign(d.p, 0.0);
    s.sd.assign(d.p, 1.0);
    for (std::size_t j = 0; j < d.p; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < d.n; ++i) m += d.xat(i, j);
        m /= double(d.n);
        double v = 0.0;
        for (std::size_t i = 0; i < d.n; ++i) {
            const double c = d.xat(i, j) - m;
            v += c * c;
        }
        double sd = std::sqrt(v / double(d.n));
        if (sd == 0.0) {
            if (!allow_constant)
                throw PreconditionError("standardize: covariate column " + std::to_string(j) +
                                        " is constant");
            sd = 1.0;
        }
        s.mean[j] = m;
        s.sd[j] = sd;
        for (std::size_t i = 0; i < d.n; ++i) d.xref(i, j) = (d.xat(i, j) - m) / sd;
    }
    return s;
}

struct PartialLikResult {
    double value = 0.0;             // negative log partial likelihood
    std::vector<double> grad;       // gradient of value
    std::vector<double> hess_diag;  // per-coordinate second derivatives
};

namespace coxdetail {

struct Order {
    std::vector<std::size_t> desc;  // indices by time descending
};

inline Order make_order(const SurvivalData& d) {
    Order o;
    o.desc.resize(d.n);
    std::iota(o.desc.begin(), o.desc.end(), 0);
    std::sort(o.desc.begin(), o.desc.end(),
              [&](std::size_t a, std::size_t b) { return d.time[a] > d.time[b]; });
    return o;
}

inline std::vector<double> linear_predictor(const SurvivalData& d, const std::vector<double>& beta) {
    std::vector<double> eta(d.n, 0.0);
    for (std::size_t i = 0; i < d.n; ++i) {
        double v = 0.0;
        for (std::size_t j = 0; j < d.p; ++j) v += d.xat(i, j) * beta[j];
        eta[i] = v;
    }
    return eta;
}

}  // namespace coxdetail

// Negative log partial likelihood with gradient and diagonal Hessian,
// log-sum-exp stabilized. Requires at least one event.
inline PartialLikResult neg_log_partial_likelihood(const SurvivalData& d,
                                                   const std::vector<double>& beta) {
    if (beta.size() != d.p) throw ShapeError("neg_log_partial_likelihood: beta length != p");
    if (d.n_events() == 0) throw PreconditionError("neg_log_partial_likelihood: no events");
    const auto order = coxdetail::make_order(d);
    auto eta = coxdetail::linear_predictor(d, beta);
    double m = eta.empty() ? 0.0 : *std::max_element(eta.begin(), eta.end());
    std::vector<double> w(d.n);
    for (std::size_t i = 0; i < d.n; ++i) w[i] = std::exp(eta[i] - m);

    PartialLikResult r;
    r.grad.assign(d.p, 0.0);
    r.hess_diag.assign(d.p, 0.0);
    std::vector<double> s1(d.p, 0.0), s2(d.p, 0.0), sum_x_ev(d.p, 0.0);

    double s0 = 0.0;
    std::size_t i = 0;
    while (i < d.n) {
        const double t = d.time[order.desc[i]];
        std::size_t j = i;
        int dcount = 0;
        double sum_eta_ev = 0.0;
        std::fill(sum_x_ev.begin(), sum_x_ev.end(), 0.0);
        while (j < d.n && d.time[order.desc[j]] == t) {
            const std::size_t idx = order.desc[j];
            s0 += w[idx];
            for (std::size_t k = 0; k < d.p; ++k) {
                const double xw = d.xat(idx, k) * w[idx];
                s1[k] += xw;
                s2[k] += d.xat(idx, k) * xw;
            }
            if (d.event[idx]) {
                ++dcount;
                sum_eta_ev += eta[idx];
                for (std::size_t k = 0; k < d.p; ++k) sum_x_ev[k] += d.xat(idx, k);
            }
            ++j;
        }
        if (dcount > 0) {
            r.value += double(dcount) * (std::log(s0) + m) - sum_eta_ev;
            for (std::size_t k = 0; k < d.p; ++k) {
                const double mean_k = s1[k] / s0;
                r.grad[k] += double(dcount) * mean_k - sum_x_ev[k];
                r.hess_diag[k] += double(dcount) * (s2[k] / s0 - mean_k * mean_k);
            }
        }
        i = j;
    }
    return r;
}

namespace coxdetail {

// Value, gradient, and full Hessian for the Newton fit (p small).
inline double plik_with_hessian(const SurvivalData& d, const std::vector<double>& beta,
                                std::vector<double>& grad, std::vector<double>& hess) {
    const auto order = make_order(d);
    auto eta = linear_predictor(d, beta);
    const double m = eta.empty() ? 0.0 : *std::max_element(eta.begin(), eta.end());
    std::vector<double> w(d.n);
    for (std::size_t i = 0; i < d.n; ++i) w[i] = std::exp(eta[i] - m);

    const std::size_t p = d.p;
    grad.assign(p, 0.0);
    hess.assign(p * p, 0.0);
    std::vector<double> s1(p, 0.0), s2(p * p, 0.0), sum_x_ev(p, 0.0);
    double value = 0.0, s0 = 0.0;

    std::size_t i = 0;
    while (i < d.n) {
        const double t = d.time[order.desc[i]];
        std::size_t j = i;
        int dcount = 0;
        double sum_eta_ev = 0.0;
        std::fill(sum_x_ev.begin(), sum_x_ev.end(), 0.0);
        while (j < d.n && d.time[order.desc[j]] == t) {
            const std::size_t idx = order.desc[j];
            s0 += w[idx];
            for (std::size_t a = 0; a < p; ++a) {
                const double xa = d.xat(idx, a);
                s1[a] += xa * w[idx];
                for (std::size_t b = a; b < p; ++b) s2[a * p + b] += xa * d.xat(idx, b) * w[idx];
            }
            if (d.event[idx]) {
                ++dcount;
                sum_eta_ev += eta[idx];
                for (std::size_t a = 0; a < p; ++a) sum_x_ev[a] += d.xat(idx, a);
            }
            ++j;
        }
        if (dcount > 0) {
            value += double(dcount) * (std::log(s0) + m) - sum_eta_ev;
            for (std::size_t a = 0; a < p; ++a) {
                const double ma = s1[a] / s0;
                grad[a] += double(dcount) * ma - sum_x_ev[a];
                for (std::size_t b = a; b < p; ++b) {
                    const double mb = s1[b] / s0;
                    hess[a * p + b] += double(dcount) * (s2[a * p + b] / s0 - ma * mb);
                }
            }
        }
        i = j;
    }
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < a; ++b) hess[a * p + b] = hess[b * p + a];
    return value;
}

}  // namespace coxdetail

struct BaselineHazard {
    std::vector<double> time;    // distinct event times, ascending
    std::vector<double> cumhaz;  // H0 at those times (right-continuous step)
};

inline double baseline_cumhaz_at(const BaselineHazard& h, double t) {
    double v = 0.0;
    for (std::size_t k = 0; k < h.time.size() && h.time[k] <= t; ++k) v = h.cumhaz[k];
    return v;
}

// H0(t) = sum over event times t_k <= t of d_k / sum_{R(t_k)} exp(eta_j).
inline BaselineHazard breslow_baseline(const SurvivalData& d, const std::vector<double>& beta) {
    if (beta.size() != d.p) throw ShapeError("breslow_baseline: beta length != p");
    auto eta = coxdetail::linear_predictor(d, beta);
    const double m = eta.empty() ? 0.0 : *std::max_element(eta.begin(), eta.end());

    std::vector<std::size_t> asc(d.n);
    std::iota(asc.begin(), asc.end(), 0);
    std::sort(asc.begin(), asc.end(),
              [&](std::size_t a, std::size_t b) { return d.time[a] < d.time[b]; });

    double total = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) total += std::exp(eta[i] - m);

    BaselineHazard h;
    double cum = 0.0;
    std::size_t i = 0;
    while (i < d.n) {
        const double t = d.time[asc[i]];
        std::size_t j = i;
        int dcount = 0;
        double group_w = 0.0;
        while (j < d.n && d.time[asc[j]] == t) {
            if (d.event[asc[j]]) ++dcount;
            group_w += std::exp(eta[asc[j]] - m);
            ++j;
        }
        if (dcount > 0) {
            cum += double(dcount) * std::exp(-(m + std::log(total)));
            h.time.push_back(t);
            h.cumhaz.push_back(cum);
        }
        total -= group_w;  // subjects leave the risk set after their time
        i = j;
    }
    return h;
}

struct CoxFit {
    std::vector<double> beta;  // standardized-covariate scale
    Standardization stdz;
    double lambda = 0.0;
    BaselineHazard baseline;
    double log_partial_lik = 0.0;
    int iterations = 0;
    std::vector<double> se, z;  // unpenalized fits only
};

// Newton-Raphson with step halving on standardized covariates. Converges at
// max-abs gradient < 1e-8; 100 iterations without convergence is reported as
// a divergence (monotone likelihood / separation).
inline CoxFit fit_cox(const SurvivalData& raw) {
    raw.validate();
    const std::size_t d_events = raw.n_events();
    if (d_events == 0) throw PreconditionError("fit_cox: no events");
    if (raw.p >= d_events)
        throw PreconditionError("fit_cox: p (" + std::to_string(raw.p) +
                                ") must be smaller than the number of events (" +
                                std::to_string(d_events) + ")");

    SurvivalData d = raw;
    CoxFit fit;
    fit.stdz = standardize_columns(d);
    fit.beta.assign(d.p, 0.0);

    std::vector<double> grad, hess;
    double value = coxdetail::plik_with_hessian(d, fit.beta, grad, hess);
    int iter = 0;
    bool converged = d.p == 0;
    while (!converged && iter < 100) {
        ++iter;
        auto delta = solve_spd(hess, grad);
        double step = 1.0;
        std::vector<double> candidate(d.p);
        double new_value = value;
        std::vector<double> new_grad, new_hess;
        for (int halving = 0; halving < 40; ++halving) {
            for (std::size_t j = 0; j < d.p; ++j) candidate[j] = fit.beta[j] - step * delta[j];
            new_value = coxdetail::plik_with_hessian(d, candidate, new_grad, new_hess);
            if (new_value <= value) break;
            step /= 2.0;
        }
        if (new_value > value) break;  // no descent direction worked
        fit.beta = candidate;
        value = new_value;
        grad = new_grad;
        hess = new_hess;
        double gmax = 0.0;
        for (double g : grad) gmax = std::max(gmax, std::fabs(g));
        converged = gmax < 1e-8;
    }
    if (!converged)
        throw NumericError("fit_cox: no convergence after " + std::to_string(iter) +
                           " iterations (monotone likelihood / separation?)");
    fit.iterations = iter;
    fit.log_partial_lik = -value;
    if (d.p > 0) {
        auto inv = invert_spd(hess, d.p);
        fit.se.resize(d.p);
        fit.z.resize(d.p);
        for (std::size_t j = 0; j < d.p; ++j) {
            fit.se[j] = std::sqrt(inv[j * d.p + j]);
            fit.z[j] = fit.beta[j] / fit.se[j];
        }
    }
    fit.baseline = breslow_baseline(d, fit.beta);
    return fit;
}

// Smallest lambda at which every coefficient is zero: the max-abs gradient
// coordinate of the (standardized) partial likelihood at beta = 0.
inline double lasso_lambda_max(const SurvivalData& raw) {
    SurvivalData d = raw;
    standardize_columns(d, true);
    auto pl = neg_log_partial_likelihood(d, std::vector<double>(d.p, 0.0));
    double lmax = 0.0;
    for (double g : pl.grad) lmax = std::max(lmax, std::fabs(g));
    return lmax;
}

inline std::vector<double> default_lambda_path(double lambda_max, int count = 100,
                                               double min_ratio = 0.001) {
    std::vector<double> path(count);
    for (int i = 0; i < count; ++i)
        path[i] = lambda_max * std::pow(min_ratio, double(i) / double(count - 1));
    return path;
}

struct LassoPoint {
    double lambda = 0.0;
    std::vector<double> beta;  // standardized scale
};

namespace coxdetail {

// g_k and h_k of the negative log partial likelihood at the current eta.
inline void coordinate_derivatives(const SurvivalData& d, const Order& order,
                                   const std::vector<double>& eta, std::size_t k, double& g,
                                   double& h) {
    const double m = *std::max_element(eta.begin(), eta.end());
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    g = 0.0;
    h = 0.0;
    std::size_t i = 0;
    while (i < d.n) {
        const double t = d.time[order.desc[i]];
        std::size_t j = i;
        int dcount = 0;
        double sum_x_ev = 0.0;
        while (j < d.n && d.time[order.desc[j]] == t) {
            const std::size_t idx = order.desc[j];
            const double w = std::exp(eta[idx] - m);
            const double xk = d.xat(idx, k);
            s0 += w;
            s1 += xk * w;
            s2 += xk * xk * w;
            if (d.event[idx]) {
                ++dcount;
                sum_x_ev += xk;
            }
            ++j;
        }
        if (dcount > 0) {
            const double mean = s1 / s0;
            g += double(dcount) * mean - sum_x_ev;
            h += double(dcount) * (s2 / s0 - mean * mean);
        }
        i = j;
    }
}

inline double soft_threshold(double z, double lambda) {
    if (z > lambda) return z - lambda;
    if (z < -lambda) return z + lambda;
    return 0.0;
}

}  // namespace coxdetail

// Cyclic coordinate descent with per-coordinate quadratic approximation and
// soft thresholding, warm-started along a decreasing lambda path. Input
// covariates are standardized internally; returned betas are on the
// standardized scale.
inline std::vector<LassoPoint> fit_lasso_path(const SurvivalData& raw,
                                              const std::vector<double>& lambdas,
                                              double tol = 1e-7, int max_sweeps = 10000) {
    raw.validate();
    if (raw.n_events() == 0) throw PreconditionError("fit_lasso_path: no events");
    for (std::size_t i = 0; i + 1 < lambdas.size(); ++i)
        if (lambdas[i + 1] > lambdas[i])
            throw PreconditionError("fit_lasso_path: lambda sequence must be decreasing");

    SurvivalData d = raw;
    standardize_columns(d, true);
    const auto order = coxdetail::make_order(d);

    std::vector<double> beta(d.p, 0.0), eta(d.n, 0.0);
    std::vector<LassoPoint> path;
    path.reserve(lambdas.size());

    for (double lambda : lambdas) {
        for (int sweep = 0; sweep < max_sweeps; ++sweep) {
            double max_change = 0.0;
            for (std::size_t k = 0; k < d.p; ++k) {
                double g, h;
                coxdetail::coordinate_derivatives(d, order, eta, k, g, h);
                if (h < 1e-12) continue;
                const double z = h * beta[k] - g;
                const double bnew = coxdetail::soft_threshold(z, lambda) / h;
                const double diff = bnew - beta[k];
                if (diff != 0.0) {
                    for (std::size_t i = 0; i < d.n; ++i) eta[i] += diff * d.xat(i, k);
                    beta[k] = bnew;
                }
                max_change = std::max(max_change, std::fabs(diff));
            }
            if (max_change < tol) break;
        }
        path.push_back({lambda, beta});
    }
    return path;
}

// Penalized objective on the standardized scale, for diagnostics and tests.
inline double lasso_objective(const SurvivalData& standardized, const std::vector<double>& beta,
                              double lambda) {
    auto pl = neg_log_partial_likelihood(standardized, beta);
    double l1 = 0.0;
    for (double b : beta) l1 += std::fabs(b);
    return pl.value + lambda * l1;
}

struct CvResult {
    double lambda = 0.0;
    std::vector<double> lambdas;
    std::vector<double> mean_deviance;  // Verweij-Van Houwelingen, per lambda
};

// 10-fold (by default) cross-validation, folds stratified by event status.
// Deviance per fold is plik_full(beta) - plik_train(beta) evaluated on the
// raw covariate scale; lambda* minimizes the mean.
inline CvResult cv_select_lambda(const SurvivalData& raw, int folds, std::uint64_t seed,
                                 std::vector<double> lambdas = {}) {
    raw.validate();
    const std::size_t d_events = raw.n_events();
    if (folds < 2) throw PreconditionError("cv_select_lambda: need at least 2 folds");
    if (d_events < std::size_t(folds))
        throw PreconditionError("cv_select_lambda: fewer events (" + std::to_string(d_events) +
                                ") than folds (" + std::to_string(folds) + ")");

    if (lambdas.empty()) lambdas = default_lambda_path(lasso_lambda_max(raw));

    // stratified fold assignment with a seeded shuffle
    std::vector<std::size_t> ev, ce;
    for (std::size_t i = 0; i < raw.n; ++i) (raw.event[i] ? ev : ce).push_back(i);
    Rng rng(seed);
    auto shuffle = [&](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[std::size_t(rng.below(i))]);
    };
    shuffle(ev);
    shuffle(ce);
    std::vector<int> fold(raw.n, 0);
    for (std::size_t i = 0; i < ev.size(); ++i) fold[ev[i]] = int(i % std::size_t(folds));
    for (std::size_t i = 0; i < ce.size(); ++i) fold[ce[i]] = int(i % std::size_t(folds));

    std::vector<double> dev_sum(lambdas.size(), 0.0);
    for (int f = 0; f < folds; ++f) {
        SurvivalData train;
        train.p = raw.p;
        for (std::size_t i = 0; i < raw.n; ++i) {
            if (fold[i] == f) continue;
            ++train.n;
            train.time.push_back(raw.time[i]);
            train.event.push_back(raw.event[i]);
            for (std::size_t j = 0; j < raw.p; ++j) train.x.push_back(raw.xat(i, j));
        }
        if (train.n_events() == 0)
            throw PreconditionError("cv_select_lambda: a training fold has no events");

        SurvivalData train_std = train;
        auto stdz = standardize_columns(train_std, true);  // same stats fit_lasso_path uses
        auto path = fit_lasso_path(train, lambdas);

        for (std::size_t li = 0; li < lambdas.size(); ++li) {
            std::vector<double> beta_raw(raw.p);
            for (std::size_t j = 0; j < raw.p; ++j) beta_raw[j] = path[li].beta[j] / stdz.sd[j];
            const double full = neg_log_partial_likelihood(raw, beta_raw).value;
            const double part = neg_log_partial_likelihood(train, beta_raw).value;
            dev_sum[li] += full - part;
        }
    }

    CvResult r;
    r.lambdas = lambdas;
    r.mean_deviance.resize(lambdas.size());
    std::size_t best = 0;
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
        r.mean_deviance[li] = dev_sum[li] / double(folds);
        if (r.mean_deviance[li] < r.mean_deviance[best]) best = li;
    }
    r.lambda = lambdas[best];
    return r;
}

// LASSO fit at a fixed lambda, packaged with standardization and baseline.
inline CoxFit fit_lasso_cox(const SurvivalData& raw, double lambda) {
    SurvivalData d = raw;
    CoxFit fit;
    fit.stdz = standardize_columns(d, true);
    auto path = fit_lasso_path(raw, {lambda});
    fit.beta = path.front().beta;
    fit.lambda = lambda;
    fit.log_partial_lik = -neg_log_partial_likelihood(d, fit.beta).value;
    fit.baseline = breslow_baseline(d, fit.beta);
    return fit;
}

inline double predict_risk(const CoxFit& fit, const std::vector<double>& x) {
    if (x.size() != fit.beta.size())
        throw ShapeError("predict_risk: covariate length " + std::to_string(x.size()) +
                         " != fitted " + std::to_string(fit.beta.size()));
    double eta = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j)
        eta += (x[j] - fit.stdz.mean[j]) / fit.stdz.sd[j] * fit.beta[j];
    return eta;
}

// S(t|x) = exp(-H0(t) * exp(eta)).
inline double predict_survival(const CoxFit& fit, const std::vector<double>& x, double t) {
    if (t < 0) throw PreconditionError("predict_survival: t must be >= 0");
    const double eta = predict_risk(fit, x);
    return std::exp(-baseline_cumhaz_at(fit.baseline, t) * std::exp(eta));
}

struct LrtResult {
    double statistic = 0.0;
    double p = 1.0;
    int df = 0;
};

// Covariate-adjusted group comparison: Cox fit with group indicators plus
// covariates against covariates alone, likelihood-ratio tested on k-1 df.
inline LrtResult cox_group_lrt(const std::vector<int>& group, const std::vector<double>& time,
                               const std::vector<int>& event,
                               const std::vector<std::vector<double>>& covariate_columns) {
    const std::size_t n = group.size();
    if (time.size() != n || event.size() != n) throw ShapeError("cox_group_lrt: length mismatch");
    int k = 0;
    for (int g : group) k = std::max(k, g + 1);
    if (k < 2) throw PreconditionError("cox_group_lrt: need at least 2 groups");
    for (const auto& col : covariate_columns)
        if (col.size() != n) throw ShapeError("cox_group_lrt: covariate length mismatch");

    auto build = [&](bool with_groups) {
        SurvivalData d;
        d.n = n;
        d.p = covariate_columns.size() + (with_groups ? std::size_t(k - 1) : 0);
        d.time = time;
        d.event = event;
        d.x.resize(d.n * d.p);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t j = 0;
            if (with_groups)
                for (int g = 1; g < k; ++g) d.xref(i, j++) = group[i] == g ? 1.0 : 0.0;
            for (const auto& col : covariate_columns) d.xref(i, j++) = col[i];
        }
        return d;
    };

    const auto full = fit_cox(build(true));
    double reduced_ll;
    if (covariate_columns.empty()) {
        SurvivalData null_d = build(false);
        reduced_ll = -neg_log_partial_likelihood(null_d, {}).value;
    } else {
        reduced_ll = fit_cox(build(false)).log_partial_lik;
    }

    LrtResult r;
    r.df = k - 1;
    r.statistic = std::max(0.0, 2.0 * (full.log_partial_lik - reduced_ll));
    r.p = chisq_sf(r.statistic, r.df);
    return r;
}

// ---- COXFIT1 text serialization -------------------------------------------

namespace coxdetail {

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace coxdetail

inline void write_coxfit(const CoxFit& fit, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "COXFIT1\n";
    out << "p " << fit.beta.size() << "\n";
    out << "lambda " << coxdetail::fmt17(fit.lambda) << "\n";
    out << "loglik " << coxdetail::fmt17(fit.log_partial_lik) << "\n";
    out << "iterations " << fit.iterations << "\n";
    auto row = [&](const char* name, const std::vector<double>& v) {
        out << name;
        for (double x : v) out << " " << coxdetail::fmt17(x);
        out << "\n";
    };
    row("beta", fit.beta);
    row("mean", fit.stdz.mean);
    row("sd", fit.stdz.sd);
    if (!fit.se.empty()) row("se", fit.se);
    if (!fit.z.empty()) row("z", fit.z);
    out << "baseline " << fit.baseline.time.size() << "\n";
    for (std::size_t i = 0; i < fit.baseline.time.size(); ++i)
        out << coxdetail::fmt17(fit.baseline.time[i]) << " "
            << coxdetail::fmt17(fit.baseline.cumhaz[i]) << "\n";
    out.close();
    if (!out) throw IoError("write failed for " + path);
}

inline CoxFit read_coxfit(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "COXFIT1")
        throw IoError(path + ": expected COXFIT1 header, got \"" + line + "\"");
    CoxFit fit;
    std::size_t p = 0;
    bool have_p = false;
    auto parse_values = [&](std::istringstream& ss, std::vector<double>& v, std::size_t count,
                            const std::string& name) {
        v.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            if (!(ss >> v[i])) throw IoError(path + ": truncated " + name + " row");
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "p") {
            if (!(ss >> p)) throw IoError(path + ": bad p row");
            have_p = true;
        } else if (key == "lambda") {
            ss >> fit.lambda;
        } else if (key == "loglik") {
            ss >> fit.log_partial_lik;
        } else if (key == "iterations") {
            ss >> fit.iterations;
        } else if (key == "beta" || key == "mean" || key == "sd" || key == "se" || key == "z") {
            if (!have_p) throw IoError(path + ": vector row before p");
            std::vector<double>* dst = key == "beta"  ? &fit.beta
                                       : key == "mean" ? &fit.stdz.mean
                                       : key == "sd"   ? &fit.stdz.sd
                                       : key == "se"   ? &fit.se
                                                       : &fit.z;
            parse_values(ss, *dst, p, key);
        } else if (key == "baseline") {
            std::size_t rows = 0;
            if (!(ss >> rows)) throw IoError(path + ": bad baseline row count");
            fit.baseline.time.resize(rows);
            fit.baseline.cumhaz.resize(rows);
            for (std::size_t i = 0; i < rows; ++i) {
                if (!std::getline(in, line)) throw IoError(path + ": truncated baseline table");
                std::istringstream rs(line);
                if (!(rs >> fit.baseline.time[i] >> fit.baseline.cumhaz[i]))
                    throw IoError(path + ": bad baseline table row " + std::to_string(i));
            }
        } else {
            throw IoError(path + ": unknown COXFIT1 key \"" + key + "\"");
        }
    }
    if (!have_p || fit.beta.size() != p || fit.stdz.mean.size() != p || fit.stdz.sd.size() != p)
        throw IoError(path + ": incomplete COXFIT1 record");
    for (std::size_t i = 1; i < fit.baseline.cumhaz.size(); ++i)
        if (fit.baseline.cumhaz[i] < fit.baseline.cumhaz[i - 1])
            throw IoError(path + ": baseline cumulative hazard must be nondecreasing");
    return fit;
}

}  // namespace hpnet
