#pragma once
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hpnet/layers.hpp"

// Central-difference gradient verification for the layer kernels. Everything
// here runs the double instantiation of the kernels so truncation, not
// storage precision, dominates the comparison.

namespace hpnet {

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    double tolerance = 0.0;
    bool pass() const { return checked > 0 && max_rel_err < tolerance; }
};

namespace detail {

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
    return std::fabs(analytic - numeric) / denom;
}

// Perturbs each coordinate in turn; `eval` must recompute the scalar loss
// from current coordinate values each call.
inline void fd_sweep(std::vector<double*> coords, const std::function<double()>& eval,
                     const std::vector<double>& analytic, double h, FdReport& rep) {
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double saved = *coords[i];
        *coords[i] = saved + h;
        const double up = eval();
        *coords[i] = saved - h;
        const double dn = eval();
        *coords[i] = saved;
        const double numeric = (up - dn) / (2.0 * h);
        rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic[i], numeric));
        ++rep.checked;
    }
}

template <typename C>
std::vector<double*> addresses(C& v) {
    std::vector<double*> out;
    out.reserve(v.size());
    for (auto& x : v) out.push_back(&x);
    return out;
}

}  // namespace detail

// Loss is sum(out * probe) with a fixed probe, so the upstream gradient for
// the analytic pass is the probe itself.
inline FdReport finite_difference_check(Tensor4<double> input, ConvWeights<double> kw, Dims3 pad,
                                        Dims3 stride, const Tensor4<double>& probe, double tol,
                                        double h = 1e-4) {
    if (!(tol > 0)) throw PreconditionError("finite_difference_check: tolerance must be > 0");
    FdReport rep;
    rep.tolerance = tol;
    auto grads = conv3d_backward(input, kw, probe, pad, stride);
    auto eval = [&]() {
        auto out = conv3d(input, kw, pad, stride);
        double loss = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) loss += out.values[i] * probe.values[i];
        return loss;
    };
    detail::fd_sweep(detail::addresses(input.values), eval, grads.dinput.values, h, rep);
    detail::fd_sweep(detail::addresses(kw.w), eval, grads.dweights.w, h, rep);
    detail::fd_sweep(detail::addresses(kw.b), eval, grads.dweights.b, h, rep);
    return rep;
}

inline FdReport finite_difference_check(std::vector<double> input, FcWeights<double> fc,
                                        const std::vector<double>& probe, double tol,
                                        double h = 1e-4) {
    if (!(tol > 0)) throw PreconditionError("finite_difference_check: tolerance must be > 0");
    FdReport rep;
    rep.tolerance = tol;
    auto grads = fully_connected_backward(input, fc, probe);
    auto eval = [&]() {
        auto out = fully_connected(input, fc);
        double loss = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) loss += out[i] * probe[i];
        return loss;
    };
    detail::fd_sweep(detail::addresses(input), eval, grads.dinput, h, rep);
    detail::fd_sweep(detail::addresses(fc.w), eval, grads.dweights.w, h, rep);
    detail::fd_sweep(detail::addresses(fc.b), eval, grads.dweights.b, h, rep);
    return rep;
}

inline FdReport finite_difference_check(std::vector<Tensor4<double>> batch, BnParams<double> bn,
                                        double momentum, double eps,
                                        const std::vector<Tensor4<double>>& probe, double tol,
                                        double h = 1e-4) {
    if (!(tol > 0)) throw PreconditionError("finite_difference_check: tolerance must be > 0");
    FdReport rep;
    rep.tolerance = tol;
    BnCache<double> cache;
    {
        BnParams<double> scratch = bn;  // running-stat updates must not leak between evals
        batch_norm(batch, scratch, Mode::train, momentum, eps, &cache);
    }
    auto grads = batch_norm_backward(batch, cache, bn, probe);
    auto eval = [&]() {
        BnParams<double> scratch = bn;
        auto out = batch_norm(batch, scratch, Mode::train, momentum, eps);
        double loss = 0.0;
        for (std::size_t s = 0; s < out.size(); ++s)
            for (std::size_t i = 0; i < out[s].size(); ++i) loss += out[s].values[i] * probe[s].values[i];
        return loss;
    };
    for (std::size_t s = 0; s < batch.size(); ++s)
        detail::fd_sweep(detail::addresses(batch[s].values), eval, grads.dinput[s].values, h, rep);
    detail::fd_sweep(detail::addresses(bn.gamma), eval, grads.dgamma, h, rep);
    detail::fd_sweep(detail::addresses(bn.beta), eval, grads.dbeta, h, rep);
    return rep;
}

inline FdReport finite_difference_check_softmax(std::vector<double> logits, int label, double tol,
                                                double h = 1e-4) {
    if (!(tol > 0)) throw PreconditionError("finite_difference_check: tolerance must be > 0");
    FdReport rep;
    rep.tolerance = tol;
    auto analytic = softmax_cross_entropy(logits, label).dlogits;
    auto eval = [&]() { return softmax_cross_entropy(logits, label).loss; };
    detail::fd_sweep(detail::addresses(logits), eval, analytic, h, rep);
    return rep;
}

// relu/maxpool/gap are piecewise linear; valid where inputs sit away from the
// kinks (callers should keep |values| and window gaps > 2h).
inline FdReport finite_difference_check_relu(Tensor4<double> input, const Tensor4<double>& probe,
                                             double tol, double h = 1e-4) {
    FdReport rep;
    rep.tolerance = tol;
    auto analytic = relu_backward(input, probe);
    auto eval = [&]() {
        auto out = relu(input);
        double loss = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) loss += out.values[i] * probe.values[i];
        return loss;
    };
    detail::fd_sweep(detail::addresses(input.values), eval, analytic.values, h, rep);
    return rep;
}

inline FdReport finite_difference_check_gap(Tensor4<double> input, const std::vector<double>& probe,
                                            double tol, double h = 1e-4) {
    FdReport rep;
    rep.tolerance = tol;
    auto analytic = gap_backward(input.c, input.dims, probe);
    auto eval = [&]() {
        auto out = gap(input);
        double loss = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) loss += out[i] * probe[i];
        return loss;
    };
    detail::fd_sweep(detail::addresses(input.values), eval, analytic.values, h, rep);
    return rep;
}

inline FdReport finite_difference_check_maxpool(Tensor4<double> input, const Tensor4<double>& probe,
                                                double tol, double h = 1e-4) {
    FdReport rep;
    rep.tolerance = tol;
    auto fwd = maxpool3d(input);
    auto analytic = maxpool3d_backward(fwd, input.c, input.dims, probe);
    auto eval = [&]() {
        auto out = maxpool3d(input).out;
        double loss = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) loss += out.values[i] * probe.values[i];
        return loss;
    };
    detail::fd_sweep(detail::addresses(input.values), eval, analytic.values, h, rep);
    return rep;
}

}  // namespace hpnet
