#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hpnet/error.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/volume.hpp"

// Differentiable layer kernels for the two-stream network. Direct loops; the
// crop grid is small enough that nothing fancier is warranted. All reductions
// accumulate in double regardless of the storage scalar T.

namespace hpnet {

enum class Mode { train, infer };

template <typename T>
struct ConvWeights {
    int out_c = 0, in_c = 0;
    Dims3 k;
    std::vector<T> w;  // (((o*in_c + c)*k.z + dz)*k.y + dy)*k.x + dx
    std::vector<T> b;  // per output channel

    ConvWeights() = default;
    ConvWeights(int oc, int ic, Dims3 kd)
        : out_c(oc), in_c(ic), k(kd), w(std::size_t(oc) * ic * kd.count(), T(0)), b(oc, T(0)) {}

    std::size_t windex(int o, int c, int dx, int dy, int dz) const {
        return (((std::size_t(o) * in_c + c) * k.z + dz) * k.y + dy) * k.x + dx;
    }
};

template <typename T>
struct ConvGrads {
    ConvWeights<T> dweights;
    Tensor4<T> dinput;
};

namespace detail {

inline Dims3 conv_out_dims(const Dims3& in, const Dims3& k, const Dims3& pad, const Dims3& stride) {
    auto axis = [](int n, int kk, int p, int s) { return (n + 2 * p - kk) / s + 1; };
    Dims3 out{axis(in.x, k.x, pad.x, stride.x), axis(in.y, k.y, pad.y, stride.y),
              axis(in.z, k.z, pad.z, stride.z)};
    if (out.x < 1 || out.y < 1 || out.z < 1)
        throw ShapeError("conv3d output would be empty for input " + to_string(in));
    return out;
}

template <typename T>
void check_conv_args(const Tensor4<T>& input, const ConvWeights<T>& kw, const Dims3& pad,
                     const Dims3& stride) {
    if (input.c != kw.in_c)
        throw ShapeError("conv3d: input has " + std::to_string(input.c) + " channels, kernels expect " +
                         std::to_string(kw.in_c));
    if (int(kw.b.size()) != kw.out_c) throw ShapeError("conv3d: bias length != out_c");
    if (kw.w.size() != std::size_t(kw.out_c) * kw.in_c * kw.k.count())
        throw ShapeError("conv3d: kernel value count mismatch");
    if (pad.x < 0 || pad.y < 0 || pad.z < 0) throw ShapeError("conv3d: negative padding");
    if (stride.x < 1 || stride.y < 1 || stride.z < 1) throw ShapeError("conv3d: stride must be >= 1");
    for (T v : kw.w)
        if (!std::isfinite(double(v))) throw NumericError("conv3d: non-finite kernel weight");
    for (T v : kw.b)
        if (!std::isfinite(double(v))) throw NumericError("conv3d: non-finite bias");
}

// Inclusive output range [lo, hi] on one axis for which in = out*stride + d - pad stays valid.
inline void axis_range(int out_n, int in_n, int d, int pad, int stride, int& lo, int& hi) {
    int num = pad - d;
    lo = num <= 0 ? 0 : (num + stride - 1) / stride;
    hi = std::min(out_n - 1, (in_n - 1 + pad - d) / stride);
}

}  // namespace detail

template <typename T>
Tensor4<T> conv3d(const Tensor4<T>& input, const ConvWeights<T>& kw, Dims3 pad, Dims3 stride) {
    detail::check_conv_args(input, kw, pad, stride);
    const Dims3 od = detail::conv_out_dims(input.dims, kw.k, pad, stride);
    Tensor4<T> out(kw.out_c, od);
    const Dims3 id = input.dims;
    std::vector<double> acc(od.count());
    for (int o = 0; o < kw.out_c; ++o) {
        std::fill(acc.begin(), acc.end(), double(kw.b[o]));
        for (int c = 0; c < kw.in_c; ++c) {
            const T* in = input.channel(c);
            for (int dz = 0; dz < kw.k.z; ++dz)
                for (int dy = 0; dy < kw.k.y; ++dy)
                    for (int dx = 0; dx < kw.k.x; ++dx) {
                        const double wv = double(kw.w[kw.windex(o, c, dx, dy, dz)]);
                        if (wv == 0.0) continue;
                        int zlo, zhi, ylo, yhi, xlo, xhi;
                        detail::axis_range(od.z, id.z, dz, pad.z, stride.z, zlo, zhi);
                        detail::axis_range(od.y, id.y, dy, pad.y, stride.y, ylo, yhi);
                        detail::axis_range(od.x, id.x, dx, pad.x, stride.x, xlo, xhi);
                        const int xoff = dx - pad.x;
                        for (int oz = zlo; oz <= zhi; ++oz) {
                            const int iz = oz * stride.z + dz - pad.z;
                            for (int oy = ylo; oy <= yhi; ++oy) {
                                const int iy = oy * stride.y + dy - pad.y;
                                double* arow = acc.data() + (std::size_t(oz) * od.y + oy) * od.x;
                                const T* irow = in + (std::size_t(iz) * id.y + iy) * id.x;
                                if (stride.x == 1) {
                                    for (int ox = xlo; ox <= xhi; ++ox) arow[ox] += wv * double(irow[ox + xoff]);
                                } else {
                                    for (int ox = xlo; ox <= xhi; ++ox)
                                        arow[ox] += wv * double(irow[ox * stride.x + xoff]);
                                }
                            }
                        }
                    }
        }
        T* dst = out.channel(o);
        for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = T(acc[i]);
    }
    return out;
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor4<T>& input, const ConvWeights<T>& kw,
                             const Tensor4<T>& upstream, Dims3 pad, Dims3 stride) {
    detail::check_conv_args(input, kw, pad, stride);
    const Dims3 od = detail::conv_out_dims(input.dims, kw.k, pad, stride);
    if (upstream.c != kw.out_c || !(upstream.dims == od))
        throw ShapeError("conv3d_backward: upstream dims do not match forward output");
    const Dims3 id = input.dims;

    ConvGrads<T> g;
    g.dweights = ConvWeights<T>(kw.out_c, kw.in_c, kw.k);
    g.dinput = Tensor4<T>(input.c, id);
    std::vector<double> din_acc(g.dinput.size(), 0.0);

    for (int o = 0; o < kw.out_c; ++o) {
        const T* up = upstream.channel(o);
        double bacc = 0.0;
        for (std::size_t i = 0; i < od.count(); ++i) bacc += double(up[i]);
        g.dweights.b[o] = T(bacc);
        for (int c = 0; c < kw.in_c; ++c) {
            const T* in = input.channel(c);
            double* din = din_acc.data() + std::size_t(c) * id.count();
            for (int dz = 0; dz < kw.k.z; ++dz)
                for (int dy = 0; dy < kw.k.y; ++dy)
                    for (int dx = 0; dx < kw.k.x; ++dx) {
                        int zlo, zhi, ylo, yhi, xlo, xhi;
                        detail::axis_range(od.z, id.z, dz, pad.z, stride.z, zlo, zhi);
                        detail::axis_range(od.y, id.y, dy, pad.y, stride.y, ylo, yhi);
                        detail::axis_range(od.x, id.x, dx, pad.x, stride.x, xlo, xhi);
                        const double wv = double(kw.w[kw.windex(o, c, dx, dy, dz)]);
                        const int xoff = dx - pad.x;
                        double wacc = 0.0;
                        for (int oz = zlo; oz <= zhi; ++oz) {
                            const int iz = oz * stride.z + dz - pad.z;
                            for (int oy = ylo; oy <= yhi; ++oy) {
                                const int iy = oy * stride.y + dy - pad.y;
                                const T* urow = up + (std::size_t(oz) * od.y + oy) * od.x;
                                const T* irow = in + (std::size_t(iz) * id.y + iy) * id.x;
                                double* drow = din + (std::size_t(iz) * id.y + iy) * id.x;
                                if (stride.x == 1) {
                                    for (int ox = xlo; ox <= xhi; ++ox) {
                                        wacc += double(urow[ox]) * double(irow[ox + xoff]);
                                        drow[ox + xoff] += wv * double(urow[ox]);
                                    }
                                } else {
                                    for (int ox = xlo; ox <= xhi; ++ox) {
                                        const int ix = ox * stride.x + xoff;
                                        wacc += double(urow[ox]) * double(irow[ix]);
                                        drow[ix] += wv * double(urow[ox]);
                                    }
                                }
                            }
                        }
                        g.dweights.w[kw.windex(o, c, dx, dy, dz)] = T(wacc);
                    }
        }
    }
    for (std::size_t i = 0; i < din_acc.size(); ++i) g.dinput.values[i] = T(din_acc[i]);
    return g;
}

template <typename T>
struct PoolResult {
    Tensor4<T> out;
    std::vector<std::uint32_t> argmax;  // flat index into the input tensor per output element
};

// 2x2x2 max pooling with stride 2; odd trailing voxels are dropped.
// Ties take the first occurrence in (z,y,x) scan order.
template <typename T>
PoolResult<T> maxpool3d(const Tensor4<T>& input) {
    const Dims3 id = input.dims;
    if (id.x < 2 || id.y < 2 || id.z < 2)
        throw ShapeError("maxpool3d: every spatial dim must be >= 2, got " + to_string(id));
    const Dims3 od{id.x / 2, id.y / 2, id.z / 2};
    PoolResult<T> r;
    r.out = Tensor4<T>(input.c, od);
    r.argmax.resize(r.out.size());
    std::size_t w = 0;
    for (int c = 0; c < input.c; ++c)
        for (int oz = 0; oz < od.z; ++oz)
            for (int oy = 0; oy < od.y; ++oy)
                for (int ox = 0; ox < od.x; ++ox, ++w) {
                    T best{};
                    std::size_t best_idx = 0;
                    bool first = true;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t idx =
                                    input.index(c, ox * 2 + dx, oy * 2 + dy, oz * 2 + dz);
                                const T v = input.values[idx];
                                if (first || v > best) {
                                    best = v;
                                    best_idx = idx;
                                    first = false;
                                }
                            }
                    r.out.values[w] = best;
                    r.argmax[w] = std::uint32_t(best_idx);
                }
    return r;
}

template <typename T>
Tensor4<T> maxpool3d_backward(const PoolResult<T>& fwd, int in_c, Dims3 in_dims,
                              const Tensor4<T>& upstream) {
    if (!upstream.same_shape(fwd.out)) throw ShapeError("maxpool3d_backward: upstream shape mismatch");
    Tensor4<T> din(in_c, in_dims);
    for (std::size_t i = 0; i < fwd.argmax.size(); ++i) din.values[fwd.argmax[i]] += upstream.values[i];
    return din;
}

template <typename T>
struct BnParams {
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;

    BnParams() = default;
    explicit BnParams(int channels)
        : gamma(channels, T(1)), beta(channels, T(0)),
          running_mean(channels, T(0)), running_var(channels, T(1)) {}
    int channels() const { return int(gamma.size()); }
};

template <typename T>
struct BnCache {
    std::vector<double> mean, inv_std;  // per channel, train-mode batch statistics
};

// Train mode normalizes per channel over (batch x spatial) and updates the
// running stats as running <- momentum*running + (1-momentum)*batch (batch
// variance is the population form used for normalization). Infer mode uses
// the running stats only and never touches them.
template <typename T>
std::vector<Tensor4<T>> batch_norm(const std::vector<Tensor4<T>>& batch, BnParams<T>& bn, Mode mode,
                                   double momentum, double eps, BnCache<T>* cache = nullptr) {
    if (batch.empty()) throw PreconditionError("batch_norm: empty batch");
    if (!(eps > 0)) throw PreconditionError("batch_norm: epsilon must be > 0");
    const int C = batch[0].c;
    if (bn.channels() != C) throw ShapeError("batch_norm: parameter channel count mismatch");
    for (const auto& t : batch)
        if (!t.same_shape(batch[0])) throw ShapeError("batch_norm: ragged batch");

    const std::size_t spatial = batch[0].spatial();
    std::vector<Tensor4<T>> out;
    out.reserve(batch.size());
    for (const auto& t : batch) out.emplace_back(t.c, t.dims);

    if (mode == Mode::infer) {
        for (std::size_t s = 0; s < batch.size(); ++s)
            for (int c = 0; c < C; ++c) {
                const double inv = 1.0 / std::sqrt(double(bn.running_var[c]) + eps);
                const double g = double(bn.gamma[c]) * inv, b = double(bn.beta[c]);
                const double m = double(bn.running_mean[c]);
                const T* in = batch[s].channel(c);
                T* o = out[s].channel(c);
                for (std::size_t i = 0; i < spatial; ++i) o[i] = T((double(in[i]) - m) * g + b);
            }
        return out;
    }

    if (batch.size() < 2) throw PreconditionError("batch_norm: train mode needs batch size >= 2");
    const double m_count = double(batch.size() * spatial);
    std::vector<double> mean(C, 0.0), var(C, 0.0);
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (const auto& t : batch) {
            const T* in = t.channel(c);
            for (std::size_t i = 0; i < spatial; ++i) acc += double(in[i]);
        }
        mean[c] = acc / m_count;
        double vacc = 0.0;
        for (const auto& t : batch) {
            const T* in = t.channel(c);
            for (std::size_t i = 0; i < spatial; ++i) {
                const double d = double(in[i]) - mean[c];
                vacc += d * d;
            }
        }
        var[c] = vacc / m_count;
    }
    for (int c = 0; c < C; ++c) {
        bn.running_mean[c] = T(momentum * double(bn.running_mean[c]) + (1.0 - momentum) * mean[c]);
        bn.running_var[c] = T(momentum * double(bn.running_var[c]) + (1.0 - momentum) * var[c]);
        const double inv = 1.0 / std::sqrt(var[c] + eps);
        const double g = double(bn.gamma[c]) * inv, b = double(bn.beta[c]);
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const T* in = batch[s].channel(c);
            T* o = out[s].channel(c);
            for (std::size_t i = 0; i < spatial; ++i) o[i] = T((double(in[i]) - mean[c]) * g + b);
        }
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->inv_std.resize(C);
        for (int c = 0; c < C; ++c) cache->inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    return out;
}

template <typename T>
struct BnGrads {
    std::vector<T> dgamma, dbeta;
    std::vector<Tensor4<T>> dinput;
};

template <typename T>
BnGrads<T> batch_norm_backward(const std::vector<Tensor4<T>>& input, const BnCache<T>& cache,
                               const BnParams<T>& bn, const std::vector<Tensor4<T>>& upstream) {
    const int C = bn.channels();
    if (input.size() != upstream.size() || input.empty())
        throw ShapeError("batch_norm_backward: batch size mismatch");
    const std::size_t spatial = input[0].spatial();
    const double m = double(input.size() * spatial);

    BnGrads<T> g;
    g.dgamma.assign(C, T(0));
    g.dbeta.assign(C, T(0));
    g.dinput.reserve(input.size());
    for (const auto& t : input) g.dinput.emplace_back(t.c, t.dims);

    for (int c = 0; c < C; ++c) {
        const double mu = cache.mean[c], inv = cache.inv_std[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t s = 0; s < input.size(); ++s) {
            const T* in = input[s].channel(c);
            const T* up = upstream[s].channel(c);
            for (std::size_t i = 0; i < spatial; ++i) {
                const double xhat = (double(in[i]) - mu) * inv;
                sum_dy += double(up[i]);
                sum_dy_xhat += double(up[i]) * xhat;
            }
        }
        g.dbeta[c] = T(sum_dy);
        g.dgamma[c] = T(sum_dy_xhat);
        const double k = double(bn.gamma[c]) * inv / m;
        for (std::size_t s = 0; s < input.size(); ++s) {
            const T* in = input[s].channel(c);
            const T* up = upstream[s].channel(c);
            T* di = g.dinput[s].channel(c);
            for (std::size_t i = 0; i < spatial; ++i) {
                const double xhat = (double(in[i]) - mu) * inv;
                di[i] = T(k * (m * double(up[i]) - sum_dy - xhat * sum_dy_xhat));
            }
        }
    }
    return g;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& input) {
    Tensor4<T> out(input.c, input.dims);
    for (std::size_t i = 0; i < input.size(); ++i) out.values[i] = input.values[i] > T(0) ? input.values[i] : T(0);
    return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& input, const Tensor4<T>& upstream) {
    if (!input.same_shape(upstream)) throw ShapeError("relu_backward: shape mismatch");
    Tensor4<T> din(input.c, input.dims);
    for (std::size_t i = 0; i < input.size(); ++i)
        din.values[i] = input.values[i] > T(0) ? upstream.values[i] : T(0);
    return din;
}

// Global average pooling: per-channel spatial mean.
template <typename T>
std::vector<T> gap(const Tensor4<T>& input) {
    std::vector<T> out(input.c);
    const std::size_t spatial = input.spatial();
    for (int c = 0; c < input.c; ++c) {
        double acc = 0.0;
        const T* in = input.channel(c);
        for (std::size_t i = 0; i < spatial; ++i) acc += double(in[i]);
        out[c] = T(acc / double(spatial));
    }
    return out;
}

template <typename T>
Tensor4<T> gap_backward(int channels, Dims3 in_dims, const std::vector<T>& upstream) {
    if (int(upstream.size()) != channels) throw ShapeError("gap_backward: upstream length mismatch");
    Tensor4<T> din(channels, in_dims);
    const double inv = 1.0 / double(in_dims.count());
    for (int c = 0; c < channels; ++c) {
        T* d = din.channel(c);
        const T v = T(double(upstream[c]) * inv);
        for (std::size_t i = 0; i < in_dims.count(); ++i) d[i] = v;
    }
    return din;
}

template <typename T>
struct FcWeights {
    int out = 0, in = 0;
    std::vector<T> w;  // row-major, w[o*in + i]
    std::vector<T> b;

    FcWeights() = default;
    FcWeights(int o, int i) : out(o), in(i), w(std::size_t(o) * i, T(0)), b(o, T(0)) {}
};

template <typename T>
std::vector<T> fully_connected(const std::vector<T>& input, const FcWeights<T>& fc) {
    if (int(input.size()) != fc.in)
        throw ShapeError("fully_connected: input length " + std::to_string(input.size()) +
                         " != weight columns " + std::to_string(fc.in));
    std::vector<T> out(fc.out);
    for (int o = 0; o < fc.out; ++o) {
        double acc = double(fc.b[o]);
        const T* row = fc.w.data() + std::size_t(o) * fc.in;
        for (int i = 0; i < fc.in; ++i) acc += double(row[i]) * double(input[i]);
        out[o] = T(acc);
    }
    return out;
}

template <typename T>
struct FcGrads {
    FcWeights<T> dweights;
    std::vector<T> dinput;
};

template <typename T>
FcGrads<T> fully_connected_backward(const std::vector<T>& input, const FcWeights<T>& fc,
                                    const std::vector<T>& upstream) {
    if (int(upstream.size()) != fc.out) throw ShapeError("fc_backward: upstream length mismatch");
    if (int(input.size()) != fc.in) throw ShapeError("fc_backward: input length mismatch");
    FcGrads<T> g;
    g.dweights = FcWeights<T>(fc.out, fc.in);
    g.dinput.assign(fc.in, T(0));
    std::vector<double> din(fc.in, 0.0);
    for (int o = 0; o < fc.out; ++o) {
        const double u = double(upstream[o]);
        g.dweights.b[o] = T(u);
        T* wrow = g.dweights.w.data() + std::size_t(o) * fc.in;
        const T* row = fc.w.data() + std::size_t(o) * fc.in;
        for (int i = 0; i < fc.in; ++i) {
            wrow[i] = T(u * double(input[i]));
            din[i] += u * double(row[i]);
        }
    }
    for (int i = 0; i < fc.in; ++i) g.dinput[i] = T(din[i]);
    return g;
}

template <typename T>
struct DropoutResult {
    std::vector<T> out;
    std::vector<std::uint8_t> mask;  // 1 = kept
    double scale = 1.0;
};

// Inverted dropout: train mode zeroes with probability ratio and scales
// survivors by 1/(1-ratio); infer mode is the identity.
template <typename T>
DropoutResult<T> dropout(const std::vector<T>& input, double ratio, Mode mode, Rng& rng) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw PreconditionError("dropout: ratio must be in [0,1)");
    DropoutResult<T> r;
    r.out = input;
    r.mask.assign(input.size(), 1);
    if (mode == Mode::infer || ratio == 0.0) return r;
    r.scale = 1.0 / (1.0 - ratio);
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (rng.u01() < ratio) {
            r.mask[i] = 0;
            r.out[i] = T(0);
        } else {
            r.out[i] = T(double(input[i]) * r.scale);
        }
    }
    return r;
}

template <typename T>
std::vector<T> dropout_backward(const DropoutResult<T>& fwd, const std::vector<T>& upstream) {
    if (upstream.size() != fwd.mask.size()) throw ShapeError("dropout_backward: length mismatch");
    std::vector<T> din(upstream.size());
    for (std::size_t i = 0; i < upstream.size(); ++i)
        din[i] = fwd.mask[i] ? T(double(upstream[i]) * fwd.scale) : T(0);
    return din;
}

template <typename T>
struct SoftmaxLoss {
    double loss = 0.0;
    std::vector<T> dlogits;  // softmax - onehot
};

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const std::vector<T>& logits, int label) {
    if (logits.empty()) throw PreconditionError("softmax_cross_entropy: empty logits");
    if (label < 0 || label >= int(logits.size()))
        throw PreconditionError("softmax_cross_entropy: label out of range");
    double mx = double(logits[0]);
    for (T v : logits) mx = std::max(mx, double(v));
    double denom = 0.0;
    for (T v : logits) denom += std::exp(double(v) - mx);
    SoftmaxLoss<T> r;
    r.loss = -(double(logits[label]) - mx - std::log(denom));
    r.dlogits.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = std::exp(double(logits[i]) - mx) / denom;
        r.dlogits[i] = T(p - (int(i) == label ? 1.0 : 0.0));
    }
    return r;
}

}  // namespace hpnet
