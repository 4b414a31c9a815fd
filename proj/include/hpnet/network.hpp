#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hpnet/augment.hpp"
#include "hpnet/binio.hpp"
#include "hpnet/error.hpp"
#include "hpnet/layers.hpp"
#include "hpnet/metrics.hpp"
#include "hpnet/parallel.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/subject.hpp"
#include "hpnet/volume.hpp"

// Two-stream residual classification network over left/right hippocampal
// crops: stem Conv-BN-ReLU-MaxPool, three residual blocks with pools after
// the first two, GAP per stream, concat -> dropout -> FC. Class order is
// NC = 0, AD = 1 throughout.

namespace hpnet {

constexpr int kClassNC = 0;
constexpr int kClassAD = 1;

struct Rational {
    std::uint32_t num = 1, den = 1;
};

struct NetConfig {
    int stem_kernels = 32;
    std::array<int, 3> block_kernels{32, 64, 128};
    Dims3 kernel_size{3, 3, 3};
    std::vector<int> pool_after{0, 1, 2};  // stage index: 0 = stem, 1..3 = resblocks
    double dropout_ratio = 0.5;
    int num_classes = 2;
    Dims3 input_dims{29, 21, 55};
    Rational scale{1, 1};  // multiplier on every channel count, for desk-scale runs
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;

    int scaled(int base) const {
        if (scale.num == 0 || scale.den == 0) throw ConfigError("scale_factor must be positive");
        const long long v = (long long)(base) * scale.num / scale.den;
        if (v < 1)
            throw ConfigError("scale_factor " + std::to_string(scale.num) + "/" +
                              std::to_string(scale.den) + " drops a channel count below 1");
        return int(v);
    }

    int feature_length() const { return 2 * scaled(block_kernels[2]); }

    bool pooled(int stage) const {
        return std::find(pool_after.begin(), pool_after.end(), stage) != pool_after.end();
    }

    // Grid entering stage s at index s (0=stem, 1..3=blocks); index 4 is the GAP grid.
    std::vector<Dims3> stage_dims() const {
        std::vector<Dims3> dims;
        Dims3 d = input_dims;
        for (int stage = 0; stage <= 3; ++stage) {
            dims.push_back(d);
            if (pooled(stage)) {
                if (d.x < 2 || d.y < 2 || d.z < 2)
                    throw ConfigError("pooling after stage " + std::to_string(stage) +
                                      " would collapse the grid " + to_string(d));
                d = {d.x / 2, d.y / 2, d.z / 2};
            }
        }
        dims.push_back(d);
        return dims;
    }

    void validate() const {
        if (input_dims.x <= 0 || input_dims.y <= 0 || input_dims.z <= 0)
            throw ConfigError("input_dims must be positive");
        if (!(dropout_ratio >= 0.0 && dropout_ratio < 1.0))
            throw ConfigError("dropout_ratio must be in [0,1)");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        for (int s : pool_after)
            if (s < 0 || s > 3) throw ConfigError("pool_after entries must be stage indices 0..3");
        scaled(stem_kernels);
        for (int b : block_kernels) scaled(b);
        stage_dims();
    }
};

template <typename T>
struct ResBlockParamsT {
    ConvWeights<T> conv1, conv2;
    BnParams<T> bn1, bn2;
    std::optional<ConvWeights<T>> proj;  // 1x1x1 skip projection when channels change
};

template <typename T>
struct StreamParamsT {
    ConvWeights<T> stem;
    BnParams<T> stem_bn;
    std::array<ResBlockParamsT<T>, 3> blocks;
};

template <typename T>
struct NetworkParamsT {
    NetConfig config;
    StreamParamsT<T> left, right;
    FcWeights<T> fc;
};

using NetworkParams = NetworkParamsT<float>;

template <typename T>
struct ParamRef {
    std::string name;
    std::vector<T>* data;
    std::vector<int> shape;
    bool trainable = true;
};

namespace detail {

template <typename T>
void enum_conv(std::vector<ParamRef<T>>& out, const std::string& prefix, ConvWeights<T>& cw) {
    out.push_back({prefix + ".w", &cw.w, {cw.out_c, cw.in_c, cw.k.x, cw.k.y, cw.k.z}, true});
    out.push_back({prefix + ".b", &cw.b, {cw.out_c}, true});
}

template <typename T>
void enum_bn(std::vector<ParamRef<T>>& out, const std::string& prefix, BnParams<T>& bn) {
    const int c = bn.channels();
    out.push_back({prefix + ".gamma", &bn.gamma, {c}, true});
    out.push_back({prefix + ".beta", &bn.beta, {c}, true});
    out.push_back({prefix + ".running_mean", &bn.running_mean, {c}, false});
    out.push_back({prefix + ".running_var", &bn.running_var, {c}, false});
}

template <typename T>
void enum_stream(std::vector<ParamRef<T>>& out, const std::string& prefix, StreamParamsT<T>& s) {
    enum_conv(out, prefix + ".stem", s.stem);
    enum_bn(out, prefix + ".stem_bn", s.stem_bn);
    for (int b = 0; b < 3; ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b + 1);
        enum_conv(out, bp + ".conv1", s.blocks[b].conv1);
        enum_bn(out, bp + ".bn1", s.blocks[b].bn1);
        enum_conv(out, bp + ".conv2", s.blocks[b].conv2);
        enum_bn(out, bp + ".bn2", s.blocks[b].bn2);
        if (s.blocks[b].proj) enum_conv(out, bp + ".proj", *s.blocks[b].proj);
    }
}

}  // namespace detail

// Stable enumeration of every parameter array; save/load, SGD and gradient
// accumulation all walk this same order.
template <typename T>
std::vector<ParamRef<T>> enumerate_params(NetworkParamsT<T>& net) {
    std::vector<ParamRef<T>> out;
    detail::enum_stream(out, "left", net.left);
    detail::enum_stream(out, "right", net.right);
    out.push_back({"fc.w", &net.fc.w, {net.fc.out, net.fc.in}, true});
    out.push_back({"fc.b", &net.fc.b, {net.fc.out}, true});
    return out;
}

namespace detail {

template <typename T>
StreamParamsT<T> make_stream(const NetConfig& cfg) {
    StreamParamsT<T> s;
    const Dims3 k = cfg.kernel_size;
    const int stem = cfg.scaled(cfg.stem_kernels);
    s.stem = ConvWeights<T>(stem, 1, k);
    s.stem_bn = BnParams<T>(stem);
    int in_c = stem;
    for (int b = 0; b < 3; ++b) {
        const int out_c = cfg.scaled(cfg.block_kernels[b]);
        s.blocks[b].conv1 = ConvWeights<T>(out_c, in_c, k);
        s.blocks[b].bn1 = BnParams<T>(out_c);
        s.blocks[b].conv2 = ConvWeights<T>(out_c, out_c, k);
        s.blocks[b].bn2 = BnParams<T>(out_c);
        if (in_c != out_c) s.blocks[b].proj = ConvWeights<T>(out_c, in_c, Dims3{1, 1, 1});
        in_c = out_c;
    }
    return s;
}

template <typename T>
void he_fill(ConvWeights<T>& cw, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / (double(cw.in_c) * double(cw.k.count())));
    for (auto& v : cw.w) v = T(std_dev * rng.normal());
}

}  // namespace detail

// Zero-valued parameters with the configured shapes.
template <typename T = float>
NetworkParamsT<T> make_network(const NetConfig& cfg) {
    cfg.validate();
    NetworkParamsT<T> net;
    net.config = cfg;
    net.left = detail::make_stream<T>(cfg);
    net.right = detail::make_stream<T>(cfg);
    net.fc = FcWeights<T>(cfg.num_classes, cfg.feature_length());
    return net;
}

// He-normal conv/FC weights, zero biases, identity batch norm.
inline NetworkParams build_network(const NetConfig& cfg, Rng& rng) {
    NetworkParams net = make_network<float>(cfg);
    for (auto* stream : {&net.left, &net.right}) {
        detail::he_fill(stream->stem, rng);
        for (auto& b : stream->blocks) {
            detail::he_fill(b.conv1, rng);
            detail::he_fill(b.conv2, rng);
            if (b.proj) detail::he_fill(*b.proj, rng);
        }
    }
    const double std_dev = std::sqrt(2.0 / double(net.fc.in));
    for (auto& v : net.fc.w) v = float(std_dev * rng.normal());
    return net;
}

namespace detail {

template <typename T>
Tensor4<T> bn_infer_one(const Tensor4<T>& x, const BnParams<T>& bn, double eps) {
    Tensor4<T> out(x.c, x.dims);
    const std::size_t spatial = x.spatial();
    for (int c = 0; c < x.c; ++c) {
        const double inv = 1.0 / std::sqrt(double(bn.running_var[c]) + eps);
        const double g = double(bn.gamma[c]) * inv, b = double(bn.beta[c]);
        const double m = double(bn.running_mean[c]);
        const T* in = x.channel(c);
        T* o = out.channel(c);
        for (std::size_t i = 0; i < spatial; ++i) o[i] = T((double(in[i]) - m) * g + b);
    }
    return out;
}

template <typename T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("tensor add: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a.values[i] += b.values[i];
}

inline Dims3 same_pad(const Dims3& k) { return {k.x / 2, k.y / 2, k.z / 2}; }

// Single-sample stream pass with running-statistics batch norm. Returns the
// GAP vector; optionally hands out the final post-ReLU feature maps.
template <typename T>
std::vector<T> stream_forward_one(const StreamParamsT<T>& s, const NetConfig& cfg,
                                  const Volume& vol, Tensor4<T>* final_maps = nullptr) {
    if (!(vol.dims == cfg.input_dims))
        throw ShapeError("stream input dims " + to_string(vol.dims) + " != configured " +
                         to_string(cfg.input_dims));
    const Dims3 pad = same_pad(cfg.kernel_size);
    const Dims3 one{1, 1, 1};
    Tensor4<T> x = from_volume<T>(vol);
    x = conv3d(x, s.stem, pad, one);
    x = bn_infer_one(x, s.stem_bn, cfg.bn_eps);
    x = relu(x);
    if (cfg.pooled(0)) x = maxpool3d(x).out;
    for (int b = 0; b < 3; ++b) {
        const auto& blk = s.blocks[b];
        Tensor4<T> y = conv3d(x, blk.conv1, pad, one);
        y = bn_infer_one(y, blk.bn1, cfg.bn_eps);
        y = relu(y);
        y = conv3d(y, blk.conv2, pad, one);
        y = bn_infer_one(y, blk.bn2, cfg.bn_eps);
        if (blk.proj)
            add_inplace(y, conv3d(x, *blk.proj, Dims3{0, 0, 0}, one));
        else
            add_inplace(y, x);
        x = relu(y);
        if (cfg.pooled(b + 1)) x = maxpool3d(x).out;
    }
    if (final_maps) *final_maps = x;
    return gap(x);
}

}  // namespace detail

struct ForwardOut {
    std::vector<float> logits;
    std::vector<float> features;  // concat [left GAP, right GAP], before dropout
};

// Deterministic in infer mode; train mode consumes the RNG only for dropout
// (batch norm always uses running statistics on this single-sample path).
inline ForwardOut forward(const NetworkParams& net, const Volume& left, const Volume& right,
                          Mode mode, Rng& rng) {
    ForwardOut out;
    auto gl = detail::stream_forward_one(net.left, net.config, left);
    auto gr = detail::stream_forward_one(net.right, net.config, right);
    out.features = gl;
    out.features.insert(out.features.end(), gr.begin(), gr.end());
    std::vector<float> head = out.features;
    if (mode == Mode::train) head = dropout(head, net.config.dropout_ratio, mode, rng).out;
    out.logits = fully_connected(head, net.fc);
    return out;
}

// Concatenated post-ReLU GAP outputs of both streams (no dropout).
inline std::vector<float> extract_features(const NetworkParams& net, const Volume& left,
                                           const Volume& right) {
    Rng unused(0);
    return forward(net, left, right, Mode::infer, unused).features;
}

struct FeatureVector {
    std::string id;
    std::vector<float> values;
};

// ---- relevance maps ------------------------------------------------------

inline Volume upsample_trilinear(const Volume& in, Dims3 out_dims) {
    Volume out(out_dims);
    auto src_coord = [](int i, int in_n, int out_n) {
        double s = (double(i) + 0.5) * double(in_n) / double(out_n) - 0.5;
        return std::clamp(s, 0.0, double(in_n - 1));
    };
    for (int z = 0; z < out_dims.z; ++z) {
        const double sz = src_coord(z, in.dims.z, out_dims.z);
        const int z0 = int(sz), z1 = std::min(z0 + 1, in.dims.z - 1);
        const double fz = sz - z0;
        for (int y = 0; y < out_dims.y; ++y) {
            const double sy = src_coord(y, in.dims.y, out_dims.y);
            const int y0 = int(sy), y1 = std::min(y0 + 1, in.dims.y - 1);
            const double fy = sy - y0;
            for (int x = 0; x < out_dims.x; ++x) {
                const double sx = src_coord(x, in.dims.x, out_dims.x);
                const int x0 = int(sx), x1 = std::min(x0 + 1, in.dims.x - 1);
                const double fx = sx - x0;
                double v = 0.0;
                v += (1 - fx) * (1 - fy) * (1 - fz) * in.at(x0, y0, z0);
                v += fx * (1 - fy) * (1 - fz) * in.at(x1, y0, z0);
                v += (1 - fx) * fy * (1 - fz) * in.at(x0, y1, z0);
                v += fx * fy * (1 - fz) * in.at(x1, y1, z0);
                v += (1 - fx) * (1 - fy) * fz * in.at(x0, y0, z1);
                v += fx * (1 - fy) * fz * in.at(x1, y0, z1);
                v += (1 - fx) * fy * fz * in.at(x0, y1, z1);
                v += fx * fy * fz * in.at(x1, y1, z1);
                out.at(x, y, z) = float(v);
            }
        }
    }
    return out;
}

// Class-weighted sum of the final-block channel maps at native resolution:
// map(p) = sum_k w_k F_k(p), with w_k the FC row of `cls` restricted to the
// requested stream's feature slots.
inline Volume relevance_native(const NetworkParams& net, const Volume& vol, bool left_stream,
                               int cls = kClassAD) {
    if (cls < 0 || cls >= net.config.num_classes)
        throw PreconditionError("relevance_native: class out of range");
    const auto& stream = left_stream ? net.left : net.right;
    Tensor4<float> maps;
    detail::stream_forward_one(stream, net.config, vol, &maps);
    const int per_stream = net.config.feature_length() / 2;
    const int base = left_stream ? 0 : per_stream;
    Volume out(maps.dims);
    for (std::size_t i = 0; i < out.voxels.size(); ++i) {
        double acc = 0.0;
        for (int k = 0; k < per_stream; ++k)
            acc += double(net.fc.w[std::size_t(cls) * net.fc.in + base + k]) *
                   double(maps.channel(k)[i]);
        out.voxels[i] = float(acc);
    }
    return out;
}

struct RelevancePair {
    Volume left, right;
};

// AD-class relevance per stream, trilinearly upsampled to input resolution.
inline RelevancePair relevance_map(const NetworkParams& net, const Volume& left,
                                   const Volume& right, int cls = kClassAD) {
    RelevancePair pair;
    pair.left = upsample_trilinear(relevance_native(net, left, true, cls), net.config.input_dims);
    pair.right = upsample_trilinear(relevance_native(net, right, false, cls), net.config.input_dims);
    return pair;
}

// ---- training ------------------------------------------------------------

struct TrainSchedule {
    double base_lr = 0.01;
    double momentum = 0.9;
    long step_size = 20000;
    double gamma = 0.1;
    long max_iters = 100000;
    int batch_size = 32;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(base_lr > 0) || !(momentum >= 0) || step_size <= 0 || max_iters <= 0 || batch_size < 2)
            throw ConfigError("invalid training schedule");
        if (!(gamma > 0 && gamma < 1)) throw ConfigError("schedule gamma must be in (0,1)");
    }
};

// Stepwise policy: base_lr * gamma^floor(step/step_size).
inline double lr_at_step(const TrainSchedule& s, long step) {
    if (step < 0 || step >= s.max_iters)
        throw PreconditionError("lr_at_step: step outside [0, max_iters)");
    return s.base_lr * std::pow(s.gamma, double(step / s.step_size));
}

// Sampling pool over AD/NC records; with augmentation each record exposes 27
// variants (the original plus 26 translations), materialized on demand.
class TrainingSet {
public:
    struct Sample {
        Volume left, right;
        int label;  // kClassNC or kClassAD
    };

    TrainingSet(std::vector<SubjectRecord> records, bool augment)
        : records_(std::move(records)), dirs_(directions_26()),
          variants_(augment ? 1 + dirs_.size() : 1) {
        if (records_.empty()) throw PreconditionError("TrainingSet: no records");
        for (std::size_t r = 0; r < records_.size(); ++r) {
            if (records_[r].label == Diagnosis::MCI)
                throw PreconditionError("TrainingSet: MCI rows cannot be used as training labels");
            const int cls = records_[r].label == Diagnosis::AD ? kClassAD : kClassNC;
            for (std::size_t v = 0; v < variants_; ++v) pools_[cls].push_back(r * variants_ + v);
        }
    }

    std::size_t size() const { return records_.size() * variants_; }

    bool has_both_classes() const { return !pools_[0].empty() && !pools_[1].empty(); }

    const std::vector<std::size_t>& pool(int label) const { return pools_[label]; }

    Sample get(std::size_t i) const {
        const SubjectRecord& rec = records_[i / variants_];
        const std::size_t v = i % variants_;
        Sample s;
        s.label = rec.label == Diagnosis::AD ? kClassAD : kClassNC;
        if (v == 0) {
            s.left = rec.left;
            s.right = rec.right;
        } else {
            s.left = translate(rec.left, dirs_[v - 1]);
            s.right = translate(rec.right, dirs_[v - 1]);
        }
        return s;
    }

private:
    std::vector<SubjectRecord> records_;
    std::vector<Offset3> dirs_;
    std::size_t variants_;
    std::array<std::vector<std::size_t>, 2> pools_;
};

struct Checkpoint {
    long step = 0;  // completed iterations
    double eval_auc = 0.0;
    NetworkParams params;
};

struct TrainLogEntry {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double eval_auc = 0.0;
};

struct TrainResult {
    NetworkParams params;
    std::vector<Checkpoint> checkpoints;
    std::vector<TrainLogEntry> log;
};

namespace detail {

struct BnStageCache {
    BnCache<float> cache;
    std::vector<Tensor4<float>> input;  // what went into the bn layer
};

struct BlockCache {
    std::vector<Tensor4<float>> in;
    std::vector<Tensor4<float>> conv1_out;
    BnCache<float> bn1;
    std::vector<Tensor4<float>> bn1_out;
    std::vector<Tensor4<float>> relu1_out;
    std::vector<Tensor4<float>> conv2_out;
    BnCache<float> bn2;
    std::vector<Tensor4<float>> sum;  // bn2_out + skip, pre final relu
};

struct StreamCache {
    std::vector<Tensor4<float>> input;
    std::vector<Tensor4<float>> stem_out;
    BnCache<float> stem_bn;
    std::vector<Tensor4<float>> stem_bn_out;
    std::array<BlockCache, 3> blocks;
    std::array<std::vector<PoolResult<float>>, 4> pools;  // per stage, empty if not pooled
    std::vector<Tensor4<float>> gap_in;                   // final block output
};

inline std::vector<Tensor4<float>> conv_batch(const std::vector<Tensor4<float>>& in,
                                              const ConvWeights<float>& cw, Dims3 pad) {
    std::vector<Tensor4<float>> out(in.size());
    parallel_for(in.size(), [&](std::size_t i) { out[i] = conv3d(in[i], cw, pad, Dims3{1, 1, 1}); });
    return out;
}

inline std::vector<Tensor4<float>> relu_batch(const std::vector<Tensor4<float>>& in) {
    std::vector<Tensor4<float>> out(in.size());
    parallel_for(in.size(), [&](std::size_t i) { out[i] = relu(in[i]); });
    return out;
}

// Per-sample conv backward, gradient reduction in fixed sample order.
inline std::vector<Tensor4<float>> conv_backward_batch(const std::vector<Tensor4<float>>& in,
                                                       const ConvWeights<float>& cw, Dims3 pad,
                                                       const std::vector<Tensor4<float>>& up,
                                                       ConvWeights<double>& grad_acc) {
    std::vector<ConvGrads<float>> per(in.size());
    parallel_for(in.size(), [&](std::size_t i) {
        per[i] = conv3d_backward(in[i], cw, up[i], pad, Dims3{1, 1, 1});
    });
    std::vector<Tensor4<float>> din(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        for (std::size_t j = 0; j < grad_acc.w.size(); ++j) grad_acc.w[j] += double(per[i].dweights.w[j]);
        for (std::size_t j = 0; j < grad_acc.b.size(); ++j) grad_acc.b[j] += double(per[i].dweights.b[j]);
        din[i] = std::move(per[i].dinput);
    }
    return din;
}

inline void accumulate_bn(const BnGrads<float>& g, BnParams<double>& acc) {
    for (std::size_t i = 0; i < acc.gamma.size(); ++i) acc.gamma[i] += double(g.dgamma[i]);
    for (std::size_t i = 0; i < acc.beta.size(); ++i) acc.beta[i] += double(g.dbeta[i]);
}

inline std::vector<Tensor4<float>> stream_forward_batch(StreamParamsT<float>& s, const NetConfig& cfg,
                                                        std::vector<Tensor4<float>> x,
                                                        StreamCache& cache) {
    const Dims3 pad = same_pad(cfg.kernel_size);
    cache.input = x;
    cache.stem_out = conv_batch(x, s.stem, pad);
    cache.stem_bn_out =
        batch_norm(cache.stem_out, s.stem_bn, Mode::train, cfg.bn_momentum, cfg.bn_eps, &cache.stem_bn);
    x = relu_batch(cache.stem_bn_out);
    if (cfg.pooled(0)) {
        cache.pools[0].resize(x.size());
        parallel_for(x.size(), [&](std::size_t i) { cache.pools[0][i] = maxpool3d(x[i]); });
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = cache.pools[0][i].out;
    }
    for (int b = 0; b < 3; ++b) {
        auto& blk = s.blocks[b];
        auto& bc = cache.blocks[b];
        bc.in = x;
        bc.conv1_out = conv_batch(x, blk.conv1, pad);
        bc.bn1_out = batch_norm(bc.conv1_out, blk.bn1, Mode::train, cfg.bn_momentum, cfg.bn_eps, &bc.bn1);
        bc.relu1_out = relu_batch(bc.bn1_out);
        bc.conv2_out = conv_batch(bc.relu1_out, blk.conv2, pad);
        bc.sum = batch_norm(bc.conv2_out, blk.bn2, Mode::train, cfg.bn_momentum, cfg.bn_eps, &bc.bn2);
        if (blk.proj) {
            auto skip = conv_batch(x, *blk.proj, Dims3{0, 0, 0});
            parallel_for(x.size(), [&](std::size_t i) { add_inplace(bc.sum[i], skip[i]); });
        } else {
            parallel_for(x.size(), [&](std::size_t i) { add_inplace(bc.sum[i], bc.in[i]); });
        }
        x = relu_batch(bc.sum);
        if (cfg.pooled(b + 1)) {
            auto& pool = cache.pools[b + 1];
            pool.resize(x.size());
            parallel_for(x.size(), [&](std::size_t i) { pool[i] = maxpool3d(x[i]); });
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = pool[i].out;
        }
    }
    cache.gap_in = x;
    return x;
}

inline std::vector<Tensor4<float>> stream_backward_batch(const StreamParamsT<float>& s,
                                                         const NetConfig& cfg, StreamCache& cache,
                                                         std::vector<Tensor4<float>> up,
                                                         StreamParamsT<double>& grads) {
    const Dims3 pad = same_pad(cfg.kernel_size);
    for (int b = 2; b >= 0; --b) {
        const auto& blk = s.blocks[b];
        auto& bc = cache.blocks[b];
        if (cfg.pooled(b + 1)) {
            parallel_for(up.size(), [&](std::size_t i) {
                up[i] = maxpool3d_backward(cache.pools[b + 1][i], bc.sum[i].c, bc.sum[i].dims, up[i]);
            });
        }
        // through the block's final relu
        parallel_for(up.size(), [&](std::size_t i) { up[i] = relu_backward(bc.sum[i], up[i]); });
        // main branch: bn2 <- conv2 <- relu1 <- bn1 <- conv1
        auto bn2_g = batch_norm_backward(bc.conv2_out, bc.bn2, blk.bn2, up);
        accumulate_bn(bn2_g, grads.blocks[b].bn2);
        auto dconv2 = conv_backward_batch(bc.relu1_out, blk.conv2, pad, bn2_g.dinput,
                                          grads.blocks[b].conv2);
        parallel_for(up.size(), [&](std::size_t i) { dconv2[i] = relu_backward(bc.bn1_out[i], dconv2[i]); });
        auto bn1_g = batch_norm_backward(bc.conv1_out, bc.bn1, blk.bn1, dconv2);
        accumulate_bn(bn1_g, grads.blocks[b].bn1);
        auto dmain = conv_backward_batch(bc.in, blk.conv1, pad, bn1_g.dinput, grads.blocks[b].conv1);
        // skip branch
        if (blk.proj) {
            auto dskip = conv_backward_batch(bc.in, *blk.proj, Dims3{0, 0, 0}, up, *grads.blocks[b].proj);
            parallel_for(up.size(), [&](std::size_t i) { add_inplace(dmain[i], dskip[i]); });
        } else {
            parallel_for(up.size(), [&](std::size_t i) { add_inplace(dmain[i], up[i]); });
        }
        up = std::move(dmain);
    }
    if (cfg.pooled(0)) {
        parallel_for(up.size(), [&](std::size_t i) {
            up[i] = maxpool3d_backward(cache.pools[0][i], cache.stem_bn_out[i].c,
                                       cache.stem_bn_out[i].dims, up[i]);
        });
    }
    parallel_for(up.size(), [&](std::size_t i) { up[i] = relu_backward(cache.stem_bn_out[i], up[i]); });
    auto bn_g = batch_norm_backward(cache.stem_out, cache.stem_bn, s.stem_bn, up);
    accumulate_bn(bn_g, grads.stem_bn);
    return conv_backward_batch(cache.input, s.stem, pad, bn_g.dinput, grads.stem);
}

}  // namespace detail

namespace detail {

// One SGD step worth of forward + backward over a batch. Returns the mean
// cross-entropy loss; fills `grads` with mean gradients. Updates BN running
// stats as a side effect of the train-mode forward pass.
inline double train_step_gradients(NetworkParams& net, const std::vector<TrainingSet::Sample>& batch,
                                   std::vector<Rng>& sample_rngs, NetworkParamsT<double>& grads) {
    const std::size_t B = batch.size();
    const NetConfig& cfg = net.config;

    std::vector<Tensor4<float>> lx(B), rx(B);
    parallel_for(B, [&](std::size_t i) {
        if (!(batch[i].left.dims == cfg.input_dims) || !(batch[i].right.dims == cfg.input_dims))
            throw ShapeError("training volume dims do not match config");
        lx[i] = from_volume<float>(batch[i].left);
        rx[i] = from_volume<float>(batch[i].right);
    });

    StreamCache lcache, rcache;
    auto lout = stream_forward_batch(net.left, cfg, std::move(lx), lcache);
    auto rout = stream_forward_batch(net.right, cfg, std::move(rx), rcache);

    const int per_stream = cfg.feature_length() / 2;
    std::vector<std::vector<float>> features(B);
    std::vector<DropoutResult<float>> drop(B);
    std::vector<SoftmaxLoss<float>> losses(B);
    parallel_for(B, [&](std::size_t i) {
        auto gl = gap(lout[i]);
        auto gr = gap(rout[i]);
        features[i] = gl;
        features[i].insert(features[i].end(), gr.begin(), gr.end());
        drop[i] = dropout(features[i], cfg.dropout_ratio, Mode::train, sample_rngs[i]);
        auto logits = fully_connected(drop[i].out, net.fc);
        losses[i] = softmax_cross_entropy(logits, batch[i].label);
    });

    double loss = 0.0;
    for (const auto& l : losses) loss += l.loss;
    loss /= double(B);

    // head backward; logit grads carry the 1/B of the mean loss
    std::vector<Tensor4<float>> lup(B), rup(B);
    std::vector<FcGrads<float>> fcg(B);
    parallel_for(B, [&](std::size_t i) {
        std::vector<float> dlogits = losses[i].dlogits;
        for (auto& v : dlogits) v /= float(B);
        fcg[i] = fully_connected_backward(drop[i].out, net.fc, dlogits);
        auto dfeat = dropout_backward(drop[i], fcg[i].dinput);
        std::vector<float> dl(dfeat.begin(), dfeat.begin() + per_stream);
        std::vector<float> dr(dfeat.begin() + per_stream, dfeat.end());
        lup[i] = gap_backward(lout[i].c, lout[i].dims, dl);
        rup[i] = gap_backward(rout[i].c, rout[i].dims, dr);
    });
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t j = 0; j < grads.fc.w.size(); ++j) grads.fc.w[j] += double(fcg[i].dweights.w[j]);
        for (std::size_t j = 0; j < grads.fc.b.size(); ++j) grads.fc.b[j] += double(fcg[i].dweights.b[j]);
    }

    stream_backward_batch(net.left, cfg, lcache, std::move(lup), grads.left);
    stream_backward_batch(net.right, cfg, rcache, std::move(rup), grads.right);
    return loss;
}

}  // namespace detail

// AD-probability scores for a labeled set; AUC of AD vs NC.
inline double classification_auc(const NetworkParams& net, const std::vector<SubjectRecord>& subjects) {
    std::vector<double> scores(subjects.size());
    std::vector<int> labels(subjects.size());
    parallel_for(subjects.size(), [&](std::size_t i) {
        Rng unused(0);
        auto out = forward(net, subjects[i].left, subjects[i].right, Mode::infer, unused);
        const double a = out.logits[kClassAD], n = out.logits[kClassNC];
        const double m = std::max(a, n);
        scores[i] = std::exp(a - m) / (std::exp(a - m) + std::exp(n - m));
        labels[i] = subjects[i].label == Diagnosis::AD ? 1 : 0;
    });
    return binary_roc_auc(scores, labels).auc;
}

// SGD with momentum on class-balanced batches; checkpoints (params + eval
// AUC) every eval_every iterations. Deterministic for a fixed seed.
inline TrainResult train(NetworkParams net, const TrainingSet& data, const TrainSchedule& sched,
                         const std::vector<SubjectRecord>& eval_set, long eval_every) {
    sched.validate();
    if (!data.has_both_classes())
        throw PreconditionError("train: training set must contain both AD and NC");
    if (eval_every <= 0) throw PreconditionError("train: eval_every must be positive");
    if (eval_set.empty()) throw PreconditionError("train: empty eval set");

    auto grads = make_network<double>(net.config);
    auto velocity = make_network<double>(net.config);
    auto net_refs = enumerate_params(net);
    auto grad_refs = enumerate_params(grads);
    auto vel_refs = enumerate_params(velocity);

    Rng rng(sched.seed);
    TrainResult result;
    const int B = sched.batch_size;

    for (long step = 0; step < sched.max_iters; ++step) {
        const double lr = lr_at_step(sched, step);

        std::vector<std::size_t> chosen(B);
        for (int i = 0; i < B; ++i) {
            const auto& pool = data.pool(i % 2);
            chosen[i] = pool[rng.below(pool.size())];
        }
        std::vector<Rng> sample_rngs;
        sample_rngs.reserve(B);
        for (int i = 0; i < B; ++i) sample_rngs.emplace_back(rng.next());

        std::vector<TrainingSet::Sample> batch(B);
        parallel_for(std::size_t(B), [&](std::size_t i) { batch[i] = data.get(chosen[i]); });

        for (auto& ref : grad_refs) std::fill(ref.data->begin(), ref.data->end(), 0.0);
        const double loss = detail::train_step_gradients(net, batch, sample_rngs, grads);
        if (!std::isfinite(loss))
            throw NumericError("training aborted at step " + std::to_string(step) +
                               ": non-finite loss");

        for (std::size_t r = 0; r < net_refs.size(); ++r) {
            if (!net_refs[r].trainable) continue;
            auto& w = *net_refs[r].data;
            auto& g = *grad_refs[r].data;
            auto& v = *vel_refs[r].data;
            for (std::size_t j = 0; j < w.size(); ++j) {
                v[j] = sched.momentum * v[j] - lr * g[j];
                w[j] = float(double(w[j]) + v[j]);
            }
        }

        const long done = step + 1;
        if (done % eval_every == 0 || done == sched.max_iters) {
            const double auc = classification_auc(net, eval_set);
            result.checkpoints.push_back({done, auc, net});
            result.log.push_back({done, lr, loss, auc});
        }
    }
    result.params = std::move(net);
    return result;
}

// Highest eval AUC; ties -> earliest step. Checkpoints without a finite AUC
// are ignored.
inline const Checkpoint& select_checkpoint(const std::vector<Checkpoint>& checkpoints) {
    const Checkpoint* best = nullptr;
    for (const auto& c : checkpoints) {
        if (!std::isfinite(c.eval_auc)) continue;
        if (!best || c.eval_auc > best->eval_auc) best = &c;
    }
    if (!best) throw PreconditionError("select_checkpoint: no checkpoint with a finite AUC");
    return *best;
}

// ---- model file ("HPNET1") -----------------------------------------------

inline void save_model(const NetworkParams& net, const std::string& path) {
    binio::Writer w(path);
    w.bytes("HPNET1");
    const NetConfig& c = net.config;
    w.u32(std::uint32_t(c.stem_kernels));
    for (int b : c.block_kernels) w.u32(std::uint32_t(b));
    w.u32(std::uint32_t(c.kernel_size.x));
    w.u32(std::uint32_t(c.kernel_size.y));
    w.u32(std::uint32_t(c.kernel_size.z));
    w.u32(std::uint32_t(c.pool_after.size()));
    for (int s : c.pool_after) w.u32(std::uint32_t(s));
    w.f64(c.dropout_ratio);
    w.u32(std::uint32_t(c.num_classes));
    w.u32(std::uint32_t(c.input_dims.x));
    w.u32(std::uint32_t(c.input_dims.y));
    w.u32(std::uint32_t(c.input_dims.z));
    w.u32(c.scale.num);
    w.u32(c.scale.den);

    auto refs = enumerate_params(const_cast<NetworkParams&>(net));
    w.u32(std::uint32_t(refs.size()));
    for (const auto& ref : refs) {
        w.u32(std::uint32_t(ref.name.size()));
        w.bytes(ref.name);
        w.u32(std::uint32_t(ref.shape.size()));
        std::size_t expect = 1;
        for (int d : ref.shape) {
            w.u32(std::uint32_t(d));
            expect *= std::size_t(d);
        }
        w.f32_array(ref.data->data(), ref.data->size());
        (void)expect;
    }
    w.close();
}

inline NetworkParams load_model(const std::string& path) {
    binio::Reader r(path);
    const std::string magic = r.bytes(6, "magic");
    if (magic != "HPNET1")
        throw IoError(path + ": bad model magic at offset 0 (expected \"HPNET1\", got \"" + magic +
                      "\")");
    NetConfig c;
    c.stem_kernels = int(r.u32("stem_kernels"));
    for (auto& b : c.block_kernels) b = int(r.u32("block_kernels"));
    c.kernel_size.x = int(r.u32("kernel_size"));
    c.kernel_size.y = int(r.u32("kernel_size"));
    c.kernel_size.z = int(r.u32("kernel_size"));
    c.pool_after.resize(r.u32("pool_after count"));
    for (auto& s : c.pool_after) s = int(r.u32("pool_after"));
    c.dropout_ratio = r.f64("dropout_ratio");
    c.num_classes = int(r.u32("num_classes"));
    c.input_dims.x = int(r.u32("input_dims"));
    c.input_dims.y = int(r.u32("input_dims"));
    c.input_dims.z = int(r.u32("input_dims"));
    c.scale.num = r.u32("scale num");
    c.scale.den = r.u32("scale den");
    c.validate();

    NetworkParams net = make_network<float>(c);
    auto refs = enumerate_params(net);
    std::map<std::string, std::pair<ParamRef<float>*, bool>> by_name;  // ref, seen
    for (auto& ref : refs) by_name[ref.name] = {&ref, false};

    const std::uint32_t count = r.u32("parameter block count");
    if (count != refs.size())
        throw ShapeError(path + ": expected " + std::to_string(refs.size()) +
                         " parameter blocks for this config, file declares " + std::to_string(count));
    for (std::uint32_t b = 0; b < count; ++b) {
        const std::uint32_t name_len = r.u32("name length");
        if (name_len > 4096) throw IoError(path + ": implausible name length");
        const std::string name = r.bytes(name_len, "name");
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ShapeError(path + ": unknown parameter block \"" + name + "\"");
        if (it->second.second) throw ShapeError(path + ": duplicate parameter block \"" + name + "\"");
        it->second.second = true;
        const std::uint32_t ndims = r.u32("ndims");
        std::vector<int> shape(ndims);
        std::size_t total = 1;
        for (auto& d : shape) {
            d = int(r.u32("dim"));
            total *= std::size_t(d);
        }
        ParamRef<float>* ref = it->second.first;
        if (shape != ref->shape || total != ref->data->size())
            throw ShapeError(path + ": parameter \"" + name + "\" has mismatched shape");
        r.f32_array(ref->data->data(), total, "parameter payload");
    }
    for (const auto& ref : refs) {
        for (float v : *ref.data)
            if (!std::isfinite(v)) throw NumericError(path + ": non-finite parameter value");
        if (ref.name.ends_with(".running_var"))
            for (float v : *ref.data)
                if (!(v > 0)) throw NumericError(path + ": running variance must be positive");
    }
    return net;
}

}  // namespace hpnet
