#pragma once
#include <cmath>
#include <string>
#include <vector>

#include "hpnet/error.hpp"
#include "hpnet/metrics.hpp"
#include "hpnet/parallel.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/subject.hpp"
#include "hpnet/volume.hpp"

// Seeded generator of hippocampus-like volume pairs with a planted
// severity -> anterior-atrophy -> hazard chain, for end-to-end validation
// with known ground truth. Anterior is the low-z end of the long axis.
//
// Per subject (own xoshiro256** stream derived from the master seed, draws in
// a fixed order: severity, left voxels, right voxels, event uniform, censor):
//   volume(p) = template(p) - s * amplitude * bump(p) + N(0, noise^2)
//   T = -ln(U) / (lambda0 * exp(theta * s)),  C ~ Uniform(censor window)
//   time = min(T, C) rounded up to the 6-month follow-up grid.

namespace hpnet {

struct GenConfig {
    std::size_t n = 100;
    std::uint64_t seed = 0;
    Dims3 dims{29, 21, 55};
    double base_intensity = 100.0;
    double noise_std = 5.0;
    double atrophy_amplitude = 60.0;
    double hazard_scale = 0.01;  // lambda0, per month
    double hazard_coef = 2.5;    // theta
    double censor_lo = 12.0, censor_hi = 72.0;
    double nc_threshold = 0.3, ad_threshold = 0.7;  // on severity s

    void validate() const {
        if (n == 0) throw ConfigError("GenConfig: n must be positive");
        if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw ConfigError("GenConfig: bad dims");
        if (!(base_intensity > 0) || !(noise_std >= 0) || !(atrophy_amplitude >= 0))
            throw ConfigError("GenConfig: intensities must be positive");
        if (!(hazard_scale > 0)) throw ConfigError("GenConfig: hazard_scale must be positive");
        if (!(censor_lo > 0) || !(censor_hi > censor_lo))
            throw ConfigError("GenConfig: censor window must satisfy 0 < lo < hi");
        if (!(nc_threshold < ad_threshold))
            throw ConfigError("GenConfig: class thresholds must be ordered");
    }
};

namespace synthdetail {

// Raised-cosine radial falloff of the ellipsoidal template: 1 inside 70% of
// the radius, smooth to 0 at the surface.
inline double ellipsoid_falloff(const GenConfig& cfg, int x, int y, int z) {
    const double cx = (cfg.dims.x - 1) / 2.0, cy = (cfg.dims.y - 1) / 2.0,
                 cz = (cfg.dims.z - 1) / 2.0;
    const double ax = 10.0, ay = 7.0, az = 22.0;
    const double rx = (x - cx) / ax, ry = (y - cy) / ay, rz = (z - cz) / az;
    const double r = std::sqrt(rx * rx + ry * ry + rz * rz);
    const double r0 = 0.7;
    if (r <= r0) return 1.0;
    if (r >= 1.0) return 0.0;
    return 0.5 * (1.0 + std::cos(3.14159265358979323846 * (r - r0) / (1.0 - r0)));
}

}  // namespace synthdetail

inline double template_intensity(const GenConfig& cfg, int x, int y, int z) {
    return cfg.base_intensity * synthdetail::ellipsoid_falloff(cfg, x, y, z);
}

// Smooth bump over the anterior third of the long (z) axis, confined to the
// template support.
inline double bump_weight(const GenConfig& cfg, int x, int y, int z) {
    const double za = (cfg.dims.z - 1) / 6.0;   // center of the anterior third
    const double sigma = cfg.dims.z / 10.0;
    const double dz = (z - za) / sigma;
    return synthdetail::ellipsoid_falloff(cfg, x, y, z) * std::exp(-0.5 * dz * dz);
}

// 1 = inside the planted signal region.
inline std::vector<std::uint8_t> anterior_mask(const GenConfig& cfg, double threshold = 0.25) {
    std::vector<std::uint8_t> mask(cfg.dims.count(), 0);
    std::size_t i = 0;
    for (int z = 0; z < cfg.dims.z; ++z)
        for (int y = 0; y < cfg.dims.y; ++y)
            for (int x = 0; x < cfg.dims.x; ++x, ++i)
                mask[i] = bump_weight(cfg, x, y, z) > threshold ? 1 : 0;
    return mask;
}

struct Outcome {
    double severity = 0.0;
    double event_time = 0.0;   // true event time T
    double censor_time = 0.0;  // C
    double time = 0.0;         // min(T, C) on the 6-month grid
    int event = 0;             // I(T <= C)
};

// Consumes two uniforms from the stream (event, censor).
inline Outcome draw_outcome(double severity, Rng& rng, const GenConfig& cfg) {
    Outcome o;
    o.severity = severity;
    const double u = 1.0 - rng.u01();  // in (0, 1]
    o.event_time = -std::log(u) / (cfg.hazard_scale * std::exp(cfg.hazard_coef * severity));
    o.censor_time = rng.uniform(cfg.censor_lo, cfg.censor_hi);
    const double observed = std::min(o.event_time, o.censor_time);
    o.time = std::max(6.0, 6.0 * std::ceil(observed / 6.0));
    o.event = o.event_time <= o.censor_time ? 1 : 0;
    return o;
}

inline std::vector<SubjectRecord> generate(const GenConfig& cfg) {
    cfg.validate();

    // template and bump are subject-independent; precompute once
    std::vector<double> tmpl(cfg.dims.count()), bump(cfg.dims.count());
    std::size_t vi = 0;
    for (int z = 0; z < cfg.dims.z; ++z)
        for (int y = 0; y < cfg.dims.y; ++y)
            for (int x = 0; x < cfg.dims.x; ++x, ++vi) {
                tmpl[vi] = template_intensity(cfg, x, y, z);
                bump[vi] = bump_weight(cfg, x, y, z);
            }

    std::vector<SubjectRecord> records(cfg.n);
    parallel_for(cfg.n, [&](std::size_t i) {
        Rng rng(derive_seed(cfg.seed, i));
        SubjectRecord rec;
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "S%05zu", i);
        rec.id = idbuf;
        const double s = rng.u01();
        rec.severity = s;

        auto make_volume = [&]() {
            Volume v(cfg.dims);
            for (std::size_t k = 0; k < v.voxels.size(); ++k)
                v.voxels[k] = float(tmpl[k] - s * cfg.atrophy_amplitude * bump[k] +
                                    cfg.noise_std * rng.normal());
            return v;
        };
        rec.left = make_volume();
        rec.right = make_volume();

        const Outcome o = draw_outcome(s, rng, cfg);
        rec.time_months = o.time;
        rec.event = o.event;
        rec.label = s < cfg.nc_threshold ? Diagnosis::NC
                                         : (s > cfg.ad_threshold ? Diagnosis::AD : Diagnosis::MCI);
        records[i] = std::move(rec);
    });
    return records;
}

// Concordance ceiling: the true severity used as the risk marker.
inline ConcordanceResult oracle_c_index(const std::vector<SubjectRecord>& records,
                                        TieRule rule = TieRule::strict) {
    std::vector<double> risk, time;
    std::vector<int> event;
    for (const auto& r : records) {
        if (!r.severity || !r.time_months || !r.event)
            throw PreconditionError("oracle_c_index: records lack severity or outcome");
        risk.push_back(*r.severity);
        time.push_back(*r.time_months);
        event.push_back(*r.event);
    }
    return concordance_index(risk, time, event, rule);
}

}  // namespace hpnet
