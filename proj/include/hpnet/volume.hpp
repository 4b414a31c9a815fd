#pragma once
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hpnet/error.hpp"

namespace hpnet {

struct Dims3 {
    int x = 0, y = 0, z = 0;
    bool operator==(const Dims3&) const = default;
    std::size_t count() const { return std::size_t(x) * std::size_t(y) * std::size_t(z); }
};

inline std::string to_string(const Dims3& d) {
    return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

// Dense 3D scalar field, x-fastest: index = (z*dimY + y)*dimX + x.
struct Volume {
    Dims3 dims;
    std::vector<float> voxels;

    Volume() = default;
    Volume(Dims3 d, float fill = 0.0f) : dims(d), voxels(d.count(), fill) {
        if (d.x <= 0 || d.y <= 0 || d.z <= 0)
            throw ShapeError("Volume dims must be positive, got " + to_string(d));
    }

    std::size_t index(int x, int y, int z) const {
        return (std::size_t(z) * dims.y + y) * dims.x + x;
    }
    float& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
    float at(int x, int y, int z) const { return voxels[index(x, y, z)]; }

    void validate() const {
        if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0)
            throw ShapeError("Volume dims must be positive, got " + to_string(dims));
        if (voxels.size() != dims.count())
            throw ShapeError("Volume payload length " + std::to_string(voxels.size()) +
                             " does not match dims " + to_string(dims));
        for (float v : voxels)
            if (!std::isfinite(v)) throw NumericError("Volume contains a non-finite voxel");
    }
};

// 4D feature tensor, channel-major then x-fastest:
// index = ((c*dimZ + z)*dimY + y)*dimX + x.
template <typename T>
struct Tensor4 {
    int c = 0;
    Dims3 dims;
    std::vector<T> values;

    Tensor4() = default;
    Tensor4(int channels, Dims3 d, T fill = T(0))
        : c(channels), dims(d), values(std::size_t(channels) * d.count(), fill) {
        if (channels <= 0 || d.x <= 0 || d.y <= 0 || d.z <= 0)
            throw ShapeError("Tensor4 dims must be positive");
    }

    std::size_t spatial() const { return dims.count(); }
    std::size_t size() const { return values.size(); }

    std::size_t index(int ch, int x, int y, int z) const {
        return ((std::size_t(ch) * dims.z + z) * dims.y + y) * dims.x + x;
    }
    T& at(int ch, int x, int y, int z) { return values[index(ch, x, y, z)]; }
    T at(int ch, int x, int y, int z) const { return values[index(ch, x, y, z)]; }

    T* channel(int ch) { return values.data() + std::size_t(ch) * spatial(); }
    const T* channel(int ch) const { return values.data() + std::size_t(ch) * spatial(); }

    bool same_shape(const Tensor4& o) const { return c == o.c && dims == o.dims; }
};

template <typename T>
Tensor4<T> from_volume(const Volume& v) {
    Tensor4<T> t(1, v.dims);
    for (std::size_t i = 0; i < v.voxels.size(); ++i) t.values[i] = T(v.voxels[i]);
    return t;
}

template <typename T>
Volume to_volume(const Tensor4<T>& t, int ch = 0) {
    Volume v(t.dims);
    const T* src = t.channel(ch);
    for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = float(src[i]);
    return v;
}

}  // namespace hpnet
