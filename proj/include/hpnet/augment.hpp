#pragma once
#include <array>
#include <cstdlib>
#include <string>
#include <vector>

#include "hpnet/error.hpp"
#include "hpnet/subject.hpp"
#include "hpnet/volume.hpp"

// Translation augmentation: every subject is shifted by 2 voxels along each
// of the 26 neighbor directions of 3D space, zero-filled at exposed borders.

namespace hpnet {

using Offset3 = std::array<int, 3>;

inline std::vector<Offset3> directions_26() {
    std::vector<Offset3> dirs;
    dirs.reserve(26);
    for (int dx : {-2, 0, 2})
        for (int dy : {-2, 0, 2})
            for (int dz : {-2, 0, 2}) {
                if (dx == 0 && dy == 0 && dz == 0) continue;
                dirs.push_back({dx, dy, dz});
            }
    return dirs;
}

inline Volume translate(const Volume& v, const Offset3& off) {
    if (std::abs(off[0]) >= v.dims.x || std::abs(off[1]) >= v.dims.y || std::abs(off[2]) >= v.dims.z)
        throw PreconditionError("translate: offset magnitude must be smaller than every dim");
    Volume out(v.dims);
    for (int z = 0; z < v.dims.z; ++z) {
        const int sz = z - off[2];
        if (sz < 0 || sz >= v.dims.z) continue;
        for (int y = 0; y < v.dims.y; ++y) {
            const int sy = y - off[1];
            if (sy < 0 || sy >= v.dims.y) continue;
            const int x0 = std::max(0, off[0]);
            const int x1 = std::min(v.dims.x, v.dims.x + off[0]);
            const float* src = v.voxels.data() + v.index(x0 - off[0], sy, sz);
            float* dst = out.voxels.data() + out.index(x0, y, z);
            for (int x = x0; x < x1; ++x) *dst++ = *src++;
        }
    }
    return out;
}

// 26 translated copies per record (both hippocampi shifted together); the
// caller keeps the originals separately.
inline std::vector<SubjectRecord> augment_dataset(const std::vector<SubjectRecord>& records) {
    const auto dirs = directions_26();
    std::vector<SubjectRecord> out;
    out.reserve(records.size() * dirs.size());
    for (const auto& rec : records) {
        for (std::size_t k = 0; k < dirs.size(); ++k) {
            SubjectRecord copy = rec;
            copy.id = rec.id + "_t" + (k < 9 ? "0" : "") + std::to_string(k + 1);
            copy.left = translate(rec.left, dirs[k]);
            copy.right = translate(rec.right, dirs[k]);
            out.push_back(std::move(copy));
        }
    }
    return out;
}

}  // namespace hpnet
