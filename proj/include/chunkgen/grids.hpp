#ifndef CHUNKGEN_GRIDS_HPP
#define CHUNKGEN_GRIDS_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "chunkgen/common.hpp"
#include "chunkgen/vec3.hpp"

namespace chunkgen {

struct Aabb {
    Vec3 min{0, 0, 0};
    Vec3 max{0, 0, 0};

    bool valid() const { return min.x <= max.x && min.y <= max.y && min.z <= max.z; }
    Vec3 extent() const { return max - min; }
    Vec3 center() const { return (min + max) * 0.5; }
    double diagonal() const { return extent().norm(); }
    bool contains(const Vec3& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
               p.z <= max.z;
    }
    Aabb inflated(double frac) const {
        Vec3 half = extent() * (0.5 * frac);
        return {min - half, max + half};
    }
    static Aabb of_points(const std::vector<Vec3>& pts) {
        Aabb box{Vec3{1e300, 1e300, 1e300}, Vec3{-1e300, -1e300, -1e300}};
        for (const auto& p : pts) {
            box.min = Vec3::min(box.min, p);
            box.max = Vec3::max(box.max, p);
        }
        return box;
    }
};

// Cell-centered voxel volume. Voxel (i,j,k) has its center at
// origin + (i+0.5, j+0.5, k+0.5) * voxel_size. Data is stored x-major
// (index = ((i*ny + j)*nz + k)*C + c) with channels innermost.
struct DenseGrid {
    Vec3 origin{0, 0, 0};
    double voxel_size = 1.0;
    std::array<int, 3> dims{0, 0, 0};
    int channels = 0;
    std::vector<float> data;

    static DenseGrid make(const Vec3& origin, double voxel_size, std::array<int, 3> dims,
                          int channels) {
        if (voxel_size <= 0) throw ConstraintError("DenseGrid: voxel_size must be > 0");
        DenseGrid g;
        g.origin = origin;
        g.voxel_size = voxel_size;
        g.dims = dims;
        g.channels = channels;
        g.data.assign(size_t(g.voxel_count()) * size_t(channels), 0.0f);
        return g;
    }

    int64_t voxel_count() const { return int64_t(dims[0]) * dims[1] * dims[2]; }
    int64_t value_count() const { return voxel_count() * channels; }

    int64_t voxel_index(int i, int j, int k) const {
        return (int64_t(i) * dims[1] + j) * dims[2] + k;
    }
    float* at(int i, int j, int k) { return data.data() + voxel_index(i, j, k) * channels; }
    const float* at(int i, int j, int k) const {
        return data.data() + voxel_index(i, j, k) * channels;
    }
    bool in_bounds(int i, int j, int k) const {
        return i >= 0 && i < dims[0] && j >= 0 && j < dims[1] && k >= 0 && k < dims[2];
    }
    Vec3 voxel_center(int i, int j, int k) const {
        return origin + Vec3{(i + 0.5) * voxel_size, (j + 0.5) * voxel_size, (k + 0.5) * voxel_size};
    }
    Aabb bounds() const {
        return {origin, origin + Vec3{dims[0] * voxel_size, dims[1] * voxel_size,
                                      dims[2] * voxel_size}};
    }
    bool same_spec(const DenseGrid& o) const {
        return dims == o.dims && channels == o.channels &&
               std::abs(voxel_size - o.voxel_size) < 1e-12 && (origin - o.origin).norm() < 1e-9;
    }
};

// Sparse counterpart sharing DenseGrid's spatial header. Coordinates are kept
// strictly lexicographically sorted and unique.
struct SparseGrid {
    Vec3 origin{0, 0, 0};
    double voxel_size = 1.0;
    std::array<int, 3> dims{0, 0, 0};
    int channels = 0;
    std::vector<std::array<int, 3>> coords;
    std::vector<float> data;  // coords.size() * channels

    int64_t voxel_count() const { return int64_t(coords.size()); }

    Vec3 voxel_center(const std::array<int, 3>& c) const {
        return origin + Vec3{(c[0] + 0.5) * voxel_size, (c[1] + 0.5) * voxel_size,
                             (c[2] + 0.5) * voxel_size};
    }

    void validate() const {
        for (size_t i = 0; i < coords.size(); ++i) {
            const auto& c = coords[i];
            if (c[0] < 0 || c[0] >= dims[0] || c[1] < 0 || c[1] >= dims[1] || c[2] < 0 ||
                c[2] >= dims[2])
                throw ConstraintError("SparseGrid: coordinate out of dims");
            if (i > 0 && !(coords[i - 1] < c))
                throw ConstraintError("SparseGrid: coords not strictly sorted");
        }
        if (data.size() != coords.size() * size_t(channels))
            throw ConstraintError("SparseGrid: data length mismatch");
    }

    // Index of a coordinate, or -1. Binary search over the sorted list.
    int64_t find(const std::array<int, 3>& c) const {
        auto it = std::lower_bound(coords.begin(), coords.end(), c);
        if (it == coords.end() || *it != c) return -1;
        return it - coords.begin();
    }
};

inline DenseGrid densify(const SparseGrid& s) {
    DenseGrid d = DenseGrid::make(s.origin, s.voxel_size, s.dims, s.channels);
    for (size_t i = 0; i < s.coords.size(); ++i) {
        const auto& c = s.coords[i];
        float* dst = d.at(c[0], c[1], c[2]);
        for (int ch = 0; ch < s.channels; ++ch) dst[ch] = s.data[i * s.channels + ch];
    }
    return d;
}

// Keeps voxels with any nonzero channel.
inline SparseGrid sparsify(const DenseGrid& d) {
    SparseGrid s;
    s.origin = d.origin;
    s.voxel_size = d.voxel_size;
    s.dims = d.dims;
    s.channels = d.channels;
    for (int i = 0; i < d.dims[0]; ++i)
        for (int j = 0; j < d.dims[1]; ++j)
            for (int k = 0; k < d.dims[2]; ++k) {
                const float* v = d.at(i, j, k);
                bool any = false;
                for (int ch = 0; ch < d.channels; ++ch)
                    if (v[ch] != 0.0f) any = true;
                if (!any) continue;
                s.coords.push_back({i, j, k});
                for (int ch = 0; ch < d.channels; ++ch) s.data.push_back(v[ch]);
            }
    return s;
}

}  // namespace chunkgen

#endif
