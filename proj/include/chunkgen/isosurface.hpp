#ifndef CHUNKGEN_ISOSURFACE_HPP
#define CHUNKGEN_ISOSURFACE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <unordered_map>

#include "chunkgen/common.hpp"
#include "chunkgen/grids.hpp"
#include "chunkgen/mesh_io.hpp"

namespace chunkgen {

namespace detail {

inline constexpr int kCubeCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                          {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};

// Six tetrahedra around the 0-6 diagonal; face diagonals agree between
// neighboring cubes, so the extracted surface has no cracks.
inline constexpr int kCubeTets[6][4] = {{0, 1, 2, 6}, {0, 2, 3, 6}, {0, 3, 7, 6},
                                        {0, 7, 4, 6}, {0, 4, 5, 6}, {0, 5, 1, 6}};

class VertexWelder {
public:
    VertexWelder(MeshData& mesh, const Vec3& origin, double voxel_size)
        : mesh_(mesh), origin_(origin), scale_(1024.0 / voxel_size) {}

    uint32_t add(const Vec3& p) {
        auto q = [&](double x, double o) {
            return uint64_t(int64_t(std::llround((x - o) * scale_)) + (int64_t(1) << 20));
        };
        uint64_t key = (q(p.x, origin_.x) << 42) | (q(p.y, origin_.y) << 21) | q(p.z, origin_.z);
        auto [it, fresh] = map_.try_emplace(key, uint32_t(mesh_.vertices.size()));
        if (fresh)
            mesh_.vertices.push_back({float(p.x), float(p.y), float(p.z)});
        return it->second;
    }

private:
    MeshData& mesh_;
    Vec3 origin_;
    double scale_;
    std::unordered_map<uint64_t, uint32_t> map_;
};

}  // namespace detail

// Isosurface of the scalar field defined by channel 0 at the voxel centers of
// a dense grid, linearly interpolated, via marching tetrahedra. The field is
// treated as `outside` beyond the grid, which closes surfaces at the border.
inline MeshData mesh_from_field(const DenseGrid& field, double level, double outside = 0.0) {
    if (field.channels < 1) throw UsageError("field grid needs at least one channel");
    MeshData mesh;
    detail::VertexWelder welder(mesh, field.origin, field.voxel_size);

    auto value = [&](int i, int j, int k) -> double {
        if (!field.in_bounds(i, j, k)) return outside;
        return double(field.at(i, j, k)[0]);
    };
    auto pos = [&](int i, int j, int k) -> Vec3 {
        return {field.origin.x + (i + 0.5) * field.voxel_size,
                field.origin.y + (j + 0.5) * field.voxel_size,
                field.origin.z + (k + 0.5) * field.voxel_size};
    };
    auto edge_point = [&](const Vec3& pa, double fa, const Vec3& pb, double fb) -> Vec3 {
        double t = (level - fa) / (fb - fa);
        t = std::clamp(t, 0.0, 1.0);
        return pa + (pb - pa) * t;
    };
    auto emit = [&](const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& ref,
                    bool toward_ref) {
        Vec3 n = (b - a).cross(c - a);
        Vec3 centroid = (a + b + c) * (1.0 / 3.0);
        double side = n.dot(toward_ref ? ref - centroid : centroid - ref);
        uint32_t ia = welder.add(a);
        uint32_t ib = welder.add(side >= 0 ? b : c);
        uint32_t ic = welder.add(side >= 0 ? c : b);
        if (ia == ib || ib == ic || ia == ic) return;
        mesh.triangles.push_back({ia, ib, ic});
    };

    for (int i = -1; i < field.dims[0]; ++i)
        for (int j = -1; j < field.dims[1]; ++j)
            for (int k = -1; k < field.dims[2]; ++k) {
                double f[8];
                Vec3 p[8];
                double lo = 1e300, hi = -1e300;
                for (int c = 0; c < 8; ++c) {
                    int ci = i + detail::kCubeCorner[c][0];
                    int cj = j + detail::kCubeCorner[c][1];
                    int ck = k + detail::kCubeCorner[c][2];
                    f[c] = value(ci, cj, ck);
                    p[c] = pos(ci, cj, ck);
                    lo = std::min(lo, f[c]);
                    hi = std::max(hi, f[c]);
                }
                if (lo > level || hi <= level) continue;
                for (const auto& tet : detail::kCubeTets) {
                    int in[4], n_in = 0;
                    for (int v = 0; v < 4; ++v)
                        if (f[tet[v]] > level) in[n_in++] = v;
                    if (n_in == 0 || n_in == 4) continue;
                    int out[4], n_out = 0;
                    for (int v = 0; v < 4; ++v)
                        if (!(f[tet[v]] > level)) out[n_out++] = v;
                    auto P = [&](int v) { return p[tet[v]]; };
                    auto F = [&](int v) { return f[tet[v]]; };
                    if (n_in == 1) {
                        int a = in[0];
                        Vec3 e0 = edge_point(P(a), F(a), P(out[0]), F(out[0]));
                        Vec3 e1 = edge_point(P(a), F(a), P(out[1]), F(out[1]));
                        Vec3 e2 = edge_point(P(a), F(a), P(out[2]), F(out[2]));
                        emit(e0, e1, e2, P(a), false);
                    } else if (n_in == 3) {
                        int a = out[0];
                        Vec3 e0 = edge_point(P(in[0]), F(in[0]), P(a), F(a));
                        Vec3 e1 = edge_point(P(in[1]), F(in[1]), P(a), F(a));
                        Vec3 e2 = edge_point(P(in[2]), F(in[2]), P(a), F(a));
                        emit(e0, e1, e2, P(a), true);
                    } else {
                        Vec3 mid = (P(in[0]) + P(in[1])) * 0.5;
                        Vec3 e00 = edge_point(P(in[0]), F(in[0]), P(out[0]), F(out[0]));
                        Vec3 e01 = edge_point(P(in[0]), F(in[0]), P(out[1]), F(out[1]));
                        Vec3 e10 = edge_point(P(in[1]), F(in[1]), P(out[0]), F(out[0]));
                        Vec3 e11 = edge_point(P(in[1]), F(in[1]), P(out[1]), F(out[1]));
                        emit(e00, e01, e11, mid, false);
                        emit(e00, e11, e10, mid, false);
                    }
                }
            }
    return mesh;
}

// Nearest occupied coord of the sparse latent around a world position; -1 when
// nothing lies within the search radius.
inline int64_t nearest_sparse_voxel(const SparseGrid& s, const Vec3& p, int max_ring = 4) {
    if (s.coords.empty()) return -1;
    int ci = int(std::floor((p.x - s.origin.x) / s.voxel_size));
    int cj = int(std::floor((p.y - s.origin.y) / s.voxel_size));
    int ck = int(std::floor((p.z - s.origin.z) / s.voxel_size));
    int64_t best = -1;
    double best_d2 = 1e300;
    for (int ring = 0; ring <= max_ring; ++ring) {
        for (int di = -ring; di <= ring; ++di)
            for (int dj = -ring; dj <= ring; ++dj)
                for (int dk = -ring; dk <= ring; ++dk) {
                    if (std::max({std::abs(di), std::abs(dj), std::abs(dk)}) != ring) continue;
                    int64_t idx = s.find({ci + di, cj + dj, ck + dk});
                    if (idx < 0) continue;
                    double d2 = (s.voxel_center(s.coords[size_t(idx)]) - p).norm2();
                    if (d2 < best_d2) {
                        best_d2 = d2;
                        best = idx;
                    }
                }
        if (best >= 0) return best;
    }
    return best;
}

// Final decode: surface the occupancy field at 0.5 and color vertices from the
// first three channels of the sparse appearance latent.
inline MeshData decode_to_mesh(const DenseGrid& occupancy_field, const SparseGrid* appearance,
                               double level = 0.5) {
    MeshData mesh = mesh_from_field(occupancy_field, level);
    if (!appearance || appearance->channels < 3 || appearance->coords.empty() || mesh.empty())
        return mesh;
    mesh.colors.reserve(mesh.vertices.size());
    for (const auto& v : mesh.vertices) {
        Vec3 p{v[0], v[1], v[2]};
        int64_t idx = nearest_sparse_voxel(*appearance, p);
        if (idx < 0) {
            mesh.colors.push_back({0.5f, 0.5f, 0.5f});
            continue;
        }
        const float* c = appearance->data.data() + size_t(idx) * size_t(appearance->channels);
        mesh.colors.push_back({std::clamp(c[0], 0.0f, 1.0f), std::clamp(c[1], 0.0f, 1.0f),
                               std::clamp(c[2], 0.0f, 1.0f)});
    }
    return mesh;
}

}  // namespace chunkgen

#endif
