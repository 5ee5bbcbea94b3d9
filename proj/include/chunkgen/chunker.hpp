#ifndef CHUNKGEN_CHUNKER_HPP
#define CHUNKGEN_CHUNKER_HPP

#include "chunkgen/calibrate.hpp"
#include "chunkgen/geometry.hpp"

namespace chunkgen {

// Half-open voxel index box [lo, hi) in a global grid.
struct IndexBox {
    std::array<int, 3> lo{0, 0, 0};
    std::array<int, 3> hi{0, 0, 0};

    int64_t volume() const {
        return int64_t(hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
    }
    bool contains(int i, int j, int k) const {
        return i >= lo[0] && i < hi[0] && j >= lo[1] && j < hi[1] && k >= lo[2] && k < hi[2];
    }
    IndexBox intersect(const IndexBox& o) const {
        IndexBox r;
        for (int a = 0; a < 3; ++a) {
            r.lo[a] = std::max(lo[a], o.lo[a]);
            r.hi[a] = std::min(hi[a], o.hi[a]);
            if (r.hi[a] < r.lo[a]) r.hi[a] = r.lo[a];
        }
        return r;
    }
};

struct Chunk {
    int id = 0;
    Vec3 t_c;                      // world position of the chunk's [0,L]^3 origin
    double edge = 0;               // L in meters
    std::array<int, 3> cell{0, 0, 0};    // position in the chunk grid
    std::array<int, 3> offset{0, 0, 0};  // origin in global latent voxels
    std::vector<int> views;        // indices into the scene's view list
};

struct ChunkLayout {
    std::vector<Chunk> chunks;
    std::array<int, 3> grid_counts{0, 0, 0};
    SceneBounds bounds;
    double margin = 0;
    double edge = 0;
    int latent_res = 16;                  // per-chunk voxels defining the lattice
    std::array<int, 3> grid_dims{0, 0, 0};  // global lattice dims (chunk union)

    double voxel_size() const { return edge / latent_res; }

    // Global grid spanning the chunk union; res_multiplier 2 gives the
    // detail-stage lattice (same origin, halved voxels).
    DenseGrid make_global_grid(int channels, int res_multiplier = 1) const {
        return DenseGrid::make(bounds.aabb.min, voxel_size() / res_multiplier,
                               {grid_dims[0] * res_multiplier, grid_dims[1] * res_multiplier,
                                grid_dims[2] * res_multiplier},
                               channels);
    }
};

inline double compute_chunk_edge(const SceneBounds& bounds, double factor = 1.11) {
    if (bounds.height <= 0) throw ConstraintError("chunk edge: bounds height must be > 0");
    return factor * bounds.height;
}

namespace detail {

// Per-axis chunk origins in lattice voxels. The chunk count follows the
// margin formula on metric extents; origins are evenly spread over the
// voxel span and snapped to integers, with a count bump when rounding
// would otherwise break the minimum-overlap guarantee.
inline std::vector<int> axis_offsets(double extent, double edge, double m, int res) {
    if (extent <= edge + 1e-9) return {0};
    double voxel = edge / res;
    int grid = int(std::ceil(extent / voxel - 1e-9));
    int span = grid - res;  // last origin, in voxels
    int stride_max = std::max(1, int(std::floor((1.0 - m) * res + 1e-9)));
    int64_t count = int64_t(std::ceil((extent - edge) / (edge * (1.0 - m)) - 1e-9)) + 1;
    count = std::max(count, int64_t((span + stride_max - 1) / stride_max) + 1);
    std::vector<int> offsets(size_t(count), 0);
    for (int64_t i = 0; i < count; ++i)
        offsets[size_t(i)] = int(std::llround(double(i) * span / double(count - 1)));
    return offsets;
}

}  // namespace detail

inline ChunkLayout tile(const SceneBounds& bounds, double edge, double margin,
                        int latent_res = 16) {
    bounds.validate();
    if (margin < 0 || margin >= 1) throw ConstraintError("tile: margin must be in [0,1)");
    if (edge <= 0) throw ConstraintError("tile: edge must be > 0");
    if (latent_res < 1) throw ConstraintError("tile: latent_res must be >= 1");

    ChunkLayout layout;
    layout.bounds = bounds;
    layout.margin = margin;
    layout.edge = edge;
    layout.latent_res = latent_res;

    Vec3 extent = bounds.aabb.extent();
    std::array<std::vector<int>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        axis[size_t(a)] = detail::axis_offsets(extent[a], edge, margin, latent_res);
        layout.grid_counts[size_t(a)] = int(axis[size_t(a)].size());
        layout.grid_dims[size_t(a)] = axis[size_t(a)].back() + latent_res;
    }

    double voxel = edge / latent_res;
    int id = 0;
    for (int ix = 0; ix < layout.grid_counts[0]; ++ix)
        for (int iy = 0; iy < layout.grid_counts[1]; ++iy)
            for (int iz = 0; iz < layout.grid_counts[2]; ++iz) {
                Chunk c;
                c.id = id++;
                c.cell = {ix, iy, iz};
                c.offset = {axis[0][size_t(ix)], axis[1][size_t(iy)], axis[2][size_t(iz)]};
                c.edge = edge;
                c.t_c = bounds.aabb.min +
                        Vec3{c.offset[0] * voxel, c.offset[1] * voxel, c.offset[2] * voxel};
                layout.chunks.push_back(std::move(c));
            }
    return layout;
}

inline Aabb chunk_aabb(const Chunk& c) {
    return {c.t_c, c.t_c + Vec3{c.edge, c.edge, c.edge}};
}

inline std::vector<int> associate_views(const Chunk& chunk, const std::vector<CameraView>& views,
                                        double near_plane, double far_plane) {
    std::vector<int> out;
    Aabb box = chunk_aabb(chunk);
    for (size_t n = 0; n < views.size(); ++n)
        if (frustum_intersects_aabb(views[n], box, near_plane, far_plane)) out.push_back(int(n));
    return out;
}

// The chunk's half-open index box in a lattice-aligned global grid. Works for
// any resolution whose voxel size divides the chunk placement (occupancy and
// detail lattices both qualify).
inline IndexBox chunk_mask(const Chunk& chunk, const Vec3& grid_origin, double grid_voxel,
                           const std::array<int, 3>& grid_dims) {
    if (grid_voxel <= 0) throw ConstraintError("chunk_mask: voxel size must be > 0");
    double res_f = chunk.edge / grid_voxel;
    int res = int(std::llround(res_f));
    if (std::abs(res_f - res) > 1e-6)
        throw ConstraintError("chunk_mask: chunk edge is not a voxel multiple");
    IndexBox box;
    for (int a = 0; a < 3; ++a) {
        double off = (chunk.t_c[a] - grid_origin[a]) / grid_voxel;
        int i0 = int(std::llround(off));
        if (std::abs(off - i0) > 1e-6)
            throw ConstraintError(strfmt("chunk_mask: chunk %d not lattice-aligned on axis %d",
                                         chunk.id, a));
        box.lo[a] = i0;
        box.hi[a] = i0 + res;
        if (box.lo[a] < 0 || box.hi[a] > grid_dims[a])
            throw ConstraintError(strfmt("chunk_mask: chunk %d exceeds grid on axis %d", chunk.id,
                                         a));
    }
    return box;
}

inline IndexBox chunk_mask(const ChunkLayout& layout, const Chunk& chunk, const DenseGrid& grid) {
    (void)layout;
    return chunk_mask(chunk, grid.origin, grid.voxel_size, grid.dims);
}

}  // namespace chunkgen

#endif
