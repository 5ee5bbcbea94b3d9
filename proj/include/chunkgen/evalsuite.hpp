#ifndef CHUNKGEN_EVALSUITE_HPP
#define CHUNKGEN_EVALSUITE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "chunkgen/calibrate.hpp"
#include "chunkgen/common.hpp"
#include "chunkgen/geometry.hpp"
#include "chunkgen/grids.hpp"
#include "chunkgen/mesh_io.hpp"

namespace chunkgen {

struct RenderedView {
    int width = 0, height = 0;
    std::vector<double> depth;
    std::vector<std::array<double, 3>> normal;  // view space, toward the camera
    std::vector<uint8_t> valid;

    static RenderedView make(int width, int height) {
        RenderedView v;
        v.width = width;
        v.height = height;
        v.depth.assign(size_t(width) * size_t(height), 0.0);
        v.normal.assign(size_t(width) * size_t(height), {0.0, 0.0, 0.0});
        v.valid.assign(size_t(width) * size_t(height), 0);
        return v;
    }

    int64_t index(int row, int col) const { return int64_t(row) * width + col; }

    void validate() const {
        size_t n = size_t(width) * size_t(height);
        if (depth.size() != n || normal.size() != n || valid.size() != n)
            throw ConstraintError("rendered view: buffer sizes disagree with resolution");
        for (size_t i = 0; i < n; ++i) {
            if (!valid[i]) continue;
            if (!(depth[i] > 0)) throw ConstraintError("rendered view: valid pixel with depth <= 0");
            double norm = std::sqrt(normal[i][0] * normal[i][0] + normal[i][1] * normal[i][1] +
                                    normal[i][2] * normal[i][2]);
            if (std::abs(norm - 1.0) > 1e-4)
                throw ConstraintError("rendered view: valid pixel with non-unit normal");
        }
    }
};

namespace detail {

// Moeller-Trumbore; t is in units of the (unnormalized) ray direction.
inline bool ray_triangle(const Vec3& orig, const Vec3& dir, const Vec3& v0, const Vec3& v1,
                         const Vec3& v2, double& t_out) {
    const Vec3 e1 = v1 - v0, e2 = v2 - v0;
    const Vec3 pvec = dir.cross(e2);
    const double det = e1.dot(pvec);
    if (std::abs(det) < 1e-14) return false;
    const double inv = 1.0 / det;
    const Vec3 tvec = orig - v0;
    const double u = tvec.dot(pvec) * inv;
    if (u < 0.0 || u > 1.0) return false;
    const Vec3 qvec = tvec.cross(e1);
    const double v = dir.dot(qvec) * inv;
    if (v < 0.0 || u + v > 1.0) return false;
    const double t = e2.dot(qvec) * inv;
    if (t <= 1e-9) return false;
    t_out = t;
    return true;
}

struct RayHit {
    double t = 1e300;
    int64_t tri = -1;
};

inline void consider_hit(RayHit& best, double t, int64_t tri) {
    if (t < best.t || (t == best.t && tri < best.tri)) {
        best.t = t;
        best.tri = tri;
    }
}

}  // namespace detail

// Uniform-grid ray accelerator whose answers are identical to testing every
// triangle: hits are selected by (t, triangle index) wherever they are found.
class TriangleGridIndex {
public:
    explicit TriangleGridIndex(const MeshData& mesh) : mesh_(mesh) {
        const int64_t n_tri = int64_t(mesh.triangles.size());
        if (n_tri == 0) return;
        std::vector<Vec3> verts;
        verts.reserve(mesh.vertices.size());
        for (const auto& v : mesh.vertices) verts.push_back({v[0], v[1], v[2]});
        bounds_ = Aabb::of_points(verts);
        Vec3 extent = bounds_.extent();
        double pad = 1e-9 * std::max({extent.x, extent.y, extent.z, 1.0});
        bounds_.min = bounds_.min - Vec3{pad, pad, pad};
        bounds_.max = bounds_.max + Vec3{pad, pad, pad};
        extent = bounds_.extent();

        int res = std::clamp(int(std::cbrt(double(n_tri))) + 1, 1, 64);
        for (int a = 0; a < 3; ++a) {
            dims_[a] = res;
            cell_[a] = extent[a] > 0 ? extent[a] / res : 1.0;
        }
        bins_.resize(size_t(dims_[0]) * dims_[1] * dims_[2]);
        for (int64_t tri = 0; tri < n_tri; ++tri) {
            Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
            for (uint32_t vi : mesh.triangles[size_t(tri)]) {
                lo = Vec3::min(lo, mesh.vertex(vi));
                hi = Vec3::max(hi, mesh.vertex(vi));
            }
            int c0[3], c1[3];
            for (int a = 0; a < 3; ++a) {
                c0[a] = std::clamp(cell_index(a, lo[a]), 0, dims_[a] - 1);
                c1[a] = std::clamp(cell_index(a, hi[a]), 0, dims_[a] - 1);
            }
            for (int i = c0[0]; i <= c1[0]; ++i)
                for (int j = c0[1]; j <= c1[1]; ++j)
                    for (int k = c0[2]; k <= c1[2]; ++k)
                        bins_[bin_index(i, j, k)].push_back(tri);
        }
    }

    detail::RayHit trace(const Vec3& orig, const Vec3& dir) const {
        detail::RayHit best;
        if (bins_.empty()) return best;

        // Clip the ray to the grid bounds.
        double t_lo = 0.0, t_hi = 1e300;
        for (int a = 0; a < 3; ++a) {
            if (dir[a] == 0.0) {
                if (orig[a] < bounds_.min[a] || orig[a] > bounds_.max[a]) return best;
                continue;
            }
            double ta = (bounds_.min[a] - orig[a]) / dir[a];
            double tb = (bounds_.max[a] - orig[a]) / dir[a];
            if (ta > tb) std::swap(ta, tb);
            t_lo = std::max(t_lo, ta);
            t_hi = std::min(t_hi, tb);
        }
        if (t_lo > t_hi) return best;

        Vec3 entry = orig + dir * t_lo;
        int cell[3];
        int step[3];
        double t_next[3], t_delta[3];
        for (int a = 0; a < 3; ++a) {
            cell[a] = std::clamp(cell_index(a, entry[a]), 0, dims_[a] - 1);
            if (dir[a] > 0) {
                step[a] = 1;
                double edge = bounds_.min[a] + (cell[a] + 1) * cell_[a];
                t_next[a] = (edge - orig[a]) / dir[a];
                t_delta[a] = cell_[a] / dir[a];
            } else if (dir[a] < 0) {
                step[a] = -1;
                double edge = bounds_.min[a] + cell[a] * cell_[a];
                t_next[a] = (edge - orig[a]) / dir[a];
                t_delta[a] = -cell_[a] / dir[a];
            } else {
                step[a] = 0;
                t_next[a] = 1e300;
                t_delta[a] = 1e300;
            }
        }

        while (true) {
            for (int64_t tri : bins_[bin_index(cell[0], cell[1], cell[2])]) {
                double t;
                if (intersect(tri, orig, dir, t)) detail::consider_hit(best, t, tri);
            }
            int axis = 0;
            if (t_next[1] < t_next[axis]) axis = 1;
            if (t_next[2] < t_next[axis]) axis = 2;
            double t_exit = t_next[axis];
            if (best.tri >= 0 && best.t < t_exit) break;
            cell[axis] += step[axis];
            if (cell[axis] < 0 || cell[axis] >= dims_[axis]) break;
            t_next[axis] += t_delta[axis];
        }
        return best;
    }

    bool intersect(int64_t tri, const Vec3& orig, const Vec3& dir, double& t) const {
        const auto& idx = mesh_.triangles[size_t(tri)];
        return detail::ray_triangle(orig, dir, mesh_.vertex(idx[0]), mesh_.vertex(idx[1]),
                                    mesh_.vertex(idx[2]), t);
    }

private:
    int cell_index(int axis, double x) const {
        return int(std::floor((x - bounds_.min[axis]) / cell_[axis]));
    }
    size_t bin_index(int i, int j, int k) const {
        return size_t((int64_t(i) * dims_[1] + j) * dims_[2] + k);
    }

    const MeshData& mesh_;
    Aabb bounds_;
    int dims_[3] = {0, 0, 0};
    double cell_[3] = {1, 1, 1};
    std::vector<std::vector<int64_t>> bins_;
};

namespace detail {

template <class Trace>
RenderedView render_mesh(const MeshData& mesh, const CameraView& view, int width, int height,
                         int threads, Trace&& trace) {
    view.intrinsics.validate();
    view.pose.validate();
    RenderedView out = RenderedView::make(width, height);
    const Vec3 cam_center = view.pose.translation;
    const Mat3& c2w = view.pose.rotation;
    const Mat3 w2c = c2w.transposed();

    parallel_for(int64_t(height), threads, [&](int64_t r0, int64_t r1) {
        for (int64_t row = r0; row < r1; ++row)
            for (int col = 0; col < width; ++col) {
                double u = (col + 0.5) / width * view.intrinsics.width;
                double v = (row + 0.5) / height * view.intrinsics.height;
                Vec3 dir_cam{(u - view.intrinsics.cx) / view.intrinsics.fx,
                             (v - view.intrinsics.cy) / view.intrinsics.fy, 1.0};
                Vec3 dir = c2w * dir_cam;
                RayHit hit = trace(cam_center, dir);
                if (hit.tri < 0) continue;
                int64_t px = out.index(int(row), col);
                // dir_cam.z == 1, so the ray parameter is the camera-space depth.
                out.depth[size_t(px)] = hit.t;
                const auto& tri = mesh.triangles[size_t(hit.tri)];
                Vec3 a = mesh.vertex(tri[0]), b = mesh.vertex(tri[1]), c = mesh.vertex(tri[2]);
                Vec3 n = (b - a).cross(c - a);
                double len = n.norm();
                if (len > 0) n = n * (1.0 / len);
                Vec3 nv = w2c * n;
                if (nv.z > 0) nv = nv * -1.0;
                out.normal[size_t(px)] = {nv.x, nv.y, nv.z};
                out.valid[size_t(px)] = 1;
            }
    });
    return out;
}

}  // namespace detail

// Per-pixel nearest-triangle render at the requested resolution. Pixel (r,c)
// shoots through the center of its cell of the intrinsics' image plane, so any
// render resolution works with the same calibration.
inline RenderedView raycast_render(const MeshData& mesh, const CameraView& view, int width,
                                   int height, int threads = 1) {
    TriangleGridIndex index(mesh);
    return detail::render_mesh(mesh, view, width, height, threads,
                               [&](const Vec3& o, const Vec3& d) { return index.trace(o, d); });
}

// All-pairs reference used to pin the accelerated renderer.
inline RenderedView raycast_render_brute(const MeshData& mesh, const CameraView& view, int width,
                                         int height) {
    return detail::render_mesh(
        mesh, view, width, height, 1, [&](const Vec3& o, const Vec3& d) {
            detail::RayHit best;
            for (int64_t tri = 0; tri < int64_t(mesh.triangles.size()); ++tri) {
                const auto& idx = mesh.triangles[size_t(tri)];
                double t;
                if (detail::ray_triangle(o, d, mesh.vertex(idx[0]), mesh.vertex(idx[1]),
                                         mesh.vertex(idx[2]), t))
                    detail::consider_hit(best, t, tri);
            }
            return best;
        });
}

struct DepthMetrics {
    double mae = 0, rmse = 0, abs_rel = 0, sq_rel = 0;
    int64_t pixels = 0;
};

namespace detail {

struct PixelAccumulator {
    double abs_sum = 0, sq_sum = 0, abs_rel_sum = 0, sq_rel_sum = 0, angle_sum = 0;
    int64_t joint = 0;
    int64_t gt_valid = 0, gt_covered = 0;

    void add(const RenderedView& pred, const RenderedView& gt) {
        if (pred.width != gt.width || pred.height != gt.height)
            throw ConstraintError("pixel metrics: resolutions differ");
        size_t n = size_t(pred.width) * size_t(pred.height);
        for (size_t i = 0; i < n; ++i) {
            if (gt.valid[i]) {
                gt_valid++;
                if (pred.valid[i]) gt_covered++;
            }
            if (!pred.valid[i] || !gt.valid[i]) continue;
            joint++;
            double d = pred.depth[i], dstar = gt.depth[i];
            double err = d - dstar;
            abs_sum += std::abs(err);
            sq_sum += err * err;
            abs_rel_sum += std::abs(err) / dstar;
            // The appendix divides the squared error by d*, not d*^2.
            sq_rel_sum += err * err / dstar;
            double dot = pred.normal[i][0] * gt.normal[i][0] +
                         pred.normal[i][1] * gt.normal[i][1] +
                         pred.normal[i][2] * gt.normal[i][2];
            dot = std::clamp(dot, -1.0, 1.0);
            angle_sum += std::acos(dot) * 180.0 / 3.14159265358979323846;
        }
    }
};

inline PixelAccumulator accumulate_frames(const std::vector<RenderedView>& pred,
                                          const std::vector<RenderedView>& gt) {
    if (pred.size() != gt.size())
        throw ConstraintError("pixel metrics: frame counts differ");
    PixelAccumulator acc;
    for (size_t f = 0; f < pred.size(); ++f) acc.add(pred[f], gt[f]);
    return acc;
}

}  // namespace detail

inline DepthMetrics depth_metrics(const std::vector<RenderedView>& pred,
                                  const std::vector<RenderedView>& gt) {
    detail::PixelAccumulator acc = detail::accumulate_frames(pred, gt);
    if (acc.joint == 0) throw ConstraintError("depth metrics: no jointly valid pixels");
    DepthMetrics m;
    m.pixels = acc.joint;
    m.mae = acc.abs_sum / double(acc.joint);
    m.rmse = std::sqrt(acc.sq_sum / double(acc.joint));
    m.abs_rel = acc.abs_rel_sum / double(acc.joint);
    m.sq_rel = acc.sq_rel_sum / double(acc.joint);
    return m;
}

inline DepthMetrics depth_metrics(const RenderedView& pred, const RenderedView& gt) {
    return depth_metrics(std::vector<RenderedView>{pred}, std::vector<RenderedView>{gt});
}

inline double normal_error(const std::vector<RenderedView>& pred,
                           const std::vector<RenderedView>& gt) {
    detail::PixelAccumulator acc = detail::accumulate_frames(pred, gt);
    if (acc.joint == 0) throw ConstraintError("normal error: no jointly valid pixels");
    return acc.angle_sum / double(acc.joint);
}

inline double normal_error(const RenderedView& pred, const RenderedView& gt) {
    return normal_error(std::vector<RenderedView>{pred}, std::vector<RenderedView>{gt});
}

inline double completeness(const std::vector<RenderedView>& pred,
                           const std::vector<RenderedView>& gt) {
    detail::PixelAccumulator acc = detail::accumulate_frames(pred, gt);
    if (acc.gt_valid == 0) throw ConstraintError("completeness: no valid ground-truth pixels");
    return double(acc.gt_covered) / double(acc.gt_valid);
}

inline double completeness(const RenderedView& pred, const RenderedView& gt) {
    return completeness(std::vector<RenderedView>{pred}, std::vector<RenderedView>{gt});
}

struct SampledSurface {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    uint64_t seed = 0;
};

// Area-weighted uniform surface sampling; three uniforms per sample in a fixed
// order keep the draw deterministic.
inline SampledSurface sample_surface(const MeshData& mesh, int64_t n = 200000, uint64_t seed = 0) {
    if (n < 1) throw UsageError("sample_surface: need at least one sample");
    std::vector<double> cum;
    cum.reserve(mesh.triangles.size());
    std::vector<Vec3> tri_normal(mesh.triangles.size());
    double total = 0;
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        Vec3 a = mesh.vertex(tri[0]), b = mesh.vertex(tri[1]), c = mesh.vertex(tri[2]);
        Vec3 cr = (b - a).cross(c - a);
        double area = 0.5 * cr.norm();
        total += area;
        cum.push_back(total);
        tri_normal[t] = area > 0 ? cr * (1.0 / (2.0 * area)) : Vec3{0, 0, 1};
    }
    if (total <= 0) throw ConstraintError("sample_surface: mesh has zero surface area");

    SampledSurface out;
    out.seed = seed;
    out.points.reserve(size_t(n));
    out.normals.reserve(size_t(n));
    Rng rng(seed);
    for (int64_t i = 0; i < n; ++i) {
        double pick = rng.uniform() * total;
        size_t t = size_t(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
        if (t >= cum.size()) t = cum.size() - 1;
        double r1 = rng.uniform(), r2 = rng.uniform();
        double s = std::sqrt(r1);
        double wa = 1.0 - s, wb = s * (1.0 - r2), wc = s * r2;
        const auto& tri = mesh.triangles[t];
        Vec3 a = mesh.vertex(tri[0]), b = mesh.vertex(tri[1]), c = mesh.vertex(tri[2]);
        out.points.push_back(a * wa + b * wb + c * wc);
        out.normals.push_back(tri_normal[t]);
    }
    return out;
}

// Exact nearest neighbor of every `from` point within `to`: (index, distance).
inline std::vector<std::pair<int64_t, double>> nearest_all(const std::vector<Vec3>& from,
                                                           const std::vector<Vec3>& to) {
    if (to.empty()) throw ConstraintError("nearest neighbors of an empty point set");
    Aabb box = Aabb::of_points(to);
    double diag = box.diagonal();
    double cell = std::max(1e-9, diag > 0 ? diag / std::cbrt(double(to.size())) : 1.0);
    PointHashGrid grid(to, cell);
    std::vector<std::pair<int64_t, double>> out;
    out.reserve(from.size());
    for (const auto& p : from) {
        auto [idx, d2] = grid.nearest(p);
        out.push_back({idx, std::sqrt(d2)});
    }
    return out;
}

inline double chamfer(const SampledSurface& a, const SampledSurface& b) {
    if (a.points.empty() || b.points.empty())
        throw ConstraintError("chamfer distance of an empty point set");
    double mean_ab = 0, mean_ba = 0;
    for (const auto& [idx, d] : nearest_all(a.points, b.points)) mean_ab += d;
    for (const auto& [idx, d] : nearest_all(b.points, a.points)) mean_ba += d;
    mean_ab /= double(a.points.size());
    mean_ba /= double(b.points.size());
    return 0.5 * (mean_ab + mean_ba);
}

inline double f_score(const SampledSurface& a, const SampledSurface& b, double tau = 0.1) {
    if (tau <= 0) throw UsageError("f_score: tau must be > 0");
    if (a.points.empty() || b.points.empty())
        throw ConstraintError("f-score of an empty point set");
    int64_t hit_a = 0, hit_b = 0;
    for (const auto& [idx, d] : nearest_all(a.points, b.points)) hit_a += (d <= tau);
    for (const auto& [idx, d] : nearest_all(b.points, a.points)) hit_b += (d <= tau);
    double precision = double(hit_a) / double(a.points.size());
    double recall = double(hit_b) / double(b.points.size());
    return 0.5 * (precision + recall);
}

inline double normal_consistency(const SampledSurface& a, const SampledSurface& b,
                                 double cap = 0.2) {
    if (a.points.empty() || b.points.empty())
        throw ConstraintError("normal consistency of an empty point set");
    if (a.normals.size() != a.points.size() || b.normals.size() != b.points.size())
        throw ConstraintError("normal consistency needs per-point normals");
    double sum_ab = 0, sum_ba = 0;
    auto nn_ab = nearest_all(a.points, b.points);
    for (size_t i = 0; i < nn_ab.size(); ++i) {
        if (nn_ab[i].second > cap) continue;  // agreement zeroed beyond the cap
        sum_ab += std::abs(a.normals[i].dot(b.normals[size_t(nn_ab[i].first)]));
    }
    auto nn_ba = nearest_all(b.points, a.points);
    for (size_t i = 0; i < nn_ba.size(); ++i) {
        if (nn_ba[i].second > cap) continue;
        sum_ba += std::abs(b.normals[i].dot(a.normals[size_t(nn_ba[i].first)]));
    }
    return 0.5 * (sum_ab / double(a.points.size()) + sum_ba / double(b.points.size()));
}

enum class EnvelopeMode { BboxInflate, VoxelDilate };

struct ObservationEnvelope {
    EnvelopeMode mode = EnvelopeMode::BboxInflate;
    Aabb bbox;
    double inflate = 0.2;
    DenseGrid voxels;
    double dilate = 0.15;

    static ObservationEnvelope from_bbox(const Aabb& box, double inflate_frac = 0.2) {
        ObservationEnvelope e;
        e.mode = EnvelopeMode::BboxInflate;
        e.bbox = box;
        e.inflate = inflate_frac;
        e.validate();
        return e;
    }

    static ObservationEnvelope from_voxels(DenseGrid occupancy, double dilate_radius = 0.15) {
        ObservationEnvelope e;
        e.mode = EnvelopeMode::VoxelDilate;
        e.voxels = std::move(occupancy);
        e.dilate = dilate_radius;
        e.validate();
        return e;
    }

    void validate() const {
        if (inflate < 0) throw UsageError("envelope: inflation must be >= 0");
        if (dilate < 0) throw UsageError("envelope: dilation radius must be >= 0");
        if (mode == EnvelopeMode::BboxInflate && !bbox.valid())
            throw ConstraintError("envelope: invalid bounding box");
        if (mode == EnvelopeMode::VoxelDilate && voxels.channels != 1)
            throw ConstraintError("envelope: voxel mode needs a one-channel occupancy grid");
    }
};

// Drops triangles entirely outside the envelope; anything touching it is kept
// whole. Unused vertices are compacted away.
inline MeshData apply_envelope(const MeshData& mesh, const ObservationEnvelope& env) {
    env.validate();
    std::vector<uint8_t> keep(mesh.triangles.size(), 0);

    if (env.mode == EnvelopeMode::BboxInflate) {
        Aabb box = env.bbox.inflated(env.inflate);
        for (size_t t = 0; t < mesh.triangles.size(); ++t) {
            Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
            for (uint32_t vi : mesh.triangles[t]) {
                lo = Vec3::min(lo, mesh.vertex(vi));
                hi = Vec3::max(hi, mesh.vertex(vi));
            }
            keep[t] = lo.x <= box.max.x && box.min.x <= hi.x && lo.y <= box.max.y &&
                      box.min.y <= hi.y && lo.z <= box.max.z && box.min.z <= hi.z;
        }
    } else {
        // Dilate the occupancy by the radius (center-to-center metric), then
        // keep triangles whose AABB overlaps any set voxel.
        const DenseGrid& occ = env.voxels;
        DenseGrid mask = DenseGrid::make(occ.origin, occ.voxel_size, occ.dims, 1);
        int r = int(std::floor(env.dilate / occ.voxel_size + 1e-9));
        std::vector<std::array<int, 3>> offsets;
        for (int di = -r; di <= r; ++di)
            for (int dj = -r; dj <= r; ++dj)
                for (int dk = -r; dk <= r; ++dk)
                    if (double(di * di + dj * dj + dk * dk) * occ.voxel_size * occ.voxel_size <=
                        env.dilate * env.dilate + 1e-12)
                        offsets.push_back({di, dj, dk});
        for (int i = 0; i < occ.dims[0]; ++i)
            for (int j = 0; j < occ.dims[1]; ++j)
                for (int k = 0; k < occ.dims[2]; ++k) {
                    if (occ.at(i, j, k)[0] == 0.0f) continue;
                    for (const auto& o : offsets) {
                        int ii = i + o[0], jj = j + o[1], kk = k + o[2];
                        if (mask.in_bounds(ii, jj, kk)) mask.at(ii, jj, kk)[0] = 1.0f;
                    }
                }
        for (size_t t = 0; t < mesh.triangles.size(); ++t) {
            Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
            for (uint32_t vi : mesh.triangles[t]) {
                lo = Vec3::min(lo, mesh.vertex(vi));
                hi = Vec3::max(hi, mesh.vertex(vi));
            }
            int c0[3], c1[3];
            bool outside = false;
            for (int a = 0; a < 3; ++a) {
                c0[a] = std::max(0, int(std::floor((lo[a] - occ.origin[a]) / occ.voxel_size)));
                c1[a] = std::min(occ.dims[a] - 1,
                                 int(std::floor((hi[a] - occ.origin[a]) / occ.voxel_size)));
                if (c0[a] > c1[a]) outside = true;
            }
            if (outside) continue;
            for (int i = c0[0]; i <= c1[0] && !keep[t]; ++i)
                for (int j = c0[1]; j <= c1[1] && !keep[t]; ++j)
                    for (int k = c0[2]; k <= c1[2] && !keep[t]; ++k)
                        if (mask.at(i, j, k)[0] != 0.0f) keep[t] = 1;
        }
    }

    MeshData out;
    std::vector<uint32_t> remap(mesh.vertices.size(), UINT32_MAX);
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
        if (!keep[t]) continue;
        std::array<uint32_t, 3> tri;
        for (int v = 0; v < 3; ++v) {
            uint32_t vi = mesh.triangles[t][size_t(v)];
            if (remap[vi] == UINT32_MAX) {
                remap[vi] = uint32_t(out.vertices.size());
                out.vertices.push_back(mesh.vertices[vi]);
                if (mesh.has_colors()) out.colors.push_back(mesh.colors[vi]);
            }
            tri[size_t(v)] = remap[vi];
        }
        out.triangles.push_back(tri);
    }
    return out;
}

// Occupancy-grid scores used by the toy end-to-end checks. Occupied means a
// nonzero channel-0 value.
inline std::vector<Vec3> occupied_centers(const DenseGrid& g) {
    std::vector<Vec3> out;
    for (int i = 0; i < g.dims[0]; ++i)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int k = 0; k < g.dims[2]; ++k)
                if (g.at(i, j, k)[0] != 0.0f) out.push_back(g.voxel_center(i, j, k));
    return out;
}

inline double occupancy_iou(const DenseGrid& a, const DenseGrid& b) {
    if (a.dims != b.dims) throw ConstraintError("occupancy IoU: grid dims differ");
    int64_t inter = 0, uni = 0;
    for (int64_t v = 0; v < a.voxel_count(); ++v) {
        bool oa = a.data[size_t(v) * size_t(a.channels)] != 0.0f;
        bool ob = b.data[size_t(v) * size_t(b.channels)] != 0.0f;
        inter += oa && ob;
        uni += oa || ob;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

inline double occupancy_f_score(const DenseGrid& pred, const DenseGrid& gt, double tau) {
    std::vector<Vec3> p = occupied_centers(pred);
    std::vector<Vec3> g = occupied_centers(gt);
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;
    SampledSurface sp, sg;
    sp.points = std::move(p);
    sg.points = std::move(g);
    return f_score(sp, sg, tau);
}

}  // namespace chunkgen

#endif
