#ifndef CHUNKGEN_CALIBRATE_HPP
#define CHUNKGEN_CALIBRATE_HPP

#include <algorithm>
#include <unordered_map>
#include <vector>

#include "chunkgen/grids.hpp"

namespace chunkgen {

struct SparsePointCloud {
    std::vector<Vec3> points;

    void validate() const {
        for (const auto& p : points)
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
                throw ConstraintError("point cloud: non-finite coordinate");
    }
};

enum class Axis { X = 0, Y = 1, Z = 2 };

struct SceneBounds {
    Aabb aabb;
    Axis up_axis = Axis::Y;
    double height = 0;

    void validate() const {
        if (!aabb.valid()) throw ConstraintError("scene bounds: invalid aabb");
        if (height <= 0) throw ConstraintError("scene bounds: height must be > 0");
    }
};

// Uniform hash grid for exact neighbor queries on small clouds. Cell size is
// chosen by the caller to match the query radius.
class PointHashGrid {
public:
    PointHashGrid(const std::vector<Vec3>& points, double cell) : points_(points), cell_(cell) {
        if (cell_ <= 0) throw ConstraintError("hash grid: cell size must be > 0");
        cells_.reserve(points.size());
        for (size_t i = 0; i < points.size(); ++i) {
            const Vec3& p = points[i];
            int64_t c[3] = {coord(p.x), coord(p.y), coord(p.z)};
            for (int a = 0; a < 3; ++a) {
                clo_[a] = std::min(clo_[a], c[a]);
                chi_[a] = std::max(chi_[a], c[a]);
            }
            cells_[pack(c[0], c[1], c[2])].push_back(i);
        }
    }

    // Visit indices in the 3x3x3 cell neighborhood of p (superset of the
    // ball of radius cell_ around p).
    template <class F>
    void visit_neighborhood(const Vec3& p, F&& f) const {
        int64_t ci = coord(p.x), cj = coord(p.y), ck = coord(p.z);
        for (int64_t di = -1; di <= 1; ++di)
            for (int64_t dj = -1; dj <= 1; ++dj)
                for (int64_t dk = -1; dk <= 1; ++dk) {
                    auto it = cells_.find(pack(ci + di, cj + dj, ck + dk));
                    if (it == cells_.end()) continue;
                    for (size_t idx : it->second) f(idx);
                }
    }

    // Exact k nearest neighbors of points_[self] (excluding itself), by
    // expanding ring search clipped to the occupied cell box. Returns squared
    // distances, ascending.
    std::vector<double> knn_dist2(size_t self, int k) const {
        const Vec3& p = points_[self];
        int64_t c0[3] = {coord(p.x), coord(p.y), coord(p.z)};
        int64_t max_ring = 0;
        for (int a = 0; a < 3; ++a)
            max_ring = std::max({max_ring, chi_[a] - c0[a], c0[a] - clo_[a]});
        std::vector<double> best;  // sorted ascending, at most k entries
        best.reserve(size_t(k) + 1);
        for (int64_t ring = 0; ring <= max_ring; ++ring) {
            int64_t ilo = std::max(-ring, clo_[0] - c0[0]), ihi = std::min(ring, chi_[0] - c0[0]);
            int64_t jlo = std::max(-ring, clo_[1] - c0[1]), jhi = std::min(ring, chi_[1] - c0[1]);
            int64_t klo = std::max(-ring, clo_[2] - c0[2]), khi = std::min(ring, chi_[2] - c0[2]);
            for (int64_t di = ilo; di <= ihi; ++di)
                for (int64_t dj = jlo; dj <= jhi; ++dj)
                    for (int64_t dk = klo; dk <= khi; ++dk) {
                        // Only the shell; interior rings were already visited.
                        if (std::max({std::abs(di), std::abs(dj), std::abs(dk)}) != ring) continue;
                        auto it = cells_.find(pack(c0[0] + di, c0[1] + dj, c0[2] + dk));
                        if (it == cells_.end()) continue;
                        for (size_t idx : it->second) {
                            if (idx == self) continue;
                            double d2 = (points_[idx] - p).norm2();
                            if (int(best.size()) < k) {
                                best.insert(std::upper_bound(best.begin(), best.end(), d2), d2);
                            } else if (d2 < best.back()) {
                                best.pop_back();
                                best.insert(std::upper_bound(best.begin(), best.end(), d2), d2);
                            }
                        }
                    }
            // Points in unexplored rings are at least ring*cell away; once the
            // kth best is closer than that, the answer cannot change.
            double ring_min = double(ring) * cell_;
            if (int(best.size()) >= k && best.back() <= ring_min * ring_min) break;
        }
        return best;
    }

    // Exact nearest neighbor of an arbitrary query point, ties broken toward
    // the smaller index (matching an ascending brute-force scan). Returns
    // {index, squared distance}; {-1, inf} for an empty grid.
    std::pair<int64_t, double> nearest(const Vec3& q) const {
        int64_t best_idx = -1;
        double best_d2 = 1e300;
        if (points_.empty()) return {best_idx, best_d2};
        int64_t c0[3] = {coord(q.x), coord(q.y), coord(q.z)};
        int64_t max_ring = 0;
        for (int a = 0; a < 3; ++a)
            max_ring = std::max({max_ring, chi_[a] - c0[a], c0[a] - clo_[a]});
        for (int64_t ring = 0; ring <= max_ring; ++ring) {
            int64_t ilo = std::max(-ring, clo_[0] - c0[0]), ihi = std::min(ring, chi_[0] - c0[0]);
            int64_t jlo = std::max(-ring, clo_[1] - c0[1]), jhi = std::min(ring, chi_[1] - c0[1]);
            int64_t klo = std::max(-ring, clo_[2] - c0[2]), khi = std::min(ring, chi_[2] - c0[2]);
            for (int64_t di = ilo; di <= ihi; ++di)
                for (int64_t dj = jlo; dj <= jhi; ++dj)
                    for (int64_t dk = klo; dk <= khi; ++dk) {
                        if (std::max({std::abs(di), std::abs(dj), std::abs(dk)}) != ring) continue;
                        auto it = cells_.find(pack(c0[0] + di, c0[1] + dj, c0[2] + dk));
                        if (it == cells_.end()) continue;
                        for (size_t idx : it->second) {
                            double d2 = (points_[idx] - q).norm2();
                            if (d2 < best_d2 || (d2 == best_d2 && int64_t(idx) < best_idx)) {
                                best_d2 = d2;
                                best_idx = int64_t(idx);
                            }
                        }
                    }
            double ring_min = double(ring) * cell_;
            if (best_idx >= 0 && best_d2 <= ring_min * ring_min) break;
        }
        return {best_idx, best_d2};
    }

private:
    int64_t coord(double v) const { return int64_t(std::floor(v / cell_)); }
    static uint64_t pack(int64_t i, int64_t j, int64_t k) {
        // 21 bits per axis, offset to keep them positive.
        const uint64_t off = uint64_t(1) << 20;
        return ((uint64_t(i) + off) & 0x1FFFFF) | (((uint64_t(j) + off) & 0x1FFFFF) << 21) |
               (((uint64_t(k) + off) & 0x1FFFFF) << 42);
    }
    const std::vector<Vec3>& points_;
    double cell_;
    int64_t clo_[3] = {INT64_MAX, INT64_MAX, INT64_MAX};
    int64_t chi_[3] = {INT64_MIN, INT64_MIN, INT64_MIN};
    std::unordered_map<uint64_t, std::vector<size_t>> cells_;
};

// Keeps points whose mean distance to their k nearest neighbors is at most
// mu + std_ratio * sigma, with mu/sigma over all points' mean neighbor
// distances. One pass; statistics are from the input cloud.
inline SparsePointCloud statistical_outlier_filter(const SparsePointCloud& cloud, int k,
                                                   double std_ratio) {
    if (int(cloud.points.size()) <= k)
        throw ConstraintError(strfmt("statistical filter needs > %d points, got %zu", k,
                                     cloud.points.size()));
    // Cell size from a rough density estimate; exactness does not depend on it.
    Aabb box = Aabb::of_points(cloud.points);
    double vol = std::max(1e-9, (box.max.x - box.min.x) * (box.max.y - box.min.y) *
                                    (box.max.z - box.min.z));
    double cell = std::max(1e-6, std::cbrt(vol / double(cloud.points.size())) * 2.0);
    PointHashGrid grid(cloud.points, cell);

    std::vector<double> mean_dist(cloud.points.size());
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        std::vector<double> d2 = grid.knn_dist2(i, k);
        double s = 0;
        for (double d : d2) s += std::sqrt(d);
        mean_dist[i] = d2.empty() ? 0.0 : s / double(d2.size());
    }
    double mu = 0;
    for (double d : mean_dist) mu += d;
    mu /= double(mean_dist.size());
    double var = 0;
    for (double d : mean_dist) var += (d - mu) * (d - mu);
    double sigma = std::sqrt(var / double(mean_dist.size()));

    SparsePointCloud out;
    double thresh = mu + std_ratio * sigma;
    for (size_t i = 0; i < cloud.points.size(); ++i)
        if (mean_dist[i] <= thresh) out.points.push_back(cloud.points[i]);
    return out;
}

// Keeps points with at least min_neighbors other points within radius.
inline SparsePointCloud radius_outlier_filter(const SparsePointCloud& cloud, double radius,
                                              int min_neighbors) {
    if (radius <= 0) throw ConstraintError("radius filter: radius must be > 0");
    SparsePointCloud out;
    if (min_neighbors <= 0) return cloud;
    if (cloud.points.empty()) return out;
    PointHashGrid grid(cloud.points, radius);
    double r2 = radius * radius;
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        int count = 0;
        grid.visit_neighborhood(cloud.points[i], [&](size_t j) {
            if (j != i && (cloud.points[j] - cloud.points[i]).norm2() <= r2) count++;
        });
        if (count >= min_neighbors) out.points.push_back(cloud.points[i]);
    }
    return out;
}

// Percentile by linear interpolation over sorted values, p in [0,100].
inline double percentile(std::vector<double> vals, double p) {
    if (vals.empty()) throw ConstraintError("percentile of empty set");
    std::sort(vals.begin(), vals.end());
    if (vals.size() == 1) return vals[0];
    double pos = p / 100.0 * double(vals.size() - 1);
    size_t lo = size_t(std::clamp(std::floor(pos), 0.0, double(vals.size() - 1)));
    size_t hi = std::min(lo + 1, vals.size() - 1);
    double w = pos - double(lo);
    return vals[lo] + w * (vals[hi] - vals[lo]);
}

inline SceneBounds estimate_bounds(const SparsePointCloud& cloud, double p_low, double p_high,
                                   double pad, Axis up_axis = Axis::Y) {
    if (cloud.points.empty()) throw ConstraintError("estimate_bounds: empty cloud");
    if (!(p_low < p_high) || p_low < 0 || p_high > 100)
        throw ConstraintError("estimate_bounds: need 0 <= p_low < p_high <= 100");
    SceneBounds b;
    b.up_axis = up_axis;
    for (int axis = 0; axis < 3; ++axis) {
        std::vector<double> vals;
        vals.reserve(cloud.points.size());
        for (const auto& p : cloud.points) vals.push_back(p[axis]);
        b.aabb.min[axis] = percentile(vals, p_low) - pad;
        b.aabb.max[axis] = percentile(vals, p_high) + pad;
    }
    b.height = b.aabb.max[int(up_axis)] - b.aabb.min[int(up_axis)];
    if (b.height <= 0) throw ConstraintError("estimate_bounds: degenerate height");
    return b;
}

}  // namespace chunkgen

#endif
