#ifndef CHUNKGEN_GEOMETRY_HPP
#define CHUNKGEN_GEOMETRY_HPP

#include <optional>

#include "chunkgen/grids.hpp"

namespace chunkgen {

struct CameraIntrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (fx <= 0 || fy <= 0) throw ConstraintError("intrinsics: focal lengths must be > 0");
        if (width < 1 || height < 1) throw ConstraintError("intrinsics: image size must be >= 1");
    }
};

// Rotation must be orthonormal with det +1; checked on demand, not on every
// construction (poses are built from quaternions or composed from valid ones).
struct RigidTransform {
    Mat3 rotation;
    Vec3 translation{0, 0, 0};

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform inverse() const {
        Mat3 rt = rotation.transposed();
        return {rt, -(rt * translation)};
    }
    RigidTransform compose(const RigidTransform& o) const {
        // this ∘ o : apply o first.
        return {rotation * o.rotation, rotation * o.translation + translation};
    }
    static RigidTransform identity() { return {}; }

    void validate(double tol = 1e-6) const {
        Mat3 rtr = rotation.transposed() * rotation;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double want = i == j ? 1.0 : 0.0;
                if (std::abs(rtr(i, j) - want) > tol)
                    throw ConstraintError("rigid transform: rotation not orthonormal");
            }
        if (std::abs(rotation.det() - 1.0) > tol)
            throw ConstraintError("rigid transform: rotation must have det +1");
    }
};

// Dense 2D image feature map, one D-vector per feature cell. Cell (r,c)
// covers pixels [c*stride,(c+1)*stride) x [r*stride,(r+1)*stride). Data is
// row-major with channels innermost.
struct FeatureMap {
    int height = 0, width = 0;  // feature grid size
    int stride = 1;             // pixels per feature cell
    int channels = 0;
    std::vector<float> data;

    const float* at(int r, int c) const {
        return data.data() + (size_t(r) * width + c) * channels;
    }
    float* at(int r, int c) { return data.data() + (size_t(r) * width + c) * channels; }
};

// A posed input image. Pose is camera-to-world; the camera looks down +z in
// its own frame with pixel v increasing downward (COLMAP convention).
struct CameraView {
    CameraIntrinsics intrinsics;
    RigidTransform pose;  // camera-to-world
    std::optional<FeatureMap> feature_map;
    std::optional<DenseGrid> image;  // optional RGB raster, dims {H,W,1}, C=3
};

struct Projection {
    double u = 0, v = 0;
    double depth = 0;
    bool valid = false;
};

// Perspective projection of a world point: u = fx*xc/zc + cx etc. with the
// camera-frame point xc = R^T (x - t). Valid only for zc > 0 and (u,v) inside
// the image.
inline Projection project(const CameraView& view, const Vec3& x_world) {
    const RigidTransform w2c = view.pose.inverse();
    const Vec3 xc = w2c.apply(x_world);
    Projection p;
    if (xc.z <= 0) return p;
    p.u = view.intrinsics.fx * xc.x / xc.z + view.intrinsics.cx;
    p.v = view.intrinsics.fy * xc.y / xc.z + view.intrinsics.cy;
    p.depth = xc.z;
    p.valid = p.u >= 0 && p.u < view.intrinsics.width && p.v >= 0 && p.v < view.intrinsics.height;
    return p;
}

// Chunk frames are pure translations of the world frame.
inline Vec3 world_from_chunk(const Vec3& t_c, const Vec3& x_chunk) { return x_chunk + t_c; }

enum class Interp { Bilinear, Nearest };

// Sample a feature map at a pixel position. The pixel is mapped to feature
// coordinates (cell centers at (i+0.5)*stride) and interpolated; coordinates
// outside the grid are clamped to the border cells.
inline void sample_feature(const FeatureMap& fm, double u, double v, float* out,
                           Interp interp = Interp::Bilinear) {
    double fc = u / fm.stride - 0.5;
    double fr = v / fm.stride - 0.5;
    if (interp == Interp::Nearest) {
        int c = std::clamp(int(std::lround(fc)), 0, fm.width - 1);
        int r = std::clamp(int(std::lround(fr)), 0, fm.height - 1);
        const float* f = fm.at(r, c);
        for (int ch = 0; ch < fm.channels; ++ch) out[ch] = f[ch];
        return;
    }
    fc = std::clamp(fc, 0.0, double(fm.width - 1));
    fr = std::clamp(fr, 0.0, double(fm.height - 1));
    int c0 = std::min(int(fc), fm.width - 1);
    int r0 = std::min(int(fr), fm.height - 1);
    int c1 = std::min(c0 + 1, fm.width - 1);
    int r1 = std::min(r0 + 1, fm.height - 1);
    double wc = fc - c0, wr = fr - r0;
    const float* f00 = fm.at(r0, c0);
    const float* f01 = fm.at(r0, c1);
    const float* f10 = fm.at(r1, c0);
    const float* f11 = fm.at(r1, c1);
    for (int ch = 0; ch < fm.channels; ++ch) {
        double top = f00[ch] + wc * (f01[ch] - f00[ch]);
        double bot = f10[ch] + wc * (f11[ch] - f10[ch]);
        out[ch] = float(top + wr * (bot - top));
    }
}

// Conservative frustum / AABB overlap: the box is rejected only when all 8
// corners fall outside one of the frustum's bounding halfspaces in the camera
// frame. Never returns false for a box the frustum truly intersects; may
// return true for near misses.
inline bool frustum_intersects_aabb(const CameraView& view, const Aabb& box, double near_plane,
                                    double far_plane) {
    const RigidTransform w2c = view.pose.inverse();
    std::array<Vec3, 8> corners;
    int n = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k)
                corners[n++] = w2c.apply(Vec3{i ? box.max.x : box.min.x, j ? box.max.y : box.min.y,
                                              k ? box.max.z : box.min.z});

    const auto& K = view.intrinsics;
    // Halfspace list: {a,b,c,d} meaning a*x + b*y + c*z + d <= 0 inside.
    const double planes[6][4] = {
        {0, 0, -1, near_plane},             // z >= near
        {0, 0, 1, -far_plane},              // z <= far
        {-K.fx, 0, -K.cx, 0},               // u >= 0
        {K.fx, 0, K.cx - K.width, 0},       // u <= W
        {0, -K.fy, -K.cy, 0},               // v >= 0
        {0, K.fy, K.cy - K.height, 0},      // v <= H
    };
    for (const auto& pl : planes) {
        bool all_out = true;
        for (const auto& p : corners) {
            if (pl[0] * p.x + pl[1] * p.y + pl[2] * p.z + pl[3] <= 0) {
                all_out = false;
                break;
            }
        }
        if (all_out) return false;
    }
    return true;
}

}  // namespace chunkgen

#endif
