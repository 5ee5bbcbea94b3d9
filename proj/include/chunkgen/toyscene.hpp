#ifndef CHUNKGEN_TOYSCENE_HPP
#define CHUNKGEN_TOYSCENE_HPP

#include "chunkgen/chunker.hpp"
#include "chunkgen/evalsuite.hpp"
#include "chunkgen/isosurface.hpp"

namespace chunkgen {

struct ColoredBox {
    Aabb box;
    std::array<float, 3> rgb{0.5f, 0.5f, 0.5f};
};

// A procedurally generated room: floor and four walls spanning the bounds,
// plus 1-6 axis-aligned boxes resting on the floor. Everything is derived
// from the solid list; the grids are center-inside rasterizations on the
// chunk layout's detail lattice (y up).
struct ToyScene {
    uint64_t seed = 0;
    SceneBounds bounds;
    ChunkLayout layout;
    std::vector<ColoredBox> solids;  // floor, walls, then boxes; later wins
    int box_count = 0;
    DenseGrid occupancy;   // detail lattice, one channel, exact 0/1
    DenseGrid color;       // detail lattice, rgb
    SparseGrid solid_ids;  // 1 + solid index per occupied voxel
    MeshData mesh;         // colored voxel surface, the render target
    std::vector<CameraView> cameras;      // with rendered rgb in image
    std::vector<RenderedView> renders;    // matching depth/normal maps
};

namespace detail {

inline std::array<float, 3> hsv_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (int(hp)) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    double m = v - c;
    return {float(r + m), float(g + m), float(b + m)};
}

}  // namespace detail

// Deterministic world-space brightness pattern, in [0.4, 1.0]. Shading each
// voxel by the pattern at its center keeps rendering flat per-voxel while
// making every surface point distinct, so multi-view matching can localize
// surfaces instead of seeing one uniform color per solid.
inline double color_mod(const Vec3& p) {
    double s = std::sin(9.7 * p.x + 1.3) * std::sin(8.3 * p.y + 2.1) * std::sin(7.1 * p.z + 0.5);
    return 0.7 + 0.3 * s;
}

// Rasterize solids onto grids sharing one lattice: a voxel is occupied when
// its center lies in any solid; the last solid in the list wins colors, shaded
// by color_mod at the voxel center. The optional id grid records 1 + the
// winning solid index (0 = empty).
inline void rasterize_solids(const std::vector<ColoredBox>& solids, DenseGrid& occupancy,
                             DenseGrid& color, DenseGrid* ids = nullptr) {
    for (int i = 0; i < occupancy.dims[0]; ++i)
        for (int j = 0; j < occupancy.dims[1]; ++j)
            for (int k = 0; k < occupancy.dims[2]; ++k) {
                Vec3 p = occupancy.voxel_center(i, j, k);
                int hit = -1;
                for (size_t s = 0; s < solids.size(); ++s)
                    if (solids[s].box.contains(p)) hit = int(s);
                if (hit < 0) continue;
                occupancy.at(i, j, k)[0] = 1.0f;
                float shade = float(color_mod(p));
                float* c = color.at(i, j, k);
                c[0] = solids[size_t(hit)].rgb[0] * shade;
                c[1] = solids[size_t(hit)].rgb[1] * shade;
                c[2] = solids[size_t(hit)].rgb[2] * shade;
                if (ids) ids->at(i, j, k)[0] = float(hit + 1);
            }
}

// Camera-to-world pose looking from pos toward target, pixel v running down
// (camera x right, y down, z forward).
inline RigidTransform look_at(const Vec3& pos, const Vec3& target, const Vec3& up = {0, 1, 0}) {
    if ((target - pos).norm() == 0) throw UsageError("look_at: position equals target");
    Vec3 f = (target - pos).normalized();
    Vec3 down = f * up.dot(f) - up;
    if (down.norm() < 1e-9) down = Vec3{0, 0, 1} - f * f.z;  // looking along up
    Vec3 d = down.normalized();
    Vec3 r = d.cross(f);
    RigidTransform pose;
    pose.rotation.m = {r.x, d.x, f.x, r.y, d.y, f.y, r.z, d.z, f.z};
    pose.translation = pos;
    pose.validate();
    return pose;
}

// Fraction of occupied voxels the camera sees. A voxel counts when its center
// projects into the frame and the first surface along that sightline is
// either within two voxels of the center or, when a solid id grid is given
// (same lattice, one channel), part of the voxel's own solid. The second arm
// keeps surfaces seen at grazing angles and the far sides of thin solids
// while still rejecting foreign occluders.
inline double visible_fraction(const DenseGrid& occupancy, const SparseGrid* ids,
                               const CameraView& view, const RenderedView& render) {
    const auto& K = view.intrinsics;
    int64_t total = 0, visible = 0;
    double tol = 2.0 * occupancy.voxel_size;
    for (int i = 0; i < occupancy.dims[0]; ++i)
        for (int j = 0; j < occupancy.dims[1]; ++j)
            for (int k = 0; k < occupancy.dims[2]; ++k) {
                if (occupancy.at(i, j, k)[0] == 0.0f) continue;
                total++;
                Vec3 center = occupancy.voxel_center(i, j, k);
                Projection p = project(view, center);
                if (!p.valid) continue;
                int col = std::clamp(int(p.u * render.width / K.width), 0, render.width - 1);
                int row = std::clamp(int(p.v * render.height / K.height), 0, render.height - 1);
                int64_t px = render.index(row, col);
                if (!render.valid[size_t(px)]) continue;
                double u = (col + 0.5) / render.width * K.width;
                double v = (row + 0.5) / render.height * K.height;
                Vec3 dir_cam{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
                Vec3 hit = view.pose.translation +
                           (view.pose.rotation * dir_cam) * render.depth[size_t(px)];
                if ((hit - center).norm() <= tol) {
                    visible++;
                    continue;
                }
                if (!ids) continue;
                int64_t own = ids->find({i, j, k});
                int64_t at_hit = nearest_sparse_voxel(*ids, hit);
                if (own >= 0 && at_hit >= 0 && ids->data[size_t(own)] == ids->data[size_t(at_hit)])
                    visible++;
            }
    return total ? double(visible) / double(total) : 0.0;
}

inline double visible_fraction(const DenseGrid& occupancy, const CameraView& view,
                               const RenderedView& render) {
    return visible_fraction(occupancy, nullptr, view, render);
}

// Flat-shaded RGB for a camera: each hit takes the color of the nearest
// occupied voxel of the appearance grid. dims {H, W, 1}, three channels.
inline DenseGrid render_rgb(const CameraView& view, const RenderedView& render,
                            const SparseGrid& appearance) {
    const auto& K = view.intrinsics;
    DenseGrid img = DenseGrid::make({0, 0, 0}, 1.0, {render.height, render.width, 1}, 3);
    for (int row = 0; row < render.height; ++row)
        for (int col = 0; col < render.width; ++col) {
            int64_t px = render.index(row, col);
            float* dst = img.at(row, col, 0);
            if (!render.valid[size_t(px)]) {
                dst[0] = dst[1] = dst[2] = 0.1f;  // background
                continue;
            }
            double u = (col + 0.5) / render.width * K.width;
            double v = (row + 0.5) / render.height * K.height;
            Vec3 dir_cam{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
            Vec3 p = view.pose.translation +
                     (view.pose.rotation * dir_cam) * render.depth[size_t(px)];
            int64_t idx = nearest_sparse_voxel(appearance, p);
            if (idx < 0) {
                dst[0] = dst[1] = dst[2] = 0.5f;
                continue;
            }
            const float* c = appearance.data.data() + size_t(idx) * size_t(appearance.channels);
            dst[0] = c[0];
            dst[1] = c[1];
            dst[2] = c[2];
        }
    return img;
}

// Sparse rgb grid over the occupied voxels, the appearance input expected by
// decode_to_mesh and the flat-shaded renderer.
inline SparseGrid colored_appearance(const DenseGrid& occupancy, const DenseGrid& color) {
    SparseGrid app = sparsify(occupancy);
    app.channels = 3;
    app.data.clear();
    app.data.reserve(app.coords.size() * 3);
    for (const auto& c : app.coords) {
        const float* col = color.at(c[0], c[1], c[2]);
        app.data.insert(app.data.end(), {col[0], col[1], col[2]});
    }
    return app;
}

inline ToyScene gen_scene(uint64_t seed) {
    Rng rng(seed);
    ToyScene scene;
    scene.seed = seed;

    double ex = rng.uniform(4.0, 8.0);
    double ez = rng.uniform(4.0, 8.0);
    double h = rng.uniform(2.5, 4.0);
    scene.bounds.aabb = {{0, 0, 0}, {ex, h, ez}};
    scene.bounds.up_axis = Axis::Y;
    scene.bounds.height = h;
    scene.layout = tile(scene.bounds, compute_chunk_edge(scene.bounds), 0.25, 16);

    const double wall = 0.3;
    auto pastel = [&rng](double s_lo, double s_hi, double v_lo, double v_hi) {
        double hue = rng.uniform();
        double s = rng.uniform(s_lo, s_hi);
        double v = rng.uniform(v_lo, v_hi);
        return detail::hsv_rgb(hue, s, v);
    };
    scene.solids.push_back({{{0, 0, 0}, {ex, wall, ez}}, pastel(0.1, 0.3, 0.55, 0.8)});
    scene.solids.push_back({{{0, 0, 0}, {wall, h, ez}}, pastel(0.3, 0.6, 0.5, 0.9)});
    scene.solids.push_back({{{ex - wall, 0, 0}, {ex, h, ez}}, pastel(0.3, 0.6, 0.5, 0.9)});
    scene.solids.push_back({{{0, 0, 0}, {ex, h, wall}}, pastel(0.3, 0.6, 0.5, 0.9)});
    scene.solids.push_back({{{0, 0, ez - wall}, {ex, h, ez}}, pastel(0.3, 0.6, 0.5, 0.9)});

    scene.box_count = int(rng.uniform_int(1, 6));
    for (int b = 0; b < scene.box_count; ++b) {
        double sx = rng.uniform(0.5, 1.6);
        double sz = rng.uniform(0.5, 1.6);
        double sy = rng.uniform(0.6, std::min(2.2, h - 0.3));
        double px = rng.uniform(wall + 0.1, ex - wall - 0.1 - sx);
        double pz = rng.uniform(wall + 0.1, ez - wall - 0.1 - sz);
        scene.solids.push_back(
            {{{px, wall, pz}, {px + sx, wall + sy, pz + sz}}, pastel(0.55, 0.95, 0.45, 0.95)});
    }

    scene.occupancy = scene.layout.make_global_grid(1, 2);
    scene.color = scene.layout.make_global_grid(3, 2);
    DenseGrid id_grid = scene.layout.make_global_grid(1, 2);
    rasterize_solids(scene.solids, scene.occupancy, scene.color, &id_grid);

    SparseGrid appearance = colored_appearance(scene.occupancy, scene.color);
    scene.solid_ids = sparsify(scene.occupancy);
    scene.solid_ids.data.clear();
    for (const auto& c : scene.solid_ids.coords)
        scene.solid_ids.data.push_back(id_grid.at(c[0], c[1], c[2])[0]);
    scene.mesh = decode_to_mesh(scene.occupancy, &appearance);
    TriangleGridIndex index(scene.mesh);

    CameraIntrinsics K{170.0, 170.0, 128.0, 96.0, 256, 192};
    int n_cams = int(rng.uniform_int(8, 16));
    for (int c = 0; c < n_cams; ++c) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            // positions pulled toward the nearest corner so the frustum spans
            // most of the room
            double x = rng.uniform(0.4, ex - 0.4);
            double z = rng.uniform(0.4, ez - 0.4);
            double corner_x = x < 0.5 * ex ? 0.4 : ex - 0.4;
            double corner_z = z < 0.5 * ez ? 0.4 : ez - 0.4;
            Vec3 pos{corner_x + (x - corner_x) * 0.55, rng.uniform(1.0, h - 0.3),
                     corner_z + (z - corner_z) * 0.55};
            Vec3 target{rng.uniform(0.25 * ex, 0.75 * ex), rng.uniform(0.2, 0.6 * h),
                        rng.uniform(0.25 * ez, 0.75 * ez)};
            if ((target - pos).norm() < 1.0) continue;
            CameraView view;
            view.intrinsics = K;
            view.pose = look_at(pos, target);
            RenderedView render = detail::render_mesh(
                scene.mesh, view, K.width, K.height, 1,
                [&](const Vec3& o, const Vec3& d) { return index.trace(o, d); });
            if (visible_fraction(scene.occupancy, &scene.solid_ids, view, render) < 0.10)
                continue;
            view.image = render_rgb(view, render, appearance);
            scene.cameras.push_back(std::move(view));
            scene.renders.push_back(std::move(render));
            placed = true;
        }
        if (!placed)
            throw ConstraintError("gen_scene: could not place a camera with 10% visibility");
    }
    return scene;
}

// Handcrafted per-patch image descriptor: mean rgb (3), rgb standard
// deviation (3), mean backward-difference gradients per channel, horizontal
// then vertical (6), normalized patch center (2). D = 14, stride = patch.
// Images are padded by edge replication to a patch multiple; the depth map is
// accepted for interface parity and ignored.
inline FeatureMap toy_descriptor(const DenseGrid& image, const RenderedView* depth = nullptr,
                                 int patch = 8) {
    (void)depth;
    if (image.channels != 3 || image.dims[2] != 1)
        throw FormatError("toy_descriptor: expected an rgb image grid (H, W, 1)");
    if (patch < 1) throw UsageError("toy_descriptor: patch must be >= 1");
    const int H = image.dims[0], W = image.dims[1];
    FeatureMap fm;
    fm.height = (H + patch - 1) / patch;
    fm.width = (W + patch - 1) / patch;
    fm.stride = patch;
    fm.channels = 14;
    fm.data.assign(size_t(fm.height) * fm.width * 14, 0.0f);

    auto pix = [&](int r, int c) {
        return image.at(std::clamp(r, 0, H - 1), std::clamp(c, 0, W - 1), 0);
    };
    for (int pr = 0; pr < fm.height; ++pr)
        for (int pc = 0; pc < fm.width; ++pc) {
            double mean[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
            double gx[3] = {0, 0, 0}, gy[3] = {0, 0, 0};
            for (int dr = 0; dr < patch; ++dr)
                for (int dc = 0; dc < patch; ++dc) {
                    int r = pr * patch + dr, c = pc * patch + dc;
                    const float* p = pix(r, c);
                    const float* px = pix(r, c - 1);
                    const float* py = pix(r - 1, c);
                    for (int ch = 0; ch < 3; ++ch) {
                        mean[ch] += p[ch];
                        sq[ch] += double(p[ch]) * p[ch];
                        gx[ch] += double(p[ch]) - px[ch];
                        gy[ch] += double(p[ch]) - py[ch];
                    }
                }
            double n = double(patch) * patch;
            float* f = fm.at(pr, pc);
            for (int ch = 0; ch < 3; ++ch) {
                double mu = mean[ch] / n;
                f[ch] = float(mu);
                f[3 + ch] = float(std::sqrt(std::max(0.0, sq[ch] / n - mu * mu)));
                f[6 + ch] = float(gx[ch] / n);
                f[9 + ch] = float(gy[ch] / n);
            }
            f[12] = float(std::min(1.0, (pc + 0.5) * patch / W));
            f[13] = float(std::min(1.0, (pr + 0.5) * patch / H));
        }
    return fm;
}

}  // namespace chunkgen

#endif
