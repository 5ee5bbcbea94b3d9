#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "chunkgen/toyscene.hpp"

using namespace chunkgen;

namespace {

CameraView simple_camera(const Vec3& pos, const Vec3& target) {
    CameraView view;
    view.intrinsics = {60.0, 60.0, 32.0, 32.0, 64, 64};
    view.pose = look_at(pos, target);
    return view;
}

}  // namespace

TEST_CASE("look_at orients the camera toward the target", "[toyscene]") {
    CameraView view = simple_camera({1, 2, 3}, {4, 2, 3});
    view.pose.validate();

    Projection center = project(view, {4, 2, 3});
    REQUIRE(center.valid);
    REQUIRE(center.u == Catch::Approx(32.0).margin(1e-9));
    REQUIRE(center.v == Catch::Approx(32.0).margin(1e-9));
    REQUIRE(center.depth == Catch::Approx(3.0).margin(1e-12));

    Projection below = project(view, {4, 1.5, 3});
    REQUIRE(below.valid);
    REQUIRE(below.v > 32.0);
    Projection above = project(view, {4, 2.5, 3});
    REQUIRE(above.valid);
    REQUIRE(above.v < 32.0);

    CameraView down = simple_camera({0, 5, 0}, {0, 1, 0});
    down.pose.validate();
    REQUIRE(project(down, {0, 1, 0}).depth == Catch::Approx(4.0).margin(1e-12));

    REQUIRE_THROWS_AS(look_at({1, 1, 1}, {1, 1, 1}), UsageError);
}

TEST_CASE("rasterization paints the last containing solid", "[toyscene]") {
    std::vector<ColoredBox> solids;
    solids.push_back({{{0, 0, 0}, {2, 1, 1}}, {1, 0, 0}});
    solids.push_back({{{1, 0, 0}, {2, 1, 1}}, {0, 1, 0}});

    DenseGrid occ = DenseGrid::make({0, 0, 0}, 1.0, {2, 1, 1}, 1);
    DenseGrid col = DenseGrid::make({0, 0, 0}, 1.0, {2, 1, 1}, 3);
    rasterize_solids(solids, occ, col);

    REQUIRE(occ.at(0, 0, 0)[0] == 1.0f);
    REQUIRE(occ.at(1, 0, 0)[0] == 1.0f);
    REQUIRE(col.at(0, 0, 0)[0] == 1.0f);
    REQUIRE(col.at(0, 0, 0)[1] == 0.0f);
    REQUIRE(col.at(1, 0, 0)[0] == 0.0f);
    REQUIRE(col.at(1, 0, 0)[1] == 1.0f);
}

TEST_CASE("visible_fraction counts only unoccluded voxels", "[toyscene]") {
    std::vector<ColoredBox> solids;
    solids.push_back({{{-0.5, -0.5, 1.5}, {0.5, 0.5, 2.5}}, {1, 1, 1}});

    DenseGrid occ = DenseGrid::make({-0.5, -0.5, 1.5}, 1.0, {1, 1, 3}, 1);
    DenseGrid col = DenseGrid::make({-0.5, -0.5, 1.5}, 1.0, {1, 1, 3}, 3);
    rasterize_solids(solids, occ, col);
    REQUIRE(occ.at(0, 0, 0)[0] == 1.0f);
    MeshData mesh = decode_to_mesh(occ, nullptr);

    occ.at(0, 0, 2)[0] = 1.0f;  // second voxel hides behind the first

    CameraView view = simple_camera({0, 0, 0}, {0, 0, 5});
    RenderedView render = raycast_render(mesh, view, 64, 64);
    REQUIRE(visible_fraction(occ, view, render) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("scene generation is deterministic and respects its invariants", "[toyscene]") {
    ToyScene a = gen_scene(7);
    ToyScene b = gen_scene(7);

    REQUIRE(a.occupancy.data == b.occupancy.data);
    REQUIRE(a.color.data == b.color.data);
    REQUIRE(a.mesh.vertices == b.mesh.vertices);
    REQUIRE(a.cameras.size() == b.cameras.size());
    for (size_t i = 0; i < a.cameras.size(); ++i) {
        REQUIRE(a.cameras[i].pose.rotation.m == b.cameras[i].pose.rotation.m);
        REQUIRE(a.cameras[i].pose.translation.x == b.cameras[i].pose.translation.x);
        REQUIRE(a.cameras[i].image->data == b.cameras[i].image->data);
    }

    Vec3 ext = a.bounds.aabb.extent();
    REQUIRE(ext.x >= 4.0);
    REQUIRE(ext.x <= 8.0);
    REQUIRE(ext.z >= 4.0);
    REQUIRE(ext.z <= 8.0);
    REQUIRE(a.bounds.height >= 2.5);
    REQUIRE(a.bounds.height <= 4.0);

    REQUIRE(a.box_count >= 1);
    REQUIRE(a.box_count <= 6);
    REQUIRE(a.solids.size() == size_t(5 + a.box_count));
    REQUIRE(a.solids[0].box.min.x == 0.0);
    REQUIRE(a.solids[0].box.max.x == ext.x);
    REQUIRE(a.solids[0].box.max.z == ext.z);
    for (size_t s = 5; s < a.solids.size(); ++s) {
        const Aabb& box = a.solids[s].box;
        REQUIRE(box.min.x >= 0.3);
        REQUIRE(box.max.x <= ext.x - 0.3);
        REQUIRE(box.min.z >= 0.3);
        REQUIRE(box.max.z <= ext.z - 0.3);
        REQUIRE(box.min.y == 0.3);
        REQUIRE(box.max.y <= a.bounds.height);
    }

    for (int d = 0; d < 3; ++d)
        REQUIRE(a.occupancy.dims[d] == a.layout.grid_dims[d] * 2);
    for (float v : a.occupancy.data) REQUIRE((v == 0.0f || v == 1.0f));

    REQUIRE(a.cameras.size() >= 8);
    REQUIRE(a.cameras.size() <= 16);
    REQUIRE(a.renders.size() == a.cameras.size());
    for (size_t c = 0; c < a.cameras.size(); ++c) {
        REQUIRE(visible_fraction(a.occupancy, &a.solid_ids, a.cameras[c], a.renders[c]) >= 0.10);
        REQUIRE(a.cameras[c].image.has_value());
        REQUIRE(a.cameras[c].image->dims[0] == 96);
        REQUIRE(a.cameras[c].image->dims[1] == 128);
        REQUIRE(a.cameras[c].image->channels == 3);
    }

    ToyScene c = gen_scene(8);
    REQUIRE(a.occupancy.data != c.occupancy.data);
}

TEST_CASE("floor and wall voxels cover the room shell", "[toyscene]") {
    ToyScene scene = gen_scene(3);
    const DenseGrid& occ = scene.occupancy;
    Vec3 ext = scene.bounds.aabb.extent();

    int64_t wrong = 0;
    for (int i = 0; i < occ.dims[0]; ++i)
        for (int k = 0; k < occ.dims[2]; ++k) {
            Vec3 p = occ.voxel_center(i, 0, k);
            bool inside = p.x <= ext.x && p.z <= ext.z;
            if (inside != (occ.at(i, 0, k)[0] == 1.0f)) wrong++;
        }
    REQUIRE(wrong == 0);  // bottom layer is floor exactly up to the bounds

    for (int i = 0; i < occ.dims[0]; ++i)
        for (int j = 0; j < occ.dims[1]; ++j)
            for (int k = 0; k < occ.dims[2]; ++k) {
                Vec3 p = occ.voxel_center(i, j, k);
                if (p.y > scene.bounds.height) REQUIRE(occ.at(i, j, k)[0] == 0.0f);
            }
}

TEST_CASE("rgb renders use the exact voxel palette", "[toyscene]") {
    ToyScene scene = gen_scene(11);
    const DenseGrid& img = *scene.cameras[0].image;
    const RenderedView& render = scene.renders[0];
    SparseGrid appearance = colored_appearance(scene.occupancy, scene.color);

    // every rendered color must be one of the shaded voxel colors
    std::set<std::array<float, 3>> palette;
    for (size_t n = 0; n < appearance.coords.size(); ++n)
        palette.insert({appearance.data[n * 3], appearance.data[n * 3 + 1],
                        appearance.data[n * 3 + 2]});

    int64_t matched = 0, background = 0;
    for (int r = 0; r < img.dims[0]; ++r)
        for (int c = 0; c < img.dims[1]; ++c) {
            const float* p = img.at(r, c, 0);
            if (!render.valid[size_t(render.index(r, c))]) {
                REQUIRE(p[0] == 0.1f);
                background++;
                continue;
            }
            REQUIRE(palette.count({p[0], p[1], p[2]}) == 1);
            matched++;
        }
    REQUIRE(matched > img.dims[0] * img.dims[1] / 2);
    REQUIRE(matched + background == int64_t(img.dims[0]) * img.dims[1]);
}

TEST_CASE("descriptor of a constant image", "[toyscene]") {
    DenseGrid img = DenseGrid::make({0, 0, 0}, 1.0, {16, 24, 1}, 3);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 24; ++c) {
            float* p = img.at(r, c, 0);
            p[0] = 0.3f, p[1] = 0.6f, p[2] = 0.9f;
        }

    FeatureMap fm = toy_descriptor(img);
    REQUIRE(fm.height == 2);
    REQUIRE(fm.width == 3);
    REQUIRE(fm.stride == 8);
    REQUIRE(fm.channels == 14);
    for (int pr = 0; pr < 2; ++pr)
        for (int pc = 0; pc < 3; ++pc) {
            const float* f = fm.at(pr, pc);
            REQUIRE(f[0] == 0.3f);
            REQUIRE(f[1] == 0.6f);
            REQUIRE(f[2] == 0.9f);
            for (int ch = 3; ch < 12; ++ch) REQUIRE(f[ch] == 0.0f);
            REQUIRE(f[12] == Catch::Approx((pc + 0.5) * 8.0 / 24.0).margin(1e-6));
            REQUIRE(f[13] == Catch::Approx((pr + 0.5) * 8.0 / 16.0).margin(1e-6));
        }
}

TEST_CASE("descriptor gradients mark a step edge", "[toyscene]") {
    DenseGrid img = DenseGrid::make({0, 0, 0}, 1.0, {8, 32, 1}, 3);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 32; ++c) {
            float v = c < 16 ? 0.2f : 0.8f;
            float* p = img.at(r, c, 0);
            p[0] = p[1] = p[2] = v;
        }

    FeatureMap fm = toy_descriptor(img);
    REQUIRE(fm.height == 1);
    REQUIRE(fm.width == 4);
    for (int pc = 0; pc < 4; ++pc) {
        const float* f = fm.at(0, pc);
        REQUIRE(f[3] == 0.0f);  // constant inside every patch
        for (int ch = 9; ch < 12; ++ch) REQUIRE(f[ch] == 0.0f);
        if (pc == 2) {
            REQUIRE(f[6] == Catch::Approx(0.6 * 8 / 64.0).margin(1e-6));
        } else {
            REQUIRE(f[6] == 0.0f);
        }
    }
    REQUIRE(fm.at(0, 1)[0] == Catch::Approx(0.2).margin(1e-6));
    REQUIRE(fm.at(0, 2)[0] == Catch::Approx(0.8).margin(1e-6));
}

TEST_CASE("descriptor matches a per-pixel oracle", "[toyscene]") {
    Rng rng(55);
    DenseGrid img = DenseGrid::make({0, 0, 0}, 1.0, {12, 20, 1}, 3);
    for (float& v : img.data) v = float(rng.uniform());

    const int patch = 8;
    FeatureMap fm = toy_descriptor(img, nullptr, patch);
    REQUIRE(fm.height == 2);
    REQUIRE(fm.width == 3);

    auto pix = [&](int r, int c) {
        return img.at(std::clamp(r, 0, 11), std::clamp(c, 0, 19), 0);
    };
    for (int pr = 0; pr < fm.height; ++pr)
        for (int pc = 0; pc < fm.width; ++pc)
            for (int ch = 0; ch < 3; ++ch) {
                double mean = 0;
                for (int dr = 0; dr < patch; ++dr)
                    for (int dc = 0; dc < patch; ++dc)
                        mean += pix(pr * patch + dr, pc * patch + dc)[ch];
                mean /= patch * patch;

                double var = 0, gx = 0, gy = 0;
                for (int dr = 0; dr < patch; ++dr)
                    for (int dc = 0; dc < patch; ++dc) {
                        int r = pr * patch + dr, c = pc * patch + dc;
                        double v = pix(r, c)[ch];
                        var += (v - mean) * (v - mean);
                        gx += v - pix(r, c - 1)[ch];
                        gy += v - pix(r - 1, c)[ch];
                    }
                const float* f = fm.at(pr, pc);
                REQUIRE(f[ch] == Catch::Approx(mean).margin(1e-6));
                REQUIRE(f[3 + ch] ==
                        Catch::Approx(std::sqrt(var / (patch * patch))).margin(1e-6));
                REQUIRE(f[6 + ch] == Catch::Approx(gx / (patch * patch)).margin(1e-6));
                REQUIRE(f[9 + ch] == Catch::Approx(gy / (patch * patch)).margin(1e-6));
            }

    REQUIRE_THROWS_AS(toy_descriptor(img, nullptr, 0), UsageError);
    DenseGrid bad = DenseGrid::make({0, 0, 0}, 1.0, {4, 4, 1}, 1);
    REQUIRE_THROWS_AS(toy_descriptor(bad), FormatError);
}
