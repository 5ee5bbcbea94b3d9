#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "chunkgen/colmap.hpp"
#include "chunkgen/mesh_io.hpp"
#include "chunkgen/tensor_file.hpp"
#include "test_util.hpp"

using namespace chunkgen;
using testutil::TempDir;
using testutil::write_text;

TEST_CASE("tensor round-trip 2x3", "[tensor_io]") {
    TempDir tmp;
    TensorFile t;
    t.dims = {2, 3};
    t.data = {0, 1, 2, 3, 4, 5};
    write_tensor(tmp.file("a.cgf"), t);
    TensorFile r = read_tensor(tmp.file("a.cgf"));
    REQUIRE(r.dims == std::vector<uint64_t>{2, 3});
    REQUIRE(r.data == t.data);
}

TEST_CASE("tensor bad magic rejected", "[tensor_io]") {
    TempDir tmp;
    write_text(tmp.file("bad.cgf"), "XGF1garbagegarbagegarbage");
    REQUIRE_THROWS_AS(read_tensor(tmp.file("bad.cgf")), FormatError);
}

TEST_CASE("tensor of zeros", "[tensor_io]") {
    TempDir tmp;
    TensorFile t;
    t.dims = {16, 16, 16};
    t.data.assign(16 * 16 * 16, 0.0f);
    write_tensor(tmp.file("z.cgf"), t);
    TensorFile r = read_tensor(tmp.file("z.cgf"));
    REQUIRE(r.dims.size() == 3);
    REQUIRE(r.data.size() == 4096);
    for (float v : r.data) REQUIRE(v == 0.0f);
}

TEST_CASE("tensor round-trip is bit-exact on random payloads", "[tensor_io]") {
    TempDir tmp;
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        TensorFile t;
        int rank = int(rng.uniform_int(1, 4));
        for (int i = 0; i < rank; ++i) t.dims.push_back(uint64_t(rng.uniform_int(1, 8)));
        t.data.resize(t.element_count());
        for (auto& v : t.data) {
            // Random bit patterns, avoiding NaN so == comparison is usable;
            // bit-exactness is checked through memcmp anyway.
            uint32_t bits = uint32_t(rng.next_u64());
            float f;
            std::memcpy(&f, &bits, 4);
            if (std::isnan(f)) f = -0.0f;
            std::memcpy(&v, &f, 4);
        }
        std::string path = tmp.file("r" + std::to_string(trial) + ".cgf");
        write_tensor(path, t);
        TensorFile r = read_tensor(path);
        REQUIRE(r.dims == t.dims);
        REQUIRE(r.data.size() == t.data.size());
        REQUIRE(std::memcmp(r.data.data(), t.data.data(), t.data.size() * 4) == 0);
    }
}

TEST_CASE("tensor truncated payload rejected", "[tensor_io]") {
    TempDir tmp;
    TensorFile t;
    t.dims = {4, 4};
    t.data.assign(16, 1.0f);
    write_tensor(tmp.file("t.cgf"), t);
    // Chop the last 8 bytes off.
    std::ifstream in(tmp.file("t.cgf"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(tmp.file("t.cgf"), std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size() - 8));
    out.close();
    REQUIRE_THROWS_AS(read_tensor(tmp.file("t.cgf")), FormatError);
}

TEST_CASE("tensor invalid dims rejected", "[tensor_io]") {
    TensorFile t;
    t.dims = {};
    REQUIRE_THROWS_AS(t.validate(), ConstraintError);
    t.dims = {2, 0};
    REQUIRE_THROWS_AS(t.validate(), ConstraintError);
    t.dims = {2, 2};
    t.data.assign(3, 0.0f);
    REQUIRE_THROWS_AS(t.validate(), ConstraintError);
}

static void write_colmap_model(const TempDir& tmp, const std::string& images_body,
                               const std::string& cameras_body =
                                   "# cameras\n1 PINHOLE 640 480 500 500 320 240\n",
                               const std::string& points_body =
                                   "# points\n1 0.5 0.5 0.5 200 10 10 0.1 1 0\n") {
    write_text(tmp.file("cameras.txt"), cameras_body);
    write_text(tmp.file("images.txt"), images_body);
    write_text(tmp.file("points3D.txt"), points_body);
}

TEST_CASE("colmap identity pose", "[tensor_io]") {
    TempDir tmp;
    write_colmap_model(tmp, "# images\n1 1 0 0 0 0 0 0 1 frame.png\n\n");
    ColmapModel m = parse_colmap(tmp.path.string());
    REQUIRE(m.images.size() == 1);
    const RigidTransform& T = m.images[0].pose;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            REQUIRE(T.rotation(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-12));
    REQUIRE(T.translation.norm() < 1e-12);
}

TEST_CASE("colmap pinhole field mapping", "[tensor_io]") {
    TempDir tmp;
    write_colmap_model(tmp, "1 1 0 0 0 0 0 0 1 frame.png\n\n");
    ColmapModel m = parse_colmap(tmp.path.string());
    const CameraIntrinsics& K = m.cameras.at(1).intrinsics;
    REQUIRE(K.fx == 500.0);
    REQUIRE(K.fy == 500.0);
    REQUIRE(K.cx == 320.0);
    REQUIRE(K.cy == 240.0);
    REQUIRE(K.width == 640);
    REQUIRE(K.height == 480);
}

TEST_CASE("colmap simple pinhole duplicates focal", "[tensor_io]") {
    TempDir tmp;
    write_colmap_model(tmp, "1 1 0 0 0 0 0 0 1 frame.png\n\n",
                       "1 SIMPLE_PINHOLE 640 480 450 320 240\n");
    ColmapModel m = parse_colmap(tmp.path.string());
    REQUIRE(m.cameras.at(1).intrinsics.fx == 450.0);
    REQUIRE(m.cameras.at(1).intrinsics.fy == 450.0);
}

TEST_CASE("colmap camera center from inverse pose", "[tensor_io]") {
    // Camera-from-world t=(0,0,-2) with identity R puts the camera at world
    // (0,0,2): C = -R^T t.
    TempDir tmp;
    write_colmap_model(tmp, "1 1 0 0 0 0 0 -2 1 frame.png\n\n");
    ColmapModel m = parse_colmap(tmp.path.string());
    Vec3 center = m.images[0].pose.translation;
    REQUIRE(center.x == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(center.y == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(center.z == Catch::Approx(2.0));
}

TEST_CASE("colmap pose composes with stored matrix to identity", "[tensor_io]") {
    TempDir tmp;
    // 0.1-radian rotation about x, then a translation.
    double half = 0.05;
    write_colmap_model(
        tmp, strfmt("1 %.17f %.17f 0 0 0.3 -0.2 1.5 1 a.png\n\n", std::cos(half), std::sin(half)));
    ColmapModel m = parse_colmap(tmp.path.string());
    RigidTransform prod = m.images[0].pose_cam_from_world.compose(m.images[0].pose);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            REQUIRE(prod.rotation(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-6));
    REQUIRE(prod.translation.norm() < 1e-6);
}

TEST_CASE("colmap unknown model rejected", "[tensor_io]") {
    TempDir tmp;
    write_colmap_model(tmp, "1 1 0 0 0 0 0 0 1 a.png\n\n",
                       "1 OPENCV 640 480 500 500 320 240 0 0 0 0\n");
    REQUIRE_THROWS_AS(parse_colmap(tmp.path.string()), FormatError);
}

TEST_CASE("colmap dangling camera id rejected", "[tensor_io]") {
    TempDir tmp;
    write_colmap_model(tmp, "1 1 0 0 0 0 0 0 9 a.png\n\n");
    REQUIRE_THROWS_AS(parse_colmap(tmp.path.string()), FormatError);
}

TEST_CASE("colmap non-unit quaternion rejected", "[tensor_io]") {
    TempDir tmp;
    write_colmap_model(tmp, "1 1.01 0 0 0 0 0 0 1 a.png\n\n");
    REQUIRE_THROWS_AS(parse_colmap(tmp.path.string()), FormatError);
}

TEST_CASE("colmap missing file rejected", "[tensor_io]") {
    TempDir tmp;
    REQUIRE_THROWS_AS(parse_colmap(tmp.path.string()), FormatError);
}

static MeshData unit_cube_mesh() {
    MeshData m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                  {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
    m.triangles = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                   {2, 3, 7}, {2, 7, 6}, {1, 2, 6}, {1, 6, 5}, {3, 0, 4}, {3, 4, 7}};
    return m;
}

TEST_CASE("mesh ply round-trip of unit cube", "[tensor_io]") {
    TempDir tmp;
    MeshData cube = unit_cube_mesh();
    write_mesh(tmp.file("cube.ply"), cube, MeshFormat::Ply);
    MeshData r = read_mesh(tmp.file("cube.ply"));
    REQUIRE(r.vertices == cube.vertices);
    REQUIRE(r.triangles == cube.triangles);
    REQUIRE_FALSE(r.has_colors());
}

TEST_CASE("mesh ply round-trip preserves float colors exactly", "[tensor_io]") {
    TempDir tmp;
    MeshData cube = unit_cube_mesh();
    Rng rng(3);
    for (size_t i = 0; i < cube.vertices.size(); ++i)
        cube.colors.push_back({float(rng.uniform()), float(rng.uniform()), float(rng.uniform())});
    write_mesh(tmp.file("c.ply"), cube, MeshFormat::Ply);
    MeshData r = read_mesh(tmp.file("c.ply"));
    REQUIRE(r.colors == cube.colors);
    REQUIRE(r.vertices == cube.vertices);
}

TEST_CASE("empty mesh writes and reads", "[tensor_io]") {
    TempDir tmp;
    MeshData empty;
    write_mesh(tmp.file("e.ply"), empty, MeshFormat::Ply);
    MeshData r = read_mesh(tmp.file("e.ply"));
    REQUIRE(r.vertices.empty());
    REQUIRE(r.triangles.empty());
}

TEST_CASE("obj drops colors but keeps geometry", "[tensor_io]") {
    TempDir tmp;
    MeshData cube = unit_cube_mesh();
    for (size_t i = 0; i < cube.vertices.size(); ++i) cube.colors.push_back({1, 0, 0});
    write_mesh(tmp.file("c.obj"), cube, MeshFormat::Obj);
    MeshData r = read_mesh(tmp.file("c.obj"));
    REQUIRE(r.vertices == cube.vertices);
    REQUIRE(r.triangles == cube.triangles);
    REQUIRE_FALSE(r.has_colors());
}

TEST_CASE("malformed ply header rejected", "[tensor_io]") {
    TempDir tmp;
    write_text(tmp.file("bad.ply"), "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n");
    REQUIRE_THROWS_AS(read_mesh(tmp.file("bad.ply")), FormatError);
    write_text(tmp.file("junk.ply"), "ply\nwat\n");
    REQUIRE_THROWS_AS(read_mesh(tmp.file("junk.ply")), FormatError);
}

TEST_CASE("mesh validation rejects bad indices", "[tensor_io]") {
    MeshData m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    m.triangles = {{0, 1, 3}};
    REQUIRE_THROWS_AS(m.validate(), ConstraintError);
    m.triangles = {{0, 1, 1}};
    REQUIRE_THROWS_AS(m.validate(), ConstraintError);
    m.triangles = {{0, 1, 2}};
    m.colors = {{1, 1, 1}};
    REQUIRE_THROWS_AS(m.validate(), ConstraintError);
}
