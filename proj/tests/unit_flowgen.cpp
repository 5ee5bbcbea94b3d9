#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <sstream>

#include "chunkgen/flowgen.hpp"

using namespace chunkgen;

namespace {

// Velocity depends only on world position, time and channel, so the result
// cannot depend on how the volume is carved into regions.
struct FieldOracle : DenoiserInterface {
    double cond_gain = 0.0;
    void predict_velocity(const LatentCrop& z, double t, const ConditionGrid& cond,
                          bool conditioned, std::vector<double>& v) override {
        v.assign(z.data.size(), 0.0);
        for (int i = 0; i < z.dims[0]; ++i)
            for (int j = 0; j < z.dims[1]; ++j)
                for (int k = 0; k < z.dims[2]; ++k) {
                    Vec3 p = z.voxel_center(i, j, k);
                    int64_t vox = z.voxel_index(i, j, k);
                    for (int c = 0; c < z.channels; ++c) {
                        double val = std::sin(1.3 * p.x + 2.1 * p.y) *
                                         std::cos(0.7 * p.z + c) +
                                     0.1 * t;
                        if (conditioned && cond.grid.channels > 0)
                            val += cond_gain *
                                   double(cond.grid.data[size_t(vox) *
                                                         size_t(cond.grid.channels)]);
                        v[size_t(vox) * size_t(z.channels) + size_t(c)] = val;
                    }
                }
    }
};

// Constant straight-path velocity toward a fixed target from known noise.
struct StraightOracle : DenoiserInterface {
    std::vector<double> noise, target;
    void predict_velocity(const LatentCrop& z, double, const ConditionGrid&, bool,
                          std::vector<double>& v) override {
        v.resize(z.data.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = target[i] - noise[i];
    }
};

struct BranchOracle : DenoiserInterface {
    double cond_value = 2.0, uncond_value = -1.0;
    mutable int calls = 0;
    void predict_velocity(const LatentCrop& z, double, const ConditionGrid&, bool conditioned,
                          std::vector<double>& v) override {
        calls++;
        v.assign(z.data.size(), conditioned ? cond_value : uncond_value);
    }
};

struct SparseFieldOracle : SparseDenoiserInterface {
    void predict_velocity(const SparseLatentCrop& z, double t, const SparseConditionGrid&, bool,
                          std::vector<double>& v) override {
        v.assign(z.data.size(), 0.0);
        for (size_t n = 0; n < z.coords.size(); ++n) {
            const auto& c = z.coords[n];
            Vec3 p{z.origin.x + (c[0] + 0.5) * z.voxel_size,
                   z.origin.y + (c[1] + 0.5) * z.voxel_size,
                   z.origin.z + (c[2] + 0.5) * z.voxel_size};
            for (int ch = 0; ch < z.channels; ++ch)
                v[n * size_t(z.channels) + size_t(ch)] =
                    std::sin(0.9 * p.x - 1.1 * p.y + 0.5 * p.z + ch) - 0.2 * t;
        }
    }
};

}  // namespace

TEST_CASE("uniform schedule spans 0 to 1", "[flowgen]") {
    FlowSchedule s = FlowSchedule::uniform_steps();
    REQUIRE(s.steps() == 12);
    REQUIRE(s.times.front() == 0.0);
    REQUIRE(s.times.back() == 1.0);
    for (int i = 0; i <= 12; ++i) REQUIRE(s.times[size_t(i)] == Catch::Approx(i / 12.0));
    s.validate();
    REQUIRE_THROWS_AS(FlowSchedule::uniform_steps(0), UsageError);
    FlowSchedule bad = s;
    bad.times[3] = bad.times[2];
    REQUIRE_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("flow_step basics", "[flowgen]") {
    LatentCrop z = LatentCrop::make({0, 0, 0}, 0.1, {2, 2, 1}, 2);
    for (size_t i = 0; i < z.data.size(); ++i) z.data[i] = double(i) * 0.25;

    std::vector<double> zero(z.data.size(), 0.0);
    LatentCrop same = flow_step(z, zero, 0.0, 0.5);
    REQUIRE(same.data == z.data);

    std::vector<double> v(z.data.size(), 0.0);
    for (size_t i = 0; i < v.size(); ++i) v[i] = 1.0 + double(i);
    LatentCrop stepped = flow_step(z, v, 0.0, 1.0);
    for (size_t i = 0; i < v.size(); ++i) REQUIRE(stepped.data[i] == z.data[i] + v[i]);

    std::vector<double> short_v(3, 0.0);
    REQUIRE_THROWS_AS(flow_step(z, short_v, 0.0, 0.5), ConstraintError);
    REQUIRE_THROWS_AS(flow_step(z, zero, 0.5, 0.5), UsageError);
}

TEST_CASE("constant oracle velocity reaches the target after 12 steps", "[flowgen]") {
    std::array<int, 3> dims{6, 5, 4};
    const int C = 2;
    const int64_t n = int64_t(dims[0]) * dims[1] * dims[2] * C;
    StraightOracle oracle;
    oracle.noise = sample_noise(n, 99);
    oracle.target.resize(size_t(n));
    Rng rng(3);
    for (auto& t : oracle.target) t = rng.uniform(-2, 2);

    SampleOptions opt;
    opt.seed = 99;
    std::vector<IndexBox> whole = {{{0, 0, 0}, dims}};
    DenseGrid out = sample_regions({0, 0, 0}, 0.25, dims, C, whole, oracle, nullptr, opt);
    for (int64_t i = 0; i < n; ++i)
        REQUIRE(double(out.data[size_t(i)]) ==
                Catch::Approx(oracle.target[size_t(i)]).margin(1e-6));
}

TEST_CASE("guided velocity combines branches linearly", "[flowgen]") {
    LatentCrop z = LatentCrop::make({0, 0, 0}, 0.1, {2, 1, 1}, 1);
    ConditionGrid cond;
    cond.grid = DenseGrid::make({0, 0, 0}, 0.1, {2, 1, 1}, 1);
    cond.coverage = {1, 1};
    BranchOracle oracle;
    std::vector<double> v, scratch;

    GuidanceConfig g{2.5, true};
    guided_velocity(oracle, z, 0.3, cond, g, v, scratch);
    REQUIRE(oracle.calls == 2);
    for (double x : v) REQUIRE(x == Catch::Approx(-1.0 + 2.5 * (2.0 - -1.0)));

    oracle.calls = 0;
    g.scale = 1.0;
    guided_velocity(oracle, z, 0.3, cond, g, v, scratch);
    REQUIRE(oracle.calls == 1);
    for (double x : v) REQUIRE(x == 2.0);

    oracle.calls = 0;
    g.scale = 0.0;
    guided_velocity(oracle, z, 0.3, cond, g, v, scratch);
    for (double x : v) REQUIRE(x == Catch::Approx(-1.0));

    oracle.calls = 0;
    g.enabled = false;
    g.scale = 7.0;
    guided_velocity(oracle, z, 0.3, cond, g, v, scratch);
    REQUIRE(oracle.calls == 1);
    for (double x : v) REQUIRE(x == 2.0);

    g.enabled = true;
    g.scale = -1.0;
    REQUIRE_THROWS_AS(guided_velocity(oracle, z, 0.3, cond, g, v, scratch), UsageError);
}

TEST_CASE("merge averages overlapping constant predictions", "[flowgen]") {
    std::array<int, 3> dims{6, 4, 2};
    std::vector<IndexBox> regions = {{{0, 0, 0}, {4, 4, 2}}, {{2, 0, 0}, {6, 4, 2}}};
    std::vector<std::vector<double>> preds = {std::vector<double>(32, 3.0),
                                              std::vector<double>(32, 5.0)};
    std::vector<double> merged;
    merge_predictions(dims, 1, regions, preds, 0, merged);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 2; ++k) {
                double got = merged[size_t((int64_t(i) * 4 + j) * 2 + k)];
                if (i < 2) REQUIRE(got == 3.0);
                else if (i >= 4) REQUIRE(got == 5.0);
                else REQUIRE(got == 4.0);
            }
}

TEST_CASE("merge keeps agreeing predictions exactly, including 3-way overlap", "[flowgen]") {
    std::array<int, 3> dims{5, 3, 2};
    std::vector<IndexBox> regions = {
        {{0, 0, 0}, {3, 3, 2}}, {{1, 0, 0}, {4, 3, 2}}, {{2, 0, 0}, {5, 3, 2}}};
    // One shared field; every region's prediction is its crop of the field.
    std::vector<double> field(size_t(5 * 3 * 2), 0.0);
    Rng rng(17);
    for (auto& f : field) f = rng.uniform(-3, 3);
    std::vector<std::vector<double>> preds;
    for (const auto& r : regions) {
        std::vector<double> p;
        for (int i = r.lo[0]; i < r.hi[0]; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 2; ++k)
                    p.push_back(field[size_t((int64_t(i) * 3 + j) * 2 + k)]);
        preds.push_back(std::move(p));
    }
    std::vector<double> merged;
    merge_predictions(dims, 1, regions, preds, 0, merged);
    // Voxel x=2 is covered by all three regions; equality must still be exact.
    REQUIRE(merged == field);
}

TEST_CASE("merge is linear in the predictions", "[flowgen]") {
    std::array<int, 3> dims{6, 4, 3};
    std::vector<IndexBox> regions = {{{0, 0, 0}, {4, 4, 3}}, {{2, 0, 0}, {6, 4, 3}}};
    Rng rng(23);
    std::vector<std::vector<double>> preds, scaled;
    for (const auto& r : regions) {
        std::vector<double> p(size_t(r.volume()) * 2);
        for (auto& x : p) x = rng.uniform(-1, 1);
        scaled.push_back(p);
        for (auto& x : scaled.back()) x *= -2.5;
        preds.push_back(std::move(p));
    }
    std::vector<double> merged, merged_scaled;
    merge_predictions(dims, 2, regions, preds, 0, merged);
    merge_predictions(dims, 2, regions, scaled, 0, merged_scaled);
    for (size_t i = 0; i < merged.size(); ++i)
        REQUIRE(merged_scaled[i] == Catch::Approx(-2.5 * merged[i]).margin(1e-12));
}

TEST_CASE("boundary-sensitive merge trusts interior predictions", "[flowgen]") {
    std::array<int, 3> dims{6, 4, 2};
    std::vector<IndexBox> regions = {{{0, 0, 0}, {4, 4, 2}}, {{2, 0, 0}, {6, 4, 2}}};
    std::vector<std::vector<double>> preds(2);
    // Region A reports a wildly biased value on its boundary rows.
    preds[0].assign(32, 1.0);
    preds[1].assign(32, 9.0);
    IndexBox a = regions[0];
    for (int i = a.lo[0]; i < a.hi[0]; ++i)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 2; ++k) {
                int li = i - a.lo[0];
                if (li == 0 || li == 3 || j == 0 || j == 3)
                    preds[0][size_t((int64_t(li) * 4 + j) * 2 + k)] = 1000.0;
            }
    std::vector<double> merged;
    merge_predictions(dims, 1, regions, preds, 1, merged);

    auto at = [&](int i, int j, int k) { return merged[size_t((int64_t(i) * 4 + j) * 2 + k)]; };
    // (3,1,*): A's boundary row, B's interior -> exactly B.
    REQUIRE(at(3, 1, 0) == 9.0);
    // (1,1,*): A interior only -> A.
    REQUIRE(at(1, 1, 0) == 1.0);
    // (0,1,*): covered only by A's boundary -> falls back to A's own estimate.
    REQUIRE(at(0, 1, 0) == 1000.0);
    // (2,0,*): boundary of both -> fallback is the plain two-chunk mean.
    REQUIRE(at(2, 0, 0) == Catch::Approx(0.5 * (1000.0 + 9.0)));
    // (2,1,*): A's interior but B's x-low boundary -> exactly A.
    REQUIRE(at(2, 1, 0) == 1.0);
}

TEST_CASE("boundary width zero reduces to the mask-weighted mean", "[flowgen]") {
    std::array<int, 3> dims{6, 4, 2};
    std::vector<IndexBox> regions = {{{0, 0, 0}, {4, 4, 2}}, {{2, 0, 0}, {6, 4, 2}},
                                     {{1, 0, 0}, {5, 4, 2}}};
    Rng rng(5);
    std::vector<std::vector<double>> preds;
    for (const auto& r : regions) {
        std::vector<double> p(size_t(r.volume()));
        for (auto& x : p) x = rng.uniform(-4, 4);
        preds.push_back(std::move(p));
    }
    std::vector<double> merged;
    merge_predictions(dims, 1, regions, preds, 0, merged);
    for (int i = 0; i < dims[0]; ++i)
        for (int j = 0; j < dims[1]; ++j)
            for (int k = 0; k < dims[2]; ++k) {
                double sum = 0;
                int cnt = 0;
                for (size_t r = 0; r < regions.size(); ++r) {
                    const IndexBox& box = regions[r];
                    if (!box.contains(i, j, k)) continue;
                    int64_t local = ((int64_t(i - box.lo[0]) * (box.hi[1] - box.lo[1]) +
                                      (j - box.lo[1])) *
                                         (box.hi[2] - box.lo[2]) +
                                     (k - box.lo[2]));
                    sum += preds[r][size_t(local)];
                    cnt++;
                }
                REQUIRE(merged[size_t((int64_t(i) * dims[1] + j) * dims[2] + k)] ==
                        Catch::Approx(sum / cnt).margin(1e-12));
            }
}

TEST_CASE("merge rejects bad shapes and hopeless boundary widths", "[flowgen]") {
    std::array<int, 3> dims{4, 4, 2};
    std::vector<IndexBox> regions = {{{0, 0, 0}, {4, 4, 2}}};
    std::vector<std::vector<double>> preds = {std::vector<double>(32, 0.0)};
    std::vector<double> merged;
    REQUIRE_THROWS_AS(merge_predictions(dims, 1, regions, preds, 2, merged), UsageError);
    preds[0].resize(30);
    REQUIRE_THROWS_AS(merge_predictions(dims, 1, regions, preds, 0, merged), ConstraintError);
    preds[0].resize(32);
    regions[0].hi[0] = 3;  // leaves x=3 uncovered
    REQUIRE_THROWS_AS(merge_predictions(dims, 1, regions, preds, 0, merged), ConstraintError);
}

TEST_CASE("single region sampling equals a plain flow loop bitwise", "[flowgen]") {
    std::array<int, 3> dims{4, 3, 3};
    const int C = 2;
    FieldOracle oracle;
    SampleOptions opt;
    opt.seed = 1234;
    opt.schedule = FlowSchedule::uniform_steps(6);
    std::vector<IndexBox> whole = {{{0, 0, 0}, dims}};
    Vec3 origin{0.3, -0.2, 0.7};
    DenseGrid out = sample_regions(origin, 0.2, dims, C, whole, oracle, nullptr, opt);

    LatentCrop z = LatentCrop::make(origin, 0.2, dims, C);
    z.data = sample_noise(z.voxel_count() * C, opt.seed);
    ConditionGrid none;
    none.grid = DenseGrid::make(origin, 0.2, dims, 0);
    std::vector<double> v;
    for (int s = 0; s < 6; ++s) {
        double t = opt.schedule.times[size_t(s)];
        oracle.predict_velocity(z, t, none, false, v);
        flow_step_inplace(z.data.data(), v.data(), int64_t(z.data.size()),
                          opt.schedule.times[size_t(s) + 1] - t);
    }
    for (size_t i = 0; i < z.data.size(); ++i) {
        float expect = float(z.data[i]);
        REQUIRE(std::memcmp(&out.data[i], &expect, 4) == 0);
    }
}

TEST_CASE("chunked sampling matches whole-volume sampling for a local oracle", "[flowgen]") {
    std::array<int, 3> dims{24, 16, 8};
    const int C = 2;
    FieldOracle oracle;
    SampleOptions opt;
    opt.seed = 777;
    Vec3 origin{-1.0, 0.5, 0.0};

    std::vector<IndexBox> whole = {{{0, 0, 0}, dims}};
    std::vector<IndexBox> split = {{{0, 0, 0}, {16, 16, 8}}, {{8, 0, 0}, {24, 16, 8}}};
    DenseGrid a = sample_regions(origin, 0.11, dims, C, whole, oracle, nullptr, opt);
    DenseGrid b = sample_regions(origin, 0.11, dims, C, split, oracle, nullptr, opt);
    for (size_t i = 0; i < a.data.size(); ++i)
        REQUIRE(double(b.data[i]) == Catch::Approx(double(a.data[i])).margin(1e-6));

    SampleOptions bopt = opt;
    bopt.boundary_width = 1;
    DenseGrid c = sample_regions(origin, 0.11, dims, C, split, oracle, nullptr, bopt);
    for (size_t i = 0; i < a.data.size(); ++i)
        REQUIRE(double(c.data[i]) == Catch::Approx(double(a.data[i])).margin(1e-6));
}

TEST_CASE("sampling is deterministic in the seed and thread count", "[flowgen]") {
    std::array<int, 3> dims{12, 8, 6};
    FieldOracle oracle;
    SampleOptions opt;
    opt.seed = 42;
    std::vector<IndexBox> split = {{{0, 0, 0}, {8, 8, 6}}, {{4, 0, 0}, {12, 8, 6}}};
    DenseGrid a = sample_regions({0, 0, 0}, 0.1, dims, 2, split, oracle, nullptr, opt);
    DenseGrid b = sample_regions({0, 0, 0}, 0.1, dims, 2, split, oracle, nullptr, opt);
    REQUIRE(a.data == b.data);

    SampleOptions threaded = opt;
    threaded.threads = 4;
    DenseGrid c = sample_regions({0, 0, 0}, 0.1, dims, 2, split, oracle, nullptr, threaded);
    REQUIRE(a.data == c.data);

    SampleOptions other = opt;
    other.seed = 43;
    DenseGrid d = sample_regions({0, 0, 0}, 0.1, dims, 2, split, oracle, nullptr, other);
    REQUIRE(a.data != d.data);
}

TEST_CASE("merging velocities is an equivalent dial for a single region", "[flowgen]") {
    std::array<int, 3> dims{6, 6, 4};
    FieldOracle oracle;
    SampleOptions opt;
    opt.seed = 8;
    std::vector<IndexBox> whole = {{{0, 0, 0}, dims}};
    DenseGrid a = sample_regions({0, 0, 0}, 0.1, dims, 1, whole, oracle, nullptr, opt);
    SampleOptions vel = opt;
    vel.merge_velocities = true;
    DenseGrid b = sample_regions({0, 0, 0}, 0.1, dims, 1, whole, oracle, nullptr, vel);
    REQUIRE(a.data == b.data);
}

TEST_CASE("sampler validates coverage and condition resolution", "[flowgen]") {
    std::array<int, 3> dims{8, 8, 4};
    FieldOracle oracle;
    SampleOptions opt;
    std::vector<IndexBox> gap = {{{0, 0, 0}, {4, 8, 4}}, {{5, 0, 0}, {8, 8, 4}}};
    REQUIRE_THROWS_AS(sample_regions({0, 0, 0}, 0.1, dims, 1, gap, oracle, nullptr, opt),
                      ConstraintError);

    std::vector<IndexBox> whole = {{{0, 0, 0}, dims}};
    ConditionGrid cond;
    cond.grid = DenseGrid::make({0, 0, 0}, 0.1, {8, 8, 3}, 2);
    cond.coverage.assign(size_t(cond.grid.voxel_count()), 1);
    REQUIRE_THROWS_AS(sample_regions({0, 0, 0}, 0.1, dims, 1, whole, oracle, &cond, opt),
                      ConstraintError);

    REQUIRE_THROWS_AS(
        sample_regions({0, 0, 0}, 0.1, dims, 1, std::vector<IndexBox>{}, oracle, nullptr, opt),
        UsageError);
}

TEST_CASE("condition crops feed the denoiser and CFG amplifies them", "[flowgen]") {
    std::array<int, 3> dims{8, 6, 4};
    FieldOracle oracle;
    oracle.cond_gain = 1.0;
    ConditionGrid cond;
    cond.grid = DenseGrid::make({0, 0, 0}, 0.1, dims, 1);
    Rng rng(3);
    for (auto& f : cond.grid.data) f = float(rng.uniform(-1, 1));
    cond.coverage.assign(size_t(cond.grid.voxel_count()), 1);

    SampleOptions opt;
    opt.seed = 5;
    opt.schedule = FlowSchedule::uniform_steps(4);
    std::vector<IndexBox> whole = {{{0, 0, 0}, dims}};
    DenseGrid plain = sample_regions({0, 0, 0}, 0.1, dims, 1, whole, oracle, nullptr, opt);
    DenseGrid conditioned = sample_regions({0, 0, 0}, 0.1, dims, 1, whole, oracle, &cond, opt);
    // Guidance disabled -> single conditional branch: shift = sum_dt * cond = cond.
    for (size_t i = 0; i < conditioned.data.size(); ++i)
        REQUIRE(double(conditioned.data[i]) ==
                Catch::Approx(double(plain.data[i]) + double(cond.grid.data[i])).margin(1e-5));

    SampleOptions guided = opt;
    guided.guidance = {3.0, true};
    DenseGrid amplified = sample_regions({0, 0, 0}, 0.1, dims, 1, whole, oracle, &cond, guided);
    for (size_t i = 0; i < amplified.data.size(); ++i)
        REQUIRE(double(amplified.data[i]) ==
                Catch::Approx(double(plain.data[i]) + 3.0 * double(cond.grid.data[i]))
                    .margin(1e-5));
}

TEST_CASE("sparse sampling is independent of the region split", "[flowgen]") {
    SparseGrid structure;
    structure.origin = {0.2, 0.1, 0.0};
    structure.voxel_size = 0.05;
    structure.dims = {24, 8, 8};
    structure.channels = 2;
    for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 8; ++j)
            for (int k = 0; k < 8; ++k)
                if ((i * 7 + j * 3 + k) % 4 == 0) structure.coords.push_back({i, j, k});
    structure.data.assign(structure.coords.size() * 2, 0.0f);

    SparseFieldOracle oracle;
    SampleOptions opt;
    opt.seed = 31;
    std::vector<IndexBox> whole = {{{0, 0, 0}, structure.dims}};
    std::vector<IndexBox> split = {{{0, 0, 0}, {16, 8, 8}}, {{8, 0, 0}, {24, 8, 8}}};
    SparseGrid a = sample_regions_sparse(structure, 2, whole, oracle, nullptr, opt);
    SparseGrid b = sample_regions_sparse(structure, 2, split, oracle, nullptr, opt);
    REQUIRE(a.coords == structure.coords);
    REQUIRE(a.data.size() == structure.coords.size() * 2);
    for (size_t i = 0; i < a.data.size(); ++i)
        REQUIRE(double(b.data[i]) == Catch::Approx(double(a.data[i])).margin(1e-6));

    SparseGrid c = sample_regions_sparse(structure, 2, split, oracle, nullptr, opt);
    REQUIRE(b.data == c.data);
}

TEST_CASE("occupancy stage thresholds the decoded logit", "[flowgen]") {
    SceneBounds bounds;
    bounds.aabb = {{0, 0, 0}, {2.0, 2.0, 3.0}};
    bounds.up_axis = Axis::Z;
    bounds.height = 3.0;
    ChunkLayout layout = tile(bounds, compute_chunk_edge(bounds), 0.25, 8);

    // Oracle drives channel 0 toward +4 inside a ball and -4 outside.
    struct BallOracle : DenoiserInterface {
        Vec3 center{1.0, 1.0, 1.2};
        void predict_velocity(const LatentCrop& z, double t, const ConditionGrid&, bool,
                              std::vector<double>& v) override {
            v.assign(z.data.size(), 0.0);
            for (int i = 0; i < z.dims[0]; ++i)
                for (int j = 0; j < z.dims[1]; ++j)
                    for (int k = 0; k < z.dims[2]; ++k) {
                        Vec3 p = z.voxel_center(i, j, k);
                        double target = (p - center).norm() < 0.8 ? 4.0 : -4.0;
                        const double* cur = z.at(i, j, k);
                        double* out = &v[size_t(z.voxel_index(i, j, k)) * size_t(z.channels)];
                        for (int c = 0; c < z.channels; ++c)
                            out[c] = (target - cur[c]) / (1.0 - t);
                    }
        }
    } oracle;

    SampleOptions opt;
    opt.seed = 11;
    OccupancyResult res = run_stage_occupancy(layout, oracle, nullptr, 2, opt);
    REQUIRE(res.occupied > 0);
    DenseGrid spec = layout.make_global_grid(1);
    for (int i = 0; i < spec.dims[0]; ++i)
        for (int j = 0; j < spec.dims[1]; ++j)
            for (int k = 0; k < spec.dims[2]; ++k) {
                bool inside = (spec.voxel_center(i, j, k) - oracle.center).norm() < 0.8;
                REQUIRE(res.occupancy.at(i, j, k)[0] == (inside ? 1.0f : 0.0f));
            }
}

TEST_CASE("sub-threshold constant field decodes to an empty grid", "[flowgen]") {
    SceneBounds bounds;
    bounds.aabb = {{0, 0, 0}, {1.5, 1.5, 2.5}};
    bounds.up_axis = Axis::Z;
    bounds.height = 2.5;
    ChunkLayout layout = tile(bounds, compute_chunk_edge(bounds), 0.25, 8);

    // Drive the logit to log(0.4/0.6): decoded occupancy 0.4 everywhere.
    struct FlatOracle : DenoiserInterface {
        void predict_velocity(const LatentCrop& z, double t, const ConditionGrid&, bool,
                              std::vector<double>& v) override {
            const double logit = std::log(0.4 / 0.6);
            v.resize(z.data.size());
            for (size_t i = 0; i < v.size(); ++i) v[i] = (logit - z.data[i]) / (1.0 - t);
        }
    } oracle;

    std::ostringstream diag;
    SampleOptions opt;
    opt.seed = 4;
    opt.progress = &diag;
    OccupancyResult res = run_stage_occupancy(layout, oracle, nullptr, 1, opt);
    REQUIRE(res.occupied == 0);
    for (float f : res.occupancy.data) REQUIRE(f == 0.0f);
    REQUIRE(diag.str().find("warning=empty-scene") != std::string::npos);
    REQUIRE(diag.str().find("stage=occupancy step=12/12") != std::string::npos);
}

TEST_CASE("occupancy upsampling yields the 2x2x2 children", "[flowgen]") {
    DenseGrid occ = DenseGrid::make({0, 0, 0}, 0.2, {3, 2, 2}, 1);
    occ.at(0, 0, 0)[0] = 1.0f;
    occ.at(2, 1, 1)[0] = 1.0f;
    occ.at(1, 0, 1)[0] = 1.0f;
    SparseGrid s = upsample_occupancy(occ, 4);
    REQUIRE(s.coords.size() == 24);
    REQUIRE(s.dims == std::array<int, 3>{6, 4, 4});
    REQUIRE(s.voxel_size == Catch::Approx(0.1));
    REQUIRE(std::is_sorted(s.coords.begin(), s.coords.end()));
    for (const auto& c : s.coords)
        REQUIRE(occ.at(c[0] / 2, c[1] / 2, c[2] / 2)[0] == 1.0f);

    for (auto& f : occ.data) f = 1.0f;
    SparseGrid full = upsample_occupancy(occ, 1);
    REQUIRE(full.coords.size() == size_t(occ.voxel_count()) * 8);
}

TEST_CASE("detail stage runs on the upsampled structure", "[flowgen]") {
    SceneBounds bounds;
    bounds.aabb = {{0, 0, 0}, {1.5, 1.5, 2.5}};
    bounds.up_axis = Axis::Z;
    bounds.height = 2.5;
    ChunkLayout layout = tile(bounds, compute_chunk_edge(bounds), 0.25, 8);
    DenseGrid occ = layout.make_global_grid(1);
    for (int64_t v = 0; v < occ.voxel_count(); ++v)
        occ.data[size_t(v)] = (v % 3 == 0) ? 1.0f : 0.0f;

    SparseGrid structure = upsample_occupancy(occ, 2);
    SparseFieldOracle oracle;
    SampleOptions opt;
    opt.seed = 71;
    SparseGrid out = run_stage_detail(layout, structure, 2, oracle, nullptr, opt);
    REQUIRE(out.coords == structure.coords);
    for (float f : out.data) REQUIRE(std::isfinite(f));

    DenseGrid none = DenseGrid::make(occ.origin, occ.voxel_size, occ.dims, 1);
    SparseGrid empty = run_stage_detail(layout, upsample_occupancy(none, 2), 2, oracle, nullptr,
                                        opt);
    REQUIRE(empty.coords.empty());
    REQUIRE(empty.data.empty());
}
