#ifndef CHUNKGEN_FLOWGEN_HPP
#define CHUNKGEN_FLOWGEN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "chunkgen/chunker.hpp"
#include "chunkgen/common.hpp"
#include "chunkgen/condition.hpp"
#include "chunkgen/grids.hpp"

namespace chunkgen {

// Integration times t_0=0 < ... < t_S=1 of the straight noise-to-data path.
struct FlowSchedule {
    std::vector<double> times;

    static FlowSchedule uniform_steps(int steps = 12) {
        if (steps < 1) throw UsageError("flow schedule needs at least one step");
        FlowSchedule s;
        s.times.resize(size_t(steps) + 1, 0.0);
        for (int i = 0; i <= steps; ++i) s.times[size_t(i)] = double(i) / steps;
        s.times.back() = 1.0;
        return s;
    }

    int steps() const { return int(times.size()) - 1; }

    void validate() const {
        if (times.size() < 2) throw UsageError("flow schedule needs at least one step");
        if (times.front() != 0.0 || times.back() != 1.0)
            throw UsageError("flow schedule must span t=0 to t=1");
        for (size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw UsageError("flow schedule times must be strictly increasing");
    }
};

struct GuidanceConfig {
    double scale = 3.0;
    bool enabled = false;

    void validate() const {
        if (scale < 0) throw UsageError("guidance scale must be non-negative");
    }
};

// A dense latent block in double precision, the unit the denoiser sees.
// origin is the world-space corner of the crop.
struct LatentCrop {
    Vec3 origin{0, 0, 0};
    double voxel_size = 1.0;
    std::array<int, 3> dims{0, 0, 0};
    int channels = 0;
    std::vector<double> data;

    static LatentCrop make(const Vec3& origin, double voxel_size, std::array<int, 3> dims,
                           int channels) {
        LatentCrop c;
        c.origin = origin;
        c.voxel_size = voxel_size;
        c.dims = dims;
        c.channels = channels;
        c.data.assign(size_t(dims[0]) * dims[1] * dims[2] * channels, 0.0);
        return c;
    }

    int64_t voxel_count() const { return int64_t(dims[0]) * dims[1] * dims[2]; }

    int64_t voxel_index(int i, int j, int k) const {
        return (int64_t(i) * dims[1] + j) * dims[2] + k;
    }

    Vec3 voxel_center(int i, int j, int k) const {
        return {origin.x + (i + 0.5) * voxel_size, origin.y + (j + 0.5) * voxel_size,
                origin.z + (k + 0.5) * voxel_size};
    }

    double* at(int i, int j, int k) { return data.data() + voxel_index(i, j, k) * channels; }
    const double* at(int i, int j, int k) const {
        return data.data() + voxel_index(i, j, k) * channels;
    }
};

// Sparse counterpart: values only at the listed (sorted) coords.
struct SparseLatentCrop {
    Vec3 origin{0, 0, 0};
    double voxel_size = 1.0;
    std::array<int, 3> dims{0, 0, 0};
    int channels = 0;
    std::vector<std::array<int, 3>> coords;
    std::vector<double> data;
};

class DenoiserInterface {
public:
    virtual ~DenoiserInterface() = default;
    // Sizes and fills velocity (same element count as latent.data). cond
    // voxels align with latent voxels index for index; conditioned=false means
    // the caller wants the unconditional branch regardless of cond contents.
    virtual void predict_velocity(const LatentCrop& latent, double t, const ConditionGrid& cond,
                                  bool conditioned, std::vector<double>& velocity) = 0;
};

class SparseDenoiserInterface {
public:
    virtual ~SparseDenoiserInterface() = default;
    virtual void predict_velocity(const SparseLatentCrop& latent, double t,
                                  const SparseConditionGrid& cond, bool conditioned,
                                  std::vector<double>& velocity) = 0;
};

inline void flow_step_inplace(double* z, const double* v, int64_t n, double dt) {
    for (int64_t i = 0; i < n; ++i) z[i] += dt * v[i];
}

inline LatentCrop flow_step(const LatentCrop& z, const std::vector<double>& velocity, double t,
                            double t_next) {
    if (velocity.size() != z.data.size())
        throw ConstraintError("flow_step: velocity shape does not match latent");
    if (!(t < t_next)) throw UsageError("flow_step: t must precede t_next");
    LatentCrop out = z;
    flow_step_inplace(out.data.data(), velocity.data(), int64_t(out.data.size()), t_next - t);
    return out;
}

// v = v_uncond + s * (v_cond - v_uncond). s=1 and disabled guidance collapse
// to a single conditional call.
inline void guided_velocity(DenoiserInterface& denoiser, const LatentCrop& z, double t,
                            const ConditionGrid& cond, const GuidanceConfig& guidance,
                            std::vector<double>& velocity, std::vector<double>& scratch) {
    guidance.validate();
    if (!guidance.enabled || guidance.scale == 1.0) {
        denoiser.predict_velocity(z, t, cond, true, velocity);
        return;
    }
    denoiser.predict_velocity(z, t, cond, false, scratch);
    denoiser.predict_velocity(z, t, cond, true, velocity);
    const double s = guidance.scale;
    for (size_t i = 0; i < velocity.size(); ++i)
        velocity[i] = scratch[i] + s * (velocity[i] - scratch[i]);
}

inline void guided_velocity_sparse(SparseDenoiserInterface& denoiser, const SparseLatentCrop& z,
                                   double t, const SparseConditionGrid& cond,
                                   const GuidanceConfig& guidance, std::vector<double>& velocity,
                                   std::vector<double>& scratch) {
    guidance.validate();
    if (!guidance.enabled || guidance.scale == 1.0) {
        denoiser.predict_velocity(z, t, cond, true, velocity);
        return;
    }
    denoiser.predict_velocity(z, t, cond, false, scratch);
    denoiser.predict_velocity(z, t, cond, true, velocity);
    const double s = guidance.scale;
    for (size_t i = 0; i < velocity.size(); ++i)
        velocity[i] = scratch[i] + s * (velocity[i] - scratch[i]);
}

struct SampleOptions {
    FlowSchedule schedule = FlowSchedule::uniform_steps();
    GuidanceConfig guidance;
    int boundary_width = 0;
    // Eq. 3 merges predicted next states; merging raw velocities instead is an
    // experimental switch.
    bool merge_velocities = false;
    uint64_t seed = 0;
    int threads = 1;
    std::ostream* progress = nullptr;
};

inline std::vector<double> sample_noise(int64_t count, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> out(size_t(count), 0.0);
    for (auto& v : out) v = rng.gaussian();
    return out;
}

namespace detail {

inline void check_regions(const std::array<int, 3>& dims, const std::vector<IndexBox>& regions,
                          int boundary_width) {
    if (regions.empty()) throw UsageError("sampler needs at least one region");
    if (boundary_width < 0) throw UsageError("boundary width must be non-negative");
    for (const auto& r : regions) {
        for (int a = 0; a < 3; ++a) {
            if (r.lo[a] < 0 || r.hi[a] > dims[a] || r.lo[a] >= r.hi[a])
                throw ConstraintError("sampler region outside the global grid");
        }
        if (boundary_width > 0)
            for (int a = 0; a < 2; ++a)
                if (r.hi[a] - r.lo[a] <= 2 * boundary_width)
                    throw UsageError("boundary width leaves a chunk with no interior");
    }
}

inline void check_coverage(const std::array<int, 3>& dims, const std::vector<IndexBox>& regions) {
    std::vector<uint8_t> covered(size_t(dims[0]) * dims[1] * dims[2], 0);
    for (const auto& r : regions)
        for (int i = r.lo[0]; i < r.hi[0]; ++i)
            for (int j = r.lo[1]; j < r.hi[1]; ++j)
                for (int k = r.lo[2]; k < r.hi[2]; ++k)
                    covered[size_t((int64_t(i) * dims[1] + j) * dims[2] + k)] = 1;
    for (uint8_t c : covered)
        if (!c) throw ConstraintError("chunk layout leaves voxels uncovered");
}

// True when the local coordinate sits in the region's contributing interior:
// the outermost b layers on the four x/y faces are excluded, z is untouched.
inline bool interior_local(const IndexBox& r, int b, int i, int j) {
    int li = i - r.lo[0], lj = j - r.lo[1];
    return li >= b && li < (r.hi[0] - r.lo[0]) - b && lj >= b && lj < (r.hi[1] - r.lo[1]) - b;
}

}  // namespace detail

// Mask-weighted average of per-region predictions into the global grid.
// With boundary_width > 0, x/y boundary layers do not contribute; voxels with
// no interior coverage fall back to the plain average of everything covering
// them (their own chunk's estimate whenever that chunk is unique).
inline void merge_predictions(const std::array<int, 3>& dims, int channels,
                              const std::vector<IndexBox>& regions,
                              const std::vector<std::vector<double>>& predictions,
                              int boundary_width, std::vector<double>& merged) {
    detail::check_regions(dims, regions, boundary_width);
    if (predictions.size() != regions.size())
        throw ConstraintError("one prediction buffer required per region");
    for (size_t r = 0; r < regions.size(); ++r)
        if (int64_t(predictions[r].size()) != regions[r].volume() * channels)
            throw ConstraintError("prediction buffer size does not match its region");

    merged.assign(size_t(dims[0]) * dims[1] * dims[2] * size_t(channels), 0.0);
    const int K = int(regions.size());
    std::vector<double> acc(size_t(channels), 0.0);
    std::vector<double> first(size_t(channels), 0.0);
    std::vector<double> fb_acc(size_t(channels), 0.0);
    std::vector<double> fb_first(size_t(channels), 0.0);

    for (int i = 0; i < dims[0]; ++i)
        for (int j = 0; j < dims[1]; ++j)
            for (int k = 0; k < dims[2]; ++k) {
                int n_int = 0, n_all = 0;
                bool agree = true, fb_agree = true;
                for (int r = 0; r < K; ++r) {
                    const IndexBox& box = regions[size_t(r)];
                    if (!box.contains(i, j, k)) continue;
                    int64_t local =
                        ((int64_t(i - box.lo[0]) * (box.hi[1] - box.lo[1]) + (j - box.lo[1])) *
                             (box.hi[2] - box.lo[2]) +
                         (k - box.lo[2])) *
                        channels;
                    const double* p = predictions[size_t(r)].data() + local;
                    if (n_all == 0)
                        for (int c = 0; c < channels; ++c) fb_first[size_t(c)] = p[c];
                    for (int c = 0; c < channels; ++c) {
                        fb_acc[size_t(c)] = n_all ? fb_acc[size_t(c)] + p[c] : p[c];
                        if (p[c] != fb_first[size_t(c)]) fb_agree = false;
                    }
                    n_all++;
                    if (!detail::interior_local(box, boundary_width, i, j)) continue;
                    if (n_int == 0)
                        for (int c = 0; c < channels; ++c) first[size_t(c)] = p[c];
                    for (int c = 0; c < channels; ++c) {
                        acc[size_t(c)] = n_int ? acc[size_t(c)] + p[c] : p[c];
                        if (p[c] != first[size_t(c)]) agree = false;
                    }
                    n_int++;
                }
                if (n_all == 0) throw ConstraintError("chunk layout leaves voxels uncovered");
                double* out =
                    merged.data() + ((int64_t(i) * dims[1] + j) * dims[2] + k) * channels;
                if (n_int > 0) {
                    for (int c = 0; c < channels; ++c)
                        out[c] = agree ? first[size_t(c)] : acc[size_t(c)] / n_int;
                } else {
                    for (int c = 0; c < channels; ++c)
                        out[c] = fb_agree ? fb_first[size_t(c)] : fb_acc[size_t(c)] / n_all;
                }
            }
}

// Joint flow-matching sampling over arbitrary rectangular regions of one
// global latent. Per step every region is denoised on its own crop and the
// per-region next states are merged back into the shared latent.
inline DenseGrid sample_regions(const Vec3& origin, double voxel_size,
                                const std::array<int, 3>& dims, int channels,
                                const std::vector<IndexBox>& regions,
                                DenoiserInterface& denoiser, const ConditionGrid* condition,
                                const SampleOptions& opt, const char* stage_name = "occupancy") {
    opt.schedule.validate();
    opt.guidance.validate();
    if (channels < 1) throw UsageError("latent needs at least one channel");
    detail::check_regions(dims, regions, opt.boundary_width);
    detail::check_coverage(dims, regions);
    if (condition) {
        if (condition->grid.dims != dims)
            throw ConstraintError("condition grid resolution does not match the latent");
    }

    const int K = int(regions.size());
    const int64_t n_vox = int64_t(dims[0]) * dims[1] * dims[2];
    std::vector<double> z = sample_noise(n_vox * channels, opt.seed);

    auto region_cond = std::vector<ConditionGrid>(size_t(K));
    for (int r = 0; r < K; ++r) {
        const IndexBox& box = regions[size_t(r)];
        Vec3 o{origin.x + box.lo[0] * voxel_size, origin.y + box.lo[1] * voxel_size,
               origin.z + box.lo[2] * voxel_size};
        if (condition) {
            region_cond[size_t(r)] = crop_condition(*condition, box, o);
        } else {
            region_cond[size_t(r)].grid = DenseGrid::make(
                o, voxel_size,
                {box.hi[0] - box.lo[0], box.hi[1] - box.lo[1], box.hi[2] - box.lo[2]}, 0);
            region_cond[size_t(r)].coverage.assign(size_t(regions[size_t(r)].volume()), 0);
        }
    }

    auto predictions = std::vector<std::vector<double>>(size_t(K));
    std::vector<double> merged;
    const int S = opt.schedule.steps();
    for (int s = 0; s < S; ++s) {
        const double t = opt.schedule.times[size_t(s)];
        const double t_next = opt.schedule.times[size_t(s) + 1];
        const double dt = t_next - t;

        parallel_for(K, opt.threads, [&](int64_t rb, int64_t re) {
            std::vector<double> velocity, scratch;
            for (int64_t r = rb; r < re; ++r) {
                const IndexBox& box = regions[size_t(r)];
                LatentCrop crop = LatentCrop::make(region_cond[size_t(r)].grid.origin, voxel_size,
                                                   {box.hi[0] - box.lo[0], box.hi[1] - box.lo[1],
                                                    box.hi[2] - box.lo[2]},
                                                   channels);
                for (int i = box.lo[0]; i < box.hi[0]; ++i)
                    for (int j = box.lo[1]; j < box.hi[1]; ++j) {
                        const double* src =
                            z.data() +
                            ((int64_t(i) * dims[1] + j) * dims[2] + box.lo[2]) * channels;
                        double* dst =
                            crop.at(i - box.lo[0], j - box.lo[1], 0);
                        std::copy_n(src, size_t(box.hi[2] - box.lo[2]) * channels, dst);
                    }
                if (condition)
                    guided_velocity(denoiser, crop, t, region_cond[size_t(r)], opt.guidance,
                                    velocity, scratch);
                else
                    denoiser.predict_velocity(crop, t, region_cond[size_t(r)], false, velocity);
                if (velocity.size() != crop.data.size())
                    throw ConstraintError("denoiser returned a mismatched velocity shape");
                if (!opt.merge_velocities)
                    flow_step_inplace(crop.data.data(), velocity.data(),
                                      int64_t(crop.data.size()), dt);
                predictions[size_t(r)] =
                    opt.merge_velocities ? std::move(velocity) : std::move(crop.data);
            }
        });

        merge_predictions(dims, channels, regions, predictions, opt.boundary_width, merged);
        if (opt.merge_velocities)
            flow_step_inplace(z.data(), merged.data(), int64_t(z.size()), dt);
        else
            z.swap(merged);
        if (opt.progress)
            (*opt.progress) << "stage=" << stage_name << " step=" << (s + 1) << "/" << S
                            << " t=" << t_next << "\n";
    }

    DenseGrid out = DenseGrid::make(origin, voxel_size, dims, channels);
    for (size_t i = 0; i < z.size(); ++i) out.data[i] = float(z[i]);
    return out;
}

inline std::vector<IndexBox> layout_regions(const ChunkLayout& layout, int res_multiplier = 1) {
    DenseGrid spec = layout.make_global_grid(1, res_multiplier);
    std::vector<IndexBox> regions;
    regions.reserve(layout.chunks.size());
    for (const auto& chunk : layout.chunks)
        regions.push_back(chunk_mask(chunk, spec.origin, spec.voxel_size, spec.dims));
    return regions;
}

inline DenseGrid sample_chunked(const ChunkLayout& layout, DenoiserInterface& denoiser,
                                const ConditionGrid* condition, int channels,
                                const SampleOptions& opt) {
    DenseGrid spec = layout.make_global_grid(channels);
    return sample_regions(spec.origin, spec.voxel_size, spec.dims, channels,
                          layout_regions(layout), denoiser, condition, opt);
}

// Sparse analogue: the latent lives only on the structure's coords; regions
// select coords by index box.
inline SparseGrid sample_regions_sparse(const SparseGrid& structure, int channels,
                                        const std::vector<IndexBox>& regions,
                                        SparseDenoiserInterface& denoiser,
                                        const SparseConditionGrid* condition,
                                        const SampleOptions& opt,
                                        const char* stage_name = "detail") {
    opt.schedule.validate();
    opt.guidance.validate();
    if (channels < 1) throw UsageError("latent needs at least one channel");
    detail::check_regions(structure.dims, regions, opt.boundary_width);
    if (condition && condition->grid.coords != structure.coords)
        throw ConstraintError("sparse condition structure does not match the latent structure");

    const int K = int(regions.size());
    const int64_t N = int64_t(structure.coords.size());
    std::vector<double> z = sample_noise(N * channels, opt.seed);

    // Per region: which global sparse entries it owns, in structure order.
    auto owned = std::vector<std::vector<int64_t>>(size_t(K));
    std::vector<uint8_t> covered(size_t(N), 0);
    for (int r = 0; r < K; ++r)
        for (int64_t n = 0; n < N; ++n) {
            const auto& c = structure.coords[size_t(n)];
            if (regions[size_t(r)].contains(c[0], c[1], c[2])) {
                owned[size_t(r)].push_back(n);
                covered[size_t(n)] = 1;
            }
        }
    for (int64_t n = 0; n < N; ++n)
        if (!covered[size_t(n)]) throw ConstraintError("chunk layout leaves voxels uncovered");

    auto region_cond = std::vector<SparseConditionGrid>(size_t(K));
    for (int r = 0; r < K; ++r) {
        const IndexBox& box = regions[size_t(r)];
        Vec3 o{structure.origin.x + box.lo[0] * structure.voxel_size,
               structure.origin.y + box.lo[1] * structure.voxel_size,
               structure.origin.z + box.lo[2] * structure.voxel_size};
        if (condition) {
            region_cond[size_t(r)] = crop_condition_sparse(*condition, box, o);
        } else {
            region_cond[size_t(r)].grid.origin = o;
            region_cond[size_t(r)].grid.voxel_size = structure.voxel_size;
            region_cond[size_t(r)].grid.dims = {box.hi[0] - box.lo[0], box.hi[1] - box.lo[1],
                                                box.hi[2] - box.lo[2]};
            region_cond[size_t(r)].grid.channels = 0;
            for (int64_t n : owned[size_t(r)]) {
                const auto& c = structure.coords[size_t(n)];
                region_cond[size_t(r)].grid.coords.push_back(
                    {c[0] - box.lo[0], c[1] - box.lo[1], c[2] - box.lo[2]});
                region_cond[size_t(r)].coverage.push_back(0);
            }
        }
    }

    auto predictions = std::vector<std::vector<double>>(size_t(K));
    std::vector<double> acc(size_t(channels), 0.0);
    std::vector<double> first(size_t(channels), 0.0);
    std::vector<double> fb_acc(size_t(channels), 0.0);
    std::vector<double> fb_first(size_t(channels), 0.0);
    std::vector<double> merged(size_t(N) * channels, 0.0);

    const int S = opt.schedule.steps();
    for (int s = 0; s < S; ++s) {
        const double t = opt.schedule.times[size_t(s)];
        const double t_next = opt.schedule.times[size_t(s) + 1];
        const double dt = t_next - t;

        parallel_for(K, opt.threads, [&](int64_t rb, int64_t re) {
            std::vector<double> velocity, scratch;
            for (int64_t r = rb; r < re; ++r) {
                const IndexBox& box = regions[size_t(r)];
                SparseLatentCrop crop;
                crop.origin = region_cond[size_t(r)].grid.origin;
                crop.voxel_size = structure.voxel_size;
                crop.dims = {box.hi[0] - box.lo[0], box.hi[1] - box.lo[1],
                             box.hi[2] - box.lo[2]};
                crop.channels = channels;
                for (int64_t n : owned[size_t(r)]) {
                    const auto& c = structure.coords[size_t(n)];
                    crop.coords.push_back({c[0] - box.lo[0], c[1] - box.lo[1], c[2] - box.lo[2]});
                    for (int ch = 0; ch < channels; ++ch)
                        crop.data.push_back(z[size_t(n) * channels + size_t(ch)]);
                }
                if (condition)
                    guided_velocity_sparse(denoiser, crop, t, region_cond[size_t(r)],
                                           opt.guidance, velocity, scratch);
                else
                    denoiser.predict_velocity(crop, t, region_cond[size_t(r)], false, velocity);
                if (velocity.size() != crop.data.size())
                    throw ConstraintError("denoiser returned a mismatched velocity shape");
                if (!opt.merge_velocities)
                    flow_step_inplace(crop.data.data(), velocity.data(),
                                      int64_t(crop.data.size()), dt);
                predictions[size_t(r)] =
                    opt.merge_velocities ? std::move(velocity) : std::move(crop.data);
            }
        });

        for (int64_t n = 0; n < N; ++n) {
            const auto& c = structure.coords[size_t(n)];
            int n_int = 0, n_all = 0;
            bool agree = true, fb_agree = true;
            for (int r = 0; r < K; ++r) {
                const IndexBox& box = regions[size_t(r)];
                if (!box.contains(c[0], c[1], c[2])) continue;
                auto it = std::lower_bound(owned[size_t(r)].begin(), owned[size_t(r)].end(), n);
                int64_t local = it - owned[size_t(r)].begin();
                const double* p = predictions[size_t(r)].data() + local * channels;
                if (n_all == 0)
                    for (int ch = 0; ch < channels; ++ch) fb_first[size_t(ch)] = p[ch];
                for (int ch = 0; ch < channels; ++ch) {
                    fb_acc[size_t(ch)] = n_all ? fb_acc[size_t(ch)] + p[ch] : p[ch];
                    if (p[ch] != fb_first[size_t(ch)]) fb_agree = false;
                }
                n_all++;
                if (!detail::interior_local(box, opt.boundary_width, c[0], c[1])) continue;
                if (n_int == 0)
                    for (int ch = 0; ch < channels; ++ch) first[size_t(ch)] = p[ch];
                for (int ch = 0; ch < channels; ++ch) {
                    acc[size_t(ch)] = n_int ? acc[size_t(ch)] + p[ch] : p[ch];
                    if (p[ch] != first[size_t(ch)]) agree = false;
                }
                n_int++;
            }
            double* out = merged.data() + size_t(n) * channels;
            if (n_int > 0) {
                for (int ch = 0; ch < channels; ++ch)
                    out[ch] = agree ? first[size_t(ch)] : acc[size_t(ch)] / n_int;
            } else {
                for (int ch = 0; ch < channels; ++ch)
                    out[ch] = fb_agree ? fb_first[size_t(ch)] : fb_acc[size_t(ch)] / n_all;
            }
        }
        if (opt.merge_velocities)
            flow_step_inplace(z.data(), merged.data(), int64_t(z.size()), dt);
        else
            z.swap(merged);
        if (opt.progress)
            (*opt.progress) << "stage=" << stage_name << " step=" << (s + 1) << "/" << S
                            << " t=" << t_next << "\n";
    }

    SparseGrid out;
    out.origin = structure.origin;
    out.voxel_size = structure.voxel_size;
    out.dims = structure.dims;
    out.channels = channels;
    out.coords = structure.coords;
    out.data.resize(z.size());
    for (size_t i = 0; i < z.size(); ++i) out.data[i] = float(z[i]);
    return out;
}

enum class Stage { Occupancy, Detail };

struct GlobalLatent {
    Stage stage = Stage::Occupancy;
    DenseGrid dense;
    SparseGrid sparse;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct OccupancyResult {
    DenseGrid latent;     // full C-channel latent at t=1
    DenseGrid occupancy;  // single channel, exact 0/1
    int64_t occupied = 0;
};

// Dense coarse stage: sample the latent, then threshold the decoded channel 0
// (sigmoid of the logit) at 0.5.
inline OccupancyResult run_stage_occupancy(const ChunkLayout& layout, DenoiserInterface& denoiser,
                                           const ConditionGrid* condition, int channels,
                                           const SampleOptions& opt) {
    OccupancyResult res;
    res.latent = sample_chunked(layout, denoiser, condition, channels, opt);
    res.occupancy = DenseGrid::make(res.latent.origin, res.latent.voxel_size, res.latent.dims, 1);
    for (int64_t v = 0; v < res.latent.voxel_count(); ++v) {
        bool occ = sigmoid(double(res.latent.data[size_t(v) * size_t(channels)])) > 0.5;
        res.occupancy.data[size_t(v)] = occ ? 1.0f : 0.0f;
        res.occupied += occ;
    }
    if (res.occupied == 0 && opt.progress)
        (*opt.progress) << "stage=occupancy warning=empty-scene\n";
    return res;
}

// The detail structure is the 2x2x2 upsampling of occupied coarse cells.
inline SparseGrid upsample_occupancy(const DenseGrid& occupancy, int channels) {
    if (occupancy.channels != 1) throw UsageError("occupancy grid must have one channel");
    SparseGrid s;
    s.origin = occupancy.origin;
    s.voxel_size = occupancy.voxel_size / 2.0;
    s.dims = {occupancy.dims[0] * 2, occupancy.dims[1] * 2, occupancy.dims[2] * 2};
    s.channels = channels;
    for (int i = 0; i < occupancy.dims[0]; ++i)
        for (int j = 0; j < occupancy.dims[1]; ++j)
            for (int k = 0; k < occupancy.dims[2]; ++k) {
                if (occupancy.at(i, j, k)[0] == 0.0f) continue;
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj)
                        for (int dk = 0; dk < 2; ++dk)
                            s.coords.push_back({2 * i + di, 2 * j + dj, 2 * k + dk});
            }
    std::sort(s.coords.begin(), s.coords.end());
    s.data.assign(s.coords.size() * size_t(channels), 0.0f);
    return s;
}

// Sparse fine stage on the upsampled structure. Returns the detail latent
// whose first three channels are the toy appearance.
inline SparseGrid run_stage_detail(const ChunkLayout& layout, const SparseGrid& structure,
                                   int channels, SparseDenoiserInterface& denoiser,
                                   const SparseConditionGrid* condition,
                                   const SampleOptions& opt) {
    if (structure.coords.empty()) {
        SparseGrid empty = structure;
        empty.channels = channels;
        empty.data.clear();
        return empty;
    }
    std::vector<IndexBox> regions;
    for (const auto& chunk : layout.chunks)
        regions.push_back(
            chunk_mask(chunk, structure.origin, structure.voxel_size, structure.dims));
    return sample_regions_sparse(structure, channels, regions, denoiser, condition, opt);
}

}  // namespace chunkgen

#endif
