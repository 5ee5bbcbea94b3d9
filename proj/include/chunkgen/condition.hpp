#ifndef CHUNKGEN_CONDITION_HPP
#define CHUNKGEN_CONDITION_HPP

#include "chunkgen/chunker.hpp"
#include "chunkgen/geometry.hpp"

namespace chunkgen {

// Two small MLPs shared across voxels and views:
//   feat:   [f_i, mu, var] (3D) -> H -> H -> D, tanh hidden, linear out,
//           final layer zero-initialized so aggregation starts as the mean
//   weight: [f_i, mu, var] (3D) -> H -> 1, tanh hidden, linear out
// All parameters are doubles; weight matrices are row-major out x in.
struct AggregatorParams {
    int feat_dim = 0;
    int hidden = 0;
    std::vector<double> feat_w1, feat_b1;  // H x 3D, H
    std::vector<double> feat_w2, feat_b2;  // H x H, H
    std::vector<double> feat_w3, feat_b3;  // D x H, D  (zero at init)
    std::vector<double> wt_w1, wt_b1;      // H x 3D, H
    std::vector<double> wt_w2, wt_b2;      // 1 x H, 1

    static AggregatorParams init(int feat_dim, int hidden, Rng& rng) {
        if (feat_dim < 1) throw ConstraintError("aggregator: feat_dim must be >= 1");
        if (hidden <= 0) hidden = feat_dim;
        AggregatorParams p;
        p.feat_dim = feat_dim;
        p.hidden = hidden;
        int d3 = 3 * feat_dim;
        auto fill = [&rng](std::vector<double>& v, size_t n, int fan_in) {
            double s = 1.0 / std::sqrt(double(fan_in));
            v.resize(n);
            for (auto& x : v) x = rng.uniform(-s, s);
        };
        fill(p.feat_w1, size_t(hidden) * d3, d3);
        fill(p.feat_b1, size_t(hidden), d3);
        fill(p.feat_w2, size_t(hidden) * hidden, hidden);
        fill(p.feat_b2, size_t(hidden), hidden);
        p.feat_w3.assign(size_t(feat_dim) * hidden, 0.0);
        p.feat_b3.assign(size_t(feat_dim), 0.0);
        fill(p.wt_w1, size_t(hidden) * d3, d3);
        fill(p.wt_b1, size_t(hidden), d3);
        fill(p.wt_w2, size_t(hidden), hidden);
        fill(p.wt_b2, 1, hidden);
        return p;
    }

    AggregatorParams zeros_like() const {
        AggregatorParams g;
        g.feat_dim = feat_dim;
        g.hidden = hidden;
        auto z = [](std::vector<double>& dst, const std::vector<double>& src) {
            dst.assign(src.size(), 0.0);
        };
        z(g.feat_w1, feat_w1), z(g.feat_b1, feat_b1);
        z(g.feat_w2, feat_w2), z(g.feat_b2, feat_b2);
        z(g.feat_w3, feat_w3), z(g.feat_b3, feat_b3);
        z(g.wt_w1, wt_w1), z(g.wt_b1, wt_b1);
        z(g.wt_w2, wt_w2), z(g.wt_b2, wt_b2);
        return g;
    }

    template <class F>
    void for_each_buffer(F&& f) {
        f("feat_w1", feat_w1), f("feat_b1", feat_b1);
        f("feat_w2", feat_w2), f("feat_b2", feat_b2);
        f("feat_w3", feat_w3), f("feat_b3", feat_b3);
        f("wt_w1", wt_w1), f("wt_b1", wt_b1);
        f("wt_w2", wt_w2), f("wt_b2", wt_b2);
    }

    size_t count() const {
        return feat_w1.size() + feat_b1.size() + feat_w2.size() + feat_b2.size() +
               feat_w3.size() + feat_b3.size() + wt_w1.size() + wt_b1.size() + wt_w2.size() +
               wt_b2.size();
    }
};

namespace detail {

inline void linear(int in, int out, const std::vector<double>& W, const std::vector<double>& b,
                   const double* x, double* y) {
    for (int o = 0; o < out; ++o) {
        double s = b[size_t(o)];
        const double* row = W.data() + size_t(o) * in;
        for (int i = 0; i < in; ++i) s += row[size_t(i)] * x[i];
        y[o] = s;
    }
}

// Accumulate dW += dy (x) x, db += dy and return dx = W^T dy.
inline void linear_grad(int in, int out, const std::vector<double>& W, const double* x,
                        const double* dy, std::vector<double>& dW, std::vector<double>& db,
                        double* dx) {
    for (int o = 0; o < out; ++o) {
        double g = dy[o];
        db[size_t(o)] += g;
        double* drow = dW.data() + size_t(o) * in;
        const double* row = W.data() + size_t(o) * in;
        for (int i = 0; i < in; ++i) {
            drow[size_t(i)] += g * x[i];
            if (dx) dx[i] += row[size_t(i)] * g;
        }
    }
}

}  // namespace detail

// Scratch space for one voxel of aggregation; reused across voxels to avoid
// per-voxel allocation.
struct AggregateScratch {
    std::vector<double> mu, var, x, h1, h2, fp, g1, w, alpha, dfp, dh, da;
    std::vector<int> valid_idx;

    void resize(int feat_dim, int hidden, int views) {
        mu.resize(size_t(feat_dim));
        var.resize(size_t(feat_dim));
        x.resize(size_t(3 * feat_dim));
        h1.resize(size_t(hidden) * views);
        h2.resize(size_t(hidden) * views);
        fp.resize(size_t(feat_dim) * views);
        g1.resize(size_t(hidden) * views);
        w.resize(size_t(views));
        alpha.resize(size_t(views));
        dfp.resize(size_t(feat_dim));
        dh.resize(size_t(hidden));
        da.resize(size_t(hidden));
        valid_idx.clear();
    }
};

// One voxel of Eq. 1-2 aggregation over V views. feats is V x D (row per
// view); valid marks views whose projection hit the image. out receives D
// values; the return value is the number of valid views (coverage).
inline int aggregate_voxel(const AggregatorParams& P, const double* feats, const uint8_t* valid,
                           int views, double* out, AggregateScratch& s) {
    const int D = P.feat_dim, H = P.hidden;
    s.resize(D, H, views);
    for (int v = 0; v < views; ++v)
        if (valid[v]) s.valid_idx.push_back(v);
    const int V = int(s.valid_idx.size());
    if (V == 0) {
        for (int d = 0; d < D; ++d) out[d] = 0.0;
        return 0;
    }

    // Cross-view statistics over valid views only.
    for (int d = 0; d < D; ++d) {
        double sum = 0;
        for (int v : s.valid_idx) sum += feats[size_t(v) * D + d];
        s.mu[size_t(d)] = sum / V;
    }
    for (int d = 0; d < D; ++d) {
        double sum = 0;
        for (int v : s.valid_idx) {
            double r = feats[size_t(v) * D + d] - s.mu[size_t(d)];
            sum += r * r;
        }
        s.var[size_t(d)] = std::max(0.0, sum / V);
    }

    // Per-view residuals and attention logits.
    double wmax = -1e300;
    for (int n = 0; n < V; ++n) {
        int v = s.valid_idx[size_t(n)];
        for (int d = 0; d < D; ++d) {
            s.x[size_t(d)] = feats[size_t(v) * D + d];
            s.x[size_t(D + d)] = s.mu[size_t(d)];
            s.x[size_t(2 * D + d)] = s.var[size_t(d)];
        }
        double* h1 = s.h1.data() + size_t(n) * H;
        double* h2 = s.h2.data() + size_t(n) * H;
        double* fp = s.fp.data() + size_t(n) * D;
        double* g1 = s.g1.data() + size_t(n) * H;
        detail::linear(3 * D, H, P.feat_w1, P.feat_b1, s.x.data(), h1);
        for (int i = 0; i < H; ++i) h1[i] = std::tanh(h1[i]);
        detail::linear(H, H, P.feat_w2, P.feat_b2, h1, h2);
        for (int i = 0; i < H; ++i) h2[i] = std::tanh(h2[i]);
        detail::linear(H, D, P.feat_w3, P.feat_b3, h2, fp);
        detail::linear(3 * D, H, P.wt_w1, P.wt_b1, s.x.data(), g1);
        for (int i = 0; i < H; ++i) g1[i] = std::tanh(g1[i]);
        detail::linear(H, 1, P.wt_w2, P.wt_b2, g1, &s.w[size_t(n)]);
        wmax = std::max(wmax, s.w[size_t(n)]);
    }

    double zsum = 0;
    for (int n = 0; n < V; ++n) {
        s.alpha[size_t(n)] = std::exp(s.w[size_t(n)] - wmax);
        zsum += s.alpha[size_t(n)];
    }
    for (int n = 0; n < V; ++n) s.alpha[size_t(n)] /= zsum;

    for (int d = 0; d < D; ++d) {
        double acc = 0;
        for (int n = 0; n < V; ++n) acc += s.alpha[size_t(n)] * s.fp[size_t(n) * D + d];
        out[d] = s.mu[size_t(d)] + acc;
    }
    return V;
}

// Accumulates d(loss)/d(params) for one voxel given dout = d(loss)/d(out).
// Features are inputs, not parameters, so no gradient flows to them; the
// forward pass is recomputed here rather than taped.
inline void aggregate_voxel_grad(const AggregatorParams& P, const double* feats,
                                 const uint8_t* valid, int views, const double* dout,
                                 AggregatorParams& grads, AggregateScratch& s) {
    const int D = P.feat_dim, H = P.hidden;
    std::vector<double> out(size_t(D), 0.0);
    int V = aggregate_voxel(P, feats, valid, views, out.data(), s);
    if (V == 0) return;

    // d alpha_n = dout . fp_n ; softmax backward to logits w_n.
    std::vector<double> dalpha(size_t(V), 0.0), dw(size_t(V), 0.0);
    double inner = 0;
    for (int n = 0; n < V; ++n) {
        double a = 0;
        for (int d = 0; d < D; ++d) a += dout[d] * s.fp[size_t(n) * D + d];
        dalpha[size_t(n)] = a;
        inner += s.alpha[size_t(n)] * a;
    }
    for (int n = 0; n < V; ++n)
        dw[size_t(n)] = s.alpha[size_t(n)] * (dalpha[size_t(n)] - inner);

    for (int n = 0; n < V; ++n) {
        int v = s.valid_idx[size_t(n)];
        for (int d = 0; d < D; ++d) {
            s.x[size_t(d)] = feats[size_t(v) * D + d];
            s.x[size_t(D + d)] = s.mu[size_t(d)];
            s.x[size_t(2 * D + d)] = s.var[size_t(d)];
        }
        const double* h1 = s.h1.data() + size_t(n) * H;
        const double* h2 = s.h2.data() + size_t(n) * H;
        const double* g1 = s.g1.data() + size_t(n) * H;

        // Feature MLP: dfp = alpha_n * dout.
        for (int d = 0; d < D; ++d) s.dfp[size_t(d)] = s.alpha[size_t(n)] * dout[d];
        std::fill(s.dh.begin(), s.dh.end(), 0.0);
        detail::linear_grad(H, D, P.feat_w3, h2, s.dfp.data(), grads.feat_w3, grads.feat_b3,
                            s.dh.data());
        for (int i = 0; i < H; ++i) s.da[size_t(i)] = s.dh[size_t(i)] * (1.0 - h2[i] * h2[i]);
        std::fill(s.dh.begin(), s.dh.end(), 0.0);
        detail::linear_grad(H, H, P.feat_w2, h1, s.da.data(), grads.feat_w2, grads.feat_b2,
                            s.dh.data());
        for (int i = 0; i < H; ++i) s.da[size_t(i)] = s.dh[size_t(i)] * (1.0 - h1[i] * h1[i]);
        detail::linear_grad(3 * D, H, P.feat_w1, s.x.data(), s.da.data(), grads.feat_w1,
                            grads.feat_b1, nullptr);

        // Weight MLP: scalar logit gradient dw[n].
        std::fill(s.dh.begin(), s.dh.end(), 0.0);
        detail::linear_grad(H, 1, P.wt_w2, g1, &dw[size_t(n)], grads.wt_w2, grads.wt_b2,
                            s.dh.data());
        for (int i = 0; i < H; ++i) s.da[size_t(i)] = s.dh[size_t(i)] * (1.0 - g1[i] * g1[i]);
        detail::linear_grad(3 * D, H, P.wt_w1, s.x.data(), s.da.data(), grads.wt_w1, grads.wt_b1,
                            nullptr);
    }
}

// Dense per-view lifted grid plus a validity flag per voxel.
struct PerViewGrid {
    DenseGrid grid;
    std::vector<uint8_t> validity;
};

struct PerViewSparse {
    SparseGrid grid;
    std::vector<uint8_t> validity;
};

struct ConditionGrid {
    DenseGrid grid;
    std::vector<int> coverage;  // valid contributing views per voxel
};

struct SparseConditionGrid {
    SparseGrid grid;
    std::vector<int> coverage;
};

// Project every voxel center (grid frame + t_c) into the view and sample its
// feature map. Invalid projections leave zero features and validity 0.
inline PerViewGrid lift_view(const CameraView& view, const Vec3& origin, double voxel_size,
                             const std::array<int, 3>& dims, const Vec3& t_c,
                             Interp interp = Interp::Bilinear) {
    if (!view.feature_map) throw FormatError("lift_view: view has no feature map");
    const FeatureMap& fm = *view.feature_map;
    PerViewGrid out;
    out.grid = DenseGrid::make(origin, voxel_size, dims, fm.channels);
    out.validity.assign(size_t(out.grid.voxel_count()), 0);
    for (int i = 0; i < dims[0]; ++i)
        for (int j = 0; j < dims[1]; ++j)
            for (int k = 0; k < dims[2]; ++k) {
                Vec3 x = world_from_chunk(t_c, out.grid.voxel_center(i, j, k));
                Projection p = project(view, x);
                if (!p.valid) continue;
                std::vector<float> buf(size_t(fm.channels), 0.0f);
                sample_feature(fm, p.u, p.v, buf.data(), interp);
                float* dst = out.grid.at(i, j, k);
                for (int ch = 0; ch < fm.channels; ++ch) dst[ch] = buf[size_t(ch)];
                out.validity[size_t(out.grid.voxel_index(i, j, k))] = 1;
            }
    return out;
}

inline PerViewSparse lift_view_sparse(const CameraView& view, const SparseGrid& structure,
                                      const Vec3& t_c, Interp interp = Interp::Bilinear) {
    if (!view.feature_map) throw FormatError("lift_view: view has no feature map");
    const FeatureMap& fm = *view.feature_map;
    PerViewSparse out;
    out.grid.origin = structure.origin;
    out.grid.voxel_size = structure.voxel_size;
    out.grid.dims = structure.dims;
    out.grid.channels = fm.channels;
    out.grid.coords = structure.coords;
    out.grid.data.assign(structure.coords.size() * size_t(fm.channels), 0.0f);
    out.validity.assign(structure.coords.size(), 0);
    std::vector<float> buf(size_t(fm.channels), 0.0f);
    for (size_t n = 0; n < structure.coords.size(); ++n) {
        Vec3 x = world_from_chunk(t_c, out.grid.voxel_center(structure.coords[n]));
        Projection p = project(view, x);
        if (!p.valid) continue;
        sample_feature(fm, p.u, p.v, buf.data(), interp);
        for (int ch = 0; ch < fm.channels; ++ch)
            out.grid.data[n * size_t(fm.channels) + ch] = buf[size_t(ch)];
        out.validity[n] = 1;
    }
    return out;
}

// Aggregate per-view grids voxel by voxel. All grids must share the spatial
// spec; statistics run over views with a valid sample at each voxel.
inline ConditionGrid aggregate(const std::vector<PerViewGrid>& per_view,
                               const AggregatorParams& params, int threads = 1) {
    if (per_view.empty()) throw FormatError("aggregate: need at least one per-view grid");
    const DenseGrid& ref = per_view[0].grid;
    for (const auto& g : per_view) {
        if (!g.grid.same_spec(ref)) throw ConstraintError("aggregate: mismatched grid specs");
        if (g.grid.channels != params.feat_dim)
            throw ConstraintError("aggregate: channel count != aggregator feat_dim");
    }
    const int V = int(per_view.size());
    const int D = params.feat_dim;
    ConditionGrid out;
    out.grid = DenseGrid::make(ref.origin, ref.voxel_size, ref.dims, D);
    out.coverage.assign(size_t(ref.voxel_count()), 0);

    parallel_for(ref.voxel_count(), threads, [&](int64_t lo, int64_t hi) {
        AggregateScratch scratch;
        std::vector<double> feats(size_t(V) * D);
        std::vector<uint8_t> valid(size_t(V), 0);
        std::vector<double> res(size_t(D), 0.0);
        for (int64_t vox = lo; vox < hi; ++vox) {
            for (int v = 0; v < V; ++v) {
                valid[size_t(v)] = per_view[size_t(v)].validity[size_t(vox)];
                const float* src = per_view[size_t(v)].grid.data.data() + vox * D;
                for (int d = 0; d < D; ++d) feats[size_t(v) * D + d] = src[d];
            }
            int cov = aggregate_voxel(params, feats.data(), valid.data(), V, res.data(), scratch);
            out.coverage[size_t(vox)] = cov;
            float* dst = out.grid.data.data() + vox * D;
            for (int d = 0; d < D; ++d) dst[d] = float(res[size_t(d)]);
        }
    });
    return out;
}

inline SparseConditionGrid aggregate_sparse(const std::vector<PerViewSparse>& per_view,
                                            const AggregatorParams& params, int threads = 1) {
    if (per_view.empty()) throw FormatError("aggregate: need at least one per-view grid");
    const SparseGrid& ref = per_view[0].grid;
    for (const auto& g : per_view) {
        if (g.grid.coords != ref.coords || g.grid.channels != params.feat_dim)
            throw ConstraintError("aggregate: mismatched sparse structures");
    }
    const int V = int(per_view.size());
    const int D = params.feat_dim;
    SparseConditionGrid out;
    out.grid.origin = ref.origin;
    out.grid.voxel_size = ref.voxel_size;
    out.grid.dims = ref.dims;
    out.grid.channels = D;
    out.grid.coords = ref.coords;
    out.grid.data.assign(ref.coords.size() * size_t(D), 0.0f);
    out.coverage.assign(ref.coords.size(), 0);

    parallel_for(int64_t(ref.coords.size()), threads, [&](int64_t lo, int64_t hi) {
        AggregateScratch scratch;
        std::vector<double> feats(size_t(V) * D);
        std::vector<uint8_t> valid(size_t(V), 0);
        std::vector<double> res(size_t(D), 0.0);
        for (int64_t vox = lo; vox < hi; ++vox) {
            for (int v = 0; v < V; ++v) {
                valid[size_t(v)] = per_view[size_t(v)].validity[size_t(vox)];
                const float* src = per_view[size_t(v)].grid.data.data() + vox * D;
                for (int d = 0; d < D; ++d) feats[size_t(v) * D + d] = src[d];
            }
            int cov = aggregate_voxel(params, feats.data(), valid.data(), V, res.data(), scratch);
            out.coverage[size_t(vox)] = cov;
            float* dst = out.grid.data.data() + vox * D;
            for (int d = 0; d < D; ++d) dst[d] = float(res[size_t(d)]);
        }
    });
    return out;
}

// Lift + aggregate fused over the scene grid (t_c = 0): equivalent to
// aggregating full lift_view outputs but without holding V dense grids.
inline ConditionGrid build_global_condition(const std::vector<CameraView>& views,
                                            const Vec3& origin, double voxel_size,
                                            const std::array<int, 3>& dims,
                                            const AggregatorParams& params, int threads = 1,
                                            Interp interp = Interp::Bilinear) {
    if (views.empty()) throw FormatError("build_global_condition: no views");
    for (const auto& v : views)
        if (!v.feature_map || v.feature_map->channels != params.feat_dim)
            throw FormatError("build_global_condition: views need feature maps of feat_dim");
    const int V = int(views.size());
    const int D = params.feat_dim;
    ConditionGrid out;
    out.grid = DenseGrid::make(origin, voxel_size, dims, D);
    out.coverage.assign(size_t(out.grid.voxel_count()), 0);
    const int64_t ny = dims[1], nz = dims[2];

    parallel_for(out.grid.voxel_count(), threads, [&](int64_t lo, int64_t hi) {
        AggregateScratch scratch;
        std::vector<double> feats(size_t(V) * D);
        std::vector<uint8_t> valid(size_t(V), 0);
        std::vector<float> buf(size_t(D), 0.0f);
        std::vector<double> res(size_t(D), 0.0);
        for (int64_t vox = lo; vox < hi; ++vox) {
            int i = int(vox / (ny * nz));
            int j = int((vox / nz) % ny);
            int k = int(vox % nz);
            Vec3 x = out.grid.voxel_center(i, j, k);
            for (int v = 0; v < V; ++v) {
                Projection p = project(views[size_t(v)], x);
                valid[size_t(v)] = p.valid ? 1 : 0;
                if (p.valid) {
                    sample_feature(*views[size_t(v)].feature_map, p.u, p.v, buf.data(), interp);
                    for (int d = 0; d < D; ++d) feats[size_t(v) * D + d] = buf[size_t(d)];
                } else {
                    for (int d = 0; d < D; ++d) feats[size_t(v) * D + d] = 0.0;
                }
            }
            int cov = aggregate_voxel(params, feats.data(), valid.data(), V, res.data(), scratch);
            out.coverage[size_t(vox)] = cov;
            float* dst = out.grid.data.data() + vox * D;
            for (int d = 0; d < D; ++d) dst[d] = float(res[size_t(d)]);
        }
    });
    return out;
}

// Index-exact crop of the global condition to a voxel-index box. The crop is
// re-based to the given origin (chunk crops use the canonical frame, origin 0).
inline ConditionGrid crop_condition(const ConditionGrid& global, const IndexBox& box,
                                    const Vec3& crop_origin = {0, 0, 0}) {
    if (box.lo[0] < 0 || box.lo[1] < 0 || box.lo[2] < 0 || box.hi[0] > global.grid.dims[0] ||
        box.hi[1] > global.grid.dims[1] || box.hi[2] > global.grid.dims[2])
        throw ConstraintError("condition crop box exceeds grid bounds");
    const int D = global.grid.channels;
    ConditionGrid out;
    out.grid = DenseGrid::make(crop_origin, global.grid.voxel_size,
                               {box.hi[0] - box.lo[0], box.hi[1] - box.lo[1],
                                box.hi[2] - box.lo[2]},
                               D);
    out.coverage.assign(size_t(out.grid.voxel_count()), 0);
    for (int i = box.lo[0]; i < box.hi[0]; ++i)
        for (int j = box.lo[1]; j < box.hi[1]; ++j)
            for (int k = box.lo[2]; k < box.hi[2]; ++k) {
                int64_t src = global.grid.voxel_index(i, j, k);
                int64_t dst = out.grid.voxel_index(i - box.lo[0], j - box.lo[1], k - box.lo[2]);
                std::copy_n(global.grid.data.data() + src * D, D, out.grid.data.data() + dst * D);
                out.coverage[size_t(dst)] = global.coverage[size_t(src)];
            }
    return out;
}

inline ConditionGrid crop_condition(const ConditionGrid& global, const Chunk& chunk) {
    IndexBox box = chunk_mask(chunk, global.grid.origin, global.grid.voxel_size,
                              global.grid.dims);
    return crop_condition(global, box);
}

inline SparseConditionGrid crop_condition_sparse(const SparseConditionGrid& global,
                                                 const IndexBox& box,
                                                 const Vec3& crop_origin = {0, 0, 0}) {
    const int D = global.grid.channels;
    SparseConditionGrid out;
    out.grid.origin = crop_origin;
    out.grid.voxel_size = global.grid.voxel_size;
    out.grid.dims = {box.hi[0] - box.lo[0], box.hi[1] - box.lo[1], box.hi[2] - box.lo[2]};
    out.grid.channels = D;
    for (size_t n = 0; n < global.grid.coords.size(); ++n) {
        const auto& c = global.grid.coords[n];
        if (!box.contains(c[0], c[1], c[2])) continue;
        out.grid.coords.push_back({c[0] - box.lo[0], c[1] - box.lo[1], c[2] - box.lo[2]});
        for (int d = 0; d < D; ++d)
            out.grid.data.push_back(global.grid.data[n * size_t(D) + size_t(d)]);
        out.coverage.push_back(global.coverage[n]);
    }
    return out;
}

inline SparseConditionGrid crop_condition_sparse(const SparseConditionGrid& global,
                                                 const Chunk& chunk) {
    IndexBox box = chunk_mask(chunk, global.grid.origin, global.grid.voxel_size,
                              global.grid.dims);
    return crop_condition_sparse(global, box);
}

}  // namespace chunkgen

#endif
