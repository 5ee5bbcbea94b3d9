#ifndef CHUNKGEN_TOYNET_HPP
#define CHUNKGEN_TOYNET_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "chunkgen/condition.hpp"
#include "chunkgen/flowgen.hpp"
#include "chunkgen/toyscene.hpp"

namespace chunkgen {

// Small trainable denoiser used to exercise the full generation stack on
// synthetic scenes. Per-voxel MLP blocks with a depthwise 3x3x3 neighbor mix,
// a residual connection, and a zero-initialized projection of the aggregated
// view condition added after every block. Gradients are hand-rolled.

struct ToyNetConfig {
    // condition row layout: aggregated view features (cond_dim - 6), the
    // cross-view variance channel, the minimum pairwise view distance,
    // normalized chunk-local position (3), and normalized view coverage
    int channels = 4;    // latent channels
    int hidden = 32;
    int blocks = 4;
    int cond_dim = 20;
    int time_feats = 8;  // sin/cos pairs at frequencies 1, 2, 4, ...

    void validate() const {
        if (channels < 1) throw ConstraintError("toynet: channels must be positive");
        if (hidden < 1) throw ConstraintError("toynet: hidden must be positive");
        if (blocks < 1) throw ConstraintError("toynet: blocks must be positive");
        if (cond_dim < 2) throw ConstraintError("toynet: cond_dim must be at least 2");
        if (time_feats < 2 || time_feats > 16 || time_feats % 2 != 0)
            throw ConstraintError("toynet: time_feats must be even, in [2, 16]");
    }
};

inline void time_features(double t, int n, double* out) {
    const double two_pi = 6.283185307179586476925287;
    double f = 1.0;
    for (int i = 0; i < n; i += 2) {
        out[i] = std::sin(two_pi * f * t);
        out[i + 1] = std::cos(two_pi * f * t);
        f *= 2.0;
    }
}

struct ToyDenoiserParams {
    ToyNetConfig cfg;
    std::vector<double> stem_w, stem_b;  // hidden x (channels + time_feats)
    std::vector<std::vector<double>> aff_w, aff_b;    // per block, hidden x hidden
    std::vector<std::vector<double>> mix_w;           // per block, hidden x 27
    std::vector<std::vector<double>> cond_w, cond_b;  // per block, hidden x cond_dim
    std::vector<double> head_w, head_b;  // channels x hidden

    // cond_w / cond_b start at zero so a fresh network ignores the condition
    // entirely; everything else is uniform +-1/sqrt(fan_in).
    static ToyDenoiserParams init(const ToyNetConfig& cfg, Rng& rng) {
        cfg.validate();
        ToyDenoiserParams p;
        p.cfg = cfg;
        auto fill = [&rng](std::vector<double>& v, size_t n, int fan_in) {
            double s = 1.0 / std::sqrt(double(fan_in));
            v.resize(n);
            for (auto& x : v) x = rng.uniform(-s, s);
        };
        const int in_dim = cfg.channels + cfg.time_feats;
        const size_t h = size_t(cfg.hidden);
        fill(p.stem_w, h * size_t(in_dim), in_dim);
        fill(p.stem_b, h, in_dim);
        for (int b = 0; b < cfg.blocks; ++b) {
            p.aff_w.emplace_back();
            fill(p.aff_w.back(), h * h, cfg.hidden);
            p.aff_b.emplace_back();
            fill(p.aff_b.back(), h, cfg.hidden);
            p.mix_w.emplace_back();
            fill(p.mix_w.back(), h * 27, 27);
            p.cond_w.emplace_back(h * size_t(cfg.cond_dim), 0.0);
            p.cond_b.emplace_back(h, 0.0);
        }
        fill(p.head_w, size_t(cfg.channels) * h, cfg.hidden);
        fill(p.head_b, size_t(cfg.channels), cfg.hidden);
        return p;
    }

    ToyDenoiserParams zeros_like() const {
        ToyDenoiserParams g = *this;
        g.for_each_buffer([](const std::string&, std::vector<double>& v) {
            std::fill(v.begin(), v.end(), 0.0);
        });
        return g;
    }

    template <class F>
    void for_each_buffer(F&& f) {
        f(std::string("stem_w"), stem_w);
        f(std::string("stem_b"), stem_b);
        for (int b = 0; b < cfg.blocks; ++b) {
            f(strfmt("block%d_aff_w", b), aff_w[b]);
            f(strfmt("block%d_aff_b", b), aff_b[b]);
            f(strfmt("block%d_mix_w", b), mix_w[b]);
            f(strfmt("block%d_cond_w", b), cond_w[b]);
            f(strfmt("block%d_cond_b", b), cond_b[b]);
        }
        f(std::string("head_w"), head_w);
        f(std::string("head_b"), head_b);
    }

    size_t count() const {
        size_t n = stem_w.size() + stem_b.size() + head_w.size() + head_b.size();
        for (int b = 0; b < cfg.blocks; ++b)
            n += aff_w[b].size() + aff_b[b].size() + mix_w[b].size() + cond_w[b].size() +
                 cond_b[b].size();
        return n;
    }
};

// 27-neighborhood index table for the depthwise mix, shared by the dense and
// sparse lattices. Entry -1 marks a missing neighbor (outside the crop, or
// absent from the sparse structure).
struct NeighborTable {
    int64_t voxels = 0;
    std::vector<int32_t> nbr;  // voxels x 27

    static NeighborTable dense(const std::array<int, 3>& dims) {
        NeighborTable t;
        const int64_t nx = dims[0], ny = dims[1], nz = dims[2];
        t.voxels = nx * ny * nz;
        t.nbr.assign(size_t(t.voxels) * 27, -1);
        int64_t n = 0;
        for (int64_t i = 0; i < nx; ++i)
            for (int64_t j = 0; j < ny; ++j)
                for (int64_t k = 0; k < nz; ++k, ++n) {
                    int32_t* row = &t.nbr[size_t(n) * 27];
                    int o = 0;
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj)
                            for (int dk = -1; dk <= 1; ++dk, ++o) {
                                int64_t ni = i + di, nj = j + dj, nk = k + dk;
                                if (ni < 0 || nj < 0 || nk < 0 || ni >= nx || nj >= ny || nk >= nz)
                                    continue;
                                row[o] = int32_t((ni * ny + nj) * nz + nk);
                            }
                }
        return t;
    }

    // coords must be sorted lexicographically (the sparse-grid invariant).
    static NeighborTable sparse(const std::vector<std::array<int, 3>>& coords) {
        NeighborTable t;
        t.voxels = int64_t(coords.size());
        t.nbr.assign(size_t(t.voxels) * 27, -1);
        for (size_t n = 0; n < coords.size(); ++n) {
            const auto& c = coords[n];
            int32_t* row = &t.nbr[n * 27];
            int o = 0;
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj)
                    for (int dk = -1; dk <= 1; ++dk, ++o) {
                        std::array<int, 3> q{c[0] + di, c[1] + dj, c[2] + dk};
                        auto it = std::lower_bound(coords.begin(), coords.end(), q);
                        if (it != coords.end() && *it == q) row[o] = int32_t(it - coords.begin());
                    }
        }
        return t;
    }
};

// Forward activations kept for the backward pass.
struct ToyNetWork {
    std::vector<double> in;                   // voxels x (channels + time_feats)
    std::vector<std::vector<double>> hs;      // blocks + 1 states, voxels x hidden
    std::vector<std::vector<double>> us, as;  // per block: affine out, post-tanh mix
    std::vector<double> dh, du;               // backward scratch
};

// cond is voxels x cond_dim, or nullptr for the unconditioned path (which is
// identical to feeding all-zero condition rows).
inline void toy_forward(const ToyDenoiserParams& P, const NeighborTable& nt, const double* x,
                        double t, const double* cond, double* out, ToyNetWork& w) {
    const ToyNetConfig& cfg = P.cfg;
    const int C = cfg.channels, H = cfg.hidden, T = cfg.time_feats, Dc = cfg.cond_dim;
    const int B = cfg.blocks, in_dim = C + T;
    const int64_t V = nt.voxels;

    double tf[16] = {0};
    time_features(t, T, tf);
    w.in.resize(size_t(V) * in_dim);
    for (int64_t i = 0; i < V; ++i) {
        double* dst = &w.in[size_t(i) * in_dim];
        for (int c = 0; c < C; ++c) dst[c] = x[i * C + c];
        for (int c = 0; c < T; ++c) dst[C + c] = tf[c];
    }

    w.hs.resize(size_t(B) + 1);
    w.us.resize(size_t(B));
    w.as.resize(size_t(B));
    auto& h0 = w.hs[0];
    h0.resize(size_t(V) * H);
    for (int64_t i = 0; i < V; ++i) {
        double* hi = &h0[size_t(i) * H];
        detail::linear(in_dim, H, P.stem_w, P.stem_b, &w.in[size_t(i) * in_dim], hi);
        for (int c = 0; c < H; ++c) hi[c] = std::tanh(hi[c]);
    }

    const std::vector<double> zero_row(size_t(Dc), 0.0);
    for (int b = 0; b < B; ++b) {
        const auto& h = w.hs[b];
        auto& u = w.us[b];
        auto& a = w.as[b];
        auto& hn = w.hs[b + 1];
        u.resize(size_t(V) * H);
        a.resize(size_t(V) * H);
        hn.resize(size_t(V) * H);
        for (int64_t i = 0; i < V; ++i)
            detail::linear(H, H, P.aff_w[b], P.aff_b[b], &h[size_t(i) * H], &u[size_t(i) * H]);
        const std::vector<double>& mw = P.mix_w[b];
        for (int64_t i = 0; i < V; ++i) {
            const int32_t* row = &nt.nbr[size_t(i) * 27];
            double* m = &a[size_t(i) * H];
            std::fill(m, m + H, 0.0);
            for (int o = 0; o < 27; ++o) {
                int32_t j = row[o];
                if (j < 0) continue;
                const double* uj = &u[size_t(j) * H];
                for (int c = 0; c < H; ++c) m[c] += mw[size_t(c) * 27 + o] * uj[c];
            }
            for (int c = 0; c < H; ++c) m[c] = std::tanh(m[c]);
        }
        for (int64_t i = 0; i < V; ++i) {
            const double* ci = cond ? &cond[size_t(i) * Dc] : zero_row.data();
            double* dst = &hn[size_t(i) * H];
            detail::linear(Dc, H, P.cond_w[b], P.cond_b[b], ci, dst);
            const double* hi = &h[size_t(i) * H];
            const double* ai = &a[size_t(i) * H];
            for (int c = 0; c < H; ++c) dst[c] += hi[c] + ai[c];
        }
    }
    const auto& hl = w.hs[B];
    for (int64_t i = 0; i < V; ++i)
        detail::linear(H, C, P.head_w, P.head_b, &hl[size_t(i) * H], &out[i * C]);
}

// Accumulates parameter gradients into g (caller zeroes). dcond, if given,
// receives the gradient w.r.t. the condition rows (caller zeroes; the last
// channel is left untouched only by callers that know it is non-trainable).
inline void toy_backward(const ToyDenoiserParams& P, const NeighborTable& nt, const double* dout,
                         const double* cond, ToyNetWork& w, ToyDenoiserParams& g, double* dcond) {
    const ToyNetConfig& cfg = P.cfg;
    const int C = cfg.channels, H = cfg.hidden, T = cfg.time_feats, Dc = cfg.cond_dim;
    const int B = cfg.blocks, in_dim = C + T;
    const int64_t V = nt.voxels;

    const std::vector<double> zero_row(size_t(Dc), 0.0);
    w.dh.assign(size_t(V) * H, 0.0);
    w.du.assign(size_t(V) * H, 0.0);
    auto& dh = w.dh;
    auto& du = w.du;

    const auto& hl = w.hs[B];
    for (int64_t i = 0; i < V; ++i)
        detail::linear_grad(H, C, P.head_w, &hl[size_t(i) * H], &dout[i * C], g.head_w, g.head_b,
                            &dh[size_t(i) * H]);

    std::vector<double> dm(size_t(H), 0.0);
    for (int b = B - 1; b >= 0; --b) {
        const auto& h = w.hs[b];
        const auto& u = w.us[b];
        const auto& a = w.as[b];
        for (int64_t i = 0; i < V; ++i) {
            const double* ci = cond ? &cond[size_t(i) * Dc] : zero_row.data();
            detail::linear_grad(Dc, H, P.cond_w[b], ci, &dh[size_t(i) * H], g.cond_w[b],
                                g.cond_b[b], (dcond && cond) ? &dcond[size_t(i) * Dc] : nullptr);
        }
        std::fill(du.begin(), du.end(), 0.0);
        const std::vector<double>& mw = P.mix_w[b];
        std::vector<double>& gmw = g.mix_w[b];
        for (int64_t i = 0; i < V; ++i) {
            const double* ai = &a[size_t(i) * H];
            const double* dhi = &dh[size_t(i) * H];
            for (int c = 0; c < H; ++c) dm[c] = dhi[c] * (1.0 - ai[c] * ai[c]);
            const int32_t* row = &nt.nbr[size_t(i) * 27];
            for (int o = 0; o < 27; ++o) {
                int32_t j = row[o];
                if (j < 0) continue;
                const double* uj = &u[size_t(j) * H];
                double* duj = &du[size_t(j) * H];
                for (int c = 0; c < H; ++c) {
                    gmw[size_t(c) * 27 + o] += dm[c] * uj[c];
                    duj[c] += mw[size_t(c) * 27 + o] * dm[c];
                }
            }
        }
        // the residual branch leaves dh in place; linear_grad accumulates the
        // affine input gradient on top of it
        for (int64_t i = 0; i < V; ++i)
            detail::linear_grad(H, H, P.aff_w[b], &h[size_t(i) * H], &du[size_t(i) * H],
                                g.aff_w[b], g.aff_b[b], &dh[size_t(i) * H]);
    }

    const auto& h0 = w.hs[0];
    for (int64_t i = 0; i < V; ++i) {
        double* dpre = &du[size_t(i) * H];
        const double* hi = &h0[size_t(i) * H];
        const double* dhi = &dh[size_t(i) * H];
        for (int c = 0; c < H; ++c) dpre[c] = dhi[c] * (1.0 - hi[c] * hi[c]);
        detail::linear_grad(in_dim, H, P.stem_w, &w.in[size_t(i) * in_dim], dpre, g.stem_w,
                            g.stem_b, nullptr);
    }
}

namespace detail {

// Condition rows fed to the network: the condition-grid channels, the voxel's
// normalized position within the crop, and the view coverage normalized by
// the maximum supported view count.
inline void toy_condition_rows_dense(const float* feats, const int* coverage,
                                     const std::array<int, 3>& dims, int feat, int cond_dim,
                                     std::vector<double>& out) {
    const int64_t voxels = int64_t(dims[0]) * dims[1] * dims[2];
    out.assign(size_t(voxels) * cond_dim, 0.0);
    int64_t i = 0;
    for (int x = 0; x < dims[0]; ++x)
        for (int y = 0; y < dims[1]; ++y)
            for (int z = 0; z < dims[2]; ++z, ++i) {
                double* row = &out[size_t(i) * cond_dim];
                for (int d = 0; d < feat; ++d) row[d] = feats[i * feat + d];
                row[feat] = (x + 0.5) / dims[0];
                row[feat + 1] = (y + 0.5) / dims[1];
                row[feat + 2] = (z + 0.5) / dims[2];
                row[cond_dim - 1] = coverage[i] / 16.0;
            }
}

inline void toy_condition_rows_sparse(const float* feats, const int* coverage,
                                      const std::vector<std::array<int, 3>>& coords,
                                      const std::array<int, 3>& dims, int feat, int cond_dim,
                                      std::vector<double>& out) {
    out.assign(coords.size() * size_t(cond_dim), 0.0);
    for (size_t i = 0; i < coords.size(); ++i) {
        double* row = &out[i * size_t(cond_dim)];
        for (int d = 0; d < feat; ++d) row[d] = feats[i * size_t(feat) + d];
        for (int a = 0; a < 3; ++a) row[feat + a] = (coords[i][size_t(a)] + 0.5) / dims[size_t(a)];
        row[cond_dim - 1] = coverage[i] / 16.0;
    }
}

// Photometric consistency cue: rms cross-view deviation of the first three
// feature channels (the patch color means), scaled to order one. Low on
// surfaces (views agree), high in free space (views see different surfaces).
inline double view_variance(const double* feats, const uint8_t* valid, int views, int feat) {
    int n = 0;
    for (int v = 0; v < views; ++v) n += valid[v] ? 1 : 0;
    if (n < 2) return 0.0;
    const int used = std::min(feat, 3);
    double acc = 0.0;
    for (int d = 0; d < used; ++d) {
        double mu = 0.0;
        for (int v = 0; v < views; ++v)
            if (valid[v]) mu += feats[size_t(v) * feat + d];
        mu /= n;
        double s = 0.0;
        for (int v = 0; v < views; ++v)
            if (valid[v]) {
                double e = feats[size_t(v) * feat + d] - mu;
                s += e * e;
            }
        acc += s / n;
    }
    return 4.0 * std::sqrt(acc / used);
}

// Occlusion-robust consistency cue: the smallest pairwise color distance
// among the valid views. Near zero whenever at least two views agree on the
// surface, regardless of how many other views are blocked.
inline double view_min_pair(const double* feats, const uint8_t* valid, int views, int feat) {
    const int used = std::min(feat, 3);
    double best = -1.0;
    for (int a = 0; a < views; ++a) {
        if (!valid[a]) continue;
        for (int b = a + 1; b < views; ++b) {
            if (!valid[b]) continue;
            double d2 = 0.0;
            for (int d = 0; d < used; ++d) {
                double e = feats[size_t(a) * feat + d] - feats[size_t(b) * feat + d];
                d2 += e * e;
            }
            if (best < 0.0 || d2 < best) best = d2;
        }
    }
    return best < 0.0 ? 0.0 : 4.0 * std::sqrt(best / used);
}

template <class Params>
inline void zero_buffers(Params& p) {
    p.for_each_buffer(
        [](const auto&, std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
}

template <class Params>
inline void scale_buffers(Params& p, double a) {
    p.for_each_buffer([a](const auto&, std::vector<double>& v) {
        for (double& x : v) x *= a;
    });
}

template <class Params>
inline void axpy_buffers(Params& p, Params& g, double a) {
    std::vector<std::vector<double>*> dst;
    p.for_each_buffer([&dst](const auto&, std::vector<double>& v) { dst.push_back(&v); });
    size_t idx = 0;
    g.for_each_buffer([&](const auto&, std::vector<double>& gv) {
        std::vector<double>& pv = *dst[idx++];
        for (size_t n = 0; n < gv.size(); ++n) pv[n] += a * gv[n];
    });
}

// Adam moments for one parameter set, buffers laid out to mirror
// for_each_buffer order.
template <class Params>
struct AdamState {
    Params m, v;
    int64_t t = 0;

    explicit AdamState(const Params& p) : m(p.zeros_like()), v(p.zeros_like()) {}

    // g holds the batch-mean gradient; lr already carries any schedule.
    void step(Params& p, Params& g, double lr) {
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t;
        const double c1 = 1.0 - std::pow(b1, double(t));
        const double c2 = 1.0 - std::pow(b2, double(t));
        std::vector<std::vector<double>*> bufs;
        p.for_each_buffer([&bufs](const auto&, std::vector<double>& x) { bufs.push_back(&x); });
        g.for_each_buffer([&bufs](const auto&, std::vector<double>& x) { bufs.push_back(&x); });
        m.for_each_buffer([&bufs](const auto&, std::vector<double>& x) { bufs.push_back(&x); });
        const size_t nb = bufs.size() / 3;
        size_t idx = 0;
        v.for_each_buffer([&](const auto&, std::vector<double>& vv) {
            std::vector<double>& pv = *bufs[idx];
            std::vector<double>& gv = *bufs[nb + idx];
            std::vector<double>& mv = *bufs[2 * nb + idx];
            ++idx;
            for (size_t n = 0; n < gv.size(); ++n) {
                mv[n] = b1 * mv[n] + (1.0 - b1) * gv[n];
                vv[n] = b2 * vv[n] + (1.0 - b2) * gv[n] * gv[n];
                pv[n] -= lr * (mv[n] / c1) / (std::sqrt(vv[n] / c2) + eps);
            }
        });
    }
};

}  // namespace detail

// Dense-sampler adapter. An unconditioned call, or a condition grid with zero
// channels, runs the network with zero condition rows; that matches both the
// zero initialization of cond_w and the training-time condition dropout.
class ToyDenoiser final : public DenoiserInterface {
  public:
    explicit ToyDenoiser(const ToyDenoiserParams& params) : params_(&params) {
        params.cfg.validate();
    }

    void predict_velocity(const LatentCrop& latent, double t, const ConditionGrid& cond,
                          bool conditioned, std::vector<double>& velocity) override {
        const ToyNetConfig& cfg = params_->cfg;
        if (latent.channels != cfg.channels)
            throw ConstraintError(strfmt("toy denoiser: latent has %d channels, model wants %d",
                                         latent.channels, cfg.channels));
        if (latent.dims != nt_dims_) {
            nt_ = NeighborTable::dense(latent.dims);
            nt_dims_ = latent.dims;
        }
        const double* cptr = nullptr;
        if (conditioned && cond.grid.channels > 0) {
            if (cond.grid.channels != cfg.cond_dim - 4)
                throw ConstraintError(
                    strfmt("toy denoiser: condition has %d channels, model wants %d",
                           cond.grid.channels, cfg.cond_dim - 4));
            detail::toy_condition_rows_dense(cond.grid.data.data(), cond.coverage.data(),
                                             latent.dims, cond.grid.channels, cfg.cond_dim,
                                             cond_buf_);
            cptr = cond_buf_.data();
        }
        velocity.resize(latent.data.size());
        toy_forward(*params_, nt_, latent.data.data(), t, cptr, velocity.data(), work_);
    }

  private:
    const ToyDenoiserParams* params_;
    std::array<int, 3> nt_dims_{-1, -1, -1};
    NeighborTable nt_;
    std::vector<double> cond_buf_;
    ToyNetWork work_;
};

// Sparse-sampler adapter; the neighbor table follows the crop's coordinate
// list and is rebuilt whenever it changes.
class ToySparseDenoiser final : public SparseDenoiserInterface {
  public:
    explicit ToySparseDenoiser(const ToyDenoiserParams& params) : params_(&params) {
        params.cfg.validate();
    }

    void predict_velocity(const SparseLatentCrop& latent, double t,
                          const SparseConditionGrid& cond, bool conditioned,
                          std::vector<double>& velocity) override {
        const ToyNetConfig& cfg = params_->cfg;
        if (latent.channels != cfg.channels)
            throw ConstraintError(strfmt("toy denoiser: latent has %d channels, model wants %d",
                                         latent.channels, cfg.channels));
        if (latent.coords != nt_coords_) {
            nt_ = NeighborTable::sparse(latent.coords);
            nt_coords_ = latent.coords;
        }
        const double* cptr = nullptr;
        if (conditioned && cond.grid.channels > 0) {
            if (cond.grid.channels != cfg.cond_dim - 4)
                throw ConstraintError(
                    strfmt("toy denoiser: condition has %d channels, model wants %d",
                           cond.grid.channels, cfg.cond_dim - 4));
            if (int64_t(cond.grid.coords.size()) != nt_.voxels)
                throw ConstraintError("toy denoiser: condition/latent coordinate mismatch");
            detail::toy_condition_rows_sparse(cond.grid.data.data(), cond.coverage.data(),
                                              latent.coords, latent.dims, cond.grid.channels,
                                              cfg.cond_dim, cond_buf_);
            cptr = cond_buf_.data();
        }
        velocity.resize(latent.data.size());
        toy_forward(*params_, nt_, latent.data.data(), t, cptr, velocity.data(), work_);
    }

  private:
    const ToyDenoiserParams* params_;
    std::vector<std::array<int, 3>> nt_coords_;
    NeighborTable nt_;
    std::vector<double> cond_buf_;
    ToyNetWork work_;
};

// ---------------------------------------------------------------- training

// A generated scene reduced to what training needs: geometry for ground
// truth, and cameras whose images have been collapsed to feature maps.
struct TrainScene {
    ChunkLayout layout;
    std::vector<ColoredBox> solids;
    std::vector<CameraView> views;
};

inline TrainScene make_train_scene(const ToyScene& scene) {
    TrainScene out;
    out.layout = scene.layout;
    out.solids = scene.solids;
    out.views.reserve(scene.cameras.size());
    for (size_t i = 0; i < scene.cameras.size(); ++i) {
        CameraView v;
        v.intrinsics = scene.cameras[i].intrinsics;
        v.pose = scene.cameras[i].pose;
        if (!scene.cameras[i].image)
            throw ConstraintError("make_train_scene: camera has no image");
        v.feature_map = toy_descriptor(*scene.cameras[i].image, &scene.renders[i]);
        out.views.push_back(std::move(v));
    }
    return out;
}

// Ground-truth occupancy and color rasterized on a chunk's local lattice at
// res_multiplier times the latent resolution.
inline void chunk_gt_grids(const TrainScene& scene, const Chunk& chunk, int res_multiplier,
                           DenseGrid& occ, DenseGrid& col) {
    const int res = scene.layout.latent_res * res_multiplier;
    const double voxel = scene.layout.voxel_size() / res_multiplier;
    occ = DenseGrid::make(chunk.t_c, voxel, {res, res, res}, 1);
    col = DenseGrid::make(chunk.t_c, voxel, {res, res, res}, 3);
    rasterize_solids(scene.solids, occ, col);
}

// Clean latent for a chunk: channel 0 is +-logit_scale occupancy, channels
// 1..3 the voxel color (zero where empty).
inline void chunk_ground_truth(const TrainScene& scene, const Chunk& chunk, double logit_scale,
                               std::vector<double>& out) {
    DenseGrid occ, col;
    chunk_gt_grids(scene, chunk, 1, occ, col);
    const int64_t voxels = int64_t(occ.data.size());
    out.assign(size_t(voxels) * 4, 0.0);
    for (int64_t i = 0; i < voxels; ++i) {
        bool inside = occ.data[size_t(i)] > 0.5f;
        out[size_t(i) * 4] = inside ? logit_scale : -logit_scale;
        if (inside)
            for (int c = 0; c < 3; ++c) out[size_t(i) * 4 + 1 + c] = col.data[size_t(i) * 3 + c];
    }
}

struct ToyTrainConfig {
    int steps = 2000;
    int batch = 2;
    double lr = 5e-3;         // cosine-decayed to zero
    double dropout = 0.1;     // probability of training an item unconditioned
    int views_lo = 1;         // per-item view count, uniform in [lo, hi],
    int views_hi = 16;        // clamped to the scene's camera pool
    double logit_scale = 2.0;
    uint64_t seed = 0;

    void validate() const {
        if (steps < 1) throw ConstraintError("train: steps must be positive");
        if (batch < 1) throw ConstraintError("train: batch must be positive");
        if (!(lr >= 0.0)) throw ConstraintError("train: lr must be non-negative");
        if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConstraintError("train: dropout in [0, 1]");
        if (views_lo < 1 || views_hi < views_lo)
            throw ConstraintError("train: need 1 <= views_lo <= views_hi");
        if (!(logit_scale > 0.0)) throw ConstraintError("train: logit_scale must be positive");
    }
};

namespace detail {

// Per-voxel aggregation of lifted view features into network condition rows.
// Keeps the gathered per-view rows so the backward pass can reuse them.
struct CondWorkspace {
    std::vector<PerViewGrid> lifted;
    std::vector<double> feats;   // views x feat_dim, one voxel at a time
    std::vector<uint8_t> valid;  // views
    std::vector<double> rows;    // voxels x cond_dim
    AggregateScratch scratch;

    void gather(int64_t voxel, int feat) {
        const int k = int(lifted.size());
        feats.resize(size_t(k) * feat);
        valid.resize(size_t(k));
        for (int v = 0; v < k; ++v) {
            valid[v] = lifted[v].validity[size_t(voxel)];
            const float* src = lifted[v].grid.data.data() + size_t(voxel) * feat;
            for (int d = 0; d < feat; ++d) feats[size_t(v) * feat + d] = src[d];
        }
    }

    // rows are [aggregated features, cross-view variance, min pairwise
    // distance, position, cov / 16]
    void build(const AggregatorParams& agg, int cond_dim, const std::array<int, 3>& dims) {
        const int feat = agg.feat_dim;
        const int k = int(lifted.size());
        const int64_t voxels = int64_t(lifted.empty() ? 0 : lifted[0].validity.size());
        rows.assign(size_t(voxels) * cond_dim, 0.0);
        std::vector<double> out(size_t(feat), 0.0);
        int64_t i = 0;
        for (int x = 0; x < dims[0]; ++x)
            for (int y = 0; y < dims[1]; ++y)
                for (int z = 0; z < dims[2]; ++z, ++i) {
                    gather(i, feat);
                    int cov =
                        aggregate_voxel(agg, feats.data(), valid.data(), k, out.data(), scratch);
                    double* row = &rows[size_t(i) * cond_dim];
                    for (int d = 0; d < feat; ++d) row[d] = out[d];
                    row[feat] = view_variance(feats.data(), valid.data(), k, feat);
                    row[feat + 1] = view_min_pair(feats.data(), valid.data(), k, feat);
                    row[feat + 2] = (x + 0.5) / dims[0];
                    row[feat + 3] = (y + 0.5) / dims[1];
                    row[feat + 4] = (z + 0.5) / dims[2];
                    row[cond_dim - 1] = cov / 16.0;
                }
        (void)voxels;
    }

    // dcond rows carry cond_dim entries; only the first feat_dim are
    // differentiable, the coverage channel is a count.
    void backward(const AggregatorParams& agg, const double* dcond, int cond_dim,
                  AggregatorParams& grads) {
        const int feat = agg.feat_dim;
        const int k = int(lifted.size());
        const int64_t voxels = int64_t(lifted.empty() ? 0 : lifted[0].validity.size());
        for (int64_t i = 0; i < voxels; ++i) {
            gather(i, feat);
            aggregate_voxel_grad(agg, feats.data(), valid.data(), k, &dcond[size_t(i) * cond_dim],
                                 grads, scratch);
        }
    }
};

inline std::vector<int> sample_view_subset(Rng& rng, int pool, int lo, int hi) {
    int kmax = std::min(hi, pool);
    int klo = std::min(lo, kmax);
    int k = int(rng.uniform_int(uint64_t(klo), uint64_t(kmax)));
    std::vector<int> idx(size_t(pool), 0);
    for (int i = 0; i < pool; ++i) idx[size_t(i)] = i;
    for (int i = 0; i < k; ++i) {
        int j = int(rng.uniform_int(uint64_t(i), uint64_t(pool - 1)));
        std::swap(idx[size_t(i)], idx[size_t(j)]);
    }
    idx.resize(size_t(k));
    return idx;
}

inline void check_divergence(double loss, int& streak) {
    if (loss > 1e3) {
        if (++streak >= 100)
            throw ConstraintError("train: loss diverged (above 1e3 for 100 consecutive steps)");
    } else {
        streak = 0;
    }
}

}  // namespace detail

// Conditional flow-matching training of the chunk denoiser and the view
// aggregator, jointly, by plain gradient descent. Single-threaded; one RNG
// with a fixed draw order per batch item (scene, chunk, view count, view
// subset, dropout coin, time, noise) keeps runs reproducible. Returns the
// per-step mean loss.
inline std::vector<double> train(const std::vector<TrainScene>& scenes, ToyDenoiserParams& params,
                                 AggregatorParams& aggregator, const ToyTrainConfig& cfg) {
    cfg.validate();
    params.cfg.validate();
    if (scenes.empty()) throw ConstraintError("train: no scenes");
    if (aggregator.feat_dim != params.cfg.cond_dim - 6)
        throw ConstraintError("train: aggregator feat_dim must be cond_dim - 6");
    for (const auto& s : scenes) {
        if (s.views.empty()) throw ConstraintError("train: scene has no views");
        for (const auto& v : s.views)
            if (!v.feature_map) throw ConstraintError("train: view has no feature map");
    }

    const ToyNetConfig& net = params.cfg;
    const int res = scenes[0].layout.latent_res;
    const int64_t voxels = int64_t(res) * res * res;
    const int C = net.channels;
    const std::array<int, 3> dims{res, res, res};
    NeighborTable nt = NeighborTable::dense(dims);

    Rng rng(cfg.seed);
    ToyDenoiserParams pgrad = params.zeros_like();
    AggregatorParams agrad = aggregator.zeros_like();
    detail::AdamState<ToyDenoiserParams> popt(params);
    detail::AdamState<AggregatorParams> aopt(aggregator);
    ToyNetWork work;
    detail::CondWorkspace cond;
    std::vector<double> gt, zt, target, vhat, dout, dcond;
    const double pi = 3.14159265358979323846;

    std::vector<double> losses;
    losses.reserve(size_t(cfg.steps));
    int diverged = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        detail::zero_buffers(pgrad);
        detail::zero_buffers(agrad);
        double loss_sum = 0.0;
        for (int item = 0; item < cfg.batch; ++item) {
            const TrainScene& scene = scenes[rng.uniform_int(0, scenes.size() - 1)];
            const Chunk& chunk =
                scene.layout.chunks[rng.uniform_int(0, scene.layout.chunks.size() - 1)];
            std::vector<int> subset = detail::sample_view_subset(
                rng, int(scene.views.size()), cfg.views_lo, cfg.views_hi);
            bool drop = rng.uniform() < cfg.dropout;

            const double* cptr = nullptr;
            if (!drop) {
                cond.lifted.clear();
                for (int v : subset)
                    cond.lifted.push_back(lift_view(scene.views[size_t(v)], chunk.t_c,
                                                    scene.layout.voxel_size(), dims,
                                                    Vec3{0.0, 0.0, 0.0}));
                cond.build(aggregator, net.cond_dim, dims);
                cptr = cond.rows.data();
            }

            chunk_ground_truth(scene, chunk, cfg.logit_scale, gt);
            // noise times biased toward 0: late times are easy denoising, the
            // condition pathway only trains where the state carries no signal
            double u = rng.uniform();
            double t = u * u;
            zt.resize(gt.size());
            target.resize(gt.size());
            for (size_t i = 0; i < gt.size(); ++i) {
                double eps = rng.gaussian();
                zt[i] = (1.0 - t) * eps + t * gt[i];
                target[i] = gt[i] - eps;
            }

            vhat.resize(gt.size());
            toy_forward(params, nt, zt.data(), t, cptr, vhat.data(), work);
            const double norm = 1.0 / double(voxels * C);
            double loss = 0.0;
            dout.resize(gt.size());
            for (size_t i = 0; i < gt.size(); ++i) {
                double d = vhat[i] - target[i];
                loss += d * d * norm;
                dout[i] = 2.0 * d * norm;
            }
            loss_sum += loss;

            if (!drop) {
                dcond.assign(size_t(voxels) * net.cond_dim, 0.0);
                toy_backward(params, nt, dout.data(), cptr, work, pgrad, dcond.data());
                cond.backward(aggregator, dcond.data(), net.cond_dim, agrad);
            } else {
                toy_backward(params, nt, dout.data(), nullptr, work, pgrad, nullptr);
            }
        }

        double mean_loss = loss_sum / cfg.batch;
        losses.push_back(mean_loss);
        detail::check_divergence(mean_loss, diverged);

        double lr_t = cfg.lr * 0.5 * (1.0 + std::cos(pi * double(step) / double(cfg.steps)));
        detail::scale_buffers(pgrad, 1.0 / double(cfg.batch));
        detail::scale_buffers(agrad, 1.0 / double(cfg.batch));
        popt.step(params, pgrad, lr_t);
        aopt.step(aggregator, agrad, lr_t);
    }
    return losses;
}

namespace detail {

// Clean detail-stage latent on the refined lattice: channels 0..2 color,
// channel 3 the +-logit_scale refinement logit. Targets are evaluated by
// direct solid containment at the refined voxel centers.
inline void detail_ground_truth(const TrainScene& scene, const SparseGrid& structure,
                                double logit_scale, std::vector<double>& out) {
    const int64_t n = int64_t(structure.coords.size());
    out.assign(size_t(n) * 4, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        Vec3 p = structure.voxel_center(structure.coords[size_t(i)]);
        int hit = -1;
        for (size_t s = 0; s < scene.solids.size(); ++s)
            if (scene.solids[s].box.contains(p)) hit = int(s);
        double* row = &out[size_t(i) * 4];
        if (hit >= 0) {
            double shade = color_mod(p);
            for (int c2 = 0; c2 < 3; ++c2)
                row[c2] = scene.solids[size_t(hit)].rgb[size_t(c2)] * shade;
            row[3] = logit_scale;
        } else {
            row[3] = -logit_scale;
        }
    }
}

}  // namespace detail

// Detail-stage training: same flow-matching objective on the sparse refined
// lattice inside each chunk's occupied region. The aggregator is taken as
// trained by the occupancy stage and stays frozen here.
inline std::vector<double> train_detail(const std::vector<TrainScene>& scenes,
                                        ToyDenoiserParams& params,
                                        const AggregatorParams& aggregator,
                                        const ToyTrainConfig& cfg) {
    cfg.validate();
    params.cfg.validate();
    if (scenes.empty()) throw ConstraintError("train: no scenes");
    if (aggregator.feat_dim != params.cfg.cond_dim - 6)
        throw ConstraintError("train: aggregator feat_dim must be cond_dim - 6");

    const ToyNetConfig& net = params.cfg;
    const int C = net.channels;
    Rng rng(cfg.seed);
    ToyDenoiserParams pgrad = params.zeros_like();
    detail::AdamState<ToyDenoiserParams> popt(params);
    ToyNetWork work;
    detail::CondWorkspace cond;
    std::vector<double> gt, zt, target, vhat, dout;
    const double pi = 3.14159265358979323846;

    std::vector<double> losses;
    losses.reserve(size_t(cfg.steps));
    int diverged = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        detail::zero_buffers(pgrad);
        double loss_sum = 0.0;
        int counted = 0;
        for (int item = 0; item < cfg.batch; ++item) {
            const TrainScene& scene = scenes[rng.uniform_int(0, scenes.size() - 1)];
            const Chunk& chunk =
                scene.layout.chunks[rng.uniform_int(0, scene.layout.chunks.size() - 1)];
            std::vector<int> subset = detail::sample_view_subset(
                rng, int(scene.views.size()), cfg.views_lo, cfg.views_hi);
            bool drop = rng.uniform() < cfg.dropout;
            double t = rng.uniform();

            DenseGrid occ, col;
            chunk_gt_grids(scene, chunk, 1, occ, col);
            SparseGrid structure = upsample_occupancy(occ, C);
            const int64_t n = int64_t(structure.coords.size());
            if (n == 0) {
                // keep the draw order stable even for empty chunks
                continue;
            }
            NeighborTable nt = NeighborTable::sparse(structure.coords);

            const double* cptr = nullptr;
            if (!drop) {
                cond.lifted.clear();
                std::vector<PerViewSparse> lifted_sparse;
                for (int v : subset)
                    lifted_sparse.push_back(
                        lift_view_sparse(scene.views[size_t(v)], structure, Vec3{0.0, 0.0, 0.0}));
                // reuse the dense workspace layout by viewing the sparse rows
                cond.rows.assign(size_t(n) * net.cond_dim, 0.0);
                const int feat = aggregator.feat_dim;
                const int k = int(lifted_sparse.size());
                cond.feats.resize(size_t(k) * feat);
                cond.valid.resize(size_t(k));
                std::vector<double> out_row(size_t(feat), 0.0);
                for (int64_t i = 0; i < n; ++i) {
                    for (int v = 0; v < k; ++v) {
                        cond.valid[size_t(v)] = lifted_sparse[size_t(v)].validity[size_t(i)];
                        const float* src =
                            lifted_sparse[size_t(v)].grid.data.data() + size_t(i) * feat;
                        for (int d = 0; d < feat; ++d)
                            cond.feats[size_t(v) * feat + d] = src[d];
                    }
                    int cov = aggregate_voxel(aggregator, cond.feats.data(), cond.valid.data(), k,
                                              out_row.data(), cond.scratch);
                    double* row = &cond.rows[size_t(i) * net.cond_dim];
                    for (int d = 0; d < feat; ++d) row[d] = out_row[d];
                    row[feat] =
                        detail::view_variance(cond.feats.data(), cond.valid.data(), k, feat);
                    row[feat + 1] =
                        detail::view_min_pair(cond.feats.data(), cond.valid.data(), k, feat);
                    const auto& sc = structure.coords[size_t(i)];
                    for (int a = 0; a < 3; ++a)
                        row[feat + 2 + a] = (sc[size_t(a)] + 0.5) / structure.dims[size_t(a)];
                    row[net.cond_dim - 1] = cov / 16.0;
                }
                cptr = cond.rows.data();
            }

            detail::detail_ground_truth(scene, structure, cfg.logit_scale, gt);
            zt.resize(gt.size());
            target.resize(gt.size());
            for (size_t i = 0; i < gt.size(); ++i) {
                double eps = rng.gaussian();
                zt[i] = (1.0 - t) * eps + t * gt[i];
                target[i] = gt[i] - eps;
            }

            vhat.resize(gt.size());
            toy_forward(params, nt, zt.data(), t, cptr, vhat.data(), work);
            const double norm = 1.0 / double(n * C);
            double loss = 0.0;
            dout.resize(gt.size());
            for (size_t i = 0; i < gt.size(); ++i) {
                double d = vhat[i] - target[i];
                loss += d * d * norm;
                dout[i] = 2.0 * d * norm;
            }
            loss_sum += loss;
            ++counted;
            toy_backward(params, nt, dout.data(), cptr, work, pgrad, nullptr);
        }

        double mean_loss = counted ? loss_sum / counted : 0.0;
        losses.push_back(mean_loss);
        detail::check_divergence(mean_loss, diverged);

        double lr_t = cfg.lr * 0.5 * (1.0 + std::cos(pi * double(step) / double(cfg.steps)));
        if (counted) {
            detail::scale_buffers(pgrad, 1.0 / double(counted));
            popt.step(params, pgrad, lr_t);
        }
    }
    return losses;
}

// Toy condition grid for sampling: channels are the aggregated view features
// plus the cross-view variance and the minimum pairwise distance; coverage
// counts from aggregation. Row layout matches what training feeds the network.
inline ConditionGrid toy_condition(const std::vector<CameraView>& views, const Vec3& origin,
                                   double voxel_size, const std::array<int, 3>& dims,
                                   const AggregatorParams& agg) {
    if (views.empty()) throw FormatError("toy_condition: no views");
    const int feat = agg.feat_dim;
    ConditionGrid out;
    out.grid = DenseGrid::make(origin, voxel_size, dims, feat + 2);
    out.coverage.assign(size_t(out.grid.voxel_count()), 0);
    detail::CondWorkspace w;
    for (const auto& v : views)
        w.lifted.push_back(lift_view(v, origin, voxel_size, dims, Vec3{0.0, 0.0, 0.0}));
    const int k = int(views.size());
    std::vector<double> row(size_t(feat), 0.0);
    for (int64_t i = 0; i < out.grid.voxel_count(); ++i) {
        w.gather(i, feat);
        int cov = aggregate_voxel(agg, w.feats.data(), w.valid.data(), k, row.data(), w.scratch);
        float* dst = out.grid.data.data() + size_t(i) * size_t(feat + 2);
        for (int d = 0; d < feat; ++d) dst[d] = float(row[d]);
        dst[feat] = float(detail::view_variance(w.feats.data(), w.valid.data(), k, feat));
        dst[feat + 1] = float(detail::view_min_pair(w.feats.data(), w.valid.data(), k, feat));
        out.coverage[size_t(i)] = cov;
    }
    return out;
}

inline SparseConditionGrid toy_condition_sparse(const std::vector<CameraView>& views,
                                                const SparseGrid& structure,
                                                const AggregatorParams& agg) {
    if (views.empty()) throw FormatError("toy_condition: no views");
    const int feat = agg.feat_dim;
    SparseConditionGrid out;
    out.grid.origin = structure.origin;
    out.grid.voxel_size = structure.voxel_size;
    out.grid.dims = structure.dims;
    out.grid.channels = feat + 2;
    out.grid.coords = structure.coords;
    out.grid.data.assign(structure.coords.size() * size_t(feat + 2), 0.0f);
    out.coverage.assign(structure.coords.size(), 0);
    std::vector<PerViewSparse> lifted;
    for (const auto& v : views)
        lifted.push_back(lift_view_sparse(v, structure, Vec3{0.0, 0.0, 0.0}));
    const int k = int(views.size());
    AggregateScratch scratch;
    std::vector<double> feats(size_t(k) * feat, 0.0);
    std::vector<uint8_t> valid(size_t(k), 0);
    std::vector<double> row(size_t(feat), 0.0);
    for (size_t n = 0; n < structure.coords.size(); ++n) {
        for (int v = 0; v < k; ++v) {
            valid[size_t(v)] = lifted[size_t(v)].validity[n];
            const float* src = lifted[size_t(v)].grid.data.data() + n * size_t(feat);
            for (int d = 0; d < feat; ++d) feats[size_t(v) * feat + d] = src[d];
        }
        int cov = aggregate_voxel(agg, feats.data(), valid.data(), k, row.data(), scratch);
        float* dst = out.grid.data.data() + n * size_t(feat + 2);
        for (int d = 0; d < feat; ++d) dst[d] = float(row[d]);
        dst[feat] = float(detail::view_variance(feats.data(), valid.data(), k, feat));
        dst[feat + 1] = float(detail::view_min_pair(feats.data(), valid.data(), k, feat));
        out.coverage[n] = cov;
    }
    return out;
}

// ---------------------------------------------------------- gradient check

// Central finite differences (h = 1e-3) against the analytic gradients of the
// full training loss, aggregation included, on a small fixed probe problem.
// Checks at least `target` parameters strided across every buffer of both
// parameter sets and returns the maximum relative error.
inline double gradient_check(const ToyDenoiserParams& params0, const AggregatorParams& agg0,
                             uint64_t seed, int target = 200) {
    const ToyNetConfig& cfg = params0.cfg;
    cfg.validate();
    if (agg0.feat_dim != cfg.cond_dim - 6)
        throw ConstraintError("gradient_check: aggregator feat_dim must be cond_dim - 6");

    Rng rng(seed);
    const std::array<int, 3> dims{4, 4, 4};
    const int64_t voxels = 64;
    const double voxel = 0.25;
    const int C = cfg.channels, Dc = cfg.cond_dim, feat = agg0.feat_dim;
    NeighborTable nt = NeighborTable::dense(dims);

    auto make_view = [&](Vec3 pos) {
        CameraView v;
        v.intrinsics = CameraIntrinsics{8.0, 8.0, 4.0, 4.0, 8, 8};
        v.pose = look_at(pos, Vec3{0.5, 0.5, 0.5});
        FeatureMap fm;
        fm.height = 2;
        fm.width = 2;
        fm.stride = 4;
        fm.channels = feat;
        fm.data.resize(size_t(4) * feat);
        for (auto& x : fm.data) x = float(rng.uniform(-1.0, 1.0));
        v.feature_map = fm;
        return v;
    };
    std::vector<CameraView> views;
    views.push_back(make_view(Vec3{0.5, 0.5, -2.0}));
    views.push_back(make_view(Vec3{-1.5, 0.6, 0.4}));

    std::vector<PerViewGrid> lifted;
    for (const auto& v : views)
        lifted.push_back(lift_view(v, Vec3{0.0, 0.0, 0.0}, voxel, dims, Vec3{0.0, 0.0, 0.0}));

    std::vector<double> zt(size_t(voxels) * C), vstar(size_t(voxels) * C);
    for (auto& x : zt) x = rng.gaussian();
    for (auto& x : vstar) x = rng.gaussian();
    const double t = 0.37;

    ToyNetWork work;
    AggregateScratch scratch;
    std::vector<double> feats(size_t(views.size()) * feat);
    std::vector<uint8_t> valid(views.size());
    std::vector<double> out_row(size_t(feat), 0.0);
    std::vector<double> cond_rows, vhat(zt.size()), dout(zt.size()), dcond;

    auto gather = [&](int64_t i) {
        for (size_t v = 0; v < views.size(); ++v) {
            valid[v] = lifted[v].validity[size_t(i)];
            const float* src = lifted[v].grid.data.data() + size_t(i) * feat;
            for (int d = 0; d < feat; ++d) feats[v * size_t(feat) + d] = src[d];
        }
    };

    auto loss_value = [&](const ToyDenoiserParams& P, const AggregatorParams& A,
                          ToyDenoiserParams* Pg, AggregatorParams* Ag) {
        cond_rows.assign(size_t(voxels) * Dc, 0.0);
        for (int64_t i = 0; i < voxels; ++i) {
            gather(i);
            int cov = aggregate_voxel(A, feats.data(), valid.data(), int(views.size()),
                                      out_row.data(), scratch);
            double* row = &cond_rows[size_t(i) * Dc];
            for (int d = 0; d < feat; ++d) row[d] = out_row[d];
            row[feat] = detail::view_variance(feats.data(), valid.data(), int(views.size()), feat);
            row[feat + 1] = detail::view_min_pair(feats.data(), valid.data(), int(views.size()), feat);
            row[feat + 2] = (double(i / (dims[1] * dims[2])) + 0.5) / dims[0];
            row[feat + 3] = (double((i / dims[2]) % dims[1]) + 0.5) / dims[1];
            row[feat + 4] = (double(i % dims[2]) + 0.5) / dims[2];
            row[Dc - 1] = cov / 16.0;
        }
        toy_forward(P, nt, zt.data(), t, cond_rows.data(), vhat.data(), work);
        const double norm = 1.0 / double(voxels * C);
        double loss = 0.0;
        for (size_t i = 0; i < vhat.size(); ++i) {
            double d = vhat[i] - vstar[i];
            loss += d * d * norm;
            dout[i] = 2.0 * d * norm;
        }
        if (Pg) {
            dcond.assign(size_t(voxels) * Dc, 0.0);
            toy_backward(P, nt, dout.data(), cond_rows.data(), work, *Pg, dcond.data());
            for (int64_t i = 0; i < voxels; ++i) {
                gather(i);
                aggregate_voxel_grad(A, feats.data(), valid.data(), int(views.size()),
                                     &dcond[size_t(i) * Dc], *Ag, scratch);
            }
        }
        return loss;
    };

    ToyDenoiserParams pgrad = params0.zeros_like();
    AggregatorParams agrad = agg0.zeros_like();
    loss_value(params0, agg0, &pgrad, &agrad);

    ToyDenoiserParams pm = params0;
    AggregatorParams am = agg0;
    std::vector<std::vector<double>*> bufs, grads;
    pm.for_each_buffer([&](const std::string&, std::vector<double>& v) { bufs.push_back(&v); });
    pgrad.for_each_buffer([&](const std::string&, std::vector<double>& v) { grads.push_back(&v); });
    am.for_each_buffer([&](const char*, std::vector<double>& v) { bufs.push_back(&v); });
    agrad.for_each_buffer([&](const char*, std::vector<double>& v) { grads.push_back(&v); });

    size_t total = 0;
    for (auto* b : bufs) total += b->size();
    size_t stride = std::max<size_t>(1, total / size_t(target));
    const double h = 1e-3;
    double max_rel = 0.0;

    size_t flat = 0;
    for (size_t bi = 0; bi < bufs.size(); ++bi) {
        std::vector<double>& buf = *bufs[bi];
        const std::vector<double>& gbuf = *grads[bi];
        for (size_t i = 0; i < buf.size(); ++i, ++flat) {
            if (flat % stride != 0) continue;
            double old = buf[i];
            buf[i] = old + h;
            double lp = loss_value(pm, am, nullptr, nullptr);
            buf[i] = old - h;
            double lm = loss_value(pm, am, nullptr, nullptr);
            buf[i] = old;
            double fd = (lp - lm) / (2.0 * h);
            double a = gbuf[i];
            double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace chunkgen

#endif
