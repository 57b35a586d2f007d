#include "modbal/net.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace modbal {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

FusionRule fusion_from_string(const std::string& s) {
    if (s == "sum") return FusionRule::Sum;
    if (s == "mean") return FusionRule::Mean;
    if (s == "mix") return FusionRule::Mix;
    throw std::invalid_argument("backbone: unknown fusion rule '" + s + "'");
}

UpsampleMode upsample_from_string(const std::string& s) {
    if (s == "nearest") return UpsampleMode::Nearest;
    if (s == "linear") return UpsampleMode::Linear;
    throw std::invalid_argument("backbone: unknown upsample mode '" + s + "'");
}

std::string to_string(FusionRule r) {
    switch (r) {
        case FusionRule::Sum: return "sum";
        case FusionRule::Mean: return "mean";
        default: return "mix";
    }
}

std::string to_string(UpsampleMode m) {
    return m == UpsampleMode::Nearest ? "nearest" : "linear";
}

void validate(const BackboneConfig& cfg) {
    if (cfg.n_modalities < 1) throw std::invalid_argument("backbone: need M >= 1");
    if (cfg.n_classes < 2) throw std::invalid_argument("backbone: need K >= 2");
    if (cfg.width < 4) throw std::invalid_argument("backbone: width must be >= 4");
    if (cfg.levels < 2) throw std::invalid_argument("backbone: depth must be >= 2");
    if (cfg.rank != 2 && cfg.rank != 3)
        throw std::invalid_argument("backbone: spatial rank must be 2 or 3");
}

// ---------------------------------------------------------------------------
// Low-level ops

namespace {

size_t spatial_count(const std::vector<int>& shape, int from) {
    size_t n = 1;
    for (size_t i = static_cast<size_t>(from); i < shape.size(); ++i)
        n *= static_cast<size_t>(shape[i]);
    return n;
}

// im2col for 3^rank kernels with padding 1. Rows are ordered
// (channel, kernel offset); columns are output pixels.
void im2col3(const Tensor& x, std::vector<real>& col) {
    const auto& s = x.shape();
    const int ic = s[0];
    const int rank = static_cast<int>(s.size()) - 1;
    const size_t P = spatial_count(s, 1);
    const int kcount = rank == 2 ? 9 : 27;
    col.assign(static_cast<size_t>(ic) * kcount * P, 0.0);

    if (rank == 2) {
        const int H = s[1], W = s[2];
        for (int c = 0; c < ic; ++c) {
            const real* xc = x.data() + static_cast<size_t>(c) * P;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    real* row = col.data() + (static_cast<size_t>(c) * 9 + ky * 3 + kx) * P;
                    const int xlo = std::max(0, -dx), xhi = std::min(W, W - dx);
                    if (xhi <= xlo) continue;
                    for (int y = 0; y < H; ++y) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= H) continue;
                        std::memcpy(row + static_cast<size_t>(y) * W + xlo,
                                    xc + static_cast<size_t>(sy) * W + xlo + dx,
                                    static_cast<size_t>(xhi - xlo) * sizeof(real));
                    }
                }
            }
        }
    } else {
        const int D = s[1], H = s[2], W = s[3];
        const size_t HW = static_cast<size_t>(H) * W;
        for (int c = 0; c < ic; ++c) {
            const real* xc = x.data() + static_cast<size_t>(c) * P;
            for (int kz = 0; kz < 3; ++kz) {
                const int dz = kz - 1;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        real* row = col.data() +
                                    (static_cast<size_t>(c) * 27 + (kz * 3 + ky) * 3 + kx) * P;
                        const int xlo = std::max(0, -dx), xhi = std::min(W, W - dx);
                        if (xhi <= xlo) continue;
                        for (int z = 0; z < D; ++z) {
                            const int sz = z + dz;
                            if (sz < 0 || sz >= D) continue;
                            for (int y = 0; y < H; ++y) {
                                const int sy = y + dy;
                                if (sy < 0 || sy >= H) continue;
                                std::memcpy(row + static_cast<size_t>(z) * HW +
                                                static_cast<size_t>(y) * W + xlo,
                                            xc + static_cast<size_t>(sz) * HW +
                                                static_cast<size_t>(sy) * W + xlo + dx,
                                            static_cast<size_t>(xhi - xlo) * sizeof(real));
                            }
                        }
                    }
                }
            }
        }
    }
}

// Transpose of im2col3: scatter-add column gradients back to the input.
void col2im3(const std::vector<real>& col, const std::vector<int>& in_shape, Tensor& dx) {
    const int ic = in_shape[0];
    const int rank = static_cast<int>(in_shape.size()) - 1;
    const size_t P = spatial_count(in_shape, 1);

    if (rank == 2) {
        const int H = in_shape[1], W = in_shape[2];
        for (int c = 0; c < ic; ++c) {
            real* xc = dx.data() + static_cast<size_t>(c) * P;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx_off = kx - 1;
                    const real* row = col.data() + (static_cast<size_t>(c) * 9 + ky * 3 + kx) * P;
                    const int xlo = std::max(0, -dx_off), xhi = std::min(W, W - dx_off);
                    if (xhi <= xlo) continue;
                    for (int y = 0; y < H; ++y) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= H) continue;
                        real* dst = xc + static_cast<size_t>(sy) * W + xlo + dx_off;
                        const real* src = row + static_cast<size_t>(y) * W + xlo;
                        for (int i = 0; i < xhi - xlo; ++i) dst[i] += src[i];
                    }
                }
            }
        }
    } else {
        const int D = in_shape[1], H = in_shape[2], W = in_shape[3];
        const size_t HW = static_cast<size_t>(H) * W;
        for (int c = 0; c < ic; ++c) {
            real* xc = dx.data() + static_cast<size_t>(c) * P;
            for (int kz = 0; kz < 3; ++kz) {
                const int dz = kz - 1;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx_off = kx - 1;
                        const real* row = col.data() +
                                          (static_cast<size_t>(c) * 27 + (kz * 3 + ky) * 3 + kx) * P;
                        const int xlo = std::max(0, -dx_off), xhi = std::min(W, W - dx_off);
                        if (xhi <= xlo) continue;
                        for (int z = 0; z < D; ++z) {
                            const int sz = z + dz;
                            if (sz < 0 || sz >= D) continue;
                            for (int y = 0; y < H; ++y) {
                                const int sy = y + dy;
                                if (sy < 0 || sy >= H) continue;
                                real* dst = xc + static_cast<size_t>(sz) * HW +
                                            static_cast<size_t>(sy) * W + xlo + dx_off;
                                const real* src =
                                    row + static_cast<size_t>(z) * HW + static_cast<size_t>(y) * W + xlo;
                                for (int i = 0; i < xhi - xlo; ++i) dst[i] += src[i];
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor conv3_forward(const Tensor& x, const Tensor& w, const Tensor& b, ConvCache& cache) {
    const int oc = w.dim(0);
    const size_t P = spatial_count(x.shape(), 1);
    const size_t ick = w.size() / static_cast<size_t>(oc);
    cache.in_shape = x.shape();
    im2col3(x, cache.col);

    std::vector<int> out_shape = x.shape();
    out_shape[0] = oc;
    Tensor y(out_shape);
    MapMat ym(y.data(), oc, static_cast<long>(P));
    CMapMat wm(w.data(), oc, static_cast<long>(ick));
    CMapMat cm(cache.col.data(), static_cast<long>(ick), static_cast<long>(P));
    ym.noalias() = wm * cm;
    for (int o = 0; o < oc; ++o) ym.row(o).array() += b[static_cast<size_t>(o)];
    return y;
}

void conv3_backward(const Tensor& dy, const ConvCache& cache, const Tensor& w, Tensor& dw,
                    Tensor& db, Tensor* dx) {
    const int oc = w.dim(0);
    const size_t P = spatial_count(cache.in_shape, 1);
    const size_t ick = w.size() / static_cast<size_t>(oc);
    CMapMat dym(dy.data(), oc, static_cast<long>(P));
    CMapMat cm(cache.col.data(), static_cast<long>(ick), static_cast<long>(P));
    MapMat dwm(dw.data(), oc, static_cast<long>(ick));
    dwm.noalias() += dym * cm.transpose();
    for (int o = 0; o < oc; ++o) db[static_cast<size_t>(o)] += dym.row(o).sum();
    if (dx) {
        CMapMat wm(w.data(), oc, static_cast<long>(ick));
        std::vector<real> dcol(ick * P);
        MapMat dcm(dcol.data(), static_cast<long>(ick), static_cast<long>(P));
        dcm.noalias() = wm.transpose() * dym;
        col2im3(dcol, cache.in_shape, *dx);
    }
}

Tensor conv1_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int oc = w.dim(0), ic = w.dim(1);
    const size_t P = spatial_count(x.shape(), 1);
    std::vector<int> out_shape = x.shape();
    out_shape[0] = oc;
    Tensor y(out_shape);
    MapMat ym(y.data(), oc, static_cast<long>(P));
    CMapMat wm(w.data(), oc, ic);
    CMapMat xm(x.data(), ic, static_cast<long>(P));
    ym.noalias() = wm * xm;
    for (int o = 0; o < oc; ++o) ym.row(o).array() += b[static_cast<size_t>(o)];
    return y;
}

void conv1_backward(const Tensor& dy, const Tensor& x, const Tensor& w, Tensor& dw, Tensor& db,
                    Tensor* dx) {
    const int oc = w.dim(0), ic = w.dim(1);
    const size_t P = spatial_count(x.shape(), 1);
    CMapMat dym(dy.data(), oc, static_cast<long>(P));
    CMapMat xm(x.data(), ic, static_cast<long>(P));
    MapMat dwm(dw.data(), oc, ic);
    dwm.noalias() += dym * xm.transpose();
    for (int o = 0; o < oc; ++o) db[static_cast<size_t>(o)] += dym.row(o).sum();
    if (dx) {
        CMapMat wm(w.data(), oc, ic);
        MapMat dxm(dx->data(), ic, static_cast<long>(P));
        dxm.noalias() += wm.transpose() * dym;
    }
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (size_t i = 0; i < y.size(); ++i)
        if (y[i] < 0) y[i] = 0;
    return y;
}

// dpre = dpost .* (post > 0)
Tensor relu_backward(const Tensor& dpost, const Tensor& post) {
    Tensor d = dpost;
    for (size_t i = 0; i < d.size(); ++i)
        if (post[i] <= 0) d[i] = 0;
    return d;
}

Tensor avgpool2(const Tensor& x) {
    const auto& s = x.shape();
    const int rank = static_cast<int>(s.size()) - 1;
    std::vector<int> os = s;
    for (int a = 1; a <= rank; ++a) {
        if (s[a] % 2 != 0) throw std::invalid_argument("backbone: odd spatial dim in pooling");
        os[a] = s[a] / 2;
    }
    Tensor y(os);
    const int C = s[0];
    if (rank == 2) {
        const int H = s[1], W = s[2], OH = os[1], OW = os[2];
        for (int c = 0; c < C; ++c) {
            const real* xc = x.data() + static_cast<size_t>(c) * H * W;
            real* yc = y.data() + static_cast<size_t>(c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const real* p = xc + static_cast<size_t>(2 * oy) * W + 2 * ox;
                    yc[static_cast<size_t>(oy) * OW + ox] =
                        0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
                }
        }
    } else {
        const int D = s[1], H = s[2], W = s[3], OD = os[1], OH = os[2], OW = os[3];
        const size_t HW = static_cast<size_t>(H) * W;
        for (int c = 0; c < C; ++c) {
            const real* xc = x.data() + static_cast<size_t>(c) * D * HW;
            real* yc = y.data() + static_cast<size_t>(c) * OD * OH * OW;
            for (int oz = 0; oz < OD; ++oz)
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        const real* p = xc + static_cast<size_t>(2 * oz) * HW +
                                        static_cast<size_t>(2 * oy) * W + 2 * ox;
                        real sum = p[0] + p[1] + p[W] + p[W + 1];
                        const real* q = p + HW;
                        sum += q[0] + q[1] + q[W] + q[W + 1];
                        yc[(static_cast<size_t>(oz) * OH + oy) * OW + ox] = 0.125 * sum;
                    }
        }
    }
    return y;
}

Tensor avgpool2_backward(const Tensor& dy, const std::vector<int>& in_shape) {
    const int rank = static_cast<int>(in_shape.size()) - 1;
    Tensor dx(in_shape);
    const int C = in_shape[0];
    if (rank == 2) {
        const int H = in_shape[1], W = in_shape[2];
        const int OH = H / 2, OW = W / 2;
        for (int c = 0; c < C; ++c) {
            const real* dyc = dy.data() + static_cast<size_t>(c) * OH * OW;
            real* dxc = dx.data() + static_cast<size_t>(c) * H * W;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const real g = 0.25 * dyc[static_cast<size_t>(oy) * OW + ox];
                    real* p = dxc + static_cast<size_t>(2 * oy) * W + 2 * ox;
                    p[0] += g; p[1] += g; p[W] += g; p[W + 1] += g;
                }
        }
    } else {
        const int D = in_shape[1], H = in_shape[2], W = in_shape[3];
        const int OD = D / 2, OH = H / 2, OW = W / 2;
        const size_t HW = static_cast<size_t>(H) * W;
        for (int c = 0; c < C; ++c) {
            const real* dyc = dy.data() + static_cast<size_t>(c) * OD * OH * OW;
            real* dxc = dx.data() + static_cast<size_t>(c) * D * HW;
            for (int oz = 0; oz < OD; ++oz)
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        const real g = 0.125 * dyc[(static_cast<size_t>(oz) * OH + oy) * OW + ox];
                        real* p = dxc + static_cast<size_t>(2 * oz) * HW +
                                  static_cast<size_t>(2 * oy) * W + 2 * ox;
                        p[0] += g; p[1] += g; p[W] += g; p[W + 1] += g;
                        real* q = p + HW;
                        q[0] += g; q[1] += g; q[W] += g; q[W + 1] += g;
                    }
        }
    }
    return dx;
}

// Per-axis interpolation table for half-pixel-centre linear upsampling.
struct AxisTable {
    std::vector<int> i0, i1;
    std::vector<real> w1;  // weight of i1; i0 gets 1 - w1
};

AxisTable linear_axis_table(int n_in, int factor) {
    AxisTable t;
    const int n_out = n_in * factor;
    t.i0.resize(n_out);
    t.i1.resize(n_out);
    t.w1.resize(n_out);
    for (int o = 0; o < n_out; ++o) {
        real s = (o + 0.5) / factor - 0.5;
        int i0 = static_cast<int>(std::floor(s));
        real w = s - i0;
        int i1 = i0 + 1;
        if (i0 < 0) { i0 = 0; }
        if (i1 > n_in - 1) { i1 = n_in - 1; }
        if (i0 > n_in - 1) { i0 = n_in - 1; }
        t.i0[o] = i0;
        t.i1[o] = i1;
        t.w1[o] = w;
    }
    return t;
}

}  // namespace

Tensor upsample_logits(const Tensor& x, int factor, UpsampleMode mode) {
    if (factor < 1 || (factor & (factor - 1)) != 0)
        throw std::invalid_argument("upsample: factor must be a positive power of two");
    if (factor == 1) return x;
    const auto& s = x.shape();
    const int rank = static_cast<int>(s.size()) - 1;
    const int C = s[0];
    std::vector<int> os = s;
    for (int a = 1; a <= rank; ++a) os[a] *= factor;
    Tensor y(os);

    if (mode == UpsampleMode::Nearest) {
        if (rank == 2) {
            const int H = s[1], W = s[2], OH = os[1], OW = os[2];
            for (int c = 0; c < C; ++c) {
                const real* xc = x.data() + static_cast<size_t>(c) * H * W;
                real* yc = y.data() + static_cast<size_t>(c) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                    const real* xr = xc + static_cast<size_t>(oy / factor) * W;
                    real* yr = yc + static_cast<size_t>(oy) * OW;
                    for (int ox = 0; ox < OW; ++ox) yr[ox] = xr[ox / factor];
                }
            }
        } else {
            const int D = s[1], H = s[2], W = s[3], OD = os[1], OH = os[2], OW = os[3];
            for (int c = 0; c < C; ++c) {
                const real* xc = x.data() + static_cast<size_t>(c) * D * H * W;
                real* yc = y.data() + static_cast<size_t>(c) * OD * OH * OW;
                for (int oz = 0; oz < OD; ++oz)
                    for (int oy = 0; oy < OH; ++oy) {
                        const real* xr = xc + (static_cast<size_t>(oz / factor) * H +
                                               static_cast<size_t>(oy / factor)) * W;
                        real* yr = yc + (static_cast<size_t>(oz) * OH + oy) * OW;
                        for (int ox = 0; ox < OW; ++ox) yr[ox] = xr[ox / factor];
                    }
            }
        }
        return y;
    }

    if (rank == 2) {
        AxisTable ty = linear_axis_table(s[1], factor), tx = linear_axis_table(s[2], factor);
        const int H = s[1], W = s[2], OH = os[1], OW = os[2];
        (void)H;
        for (int c = 0; c < C; ++c) {
            const real* xc = x.data() + static_cast<size_t>(c) * spatial_count(s, 1);
            real* yc = y.data() + static_cast<size_t>(c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy) {
                const real wy1 = ty.w1[oy], wy0 = 1.0 - wy1;
                const real* r0 = xc + static_cast<size_t>(ty.i0[oy]) * W;
                const real* r1 = xc + static_cast<size_t>(ty.i1[oy]) * W;
                real* yr = yc + static_cast<size_t>(oy) * OW;
                for (int ox = 0; ox < OW; ++ox) {
                    const real wx1 = tx.w1[ox], wx0 = 1.0 - wx1;
                    yr[ox] = wy0 * (wx0 * r0[tx.i0[ox]] + wx1 * r0[tx.i1[ox]]) +
                             wy1 * (wx0 * r1[tx.i0[ox]] + wx1 * r1[tx.i1[ox]]);
                }
            }
        }
    } else {
        AxisTable tz = linear_axis_table(s[1], factor), ty = linear_axis_table(s[2], factor),
                  tx = linear_axis_table(s[3], factor);
        const int H = s[2], W = s[3], OD = os[1], OH = os[2], OW = os[3];
        const size_t HW = static_cast<size_t>(H) * W;
        for (int c = 0; c < C; ++c) {
            const real* xc = x.data() + static_cast<size_t>(c) * spatial_count(s, 1);
            real* yc = y.data() + static_cast<size_t>(c) * OD * OH * OW;
            for (int oz = 0; oz < OD; ++oz) {
                const real wz1 = tz.w1[oz], wz0 = 1.0 - wz1;
                const real* p0 = xc + static_cast<size_t>(tz.i0[oz]) * HW;
                const real* p1 = xc + static_cast<size_t>(tz.i1[oz]) * HW;
                for (int oy = 0; oy < OH; ++oy) {
                    const real wy1 = ty.w1[oy], wy0 = 1.0 - wy1;
                    real* yr = yc + (static_cast<size_t>(oz) * OH + oy) * OW;
                    const real* r00 = p0 + static_cast<size_t>(ty.i0[oy]) * W;
                    const real* r01 = p0 + static_cast<size_t>(ty.i1[oy]) * W;
                    const real* r10 = p1 + static_cast<size_t>(ty.i0[oy]) * W;
                    const real* r11 = p1 + static_cast<size_t>(ty.i1[oy]) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const real wx1 = tx.w1[ox], wx0 = 1.0 - wx1;
                        yr[ox] = wz0 * (wy0 * (wx0 * r00[tx.i0[ox]] + wx1 * r00[tx.i1[ox]]) +
                                        wy1 * (wx0 * r01[tx.i0[ox]] + wx1 * r01[tx.i1[ox]])) +
                                 wz1 * (wy0 * (wx0 * r10[tx.i0[ox]] + wx1 * r10[tx.i1[ox]]) +
                                        wy1 * (wx0 * r11[tx.i0[ox]] + wx1 * r11[tx.i1[ox]]));
                    }
                }
            }
        }
    }
    return y;
}

Tensor upsample_logits_backward(const Tensor& dy, const std::vector<int>& in_shape, int factor,
                                UpsampleMode mode) {
    if (factor == 1) return dy;
    const int rank = static_cast<int>(in_shape.size()) - 1;
    const int C = in_shape[0];
    Tensor dx(in_shape);
    const auto& os = dy.shape();

    if (mode == UpsampleMode::Nearest) {
        if (rank == 2) {
            const int W = in_shape[2], OH = os[1], OW = os[2];
            for (int c = 0; c < C; ++c) {
                const real* dyc = dy.data() + static_cast<size_t>(c) * OH * OW;
                real* dxc = dx.data() + static_cast<size_t>(c) * spatial_count(in_shape, 1);
                for (int oy = 0; oy < OH; ++oy) {
                    real* xr = dxc + static_cast<size_t>(oy / factor) * W;
                    const real* yr = dyc + static_cast<size_t>(oy) * OW;
                    for (int ox = 0; ox < OW; ++ox) xr[ox / factor] += yr[ox];
                }
            }
        } else {
            const int H = in_shape[2], W = in_shape[3], OD = os[1], OH = os[2], OW = os[3];
            const size_t HW = static_cast<size_t>(H) * W;
            for (int c = 0; c < C; ++c) {
                const real* dyc = dy.data() + static_cast<size_t>(c) * OD * OH * OW;
                real* dxc = dx.data() + static_cast<size_t>(c) * spatial_count(in_shape, 1);
                for (int oz = 0; oz < OD; ++oz)
                    for (int oy = 0; oy < OH; ++oy) {
                        real* xr = dxc + static_cast<size_t>(oz / factor) * HW +
                                   static_cast<size_t>(oy / factor) * W;
                        const real* yr = dyc + (static_cast<size_t>(oz) * OH + oy) * OW;
                        for (int ox = 0; ox < OW; ++ox) xr[ox / factor] += yr[ox];
                    }
            }
        }
        return dx;
    }

    if (rank == 2) {
        AxisTable ty = linear_axis_table(in_shape[1], factor),
                  tx = linear_axis_table(in_shape[2], factor);
        const int W = in_shape[2], OH = os[1], OW = os[2];
        for (int c = 0; c < C; ++c) {
            const real* dyc = dy.data() + static_cast<size_t>(c) * OH * OW;
            real* dxc = dx.data() + static_cast<size_t>(c) * spatial_count(in_shape, 1);
            for (int oy = 0; oy < OH; ++oy) {
                const real wy1 = ty.w1[oy], wy0 = 1.0 - wy1;
                real* r0 = dxc + static_cast<size_t>(ty.i0[oy]) * W;
                real* r1 = dxc + static_cast<size_t>(ty.i1[oy]) * W;
                const real* yr = dyc + static_cast<size_t>(oy) * OW;
                for (int ox = 0; ox < OW; ++ox) {
                    const real wx1 = tx.w1[ox], wx0 = 1.0 - wx1;
                    const real g = yr[ox];
                    r0[tx.i0[ox]] += wy0 * wx0 * g;
                    r0[tx.i1[ox]] += wy0 * wx1 * g;
                    r1[tx.i0[ox]] += wy1 * wx0 * g;
                    r1[tx.i1[ox]] += wy1 * wx1 * g;
                }
            }
        }
    } else {
        AxisTable tz = linear_axis_table(in_shape[1], factor),
                  ty = linear_axis_table(in_shape[2], factor),
                  tx = linear_axis_table(in_shape[3], factor);
        const int H = in_shape[2], W = in_shape[3], OD = os[1], OH = os[2], OW = os[3];
        const size_t HW = static_cast<size_t>(H) * W;
        for (int c = 0; c < C; ++c) {
            const real* dyc = dy.data() + static_cast<size_t>(c) * OD * OH * OW;
            real* dxc = dx.data() + static_cast<size_t>(c) * spatial_count(in_shape, 1);
            for (int oz = 0; oz < OD; ++oz) {
                const real wz1 = tz.w1[oz], wz0 = 1.0 - wz1;
                for (int oy = 0; oy < OH; ++oy) {
                    const real wy1 = ty.w1[oy], wy0 = 1.0 - wy1;
                    const real* yr = dyc + (static_cast<size_t>(oz) * OH + oy) * OW;
                    real* r00 = dxc + static_cast<size_t>(tz.i0[oz]) * HW + static_cast<size_t>(ty.i0[oy]) * W;
                    real* r01 = dxc + static_cast<size_t>(tz.i0[oz]) * HW + static_cast<size_t>(ty.i1[oy]) * W;
                    real* r10 = dxc + static_cast<size_t>(tz.i1[oz]) * HW + static_cast<size_t>(ty.i0[oy]) * W;
                    real* r11 = dxc + static_cast<size_t>(tz.i1[oz]) * HW + static_cast<size_t>(ty.i1[oy]) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const real wx1 = tx.w1[ox], wx0 = 1.0 - wx1;
                        const real g = yr[ox];
                        r00[tx.i0[ox]] += wz0 * wy0 * wx0 * g;
                        r00[tx.i1[ox]] += wz0 * wy0 * wx1 * g;
                        r01[tx.i0[ox]] += wz0 * wy1 * wx0 * g;
                        r01[tx.i1[ox]] += wz0 * wy1 * wx1 * g;
                        r10[tx.i0[ox]] += wz1 * wy0 * wx0 * g;
                        r10[tx.i1[ox]] += wz1 * wy0 * wx1 * g;
                        r11[tx.i0[ox]] += wz1 * wy1 * wx0 * g;
                        r11[tx.i1[ox]] += wz1 * wy1 * wx1 * g;
                    }
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Backbone

int Backbone::add_param(const std::string& name, std::vector<int> shape) {
    Param p;
    p.name = name;
    p.w = Tensor(shape);
    p.g = Tensor(shape);
    p.adam_m = Tensor(shape);
    p.adam_v = Tensor(std::move(shape));
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

Backbone::Backbone(const BackboneConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    validate(cfg_);
    const int M = cfg_.n_modalities, L = cfg_.levels - 1, K = cfg_.n_classes;
    const int kf = cfg_.rank == 2 ? 3 : 3;  // kernel extent per axis

    enc_c1_.assign(M, std::vector<ConvRef>(cfg_.levels));
    enc_c2_.assign(M, std::vector<ConvRef>(cfg_.levels));
    for (int m = 0; m < M; ++m) {
        for (int l = 0; l <= L; ++l) {
            const int cin = l == 0 ? 1 : cfg_.channels(l - 1);
            const int c = cfg_.channels(l);
            std::string base = "enc" + std::to_string(m) + ".l" + std::to_string(l);
            std::vector<int> wshape = {c, cin};
            for (int a = 0; a < cfg_.rank; ++a) wshape.push_back(kf);
            enc_c1_[m][l].w = add_param(base + ".c1.w", wshape);
            enc_c1_[m][l].b = add_param(base + ".c1.b", {c});
            std::vector<int> wshape2 = {c, c};
            for (int a = 0; a < cfg_.rank; ++a) wshape2.push_back(kf);
            enc_c2_[m][l].w = add_param(base + ".c2.w", wshape2);
            enc_c2_[m][l].b = add_param(base + ".c2.b", {c});
        }
    }
    if (cfg_.fusion == FusionRule::Mix) {
        mix_.resize(cfg_.levels);
        for (int l = 0; l <= L; ++l) {
            const int c = cfg_.channels(l);
            mix_[l].w = add_param("mix.l" + std::to_string(l) + ".w", {c, M * c});
            mix_[l].b = add_param("mix.l" + std::to_string(l) + ".b", {c});
        }
    }
    {
        const int c = cfg_.channels(L);
        std::vector<int> wshape = {c, c};
        for (int a = 0; a < cfg_.rank; ++a) wshape.push_back(kf);
        bott_.w = add_param("dec.bott.w", wshape);
        bott_.b = add_param("dec.bott.b", {c});
    }
    dec_.resize(cfg_.levels);
    for (int l = L - 1; l >= 0; --l) {
        const int c = cfg_.channels(l), cin = cfg_.channels(l) + cfg_.channels(l + 1);
        std::vector<int> wshape = {c, cin};
        for (int a = 0; a < cfg_.rank; ++a) wshape.push_back(kf);
        dec_[l].w = add_param("dec.l" + std::to_string(l) + ".w", wshape);
        dec_[l].b = add_param("dec.l" + std::to_string(l) + ".b", {c});
    }
    head_.resize(cfg_.levels);
    for (int l = 0; l <= L; ++l) {
        head_[l].w = add_param("head.l" + std::to_string(l) + ".w", {K, cfg_.channels(l)});
        head_[l].b = add_param("head.l" + std::to_string(l) + ".b", {K});
    }
    init_params(init_seed);
}

void Backbone::init_params(uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
        if (p.w.rank() == 1) continue;  // biases stay zero
        const bool is_head = p.name.rfind("head.", 0) == 0;
        const bool is_mix = p.name.rfind("mix.", 0) == 0;
        if (is_mix) {
            // Start as the mean of available slots: out channel c reads 1/M
            // from every modality's channel c.
            const int oc = p.w.dim(0), icm = p.w.dim(1);
            const int M = cfg_.n_modalities;
            for (int o = 0; o < oc; ++o)
                for (int m = 0; m < M; ++m)
                    p.w[static_cast<size_t>(o) * icm + m * oc + o] = 1.0 / M;
            continue;
        }
        const size_t fan_in = p.w.size() / static_cast<size_t>(p.w.dim(0));
        const real stdev = is_head ? std::sqrt(1.0 / static_cast<real>(fan_in))
                                   : std::sqrt(2.0 / static_cast<real>(fan_in));
        for (size_t i = 0; i < p.w.size(); ++i) p.w[i] = stdev * rng.normal();
    }
}

void Backbone::run_encoder(int m, const Tensor& image, EncCache& cache) const {
    const int L = cfg_.levels - 1;
    cache.c1.resize(cfg_.levels);
    cache.c2.resize(cfg_.levels);
    cache.r1.resize(cfg_.levels);
    cache.r2.resize(cfg_.levels);

    std::vector<int> shape0 = {1};
    for (int d : image.shape()) shape0.push_back(d);
    Tensor x(shape0, std::vector<real>(image.data(), image.data() + image.size()));

    for (int l = 0; l <= L; ++l) {
        Tensor y1 = conv3_forward(x, params_[enc_c1_[m][l].w].w, params_[enc_c1_[m][l].b].w,
                                  cache.c1[l]);
        cache.r1[l] = relu(y1);
        Tensor y2 = conv3_forward(cache.r1[l], params_[enc_c2_[m][l].w].w,
                                  params_[enc_c2_[m][l].b].w, cache.c2[l]);
        cache.r2[l] = relu(y2);
        if (l < L) x = avgpool2(cache.r2[l]);
    }
}

void Backbone::run_decoder(const std::vector<const Tensor*>& feats_by_level_mod, int n_available,
                           PassCache& cache, bool all_heads) const {
    // feats_by_level_mod is indexed [level * M + m]; nullptr means missing.
    const int L = cfg_.levels - 1, M = cfg_.n_modalities;
    cache.skips.resize(cfg_.levels);
    cache.conv.resize(cfg_.levels);
    cache.feat.resize(cfg_.levels);
    cache.logits.assign(static_cast<size_t>(cfg_.levels), Tensor());
    if (cfg_.fusion == FusionRule::Mix) cache.mix.resize(cfg_.levels);

    for (int l = 0; l <= L; ++l) {
        const Tensor* any = nullptr;
        for (int m = 0; m < M; ++m)
            if (feats_by_level_mod[static_cast<size_t>(l) * M + m]) {
                any = feats_by_level_mod[static_cast<size_t>(l) * M + m];
                break;
            }
        if (!any) throw std::invalid_argument("backbone: no available modality");

        if (cfg_.fusion == FusionRule::Mix) {
            std::vector<int> cat_shape = any->shape();
            cat_shape[0] *= M;
            Tensor cat(cat_shape);
            const size_t block = any->size();
            for (int m = 0; m < M; ++m) {
                const Tensor* f = feats_by_level_mod[static_cast<size_t>(l) * M + m];
                if (f) std::memcpy(cat.data() + static_cast<size_t>(m) * block, f->data(),
                                   block * sizeof(real));
            }
            cache.mix[l].x = cat;
            cache.skips[l] = conv1_forward(cat, params_[mix_[l].w].w, params_[mix_[l].b].w);
        } else {
            Tensor acc(any->shape());
            for (int m = 0; m < M; ++m) {
                const Tensor* f = feats_by_level_mod[static_cast<size_t>(l) * M + m];
                if (!f) continue;
                for (size_t i = 0; i < acc.size(); ++i) acc[i] += (*f)[i];
            }
            if (cfg_.fusion == FusionRule::Mean && n_available > 1) {
                const real inv = 1.0 / n_available;
                for (size_t i = 0; i < acc.size(); ++i) acc[i] *= inv;
            }
            cache.skips[l] = std::move(acc);
        }
    }

    Tensor d = relu(conv3_forward(cache.skips[L], params_[bott_.w].w, params_[bott_.b].w,
                                  cache.conv[L]));
    cache.feat[L] = d;
    for (int l = L - 1; l >= 0; --l) {
        Tensor up = upsample_logits(cache.feat[l + 1], 2, cfg_.upsample);
        std::vector<int> cat_shape = cache.skips[l].shape();
        cat_shape[0] += up.dim(0);
        Tensor cat(cat_shape);
        std::memcpy(cat.data(), cache.skips[l].data(), cache.skips[l].size() * sizeof(real));
        std::memcpy(cat.data() + cache.skips[l].size(), up.data(), up.size() * sizeof(real));
        cache.feat[l] = relu(conv3_forward(cat, params_[dec_[l].w].w, params_[dec_[l].b].w,
                                           cache.conv[l]));
    }

    for (int l = 0; l <= L; ++l) {
        if (!all_heads && l != 0) continue;
        cache.logits[l] = conv1_forward(cache.feat[l], params_[head_[l].w].w, params_[head_[l].b].w);
    }
}

ForwardState Backbone::forward_train(const MultiModalSample& s, bool need_uni_pyramids) const {
    const int M = cfg_.n_modalities, L = cfg_.levels - 1;
    if (static_cast<int>(s.presence_row.size()) != M)
        throw std::invalid_argument("backbone: sample modality count mismatch");
    ForwardState st;
    st.input_shape = s.label.shape;
    if (static_cast<int>(st.input_shape.size()) != cfg_.rank)
        throw std::invalid_argument("backbone: sample rank mismatch");
    for (int d : st.input_shape)
        if (d % (1 << L) != 0)
            throw std::invalid_argument("backbone: spatial dims must be divisible by 2^L");
    for (int m = 0; m < M; ++m)
        if (s.presence_row[m]) st.available.push_back(m);
    if (st.available.empty()) throw std::invalid_argument("backbone: empty presence row");

    for (int m : st.available) run_encoder(m, s.images[static_cast<size_t>(m)], st.enc[m]);

    const int n_avail = static_cast<int>(st.available.size());
    std::vector<const Tensor*> feats(static_cast<size_t>(cfg_.levels) * M, nullptr);
    for (int l = 0; l <= L; ++l)
        for (int m : st.available)
            feats[static_cast<size_t>(l) * M + m] = &st.enc[m].r2[static_cast<size_t>(l)];
    run_decoder(feats, n_avail, st.fused, true);

    for (int m : st.available) {
        std::vector<const Tensor*> solo(static_cast<size_t>(cfg_.levels) * M, nullptr);
        for (int l = 0; l <= L; ++l)
            solo[static_cast<size_t>(l) * M + m] = &st.enc[m].r2[static_cast<size_t>(l)];
        run_decoder(solo, 1, st.uni[m], need_uni_pyramids);
    }

    st.pyramid.fused_logits = st.fused.logits;
    for (int m : st.available) {
        st.pyramid.present.insert(m);
        st.pyramid.uni_logits[m] = st.uni[m].logits[0];
        if (need_uni_pyramids) st.pyramid.uni_pyramids[m] = st.uni[m].logits;
    }
    return st;
}

FeaturePyramid Backbone::forward(const MultiModalSample& s, bool need_uni_pyramids) const {
    return forward_train(s, need_uni_pyramids).pyramid;
}

void Backbone::backward_decoder(const PassCache& cache, const std::vector<Tensor>& head_grads,
                                int n_available, std::vector<Tensor>& dskips,
                                std::map<int, std::vector<Tensor>>& denc,
                                const std::vector<int>& members) {
    const int L = cfg_.levels - 1, M = cfg_.n_modalities;
    std::vector<Tensor> dfeat(static_cast<size_t>(cfg_.levels));
    for (int l = 0; l <= L; ++l) dfeat[l] = Tensor(cache.feat[l].shape());

    for (int l = 0; l <= L; ++l) {
        if (l >= static_cast<int>(head_grads.size()) || head_grads[l].empty()) continue;
        conv1_backward(head_grads[l], cache.feat[l], params_[head_[l].w].w,
                       params_[head_[l].w].g, params_[head_[l].b].g, &dfeat[l]);
    }

    dskips.assign(static_cast<size_t>(cfg_.levels), Tensor());
    for (int l = 0; l <= L; ++l) dskips[l] = Tensor(cache.skips[l].shape());

    for (int l = 0; l <= L; ++l) {
        Tensor dpre = relu_backward(dfeat[l], cache.feat[l]);
        if (l == L) {
            conv3_backward(dpre, cache.conv[L], params_[bott_.w].w, params_[bott_.w].g,
                           params_[bott_.b].g, &dskips[L]);
        } else {
            std::vector<int> cat_shape = cache.skips[l].shape();
            const int c_skip = cat_shape[0];
            const int c_up = cfg_.channels(l + 1);
            cat_shape[0] = c_skip + c_up;
            Tensor dcat(cat_shape);
            conv3_backward(dpre, cache.conv[l], params_[dec_[l].w].w, params_[dec_[l].w].g,
                           params_[dec_[l].b].g, &dcat);
            const size_t skip_sz = cache.skips[l].size();
            for (size_t i = 0; i < skip_sz; ++i) dskips[l][i] += dcat[i];
            std::vector<int> up_shape = cat_shape;
            up_shape[0] = c_up;
            Tensor dup(up_shape, std::vector<real>(dcat.data() + skip_sz,
                                                   dcat.data() + dcat.size()));
            Tensor dprev = upsample_logits_backward(dup, cache.feat[l + 1].shape(), 2, cfg_.upsample);
            for (size_t i = 0; i < dprev.size(); ++i) dfeat[l + 1][i] += dprev[i];
        }
    }

    // Route skip gradients to member encoder features.
    for (int l = 0; l <= L; ++l) {
        if (cfg_.fusion == FusionRule::Mix) {
            std::vector<int> cat_shape = cache.mix[l].x.shape();
            Tensor dcat(cat_shape);
            conv1_backward(dskips[l], cache.mix[l].x, params_[mix_[l].w].w, params_[mix_[l].w].g,
                           params_[mix_[l].b].g, &dcat);
            const size_t block = dcat.size() / static_cast<size_t>(M);
            for (int m : members) {
                Tensor& dst = denc[m][static_cast<size_t>(l)];
                const real* src = dcat.data() + static_cast<size_t>(m) * block;
                for (size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
        } else {
            const real scale = (cfg_.fusion == FusionRule::Mean && n_available > 1)
                                   ? 1.0 / n_available
                                   : 1.0;
            for (int m : members) {
                Tensor& dst = denc[m][static_cast<size_t>(l)];
                for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * dskips[l][i];
            }
        }
    }
}

void Backbone::backward_encoder(int m, const EncCache& cache, std::vector<Tensor>& dfeat) {
    const int L = cfg_.levels - 1;
    Tensor dnext;  // gradient flowing to pooled output of level l (from level l+1 input)
    for (int l = L; l >= 0; --l) {
        Tensor dr2 = dfeat[static_cast<size_t>(l)];
        if (l < L && !dnext.empty()) {
            Tensor dpool = avgpool2_backward(dnext, cache.r2[static_cast<size_t>(l)].shape());
            for (size_t i = 0; i < dr2.size(); ++i) dr2[i] += dpool[i];
        }
        Tensor dpre2 = relu_backward(dr2, cache.r2[static_cast<size_t>(l)]);
        Tensor dr1(cache.r1[static_cast<size_t>(l)].shape());
        conv3_backward(dpre2, cache.c2[static_cast<size_t>(l)], params_[enc_c2_[m][l].w].w,
                       params_[enc_c2_[m][l].w].g, params_[enc_c2_[m][l].b].g, &dr1);
        Tensor dpre1 = relu_backward(dr1, cache.r1[static_cast<size_t>(l)]);
        if (l > 0) {
            Tensor dx(cache.c1[static_cast<size_t>(l)].in_shape);
            conv3_backward(dpre1, cache.c1[static_cast<size_t>(l)], params_[enc_c1_[m][l].w].w,
                           params_[enc_c1_[m][l].w].g, params_[enc_c1_[m][l].b].g, &dx);
            dnext = std::move(dx);
        } else {
            conv3_backward(dpre1, cache.c1[0], params_[enc_c1_[m][0].w].w,
                           params_[enc_c1_[m][0].w].g, params_[enc_c1_[m][0].b].g, nullptr);
        }
    }
}

void Backbone::backward(const ForwardState& st, const HeadGrads& grads) {
    const int n_avail = static_cast<int>(st.available.size());
    std::map<int, std::vector<Tensor>> denc;
    for (int m : st.available) {
        auto& v = denc[m];
        v.resize(static_cast<size_t>(cfg_.levels));
        for (int l = 0; l < cfg_.levels; ++l)
            v[static_cast<size_t>(l)] = Tensor(st.enc.at(m).r2[static_cast<size_t>(l)].shape());
    }

    std::vector<Tensor> dskips;
    if (!grads.fused.empty())
        backward_decoder(st.fused, grads.fused, n_avail, dskips, denc, st.available);
    for (int m : st.available) {
        auto it = grads.uni.find(m);
        if (it == grads.uni.end()) continue;
        bool any = false;
        for (const auto& t : it->second) any = any || !t.empty();
        if (!any) continue;
        backward_decoder(st.uni.at(m), it->second, 1, dskips, denc, {m});
    }
    for (int m : st.available) backward_encoder(m, st.enc.at(m), denc[m]);
}

void Backbone::zero_grad() {
    for (auto& p : params_) p.g.zero();
}

void Backbone::adamw_step(real lr, real weight_decay) {
    constexpr real b1 = 0.9, b2 = 0.999, eps = 1e-8;
    adam_t_ += 1;
    const real bc1 = 1.0 - std::pow(b1, static_cast<real>(adam_t_));
    const real bc2 = 1.0 - std::pow(b2, static_cast<real>(adam_t_));
    for (auto& p : params_) {
        for (size_t i = 0; i < p.w.size(); ++i) {
            const real g = p.g[i];
            p.adam_m[i] = b1 * p.adam_m[i] + (1.0 - b1) * g;
            p.adam_v[i] = b2 * p.adam_v[i] + (1.0 - b2) * g * g;
            const real mhat = p.adam_m[i] / bc1;
            const real vhat = p.adam_v[i] / bc2;
            p.w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.w[i]);
        }
    }
}

int64_t Backbone::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += static_cast<int64_t>(p.w.size());
    return n;
}

int64_t Backbone::parameter_count(const BackboneConfig& cfg) {
    validate(cfg);
    const int L = cfg.levels - 1;
    const int64_t k = cfg.rank == 2 ? 9 : 27;
    int64_t n = 0;
    for (int l = 0; l <= L; ++l) {
        const int64_t cin = l == 0 ? 1 : cfg.channels(l - 1);
        const int64_t c = cfg.channels(l);
        n += cfg.n_modalities * (c * cin * k + c + c * c * k + c);
    }
    if (cfg.fusion == FusionRule::Mix)
        for (int l = 0; l <= L; ++l) {
            const int64_t c = cfg.channels(l);
            n += c * (cfg.n_modalities * c) + c;
        }
    {
        const int64_t c = cfg.channels(L);
        n += c * c * k + c;
    }
    for (int l = 0; l < L; ++l) {
        const int64_t c = cfg.channels(l), cin = cfg.channels(l) + cfg.channels(l + 1);
        n += c * cin * k + c;
    }
    for (int l = 0; l <= L; ++l) n += static_cast<int64_t>(cfg.n_classes) * cfg.channels(l) + cfg.n_classes;
    return n;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

void write_u32(std::ofstream& f, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    f.write(b, 4);
}

uint32_t read_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void Backbone::save_checkpoint(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write("MBCK", 4);
    write_u32(f, 1);  // version
    write_u32(f, static_cast<uint32_t>(cfg_.n_modalities));
    write_u32(f, static_cast<uint32_t>(cfg_.n_classes));
    write_u32(f, static_cast<uint32_t>(cfg_.width));
    write_u32(f, static_cast<uint32_t>(cfg_.levels));
    write_u32(f, static_cast<uint32_t>(cfg_.rank));
    write_u32(f, static_cast<uint32_t>(cfg_.fusion));
    write_u32(f, static_cast<uint32_t>(cfg_.upsample));
    write_u32(f, static_cast<uint32_t>(params_.size()));
    for (const auto& p : params_) {
        write_u32(f, static_cast<uint32_t>(p.name.size()));
        f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u32(f, static_cast<uint32_t>(p.w.shape().size()));
        for (int d : p.w.shape()) write_u32(f, static_cast<uint32_t>(d));
        f.write(reinterpret_cast<const char*>(p.w.data()),
                static_cast<std::streamsize>(p.w.size() * sizeof(real)));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Backbone Backbone::load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MBCK", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (read_u32(f) != 1) throw std::runtime_error("checkpoint: unsupported version");
    BackboneConfig cfg;
    cfg.n_modalities = static_cast<int>(read_u32(f));
    cfg.n_classes = static_cast<int>(read_u32(f));
    cfg.width = static_cast<int>(read_u32(f));
    cfg.levels = static_cast<int>(read_u32(f));
    cfg.rank = static_cast<int>(read_u32(f));
    cfg.fusion = static_cast<FusionRule>(read_u32(f));
    cfg.upsample = static_cast<UpsampleMode>(read_u32(f));

    Backbone net(cfg, 0);
    const uint32_t count = read_u32(f);
    if (count != net.params_.size())
        throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    for (auto& p : net.params_) {
        const uint32_t name_len = read_u32(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        if (!f || name != p.name)
            throw std::runtime_error("checkpoint: parameter name mismatch in " + path);
        const uint32_t nd = read_u32(f);
        std::vector<int> shape(nd);
        for (uint32_t a = 0; a < nd; ++a) shape[a] = static_cast<int>(read_u32(f));
        if (shape != p.w.shape())
            throw std::runtime_error("checkpoint: parameter shape mismatch in " + path);
        f.read(reinterpret_cast<char*>(p.w.data()),
               static_cast<std::streamsize>(p.w.size() * sizeof(real)));
        if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
    }
    return net;
}

void validate(const FeaturePyramid& pyr, const BackboneConfig& cfg,
              const std::vector<int>& input_shape) {
    if (static_cast<int>(pyr.fused_logits.size()) != cfg.levels)
        throw std::invalid_argument("pyramid: wrong number of levels");
    for (int l = 0; l < cfg.levels; ++l) {
        const Tensor& t = pyr.fused_logits[static_cast<size_t>(l)];
        if (t.dim(0) != cfg.n_classes) throw std::invalid_argument("pyramid: wrong channel count");
        for (int a = 0; a < cfg.rank; ++a)
            if (t.dim(a + 1) != input_shape[static_cast<size_t>(a)] / (1 << l))
                throw std::invalid_argument("pyramid: wrong spatial shape at level " +
                                            std::to_string(l));
        if (!t.all_finite()) throw std::invalid_argument("pyramid: non-finite fused logits");
    }
    for (const auto& [m, t] : pyr.uni_logits) {
        if (pyr.present.count(m) == 0)
            throw std::invalid_argument("pyramid: uni logits for absent modality");
        if (!t.all_finite()) throw std::invalid_argument("pyramid: non-finite uni logits");
    }
    for (int m : pyr.present)
        if (pyr.uni_logits.count(m) == 0)
            throw std::invalid_argument("pyramid: missing uni logits for present modality");
}

}  // namespace modbal
