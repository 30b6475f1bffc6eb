#include "volcomp/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <fmt/format.h>

#include "volcomp/errors.hpp"

namespace volcomp::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct Grid {
  int nx, ny, nz;
  [[nodiscard]] std::size_t count() const { return static_cast<std::size_t>(nx) * ny * nz; }
};

template <class T>
Grid grid_of(const Tensor<T>& t, const char* what) {
  if (t.shape.size() != 4) {
    throw InvalidArgument(fmt::format("{}: expected a {{C, nx, ny, nz}} feature map", what));
  }
  return {t.shape[1], t.shape[2], t.shape[3]};
}

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// col[(ci, kz, ky, kx), voxel] = x[ci, voxel + k - pad] (zero outside).
// Zero-padded copy of a feature map: {channels, nx+2p, ny+2p, nz+2p}.
template <class T>
Buffer<T> pad_copy(const T* x, int channels, Grid g, int p) {
  const Grid gp{g.nx + 2 * p, g.ny + 2 * p, g.nz + 2 * p};
  Buffer<T> out(static_cast<std::size_t>(channels) * gp.count(), T{0});
  for (int c = 0; c < channels; ++c)
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y) {
        const T* s = x + g.nx * (y + static_cast<std::size_t>(g.ny) * (z + static_cast<std::size_t>(g.nz) * c));
        T* d = out.data() + p +
               gp.nx * (y + p + static_cast<std::size_t>(gp.ny) * (z + p + static_cast<std::size_t>(gp.nz) * c));
        std::copy(s, s + g.nx, d);
      }
  return out;
}

// Interior of a padded map, accumulated into (or assigned to) x.
template <class T>
void unpad_into(const T* xp, int channels, Grid g, int p, T* x, bool accumulate) {
  const Grid gp{g.nx + 2 * p, g.ny + 2 * p, g.nz + 2 * p};
  for (int c = 0; c < channels; ++c)
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y) {
        const T* s = xp + p +
                     gp.nx * (y + p + static_cast<std::size_t>(gp.ny) * (z + p + static_cast<std::size_t>(gp.nz) * c));
        T* d = x + g.nx * (y + static_cast<std::size_t>(g.ny) * (z + static_cast<std::size_t>(g.nz) * c));
        if (accumulate) {
          for (int i = 0; i < g.nx; ++i) d[i] += s[i];
        } else {
          std::copy(s, s + g.nx, d);
        }
      }
}

// Flat offset of each kernel tap on the padded grid, in weight order
// (kx fastest).
inline std::vector<std::ptrdiff_t> tap_offsets(Grid gp, int k) {
  const int p = k / 2;
  std::vector<std::ptrdiff_t> off;
  for (int kz = 0; kz < k; ++kz)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx)
        off.push_back((kx - p) + static_cast<std::ptrdiff_t>(gp.nx) * ((ky - p) + static_cast<std::ptrdiff_t>(gp.ny) * (kz - p)));
  return off;
}

// Weight {cout, cin, taps} regrouped as taps blocks of row-major {cout, cin}.
template <class T>
Buffer<T> taps_major(const T* w, int cout, int cin, int taps) {
  Buffer<T> out(static_cast<std::size_t>(cout) * cin * taps);
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cin; ++i)
      for (int k = 0; k < taps; ++k)
        out[(static_cast<std::size_t>(k) * cout + o) * cin + i] = w[(static_cast<std::size_t>(o) * cin + i) * taps + k];
  return out;
}

// Columns of the padded grid processed per block; keeps the working set of
// one block in cache across all taps.
constexpr std::ptrdiff_t kConvTile = 4096;

// Calls fn(lo, len, off, tap) for every tile and tap such that columns
// [lo, lo+len) of the output and [lo+off, lo+off+len) of the input are in range.
template <class Fn>
void for_each_tile_tap(std::ptrdiff_t np, const std::vector<std::ptrdiff_t>& offs, Fn&& fn) {
  for (std::ptrdiff_t t0 = 0; t0 < np; t0 += kConvTile) {
    const std::ptrdiff_t t1 = std::min(np, t0 + kConvTile);
    for (std::size_t tap = 0; tap < offs.size(); ++tap) {
      const std::ptrdiff_t off = offs[tap];
      const std::ptrdiff_t lo = std::max(t0, -off);
      const std::ptrdiff_t hi = std::min(t1, np - off);
      if (hi > lo) fn(lo, hi - lo, off, tap);
    }
  }
}

// Transposed-conv placement: output o = i * stride - pad + kk per axis.
// Scatter (forward) when `scatter`, gather (backward) otherwise.
template <class T, bool Scatter>
void strided_place(T* cols, int channels, Grid in, Grid out, int k, int stride, int pad, T* y) {
  const std::size_t n_in = in.count();
  const std::size_t n_out = out.count();
  std::size_t row = 0;
  for (int c = 0; c < channels; ++c) {
    T* yc = y + static_cast<std::size_t>(c) * n_out;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          T* colr = cols + row * n_in;
          for (int iz = 0; iz < in.nz; ++iz) {
            const int oz = iz * stride - pad + kz;
            if (oz < 0 || oz >= out.nz) continue;
            for (int iy = 0; iy < in.ny; ++iy) {
              const int oy = iy * stride - pad + ky;
              if (oy < 0 || oy >= out.ny) continue;
              T* cr = colr + static_cast<std::size_t>(in.nx) * (iy + static_cast<std::size_t>(in.ny) * iz);
              T* yr = yc + static_cast<std::size_t>(out.nx) * (oy + static_cast<std::size_t>(out.ny) * oz);
              for (int ix = 0; ix < in.nx; ++ix) {
                const int ox = ix * stride - pad + kx;
                if (ox < 0 || ox >= out.nx) continue;
                if constexpr (Scatter) {
                  yr[ox] += cr[ix];
                } else {
                  cr[ix] = yr[ox];
                }
              }
            }
          }
        }
  }
}

}  // namespace

template <class T>
Var conv3d(Tape<T>& tape, Var xv, Var wv, Var bv) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& w = tape.value(wv);
  const Tensor<T>& b = tape.value(bv);
  const Grid g = grid_of(x, "conv3d");
  if (w.shape.size() != 5 || w.shape[1] != x.channels() || w.shape[2] % 2 == 0 || w.shape[2] != w.shape[3] ||
      w.shape[2] != w.shape[4]) {
    throw InvalidArgument("conv3d: weight must be {cout, cin, k, k, k} with odd k matching the input channels");
  }
  const int cin = x.channels();
  const int cout = w.shape[0];
  const int k = w.shape[2];
  const int pad = k / 2;
  if (b.size() != static_cast<std::size_t>(cout)) throw InvalidArgument("conv3d: bias size mismatch");
  const auto n = static_cast<Eigen::Index>(g.count());
  const int taps = k * k * k;
  // Output is computed on the padded grid, where every tap is a constant
  // column shift of the padded input; only the interior is kept.
  const Grid gp{g.nx + 2 * pad, g.ny + 2 * pad, g.nz + 2 * pad};
  const auto np = static_cast<std::ptrdiff_t>(gp.count());
  const std::vector<std::ptrdiff_t> offs = tap_offsets(gp, k);

  Tensor<T> y({cout, g.nx, g.ny, g.nz});
  MapMat<T> ym(y.data.data(), cout, n);
  if (k == 1) {
    ym.noalias() = CMapMat<T>(w.data.data(), cout, cin) * CMapMat<T>(x.data.data(), cin, n);
  } else {
    const Buffer<T> xp = pad_copy(x.data.data(), cin, g, pad);
    const Buffer<T> wk = taps_major(w.data.data(), cout, cin, taps);
    Buffer<T> yp(static_cast<std::size_t>(cout) * static_cast<std::size_t>(np), T{0});
    CMapMat<T> xpm(xp.data(), cin, np);
    MapMat<T> ypm(yp.data(), cout, np);
    for_each_tile_tap(np, offs, [&](std::ptrdiff_t lo, std::ptrdiff_t len, std::ptrdiff_t off, std::size_t tap) {
      CMapMat<T> wt(wk.data() + tap * static_cast<std::size_t>(cout * cin), cout, cin);
      ypm.middleCols(lo, len).noalias() += wt * xpm.middleCols(lo + off, len);
    });
    unpad_into(yp.data(), cout, g, pad, y.data.data(), false);
  }
  for (int c = 0; c < cout; ++c) ym.row(c).array() += b.data[static_cast<std::size_t>(c)];

  return tape.record(std::move(y), {xv, wv, bv}, [xv, wv, bv, g, gp, cin, cout, k, pad, taps, n, np, offs](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    CMapMat<T> dym(dy.data.data(), cout, n);
    const Tensor<T>& x = t.value(xv);
    if (t.requires_grad(bv)) {
      auto& db = t.grad(bv).data;
      for (int c = 0; c < cout; ++c) db[static_cast<std::size_t>(c)] += dym.row(c).sum();
    }
    const bool need_w = t.requires_grad(wv);
    const bool need_x = t.requires_grad(xv);
    if (k == 1) {
      if (need_w) {
        MapMat<T>(t.grad(wv).data.data(), cout, cin).noalias() +=
            dym * CMapMat<T>(x.data.data(), cin, n).transpose();
      }
      if (need_x) {
        MapMat<T>(t.grad(xv).data.data(), cin, n).noalias() +=
            CMapMat<T>(t.value(wv).data.data(), cout, cin).transpose() * dym;
      }
      return;
    }
    if (!need_w && !need_x) return;
    // dy on the padded grid, zero outside the interior.
    const Buffer<T> dyp = pad_copy(dy.data.data(), cout, g, pad);
    CMapMat<T> dypm(dyp.data(), cout, np);
    if (need_w) {
      const Buffer<T> xp = pad_copy(x.data.data(), cin, g, pad);
      CMapMat<T> xpm(xp.data(), cin, np);
      Buffer<T> dwk(static_cast<std::size_t>(taps) * cout * cin, T{0});
      for_each_tile_tap(np, offs, [&](std::ptrdiff_t lo, std::ptrdiff_t len, std::ptrdiff_t off, std::size_t tap) {
        MapMat<T> dwt(dwk.data() + tap * static_cast<std::size_t>(cout * cin), cout, cin);
        dwt.noalias() += dypm.middleCols(lo, len) * xpm.middleCols(lo + off, len).transpose();
      });
      auto& dw = t.grad(wv).data;
      for (int o = 0; o < cout; ++o)
        for (int i = 0; i < cin; ++i)
          for (int kt = 0; kt < taps; ++kt)
            dw[(static_cast<std::size_t>(o) * cin + i) * taps + kt] +=
                dwk[(static_cast<std::size_t>(kt) * cout + o) * cin + i];
    }
    if (need_x) {
      const Buffer<T> wk = taps_major(t.value(wv).data.data(), cout, cin, taps);
      Buffer<T> dxp(static_cast<std::size_t>(cin) * static_cast<std::size_t>(np), T{0});
      MapMat<T> dxpm(dxp.data(), cin, np);
      for_each_tile_tap(np, offs, [&](std::ptrdiff_t lo, std::ptrdiff_t len, std::ptrdiff_t off, std::size_t tap) {
        CMapMat<T> wt(wk.data() + tap * static_cast<std::size_t>(cout * cin), cout, cin);
        dxpm.middleCols(lo + off, len).noalias() += wt.transpose() * dypm.middleCols(lo, len);
      });
      unpad_into(dxp.data(), cin, g, pad, t.grad(xv).data.data(), true);
    }
  });
}

template <class T>
Var conv_transpose3d(Tape<T>& tape, Var xv, Var wv, Var bv, int stride, int pad) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& w = tape.value(wv);
  const Tensor<T>& b = tape.value(bv);
  const Grid gi = grid_of(x, "conv_transpose3d");
  if (w.shape.size() != 5 || w.shape[0] != x.channels() || w.shape[2] != w.shape[3] || w.shape[2] != w.shape[4]) {
    throw InvalidArgument("conv_transpose3d: weight must be {cin, cout, k, k, k}");
  }
  if (stride < 1 || pad < 0) throw InvalidArgument("conv_transpose3d: bad stride/pad");
  const int cin = x.channels();
  const int cout = w.shape[1];
  const int k = w.shape[2];
  if (b.size() != static_cast<std::size_t>(cout)) throw InvalidArgument("conv_transpose3d: bias size mismatch");
  auto extent = [&](int n) { return (n - 1) * stride - 2 * pad + k; };
  const Grid go{extent(gi.nx), extent(gi.ny), extent(gi.nz)};
  if (go.nx <= 0 || go.ny <= 0 || go.nz <= 0) throw InvalidArgument("conv_transpose3d: empty output");
  const std::size_t n_in = gi.count();
  const int rows = cout * k * k * k;

  Tensor<T> y({cout, go.nx, go.ny, go.nz});
  {
    Buffer<T> cols(static_cast<std::size_t>(rows) * n_in);
    MapMat<T>(cols.data(), rows, static_cast<Eigen::Index>(n_in)).noalias() =
        CMapMat<T>(w.data.data(), cin, rows).transpose() * CMapMat<T>(x.data.data(), cin, static_cast<Eigen::Index>(n_in));
    strided_place<T, true>(cols.data(), cout, gi, go, k, stride, pad, y.data.data());
  }
  const std::size_t n_out = go.count();
  for (int c = 0; c < cout; ++c) {
    T* yc = y.data.data() + static_cast<std::size_t>(c) * n_out;
    const T bc = b.data[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < n_out; ++i) yc[i] += bc;
  }

  return tape.record(std::move(y), {xv, wv, bv},
                     [xv, wv, bv, gi, go, cin, cout, k, stride, pad, rows, n_in, n_out](Tape<T>& t, Var self) {
                       Tensor<T>& dy = t.grad(self);
                       Buffer<T> dcols(static_cast<std::size_t>(rows) * n_in);
                       strided_place<T, false>(dcols.data(), cout, gi, go, k, stride, pad, dy.data.data());
                       CMapMat<T> dcm(dcols.data(), rows, static_cast<Eigen::Index>(n_in));
                       if (t.requires_grad(wv)) {
                         MapMat<T>(t.grad(wv).data.data(), cin, rows).noalias() +=
                             CMapMat<T>(t.value(xv).data.data(), cin, static_cast<Eigen::Index>(n_in)) * dcm.transpose();
                       }
                       if (t.requires_grad(bv)) {
                         auto& db = t.grad(bv).data;
                         for (int c = 0; c < cout; ++c) {
                           const T* dyc = dy.data.data() + static_cast<std::size_t>(c) * n_out;
                           T acc{0};
                           for (std::size_t i = 0; i < n_out; ++i) acc += dyc[i];
                           db[static_cast<std::size_t>(c)] += acc;
                         }
                       }
                       if (t.requires_grad(xv)) {
                         MapMat<T>(t.grad(xv).data.data(), cin, static_cast<Eigen::Index>(n_in)).noalias() +=
                             CMapMat<T>(t.value(wv).data.data(), cin, rows) * dcm;
                       }
                     });
}

template <class T>
Var avg_pool2(Tape<T>& tape, Var xv) {
  const Tensor<T>& x = tape.value(xv);
  const Grid g = grid_of(x, "avg_pool2");
  if (g.nx % 2 || g.ny % 2 || g.nz % 2) throw InvalidArgument("avg_pool2: spatial dims must be even");
  const int c = x.channels();
  const Grid h{g.nx / 2, g.ny / 2, g.nz / 2};
  Tensor<T> y({c, h.nx, h.ny, h.nz});
  auto in_idx = [g](int x, int y, int z) {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(g.nx) * (y + static_cast<std::size_t>(g.ny) * z);
  };
  const std::size_t ni = g.count();
  const std::size_t no = h.count();
  for (int ch = 0; ch < c; ++ch) {
    const T* xc = x.data.data() + ch * ni;
    T* yc = y.data.data() + ch * no;
    std::size_t o = 0;
    for (int z = 0; z < h.nz; ++z)
      for (int yy = 0; yy < h.ny; ++yy)
        for (int xx = 0; xx < h.nx; ++xx, ++o) {
          T acc{0};
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) acc += xc[in_idx(2 * xx + dx, 2 * yy + dy, 2 * z + dz)];
          yc[o] = acc * T(0.125);
        }
  }
  return tape.record(std::move(y), {xv}, [xv, g, h, c, ni, no, in_idx](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    Tensor<T>& dx = t.grad(xv);
    for (int ch = 0; ch < c; ++ch) {
      const T* dyc = dy.data.data() + ch * no;
      T* dxc = dx.data.data() + ch * ni;
      std::size_t o = 0;
      for (int z = 0; z < h.nz; ++z)
        for (int yy = 0; yy < h.ny; ++yy)
          for (int xx = 0; xx < h.nx; ++xx, ++o) {
            const T gv = dyc[o] * T(0.125);
            for (int dz = 0; dz < 2; ++dz)
              for (int dy2 = 0; dy2 < 2; ++dy2)
                for (int dx2 = 0; dx2 < 2; ++dx2) dxc[in_idx(2 * xx + dx2, 2 * yy + dy2, 2 * z + dz)] += gv;
          }
    }
  });
}

template <class T>
Var group_norm(Tape<T>& tape, Var xv, Var gv, Var bv, int groups, double eps) {
  const Tensor<T>& x = tape.value(xv);
  const int c = x.channels();
  if (groups < 1 || c % groups != 0) {
    throw InvalidArgument(fmt::format("group_norm: {} channels not divisible into {} groups", c, groups));
  }
  const std::size_t n = x.spatial();
  const int cpg = c / groups;
  const std::size_t gsize = static_cast<std::size_t>(cpg) * n;
  const Tensor<T>& gamma = tape.value(gv);
  const Tensor<T>& beta = tape.value(bv);

  Tensor<T> y(x.shape);
  Tensor<T> xhat(x.shape);
  Buffer<T> inv_std(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    const T* xg = x.data.data() + g * gsize;
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < gsize; ++i) s += xg[i];
    const double mean = s / static_cast<double>(gsize);
    for (std::size_t i = 0; i < gsize; ++i) {
      const double d = xg[i] - mean;
      ss += d * d;
    }
    const double is = 1.0 / std::sqrt(ss / static_cast<double>(gsize) + eps);
    inv_std[static_cast<std::size_t>(g)] = static_cast<T>(is);
    T* hg = xhat.data.data() + g * gsize;
    for (std::size_t i = 0; i < gsize; ++i) hg[i] = static_cast<T>((xg[i] - mean) * is);
  }
  for (int ch = 0; ch < c; ++ch) {
    const T ga = gamma.data[static_cast<std::size_t>(ch)];
    const T be = beta.data[static_cast<std::size_t>(ch)];
    const T* hc = xhat.data.data() + ch * n;
    T* yc = y.data.data() + ch * n;
    for (std::size_t i = 0; i < n; ++i) yc[i] = ga * hc[i] + be;
  }

  return tape.record(std::move(y), {xv, gv, bv},
                     [xv, gv, bv, c, n, groups, cpg, gsize, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](Tape<T>& t, Var self) {
                       const Tensor<T>& dy = t.grad(self);
                       const Tensor<T>& gamma = t.value(gv);
                       if (t.requires_grad(gv) || t.requires_grad(bv)) {
                         for (int ch = 0; ch < c; ++ch) {
                           const T* dyc = dy.data.data() + ch * n;
                           const T* hc = xhat.data.data() + ch * n;
                           double sg = 0.0, sb = 0.0;
                           for (std::size_t i = 0; i < n; ++i) {
                             sg += static_cast<double>(dyc[i]) * hc[i];
                             sb += dyc[i];
                           }
                           if (t.requires_grad(gv)) t.grad(gv).data[static_cast<std::size_t>(ch)] += static_cast<T>(sg);
                           if (t.requires_grad(bv)) t.grad(bv).data[static_cast<std::size_t>(ch)] += static_cast<T>(sb);
                         }
                       }
                       if (!t.requires_grad(xv)) return;
                       Tensor<T>& dx = t.grad(xv);
                       for (int g = 0; g < groups; ++g) {
                         // dxhat = dy * gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                         double m1 = 0.0, m2 = 0.0;
                         for (int cc = 0; cc < cpg; ++cc) {
                           const int ch = g * cpg + cc;
                           const T ga = gamma.data[static_cast<std::size_t>(ch)];
                           const T* dyc = dy.data.data() + ch * n;
                           const T* hc = xhat.data.data() + ch * n;
                           for (std::size_t i = 0; i < n; ++i) {
                             const double dh = static_cast<double>(dyc[i]) * ga;
                             m1 += dh;
                             m2 += dh * hc[i];
                           }
                         }
                         m1 /= static_cast<double>(gsize);
                         m2 /= static_cast<double>(gsize);
                         const double is = inv_std[static_cast<std::size_t>(g)];
                         for (int cc = 0; cc < cpg; ++cc) {
                           const int ch = g * cpg + cc;
                           const T ga = gamma.data[static_cast<std::size_t>(ch)];
                           const T* dyc = dy.data.data() + ch * n;
                           const T* hc = xhat.data.data() + ch * n;
                           T* dxc = dx.data.data() + ch * n;
                           for (std::size_t i = 0; i < n; ++i) {
                             const double dh = static_cast<double>(dyc[i]) * ga;
                             dxc[i] += static_cast<T>(is * (dh - m1 - hc[i] * m2));
                           }
                         }
                       }
                     });
}

template <class T>
Var silu(Tape<T>& tape, Var xv) {
  const Tensor<T>& x = tape.value(xv);
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.data[i];
    y.data[i] = v / (T{1} + std::exp(-v));
  }
  return tape.record(std::move(y), {xv}, [xv](Tape<T>& t, Var self) {
    const Tensor<T>& x = t.value(xv);
    const Tensor<T>& dy = t.grad(self);
    Tensor<T>& dx = t.grad(xv);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T v = x.data[i];
      const T s = T{1} / (T{1} + std::exp(-v));
      dx.data[i] += dy.data[i] * s * (T{1} + v * (T{1} - s));
    }
  });
}

template <class T>
Var add(Tape<T>& tape, Var av, Var bv) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  if (a.shape != b.shape) throw InvalidArgument("add: shape mismatch");
  Tensor<T> y(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) y.data[i] = a.data[i] + b.data[i];
  return tape.record(std::move(y), {av, bv}, [av, bv](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    if (t.requires_grad(av)) accumulate(t.grad(av), dy);
    if (t.requires_grad(bv)) accumulate(t.grad(bv), dy);
  });
}

template <class T>
Var add_channel_bias(Tape<T>& tape, Var xv, Var vv) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& v = tape.value(vv);
  const int c = x.channels();
  if (v.size() != static_cast<std::size_t>(c)) throw InvalidArgument("add_channel_bias: size mismatch");
  const std::size_t n = x.spatial();
  Tensor<T> y(x.shape);
  for (int ch = 0; ch < c; ++ch) {
    const T bias = v.data[static_cast<std::size_t>(ch)];
    for (std::size_t i = 0; i < n; ++i) y.data[ch * n + i] = x.data[ch * n + i] + bias;
  }
  return tape.record(std::move(y), {xv, vv}, [xv, vv, c, n](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    if (t.requires_grad(xv)) accumulate(t.grad(xv), dy);
    if (t.requires_grad(vv)) {
      auto& dv = t.grad(vv).data;
      for (int ch = 0; ch < c; ++ch) {
        T acc{0};
        for (std::size_t i = 0; i < n; ++i) acc += dy.data[ch * n + i];
        dv[static_cast<std::size_t>(ch)] += acc;
      }
    }
  });
}

template <class T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& xs) {
  if (xs.empty()) throw InvalidArgument("concat_channels: no inputs");
  const Tensor<T>& first = tape.value(xs.front());
  std::vector<int> shape = first.shape;
  int channels = 0;
  for (Var v : xs) {
    const Tensor<T>& t = tape.value(v);
    if (t.shape.size() != shape.size() || !std::equal(t.shape.begin() + 1, t.shape.end(), shape.begin() + 1)) {
      throw InvalidArgument("concat_channels: spatial shape mismatch");
    }
    channels += t.channels();
  }
  shape[0] = channels;
  Tensor<T> y;
  y.shape = shape;
  y.data.reserve(numel(shape));
  std::vector<std::size_t> offsets;
  for (Var v : xs) {
    offsets.push_back(y.data.size());
    const auto& d = tape.value(v).data;
    y.data.insert(y.data.end(), d.begin(), d.end());
  }
  return tape.record(std::move(y), xs, [xs, offsets](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (!t.requires_grad(xs[k])) continue;
      Tensor<T>& dx = t.grad(xs[k]);
      for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dy.data[offsets[k] + i];
    }
  });
}

template <class T>
Var crop_pad(Tape<T>& tape, Var xv, Dims3 target) {
  const Tensor<T>& x = tape.value(xv);
  const Grid g = grid_of(x, "crop_pad");
  if (!target.positive()) throw InvalidArgument("crop_pad: target dims must be positive");
  const int c = x.channels();
  auto shift = [](int n, int tgt) { return tgt >= n ? (tgt - n) / 2 : -((n - tgt) / 2); };
  const int sx = shift(g.nx, target.nx), sy = shift(g.ny, target.ny), sz = shift(g.nz, target.nz);
  // map[o] = input index or -1 for padding
  std::vector<std::ptrdiff_t> map(target.count(), -1);
  for (int z = 0; z < target.nz; ++z) {
    const int iz = z - sz;
    if (iz < 0 || iz >= g.nz) continue;
    for (int y = 0; y < target.ny; ++y) {
      const int iy = y - sy;
      if (iy < 0 || iy >= g.ny) continue;
      for (int xx = 0; xx < target.nx; ++xx) {
        const int ix = xx - sx;
        if (ix < 0 || ix >= g.nx) continue;
        map[static_cast<std::size_t>(xx) + static_cast<std::size_t>(target.nx) * (y + static_cast<std::size_t>(target.ny) * z)] =
            static_cast<std::ptrdiff_t>(ix) + static_cast<std::ptrdiff_t>(g.nx) * (iy + static_cast<std::ptrdiff_t>(g.ny) * iz);
      }
    }
  }
  const std::size_t ni = g.count();
  const std::size_t no = target.count();
  Tensor<T> y({c, target.nx, target.ny, target.nz});
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t o = 0; o < no; ++o)
      if (map[o] >= 0) y.data[ch * no + o] = x.data[ch * ni + static_cast<std::size_t>(map[o])];
  return tape.record(std::move(y), {xv}, [xv, c, ni, no, map = std::move(map)](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    Tensor<T>& dx = t.grad(xv);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t o = 0; o < no; ++o)
        if (map[o] >= 0) dx.data[ch * ni + static_cast<std::size_t>(map[o])] += dy.data[ch * no + o];
  });
}

template <class T>
Var linear(Tape<T>& tape, Var xv, Var wv, Var bv) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& w = tape.value(wv);
  const Tensor<T>& b = tape.value(bv);
  if (w.shape.size() != 2 || static_cast<std::size_t>(w.shape[1]) != x.size() ||
      b.size() != static_cast<std::size_t>(w.shape[0])) {
    throw InvalidArgument("linear: shape mismatch");
  }
  const int out = w.shape[0];
  const int in = w.shape[1];
  Tensor<T> y({out});
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(y.data.data(), out).noalias() =
      CMapMat<T>(w.data.data(), out, in) * Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(x.data.data(), in);
  for (int i = 0; i < out; ++i) y.data[static_cast<std::size_t>(i)] += b.data[static_cast<std::size_t>(i)];
  return tape.record(std::move(y), {xv, wv, bv}, [xv, wv, bv, out, in](Tape<T>& t, Var self) {
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    Eigen::Map<const Vec> dy(t.grad(self).data.data(), out);
    if (t.requires_grad(wv)) {
      MapMat<T>(t.grad(wv).data.data(), out, in).noalias() +=
          dy * Eigen::Map<const Vec>(t.value(xv).data.data(), in).transpose();
    }
    if (t.requires_grad(bv)) Eigen::Map<Vec>(t.grad(bv).data.data(), out) += dy;
    if (t.requires_grad(xv)) {
      Eigen::Map<Vec>(t.grad(xv).data.data(), in).noalias() +=
          CMapMat<T>(t.value(wv).data.data(), out, in).transpose() * dy;
    }
  });
}

template <class T>
Var matmul(Tape<T>& tape, Var av, Var bv, bool ta, bool tb) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  if (a.shape.size() != 2 || b.shape.size() != 2) throw InvalidArgument("matmul: operands must be 2D");
  const int ar = a.shape[0], ac = a.shape[1], br = b.shape[0], bc = b.shape[1];
  const int m = ta ? ac : ar;
  const int k = ta ? ar : ac;
  const int k2 = tb ? bc : br;
  const int n = tb ? br : bc;
  if (k != k2) throw InvalidArgument(fmt::format("matmul: inner dims {} vs {}", k, k2));
  CMapMat<T> am(a.data.data(), ar, ac);
  CMapMat<T> bm(b.data.data(), br, bc);
  Tensor<T> y({m, n});
  MapMat<T> ym(y.data.data(), m, n);
  if (!ta && !tb) ym.noalias() = am * bm;
  else if (ta && !tb) ym.noalias() = am.transpose() * bm;
  else if (!ta && tb) ym.noalias() = am * bm.transpose();
  else ym.noalias() = am.transpose() * bm.transpose();
  return tape.record(std::move(y), {av, bv}, [av, bv, ta, tb, ar, ac, br, bc, m, n](Tape<T>& t, Var self) {
    CMapMat<T> dy(t.grad(self).data.data(), m, n);
    CMapMat<T> am(t.value(av).data.data(), ar, ac);
    CMapMat<T> bm(t.value(bv).data.data(), br, bc);
    if (t.requires_grad(av)) {
      MapMat<T> da(t.grad(av).data.data(), ar, ac);
      // d op(A) = dY op(B)^T
      if (!ta && !tb) da.noalias() += dy * bm.transpose();
      else if (!ta && tb) da.noalias() += dy * bm;
      else if (ta && !tb) da.noalias() += bm * dy.transpose();
      else da.noalias() += bm.transpose() * dy.transpose();
    }
    if (t.requires_grad(bv)) {
      MapMat<T> db(t.grad(bv).data.data(), br, bc);
      // d op(B) = op(A)^T dY
      if (!ta && !tb) db.noalias() += am.transpose() * dy;
      else if (ta && !tb) db.noalias() += am * dy;
      else if (!ta && tb) db.noalias() += dy.transpose() * am;
      else db.noalias() += dy.transpose() * am.transpose();
    }
  });
}

template <class T>
Var softmax_rows(Tape<T>& tape, Var xv) {
  const Tensor<T>& x = tape.value(xv);
  if (x.shape.size() != 2) throw InvalidArgument("softmax_rows: expected a 2D tensor");
  const int r = x.shape[0], c = x.shape[1];
  Tensor<T> y(x.shape);
  for (int i = 0; i < r; ++i) {
    const T* xr = x.data.data() + static_cast<std::size_t>(i) * c;
    T* yr = y.data.data() + static_cast<std::size_t>(i) * c;
    const T mx = *std::max_element(xr, xr + c);
    T s{0};
    for (int j = 0; j < c; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    for (int j = 0; j < c; ++j) yr[j] /= s;
  }
  return tape.record(std::move(y), {xv}, [xv, r, c](Tape<T>& t, Var self) {
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& dy = t.grad(self);
    Tensor<T>& dx = t.grad(xv);
    for (int i = 0; i < r; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * c;
      T dot{0};
      for (int j = 0; j < c; ++j) dot += dy.data[o + j] * y.data[o + j];
      for (int j = 0; j < c; ++j) dx.data[o + j] += y.data[o + j] * (dy.data[o + j] - dot);
    }
  });
}

template <class T>
Var scale(Tape<T>& tape, Var xv, double s) {
  const Tensor<T>& x = tape.value(xv);
  Tensor<T> y(x.shape);
  const T sv = static_cast<T>(s);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = sv * x.data[i];
  return tape.record(std::move(y), {xv}, [xv, sv](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    Tensor<T>& dx = t.grad(xv);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += sv * dy.data[i];
  });
}

template <class T>
Var reshape(Tape<T>& tape, Var xv, std::vector<int> shape) {
  const Tensor<T>& x = tape.value(xv);
  if (numel(shape) != x.size()) throw InvalidArgument("reshape: element count mismatch");
  Tensor<T> y;
  y.shape = std::move(shape);
  y.data = x.data;
  return tape.record(std::move(y), {xv}, [xv](Tape<T>& t, Var self) { accumulate(t.grad(xv), t.grad(self)); });
}

template <class T>
Var transpose(Tape<T>& tape, Var xv) {
  const Tensor<T>& x = tape.value(xv);
  if (x.shape.size() != 2) throw InvalidArgument("transpose: expected a 2D tensor");
  const int r = x.shape[0], c = x.shape[1];
  Tensor<T> y({c, r});
  MapMat<T>(y.data.data(), c, r) = CMapMat<T>(x.data.data(), r, c).transpose();
  return tape.record(std::move(y), {xv}, [xv, r, c](Tape<T>& t, Var self) {
    MapMat<T>(t.grad(xv).data.data(), r, c) += CMapMat<T>(t.grad(self).data.data(), c, r).transpose();
  });
}

template <class T>
Var mse(Tape<T>& tape, Var av, Var bv) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  if (a.size() != b.size()) throw InvalidArgument("mse: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += d * d;
  }
  const double inv_n = a.size() ? 1.0 / static_cast<double>(a.size()) : 0.0;
  Tensor<T> y({1}, static_cast<T>(acc * inv_n));
  return tape.record(std::move(y), {av, bv}, [av, bv, inv_n](Tape<T>& t, Var self) {
    const T g = t.grad(self).data[0];
    const Tensor<T>& a = t.value(av);
    const Tensor<T>& b = t.value(bv);
    const T coef = static_cast<T>(2.0 * inv_n) * g;
    if (t.requires_grad(av)) {
      auto& da = t.grad(av).data;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += coef * (a.data[i] - b.data[i]);
    }
    if (t.requires_grad(bv)) {
      auto& db = t.grad(bv).data;
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= coef * (a.data[i] - b.data[i]);
    }
  });
}

#define VOLCOMP_INSTANTIATE_OPS(T)                                                  \
  template Var conv3d<T>(Tape<T>&, Var, Var, Var);                                 \
  template Var conv_transpose3d<T>(Tape<T>&, Var, Var, Var, int, int);             \
  template Var avg_pool2<T>(Tape<T>&, Var);                                        \
  template Var group_norm<T>(Tape<T>&, Var, Var, Var, int, double);                \
  template Var silu<T>(Tape<T>&, Var);                                             \
  template Var add<T>(Tape<T>&, Var, Var);                                         \
  template Var add_channel_bias<T>(Tape<T>&, Var, Var);                            \
  template Var concat_channels<T>(Tape<T>&, const std::vector<Var>&);              \
  template Var crop_pad<T>(Tape<T>&, Var, Dims3);                                  \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                 \
  template Var matmul<T>(Tape<T>&, Var, Var, bool, bool);                          \
  template Var softmax_rows<T>(Tape<T>&, Var);                                     \
  template Var scale<T>(Tape<T>&, Var, double);                                    \
  template Var reshape<T>(Tape<T>&, Var, std::vector<int>);                        \
  template Var transpose<T>(Tape<T>&, Var);                                        \
  template Var mse<T>(Tape<T>&, Var, Var);

VOLCOMP_INSTANTIATE_OPS(float)
VOLCOMP_INSTANTIATE_OPS(double)

}  // namespace volcomp::nn
