#pragma once

// Slow, direct reference implementations used to check the library. None of
// these share code with core/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "volcomp/denoiser.hpp"
#include "volcomp/volume.hpp"

namespace volcomp::oracle {

inline Volume3D random_volume(Dims3 d, std::mt19937_64& gen, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<float> v(d.count());
  for (float& x : v) x = static_cast<float>(u(gen));
  return Volume3D(d, {1, 1, 1}, std::move(v));
}

inline double psnr(const Volume3D& a, const Volume3D& b, double range = 1.0) {
  long double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a.voxels()[i]) - b.voxels()[i];
    se += d * d;
  }
  if (se == 0) return std::numeric_limits<double>::infinity();
  const long double mse = se / a.size();
  return static_cast<double>(10.0L * std::log10(static_cast<long double>(range) * range / mse));
}

// Window statistics recomputed from scratch at every position.
inline double ssim(const Volume3D& a, const Volume3D& b, int w, double k1 = 0.01, double k2 = 0.03,
                   double range = 1.0) {
  const Dims3 d = a.dims();
  const long double c1 = (k1 * range) * (k1 * range), c2 = (k2 * range) * (k2 * range);
  const long double n = static_cast<long double>(w) * w * w;
  long double total = 0;
  long long count = 0;
  for (int z0 = 0; z0 + w <= d.nz; ++z0)
    for (int y0 = 0; y0 + w <= d.ny; ++y0)
      for (int x0 = 0; x0 + w <= d.nx; ++x0) {
        long double ma = 0, mb = 0;
        for (int z = z0; z < z0 + w; ++z)
          for (int y = y0; y < y0 + w; ++y)
            for (int x = x0; x < x0 + w; ++x) {
              ma += a.at(x, y, z);
              mb += b.at(x, y, z);
            }
        ma /= n;
        mb /= n;
        long double va = 0, vb = 0, cov = 0;
        for (int z = z0; z < z0 + w; ++z)
          for (int y = y0; y < y0 + w; ++y)
            for (int x = x0; x < x0 + w; ++x) {
              const long double da = a.at(x, y, z) - ma, db = b.at(x, y, z) - mb;
              va += da * da;
              vb += db * db;
              cov += da * db;
            }
        va /= n;
        vb /= n;
        cov /= n;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return static_cast<double>(total / count);
}

inline Volume3D block_mean2(const Volume3D& v) {
  const Dims3 d = v.dims();
  const Dims3 h{d.nx / 2, d.ny / 2, d.nz / 2};
  std::vector<float> out(h.count());
  for (int z = 0; z < h.nz; ++z)
    for (int y = 0; y < h.ny; ++y)
      for (int x = 0; x < h.nx; ++x) {
        double s = 0;
        for (int c = 0; c < 8; ++c) s += v.at(2 * x + (c & 1), 2 * y + ((c >> 1) & 1), 2 * z + (c >> 2));
        out[x + h.nx * (y + h.ny * z)] = static_cast<float>(s / 8);
      }
  const Spacing3 s = v.spacing();
  return Volume3D(h, {2 * s.sx, 2 * s.sy, 2 * s.sz}, std::move(out));
}

// Feature maps {C, nx, ny, nz} flattened x-fastest within each channel.
struct Grid {
  int c, nx, ny, nz;
  [[nodiscard]] std::size_t at(int ch, int x, int y, int z) const {
    return static_cast<std::size_t>(((ch * nz + z) * ny + y) * nx + x);
  }
  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(c) * nx * ny * nz; }
};

// Weight layout w[co][ci][kz][ky][kx].
inline std::vector<double> conv3d_same(const std::vector<double>& x, Grid g, const std::vector<double>& w,
                                       const std::vector<double>& b, int cout, int k) {
  const int r = k / 2;
  Grid o{cout, g.nx, g.ny, g.nz};
  std::vector<double> y(o.size());
  for (int co = 0; co < cout; ++co)
    for (int z = 0; z < g.nz; ++z)
      for (int yy = 0; yy < g.ny; ++yy)
        for (int xx = 0; xx < g.nx; ++xx) {
          double s = b[co];
          for (int ci = 0; ci < g.c; ++ci)
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int sx = xx + kx - r, sy = yy + ky - r, sz = z + kz - r;
                  if (sx < 0 || sy < 0 || sz < 0 || sx >= g.nx || sy >= g.ny || sz >= g.nz) continue;
                  s += w[(((co * g.c + ci) * k + kz) * k + ky) * k + kx] * x[g.at(ci, sx, sy, sz)];
                }
          y[o.at(co, xx, yy, z)] = s;
        }
  return y;
}

// Scatter definition: every input voxel stamps the kernel at stride offsets.
// Weight layout w[ci][co][kz][ky][kx].
inline std::vector<double> conv_transpose3d(const std::vector<double>& x, Grid g, const std::vector<double>& w,
                                            const std::vector<double>& b, int cout, int k, int stride, int pad,
                                            Grid* out_grid = nullptr) {
  Grid o{cout, (g.nx - 1) * stride - 2 * pad + k, (g.ny - 1) * stride - 2 * pad + k,
         (g.nz - 1) * stride - 2 * pad + k};
  std::vector<double> y(o.size());
  for (int co = 0; co < cout; ++co)
    for (int z = 0; z < o.nz; ++z)
      for (int yy = 0; yy < o.ny; ++yy)
        for (int xx = 0; xx < o.nx; ++xx) y[o.at(co, xx, yy, z)] = b[co];
  for (int ci = 0; ci < g.c; ++ci)
    for (int z = 0; z < g.nz; ++z)
      for (int yy = 0; yy < g.ny; ++yy)
        for (int xx = 0; xx < g.nx; ++xx)
          for (int co = 0; co < cout; ++co)
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int ox = xx * stride - pad + kx, oy = yy * stride - pad + ky, oz = z * stride - pad + kz;
                  if (ox < 0 || oy < 0 || oz < 0 || ox >= o.nx || oy >= o.ny || oz >= o.nz) continue;
                  y[o.at(co, ox, oy, oz)] +=
                      w[(((ci * cout + co) * k + kz) * k + ky) * k + kx] * x[g.at(ci, xx, yy, z)];
                }
  if (out_grid) *out_grid = o;
  return y;
}

// ---- scalar diffusion ----

inline double alpha_bar(const std::vector<double>& betas, int t) {
  double p = 1.0;
  for (int s = 1; s <= t; ++s) p *= 1.0 - betas[s - 1];
  return p;
}

inline std::vector<double> linear_betas(double b0, double b1, int T) {
  std::vector<double> b(T);
  for (int t = 1; t <= T; ++t) b[t - 1] = T == 1 ? b0 : b0 + (b1 - b0) * (t - 1) / (T - 1);
  return b;
}

inline double ddim_scalar(double x_t, double eps, double ab_t, double ab_prev, double eta, double noise) {
  const double x0 = (x_t - std::sqrt(1 - ab_t) * eps) / std::sqrt(ab_t);
  const double sigma = eta * std::sqrt((1 - ab_prev) / (1 - ab_t)) * std::sqrt(1 - ab_t / ab_prev);
  return std::sqrt(ab_prev) * x0 + std::sqrt(1 - ab_prev - sigma * sigma) * eps + sigma * noise;
}

inline double ddpm_scalar(double x_t, double eps, double beta_t, double ab_t, bool last, double noise) {
  const double mu = (x_t - beta_t / std::sqrt(1 - ab_t) * eps) / std::sqrt(1 - beta_t);
  return last ? mu : mu + std::sqrt(beta_t) * noise;
}

// ---- regression ----

struct Line {
  double intercept, slope;
};

inline Line ols(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const long double slope = sxy / sxx;
  return {static_cast<double>(my - slope * mx), static_cast<double>(slope)};
}

// ---- denoisers that know the answer ----

// Returns the noise that maps a fixed clean volume onto x_t, so sampling must
// land on that volume.
class KnownGenerateDenoiser final : public GenerateDenoiser {
 public:
  KnownGenerateDenoiser(std::vector<double> x0, Dims3 dims, std::vector<double> betas)
      : x0_(std::move(x0)), dims_(dims), betas_(std::move(betas)) {}
  [[nodiscard]] Dims3 dims() const override { return dims_; }
  [[nodiscard]] std::vector<double> predict_eps(std::span<const double> x_t, int t,
                                                const GuidanceBundle&) const override {
    return eps(x_t, t);
  }
  [[nodiscard]] std::vector<double> eps(std::span<const double> x_t, int t) const {
    const double ab = alpha_bar(betas_, t);
    std::vector<double> e(x_t.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (x_t[i] - std::sqrt(ab) * x0_[i]) / std::sqrt(1 - ab);
    return e;
  }

 private:
  std::vector<double> x0_;
  Dims3 dims_;
  std::vector<double> betas_;
};

// Refine-stage counterpart: the clean high-resolution target is a fixed
// function of the condition, here nearest-neighbor upsampling.
class KnownSrDenoiser final : public SrDenoiser {
 public:
  KnownSrDenoiser(Dims3 low, std::vector<double> betas) : low_(low), betas_(std::move(betas)) {}
  [[nodiscard]] Dims3 low_dims() const override { return low_; }
  [[nodiscard]] std::vector<double> target(std::span<const double> z) const {
    const Dims3 h = high_dims();
    std::vector<double> x(h.count());
    for (int zz = 0; zz < h.nz; ++zz)
      for (int y = 0; y < h.ny; ++y)
        for (int xx = 0; xx < h.nx; ++xx)
          x[xx + h.nx * (y + h.ny * zz)] = z[xx / 2 + low_.nx * (y / 2 + low_.ny * (zz / 2))];
    return x;
  }
  [[nodiscard]] std::vector<double> predict_eps(std::span<const double> x_t, int t,
                                                std::span<const double> z) const override {
    const std::vector<double> x0 = target(z);
    const double ab = alpha_bar(betas_, t);
    std::vector<double> e(x_t.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (x_t[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1 - ab);
    return e;
  }

 private:
  Dims3 low_;
  std::vector<double> betas_;
};

}  // namespace volcomp::oracle
