#include "volcomp/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include <fmt/format.h>

#include "volcomp/errors.hpp"

namespace volcomp {

namespace {

void require_same_dims(const Volume3D& a, const Volume3D& b, const char* what) {
  if (a.dims() != b.dims()) {
    throw InvalidArgument(fmt::format("{}: dims differ ({} vs {})", what, to_string(a.dims()), to_string(b.dims())));
  }
}

// Sums of f over every w^3 window fully inside the grid; result has dims n - w + 1.
std::vector<double> box_sums(std::vector<double> f, Dims3 d, int w) {
  // x pass
  const int ox = d.nx - w + 1;
  std::vector<double> sx(static_cast<std::size_t>(ox) * d.ny * d.nz);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y) {
      const double* row = f.data() + static_cast<std::size_t>(d.nx) * (y + static_cast<std::size_t>(d.ny) * z);
      double* out = sx.data() + static_cast<std::size_t>(ox) * (y + static_cast<std::size_t>(d.ny) * z);
      for (int x = 0; x < ox; ++x) {
        double s = 0.0;
        for (int k = 0; k < w; ++k) s += row[x + k];
        out[x] = s;
      }
    }
  // y pass
  const int oy = d.ny - w + 1;
  std::vector<double> sy(static_cast<std::size_t>(ox) * oy * d.nz);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < oy; ++y)
      for (int x = 0; x < ox; ++x) {
        double s = 0.0;
        for (int k = 0; k < w; ++k) s += sx[x + static_cast<std::size_t>(ox) * (y + k + static_cast<std::size_t>(d.ny) * z)];
        sy[x + static_cast<std::size_t>(ox) * (y + static_cast<std::size_t>(oy) * z)] = s;
      }
  // z pass
  const int oz = d.nz - w + 1;
  std::vector<double> sz(static_cast<std::size_t>(ox) * oy * oz);
  const std::size_t plane = static_cast<std::size_t>(ox) * oy;
  for (int z = 0; z < oz; ++z)
    for (std::size_t i = 0; i < plane; ++i) {
      double s = 0.0;
      for (int k = 0; k < w; ++k) s += sy[i + plane * static_cast<std::size_t>(z + k)];
      sz[i + plane * static_cast<std::size_t>(z)] = s;
    }
  return sz;
}

}  // namespace

double psnr(const Volume3D& a, const Volume3D& b, double data_range) {
  require_same_dims(a, b, "psnr");
  if (!(data_range > 0.0)) throw InvalidArgument("psnr: data_range must be positive");
  if (a.empty()) throw InvalidArgument("psnr: empty volumes");
  double sse = 0.0;
  const auto va = a.voxels();
  const auto vb = b.voxels();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = static_cast<double>(va[i]) - static_cast<double>(vb[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(va.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

void SsimParams::validate() const {
  if (window < 3 || window % 2 == 0) throw InvalidArgument("ssim window must be odd and >= 3");
  if (!(k1 > 0.0) || !(k2 > 0.0)) throw InvalidArgument("ssim k1 and k2 must be positive");
  if (!(data_range > 0.0)) throw InvalidArgument("ssim data_range must be positive");
}

double ssim3d(const Volume3D& a, const Volume3D& b, const SsimParams& p) {
  p.validate();
  require_same_dims(a, b, "ssim3d");
  const Dims3 d = a.dims();
  const int w = p.window;
  if (d.nx < w || d.ny < w || d.nz < w) {
    throw InvalidArgument(fmt::format("ssim3d: window {} exceeds volume {}", w, to_string(d)));
  }
  const std::size_t n = d.count();
  std::vector<double> fa(n), fb(n), faa(n), fbb(n), fab(n);
  const auto va = a.voxels();
  const auto vb = b.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    fa[i] = va[i];
    fb[i] = vb[i];
    faa[i] = fa[i] * fa[i];
    fbb[i] = fb[i] * fb[i];
    fab[i] = fa[i] * fb[i];
  }
  const auto sa = box_sums(std::move(fa), d, w);
  const auto sb = box_sums(std::move(fb), d, w);
  const auto saa = box_sums(std::move(faa), d, w);
  const auto sbb = box_sums(std::move(fbb), d, w);
  const auto sab = box_sums(std::move(fab), d, w);

  const double inv = 1.0 / (static_cast<double>(w) * w * w);
  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
  const double c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double mu_a = sa[i] * inv;
    const double mu_b = sb[i] * inv;
    const double var_a = saa[i] * inv - mu_a * mu_a;
    const double var_b = sbb[i] * inv - mu_b * mu_b;
    const double cov = sab[i] * inv - mu_a * mu_b;
    total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
  }
  return total / static_cast<double>(sa.size());
}

void SegmentThresholds::validate() const {
  if (!(csf_gm > 0.0 && csf_gm < gm_wm && gm_wm < 1.0)) {
    throw InvalidArgument(fmt::format("segmentation thresholds must satisfy 0 < {} < {} < 1", csf_gm, gm_wm));
  }
  if (background && !(*background > 0.0 && *background < csf_gm)) {
    throw InvalidArgument(fmt::format("background cut {} must lie in (0, {})", *background, csf_gm));
  }
}

LabelVolume segment_tissues(const Volume3D& v, const SegmentThresholds& th) {
  th.validate();
  LabelVolume out{v.dims(), v.spacing(), std::vector<std::uint8_t>(v.size())};
  const auto vox = v.voxels();
  for (std::size_t i = 0; i < vox.size(); ++i) {
    const double x = vox[i];
    Tissue t = x < th.csf_gm ? Tissue::csf : (x < th.gm_wm ? Tissue::gm : Tissue::wm);
    out.labels[i] = (th.background && x < *th.background) ? kBackgroundLabel : static_cast<std::uint8_t>(t);
  }
  return out;
}

TissueVolumes tissue_volumes(const LabelVolume& labels) {
  std::array<std::size_t, kTissueCount> counts{};
  for (std::uint8_t l : labels.labels) {
    if (l < kTissueCount) ++counts[l];
  }
  TissueVolumes out{};
  for (int c = 0; c < kTissueCount; ++c) {
    out[static_cast<std::size_t>(c)] = static_cast<double>(counts[static_cast<std::size_t>(c)]) * labels.spacing.voxel_volume();
  }
  return out;
}

}  // namespace volcomp
