#include "idf/enhancement_losses.hpp"

#include <cmath>
#include <vector>

#include "idf/error.hpp"
#include "idf/simd/kernels.hpp"

namespace idf {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Channel-averaged region means of (pixel - offset) on a rows x cols grid of
// size x size regions. Centring before summation makes a region that sits
// exactly at the offset come out as exactly zero.
struct RegionGrid {
  std::size_t rows = 0, cols = 0, size = 0;
  std::vector<double> mean;
  double at(std::size_t r, std::size_t c) const { return mean[r * cols + c]; }
};

RegionGrid region_means(const Image& img, std::size_t size, double offset = 0.0) {
  RegionGrid g;
  g.size = size;
  g.rows = img.height() / size;
  g.cols = img.width() / size;
  require(g.rows >= 1 && g.cols >= 1, ErrorKind::Parameter,
          "image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) + " is smaller than one " +
              std::to_string(size) + "x" + std::to_string(size) + " region");
  g.mean.assign(g.rows * g.cols, 0.0);
  const double norm = 1.0 / static_cast<double>(3 * size * size);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < g.rows * size; ++y)
      for (std::size_t x = 0; x < g.cols * size; ++x) g.mean[(y / size) * g.cols + x / size] += img.at(c, y, x) - offset;
  for (double& m : g.mean) m *= norm;
  return g;
}

// Spreads a per-region gradient back to every pixel/channel of the region.
void scatter_regions(const RegionGrid& g, const std::vector<double>& d_mean, Tensor& grad) {
  const double norm = 1.0 / static_cast<double>(3 * g.size * g.size);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < g.rows * g.size; ++y)
      for (std::size_t x = 0; x < g.cols * g.size; ++x)
        grad.at(c, y, x) += norm * d_mean[(y / g.size) * g.cols + x / g.size];
}

double spa_impl(const Image& original, const Image& enhanced, const EnhancementLossConfig& cfg, Tensor* grad) {
  require_same_shape(original.tensor(), enhanced.tensor(), "spatial consistency loss");
  const RegionGrid g0 = region_means(original, cfg.spa_region);
  const RegionGrid gn = region_means(enhanced, cfg.spa_region);
  const double regions = static_cast<double>(g0.rows * g0.cols);
  std::vector<double> d_mean(grad ? gn.mean.size() : 0, 0.0);
  double total = 0.0;
  constexpr int kOffsets[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  for (std::size_t r = 0; r < g0.rows; ++r) {
    for (std::size_t c = 0; c < g0.cols; ++c) {
      for (const auto& off : kOffsets) {
        const auto rr = static_cast<std::ptrdiff_t>(r) + off[0];
        const auto cc = static_cast<std::ptrdiff_t>(c) + off[1];
        if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(g0.rows) || cc >= static_cast<std::ptrdiff_t>(g0.cols))
          continue;
        const auto nr = static_cast<std::size_t>(rr);
        const auto nc = static_cast<std::size_t>(cc);
        const double dn = gn.at(r, c) - gn.at(nr, nc);
        const double d0 = g0.at(r, c) - g0.at(nr, nc);
        const double e = std::abs(dn) - std::abs(d0);
        total += e * e;
        if (grad) {
          const double g = 2.0 * e * sign(dn) / regions;
          d_mean[r * gn.cols + c] += g;
          d_mean[nr * gn.cols + nc] -= g;
        }
      }
    }
  }
  if (grad) scatter_regions(gn, d_mean, *grad);
  return total / regions;
}

double exp_impl(const Image& enhanced, const EnhancementLossConfig& cfg, Tensor* grad) {
  const RegionGrid g = region_means(enhanced, cfg.exp_region, cfg.exposure_target);
  const double regions = static_cast<double>(g.mean.size());
  std::vector<double> d_mean(grad ? g.mean.size() : 0, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < g.mean.size(); ++k) {
    const double d = g.mean[k];
    if (cfg.exp_squared) {
      total += d * d;
      if (grad) d_mean[k] = 2.0 * d / regions;
    } else {
      total += std::abs(d);
      if (grad) d_mean[k] = sign(d) / regions;
    }
  }
  if (grad) scatter_regions(g, d_mean, *grad);
  return total / regions;
}

double tva_impl(const CurveParameterMaps& maps, CurveParameterMaps* grad) {
  require(maps.iterations() > 0, ErrorKind::Parameter, "smoothness loss of empty curve maps");
  const double n_iter = static_cast<double>(maps.iterations());
  double total = 0.0;
  for (std::size_t n = 0; n < maps.iterations(); ++n) {
    const Tensor& a = maps.maps[n];
    const std::size_t h = a.dim(1);
    const std::size_t w = a.dim(2);
    const double count_x = static_cast<double>(h * (w > 0 ? w - 1 : 0));
    const double count_y = static_cast<double>((h > 0 ? h - 1 : 0) * w);
    for (std::size_t c = 0; c < 3; ++c) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x + 1 < w; ++x) gx += std::abs(a.at(c, y, x + 1) - a.at(c, y, x));
      for (std::size_t y = 0; y + 1 < h; ++y)
        for (std::size_t x = 0; x < w; ++x) gy += std::abs(a.at(c, y + 1, x) - a.at(c, y, x));
      const double mx = count_x > 0 ? gx / count_x : 0.0;
      const double my = count_y > 0 ? gy / count_y : 0.0;
      const double s = mx + my;
      total += s * s;
      if (grad) {
        Tensor& ga = grad->maps[n];
        const double outer = 2.0 * s / n_iter;
        if (count_x > 0)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x + 1 < w; ++x) {
              const double g = outer * sign(a.at(c, y, x + 1) - a.at(c, y, x)) / count_x;
              ga.at(c, y, x + 1) += g;
              ga.at(c, y, x) -= g;
            }
        if (count_y > 0)
          for (std::size_t y = 0; y + 1 < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
              const double g = outer * sign(a.at(c, y + 1, x) - a.at(c, y, x)) / count_y;
              ga.at(c, y + 1, x) += g;
              ga.at(c, y, x) -= g;
            }
      }
    }
  }
  return total / n_iter;
}

double col_impl(const Image& enhanced, Tensor* grad) {
  require(!enhanced.empty(), ErrorKind::State, "colour loss of an empty image");
  const std::size_t plane = enhanced.pixels();
  double mean[3];
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    const double* ch = enhanced.channel(c);
    for (std::size_t p = 0; p < plane; ++p) s += ch[p];
    mean[c] = s / static_cast<double>(plane);
  }
  const double rg = mean[0] - mean[1];
  const double rb = mean[0] - mean[2];
  const double gb = mean[1] - mean[2];
  if (grad) {
    const double d[3] = {2.0 * (rg + rb), 2.0 * (-rg + gb), 2.0 * (-rb - gb)};
    for (std::size_t c = 0; c < 3; ++c) {
      double* g = grad->data() + c * plane;
      const double v = d[c] / static_cast<double>(plane);
      for (std::size_t p = 0; p < plane; ++p) g[p] += v;
    }
  }
  return rg * rg + rb * rb + gb * gb;
}

}  // namespace

void EnhancementLossConfig::validate() const {
  require(spa_region >= 1 && exp_region >= 1, ErrorKind::Config, "loss region sizes must be at least 1");
  require(exposure_target > 0.0 && exposure_target < 1.0, ErrorKind::Config, "exposure target must be in (0, 1)");
  require(w_spa >= 0.0 && w_exp >= 0.0 && w_tva >= 0.0 && w_col >= 0.0, ErrorKind::Config,
          "enhancement loss weights must be non-negative");
}

double loss_spa(const Image& original, const Image& enhanced, const EnhancementLossConfig& cfg) {
  return spa_impl(original, enhanced, cfg, nullptr);
}
double loss_spa_grad(const Image& original, const Image& enhanced, const EnhancementLossConfig& cfg, Tensor& grad) {
  require_same_shape(grad, enhanced.tensor(), "spatial consistency gradient");
  return spa_impl(original, enhanced, cfg, &grad);
}
double loss_exp(const Image& enhanced, const EnhancementLossConfig& cfg) { return exp_impl(enhanced, cfg, nullptr); }
double loss_exp_grad(const Image& enhanced, const EnhancementLossConfig& cfg, Tensor& grad) {
  require_same_shape(grad, enhanced.tensor(), "exposure gradient");
  return exp_impl(enhanced, cfg, &grad);
}
double loss_tva(const CurveParameterMaps& maps) { return tva_impl(maps, nullptr); }
double loss_tva_grad(const CurveParameterMaps& maps, CurveParameterMaps& grad) {
  require(grad.iterations() == maps.iterations(), ErrorKind::Dimension, "smoothness gradient iteration count");
  return tva_impl(maps, &grad);
}
double loss_col(const Image& enhanced) { return col_impl(enhanced, nullptr); }
double loss_col_grad(const Image& enhanced, Tensor& grad) {
  require_same_shape(grad, enhanced.tensor(), "colour gradient");
  return col_impl(enhanced, &grad);
}

DceLoss loss_dce(const Image& original, const Image& enhanced, const CurveParameterMaps& maps,
                 const EnhancementLossConfig& cfg) {
  cfg.validate();
  DceLoss l;
  l.spa = loss_spa(original, enhanced, cfg);
  l.exp = loss_exp(enhanced, cfg);
  l.tva = loss_tva(maps);
  l.col = loss_col(enhanced);
  l.total = cfg.w_spa * l.spa + cfg.w_exp * l.exp + cfg.w_tva * l.tva + cfg.w_col * l.col;
  return l;
}

DceLoss loss_dce_grad(const Image& original, const Image& enhanced, const CurveParameterMaps& maps,
                      const EnhancementLossConfig& cfg, double scale, Tensor& d_enhanced,
                      CurveParameterMaps& d_maps) {
  cfg.validate();
  DceLoss l;
  Tensor g(enhanced.tensor().shape());
  auto accumulate = [&](double weight, Tensor& part) {
    simd::axpy(scale * weight, part.data(), d_enhanced.data(), part.size());
    part.fill(0.0);
  };
  if (cfg.w_spa != 0.0) {
    l.spa = loss_spa_grad(original, enhanced, cfg, g);
    accumulate(cfg.w_spa, g);
  } else {
    l.spa = loss_spa(original, enhanced, cfg);
  }
  if (cfg.w_exp != 0.0) {
    l.exp = loss_exp_grad(enhanced, cfg, g);
    accumulate(cfg.w_exp, g);
  } else {
    l.exp = loss_exp(enhanced, cfg);
  }
  if (cfg.w_col != 0.0) {
    l.col = loss_col_grad(enhanced, g);
    accumulate(cfg.w_col, g);
  } else {
    l.col = loss_col(enhanced);
  }
  if (cfg.w_tva != 0.0) {
    CurveParameterMaps gm = CurveParameterMaps::zeros(maps.iterations(), maps.maps[0].dim(1), maps.maps[0].dim(2));
    l.tva = loss_tva_grad(maps, gm);
    for (std::size_t n = 0; n < maps.iterations(); ++n)
      simd::axpy(scale * cfg.w_tva, gm.maps[n].data(), d_maps.maps[n].data(), gm.maps[n].size());
  } else {
    l.tva = loss_tva(maps);
  }
  l.total = cfg.w_spa * l.spa + cfg.w_exp * l.exp + cfg.w_tva * l.tva + cfg.w_col * l.col;
  return l;
}

}  // namespace idf
