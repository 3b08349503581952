#pragma once

// Self-supervised losses that steer the curve estimator: spatial consistency,
// exposure control, coefficient smoothness and colour constancy.

#include <cstddef>

#include "idf/curve.hpp"
#include "idf/image.hpp"

namespace idf {

struct EnhancementLossConfig {
  std::size_t spa_region = 4;
  std::size_t exp_region = 16;
  double exposure_target = 0.6;
  bool exp_squared = false;
  double w_spa = 1.0;
  double w_exp = 1.0;
  double w_tva = 1.0;
  double w_col = 1.0;

  void validate() const;
};

// Spatial consistency. Neighbours are the four axis-aligned regions that
// exist; partial regions at the right/bottom edge are ignored.
double loss_spa(const Image& original, const Image& enhanced, const EnhancementLossConfig& cfg = {});
// Adds dL/d(enhanced) into grad.
double loss_spa_grad(const Image& original, const Image& enhanced, const EnhancementLossConfig& cfg, Tensor& grad);

double loss_exp(const Image& enhanced, const EnhancementLossConfig& cfg = {});
double loss_exp_grad(const Image& enhanced, const EnhancementLossConfig& cfg, Tensor& grad);

// Mean over iterations of the per-channel squared sum of mean absolute
// forward differences.
double loss_tva(const CurveParameterMaps& maps);
double loss_tva_grad(const CurveParameterMaps& maps, CurveParameterMaps& grad);

double loss_col(const Image& enhanced);
double loss_col_grad(const Image& enhanced, Tensor& grad);

struct DceLoss {
  double spa = 0.0;
  double exp = 0.0;
  double tva = 0.0;
  double col = 0.0;
  double total = 0.0;  // weighted sum
};

DceLoss loss_dce(const Image& original, const Image& enhanced, const CurveParameterMaps& maps,
                 const EnhancementLossConfig& cfg = {});

// Same value; gradients are scaled by `scale` and added into d_enhanced and
// d_maps. Terms with zero weight are skipped.
DceLoss loss_dce_grad(const Image& original, const Image& enhanced, const CurveParameterMaps& maps,
                      const EnhancementLossConfig& cfg, double scale, Tensor& d_enhanced,
                      CurveParameterMaps& d_maps);

}  // namespace idf
