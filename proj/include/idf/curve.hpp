#pragma once

// Pixel-wise iterative curve mapping and the seven-layer convolutional network
// that estimates its per-pixel coefficients.

#include <array>
#include <cstddef>
#include <vector>

#include "idf/image.hpp"
#include "idf/nn.hpp"

namespace idf {

inline constexpr std::size_t kDefaultCurveIterations = 8;

// Per-iteration coefficient maps, each 3 x H x W with entries in [-1, 1].
struct CurveParameterMaps {
  std::vector<Tensor> maps;

  std::size_t iterations() const noexcept { return maps.size(); }
  static CurveParameterMaps zeros(std::size_t iterations, std::size_t height, std::size_t width);
  // Splits a [3N, H, W] tensor into N maps; rejects values outside [-1, 1].
  static CurveParameterMaps from_stacked(const Tensor& stacked);
  Tensor stacked() const;
};

// I + A * I * (1 - I). Output stays in [0, 1] for |A| <= 1.
Image curve_step(const Image& image, const Tensor& coefficients);

// Intermediate images I_0 .. I_N of an enhancement run.
struct EnhanceTrace {
  std::vector<Image> stages;
};

Image enhance(const Image& image, const CurveParameterMaps& maps, EnhanceTrace* trace = nullptr);

// Accumulates dL/dA_n into d_maps (same layout as maps) and returns dL/dI_0.
Tensor enhance_backward(const EnhanceTrace& trace, const CurveParameterMaps& maps, const Tensor& d_output,
                        CurveParameterMaps& d_maps);

struct EnhancerConfig {
  std::size_t width = 32;
  std::size_t iterations = kDefaultCurveIterations;
  double init_std = 0.02;
  bool zero_final_layer = false;
};

// Layers 1-4 are plain conv+ReLU; layer 8-k additionally receives layer k's
// activations (k = 1, 2, 3) concatenated after its regular input. Layer 7 emits
// 3 * iterations channels through tanh.
struct EnhancerParams {
  std::array<nn::ConvParams, 7> layers;
  std::size_t iterations = 0;

  bool initialized() const noexcept { return iterations > 0 && !layers[6].weight.empty(); }
  void visit(const std::string& prefix, const TensorVisitor& f);
  void visit(const std::string& prefix, const ConstTensorVisitor& f) const;
};

EnhancerParams make_enhancer(const EnhancerConfig& cfg, Rng& rng);

struct EnhancerTrace {
  Tensor input;
  std::array<Tensor, 7> activations;  // post-nonlinearity outputs
};

CurveParameterMaps estimate_curves(const EnhancerParams& params, const Image& image, EnhancerTrace* trace = nullptr);

void estimate_curves_backward(const EnhancerParams& params, const EnhancerTrace& trace,
                              const CurveParameterMaps& d_maps, EnhancerParams& grad);

}  // namespace idf
